//! MZI-count area model.
//!
//! A full `out x in` layer realized through its SVD needs one mesh per side
//! plus a diagonal column: `(out(out+1) + in(in-1)) / 2` MZIs. A layer
//! approximated block-wise needs, per `s x s` block, one mesh and one
//! diagonal column: `s(s+1)/2`. Padding blocks past the layer edge are not
//! charged because every shape of interest tiles exactly.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::photonic::approx::partition_shape;

pub fn unitary_mzis(m: u64) -> u64 {
    m * m.saturating_sub(1) / 2
}

pub fn full_layer_mzis(rows: u64, cols: u64) -> u64 {
    (rows * (rows + 1) + cols * cols.saturating_sub(1)) / 2
}

pub fn approx_layer_mzis(rows: u64, cols: u64) -> u64 {
    let (s, rb, cb) = partition_shape(rows as usize, cols as usize);
    let s = s as u64;
    (rb * cb) as u64 * s * (s + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    /// 1-based weight-layer index.
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
    pub approximated: bool,
    pub full_mzis: u64,
    pub approx_mzis: u64,
}

impl LayerCost {
    /// MZIs actually deployed for this layer.
    pub fn deployed(&self) -> u64 {
        if self.approximated {
            self.approx_mzis
        } else {
            self.full_mzis
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub total_full: u64,
    pub total_deployed: u64,
    pub area_ratio: f64,
}

/// Cost of a feed-forward stack `dims[0] -> dims[1] -> ...` with the given
/// 1-based layers approximated.
pub fn mzi_cost(dims: &[usize], approx_layers: &BTreeSet<usize>) -> CostReport {
    let layers: Vec<LayerCost> = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (rows, cols) = (w[1], w[0]);
            LayerCost {
                index: i + 1,
                rows,
                cols,
                approximated: approx_layers.contains(&(i + 1)),
                full_mzis: full_layer_mzis(rows as u64, cols as u64),
                approx_mzis: approx_layer_mzis(rows as u64, cols as u64),
            }
        })
        .collect();
    let total_full: u64 = layers.iter().map(|l| l.full_mzis).sum();
    let total_deployed: u64 = layers.iter().map(LayerCost::deployed).sum();
    let area_ratio = if total_full == 0 { 1.0 } else { total_deployed as f64 / total_full as f64 };
    CostReport { layers, total_full, total_deployed, area_ratio }
}

impl CostReport {
    /// `layer,rows,cols,approximated,full_mzis,approx_mzis,deployed_mzis`
    /// rows plus a `total` row whose last column holds the area ratio.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,rows,cols,approximated,full_mzis,approx_mzis,deployed_mzis\n");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                l.index,
                l.rows,
                l.cols,
                l.approximated,
                l.full_mzis,
                l.approx_mzis,
                l.deployed()
            );
        }
        let _ = writeln!(s, "total,,,,{},,{}", self.total_full, self.total_deployed);
        let _ = writeln!(s, "area_ratio,,,,,,{:.6}", self.area_ratio);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(unitary_mzis(4), 6);
        assert_eq!(unitary_mzis(64), 2016);
        assert_eq!(full_layer_mzis(64, 4), 2086);
        assert_eq!(approx_layer_mzis(64, 4), 16 * 10);
        assert_eq!(approx_layer_mzis(4, 64), 16 * 10);
        assert_eq!(approx_layer_mzis(128, 128), 128 * 129 / 2);
    }

    #[test]
    fn first_table_structure() {
        let dims = [4, 64, 128, 256, 128, 64, 4];
        let all: BTreeSet<usize> = (1..=6).collect();
        let r = mzi_cost(&dims, &all);
        assert_eq!(r.total_full, 106_512);
        assert_eq!(r.total_deployed, 41_664);
        assert!((r.area_ratio - 0.391).abs() < 5e-4);
        let none = mzi_cost(&dims, &BTreeSet::new());
        assert_eq!(none.area_ratio, 1.0);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 6 + 2);
    }
}
