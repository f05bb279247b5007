//! One function per CLI subcommand. Each reads a [`RunConfig`], writes its
//! artifacts atomically under `paths.out_dir`, and returns a summary that
//! the binary prints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;

use crate::artifact::atomic_write;
use crate::codec::SystemConfig;
use crate::dataset::{
    dataset_size, generate_cascade_datasets, generate_dataset, read_dataset, write_dataset, write_dataset_csv,
    AggregationDataset,
};
use crate::error::{OptincError, Result};
use crate::harness::config::RunConfig;
use crate::onn::{evaluate, AccuracyReport, OnnModel};
use crate::photonic::approx::svd;
use crate::photonic::mesh::{decompose_orthogonal, reconstruct, MeshProgram};
use crate::photonic::{mzi_cost, CostReport};
use crate::topo::{
    cascade_sweep_exhaustive, cascade_sweep_sampled, e2e_toy_training, overhead_report, Aggregation, CascadeSweep,
    CascadeTopology, E2eConfig, E2eCurve, OverheadReport,
};
use crate::trainer::{train, TrainReport};

fn out_path(rc: &RunConfig, name: &str) -> PathBuf {
    rc.paths.out_dir.join(name)
}

fn checkpoint_path(rc: &RunConfig) -> PathBuf {
    rc.paths.checkpoint.clone().unwrap_or_else(|| out_path(rc, "model.onn"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub size: u128,
    pub files: Vec<(PathBuf, usize)>,
}

/// Generates the dataset (or the two cascade datasets) for the configured system.
pub fn gen_dataset(rc: &RunConfig) -> Result<GenSummary> {
    let cfg = rc.system_config()?;
    let size = dataset_size(&cfg)?;
    info!("dataset_size = {size}");
    let mode = rc.generation_mode();
    let datasets: Vec<(&str, AggregationDataset)> = if rc.dataset.cascade {
        let (l1, l2) = generate_cascade_datasets(&cfg, mode, rc.seed, rc.max_size as u128)?;
        vec![("level1", l1), ("level2", l2)]
    } else {
        vec![("dataset", generate_dataset(&cfg, mode, rc.seed, rc.max_size as u128)?)]
    };
    let mut files = Vec::new();
    for (stem, ds) in &datasets {
        let path = out_path(rc, &format!("{stem}.bin"));
        write_dataset(ds, &path)?;
        if rc.dataset.csv {
            write_dataset_csv(ds, &out_path(rc, &format!("{stem}.csv")))?;
        }
        files.push((path, ds.len()));
    }
    Ok(GenSummary { size, files })
}

fn load_or_generate(rc: &RunConfig, cfg: &SystemConfig) -> Result<AggregationDataset> {
    match &rc.paths.dataset {
        Some(path) => {
            let ds = read_dataset(path)?;
            if ds.cfg != *cfg {
                return Err(OptincError::Config(format!("dataset {} was built for a different system", path.display())));
            }
            Ok(ds)
        }
        None => generate_dataset(cfg, rc.generation_mode(), rc.seed, rc.max_size as u128),
    }
}

pub fn accuracy_csv(r: &AccuracyReport) -> String {
    let mut s = String::from("metric,channel,value\n");
    let _ = writeln!(s, "samples,,{}", r.samples);
    let _ = writeln!(s, "exact_matches,,{}", r.exact_matches);
    let _ = writeln!(s, "accuracy,,{:.9}", r.accuracy);
    for (i, e) in r.symbol_error_rate.iter().enumerate() {
        let _ = writeln!(s, "symbol_error_rate,{i},{e:.9}");
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub report: TrainReport,
}

pub fn train_cmd(rc: &RunConfig) -> Result<TrainSummary> {
    let cfg = rc.system_config()?;
    let spec = rc.onn_spec(&cfg)?;
    let tc = rc.train_config(&cfg)?;
    let ds = load_or_generate(rc, &cfg)?;
    info!("training {} on {} samples for {} epochs", spec.structure(), ds.len(), tc.epochs);
    let (model, report) = train(&spec, &ds, &tc)?;
    let checkpoint = checkpoint_path(rc);
    model.save(&checkpoint)?;
    atomic_write(&out_path(rc, "train_report.csv"), report.to_csv().as_bytes())?;
    Ok(TrainSummary { checkpoint, report })
}

pub fn eval_cmd(rc: &RunConfig) -> Result<AccuracyReport> {
    let cfg = rc.system_config()?;
    let model = OnnModel::load(&checkpoint_path(rc))?;
    model.spec.check_against(&cfg).map_err(|e| OptincError::Config(e.to_string()))?;
    let ds = load_or_generate(rc, &cfg)?;
    let report = evaluate(&model, &ds)?;
    atomic_write(&out_path(rc, "eval_report.csv"), accuracy_csv(&report).as_bytes())?;
    Ok(report)
}

/// MZI cost of the configured structure, or of a checkpoint's when one is set.
pub fn cost_cmd(rc: &RunConfig) -> Result<CostReport> {
    let (dims, approx) = match &rc.paths.checkpoint {
        Some(path) => {
            let model = OnnModel::load(path)?;
            (model.spec.layer_dims.clone(), model.spec.approx_layers.clone())
        }
        None => {
            let cfg = rc.system_config()?;
            let dims = rc.layer_dims(&cfg)?;
            let approx = rc.approx_layers(dims.len() - 1);
            (dims, approx)
        }
    };
    let report = mzi_cost(&dims, &approx);
    atomic_write(&out_path(rc, "cost.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeSummary {
    pub meshes: usize,
    pub total_mzis: usize,
    pub max_roundtrip_error: f64,
    pub files: Vec<PathBuf>,
}

fn max_abs_diff(mesh: &MeshProgram, q: &nalgebra::DMatrix<f64>) -> f64 {
    let u = reconstruct(mesh);
    u.iter().zip(q.iter()).map(|(a, &b)| (a.re - b).abs().max(a.im.abs())).fold(0.0, f64::max)
}

fn write_mesh(dir: &Path, name: &str, q: &nalgebra::DMatrix<f64>, summary: &mut DecomposeSummary) -> Result<()> {
    let g = q.transpose() * q;
    let defect = (&g - nalgebra::DMatrix::identity(g.nrows(), g.ncols())).amax();
    if !(defect <= 1e-8) {
        return Err(OptincError::Numeric(format!("{name} is not orthogonal: defect {defect:.3e}")));
    }
    let mesh = decompose_orthogonal(q)?;
    summary.max_roundtrip_error = summary.max_roundtrip_error.max(max_abs_diff(&mesh, q));
    summary.total_mzis += mesh.mzis.len();
    summary.meshes += 1;
    let path = dir.join(format!("{name}.mesh"));
    atomic_write(&path, mesh.to_text().as_bytes())?;
    summary.files.push(path);
    Ok(())
}

/// Compiles every layer of a checkpoint into MZI mesh programs. Approximated
/// layers yield one mesh per block; full layers yield their two singular
/// vector meshes.
pub fn decompose_cmd(rc: &RunConfig) -> Result<DecomposeSummary> {
    let mut model = OnnModel::load(&checkpoint_path(rc))?;
    model.project()?;
    let dir = out_path(rc, "meshes");
    let mut summary = DecomposeSummary { meshes: 0, total_mzis: 0, max_roundtrip_error: 0.0, files: Vec::new() };
    for (i, layer) in model.layers.iter().enumerate() {
        match &layer.factors {
            Some(factors) => {
                for f in factors {
                    let name = format!("layer{}_block{}_{}", i + 1, f.block_pos.0, f.block_pos.1);
                    write_mesh(&dir, &name, &f.u, &mut summary)?;
                }
            }
            None => {
                let s = svd(&layer.weight)?;
                let full_u = complete_basis(&s.u);
                let full_v = complete_basis(&s.v);
                write_mesh(&dir, &format!("layer{}_u", i + 1), &full_u, &mut summary)?;
                write_mesh(&dir, &format!("layer{}_v", i + 1), &full_v.transpose(), &mut summary)?;
            }
        }
    }
    Ok(summary)
}

/// Extends orthonormal columns to a square orthogonal matrix.
fn complete_basis(q: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let (m, k) = q.shape();
    if k == m {
        return q.clone();
    }
    let mut cols: Vec<nalgebra::DVector<f64>> = q.column_iter().map(|c| c.into_owned()).collect();
    for e in 0..m {
        if cols.len() == m {
            break;
        }
        let mut v = nalgebra::DVector::zeros(m);
        v[e] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let p = c.dot(&v);
                v.axpy(-p, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            cols.push(v / norm);
        }
    }
    nalgebra::DMatrix::from_columns(&cols)
}

fn load_model(path: &Option<PathBuf>, what: &str) -> Result<OnnModel> {
    let path = path.as_ref().ok_or_else(|| OptincError::Config(format!("{what} checkpoint is required without --oracle")))?;
    OnnModel::load(path)
}

pub fn cascade_cmd(rc: &RunConfig) -> Result<CascadeSweep> {
    let cfg = rc.system_config()?;
    let c = &rc.cascade;
    let topo = if c.oracle {
        CascadeTopology::oracle(cfg)?
    } else {
        CascadeTopology::with_models(cfg, load_model(&c.level1_checkpoint, "level-1")?, load_model(&c.level2_checkpoint, "level-2")?)?
    };
    let sweep = if c.exhaustive {
        cascade_sweep_exhaustive(&topo, rc.max_size as u128)?
    } else {
        cascade_sweep_sampled(&topo, c.samples, rc.seed)?
    };
    let csv = format!(
        "cases,corrected_mismatches,uncorrected_mismatches\n{},{},{}\n",
        sweep.cases, sweep.corrected_mismatches, sweep.uncorrected_mismatches
    );
    atomic_write(&out_path(rc, "cascade.csv"), csv.as_bytes())?;
    Ok(sweep)
}

pub fn rounds_cmd(rc: &RunConfig, servers: &[u64]) -> Result<Vec<OverheadReport>> {
    let reports = servers.iter().map(|&n| overhead_report(n)).collect::<Result<Vec<_>>>()?;
    atomic_write(&out_path(rc, "rounds.csv"), OverheadReport::to_csv(&reports).as_bytes())?;
    Ok(reports)
}

pub fn e2e_config(rc: &RunConfig) -> E2eConfig {
    E2eConfig {
        servers: rc.system.servers,
        bit_width: rc.system.bit_width,
        hidden: rc.e2e.hidden,
        samples: rc.e2e.samples,
        steps: rc.e2e.steps,
        batch_per_server: rc.e2e.batch_per_server,
        learning_rate: rc.e2e.learning_rate,
        seed: rc.seed,
        ..E2eConfig::default()
    }
}

pub fn e2e_cmd(rc: &RunConfig) -> Result<Vec<E2eCurve>> {
    let ecfg = e2e_config(rc);
    let mut curves = Vec::new();
    for name in &rc.e2e.aggregations {
        let agg = match name.as_str() {
            "exact_mean" => Aggregation::ExactMean,
            "ring" => Aggregation::Ring,
            "optinc_oracle" => Aggregation::OptincOracle,
            "optinc_trained" => Aggregation::OptincTrained(load_model(&rc.paths.checkpoint, "aggregation model")?),
            other => return Err(OptincError::Config(format!("unknown aggregation {other:?}"))),
        };
        curves.push(e2e_toy_training(&ecfg, &agg)?);
    }
    atomic_write(&out_path(rc, "e2e.csv"), E2eCurve::to_csv(&curves).as_bytes())?;
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::preset;

    fn in_tmp(mut rc: RunConfig) -> (tempfile::TempDir, RunConfig) {
        let dir = tempfile::tempdir().unwrap();
        rc.paths.out_dir = dir.path().to_path_buf();
        (dir, rc)
    }

    #[test]
    fn cost_presets() {
        for (name, published) in [("table1-row1", 0.393), ("table1-row2", 0.409), ("table1-row3", 0.404), ("table1-row4", 0.493)] {
            let (_d, rc) = in_tmp(preset(name).unwrap());
            let r = cost_cmd(&rc).unwrap();
            assert!((r.area_ratio - published).abs() <= 0.005, "{name}: {}", r.area_ratio);
        }
    }

    #[test]
    fn basis_completion() {
        let q = nalgebra::DMatrix::from_column_slice(3, 1, &[0.6, 0.8, 0.0]);
        let full = complete_basis(&q);
        let defect = (full.transpose() * &full - nalgebra::DMatrix::identity(3, 3)).amax();
        assert!(defect < 1e-12);
        assert_eq!(full.column(0), q.column(0));
    }

    #[test]
    fn gen_toy_and_cascade() {
        let (_d, mut rc) = in_tmp(preset("toy").unwrap());
        let g = gen_dataset(&rc).unwrap();
        assert_eq!(g.size, 49);
        assert_eq!(g.files[0].1, 49);
        rc.dataset.cascade = true;
        let g = gen_dataset(&rc).unwrap();
        assert_eq!(g.files.len(), 2);
        let s = cascade_cmd(&rc).unwrap();
        assert_eq!((s.cases, s.corrected_mismatches), (65536, 0));
        assert!(s.uncorrected_mismatches > 0);
    }
}
