//! Unitary-plus-diagonal approximation of weight matrices.
//!
//! A weight matrix is cut into square `s x s` blocks with `s = min(out, in)`
//! (stacked vertically for tall matrices, side by side for wide ones). Each
//! block `W_s` is replaced by `diag(d) * U_a`, where `U_a` is the orthogonal
//! Procrustes solution `U_s V_s^T` and `d_i` is the least-squares scale of
//! row `i`. Only one mesh per block is then needed instead of two.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{OptincError, Result};

/// Thin SVD with singular values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.sigma) * self.v.transpose()
    }
}

pub fn svd(w: &DMatrix<f64>) -> Result<SvdFactors> {
    if w.iter().any(|x| !x.is_finite()) {
        return Err(OptincError::Numeric("SVD of a non-finite matrix".into()));
    }
    let dec = w.clone().svd(true, true);
    let u = dec.u.ok_or_else(|| OptincError::Numeric("SVD did not return U".into()))?;
    let v_t = dec.v_t.ok_or_else(|| OptincError::Numeric("SVD did not return V".into()))?;
    let sv = dec.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    let sigma = DVector::from_iterator(order.len(), order.iter().map(|&i| sv[i]));
    Ok(SvdFactors { u, sigma, v })
}

/// The orthogonal matrix nearest to `w_s` in Frobenius norm.
pub fn closest_orthogonal(w_s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !w_s.is_square() {
        return Err(OptincError::domain(format!("block is {}x{}, expected square", w_s.nrows(), w_s.ncols())));
    }
    let f = svd(w_s)?;
    let top = f.sigma.iter().cloned().fold(0.0, f64::max);
    let bottom = f.sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    if bottom <= top * 1e-12 {
        warn!("rank-deficient {}x{} block; orthogonal factor is not unique", w_s.nrows(), w_s.ncols());
    }
    Ok(&f.u * f.v.transpose())
}

/// Row-wise least-squares scales `d_i = <W_i, U_i> / |U_i|^2`.
pub fn fit_diagonal(w_s: &DMatrix<f64>, u_a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if w_s.shape() != u_a.shape() {
        return Err(OptincError::domain(format!("shape mismatch {:?} vs {:?}", w_s.shape(), u_a.shape())));
    }
    Ok((0..w_s.nrows())
        .map(|i| {
            let wi = w_s.row(i);
            let ui = u_a.row(i);
            let norm = ui.dot(&ui);
            if norm == 0.0 {
                0.0
            } else {
                wi.dot(&ui) / norm
            }
        })
        .collect())
}

/// `diag(d) * u` for the block at `block_pos` (row block, column block).
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxFactor {
    pub d: Vec<f64>,
    pub u: DMatrix<f64>,
    pub block_pos: (usize, usize),
}

impl ApproxFactor {
    pub fn block(&self) -> DMatrix<f64> {
        let mut b = self.u.clone();
        for (i, &di) in self.d.iter().enumerate() {
            b.row_mut(i).scale_mut(di);
        }
        b
    }

    /// Largest deviation of `u^T u` from the identity.
    pub fn orthogonality_defect(&self) -> f64 {
        let g = self.u.transpose() * &self.u;
        let n = g.nrows();
        (&g - DMatrix::identity(n, n)).amax()
    }
}

/// Block edge and block grid `(row blocks, column blocks)` for an `out x in` layer.
pub fn partition_shape(rows: usize, cols: usize) -> (usize, usize, usize) {
    let s = rows.min(cols);
    (s, rows.div_ceil(s), cols.div_ceil(s))
}

/// Square blocks of `w`, zero-padded past its edge.
pub fn partition(w: &DMatrix<f64>) -> Result<Vec<((usize, usize), DMatrix<f64>)>> {
    let (rows, cols) = w.shape();
    if rows == 0 || cols == 0 {
        return Err(OptincError::domain("cannot partition an empty matrix"));
    }
    let (s, rb, cb) = partition_shape(rows, cols);
    let mut blocks = Vec::with_capacity(rb * cb);
    for br in 0..rb {
        for bc in 0..cb {
            let block = DMatrix::from_fn(s, s, |r, c| {
                let (i, j) = (br * s + r, bc * s + c);
                if i < rows && j < cols {
                    w[(i, j)]
                } else {
                    0.0
                }
            });
            blocks.push(((br, bc), block));
        }
    }
    Ok(blocks)
}

/// Projects one square block. Rows of `U_a` are sign-flipped so every `d_i`
/// is non-negative, which makes re-projection a fixed point.
pub fn approximate_block(w_s: &DMatrix<f64>, block_pos: (usize, usize)) -> Result<ApproxFactor> {
    let mut u = closest_orthogonal(w_s)?;
    let mut d = fit_diagonal(w_s, &u)?;
    for (i, di) in d.iter_mut().enumerate() {
        if *di < 0.0 {
            *di = -*di;
            u.row_mut(i).neg_mut();
        }
    }
    Ok(ApproxFactor { d, u, block_pos })
}

pub fn approximate_layer(w: &DMatrix<f64>) -> Result<Vec<ApproxFactor>> {
    partition(w)?.into_iter().map(|(pos, b)| approximate_block(&b, pos)).collect()
}

/// Rebuilds the `rows x cols` matrix from its block factors.
pub fn assemble(rows: usize, cols: usize, factors: &[ApproxFactor]) -> Result<DMatrix<f64>> {
    if rows == 0 || cols == 0 {
        return Err(OptincError::domain("cannot assemble an empty matrix"));
    }
    let (s, rb, cb) = partition_shape(rows, cols);
    let mut seen = vec![false; rb * cb];
    let mut w = DMatrix::zeros(rows, cols);
    for f in factors {
        let (br, bc) = f.block_pos;
        if br >= rb || bc >= cb || f.u.shape() != (s, s) || f.d.len() != s {
            return Err(OptincError::domain(format!("factor at {:?} does not fit a {rows}x{cols} layer", f.block_pos)));
        }
        seen[br * cb + bc] = true;
        let block = f.block();
        for r in 0..s {
            for c in 0..s {
                let (i, j) = (br * s + r, bc * s + c);
                if i < rows && j < cols {
                    w[(i, j)] = block[(r, c)];
                }
            }
        }
    }
    if let Some(missing) = seen.iter().position(|&x| !x) {
        return Err(OptincError::domain(format!("missing block ({}, {})", missing / cb, missing % cb)));
    }
    Ok(w)
}
