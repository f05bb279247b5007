//! Rectangular (interleaved) MZI meshes.
//!
//! An MZI is two 50:50 directional couplers with a phase shifter on the top
//! arm before each, `T(theta, phi) = DC * PS(theta) * DC * PS(phi)`. Any
//! `m x m` unitary is realized by `m(m-1)/2` MZIs on adjacent port pairs,
//! arranged in `m` alternating columns, followed by one output phase per
//! port. The decomposition nulls the lower triangle alternately from the
//! right (column operations) and the left (row operations), then moves the
//! left-hand MZIs through the diagonal so every MZI sits before it.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, Matrix2};

use crate::error::{OptincError, Result};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mzi {
    /// Column of the mesh the MZI occupies.
    pub layer: usize,
    /// Upper of the two adjacent ports it couples.
    pub top_port: usize,
    pub theta: f64,
    pub phi: f64,
}

/// MZIs in the order light traverses them, then per-port output phases.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshProgram {
    pub size: usize,
    pub mzis: Vec<Mzi>,
    pub output_phases: Vec<f64>,
}

pub fn mzi_transfer(theta: f64, phi: f64) -> Matrix2<C64> {
    let h = 1.0 / 2f64.sqrt();
    let dc = Matrix2::new(C64::new(h, 0.0), C64::new(0.0, h), C64::new(0.0, h), C64::new(h, 0.0));
    let ps = |a: f64| Matrix2::new(C64::from_polar(1.0, a), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0));
    dc * ps(theta) * dc * ps(phi)
}

/// Largest entry of `|U U^H - I|`.
pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let n = u.nrows();
    let g = u * u.adjoint();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (g[(i, j)] - if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).norm())
        .fold(0.0, f64::max)
}

fn apply_rows(t: &mut DMatrix<C64>, top: usize, m: &Matrix2<C64>) {
    for c in 0..t.ncols() {
        let (a, b) = (t[(top, c)], t[(top + 1, c)]);
        t[(top, c)] = m[(0, 0)] * a + m[(0, 1)] * b;
        t[(top + 1, c)] = m[(1, 0)] * a + m[(1, 1)] * b;
    }
}

fn apply_cols(t: &mut DMatrix<C64>, left: usize, m: &Matrix2<C64>) {
    for r in 0..t.nrows() {
        let (a, b) = (t[(r, left)], t[(r, left + 1)]);
        t[(r, left)] = a * m[(0, 0)] + b * m[(1, 0)];
        t[(r, left + 1)] = a * m[(0, 1)] + b * m[(1, 1)];
    }
}

/// Writes `v = diag(e^{i a}, e^{i b}) * T(theta, phi)` and returns `(theta, phi, a, b)`.
fn split_phase_mzi(v: &Matrix2<C64>) -> (f64, f64, f64, f64) {
    let theta = 2.0 * v[(0, 0)].norm().atan2(v[(0, 1)].norm());
    let (s, c) = ((theta / 2.0).sin(), (theta / 2.0).cos());
    let p = (theta / 2.0 + PI / 2.0) % (2.0 * PI);
    if c >= s {
        let a = v[(0, 1)].arg() - p;
        let phi = v[(0, 0)].arg() - p - a;
        let b = v[(1, 0)].arg() - p - phi;
        (theta, phi, a, b)
    } else {
        let b = (-v[(1, 1)]).arg() - p;
        let phi = v[(1, 0)].arg() - p - b;
        let a = v[(0, 0)].arg() - p - phi;
        (theta, phi, a, b)
    }
}

pub fn decompose_unitary(u: &DMatrix<C64>) -> Result<MeshProgram> {
    let m = u.nrows();
    if m == 0 || !u.is_square() {
        return Err(OptincError::domain(format!("expected a non-empty square matrix, got {}x{}", u.nrows(), u.ncols())));
    }
    let defect = unitarity_defect(u);
    if !(defect <= 1e-8) {
        return Err(OptincError::domain(format!("matrix is not unitary: max |UU^H - I| = {defect:.3e}")));
    }
    let mut t = u.clone();
    let mut right: Vec<(usize, f64, f64)> = Vec::new();
    let mut left: Vec<(usize, f64, f64)> = Vec::new();
    for i in 1..m {
        if i % 2 == 1 {
            for j in 0..i {
                let (r, c) = (m - 1 - j, i - 1 - j);
                let (x, y) = (t[(r, c)], t[(r, c + 1)]);
                let theta = 2.0 * y.norm().atan2(x.norm());
                let phi = x.arg() - y.arg() - PI;
                apply_cols(&mut t, c, &mzi_transfer(theta, phi).adjoint());
                t[(r, c)] = C64::new(0.0, 0.0);
                right.push((c, theta, phi));
            }
        } else {
            for j in 1..=i {
                let (r, c) = (m + j - i - 1, j - 1);
                let (x, y) = (t[(r - 1, c)], t[(r, c)]);
                let theta = 2.0 * x.norm().atan2(y.norm());
                let phi = y.arg() - x.arg();
                apply_rows(&mut t, r - 1, &mzi_transfer(theta, phi));
                t[(r, c)] = C64::new(0.0, 0.0);
                left.push((r - 1, theta, phi));
            }
        }
    }
    let mut diag: Vec<C64> = (0..m).map(|k| t[(k, k)]).collect();
    let mut order: Vec<(usize, f64, f64)> = right;
    for &(port, theta, phi) in left.iter().rev() {
        let inv = mzi_transfer(theta, phi).adjoint();
        let v = inv * Matrix2::new(diag[port], C64::new(0.0, 0.0), C64::new(0.0, 0.0), diag[port + 1]);
        let (th, ph, a, b) = split_phase_mzi(&v);
        diag[port] = C64::from_polar(1.0, a);
        diag[port + 1] = C64::from_polar(1.0, b);
        order.push((port, th, ph));
    }
    let mut busy = vec![0usize; m];
    let mzis = order
        .into_iter()
        .map(|(port, theta, phi)| {
            let mut layer = busy[port].max(busy[port + 1]);
            if layer % 2 != port % 2 {
                layer += 1;
            }
            busy[port] = layer + 1;
            busy[port + 1] = layer + 1;
            Mzi { layer, top_port: port, theta, phi }
        })
        .collect();
    Ok(MeshProgram { size: m, mzis, output_phases: diag.iter().map(|z| z.arg()).collect() })
}

/// Embeds a real orthogonal matrix and decomposes it.
pub fn decompose_orthogonal(q: &DMatrix<f64>) -> Result<MeshProgram> {
    decompose_unitary(&q.map(|x| C64::new(x, 0.0)))
}

pub fn reconstruct(mesh: &MeshProgram) -> DMatrix<C64> {
    let m = mesh.size;
    let mut u = DMatrix::<C64>::identity(m, m);
    for z in &mesh.mzis {
        apply_rows(&mut u, z.top_port, &mzi_transfer(z.theta, z.phi));
    }
    for (k, &p) in mesh.output_phases.iter().enumerate() {
        let ph = C64::from_polar(1.0, p);
        for c in 0..m {
            u[(k, c)] *= ph;
        }
    }
    u
}

impl MeshProgram {
    pub fn depth(&self) -> usize {
        self.mzis.iter().map(|z| z.layer + 1).max().unwrap_or(0)
    }

    /// Text export: one `layer top_port theta phi` line per MZI, then a
    /// `phase p0 ... p_{m-1}` line. Angles carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for z in &self.mzis {
            let _ = writeln!(s, "{} {} {:.16e} {:.16e}", z.layer, z.top_port, z.theta, z.phi);
        }
        s.push_str("phase");
        for p in &self.output_phases {
            let _ = write!(s, " {p:.16e}");
        }
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |l: usize| OptincError::Format(format!("mesh line {l} is malformed"));
        let mut mzis = Vec::new();
        let mut phases = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "phase" {
                let p: std::result::Result<Vec<f64>, _> = fields[1..].iter().map(|f| f.parse()).collect();
                phases = Some(p.map_err(|_| bad(i + 1))?);
                continue;
            }
            if fields.len() != 4 {
                return Err(bad(i + 1));
            }
            mzis.push(Mzi {
                layer: fields[0].parse().map_err(|_| bad(i + 1))?,
                top_port: fields[1].parse().map_err(|_| bad(i + 1))?,
                theta: fields[2].parse().map_err(|_| bad(i + 1))?,
                phi: fields[3].parse().map_err(|_| bad(i + 1))?,
            });
        }
        let output_phases = phases.ok_or_else(|| OptincError::Format("mesh file has no phase line".into()))?;
        let size = output_phases.len();
        if mzis.iter().any(|z| z.top_port + 1 >= size) || mzis.len() != size * size.saturating_sub(1) / 2 {
            return Err(OptincError::Format("mesh does not match its port count".into()));
        }
        Ok(MeshProgram { size, mzis, output_phases })
    }
}

/// Haar-distributed random unitary (QR of a complex Gaussian matrix with
/// the phases of `R`'s diagonal folded into `Q`).
pub fn haar_unitary<R: rand::Rng>(m: usize, rng: &mut R) -> DMatrix<C64> {
    use rand_distr::{Distribution, StandardNormal};
    let z = DMatrix::from_fn(m, m, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..m {
        let d = r[(k, k)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..m {
            q[(i, k)] *= ph;
        }
    }
    q
}

/// Haar-distributed random orthogonal matrix.
pub fn haar_orthogonal<R: rand::Rng>(m: usize, rng: &mut R) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let z = DMatrix::from_fn(m, m, |_, _| StandardNormal.sample(rng));
    let qr = z.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..m {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}
