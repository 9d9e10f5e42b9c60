//! JADE independent component analysis: fourth-order cross-cumulants,
//! cumulant eigenmatrices and joint approximate diagonalization by complex
//! Jacobi (Givens) rotations.
//!
//! Complex convention: `cum(i, j, k, l)` is the cumulant of
//! `(z_i, z_j*, z_k, z_l*)`.

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::beamforming::Separation;
use crate::error::{Error, Result};
use crate::ingest::{covariance, whiten};
use crate::linalg::{hermitian_eigen, hermitian_part};
use crate::series::SlowTimeSeries;

pub const MAX_SWEEPS: usize = 100;
pub const ROTATION_THRESHOLD: f64 = 1e-8;

/// Second-order statistics reused by every cumulant entry.
struct Moments<'a> {
    z: &'a DMatrix<Complex64>,
    /// E[z_i z_j*]
    cov: DMatrix<Complex64>,
    /// E[z_i z_j]
    pseudo: DMatrix<Complex64>,
}

impl<'a> Moments<'a> {
    fn new(z: &'a SlowTimeSeries) -> Self {
        let t = Complex64::new(z.len() as f64, 0.0);
        let cov = covariance(z);
        let pseudo = (&z.samples * z.samples.transpose()) / t;
        Self { z: &z.samples, cov, pseudo }
    }

    fn cum(&self, i: usize, j: usize, k: usize, l: usize) -> Complex64 {
        let z = self.z;
        let n = z.ncols();
        let mut acc = Complex64::default();
        for t in 0..n {
            acc += z[(i, t)] * z[(j, t)].conj() * z[(k, t)] * z[(l, t)].conj();
        }
        acc / n as f64
            - self.cov[(i, j)] * self.cov[(k, l)]
            - self.cov[(i, l)] * self.cov[(k, j)]
            - self.pseudo[(i, k)] * self.pseudo[(j, l)].conj()
    }
}

fn check_whitened(z: &SlowTimeSeries) {
    let cov = covariance(z);
    let dev = (0..cov.nrows())
        .flat_map(|i| (0..cov.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (cov[(i, j)] - if i == j { Complex64::new(1.0, 0.0) } else { Complex64::default() }).norm())
        .fold(0.0, f64::max);
    if dev > 0.05 {
        warn!("cumulant input is not whitened: covariance deviates from identity by {dev:.3}");
    }
}

/// Sample estimate of the fourth-order cross-cumulant of whitened data.
pub fn fourth_cumulant(z: &SlowTimeSeries, i: usize, j: usize, k: usize, l: usize) -> Result<Complex64> {
    let m = z.channels();
    if [i, j, k, l].iter().any(|&v| v >= m) {
        return Err(Error::Parameter(format!("cumulant index out of range for {m} channels")));
    }
    check_whitened(z);
    Ok(Moments::new(z).cum(i, j, k, l))
}

/// Eigenmatrices of the cumulant tensor, each scaled by its eigenvalue.
#[derive(Debug, Clone)]
pub struct CumulantSet {
    pub matrices: Vec<DMatrix<Complex64>>,
    /// Unit-norm eigenmatrices M_r with F(M_r) = lambda_r M_r.
    pub basis: Vec<DMatrix<Complex64>>,
    pub eigenvalues: Vec<f64>,
    /// Trace of the M^2 x M^2 tensor unfolding.
    pub tensor_trace: f64,
}

/// Builds the Hermitian M^2 x M^2 unfolding Q[(i,j),(k,l)] = cum(i, j, l, k).
fn cumulant_unfolding(z: &SlowTimeSeries) -> DMatrix<Complex64> {
    let m = z.channels();
    let moments = Moments::new(z);
    let mut q = DMatrix::zeros(m * m, m * m);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    q[(i * m + j, k * m + l)] = moments.cum(i, j, l, k);
                }
            }
        }
    }
    hermitian_part(&q)
}

/// Keeps the `count` eigenmatrices with the largest |eigenvalue|.
pub fn cumulant_matrices(z: &SlowTimeSeries, count: usize) -> Result<CumulantSet> {
    let m = z.channels();
    if count == 0 || count > m * m {
        return Err(Error::Parameter(format!("cumulant matrix count must be in 1..={}, got {count}", m * m)));
    }
    check_whitened(z);
    let q = cumulant_unfolding(z);
    let tensor_trace = (0..m * m).map(|i| q[(i, i)].re).sum();
    let (values, vectors) = hermitian_eigen(&q);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    order.truncate(count);

    let mut matrices = Vec::with_capacity(count);
    let mut basis = Vec::with_capacity(count);
    let mut eigenvalues = Vec::with_capacity(count);
    for &r in &order {
        let mut mr = DMatrix::from_fn(m, m, |k, l| vectors[(k * m + l, r)]);
        // eigenvectors are Hermitian matrices up to a global phase
        let align: Complex64 = (0..m)
            .flat_map(|k| (0..m).map(move |l| (k, l)))
            .map(|(k, l)| (mr[(k, l)] * mr[(l, k)]).conj())
            .sum();
        if align.norm() > 0.0 {
            mr *= Complex64::from_polar(1.0, 0.5 * align.arg());
        }
        let mr = hermitian_part(&mr);
        matrices.push(&mr * Complex64::new(values[r], 0.0));
        basis.push(mr);
        eigenvalues.push(values[r]);
    }
    Ok(CumulantSet { matrices, basis, eigenvalues, tensor_trace })
}

#[derive(Debug, Clone)]
pub struct JointDiagResult {
    /// Unitary U with U^H F_r U approximately diagonal for every r.
    pub u: DMatrix<Complex64>,
    /// Frobenius norm of all off-diagonal entries after rotation.
    pub off_diag_norm: f64,
    /// Sweeps that applied at least one rotation.
    pub sweeps: usize,
    pub converged: bool,
    /// Sum of squared diagonal magnitudes before the first and after each sweep.
    pub objective_trace: Vec<f64>,
}

fn diagonal_energy(mats: &[DMatrix<Complex64>]) -> f64 {
    mats.iter().map(|m| (0..m.nrows()).map(|i| m[(i, i)].norm_sqr()).sum::<f64>()).sum()
}

fn off_diagonal_norm(mats: &[DMatrix<Complex64>]) -> f64 {
    mats.iter()
        .map(|m| {
            let mut s = 0.0;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if i != j {
                        s += m[(i, j)].norm_sqr();
                    }
                }
            }
            s
        })
        .sum::<f64>()
        .sqrt()
}

/// Joint approximate diagonalization by sweeps of closed-form Givens rotations.
pub fn joint_diagonalize(set: &CumulantSet) -> Result<JointDiagResult> {
    joint_diagonalize_matrices(&set.matrices)
}

pub fn joint_diagonalize_matrices(matrices: &[DMatrix<Complex64>]) -> Result<JointDiagResult> {
    let first = matrices.first().ok_or_else(|| Error::Parameter("no matrices to diagonalize".into()))?;
    let n = first.nrows();
    if matrices.iter().any(|m| m.nrows() != n || m.ncols() != n) {
        return Err(Error::Parameter("matrices must all be square and the same size".into()));
    }
    let mut mats: Vec<DMatrix<Complex64>> = matrices.to_vec();
    let mut u = DMatrix::<Complex64>::identity(n, n);
    let mut objective_trace = vec![diagonal_energy(&mats)];
    let mut sweeps = 0;
    let mut converged = false;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let Some((c, s)) = givens_angles(&mats, p, q) else { continue };
                if s.norm() <= ROTATION_THRESHOLD {
                    continue;
                }
                rotated = true;
                let cc = Complex64::new(c, 0.0);
                // G = [[c, -s*], [s, c]]; columns p, q of U <- [U_p U_q] G
                for r in 0..n {
                    let (up, uq) = (u[(r, p)], u[(r, q)]);
                    u[(r, p)] = cc * up + s * uq;
                    u[(r, q)] = -s.conj() * up + cc * uq;
                }
                for m in mats.iter_mut() {
                    // M <- G^H M G
                    for col in 0..n {
                        let (mp, mq) = (m[(p, col)], m[(q, col)]);
                        m[(p, col)] = cc * mp + s.conj() * mq;
                        m[(q, col)] = -s * mp + cc * mq;
                    }
                    for row in 0..n {
                        let (mp, mq) = (m[(row, p)], m[(row, q)]);
                        m[(row, p)] = cc * mp + s * mq;
                        m[(row, q)] = -s.conj() * mp + cc * mq;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
        sweeps += 1;
        objective_trace.push(diagonal_energy(&mats));
    }
    if !converged {
        warn!("joint diagonalization did not converge in {MAX_SWEEPS} sweeps");
    }
    Ok(JointDiagResult { u, off_diag_norm: off_diagonal_norm(&mats), sweeps, converged, objective_trace })
}

/// Optimal rotation (cos, sin) for the (p, q) plane, maximizing the summed
/// squared diagonals of all matrices.
fn givens_angles(mats: &[DMatrix<Complex64>], p: usize, q: usize) -> Option<(f64, Complex64)> {
    let i = Complex64::new(0.0, 1.0);
    let mut g = nalgebra::Matrix3::<f64>::zeros();
    for m in mats {
        let h = [
            m[(p, p)] - m[(q, q)],
            m[(p, q)] + m[(q, p)],
            i * (m[(q, p)] - m[(p, q)]),
        ];
        for a in 0..3 {
            for b in 0..3 {
                g[(a, b)] += (h[a] * h[b].conj()).re;
            }
        }
    }
    let eig = g.symmetric_eigen();
    let top = (0..3).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))?;
    let mut v = eig.eigenvectors.column(top).into_owned();
    if v[0] < 0.0 {
        v = -v;
    }
    let c = (0.5 + v[0] / 2.0).sqrt();
    if !(c > 0.0) {
        return None;
    }
    let s = Complex64::new(v[1], -v[2]) * (0.5 / c);
    Some((c, s))
}

/// Whitening, cumulant eigenmatrices and joint diagonalization composed into
/// W = U^H V.
pub fn jade_separate(x: &SlowTimeSeries, n_sources: usize) -> Result<Separation> {
    if n_sources == 0 || n_sources > x.channels() {
        return Err(Error::Parameter(format!("source count must be in 1..={}, got {n_sources}", x.channels())));
    }
    let white = whiten(x, Some(n_sources))?;
    let set = cumulant_matrices(&white.z, n_sources)?;
    let jd = joint_diagonalize(&set)?;
    let unmixing = jd.u.adjoint() * &white.transform;
    let sources = x.transform(&unmixing)?;
    Ok(Separation { unmixing, sources })
}
