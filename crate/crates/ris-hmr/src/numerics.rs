//! Complex-matrix kernels shared by the whole crate: unitary DFT matrices,
//! FFT-backed fast transforms, Kronecker/Khatri-Rao products, the unitary
//! factorization of the sensing matrix, and a small Hermitian solver.
//!
//! Index convention: `kron(a, b)` maps the row pair `(i_a, i_b)` to
//! `i_a * rows(b) + i_b`. The measurement stacking in `system` and the
//! bilinear index map in `estimator` both rely on exactly this layout, as
//! does the 2-D FFT realization of the RIS-side transform.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex;
use num_traits::{One, Zero};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::RealScalar;
use crate::{CxMat, CxVec, ReVec};

// ---------------------------------------------------------------- helpers

/// Hermitian (conjugate) transpose.
pub fn dagger<T: RealScalar>(a: &CxMat<T>) -> CxMat<T> {
    a.t().map(|z| z.conj())
}

/// Complex identity matrix.
pub fn eye<T: RealScalar>(n: usize) -> CxMat<T> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            Complex::one()
        } else {
            Complex::zero()
        }
    })
}

/// Frobenius norm.
pub fn fro_norm<T: RealScalar>(a: &CxMat<T>) -> T {
    a.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
}

/// Frobenius norm of the difference.
pub fn fro_diff<T: RealScalar>(a: &CxMat<T>, b: &CxMat<T>) -> T {
    assert_eq!(a.dim(), b.dim(), "fro_diff shape mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<T>()
        .sqrt()
}

// ----------------------------------------------------------- DFT matrices

/// n-point unitary DFT matrix: entry (a, b) = exp(-j 2 pi a b / n) / sqrt(n).
///
/// The phase index is reduced mod n before the trig call so that entries of
/// large matrices stay exact multiples of 2 pi / n.
pub fn unitary_dft<T: RealScalar>(n: usize) -> Result<CxMat<T>> {
    if n == 0 {
        return Err(Error::Dimension("DFT size must be at least 1".into()));
    }
    let scale = T::one() / T::from_usize(n).unwrap().sqrt();
    let step = -(T::PI() + T::PI()) / T::from_usize(n).unwrap();
    Ok(Array2::from_shape_fn((n, n), |(a, b)| {
        let idx = (a * b) % n;
        Complex::from_polar(scale, step * T::from_usize(idx).unwrap())
    }))
}

/// Kronecker product, row pair (i_a, i_b) -> i_a * rows(b) + i_b.
pub fn kron<T: RealScalar>(a: &CxMat<T>, b: &CxMat<T>) -> CxMat<T> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    Array2::from_shape_fn((ra * rb, ca * cb), |(i, j)| {
        a[[i / rb, j / cb]] * b[[i % rb, j % cb]]
    })
}

/// Column-wise Khatri-Rao product: column c of the result is
/// kron(a[:, c], b[:, c]).
pub fn khatri_rao<T: RealScalar>(a: &CxMat<T>, b: &CxMat<T>) -> Result<CxMat<T>> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    if ca != cb {
        return Err(Error::Dimension(format!(
            "khatri_rao: column counts differ ({ca} vs {cb})"
        )));
    }
    Ok(Array2::from_shape_fn((ra * rb, ca), |(i, c)| {
        a[[i / rb, c]] * b[[i % rb, c]]
    }))
}

// ------------------------------------------------------ dense DFT operators

/// Dense unitary DFT operators of the two array geometries: `f1` is the
/// M-point base-station transform, `f2 = kron(fx, fy)` is the RIS transform
/// built from the two axes of the N1 x N2 planar array.
#[derive(Debug, Clone)]
pub struct DftOperators<T: RealScalar> {
    pub f1: CxMat<T>,
    pub fx: CxMat<T>,
    pub fy: CxMat<T>,
    pub f2: CxMat<T>,
}

impl<T: RealScalar> DftOperators<T> {
    pub fn new(m: usize, n1: usize, n2: usize) -> Result<Self> {
        let f1 = unitary_dft(m)?;
        let fx = unitary_dft(n1)?;
        let fy = unitary_dft(n2)?;
        let f2 = kron(&fx, &fy);
        Ok(Self { f1, fx, fy, f2 })
    }
}

// ------------------------------------------------------------ fast transforms

/// Direction of a unitary transform application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformDir {
    /// Multiply by F.
    Forward,
    /// Multiply by F^H.
    Adjoint,
}

/// Which backend realizes the transforms inside the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// FFT kernels: O(M log M) per column, O(N1 N2 (log N1 + log N2)) for
    /// the planar transform.
    Fft,
    /// Explicit dense products, kept for cross-checking and benchmarks.
    Dense,
}

struct FftPlans<T: RealScalar> {
    m_fwd: Arc<dyn Fft<T>>,
    m_inv: Arc<dyn Fft<T>>,
    n1_fwd: Arc<dyn Fft<T>>,
    n1_inv: Arc<dyn Fft<T>>,
    n2_fwd: Arc<dyn Fft<T>>,
    n2_inv: Arc<dyn Fft<T>>,
}

struct DensePack<T: RealScalar> {
    f1: CxMat<T>,
    f1_h: CxMat<T>,
    f2: CxMat<T>,
    f2_h: CxMat<T>,
}

/// Applies the two unitary transforms to matrix columns (and the RIS
/// transform to rows) under a selectable backend. Both backends agree to
/// around machine precision; the estimator treats this object as its only
/// way of touching F1 and F2.
pub struct FastTransforms<T: RealScalar> {
    m: usize,
    n1: usize,
    n2: usize,
    backend: Backend,
    plans: Option<FftPlans<T>>,
    dense: Option<DensePack<T>>,
}

impl<T: RealScalar> FastTransforms<T> {
    pub fn new(m: usize, n1: usize, n2: usize, backend: Backend) -> Result<Self> {
        if m == 0 || n1 == 0 || n2 == 0 {
            return Err(Error::Dimension(
                "transform sizes must all be at least 1".into(),
            ));
        }
        let (plans, dense) = match backend {
            Backend::Fft => {
                let mut planner = FftPlanner::new();
                (
                    Some(FftPlans {
                        m_fwd: planner.plan_fft_forward(m),
                        m_inv: planner.plan_fft_inverse(m),
                        n1_fwd: planner.plan_fft_forward(n1),
                        n1_inv: planner.plan_fft_inverse(n1),
                        n2_fwd: planner.plan_fft_forward(n2),
                        n2_inv: planner.plan_fft_inverse(n2),
                    }),
                    None,
                )
            }
            Backend::Dense => {
                let ops = DftOperators::new(m, n1, n2)?;
                (
                    None,
                    Some(DensePack {
                        f1_h: dagger(&ops.f1),
                        f2_h: dagger(&ops.f2),
                        f1: ops.f1,
                        f2: ops.f2,
                    }),
                )
            }
        };
        Ok(Self {
            m,
            n1,
            n2,
            backend,
            plans,
            dense,
        })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn ris_len(&self) -> usize {
        self.n1 * self.n2
    }

    /// F1 X or F1^H X for an M x c matrix, column by column.
    pub fn f1_apply(&self, x: &CxMat<T>, dir: TransformDir) -> Result<CxMat<T>> {
        if x.nrows() != self.m {
            return Err(Error::Dimension(format!(
                "f1_apply expects {} rows, got {}",
                self.m,
                x.nrows()
            )));
        }
        match self.backend {
            Backend::Dense => {
                let pack = self.dense.as_ref().unwrap();
                Ok(match dir {
                    TransformDir::Forward => pack.f1.dot(x),
                    TransformDir::Adjoint => pack.f1_h.dot(x),
                })
            }
            Backend::Fft => {
                let plans = self.plans.as_ref().unwrap();
                let plan = match dir {
                    TransformDir::Forward => &plans.m_fwd,
                    TransformDir::Adjoint => &plans.m_inv,
                };
                let mut out = x.clone();
                let mut buf = vec![Complex::<T>::zero(); self.m];
                let mut scratch = vec![Complex::<T>::zero(); plan.get_inplace_scratch_len()];
                let scale = T::one() / T::from_usize(self.m).unwrap().sqrt();
                for c in 0..x.ncols() {
                    for r in 0..self.m {
                        buf[r] = out[[r, c]];
                    }
                    plan.process_with_scratch(&mut buf, &mut scratch);
                    for r in 0..self.m {
                        out[[r, c]] = buf[r] * scale;
                    }
                }
                Ok(out)
            }
        }
    }

    /// F2 X or F2^H X for an N x c matrix, column by column. Each column is
    /// reshaped row-major to (N1, N2) and hit with a separable 2-D unitary
    /// transform: this is exactly the Kronecker structure of F2.
    pub fn f2_apply(&self, x: &CxMat<T>, dir: TransformDir) -> Result<CxMat<T>> {
        let n = self.ris_len();
        if x.nrows() != n {
            return Err(Error::Dimension(format!(
                "f2_apply expects {} rows, got {}",
                n,
                x.nrows()
            )));
        }
        match self.backend {
            Backend::Dense => {
                let pack = self.dense.as_ref().unwrap();
                Ok(match dir {
                    TransformDir::Forward => pack.f2.dot(x),
                    TransformDir::Adjoint => pack.f2_h.dot(x),
                })
            }
            Backend::Fft => {
                let mut out = x.clone();
                let mut buf = vec![Complex::<T>::zero(); n];
                for c in 0..x.ncols() {
                    for r in 0..n {
                        buf[r] = out[[r, c]];
                    }
                    self.planar_2d(&mut buf, dir);
                    for r in 0..n {
                        out[[r, c]] = buf[r];
                    }
                }
                Ok(out)
            }
        }
    }

    /// X F2 (Forward) or X F2^H (Adjoint) for an r x N matrix. Because F2 is
    /// symmetric, a right product is the same 2-D transform applied to each
    /// row vector.
    pub fn f2_apply_rows(&self, x: &CxMat<T>, dir: TransformDir) -> Result<CxMat<T>> {
        let n = self.ris_len();
        if x.ncols() != n {
            return Err(Error::Dimension(format!(
                "f2_apply_rows expects {} columns, got {}",
                n,
                x.ncols()
            )));
        }
        match self.backend {
            Backend::Dense => {
                let pack = self.dense.as_ref().unwrap();
                Ok(match dir {
                    TransformDir::Forward => x.dot(&pack.f2),
                    // X F2^H = (F2^H)^T applied on the right, and F2 symmetric
                    // means (F2^H)^T = F2^H, so rows go through the adjoint.
                    TransformDir::Adjoint => x.dot(&dagger(&pack.f2).t().to_owned()),
                })
            }
            Backend::Fft => {
                let mut out = x.clone();
                let mut buf = vec![Complex::<T>::zero(); n];
                for r in 0..x.nrows() {
                    for c in 0..n {
                        buf[c] = out[[r, c]];
                    }
                    self.planar_2d(&mut buf, dir);
                    for c in 0..n {
                        out[[r, c]] = buf[c];
                    }
                }
                Ok(out)
            }
        }
    }

    /// In-place unitary 2-D transform of a row-major (N1, N2) buffer.
    fn planar_2d(&self, buf: &mut [Complex<T>], dir: TransformDir) {
        let plans = self.plans.as_ref().unwrap();
        let (p1, p2) = match dir {
            TransformDir::Forward => (&plans.n1_fwd, &plans.n2_fwd),
            TransformDir::Adjoint => (&plans.n1_inv, &plans.n2_inv),
        };
        let (n1, n2) = (self.n1, self.n2);
        let mut scratch =
            vec![Complex::<T>::zero(); p1.get_inplace_scratch_len().max(p2.get_inplace_scratch_len())];
        for r in 0..n1 {
            p2.process_with_scratch(&mut buf[r * n2..(r + 1) * n2], &mut scratch);
        }
        let mut col = vec![Complex::<T>::zero(); n1];
        for c in 0..n2 {
            for r in 0..n1 {
                col[r] = buf[r * n2 + c];
            }
            p1.process_with_scratch(&mut col, &mut scratch);
            for r in 0..n1 {
                buf[r * n2 + c] = col[r];
            }
        }
        let scale = T::one() / T::from_usize(n1 * n2).unwrap().sqrt();
        for v in buf.iter_mut() {
            *v = *v * scale;
        }
    }
}

// ------------------------------------------------- sensing-matrix factorization

/// Unitary factorization Phi = U diag(lambda) V with V row-orthonormal.
/// `psi` stores the product diag(lambda) V directly, which is all the
/// estimator consumes.
#[derive(Debug, Clone)]
pub struct UnitaryFactorization<T: RealScalar> {
    pub u: CxMat<T>,
    pub lambda: ReVec<T>,
    pub psi: CxMat<T>,
}

const ROW_ORTHONORMAL_TOL: f64 = 1e-10;

/// Factorizes an L x N (L <= N) sensing matrix. Row-orthonormal inputs
/// (e.g. partial DFT) short-circuit to U = I, lambda = 1; anything else goes
/// through a one-sided Jacobi SVD, which is exact enough for the small
/// matrices this pipeline produces.
pub fn factorize_phi<T: RealScalar>(phi: &CxMat<T>) -> Result<UnitaryFactorization<T>> {
    let (l, n) = phi.dim();
    if l == 0 || n == 0 {
        return Err(Error::Dimension("factorize_phi: empty matrix".into()));
    }
    if l > n {
        return Err(Error::UnsupportedShape(format!(
            "factorize_phi expects L <= N, got {l} x {n}"
        )));
    }

    let gram = phi.dot(&dagger(phi));
    let dev = fro_diff(&gram, &eye(l));
    if dev < T::lit(ROW_ORTHONORMAL_TOL) {
        return Ok(UnitaryFactorization {
            u: eye(l),
            lambda: Array1::from_elem(l, T::one()),
            psi: phi.clone(),
        });
    }

    // One-sided Jacobi on W = Phi^H (N x L): orthogonalize the L columns by
    // unitary plane rotations accumulated in Q, so that Phi = Q Sigma V.
    let mut w = dagger(phi);
    let mut q = eye::<T>(l);
    let tol = T::epsilon() * T::lit(32.0);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..l {
            for j in (i + 1)..l {
                let mut gii = T::zero();
                let mut gjj = T::zero();
                let mut gij = Complex::<T>::zero();
                for r in 0..n {
                    let wi = w[[r, i]];
                    let wj = w[[r, j]];
                    gii += wi.norm_sqr();
                    gjj += wj.norm_sqr();
                    gij += wi.conj() * wj;
                }
                let off = gij.norm();
                if off <= tol * (gii * gjj).sqrt() || off == T::zero() {
                    continue;
                }
                rotated = true;
                // Smaller root of t^2 + 2 tau t - 1 = 0 zeroes the rotated
                // cross term for this update convention.
                let tau = (gjj - gii) / (off + off);
                let t = {
                    let sign = if tau < T::zero() { -T::one() } else { T::one() };
                    sign / (tau.abs() + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let sigma = c * t;
                let phase = gij / off;
                let s = phase * sigma;
                for r in 0..n {
                    let wi = w[[r, i]];
                    let wj = w[[r, j]];
                    w[[r, i]] = wi * c - wj * s.conj();
                    w[[r, j]] = wi * s + wj * c;
                }
                for r in 0..l {
                    let qi = q[[r, i]];
                    let qj = q[[r, j]];
                    q[[r, i]] = qi * c - qj * s.conj();
                    q[[r, j]] = qi * s + qj * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut norms: Vec<(usize, T)> = (0..l)
        .map(|k| {
            let nrm = (0..n).map(|r| w[[r, k]].norm_sqr()).sum::<T>().sqrt();
            (k, nrm)
        })
        .collect();
    norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

    let mut u = Array2::zeros((l, l));
    let mut lambda = Array1::zeros(l);
    let mut psi = Array2::zeros((l, n));
    for (row, &(src, nrm)) in norms.iter().enumerate() {
        lambda[row] = nrm;
        for r in 0..l {
            u[[r, row]] = q[[r, src]];
        }
        // Row of Psi = (w column)^H; carries the singular value implicitly.
        for cidx in 0..n {
            psi[[row, cidx]] = w[[cidx, src]].conj();
        }
    }
    Ok(UnitaryFactorization { u, lambda, psi })
}

// ------------------------------------------------------- Hermitian solver

/// Solves A x = b for Hermitian positive-definite A via Cholesky. The genie
/// least-squares baseline is the only consumer; systems are tiny.
pub fn solve_hermitian<T: RealScalar>(a: &CxMat<T>, b: &CxVec<T>) -> Result<CxVec<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "solve_hermitian: A is {} x {}, b has {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let mut l = a.clone();
    for j in 0..n {
        for k in 0..j {
            let ljk = l[[j, k]];
            for i in j..n {
                let lik = l[[i, k]];
                l[[i, j]] = l[[i, j]] - lik * ljk.conj();
            }
        }
        let pivot = l[[j, j]].re;
        if !(pivot > T::zero()) {
            return Err(Error::Degenerate(
                "solve_hermitian: matrix is not positive definite".into(),
            ));
        }
        let root = pivot.sqrt();
        l[[j, j]] = Complex::new(root, T::zero());
        for i in (j + 1)..n {
            l[[i, j]] = l[[i, j]] / root;
        }
    }
    // Forward substitution L y = b, then backward L^H x = y.
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            let yk = y[k];
            y[i] = y[i] - lik * yk;
        }
        y[i] = y[i] / l[[i, i]].re;
    }
    let mut x = y;
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[[k, i]].conj();
            let xk = x[k];
            x[i] = x[i] - lki * xk;
        }
        x[i] = x[i] / l[[i, i]].re;
    }
    Ok(x)
}

// -------------------------------------------------------------------- tests
