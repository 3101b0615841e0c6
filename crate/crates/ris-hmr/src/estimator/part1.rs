//! Linear recovery stage: approximate message passing on the unitary model
//! R = Psi S + W. Works column by column with a Gaussian prior per entry of
//! S, produces one extrinsic mean per entry and one extrinsic variance per
//! column, and learns the noise precision from the posterior residual.
//!
//! Because Psi has orthonormal rows scaled by `lambda`, the usual Onsager
//! bookkeeping collapses to elementwise updates driven by the per-row
//! energies lambda^2 plus two matrix products per sweep.

use ndarray::Array2;

use crate::scalar::RealScalar;
use crate::{CxMat, ReMat};

/// State carried across sweeps: the residual messages and the learned
/// noise precision.
pub(crate) struct LinearState<T: RealScalar> {
    pub t: CxMat<T>,
    pub beta: T,
}

impl<T: RealScalar> LinearState<T> {
    pub fn new(l: usize, j: usize) -> Self {
        Self {
            t: Array2::zeros((l, j)),
            beta: T::one(),
        }
    }
}

/// Extrinsic output of one sweep: per-entry means and one variance per
/// column of S.
pub(crate) struct LinearOutput<T: RealScalar> {
    pub q: CxMat<T>,
    pub nu_q: Vec<T>,
}

/// Squared row norms of the effective sensing matrix.
pub(crate) fn row_energy<T: RealScalar>(psi: &CxMat<T>) -> Vec<T> {
    (0..psi.nrows())
        .map(|l| psi.row(l).iter().map(|z| z.norm_sqr()).sum())
        .collect()
}

const BETA_CEIL: f64 = 1e12;
const BETA_FLOOR: f64 = 1e-12;

/// One sweep over every column. `psi_h` must be the conjugate transpose of
/// `psi`; callers precompute it once. `update_beta` exists so unit tests can
/// pin the noise precision.
#[allow(clippy::too_many_arguments)]
pub(crate) fn uamp_step<T: RealScalar>(
    state: &mut LinearState<T>,
    r: &CxMat<T>,
    psi: &CxMat<T>,
    psi_h: &CxMat<T>,
    lambda_sq: &[T],
    s_mean: &CxMat<T>,
    s_var: &ReMat<T>,
    update_beta: bool,
    damping: T,
    floor: T,
) -> LinearOutput<T> {
    let (l, j) = r.dim();
    let n = psi.ncols();
    let n_t = T::from_usize(n).unwrap();

    // Scalar prior variance per column (mean over the N entries); row-major
    // accumulation keeps the traversal sequential.
    let mut vbar = vec![T::zero(); j];
    for nn in 0..n {
        for jj in 0..j {
            vbar[jj] += s_var[[nn, jj]];
        }
    }
    for v in vbar.iter_mut() {
        *v = (*v / n_t).max(floor);
    }

    let mut p = psi.dot(s_mean);
    let mut nu_p = Array2::zeros((l, j));
    for ll in 0..l {
        for jj in 0..j {
            let v = (lambda_sq[ll] * vbar[jj]).max(floor);
            nu_p[[ll, jj]] = v;
            p[[ll, jj]] = p[[ll, jj]] - state.t[[ll, jj]].scale(v);
        }
    }

    // Posterior of the noiseless output under the previous noise precision,
    // then the residual-matched precision update.
    let beta_old = state.beta;
    let mut resid = T::zero();
    for ll in 0..l {
        for jj in 0..j {
            let v = nu_p[[ll, jj]];
            let prec = v.recip() + beta_old;
            let nu_z = prec.recip();
            let z = (p[[ll, jj]].scale(v.recip()) + r[[ll, jj]].scale(beta_old)).scale(nu_z);
            resid += (r[[ll, jj]] - z).norm_sqr() + nu_z;
        }
    }
    if update_beta {
        let total = T::from_usize(l * j).unwrap();
        state.beta = (total / resid).clamp(T::lit(BETA_FLOOR), T::lit(BETA_CEIL));
    }

    // Residual messages still use the precision the posterior was formed
    // under; the refreshed one takes effect next sweep. The scalar extrinsic
    // variance per column is 1/nu_q = (1/N) sum_l lambda_l^2 nu_t,l.
    let keep = T::one() - damping;
    let inv_beta = beta_old.recip();
    let mut acc = vec![T::zero(); j];
    for ll in 0..l {
        for jj in 0..j {
            let nu_t = (nu_p[[ll, jj]] + inv_beta).recip();
            let fresh = (r[[ll, jj]] - p[[ll, jj]]).scale(nu_t);
            state.t[[ll, jj]] = fresh.scale(damping) + state.t[[ll, jj]].scale(keep);
            acc[jj] += lambda_sq[ll] * nu_t;
        }
    }
    let mut nu_q = vec![T::zero(); j];
    for jj in 0..j {
        nu_q[jj] = (n_t / acc[jj]).clamp(floor, T::lit(BETA_CEIL));
    }

    let lift = psi_h.dot(&state.t);
    let mut q = s_mean.clone();
    for nn in 0..n {
        for jj in 0..j {
            q[[nn, jj]] = q[[nn, jj]] + lift[[nn, jj]].scale(nu_q[jj]);
        }
    }
    LinearOutput { q, nu_q }
}
