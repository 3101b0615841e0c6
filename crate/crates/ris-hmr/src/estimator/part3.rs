//! Sparse recovery stage. Each side of the bilinear factorization is a
//! unitary transform of a sparse matrix (columns treated independently):
//! the stage runs transform-domain message passing per column with a
//! zero-mean complex Gaussian prior whose per-entry precision is learned,
//! plus a per-column shape parameter that adapts how aggressively small
//! entries are shrunk.
//!
//! The denoiser is the exact posterior for prior CN(0, 1/gamma) under a
//! Gaussian pseudo-observation: mean q / (1 + nu gamma), variance
//! nu / (1 + nu gamma).

use ndarray::Array2;

use crate::error::Result;
use crate::numerics::TransformDir;
use crate::scalar::RealScalar;
use crate::{CxMat, ReMat};
use num_complex::Complex;

use super::part2::VAR_CEIL;

/// Per-side state: messages, transform-domain forward means, per-column
/// variances, sparse-domain posterior, learned precisions and shapes.
pub(crate) struct SparseSide<T: RealScalar> {
    pub mu: CxMat<T>,
    pub p: CxMat<T>,
    pub nu_p: Vec<T>,
    pub x_hat: CxMat<T>,
    pub gamma: ReMat<T>,
    pub eps: Vec<T>,
}

impl<T: RealScalar> SparseSide<T> {
    pub fn new(d: usize, c: usize) -> Self {
        Self {
            mu: Array2::zeros((d, c)),
            p: Array2::zeros((d, c)),
            nu_p: vec![T::one(); c],
            x_hat: Array2::zeros((d, c)),
            gamma: Array2::from_elem((d, c), T::one()),
            eps: vec![T::lit(0.001); c],
        }
    }
}

/// Posterior of x ~ CN(0, 1/gamma) given a pseudo-observation with
/// variance nu.
pub(crate) fn denoise<T: RealScalar>(
    pseudo: Complex<T>,
    nu: T,
    gamma: T,
) -> (Complex<T>, T) {
    let denom = T::one() + nu * gamma;
    (pseudo.scale(denom.recip()), nu / denom)
}

/// Shape parameter from the spread of the learned precisions in one column:
/// half the square root of the gap between the log of the mean and the mean
/// of the logs (zero when all precisions agree).
pub(crate) fn shape_from_precisions<T: RealScalar>(gammas: &[T]) -> T {
    let n = T::from_usize(gammas.len()).unwrap();
    let mean: T = gammas.iter().copied().sum::<T>() / n;
    let mean_log: T = gammas.iter().map(|g| g.ln()).sum::<T>() / n;
    shape_from_moments(mean, mean_log)
}

fn shape_from_moments<T: RealScalar>(mean: T, mean_log: T) -> T {
    let gap = (mean.ln() - mean_log).max(T::zero());
    T::lit(0.5) * gap.sqrt()
}

/// One sweep of the stage. `in_mean` / `in_var` describe Gaussian
/// observations of (transform x) per entry; `transform` applies the unitary
/// transform (Forward) or its adjoint.
pub(crate) fn sparse_step<T: RealScalar>(
    side: &mut SparseSide<T>,
    in_mean: &CxMat<T>,
    in_var: &ReMat<T>,
    transform: &dyn Fn(&CxMat<T>, TransformDir) -> Result<CxMat<T>>,
    eta: T,
    damping: T,
    floor: T,
) -> Result<()> {
    let (d, c) = in_mean.dim();
    let d_t = T::from_usize(d).unwrap();
    let keep = T::one() - damping;

    // Mismatch messages toward the transform output, damped, plus the
    // per-column extrinsic variance of the sparse domain.
    let mut nu_q = vec![T::zero(); c];
    for cc in 0..c {
        let mut acc = T::zero();
        for dd in 0..d {
            let v = (side.nu_p[cc] + in_var[[dd, cc]].max(floor)).recip();
            let fresh = (in_mean[[dd, cc]] - side.p[[dd, cc]]).scale(v);
            side.mu[[dd, cc]] = fresh.scale(damping) + side.mu[[dd, cc]].scale(keep);
            acc += v;
        }
        nu_q[cc] = (d_t / acc).clamp(floor, T::lit(VAR_CEIL));
    }

    // Pseudo-observations in the sparse domain, exact Gaussian denoising,
    // then the precision and shape refresh.
    let back = transform(&side.mu, TransformDir::Adjoint)?;
    let two_eta = eta + eta;
    let mut col_gammas = vec![T::zero(); d];
    for cc in 0..c {
        let mut nu_x_sum = T::zero();
        for dd in 0..d {
            let pseudo = side.x_hat[[dd, cc]] + back[[dd, cc]].scale(nu_q[cc]);
            let (x, nu_x) = denoise(pseudo, nu_q[cc], side.gamma[[dd, cc]]);
            side.x_hat[[dd, cc]] = x;
            nu_x_sum += nu_x;
            let two_eps = side.eps[cc] + side.eps[cc];
            let gamma = (two_eps + T::one()) / (x.norm_sqr() + nu_x + two_eta);
            side.gamma[[dd, cc]] = gamma;
            col_gammas[dd] = gamma;
        }
        side.eps[cc] = shape_from_precisions(&col_gammas);
        side.nu_p[cc] = (nu_x_sum / d_t).clamp(floor, T::lit(VAR_CEIL));
    }

    // Forward means for the next sweep.
    let fwd = transform(&side.x_hat, TransformDir::Forward)?;
    for cc in 0..c {
        for dd in 0..d {
            side.p[[dd, cc]] = fwd[[dd, cc]] - side.mu[[dd, cc]].scale(side.nu_p[cc]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Backend, FastTransforms};
    use crate::scalar::complex_standard;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    type Cx = Complex<f64>;

    #[test]
    fn denoiser_matches_quadrature() {
        // The complex posterior splits into two real dimensions with prior
        // N(0, 1/(2 gamma)) and observation variance nu/2; Simpson
        // integration of the exact posterior must match the closed form.
        let cases = [
            (Cx::new(0.8, -0.3), 0.5, 2.0),
            (Cx::new(-1.6, 0.9), 0.1, 0.7),
            (Cx::new(0.05, 0.02), 2.0, 10.0),
        ];
        for (obs, nu, gamma) in cases {
            let (mean, var) = denoise(obs, nu, gamma);
            for (dim, y) in [(0, obs.re), (1, obs.im)] {
                let prior_var = 1.0 / (2.0 * gamma);
                let obs_var = nu / 2.0;
                let (qm, qv) = quadrature_posterior(y, obs_var, prior_var);
                let m = if dim == 0 { mean.re } else { mean.im };
                assert!((m - qm).abs() < 1e-6, "mean dim {dim}");
                // Each real dimension carries half the complex variance.
                assert!((var / 2.0 - qv).abs() < 1e-6, "var dim {dim}");
            }
        }
    }

    fn quadrature_posterior(y: f64, obs_var: f64, prior_var: f64) -> (f64, f64) {
        let sd = prior_var.sqrt().max(obs_var.sqrt());
        let lo = y.min(0.0) - 8.0 * sd;
        let hi = y.max(0.0) + 8.0 * sd;
        let steps = 4000usize;
        let h = (hi - lo) / steps as f64;
        let dens = |x: f64| {
            (-(x * x) / (2.0 * prior_var) - (y - x) * (y - x) / (2.0 * obs_var)).exp()
        };
        let weight = |i: usize| {
            if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut z = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let w = weight(i) * dens(x);
            z += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean)
    }

    #[test]
    fn shape_parameter_known_value() {
        // Precisions {1, e^2}: ln(mean) - mean(ln) = ln((1 + e^2)/2) - 1.
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let eps = shape_from_precisions(&[1.0, e2]);
        let expect = 0.5 * (((1.0 + e2) / 2.0).ln() - 1.0).sqrt();
        assert!((eps - expect).abs() < 1e-12);
        assert!((eps - 0.3293).abs() < 1e-3, "matches hand value");
    }

    #[test]
    fn shape_parameter_zero_for_uniform_precisions() {
        assert_eq!(shape_from_precisions(&[3.0, 3.0, 3.0]), 0.0);
    }

    #[test]
    fn first_sweep_halves_a_clean_observation() {
        // Fresh state, exact observations of F x with negligible variance:
        // mu = F x, the pseudo-observation is exactly x with nu_q = 1, and
        // the unit initial precision shrinks the posterior to x / 2.
        let tr = FastTransforms::<f64>::new(8, 2, 2, Backend::Fft).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x_true = Array2::from_shape_fn((8, 3), |_| complex_standard::<f64, _>(&mut rng));
        let in_mean = tr.f1_apply(&x_true, TransformDir::Forward).unwrap();
        let in_var = Array2::from_elem((8, 3), 1e-12);
        let mut side = SparseSide::<f64>::new(8, 3);
        let apply = |x: &CxMat<f64>, dir: TransformDir| tr.f1_apply(x, dir);
        sparse_step(&mut side, &in_mean, &in_var, &apply, 1e-10, 1.0, 1e-12).unwrap();
        for dd in 0..8 {
            for cc in 0..3 {
                let expect = x_true[[dd, cc]].scale(0.5);
                assert!(
                    (side.x_hat[[dd, cc]] - expect).norm() < 1e-5,
                    "({dd},{cc})"
                );
            }
        }
        for cc in 0..3 {
            assert!((side.nu_p[cc] - 0.5).abs() < 1e-5, "posterior variance");
        }
    }

    #[test]
    fn iterated_sweeps_recover_sparse_signal() {
        // A genuinely sparse target observed through its transform with tiny
        // noise: a few sweeps must drive the estimate to the truth.
        let tr = FastTransforms::<f64>::new(16, 2, 2, Backend::Fft).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x_true = Array2::zeros((16, 2));
        for cc in 0..2 {
            for _ in 0..2 {
                let idx = (rng.gen::<u32>() as usize) % 16;
                x_true[[idx, cc]] = complex_standard::<f64, _>(&mut rng);
            }
        }
        let in_mean = tr.f1_apply(&x_true, TransformDir::Forward).unwrap();
        let in_var = Array2::from_elem((16, 2), 1e-10);
        let mut side = SparseSide::<f64>::new(16, 2);
        let apply = |x: &CxMat<f64>, dir: TransformDir| tr.f1_apply(x, dir);
        for _ in 0..30 {
            sparse_step(&mut side, &in_mean, &in_var, &apply, 1e-10, 1.0, 1e-12).unwrap();
        }
        let err: f64 = side
            .x_hat
            .iter()
            .zip(x_true.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let ref_norm: f64 = x_true.iter().map(|z| z.norm_sqr()).sum();
        assert!(
            err / ref_norm < 1e-6,
            "relative recovery error {}",
            err / ref_norm
        );
    }

    use rand::Rng;

    #[test]
    fn damping_blends_mismatch_messages() {
        let tr = FastTransforms::<f64>::new(4, 2, 2, Backend::Dense).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let in_mean = Array2::from_shape_fn((4, 1), |_| complex_standard::<f64, _>(&mut rng));
        let in_var = Array2::from_elem((4, 1), 0.5);
        let apply = |x: &CxMat<f64>, dir: TransformDir| tr.f1_apply(x, dir);
        let mut full = SparseSide::<f64>::new(4, 1);
        sparse_step(&mut full, &in_mean, &in_var, &apply, 1e-10, 1.0, 1e-12).unwrap();
        let mut half = SparseSide::<f64>::new(4, 1);
        sparse_step(&mut half, &in_mean, &in_var, &apply, 1e-10, 0.5, 1e-12).unwrap();
        for dd in 0..4 {
            let expect = full.mu[[dd, 0]].scale(0.5);
            assert!((half.mu[[dd, 0]] - expect).norm() < 1e-14);
        }
    }
}
