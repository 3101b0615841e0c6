//! Bilinear coupling layer. Every entry of the structured matrix factors as
//! S(n, k M + m) = g(m, n) h(k, n); this module turns the linear stage's
//! extrinsic estimates of S into Gaussian messages on the two factors,
//! fuses them across the shared index, forms beliefs, and assembles the
//! product prior on S for the next linear sweep.
//!
//! All message tensors are indexed (m, k, n). Variances are kept inside
//! [floor, 1e12]; a division that would produce a non-positive precision
//! falls back to a vacuous message (variance 1e6) centered on the belief.

use ndarray::{Array2, Array3};
use num_complex::Complex;

use crate::scalar::RealScalar;
use crate::{CxMat, CxTen, ReMat, ReTen};

pub(crate) const VACUOUS_VAR: f64 = 1e6;
pub(crate) const VAR_CEIL: f64 = 1e12;

/// Gaussian messages on one bilinear factor, one per (m, k, n) triple.
pub(crate) struct Messages<T: RealScalar> {
    pub mean: CxTen<T>,
    pub var: ReTen<T>,
}

impl<T: RealScalar> Messages<T> {
    pub fn vacuous(m: usize, k: usize, n: usize) -> Self {
        Self {
            mean: Array3::zeros((m, k, n)),
            var: Array3::from_elem((m, k, n), T::one()),
        }
    }
}

/// Product of two Gaussians, clamped variance.
pub(crate) fn gaussian_product<T: RealScalar>(
    m1: Complex<T>,
    v1: T,
    m2: Complex<T>,
    v2: T,
    floor: T,
) -> (Complex<T>, T) {
    let prec = v1.recip() + v2.recip();
    let var = prec.recip().clamp(floor, T::lit(VAR_CEIL));
    let mean = (m1.scale(v1.recip()) + m2.scale(v2.recip())).scale(var);
    (mean, var)
}

/// Division of a belief by one incoming message (extrinsic extraction).
/// Returns a vacuous message centered on the belief when the precision
/// difference is not positive.
pub(crate) fn gaussian_divide<T: RealScalar>(
    belief_mean: Complex<T>,
    belief_var: T,
    msg_mean: Complex<T>,
    msg_var: T,
    floor: T,
) -> (Complex<T>, T) {
    let prec = belief_var.recip() - msg_var.recip();
    if prec <= T::zero() {
        return (belief_mean, T::lit(VACUOUS_VAR));
    }
    let var = prec.recip().clamp(floor, T::lit(VAR_CEIL));
    let mean = (belief_mean.scale(belief_var.recip()) - msg_mean.scale(msg_var.recip())).scale(var);
    (mean, var)
}

/// Per-user average of the per-column extrinsic variances: columns
/// k M .. k M + M - 1 of S all belong to user k.
pub(crate) fn block_average<T: RealScalar>(nu_q: &[T], k: usize, m: usize) -> Vec<T> {
    let m_t = T::from_usize(m).unwrap();
    (0..k)
        .map(|kk| {
            let sum: T = (0..m).map(|mm| nu_q[kk * m + mm]).sum();
            sum / m_t
        })
        .collect()
}

/// Messages from the factors to the g side, treating the h side as known up
/// to its belief: a scalar LMMSE inversion of s = g h + noise per triple.
pub(crate) fn forward_to_g<T: RealScalar>(
    q: &CxMat<T>,
    nu_q_block: &[T],
    h_mean: &CxMat<T>,
    h_var: &ReMat<T>,
    m_dim: usize,
    floor: T,
) -> Messages<T> {
    let (k_dim, n_dim) = h_mean.dim();
    let mut out = Messages::vacuous(m_dim, k_dim, n_dim);
    for mm in 0..m_dim {
        for kk in 0..k_dim {
            for nn in 0..n_dim {
                let h = h_mean[[kk, nn]];
                let denom = h.norm_sqr() + h_var[[kk, nn]];
                let s_est = q[[nn, kk * m_dim + mm]];
                out.mean[[mm, kk, nn]] = s_est * h.conj() / Complex::new(denom, T::zero());
                out.var[[mm, kk, nn]] =
                    (nu_q_block[kk] / denom).clamp(floor, T::lit(VAR_CEIL));
            }
        }
    }
    out
}

/// Mirror image of [`forward_to_g`] with the g side treated as known.
pub(crate) fn forward_to_h<T: RealScalar>(
    q: &CxMat<T>,
    nu_q_block: &[T],
    g_mean: &CxMat<T>,
    g_var: &ReMat<T>,
    k_dim: usize,
    floor: T,
) -> Messages<T> {
    let (m_dim, n_dim) = g_mean.dim();
    let mut out = Messages::vacuous(m_dim, k_dim, n_dim);
    for mm in 0..m_dim {
        for kk in 0..k_dim {
            for nn in 0..n_dim {
                let g = g_mean[[mm, nn]];
                let denom = g.norm_sqr() + g_var[[mm, nn]];
                let s_est = q[[nn, kk * m_dim + mm]];
                out.mean[[mm, kk, nn]] = s_est * g.conj() / Complex::new(denom, T::zero());
                out.var[[mm, kk, nn]] =
                    (nu_q_block[kk] / denom).clamp(floor, T::lit(VAR_CEIL));
            }
        }
    }
    out
}

/// Precision-weighted fusion across the user index: the K messages aimed at
/// g(m, n) collapse to one Gaussian.
pub(crate) fn combine_over_k<T: RealScalar>(
    fwd: &Messages<T>,
    floor: T,
) -> (CxMat<T>, ReMat<T>) {
    let (m_dim, k_dim, n_dim) = fwd.mean.dim();
    let mut mean = Array2::zeros((m_dim, n_dim));
    let mut var = Array2::zeros((m_dim, n_dim));
    for mm in 0..m_dim {
        for nn in 0..n_dim {
            let mut prec = T::zero();
            let mut acc: Complex<T> = Complex::new(T::zero(), T::zero());
            for kk in 0..k_dim {
                let v = fwd.var[[mm, kk, nn]];
                prec += v.recip();
                acc = acc + fwd.mean[[mm, kk, nn]].scale(v.recip());
            }
            let v = prec.recip().clamp(floor, T::lit(VAR_CEIL));
            mean[[mm, nn]] = acc.scale(v);
            var[[mm, nn]] = v;
        }
    }
    (mean, var)
}

/// Precision-weighted fusion across the antenna index for the h side.
pub(crate) fn combine_over_m<T: RealScalar>(
    fwd: &Messages<T>,
    floor: T,
) -> (CxMat<T>, ReMat<T>) {
    let (m_dim, k_dim, n_dim) = fwd.mean.dim();
    let mut mean = Array2::zeros((k_dim, n_dim));
    let mut var = Array2::zeros((k_dim, n_dim));
    for kk in 0..k_dim {
        for nn in 0..n_dim {
            let mut prec = T::zero();
            let mut acc: Complex<T> = Complex::new(T::zero(), T::zero());
            for mm in 0..m_dim {
                let v = fwd.var[[mm, kk, nn]];
                prec += v.recip();
                acc = acc + fwd.mean[[mm, kk, nn]].scale(v.recip());
            }
            let v = prec.recip().clamp(floor, T::lit(VAR_CEIL));
            mean[[kk, nn]] = acc.scale(v);
            var[[kk, nn]] = v;
        }
    }
    (mean, var)
}

/// Replaces each row of a variance matrix by its mean: a unitary row mixing
/// of the means spreads the uncertainty uniformly along the row.
pub(crate) fn row_average_broadcast<T: RealScalar>(var: &ReMat<T>) -> ReMat<T> {
    let (rows, cols) = var.dim();
    let cols_t = T::from_usize(cols).unwrap();
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        let avg: T = (0..cols).map(|c| var[[r, c]]).sum::<T>() / cols_t;
        for c in 0..cols {
            out[[r, c]] = avg;
        }
    }
    out
}

/// Belief refresh: product of the transform-side prior message and the
/// fused factor-side message, with damping on the mean only.
#[allow(clippy::too_many_arguments)]
pub(crate) fn belief_update<T: RealScalar>(
    mean: &mut CxMat<T>,
    var: &mut ReMat<T>,
    prior_mean: &CxMat<T>,
    prior_var: &ReMat<T>,
    lik_mean: &CxMat<T>,
    lik_var: &ReMat<T>,
    damping: T,
    floor: T,
) {
    let keep = T::one() - damping;
    for ((idx, old_mean), old) in mean.indexed_iter_mut().zip(var.iter_mut()) {
        let (bm, bv) = gaussian_product(
            prior_mean[idx],
            prior_var[idx],
            lik_mean[idx],
            lik_var[idx],
            floor,
        );
        *old_mean = bm.scale(damping) + old_mean.scale(keep);
        *old = bv;
    }
}

/// Extrinsic messages back to the factors from the g belief.
pub(crate) fn backward_to_g<T: RealScalar>(
    out: &mut Messages<T>,
    belief_mean: &CxMat<T>,
    belief_var: &ReMat<T>,
    fwd: &Messages<T>,
    floor: T,
) {
    let (m_dim, k_dim, n_dim) = fwd.mean.dim();
    for mm in 0..m_dim {
        for kk in 0..k_dim {
            for nn in 0..n_dim {
                let (mean, var) = gaussian_divide(
                    belief_mean[[mm, nn]],
                    belief_var[[mm, nn]],
                    fwd.mean[[mm, kk, nn]],
                    fwd.var[[mm, kk, nn]],
                    floor,
                );
                out.mean[[mm, kk, nn]] = mean;
                out.var[[mm, kk, nn]] = var;
            }
        }
    }
}

/// Extrinsic messages back to the factors from the h belief (indexed k, n).
pub(crate) fn backward_to_h<T: RealScalar>(
    out: &mut Messages<T>,
    belief_mean: &CxMat<T>,
    belief_var: &ReMat<T>,
    fwd: &Messages<T>,
    floor: T,
) {
    let (m_dim, k_dim, n_dim) = fwd.mean.dim();
    for mm in 0..m_dim {
        for kk in 0..k_dim {
            for nn in 0..n_dim {
                let (mean, var) = gaussian_divide(
                    belief_mean[[kk, nn]],
                    belief_var[[kk, nn]],
                    fwd.mean[[mm, kk, nn]],
                    fwd.var[[mm, kk, nn]],
                    floor,
                );
                out.mean[[mm, kk, nn]] = mean;
                out.var[[mm, kk, nn]] = var;
            }
        }
    }
}

/// Prior on S for the next linear sweep: the product of two independent
/// Gaussians has mean mg mh and variance
/// |mh|^2 vg + |mg|^2 vh + vg vh.
pub(crate) fn assemble_s_prior<T: RealScalar>(
    back_g: &Messages<T>,
    back_h: &Messages<T>,
    s_mean: &mut CxMat<T>,
    s_var: &mut ReMat<T>,
    floor: T,
) {
    let (m_dim, k_dim, n_dim) = back_g.mean.dim();
    for mm in 0..m_dim {
        for kk in 0..k_dim {
            for nn in 0..n_dim {
                let mg = back_g.mean[[mm, kk, nn]];
                let vg = back_g.var[[mm, kk, nn]];
                let mh = back_h.mean[[mm, kk, nn]];
                let vh = back_h.var[[mm, kk, nn]];
                let jj = kk * m_dim + mm;
                s_mean[[nn, jj]] = mg * mh;
                s_var[[nn, jj]] = (mh.norm_sqr() * vg + mg.norm_sqr() * vh + vg * vh)
                    .clamp(floor, T::lit(VAR_CEIL));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type Cx = Complex<f64>;

    const FLOOR: f64 = 1e-12;

    #[test]
    fn product_of_two_gaussians() {
        let (m, v) = gaussian_product(Cx::new(1.0, 0.0), 0.5, Cx::new(3.0, 0.0), 1.0, FLOOR);
        assert!((v - 1.0 / 3.0).abs() < 1e-14);
        assert!((m - Cx::new(5.0 / 3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn divide_flags_non_positive_precision() {
        // Message sharper than the belief: fall back to a vacuous message.
        let (m, v) = gaussian_divide(Cx::new(2.0, 1.0), 1.0, Cx::new(0.0, 0.0), 0.5, FLOOR);
        assert_eq!(v, VACUOUS_VAR);
        assert_eq!(m, Cx::new(2.0, 1.0));
    }

    proptest! {
        #[test]
        fn divide_inverts_product(
            re1 in -3.0f64..3.0, im1 in -3.0f64..3.0,
            re2 in -3.0f64..3.0, im2 in -3.0f64..3.0,
            v1 in 0.01f64..10.0, v2 in 0.01f64..10.0,
        ) {
            let m1 = Cx::new(re1, im1);
            let m2 = Cx::new(re2, im2);
            let (bm, bv) = gaussian_product(m1, v1, m2, v2, FLOOR);
            let (rm, rv) = gaussian_divide(bm, bv, m2, v2, FLOOR);
            prop_assert!((rv - v1).abs() < 1e-10 * v1.max(1.0));
            prop_assert!((rm - m1).norm() < 1e-10 * (m1.norm() + 1.0));
        }
    }

    #[test]
    fn block_average_groups_by_user() {
        let nu = [1.0, 2.0, 3.0, 4.0];
        let avg = block_average(&nu, 2, 2);
        assert_eq!(avg, vec![1.5, 3.5]);
    }

    #[test]
    fn forward_message_formula() {
        // Single triple: s_est = 1 + j against h belief (2, var 0.5) under a
        // block variance 0.3 gives mean s h* / (|h|^2 + vh), var 0.3 / denom.
        let q = Array2::from_elem((1, 1), Cx::new(1.0, 1.0));
        let h_mean = Array2::from_elem((1, 1), Cx::new(2.0, 0.0));
        let h_var = Array2::from_elem((1, 1), 0.5);
        let fwd = forward_to_g(&q, &[0.3], &h_mean, &h_var, 1, FLOOR);
        let denom = 4.0 + 0.5;
        assert!((fwd.mean[[0, 0, 0]] - Cx::new(2.0 / denom, 2.0 / denom)).norm() < 1e-14);
        assert!((fwd.var[[0, 0, 0]] - 0.3 / denom).abs() < 1e-14);
    }

    #[test]
    fn forward_sides_mirror_when_roles_swap() {
        // With M = K and identical beliefs on both sides, the message to
        // g at (m, k, n) equals the message to h at (k, m, n) whenever the
        // S estimate is symmetric under the same swap.
        let d = 2usize;
        let n = 3usize;
        let mut q = Array2::zeros((n, d * d));
        for nn in 0..n {
            for kk in 0..d {
                for mm in 0..d {
                    // Symmetric in (m, k) by construction.
                    let v = Cx::new((mm + kk) as f64 + 0.1 * nn as f64, (mm * kk) as f64);
                    q[[nn, kk * d + mm]] = v;
                }
            }
        }
        let bel_mean = Array2::from_shape_fn((d, n), |(a, b)| {
            Cx::new(0.3 + a as f64, 0.2 * b as f64)
        });
        let bel_var = Array2::from_shape_fn((d, n), |(a, b)| 0.1 + 0.05 * (a + b) as f64);
        let blocks = [0.4, 0.7];
        let to_g = forward_to_g(&q, &blocks, &bel_mean, &bel_var, d, FLOOR);
        let to_h = forward_to_h(&q, &blocks, &bel_mean, &bel_var, d, FLOOR);
        for mm in 0..d {
            for kk in 0..d {
                for nn in 0..n {
                    let a = to_g.mean[[mm, kk, nn]];
                    let b = to_h.mean[[kk, mm, nn]];
                    assert!((a - b).norm() < 1e-12, "({mm},{kk},{nn})");
                }
            }
        }
    }

    #[test]
    fn combine_is_precision_weighted() {
        let mut fwd = Messages::<f64>::vacuous(1, 2, 1);
        fwd.mean[[0, 0, 0]] = Cx::new(1.0, 0.0);
        fwd.var[[0, 0, 0]] = 0.5;
        fwd.mean[[0, 1, 0]] = Cx::new(3.0, 0.0);
        fwd.var[[0, 1, 0]] = 1.0;
        let (mean, var) = combine_over_k(&fwd, FLOOR);
        assert!((var[[0, 0]] - 1.0 / 3.0).abs() < 1e-14);
        assert!((mean[[0, 0]] - Cx::new(5.0 / 3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn product_prior_moments() {
        let mut bg = Messages::<f64>::vacuous(1, 1, 1);
        bg.mean[[0, 0, 0]] = Cx::new(2.0, 0.0);
        bg.var[[0, 0, 0]] = 0.1;
        let mut bh = Messages::<f64>::vacuous(1, 1, 1);
        bh.mean[[0, 0, 0]] = Cx::new(3.0, 0.0);
        bh.var[[0, 0, 0]] = 0.2;
        let mut s_mean = Array2::zeros((1, 1));
        let mut s_var = Array2::zeros((1, 1));
        assemble_s_prior(&bg, &bh, &mut s_mean, &mut s_var, FLOOR);
        assert!((s_mean[[0, 0]] - Cx::new(6.0, 0.0)).norm() < 1e-14);
        assert!((s_var[[0, 0]] - 1.72).abs() < 1e-14);
    }

    #[test]
    fn row_average_is_uniform_per_row() {
        let var = Array2::from_shape_vec((2, 2), vec![1.0, 3.0, 2.0, 2.0]).unwrap();
        let avg = row_average_broadcast(&var);
        assert_eq!(avg[[0, 0]], 2.0);
        assert_eq!(avg[[0, 1]], 2.0);
        assert_eq!(avg[[1, 0]], 2.0);
    }

    #[test]
    fn belief_damping_blends_means_only() {
        let mut mean = Array2::from_elem((1, 1), Cx::new(1.0, 0.0));
        let mut var = Array2::from_elem((1, 1), 9.0);
        let pm = Array2::from_elem((1, 1), Cx::new(3.0, 0.0));
        let pv = Array2::from_elem((1, 1), 1.0);
        belief_update(&mut mean, &mut var, &pm, &pv, &pm, &pv, 0.5, FLOOR);
        // Product of identical messages: mean 3, var 0.5; damped mean blends
        // with the old value while variance is replaced outright.
        assert!((mean[[0, 0]] - Cx::new(2.0, 0.0)).norm() < 1e-14);
        assert!((var[[0, 0]] - 0.5).abs() < 1e-14);
    }
}
