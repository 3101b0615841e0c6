//! Hierarchically structured matrix-recovery estimator. Recovers both the
//! RIS-to-base-station link and the per-user links from one stacked pilot
//! measurement by alternating three stages per iteration:
//!
//! 1. a linear stage on R = Psi S + W that treats the structured matrix S
//!    entrywise ([`part1`]),
//! 2. a bilinear stage that splits each entry S(n, kM+m) = g(m,n) h(k,n)
//!    into Gaussian messages on the two factors ([`part2`]),
//! 3. transform-domain sparse recovery of the angular images of G and H
//!    with learned per-entry precisions ([`part3`]).
//!
//! The angular estimates are the primary outputs; the physical-domain
//! channels follow by applying the unitary DFT pair.

mod part1;
mod part2;
mod part3;

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use crate::channel::SystemDims;
use crate::error::Error;
use crate::evaluation::{aligned_factor_nmse, nmse_to_db};
use crate::numerics::{dagger, Backend, FastTransforms, TransformDir};
use crate::scalar::{complex_standard, RealScalar};
use crate::{CxMat, ReMat};

// ------------------------------------------------------------ configuration

/// When the iteration loop stops early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Stop when the relative squared change of both angular estimates
    /// drops below `zeta`.
    SelfChange,
    /// Stop when the gauge-aligned relative squared error of both factors
    /// against supplied reference channels drops below `zeta`. Needs
    /// [`GenieTruth`]; simulation-only.
    Genie,
}

/// Iteration controls shared by every run.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorConfig<T: RealScalar> {
    /// Convergence threshold for the chosen termination rule.
    pub zeta: T,
    /// Hard iteration cap.
    pub max_iters: usize,
    /// Damping for message means in (0, 1]; 1 disables damping.
    pub damping: T,
    pub termination: Termination,
    /// Rate hyperparameter of the learned precision prior on the RIS-BS
    /// angular image.
    pub eta_g: T,
    /// Rate hyperparameter of the learned precision prior on the user-link
    /// angular image.
    pub eta_h: T,
    /// Smallest variance any message may carry.
    pub variance_floor: T,
    /// FFT or dense realization of the unitary transforms.
    pub backend: Backend,
}

impl<T: RealScalar> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self {
            zeta: T::lit(1e-3),
            max_iters: 30,
            damping: T::one(),
            termination: Termination::SelfChange,
            eta_g: T::lit(1e-10),
            eta_h: T::lit(1e-10),
            variance_floor: T::lit(1e-12),
            backend: Backend::Fft,
        }
    }
}

impl<T: RealScalar> EstimatorConfig<T> {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.zeta > T::zero()) || !self.zeta.is_finite() {
            return Err(Error::Config("zeta must be positive and finite".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.damping > T::zero() && self.damping <= T::one()) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if self.eta_g < T::zero() || !self.eta_g.is_finite() {
            return Err(Error::Config("eta_g must be non-negative".into()));
        }
        if self.eta_h < T::zero() || !self.eta_h.is_finite() {
            return Err(Error::Config("eta_h must be non-negative".into()));
        }
        if !(self.variance_floor > T::zero()) {
            return Err(Error::Config("variance_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Reference physical-domain channels for genie termination and
/// per-iteration error traces.
#[derive(Debug, Clone, Copy)]
pub struct GenieTruth<'a, T: RealScalar> {
    /// RIS-to-base-station link, M x N.
    pub g: &'a CxMat<T>,
    /// User links, N x K.
    pub h: &'a CxMat<T>,
}

// ---------------------------------------------------------------- outputs

/// Per-iteration progress, recorded whenever reference channels are given.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow<T: RealScalar> {
    pub iteration: usize,
    /// Gauge-aligned error of the RIS-BS estimate, in dB.
    pub nmse_g_db: T,
    /// Gauge-aligned error of the user-link estimate, in dB.
    pub nmse_h_db: T,
    pub noise_precision: T,
}

/// Cumulative wall time per algorithm phase over all executed iterations.
/// The phases scale differently — the measurement update grows linearly
/// with L, the sparse updates with the transform cost (N log N fast,
/// N^2 dense), the factor messages with N*K*M — so separate clocks let
/// callers verify each claim in isolation.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTiming {
    /// Measurement-domain posterior and residual messages.
    pub measurement_update: std::time::Duration,
    /// Bilinear message exchange between the two channel factors.
    pub factor_messages: std::time::Duration,
    /// Angular-domain sparsity updates, including the basis transforms.
    pub sparse_updates: std::time::Duration,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct EstimateReport<T: RealScalar> {
    /// Angular image of the RIS-to-base-station link, M x N.
    pub g_beam_hat: CxMat<T>,
    /// Angular image of the user links, N x K.
    pub h_beam_hat: CxMat<T>,
    /// Physical-domain RIS-to-base-station estimate, M x N.
    pub g_hat: CxMat<T>,
    /// Physical-domain user-link estimate, N x K.
    pub h_hat: CxMat<T>,
    /// Learned noise precision.
    pub noise_precision_hat: T,
    /// Iterations actually executed.
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceRow<T>>,
    pub stage_timing: StageTiming,
}

/// Failures specific to the iteration loop. A divergence still hands back
/// the last finite iterate so callers can salvage it.
#[derive(Debug, thiserror::Error)]
pub enum EstimatorError<T: RealScalar> {
    #[error("estimate left the finite range at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last: Box<EstimateReport<T>>,
    },
    #[error(transparent)]
    Invalid(#[from] Error),
}

// ------------------------------------------------------------------ state

struct State<T: RealScalar> {
    lin: part1::LinearState<T>,
    s_mean: CxMat<T>,
    s_var: ReMat<T>,
    belief_g_mean: CxMat<T>,
    belief_g_var: ReMat<T>,
    belief_h_mean: CxMat<T>,
    belief_h_var: ReMat<T>,
    back_g: part2::Messages<T>,
    back_h: part2::Messages<T>,
    sparse_g: part3::SparseSide<T>,
    sparse_h: part3::SparseSide<T>,
}

/// Fresh state: zero estimates, unit variances, unit precisions, and random
/// unit-variance beliefs on both factors to break the bilinear symmetry
/// (drawn g side first, row-major).
fn init_state<T: RealScalar, R: Rng + ?Sized>(
    dims: &SystemDims,
    rng: &mut R,
    floor: T,
) -> State<T> {
    let (m, k, n, j, l) = (dims.m, dims.k, dims.n(), dims.j(), dims.l);
    let belief_g_mean: CxMat<T> = Array2::from_shape_fn((m, n), |_| complex_standard(rng));
    let belief_h_mean: CxMat<T> = Array2::from_shape_fn((k, n), |_| complex_standard(rng));
    let belief_g_var = Array2::from_elem((m, n), T::one());
    let belief_h_var = Array2::from_elem((k, n), T::one());
    let mut back_g = part2::Messages::vacuous(m, k, n);
    let mut back_h = part2::Messages::vacuous(m, k, n);
    for mm in 0..m {
        for kk in 0..k {
            for nn in 0..n {
                back_g.mean[[mm, kk, nn]] = belief_g_mean[[mm, nn]];
                back_h.mean[[mm, kk, nn]] = belief_h_mean[[kk, nn]];
            }
        }
    }
    let mut s_mean = Array2::zeros((n, j));
    let mut s_var = Array2::zeros((n, j));
    part2::assemble_s_prior(&back_g, &back_h, &mut s_mean, &mut s_var, floor);
    State {
        lin: part1::LinearState::new(l, j),
        s_mean,
        s_var,
        belief_g_mean,
        belief_g_var,
        belief_h_mean,
        belief_h_var,
        back_g,
        back_h,
        sparse_g: part3::SparseSide::new(m, n),
        sparse_h: part3::SparseSide::new(n, k),
    }
}

// -------------------------------------------------------------- iteration

fn iterate<T: RealScalar>(
    state: &mut State<T>,
    r: &CxMat<T>,
    psi: &CxMat<T>,
    psi_h: &CxMat<T>,
    lambda_sq: &[T],
    dims: &SystemDims,
    transforms: &FastTransforms<T>,
    cfg: &EstimatorConfig<T>,
    timing: &mut StageTiming,
) -> crate::Result<()> {
    let floor = cfg.variance_floor;
    let clock = Instant::now();
    let out = part1::uamp_step(
        &mut state.lin,
        r,
        psi,
        psi_h,
        lambda_sq,
        &state.s_mean,
        &state.s_var,
        true,
        cfg.damping,
        floor,
    );
    timing.measurement_update += clock.elapsed();

    let clock = Instant::now();
    let blocks = part2::block_average(&out.nu_q, dims.k, dims.m);
    // RIS-BS factor first; its refreshed belief feeds the user-link side.
    let fwd_g = part2::forward_to_g(
        &out.q,
        &blocks,
        &state.belief_h_mean,
        &state.belief_h_var,
        dims.m,
        floor,
    );
    let (cg_mean, cg_var) = part2::combine_over_k(&fwd_g, floor);
    timing.factor_messages += clock.elapsed();

    let clock = Instant::now();
    let in_mean_g = transforms.f2_apply_rows(&cg_mean, TransformDir::Forward)?;
    let in_var_g = part2::row_average_broadcast(&cg_var);
    let f1 = |x: &CxMat<T>, dir: TransformDir| transforms.f1_apply(x, dir);
    part3::sparse_step(
        &mut state.sparse_g,
        &in_mean_g,
        &in_var_g,
        &f1,
        cfg.eta_g,
        cfg.damping,
        floor,
    )?;
    let prior_g_mean = transforms.f2_apply_rows(&state.sparse_g.p, TransformDir::Adjoint)?;
    timing.sparse_updates += clock.elapsed();

    let clock = Instant::now();
    // The row transform mixes the per-column variances uniformly.
    let nu_p_avg = state.sparse_g.nu_p.iter().copied().sum::<T>()
        / T::from_usize(dims.n()).unwrap();
    let prior_g_var = Array2::from_elem((dims.m, dims.n()), nu_p_avg);
    part2::belief_update(
        &mut state.belief_g_mean,
        &mut state.belief_g_var,
        &prior_g_mean,
        &prior_g_var,
        &cg_mean,
        &cg_var,
        cfg.damping,
        floor,
    );
    part2::backward_to_g(
        &mut state.back_g,
        &state.belief_g_mean,
        &state.belief_g_var,
        &fwd_g,
        floor,
    );

    let fwd_h = part2::forward_to_h(
        &out.q,
        &blocks,
        &state.belief_g_mean,
        &state.belief_g_var,
        dims.k,
        floor,
    );
    let (ch_mean, ch_var) = part2::combine_over_m(&fwd_h, floor);
    timing.factor_messages += clock.elapsed();

    let clock = Instant::now();
    // The user-link factor is observed directly in its (n, k) layout; only
    // a transpose separates the fused messages from the transform model.
    let in_mean_h = ch_mean.t().to_owned();
    let in_var_h = ch_var.t().to_owned();
    let f2 = |x: &CxMat<T>, dir: TransformDir| transforms.f2_apply(x, dir);
    part3::sparse_step(
        &mut state.sparse_h,
        &in_mean_h,
        &in_var_h,
        &f2,
        cfg.eta_h,
        cfg.damping,
        floor,
    )?;
    let prior_h_mean = state.sparse_h.p.t().to_owned();
    timing.sparse_updates += clock.elapsed();

    let clock = Instant::now();
    let prior_h_var =
        Array2::from_shape_fn((dims.k, dims.n()), |(kk, _)| state.sparse_h.nu_p[kk]);
    part2::belief_update(
        &mut state.belief_h_mean,
        &mut state.belief_h_var,
        &prior_h_mean,
        &prior_h_var,
        &ch_mean,
        &ch_var,
        cfg.damping,
        floor,
    );
    part2::backward_to_h(
        &mut state.back_h,
        &state.belief_h_mean,
        &state.belief_h_var,
        &fwd_h,
        floor,
    );

    part2::assemble_s_prior(
        &state.back_g,
        &state.back_h,
        &mut state.s_mean,
        &mut state.s_var,
        floor,
    );
    timing.factor_messages += clock.elapsed();
    Ok(())
}

// ------------------------------------------------------------- diagnostics

/// Relative squared change between sweeps; a zero previous iterate counts
/// as converged only if the new one is zero too.
fn rel_change<T: RealScalar>(new: &CxMat<T>, old: &CxMat<T>) -> T {
    let num: T = new
        .iter()
        .zip(old.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let den: T = old.iter().map(|z| z.norm_sqr()).sum();
    let tiny = T::lit(1e-30);
    if den <= tiny {
        if num <= tiny {
            T::zero()
        } else {
            T::lit(1e30)
        }
    } else {
        num / den
    }
}

fn all_finite<T: RealScalar>(mat: &CxMat<T>) -> bool {
    mat.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Physical-domain channels from the two angular estimates.
fn reconstruct<T: RealScalar>(
    omega: &CxMat<T>,
    sigma: &CxMat<T>,
    transforms: &FastTransforms<T>,
) -> crate::Result<(CxMat<T>, CxMat<T>)> {
    let g = transforms.f2_apply_rows(
        &transforms.f1_apply(omega, TransformDir::Forward)?,
        TransformDir::Adjoint,
    )?;
    let h = transforms.f2_apply(sigma, TransformDir::Forward)?;
    Ok((g, h))
}

/// `unscale` undoes the internal measurement normalization on the angular
/// estimates; `beta` must already be in the caller's measurement units.
#[allow(clippy::too_many_arguments)]
fn build_report<T: RealScalar>(
    omega: &CxMat<T>,
    sigma: &CxMat<T>,
    beta: T,
    unscale: T,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceRow<T>>,
    stage_timing: StageTiming,
    transforms: &FastTransforms<T>,
) -> crate::Result<EstimateReport<T>> {
    let omega = omega.map(|z| z.scale(unscale));
    let sigma = sigma.map(|z| z.scale(unscale));
    let (g_hat, h_hat) = reconstruct(&omega, &sigma, transforms)?;
    Ok(EstimateReport {
        g_beam_hat: omega,
        h_beam_hat: sigma,
        g_hat,
        h_hat,
        noise_precision_hat: beta,
        iterations,
        converged,
        trace,
        stage_timing,
    })
}

// ------------------------------------------------------------------ driver

/// Runs the full estimator on a preprocessed measurement. `rng` only seeds
/// the symmetry-breaking initialization, so identical inputs and seeds give
/// identical outputs.
pub fn run_estimator<T: RealScalar, R: Rng + ?Sized>(
    r: &CxMat<T>,
    psi: &CxMat<T>,
    dims: &SystemDims,
    config: &EstimatorConfig<T>,
    genie: Option<&GenieTruth<'_, T>>,
    rng: &mut R,
) -> Result<EstimateReport<T>, EstimatorError<T>> {
    config.validate()?;
    let (n, j) = (dims.n(), dims.j());
    if r.dim() != (dims.l, j) {
        return Err(Error::Dimension(format!(
            "measurement is {:?}, dims want ({}, {})",
            r.dim(),
            dims.l,
            j
        ))
        .into());
    }
    if psi.dim() != (dims.l, n) {
        return Err(Error::Dimension(format!(
            "sensing matrix is {:?}, dims want ({}, {})",
            psi.dim(),
            dims.l,
            n
        ))
        .into());
    }
    if let Some(truth) = genie {
        if truth.g.dim() != (dims.m, n) || truth.h.dim() != (n, dims.k) {
            return Err(Error::Dimension("reference channel shapes disagree".into()).into());
        }
    } else if config.termination == Termination::Genie {
        return Err(Error::Config(
            "genie termination requires reference channels".into(),
        )
        .into());
    }

    // Normalize the measurement so S carries unit average entry power; the
    // unit-variance initialization then matches the working scale and the
    // reported estimates are scaled back at the end.
    let energy: T = r.iter().map(|z| z.norm_sqr()).sum();
    let scale = if energy > T::zero() && energy.is_finite() {
        (T::from_usize(dims.l * j).unwrap() / energy).sqrt()
    } else {
        T::one()
    };
    let unscale = scale.sqrt().recip();
    // Scaling the observation by c multiplies the noise variance by c^2 and
    // hence divides its precision by c^2; undo that in reported values.
    let beta_out = |beta: T| beta * scale * scale;
    let r_work = r.map(|z| z.scale(scale));

    let transforms = FastTransforms::new(dims.m, dims.n1, dims.n2, config.backend)?;
    let psi_h = dagger(psi);
    let lambda_sq = part1::row_energy(psi);
    let mut state = init_state(dims, rng, config.variance_floor);

    let mut trace = Vec::new();
    let mut stage_timing = StageTiming::default();
    let mut prev_omega = state.sparse_g.x_hat.clone();
    let mut prev_sigma = state.sparse_h.x_hat.clone();
    let mut prev_beta = state.lin.beta;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..config.max_iters {
        iterations = it + 1;
        iterate(
            &mut state,
            &r_work,
            psi,
            &psi_h,
            &lambda_sq,
            dims,
            &transforms,
            config,
            &mut stage_timing,
        )?;
        let finite = all_finite(&state.sparse_g.x_hat)
            && all_finite(&state.sparse_h.x_hat)
            && state.lin.beta.is_finite();
        if !finite {
            let last = build_report(
                &prev_omega,
                &prev_sigma,
                beta_out(prev_beta),
                unscale,
                it,
                false,
                trace,
                stage_timing,
                &transforms,
            )?;
            return Err(EstimatorError::Diverged {
                iteration: iterations,
                last: Box::new(last),
            });
        }
        let mut genie_err = T::infinity();
        if let Some(truth) = genie {
            let (g_hat, h_hat) =
                reconstruct(&state.sparse_g.x_hat, &state.sparse_h.x_hat, &transforms)?;
            let (err_g, err_h) = aligned_factor_nmse(&g_hat, &h_hat, truth.g, truth.h);
            genie_err = err_g.max(err_h);
            trace.push(TraceRow {
                iteration: iterations,
                nmse_g_db: nmse_to_db(err_g),
                nmse_h_db: nmse_to_db(err_h),
                noise_precision: beta_out(state.lin.beta),
            });
        }
        let stop = match config.termination {
            Termination::SelfChange => {
                rel_change(&state.sparse_g.x_hat, &prev_omega) < config.zeta
                    && rel_change(&state.sparse_h.x_hat, &prev_sigma) < config.zeta
            }
            Termination::Genie => genie_err < config.zeta,
        };
        prev_omega.assign(&state.sparse_g.x_hat);
        prev_sigma.assign(&state.sparse_h.x_hat);
        prev_beta = state.lin.beta;
        if stop {
            converged = true;
            break;
        }
    }
    Ok(build_report(
        &state.sparse_g.x_hat,
        &state.sparse_h.x_hat,
        beta_out(state.lin.beta),
        unscale,
        iterations,
        converged,
        trace,
        stage_timing,
        &transforms,
    )?)
}

// -------------------------------------------------------------------- tests
