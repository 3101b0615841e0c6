//! Experiment harness: scale-aligned error metrics, a genie-aided
//! least-squares baseline, seeded Monte-Carlo trials, parallel sweeps over
//! (SNR, L) grids, and CSV serialization of per-trial and aggregated
//! results.
//!
//! Reproducibility contract: every trial derives its own seed from the
//! master seed and a dense trial counter, so results are independent of
//! thread count and schedule.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2};
use num_complex::Complex;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{generate, ChannelParams, ChannelRealization, SystemDims};
use crate::error::{Error, Result};
use crate::estimator::{
    run_estimator, EstimatorConfig, EstimatorError, GenieTruth, TraceRow,
};
use crate::numerics::{dagger, solve_hermitian, DftOperators};
use crate::scalar::RealScalar;
use crate::system::{make_phase_matrix, measure, MeasurementSet, PhiKind};
use crate::{CxMat, CxVec};

// ----------------------------------------------------------------- metrics

/// Complex scale alpha minimizing ||truth - alpha est||_F.
pub fn remove_scale<T: RealScalar>(est: &CxMat<T>, truth: &CxMat<T>) -> Complex<T> {
    let mut num: Complex<T> = Complex::zero();
    let mut den = T::zero();
    for (e, t) in est.iter().zip(truth.iter()) {
        num = num + e.conj() * t;
        den += e.norm_sqr();
    }
    if den <= T::lit(1e-30) {
        Complex::zero()
    } else {
        num.scale(den.recip())
    }
}

/// Scale-aligned normalized squared error: the channel is only identifiable
/// up to a complex scale, so the metric removes the best one first.
pub fn nmse<T: RealScalar>(est: &CxMat<T>, truth: &CxMat<T>) -> T {
    let alpha = remove_scale(est, truth);
    let mut num = T::zero();
    let mut den = T::zero();
    for (e, t) in est.iter().zip(truth.iter()) {
        num += (t - e * alpha).norm_sqr();
        den += t.norm_sqr();
    }
    if den <= T::lit(1e-30) {
        T::zero()
    } else {
        num / den
    }
}

/// dB conversion with a -120 dB floor so exact recoveries stay plottable.
pub fn nmse_to_db<T: RealScalar>(value: T) -> T {
    T::lit(10.0) * value.max(T::lit(1e-12)).log10()
}

/// Factor errors with the unavoidable gauge removed. The factorization
/// S(n, (k-1)M+m) = g(m,n) h(n,k) is invariant under any per-column complex
/// rescaling G diag(d), diag(1/d) H — on the angular grid this family even
/// contains support-shifting modulations — so raw per-factor errors are
/// meaningless. The gauge is fitted column-by-column on the first factor,
/// its inverse is applied to the second, and one final global scale is
/// removed from the second before computing both relative squared errors.
pub fn aligned_factor_nmse<T: RealScalar>(
    g_est: &CxMat<T>,
    h_est: &CxMat<T>,
    g_true: &CxMat<T>,
    h_true: &CxMat<T>,
) -> (T, T) {
    assert_eq!(g_est.dim(), g_true.dim(), "first factor shapes");
    assert_eq!(h_est.dim(), h_true.dim(), "second factor shapes");
    assert_eq!(g_est.ncols(), h_est.nrows(), "shared gauge dimension");
    let tiny = T::lit(1e-30);
    let mut num_g = T::zero();
    let mut den_g = T::zero();
    let mut h_aligned = h_est.clone();
    for nn in 0..g_true.ncols() {
        let mut cross: Complex<T> = Complex::zero();
        let mut power = T::zero();
        for (e, t) in g_est.column(nn).iter().zip(g_true.column(nn).iter()) {
            cross = cross + e.conj() * *t;
            power += e.norm_sqr();
        }
        let d = if power <= tiny {
            Complex::zero()
        } else {
            cross.scale(power.recip())
        };
        for (e, t) in g_est.column(nn).iter().zip(g_true.column(nn).iter()) {
            num_g += (*t - *e * d).norm_sqr();
            den_g += t.norm_sqr();
        }
        // A dead gauge leaves the paired row unrecoverable; zero it so the
        // row counts as fully missed rather than poisoning the global fit.
        let inv = if d.norm_sqr() <= tiny {
            Complex::zero()
        } else {
            d.finv()
        };
        for kk in 0..h_aligned.ncols() {
            h_aligned[[nn, kk]] = h_aligned[[nn, kk]] * inv;
        }
    }
    let nmse_g = if den_g <= tiny { T::zero() } else { num_g / den_g };
    (nmse_g, nmse(&h_aligned, h_true))
}

/// Quantile by linear interpolation on a sorted slice.
pub fn quantile<T: RealScalar>(sorted: &[T], q: T) -> T {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * T::from_usize(sorted.len() - 1).unwrap();
    let lo = pos.floor().as_f64() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - pos.floor();
    sorted[lo] * (T::one() - frac) + sorted[hi] * frac
}

// ------------------------------------------------------------------- seeds

/// Per-trial seed: one splitmix64 step over the master seed and a dense
/// counter. Trials stay decorrelated and independent of execution order.
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    let mut z = master.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------- baseline

const ORACLE_RIDGE: f64 = 1e-10;
const SUPPORT_THRESHOLD: f64 = 1e-8;

fn ridge_solve<T: RealScalar>(a: &CxMat<T>, b: &CxVec<T>) -> Result<CxVec<T>> {
    let cols = a.ncols();
    let mut gram = dagger(a).dot(a);
    for i in 0..cols {
        gram[[i, i]] = gram[[i, i]] + Complex::new(T::lit(ORACLE_RIDGE), T::zero());
    }
    let rhs = dagger(a).dot(b);
    solve_hermitian(&gram, &rhs)
}

fn threshold_support<T: RealScalar>(mat: &CxMat<T>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for ((i, j), z) in mat.indexed_iter() {
        if z.norm() > T::lit(SUPPORT_THRESHOLD) {
            out.push((i, j));
        }
    }
    out
}

fn top_support<T: RealScalar>(mat: &CxMat<T>, count: usize) -> Vec<(usize, usize)> {
    let mut entries: Vec<((usize, usize), T)> =
        mat.indexed_iter().map(|(idx, z)| (idx, z.norm())).collect();
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    entries.truncate(count.min(entries.len()));
    entries.into_iter().map(|(idx, _)| idx).collect()
}

fn column_support<T: RealScalar>(
    mat: &CxMat<T>,
    col: usize,
    on_grid: bool,
    count: usize,
) -> Vec<usize> {
    if on_grid {
        (0..mat.nrows())
            .filter(|&i| mat[[i, col]].norm() > T::lit(SUPPORT_THRESHOLD))
            .collect()
    } else {
        let mut entries: Vec<(usize, T)> = (0..mat.nrows())
            .map(|i| (i, mat[[i, col]].norm()))
            .collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        entries.truncate(count.min(entries.len()));
        entries.into_iter().map(|(i, _)| i).collect()
    }
}

/// Genie-aided least squares: given the true support of each angular image
/// and the true value of the opposite channel, solve the (tiny) linear
/// systems for the supported coefficients. On-grid channels use their exact
/// support; off-grid ones keep the strongest 4 x paths entries.
pub fn oracle_ls<T: RealScalar>(
    ms: &MeasurementSet<T>,
    dims: &SystemDims,
    real: &ChannelRealization<T>,
    paths_g: usize,
    paths_h: usize,
) -> Result<(CxMat<T>, CxMat<T>)> {
    let (m, k, n, l, j) = (dims.m, dims.k, dims.n(), dims.l, dims.j());
    let ops = DftOperators::<T>::new(dims.m, dims.n1, dims.n2)?;

    // RIS-BS side: unknowns on the support of the angular image.
    let supp = if real.on_grid {
        threshold_support(&real.g_beam)
    } else {
        top_support(&real.g_beam, 4 * paths_g)
    };
    if supp.is_empty() {
        return Err(Error::Degenerate("empty angular support".into()));
    }
    let mut a = Array2::zeros((l * j, supp.len()));
    for (ci, &(mi, ni)) in supp.iter().enumerate() {
        // B = Psi diag(conj(F2(:, ni))) H, one L x K block per support atom.
        let mut hs = real.h.clone();
        for nn in 0..n {
            let w = ops.f2[[nn, ni]].conj();
            for kk in 0..k {
                hs[[nn, kk]] = hs[[nn, kk]] * w;
            }
        }
        let b = ms.psi.dot(&hs);
        for ll in 0..l {
            for kk in 0..k {
                for mp in 0..m {
                    a[[ll * j + kk * m + mp, ci]] = ops.f1[[mp, mi]] * b[[ll, kk]];
                }
            }
        }
    }
    let mut rhs = Array1::zeros(l * j);
    for ll in 0..l {
        for jj in 0..j {
            rhs[ll * j + jj] = ms.r[[ll, jj]];
        }
    }
    let x = ridge_solve(&a, &rhs)?;
    let mut omega_hat = Array2::zeros((m, n));
    for (ci, &(mi, ni)) in supp.iter().enumerate() {
        omega_hat[[mi, ni]] = x[ci];
    }

    // User side: independent per-user systems given the true G.
    let mut sigma_hat = Array2::zeros((n, k));
    for kk in 0..k {
        let supp_k = column_support(&real.h_beam, kk, real.on_grid, 4 * paths_h);
        if supp_k.is_empty() {
            return Err(Error::Degenerate(format!("user {kk}: empty support")));
        }
        let mut ak = Array2::zeros((l * m, supp_k.len()));
        for (ci, &ni) in supp_k.iter().enumerate() {
            // E(n, m') = F2(n, ni) G(m', n); D = Psi E is L x M.
            let mut e = Array2::zeros((n, m));
            for nn in 0..n {
                let w = ops.f2[[nn, ni]];
                for mp in 0..m {
                    e[[nn, mp]] = w * real.g[[mp, nn]];
                }
            }
            let d = ms.psi.dot(&e);
            for ll in 0..l {
                for mp in 0..m {
                    ak[[ll * m + mp, ci]] = d[[ll, mp]];
                }
            }
        }
        let mut bk = Array1::zeros(l * m);
        for ll in 0..l {
            for mp in 0..m {
                bk[ll * m + mp] = ms.r[[ll, kk * m + mp]];
            }
        }
        let xk = ridge_solve(&ak, &bk)?;
        for (ci, &ni) in supp_k.iter().enumerate() {
            sigma_hat[[ni, kk]] = xk[ci];
        }
    }
    Ok((omega_hat, sigma_hat))
}

// ----------------------------------------------------------------- trials

/// Which method produced a result row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Proposed,
    OracleLs,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Proposed => "proposed",
            EstimatorKind::OracleLs => "oracle_ls",
        }
    }
}

/// One Monte-Carlo data point.
#[derive(Debug, Clone, Copy)]
pub struct TrialResult<T: RealScalar> {
    pub estimator: EstimatorKind,
    pub snr_db: T,
    pub l: usize,
    pub trial: usize,
    pub nmse_g_db: T,
    pub nmse_h_db: T,
    pub iterations: usize,
    pub runtime_ms: f64,
    pub converged: bool,
    /// Not serialized; lets callers escalate diverged runs.
    pub diverged: bool,
}

/// Full sweep description, consumed by [`run_sweep`].
#[derive(Debug, Clone)]
pub struct SweepConfig<T: RealScalar> {
    pub m: usize,
    pub k: usize,
    pub n1: usize,
    pub n2: usize,
    pub t: usize,
    pub l_list: Vec<usize>,
    pub snr_db_list: Vec<T>,
    pub trials: usize,
    pub master_seed: u64,
    pub channel: ChannelParams<T>,
    pub phi_kind: PhiKind,
    pub estimator: EstimatorConfig<T>,
    pub run_oracle: bool,
}

impl<T: RealScalar> SweepConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.l_list.is_empty() || self.snr_db_list.is_empty() {
            return Err(Error::Config("need at least one L and one SNR".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        self.channel.validate()?;
        self.estimator.validate()
    }
}

fn trial_setup<T: RealScalar>(
    cfg: &SweepConfig<T>,
    l: usize,
    snr_db: T,
    rng: &mut ChaCha8Rng,
) -> Result<(SystemDims, ChannelRealization<T>, MeasurementSet<T>)> {
    let dims = SystemDims::new(cfg.m, cfg.k, cfg.n1, cfg.n2, l, cfg.t)?;
    let real = generate(&dims, &cfg.channel, rng)?;
    let phi = make_phase_matrix::<T, _>(cfg.phi_kind, dims.l, dims.n(), rng)?;
    let ms = measure(&dims, &real.g, &real.h, &phi, Some(snr_db), rng)?;
    Ok((dims, real, ms))
}

/// Runs one seeded trial: the proposed estimator, plus the genie baseline
/// when enabled. Divergence is salvaged into a result row with
/// `diverged = true` rather than aborting the sweep.
pub fn run_trial<T: RealScalar>(
    cfg: &SweepConfig<T>,
    l: usize,
    snr_db: T,
    trial: usize,
    seed: u64,
) -> Result<Vec<TrialResult<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dims, real, ms) = trial_setup(cfg, l, snr_db, &mut rng)?;
    let truth = GenieTruth {
        g: &real.g,
        h: &real.h,
    };

    let start = Instant::now();
    let outcome = run_estimator(&ms.r, &ms.psi, &dims, &cfg.estimator, Some(&truth), &mut rng);
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let (report, diverged) = match outcome {
        Ok(report) => (report, false),
        Err(EstimatorError::Diverged { last, .. }) => (*last, true),
        Err(EstimatorError::Invalid(e)) => return Err(e),
    };
    let (err_g, err_h) = aligned_factor_nmse(&report.g_hat, &report.h_hat, &real.g, &real.h);
    let mut rows = vec![TrialResult {
        estimator: EstimatorKind::Proposed,
        snr_db,
        l,
        trial,
        nmse_g_db: nmse_to_db(err_g),
        nmse_h_db: nmse_to_db(err_h),
        iterations: report.iterations,
        runtime_ms,
        converged: report.converged,
        diverged,
    }];

    if cfg.run_oracle {
        let start = Instant::now();
        let (omega_hat, sigma_hat) =
            oracle_ls(&ms, &dims, &real, cfg.channel.paths_g, cfg.channel.paths_h)?;
        let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
        let ops = DftOperators::new(dims.m, dims.n1, dims.n2)?;
        let g_oracle = ops.f1.dot(&omega_hat).dot(&dagger(&ops.f2));
        let h_oracle = ops.f2.dot(&sigma_hat);
        let (err_g, err_h) = aligned_factor_nmse(&g_oracle, &h_oracle, &real.g, &real.h);
        rows.push(TrialResult {
            estimator: EstimatorKind::OracleLs,
            snr_db,
            l,
            trial,
            nmse_g_db: nmse_to_db(err_g),
            nmse_h_db: nmse_to_db(err_h),
            iterations: 0,
            runtime_ms,
            converged: true,
            diverged: false,
        });
    }
    Ok(rows)
}

/// Everything [`run_single`] reports for one run, including the trace.
#[derive(Debug, Clone)]
pub struct SingleOutcome<T: RealScalar> {
    pub nmse_g_db: T,
    pub nmse_h_db: T,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub runtime_ms: f64,
    pub noise_precision_hat: T,
    pub trace: Vec<TraceRow<T>>,
}

/// One fully traced run at a single operating point (reference channels are
/// always supplied so the trace carries per-iteration errors).
pub fn run_single<T: RealScalar>(
    cfg: &SweepConfig<T>,
    l: usize,
    snr_db: T,
    seed: u64,
) -> Result<SingleOutcome<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dims, real, ms) = trial_setup(cfg, l, snr_db, &mut rng)?;
    let truth = GenieTruth {
        g: &real.g,
        h: &real.h,
    };
    let start = Instant::now();
    let outcome = run_estimator(&ms.r, &ms.psi, &dims, &cfg.estimator, Some(&truth), &mut rng);
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let (report, diverged) = match outcome {
        Ok(report) => (report, false),
        Err(EstimatorError::Diverged { last, .. }) => (*last, true),
        Err(EstimatorError::Invalid(e)) => return Err(e),
    };
    let (err_g, err_h) = aligned_factor_nmse(&report.g_hat, &report.h_hat, &real.g, &real.h);
    Ok(SingleOutcome {
        nmse_g_db: nmse_to_db(err_g),
        nmse_h_db: nmse_to_db(err_h),
        iterations: report.iterations,
        converged: report.converged,
        diverged,
        runtime_ms,
        noise_precision_hat: report.noise_precision_hat,
        trace: report.trace,
    })
}

// ------------------------------------------------------------------ sweeps

/// Median band of one (estimator, SNR, L) cell.
#[derive(Debug, Clone, Copy)]
pub struct AggregateRow<T: RealScalar> {
    pub estimator: EstimatorKind,
    pub snr_db: T,
    pub l: usize,
    pub trials: usize,
    pub g_q25: T,
    pub g_median: T,
    pub g_q75: T,
    pub h_q25: T,
    pub h_median: T,
    pub h_q75: T,
    pub mean_iterations: f64,
    pub converged_trials: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutput<T: RealScalar> {
    pub trials: Vec<TrialResult<T>>,
    pub aggregates: Vec<AggregateRow<T>>,
}

/// Runs the full (L, SNR, trial) grid, optionally on a bounded thread pool.
/// Output order and content are independent of parallelism.
pub fn run_sweep<T: RealScalar + Send + Sync>(
    cfg: &SweepConfig<T>,
    jobs: Option<usize>,
) -> Result<SweepOutput<T>> {
    cfg.validate()?;
    let ns = cfg.snr_db_list.len();
    let mut tasks = Vec::new();
    for li in 0..cfg.l_list.len() {
        for si in 0..ns {
            for tr in 0..cfg.trials {
                let counter = ((li * ns + si) * cfg.trials + tr) as u64;
                tasks.push((li, si, tr, derive_seed(cfg.master_seed, counter)));
            }
        }
    }
    let body = |&(li, si, tr, seed): &(usize, usize, usize, u64)| {
        run_trial(cfg, cfg.l_list[li], cfg.snr_db_list[si], tr, seed)
    };
    let nested: Result<Vec<Vec<TrialResult<T>>>> = match jobs {
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| tasks.par_iter().map(body).collect())
        }
        None => tasks.par_iter().map(body).collect(),
    };
    let trials: Vec<TrialResult<T>> = nested?.into_iter().flatten().collect();
    let aggregates = aggregate_results(&trials, &cfg.l_list, &cfg.snr_db_list);
    Ok(SweepOutput { trials, aggregates })
}

/// Groups per-trial rows into quartile summaries, ordered by estimator,
/// then L, then SNR.
pub fn aggregate_results<T: RealScalar>(
    trials: &[TrialResult<T>],
    l_list: &[usize],
    snr_list: &[T],
) -> Vec<AggregateRow<T>> {
    let mut out = Vec::new();
    for kind in [EstimatorKind::Proposed, EstimatorKind::OracleLs] {
        for &l in l_list {
            for &snr in snr_list {
                let cell: Vec<&TrialResult<T>> = trials
                    .iter()
                    .filter(|t| t.estimator == kind && t.l == l && t.snr_db == snr)
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                let mut g: Vec<T> = cell.iter().map(|t| t.nmse_g_db).collect();
                let mut h: Vec<T> = cell.iter().map(|t| t.nmse_h_db).collect();
                g.sort_by(|a, b| a.partial_cmp(b).unwrap());
                h.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mean_iterations = cell.iter().map(|t| t.iterations as f64).sum::<f64>()
                    / cell.len() as f64;
                out.push(AggregateRow {
                    estimator: kind,
                    snr_db: snr,
                    l,
                    trials: cell.len(),
                    g_q25: quantile(&g, T::lit(0.25)),
                    g_median: quantile(&g, T::lit(0.5)),
                    g_q75: quantile(&g, T::lit(0.75)),
                    h_q25: quantile(&h, T::lit(0.25)),
                    h_median: quantile(&h, T::lit(0.5)),
                    h_q75: quantile(&h, T::lit(0.75)),
                    mean_iterations,
                    converged_trials: cell.iter().filter(|t| t.converged).count(),
                });
            }
        }
    }
    out
}

// -------------------------------------------------------------------- CSV

/// Per-trial rows; `runtime_ms` is the only non-deterministic column.
pub fn write_trials_csv<T: RealScalar, W: Write>(
    w: &mut W,
    rows: &[TrialResult<T>],
) -> Result<()> {
    writeln!(
        w,
        "estimator,snr_db,L,trial,nmse_G_db,nmse_H_db,iterations,runtime_ms,converged"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{},{},{:.6},{:.6},{},{:.3},{}",
            r.estimator.as_str(),
            r.snr_db.as_f64(),
            r.l,
            r.trial,
            r.nmse_g_db.as_f64(),
            r.nmse_h_db.as_f64(),
            r.iterations,
            r.runtime_ms,
            r.converged
        )?;
    }
    Ok(())
}

pub fn write_aggregates_csv<T: RealScalar, W: Write>(
    w: &mut W,
    rows: &[AggregateRow<T>],
) -> Result<()> {
    writeln!(
        w,
        "estimator,snr_db,L,trials,nmse_G_q25_db,nmse_G_median_db,nmse_G_q75_db,\
         nmse_H_q25_db,nmse_H_median_db,nmse_H_q75_db,mean_iterations,converged_trials"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{}",
            r.estimator.as_str(),
            r.snr_db.as_f64(),
            r.l,
            r.trials,
            r.g_q25.as_f64(),
            r.g_median.as_f64(),
            r.g_q75.as_f64(),
            r.h_q25.as_f64(),
            r.h_median.as_f64(),
            r.h_q75.as_f64(),
            r.mean_iterations,
            r.converged_trials
        )?;
    }
    Ok(())
}

/// Per-iteration error trace of a single run.
pub fn write_trace_csv<T: RealScalar, W: Write>(w: &mut W, rows: &[TraceRow<T>]) -> Result<()> {
    writeln!(w, "iteration,nmse_G_db,nmse_H_db,noise_precision")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6e}",
            r.iteration,
            r.nmse_g_db.as_f64(),
            r.nmse_h_db.as_f64(),
            r.noise_precision.as_f64()
        )?;
    }
    Ok(())
}

// -------------------------------------------------------------------- tests

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::complex_standard;
    use rand::Rng;

    type Cx = Complex<f64>;

    #[test]
    fn scale_removal_is_exact_for_scaled_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = Array2::from_shape_fn((3, 4), |_| complex_standard::<f64, _>(&mut rng));
        let est = truth.map(|z| z * Cx::new(2.0, -1.0));
        let alpha = remove_scale(&est, &truth);
        let expect = Cx::new(1.0, 0.0) / Cx::new(2.0, -1.0);
        assert!((alpha - expect).norm() < 1e-12);
        assert!(nmse(&est, &truth) < 1e-24);
        assert_eq!(nmse_to_db(nmse(&est, &truth)), -120.0);
    }

    #[test]
    fn scale_removal_is_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = Array2::from_shape_fn((4, 4), |_| complex_standard::<f64, _>(&mut rng));
        let est = Array2::from_shape_fn((4, 4), |_| complex_standard::<f64, _>(&mut rng));
        let alpha = remove_scale(&est, &truth);
        let base: f64 = truth
            .iter()
            .zip(est.iter())
            .map(|(t, e)| (t - e * alpha).norm_sqr())
            .sum();
        for delta in [Cx::new(1e-3, 0.0), Cx::new(0.0, 1e-3)] {
            let worse: f64 = truth
                .iter()
                .zip(est.iter())
                .map(|(t, e)| (t - e * (alpha + delta)).norm_sqr())
                .sum();
            assert!(worse >= base, "alpha is not the minimizer");
        }
    }

    #[test]
    fn factor_alignment_absorbs_column_gauge() {
        // Any per-column rescaling of the first factor paired with its
        // inverse on the second is unobservable; the aligned errors must
        // vanish, including extra unrelated global scales on each side.
        let (m, n, k) = (4usize, 6usize, 3usize);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Array2::from_shape_fn((m, n), |_| complex_standard::<f64, _>(&mut rng));
        let h = Array2::from_shape_fn((n, k), |_| complex_standard::<f64, _>(&mut rng));
        let gauge: Vec<Cx> = (0..n)
            .map(|_| complex_standard::<f64, _>(&mut rng) + Cx::new(2.0, 0.0))
            .collect();
        let g_est = Array2::from_shape_fn((m, n), |(i, j)| g[[i, j]] * gauge[j] * 0.3);
        let h_est =
            Array2::from_shape_fn((n, k), |(i, j)| h[[i, j]] / gauge[i] * Cx::new(0.0, 5.0));
        let (eg, eh) = aligned_factor_nmse(&g_est, &h_est, &g, &h);
        assert!(eg < 1e-24, "first factor residual {eg}");
        assert!(eh < 1e-24, "second factor residual {eh}");
        // Unrelated estimates stay far from zero error.
        let g_junk = Array2::from_shape_fn((m, n), |_| complex_standard::<f64, _>(&mut rng));
        let (eg, _) = aligned_factor_nmse(&g_junk, &h_est, &g, &h);
        assert!(eg > 0.1, "junk first factor looks aligned: {eg}");
    }

    #[test]
    fn factor_alignment_absorbs_angular_shift_modulation() {
        // On the angular grid the gauge family contains transform-column
        // modulations that circularly shift both sparse supports, so even a
        // perfectly sparse estimate can sit on a shifted representative.
        // The aligned metric must rate every representative as exact.
        let dims = SystemDims::new(8, 2, 2, 4, 8, 2).unwrap();
        let n = dims.n();
        let ops = DftOperators::<f64>::new(dims.m, dims.n1, dims.n2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ChannelParams {
            paths_g: 2,
            paths_h: 1,
            on_grid: true,
            ..ChannelParams::default()
        };
        let real = generate(&dims, &params, &mut rng).unwrap();
        for c in 0..n {
            let gauge: Vec<Cx> = (0..n)
                .map(|nn| ops.f2[[nn, c]].conj() * (n as f64).sqrt())
                .collect();
            let g_mod =
                Array2::from_shape_fn((dims.m, n), |(i, j)| real.g[[i, j]] * gauge[j]);
            let h_mod =
                Array2::from_shape_fn((n, dims.k), |(i, j)| real.h[[i, j]] / gauge[i]);
            // The modulated pair is still an exactly sparse candidate: its
            // angular images keep the true nonzero counts.
            let omega = dagger(&ops.f1).dot(&g_mod).dot(&ops.f2);
            let mut mags: Vec<f64> = omega.iter().map(|z| z.norm_sqr()).collect();
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let tail: f64 = mags[2..].iter().sum();
            assert!(tail < 1e-20, "shift {c} breaks angular sparsity: {tail:e}");
            let (eg, eh) = aligned_factor_nmse(&g_mod, &h_mod, &real.g, &real.h);
            assert!(eg < 1e-20, "shift {c}: G residual {eg:e}");
            assert!(eh < 1e-20, "shift {c}: H residual {eh:e}");
            // A single global scale cannot absorb a non-constant gauge.
            if c != 0 {
                assert!(
                    nmse(&g_mod, &real.g) > 0.1,
                    "shift {c} should defeat plain scale removal"
                );
            }
        }
    }

    #[test]
    fn quantile_linear_interpolation() {
        let v = [1.0_f64, 2.0, 3.0, 4.0];
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-12);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-12);
        assert!((quantile(&v, 0.75) - 3.25).abs() < 1e-12);
        assert_eq!(quantile(&[5.0], 0.5), 5.0);
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = derive_seed(1, 0);
        assert_eq!(a, derive_seed(1, 0), "deterministic");
        let mut seen = std::collections::HashSet::new();
        for c in 0..1000 {
            assert!(seen.insert(derive_seed(1, c)), "collision at {c}");
        }
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0), "master matters");
    }

    fn tiny_sweep_config() -> SweepConfig<f64> {
        SweepConfig {
            m: 8,
            k: 2,
            n1: 2,
            n2: 4,
            t: 2,
            l_list: vec![8],
            snr_db_list: vec![20.0],
            trials: 2,
            master_seed: 7,
            channel: ChannelParams {
                paths_g: 2,
                paths_h: 1,
                on_grid: true,
                ..ChannelParams::default()
            },
            phi_kind: PhiKind::PartialDft,
            estimator: EstimatorConfig {
                max_iters: 15,
                ..EstimatorConfig::default()
            },
            run_oracle: true,
        }
    }

    #[test]
    fn oracle_nails_on_grid_noiseless_instance() {
        let cfg = tiny_sweep_config();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(3, 0));
        let dims = SystemDims::new(cfg.m, cfg.k, cfg.n1, cfg.n2, 8, cfg.t).unwrap();
        let real = generate(&dims, &cfg.channel, &mut rng).unwrap();
        let phi =
            make_phase_matrix::<f64, _>(PhiKind::PartialDft, dims.l, dims.n(), &mut rng).unwrap();
        let ms = measure(&dims, &real.g, &real.h, &phi, None, &mut rng).unwrap();
        let (omega, sigma) = oracle_ls(&ms, &dims, &real, 2, 1).unwrap();
        let g_db = nmse_to_db(nmse(&omega, &real.g_beam));
        let h_db = nmse_to_db(nmse(&sigma, &real.h_beam));
        assert!(g_db < -80.0, "oracle G error {g_db}");
        assert!(h_db < -80.0, "oracle H error {h_db}");
    }

    #[test]
    fn trial_rows_are_deterministic_and_complete() {
        let cfg = tiny_sweep_config();
        let seed = derive_seed(cfg.master_seed, 0);
        let a = run_trial(&cfg, 8, 20.0, 0, seed).unwrap();
        let b = run_trial(&cfg, 8, 20.0, 0, seed).unwrap();
        assert_eq!(a.len(), 2, "proposed + oracle");
        assert_eq!(a[0].estimator, EstimatorKind::Proposed);
        assert_eq!(a[1].estimator, EstimatorKind::OracleLs);
        assert_eq!(a[0].nmse_g_db, b[0].nmse_g_db);
        assert_eq!(a[0].iterations, b[0].iterations);
        assert_eq!(a[1].nmse_h_db, b[1].nmse_h_db);
        assert!(a[0].nmse_g_db.is_finite());
        assert_eq!(a[1].iterations, 0);
    }

    #[test]
    fn sweep_covers_grid_and_is_thread_count_invariant() {
        let mut cfg = tiny_sweep_config();
        cfg.snr_db_list = vec![10.0, 20.0];
        let one = run_sweep(&cfg, Some(1)).unwrap();
        let four = run_sweep(&cfg, Some(4)).unwrap();
        assert_eq!(one.trials.len(), 2 * 2 * 2, "L x SNR x trials x methods");
        assert_eq!(one.aggregates.len(), 4);
        for (a, b) in one.trials.iter().zip(four.trials.iter()) {
            assert_eq!(a.estimator, b.estimator);
            assert_eq!(a.nmse_g_db, b.nmse_g_db);
            assert_eq!(a.trial, b.trial);
        }
    }

    #[test]
    fn csv_round_trip_shape() {
        let cfg = tiny_sweep_config();
        let out = run_sweep(&cfg, Some(2)).unwrap();
        let mut buf = Vec::new();
        write_trials_csv(&mut buf, &out.trials).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + out.trials.len());
        assert_eq!(
            lines[0],
            "estimator,snr_db,L,trial,nmse_G_db,nmse_H_db,iterations,runtime_ms,converged"
        );
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), 9, "row: {line}");
        }
        let mut buf = Vec::new();
        write_aggregates_csv(&mut buf, &out.aggregates).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + out.aggregates.len());
    }

    #[test]
    fn aggregate_csv_is_byte_deterministic() {
        let cfg = tiny_sweep_config();
        let mut bufs = Vec::new();
        for _ in 0..2 {
            let out = run_sweep(&cfg, Some(3)).unwrap();
            let mut buf = Vec::new();
            write_aggregates_csv(&mut buf, &out.aggregates).unwrap();
            bufs.push(buf);
        }
        assert_eq!(bufs[0], bufs[1]);
    }

    #[test]
    fn single_run_reports_trace() {
        let cfg = tiny_sweep_config();
        let out = run_single(&cfg, 8, 20.0, derive_seed(cfg.master_seed, 0)).unwrap();
        assert_eq!(out.trace.len(), out.iterations);
        assert!(out.nmse_g_db.is_finite());
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &out.trace).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), out.trace.len() + 1);
    }

    #[test]
    fn top_support_orders_by_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mat: CxMat<f64> = Array2::zeros((4, 4));
        mat[[1, 2]] = Cx::new(3.0, 0.0);
        mat[[0, 0]] = Cx::new(1.0, 0.0);
        mat[[3, 3]] = Cx::new(2.0, 0.0);
        let _ = rng.gen::<u64>();
        let supp = top_support(&mat, 2);
        assert_eq!(supp, vec![(1, 2), (3, 3)]);
    }
}
