//! Uplink training plumbing: RIS phase schedules, orthogonal pilots, the
//! per-block received signal, and the preprocessing that turns L received
//! blocks into the linear model R = Psi S + noise with a structured S.
//!
//! Stacking convention: after pilot removal the block-l signal towards user
//! k and antenna m lands in row l, column j = k * M + m of the stacked
//! measurement. With S(n, j) = H(n, k) G(m, n) the noiseless stack equals
//! Phi S exactly.

use std::io::{BufRead, Write};

use ndarray::{Array2, Array3};
use num_complex::Complex;
use num_traits::Zero;
use rand::Rng;

use crate::channel::{read_matrix, write_matrix, SystemDims};
use crate::error::{Error, Result};
use crate::numerics::{dagger, factorize_phi, unitary_dft};
use crate::scalar::{complex_standard, RealScalar};
use crate::{CxMat, CxTen, ReVec};

// ------------------------------------------------------------ RIS phases

/// How the L x N RIS phase schedule is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiKind {
    /// L evenly spaced rows of the N-point unitary DFT; row-orthonormal, so
    /// preprocessing is a no-op.
    PartialDft,
    /// Unit-magnitude entries exp(j theta) / sqrt(N) with uniform phases.
    RandomPhase,
    /// Random signs +-1 / sqrt(N).
    Bernoulli,
}

/// Draws the phase schedule. Row r of the partial-DFT variant is DFT row
/// floor(r N / L), which keeps the rows orthonormal for any L <= N.
pub fn make_phase_matrix<T: RealScalar, R: Rng + ?Sized>(
    kind: PhiKind,
    l: usize,
    n: usize,
    rng: &mut R,
) -> Result<CxMat<T>> {
    if l == 0 || n == 0 || l > n {
        return Err(Error::Dimension(format!(
            "phase schedule needs 1 <= L <= N, got L = {l}, N = {n}"
        )));
    }
    match kind {
        PhiKind::PartialDft => {
            let f = unitary_dft::<T>(n)?;
            let mut phi = Array2::zeros((l, n));
            for r in 0..l {
                let src = r * n / l;
                for c in 0..n {
                    phi[[r, c]] = f[[src, c]];
                }
            }
            Ok(phi)
        }
        PhiKind::RandomPhase => {
            let scale = T::one() / T::from_usize(n).unwrap().sqrt();
            let two_pi = T::PI() + T::PI();
            Ok(Array2::from_shape_fn((l, n), |_| {
                Complex::from_polar(scale, T::uniform(rng) * two_pi)
            }))
        }
        PhiKind::Bernoulli => {
            let scale = T::one() / T::from_usize(n).unwrap().sqrt();
            Ok(Array2::from_shape_fn((l, n), |_| {
                if rng.gen::<bool>() {
                    Complex::new(scale, T::zero())
                } else {
                    Complex::new(-scale, T::zero())
                }
            }))
        }
    }
}

// --------------------------------------------------------------- pilots

/// K x T pilot block: the first K rows of the T-point unitary DFT, so that
/// X X^H = I_K exactly and pilot removal keeps the noise white.
pub fn make_pilot<T: RealScalar>(k: usize, t: usize) -> Result<CxMat<T>> {
    if k == 0 || t < k {
        return Err(Error::Dimension(format!(
            "pilot needs 1 <= K <= T, got K = {k}, T = {t}"
        )));
    }
    let f = unitary_dft::<T>(t)?;
    let mut x = Array2::zeros((k, t));
    for r in 0..k {
        for c in 0..t {
            x[[r, c]] = f[[r, c]];
        }
    }
    Ok(x)
}

// ----------------------------------------------------------- measurement

/// Received blocks Y_l = G diag(phi_l) H X + W_l as an (L, M, T) tensor.
/// `noise_precision` is the inverse per-entry noise variance; `None` means
/// noiseless.
pub fn simulate_rx<T: RealScalar, R: Rng + ?Sized>(
    g: &CxMat<T>,
    h: &CxMat<T>,
    phi: &CxMat<T>,
    pilot: &CxMat<T>,
    noise_precision: Option<T>,
    rng: &mut R,
) -> Result<CxTen<T>> {
    let (m, n) = g.dim();
    let (nh, k) = h.dim();
    let (l, np) = phi.dim();
    let (kp, t) = pilot.dim();
    if nh != n || np != n || kp != k {
        return Err(Error::Dimension(format!(
            "simulate_rx: inconsistent shapes G {:?}, H {:?}, Phi {:?}, X {:?}",
            g.dim(),
            h.dim(),
            phi.dim(),
            pilot.dim()
        )));
    }
    let sigma = noise_precision
        .map(|beta| {
            if beta <= T::zero() {
                Err(Error::Config("noise precision must be positive".into()))
            } else {
                Ok((T::one() / beta).sqrt())
            }
        })
        .transpose()?;
    let hx = h.dot(pilot); // N x T, shared across blocks
    let mut y = Array3::zeros((l, m, t));
    let mut scaled = Array2::zeros((n, t));
    for block in 0..l {
        for r in 0..n {
            let w = phi[[block, r]];
            for c in 0..t {
                scaled[[r, c]] = w * hx[[r, c]];
            }
        }
        let yl = g.dot(&scaled);
        for r in 0..m {
            for c in 0..t {
                let noise = match sigma {
                    Some(s) => complex_standard::<T, _>(rng) * s,
                    None => Complex::zero(),
                };
                y[[block, r, c]] = yl[[r, c]] + noise;
            }
        }
    }
    Ok(y)
}

/// Removes the pilot (right-multiplies each block by X^H) and stacks the
/// result into an L x (K M) matrix with column j = k * M + m.
pub fn depilot_and_stack<T: RealScalar>(y: &CxTen<T>, pilot: &CxMat<T>) -> Result<CxMat<T>> {
    let (l, m, t) = y.dim();
    let (k, tp) = pilot.dim();
    if tp != t {
        return Err(Error::Dimension(format!(
            "depilot_and_stack: pilot has T = {tp}, blocks have T = {t}"
        )));
    }
    let xh = dagger(pilot); // T x K
    let mut out = Array2::zeros((l, k * m));
    for block in 0..l {
        let yl = y
            .index_axis(ndarray::Axis(0), block)
            .to_owned();
        let tilde = yl.dot(&xh); // M x K
        for kk in 0..k {
            for mm in 0..m {
                out[[block, kk * m + mm]] = tilde[[mm, kk]];
            }
        }
    }
    Ok(out)
}

/// The structured target matrix: S(n, k * M + m) = H(n, k) G(m, n). Its
/// columns share the cross-coupled bilinear structure the estimator exploits.
pub fn structured_s<T: RealScalar>(g: &CxMat<T>, h: &CxMat<T>) -> Result<CxMat<T>> {
    let (m, n) = g.dim();
    let (nh, k) = h.dim();
    if nh != n {
        return Err(Error::Dimension(format!(
            "structured_s: G has N = {n}, H has N = {nh}"
        )));
    }
    let mut s = Array2::zeros((n, k * m));
    for nn in 0..n {
        for kk in 0..k {
            for mm in 0..m {
                s[[nn, kk * m + mm]] = h[[nn, kk]] * g[[mm, nn]];
            }
        }
    }
    Ok(s)
}

/// Noise precision that realizes a per-entry SNR (dB) against the average
/// signal power of the noiseless stack Phi S.
pub fn snr_to_precision<T: RealScalar>(snr_db: T, phi: &CxMat<T>, s: &CxMat<T>) -> Result<T> {
    if phi.ncols() != s.nrows() {
        return Err(Error::Dimension(format!(
            "snr_to_precision: Phi has N = {}, S has N = {}",
            phi.ncols(),
            s.nrows()
        )));
    }
    let clean = phi.dot(s);
    let power: T = clean.iter().map(|z| z.norm_sqr()).sum();
    if power <= T::zero() {
        return Err(Error::Degenerate(
            "snr_to_precision: noiseless stack has zero power".into(),
        ));
    }
    let entries = T::from_usize(clean.nrows() * clean.ncols()).unwrap();
    let snr = T::lit(10.0).powf(snr_db / T::lit(10.0));
    Ok(snr * entries / power)
}

// ---------------------------------------------------------- preprocessing

/// Measurements rotated into the row-orthonormal model R = Psi S + noise.
#[derive(Debug, Clone)]
pub struct MeasurementSet<T: RealScalar> {
    /// U^H-rotated stacked measurement, L x J.
    pub r: CxMat<T>,
    /// Effective sensing matrix with orthonormal rows scaled by `lambda`.
    pub psi: CxMat<T>,
    /// Left unitary factor of the phase schedule.
    pub u: CxMat<T>,
    /// Singular values of the phase schedule, descending.
    pub lambda: ReVec<T>,
    /// Per-entry noise precision of the stack, `None` when noiseless.
    pub noise_precision: Option<T>,
}

/// Factorizes the phase schedule and rotates the stacked measurement into
/// the model the estimator consumes. A unitary rotation leaves white noise
/// white, so `noise_precision` carries over unchanged.
pub fn preprocess<T: RealScalar>(
    y_stacked: &CxMat<T>,
    phi: &CxMat<T>,
    noise_precision: Option<T>,
) -> Result<MeasurementSet<T>> {
    if y_stacked.nrows() != phi.nrows() {
        return Err(Error::Dimension(format!(
            "preprocess: stack has L = {}, schedule has L = {}",
            y_stacked.nrows(),
            phi.nrows()
        )));
    }
    let fact = factorize_phi(phi)?;
    let r = dagger(&fact.u).dot(y_stacked);
    Ok(MeasurementSet {
        r,
        psi: fact.psi,
        u: fact.u,
        lambda: fact.lambda,
        noise_precision,
    })
}

/// End-to-end single-call helper: draw measurements for one realization and
/// preprocess them. Returns the measurement set and the noise precision used.
pub fn measure<T: RealScalar, R: Rng + ?Sized>(
    dims: &SystemDims,
    g: &CxMat<T>,
    h: &CxMat<T>,
    phi: &CxMat<T>,
    snr_db: Option<T>,
    rng: &mut R,
) -> Result<MeasurementSet<T>> {
    let pilot = make_pilot::<T>(dims.k, dims.t)?;
    let s = structured_s(g, h)?;
    let beta = snr_db.map(|db| snr_to_precision(db, phi, &s)).transpose()?;
    let y = simulate_rx(g, h, phi, &pilot, beta, rng)?;
    let stacked = depilot_and_stack(&y, &pilot)?;
    preprocess(&stacked, phi, beta)
}

// ----------------------------------------------------------- persistence

const MEASUREMENT_MAGIC: &str = "ris-hmr-measurement-v1";

/// Writes the phase schedule and stacked measurement as plain text so a run
/// can be replayed without re-simulating.
pub fn write_measurement<T: RealScalar, W: Write>(
    w: &mut W,
    phi: &CxMat<T>,
    y_stacked: &CxMat<T>,
    noise_precision: Option<T>,
) -> Result<()> {
    writeln!(w, "{MEASUREMENT_MAGIC}")?;
    match noise_precision {
        Some(beta) => writeln!(w, "noise_precision {beta}")?,
        None => writeln!(w, "noise_precision none")?,
    }
    write_matrix(w, "phi", phi)?;
    write_matrix(w, "y", y_stacked)?;
    Ok(())
}

/// Reads a dump written by [`write_measurement`].
pub fn read_measurement<T: RealScalar, R: BufRead>(
    r: R,
) -> Result<(CxMat<T>, CxMat<T>, Option<T>)> {
    let mut lines = r.lines();
    let magic = lines
        .next()
        .ok_or_else(|| Error::Parse("empty measurement dump".into()))??;
    if magic.trim() != MEASUREMENT_MAGIC {
        return Err(Error::Parse(format!(
            "unrecognized measurement dump: {magic}"
        )));
    }
    let noise_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing noise_precision line".into()))??;
    let parts: Vec<&str> = noise_line.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != "noise_precision" {
        return Err(Error::Parse(format!("bad noise line: {noise_line}")));
    }
    let beta = match parts[1] {
        "none" => None,
        v => Some(T::lit(v.parse::<f64>().map_err(|_| {
            Error::Parse("bad noise precision value".into())
        })?)),
    };
    let phi: CxMat<T> = read_matrix(&mut lines, "phi")?;
    let y: CxMat<T> = read_matrix(&mut lines, "y")?;
    if phi.nrows() != y.nrows() {
        return Err(Error::Parse(
            "phase schedule and stack row counts disagree".into(),
        ));
    }
    Ok((phi, y, beta))
}

// -------------------------------------------------------------------- tests
