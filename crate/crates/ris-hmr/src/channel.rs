//! Geometric mmWave channel model. Builds the RIS-to-base-station link `G`
//! (few dominant paths, Rician power profile) and the user-to-RIS links `H`,
//! plus their angular-domain (beamspace) images under the unitary DFT pair:
//! `g_beam = F1^H G F2`, `h_beam = F2^H H`. Those images are the sparse
//! matrices the estimator recovers.
//!
//! Spatial frequencies live on [-1, 1) and wrap mod 2. The on-grid mode
//! snaps every path to the DFT grid {2 i / n - 1}, which makes the beamspace
//! images exactly sparse; arithmetic grid index `i` maps to DFT column
//! `(i - n/2) mod n` (even n).

use std::collections::HashSet;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use num_complex::Complex;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{dagger, DftOperators};
use crate::scalar::{complex_standard, RealScalar};
use crate::{CxMat, CxVec};

// ------------------------------------------------------------- dimensions

/// Static geometry of one experiment: M base-station antennas, K single-
/// antenna users, an N1 x N2 planar RIS (N elements), L RIS phase blocks,
/// and T pilot symbols per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemDims {
    pub m: usize,
    pub k: usize,
    pub n1: usize,
    pub n2: usize,
    pub l: usize,
    pub t: usize,
}

impl SystemDims {
    pub fn new(m: usize, k: usize, n1: usize, n2: usize, l: usize, t: usize) -> Result<Self> {
        if m == 0 || k == 0 || n1 == 0 || n2 == 0 || l == 0 || t == 0 {
            return Err(Error::Dimension(
                "all system dimensions must be at least 1".into(),
            ));
        }
        if t < k {
            return Err(Error::Dimension(format!(
                "pilot length T = {t} must be at least K = {k} for orthogonal pilots"
            )));
        }
        let n = n1 * n2;
        if l > n {
            return Err(Error::Dimension(format!(
                "phase blocks L = {l} must not exceed RIS size N = {n}"
            )));
        }
        Ok(Self { m, k, n1, n2, l, t })
    }

    /// RIS element count.
    pub fn n(&self) -> usize {
        self.n1 * self.n2
    }

    /// Width of the stacked measurement: J = K * M columns.
    pub fn j(&self) -> usize {
        self.k * self.m
    }
}

// ------------------------------------------------------------ steering

/// Uniform linear array response at spatial frequency x:
/// entry m = exp(-j pi m x) / sqrt(n).
pub fn steering_ula<T: RealScalar>(n: usize, spatial_freq: T) -> CxVec<T> {
    let scale = T::one() / T::from_usize(n).unwrap().sqrt();
    let step = -T::PI() * spatial_freq;
    Array1::from_shape_fn(n, |m| Complex::from_polar(scale, step * T::from_usize(m).unwrap()))
}

/// Planar-array response: Kronecker product of the two axis responses at
/// spatial frequencies x1 = cos(elevation) and
/// x2 = sin(elevation) cos(azimuth), with index (i1, i2) -> i1 * n2 + i2.
pub fn steering_upa<T: RealScalar>(n1: usize, n2: usize, elevation: T, azimuth: T) -> CxVec<T> {
    let x1 = elevation.cos();
    let x2 = elevation.sin() * azimuth.cos();
    let a1 = steering_ula(n1, x1);
    let a2 = steering_ula(n2, x2);
    Array1::from_shape_fn(n1 * n2, |i| a1[i / n2] * a2[i % n2])
}

// ------------------------------------------------------------ grid logic

/// Value of arithmetic grid point i on the n-point spatial-frequency grid.
pub fn grid_value<T: RealScalar>(i: usize, n: usize) -> T {
    T::from_usize(2 * i).unwrap() / T::from_usize(n).unwrap() - T::one()
}

/// Nearest grid point to x under the wrap-around (mod 2) metric; returns
/// the arithmetic index and the grid value.
pub fn snap_to_grid<T: RealScalar>(x: T, n: usize) -> (usize, T) {
    let raw = ((x.as_f64() + 1.0) * n as f64 / 2.0).round() as i64;
    let i = raw.rem_euclid(n as i64) as usize;
    (i, grid_value(i, n))
}

/// DFT column whose steering vector equals the grid point i (even n):
/// exp(-j pi m (2i/n - 1)) = exp(-j 2 pi m c / n) for c = (i - n/2) mod n.
pub fn grid_to_dft_col(i: usize, n: usize) -> usize {
    debug_assert!(n % 2 == 0, "grid/DFT alignment requires even n");
    (i + n - n / 2) % n
}

/// Snaps a planar-array direction onto the DFT grid while keeping the pair
/// physically realizable: x1 = cos(elevation) must stay in [0, 1) and
/// |x2| <= sqrt(1 - x1^2). Returns the two arithmetic grid indices and the
/// recovered (elevation, azimuth) that reproduce the snapped frequencies.
fn snap_upa<T: RealScalar>(
    elevation: T,
    azimuth: T,
    n1: usize,
    n2: usize,
) -> (usize, usize, T, T) {
    let x1_raw = elevation.cos();
    let lo = (n1 / 2) as i64;
    let hi = (n1 - 1) as i64;
    let raw = ((x1_raw.as_f64() + 1.0) * n1 as f64 / 2.0).round() as i64;
    let i1 = raw.clamp(lo, hi) as usize;
    let x1: T = grid_value(i1, n1);
    let bound = (T::one() - x1 * x1).sqrt();

    let x2_raw = elevation.sin() * azimuth.cos();
    let mut best: Option<(usize, T)> = None;
    for i2 in 0..n2 {
        let v: T = grid_value(i2, n2);
        if v.abs() > bound {
            continue;
        }
        let d = (x2_raw - v).abs();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i2, d));
        }
    }
    // x2 = 0 is always on the grid for even n2, so this fallback is only a
    // safety net for degenerate geometries.
    let i2 = best.map_or(n2 / 2, |(i, _)| i);
    let x2: T = grid_value(i2, n2);

    let sign = if x2 < T::zero() { -T::one() } else { T::one() };
    let elevation_snapped = sign * x1.acos();
    let azimuth_snapped = (x2.abs() / bound).acos();
    (i1, i2, elevation_snapped, azimuth_snapped)
}

// --------------------------------------------------------------- paths

/// One RIS-to-base-station path: azimuth seen at the base station plus the
/// departure direction at the planar RIS.
#[derive(Debug, Clone, Copy)]
pub struct PathG<T: RealScalar> {
    pub gain: Complex<T>,
    pub bs_azimuth: T,
    pub ris_elevation: T,
    pub ris_azimuth: T,
}

/// One user-to-RIS path: arrival direction at the planar RIS.
#[derive(Debug, Clone, Copy)]
pub struct PathH<T: RealScalar> {
    pub gain: Complex<T>,
    pub ris_elevation: T,
    pub ris_azimuth: T,
}

/// Sampling controls for one channel realization.
#[derive(Debug, Clone, Copy)]
pub struct ChannelParams<T: RealScalar> {
    /// Paths in the RIS-to-base-station link.
    pub paths_g: usize,
    /// Paths per user in the user-to-RIS links.
    pub paths_h: usize,
    /// Rician factor in dB; path 0 is the deterministic-magnitude component.
    pub rician_k_db: T,
    /// Snap every path onto the DFT grid (exactly sparse beamspace images).
    pub on_grid: bool,
}

impl<T: RealScalar> Default for ChannelParams<T> {
    fn default() -> Self {
        Self {
            paths_g: 3,
            paths_h: 3,
            rician_k_db: T::lit(13.2),
            on_grid: false,
        }
    }
}

impl<T: RealScalar> ChannelParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.paths_g == 0 || self.paths_h == 0 {
            return Err(Error::Config("path counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// A drawn channel: physical matrices, their beamspace images, and the
/// constituent paths.
#[derive(Debug, Clone)]
pub struct ChannelRealization<T: RealScalar> {
    /// M x N RIS-to-base-station link.
    pub g: CxMat<T>,
    /// N x K user-to-RIS links, one column per user.
    pub h: CxMat<T>,
    /// F1^H G F2, row-sparse support per base-station grid angle.
    pub g_beam: CxMat<T>,
    /// F2^H H, column-sparse support per user.
    pub h_beam: CxMat<T>,
    pub g_paths: Vec<PathG<T>>,
    pub h_paths: Vec<Vec<PathH<T>>>,
    pub n1: usize,
    pub n2: usize,
    pub on_grid: bool,
}

// ------------------------------------------------------------- sampling

/// Path gain under the Rician profile: index 0 carries the fixed-magnitude
/// component sqrt(kappa / (1 + kappa)) with a uniform phase, the rest are
/// complex Gaussian with the remaining power split evenly.
fn draw_gain<T: RealScalar, R: Rng + ?Sized>(
    index: usize,
    count: usize,
    kappa: T,
    rng: &mut R,
) -> Complex<T> {
    if index == 0 {
        let amp = (kappa / (T::one() + kappa)).sqrt();
        let phase = T::uniform(rng) * (T::PI() + T::PI());
        Complex::from_polar(amp, phase)
    } else {
        let var = T::one() / ((T::one() + kappa) * T::from_usize(count - 1).unwrap());
        complex_standard(rng) * var.sqrt()
    }
}

fn draw_angle<T: RealScalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    (T::uniform(rng) - T::lit(0.5)) * T::PI()
}

const MAX_SNAP_ATTEMPTS: usize = 1000;

/// Draws a full channel realization. On-grid mode resamples directions that
/// collide on the grid so each path occupies its own beamspace entry.
pub fn generate<T: RealScalar, R: Rng + ?Sized>(
    dims: &SystemDims,
    params: &ChannelParams<T>,
    rng: &mut R,
) -> Result<ChannelRealization<T>> {
    params.validate()?;
    if params.on_grid && (dims.m % 2 != 0 || dims.n1 % 2 != 0 || dims.n2 % 2 != 0) {
        return Err(Error::Config(
            "on-grid mode requires even M, N1 and N2".into(),
        ));
    }
    let kappa = T::lit(10.0).powf(params.rician_k_db / T::lit(10.0));

    let mut g_paths = Vec::with_capacity(params.paths_g);
    let mut used_g: HashSet<(usize, usize, usize)> = HashSet::new();
    for p in 0..params.paths_g {
        let gain = draw_gain(p, params.paths_g, kappa, rng);
        let mut attempts = 0;
        loop {
            let bs_azimuth = draw_angle(rng);
            let ris_elevation = draw_angle(rng);
            let ris_azimuth = draw_angle(rng);
            if !params.on_grid {
                g_paths.push(PathG {
                    gain,
                    bs_azimuth,
                    ris_elevation,
                    ris_azimuth,
                });
                break;
            }
            let (ib, xb) = snap_to_grid(bs_azimuth.sin(), dims.m);
            let (i1, i2, el, az) = snap_upa(ris_elevation, ris_azimuth, dims.n1, dims.n2);
            if used_g.insert((ib, i1, i2)) {
                g_paths.push(PathG {
                    gain,
                    bs_azimuth: xb.asin(),
                    ris_elevation: el,
                    ris_azimuth: az,
                });
                break;
            }
            attempts += 1;
            if attempts >= MAX_SNAP_ATTEMPTS {
                return Err(Error::Degenerate(
                    "could not place distinct on-grid directions for the RIS-BS link".into(),
                ));
            }
        }
    }

    let mut h_paths = Vec::with_capacity(dims.k);
    for _ in 0..dims.k {
        let mut user_paths = Vec::with_capacity(params.paths_h);
        let mut used: HashSet<(usize, usize)> = HashSet::new();
        for p in 0..params.paths_h {
            let gain = draw_gain(p, params.paths_h, kappa, rng);
            let mut attempts = 0;
            loop {
                let ris_elevation = draw_angle(rng);
                let ris_azimuth = draw_angle(rng);
                if !params.on_grid {
                    user_paths.push(PathH {
                        gain,
                        ris_elevation,
                        ris_azimuth,
                    });
                    break;
                }
                let (i1, i2, el, az) = snap_upa(ris_elevation, ris_azimuth, dims.n1, dims.n2);
                if used.insert((i1, i2)) {
                    user_paths.push(PathH {
                        gain,
                        ris_elevation: el,
                        ris_azimuth: az,
                    });
                    break;
                }
                attempts += 1;
                if attempts >= MAX_SNAP_ATTEMPTS {
                    return Err(Error::Degenerate(
                        "could not place distinct on-grid directions for a user link".into(),
                    ));
                }
            }
        }
        h_paths.push(user_paths);
    }

    let g = build_g(dims, &g_paths);
    let h = build_h(dims, &h_paths);
    let (g_beam, h_beam) = beamspace_decompose(&g, &h, dims)?;
    Ok(ChannelRealization {
        g,
        h,
        g_beam,
        h_beam,
        g_paths,
        h_paths,
        n1: dims.n1,
        n2: dims.n2,
        on_grid: params.on_grid,
    })
}

/// Assembles G = sqrt(1/(M N)) * sum_p gain_p a_bs(p) a_ris(p)^H.
pub fn build_g<T: RealScalar>(dims: &SystemDims, paths: &[PathG<T>]) -> CxMat<T> {
    let n = dims.n();
    let scale = (T::one() / T::from_usize(dims.m * n).unwrap()).sqrt();
    let mut g = Array2::zeros((dims.m, n));
    for path in paths {
        let a_bs = steering_ula(dims.m, path.bs_azimuth.sin());
        let a_ris = steering_upa(dims.n1, dims.n2, path.ris_elevation, path.ris_azimuth);
        let w = path.gain * scale;
        for i in 0..dims.m {
            for jj in 0..n {
                g[[i, jj]] += w * a_bs[i] * a_ris[jj].conj();
            }
        }
    }
    g
}

/// Assembles column k of H as sqrt(1/N) * sum_p gain_p a_ris(p).
pub fn build_h<T: RealScalar>(dims: &SystemDims, paths: &[Vec<PathH<T>>]) -> CxMat<T> {
    let n = dims.n();
    let scale = (T::one() / T::from_usize(n).unwrap()).sqrt();
    let mut h = Array2::zeros((n, paths.len()));
    for (k, user) in paths.iter().enumerate() {
        for path in user {
            let a_ris = steering_upa(dims.n1, dims.n2, path.ris_elevation, path.ris_azimuth);
            let w = path.gain * scale;
            for i in 0..n {
                h[[i, k]] += w * a_ris[i];
            }
        }
    }
    h
}

/// Beamspace images: g_beam = F1^H G F2 and h_beam = F2^H H, computed with
/// dense unitary DFT matrices (exact up to rounding).
pub fn beamspace_decompose<T: RealScalar>(
    g: &CxMat<T>,
    h: &CxMat<T>,
    dims: &SystemDims,
) -> Result<(CxMat<T>, CxMat<T>)> {
    let n = dims.n();
    if g.dim() != (dims.m, n) || h.dim() != (n, dims.k) {
        return Err(Error::Dimension(format!(
            "beamspace_decompose: G is {:?}, H is {:?}, dims want ({}, {}) and ({}, {})",
            g.dim(),
            h.dim(),
            dims.m,
            n,
            n,
            dims.k
        )));
    }
    let ops = DftOperators::new(dims.m, dims.n1, dims.n2)?;
    let f2h = dagger(&ops.f2);
    let g_beam = dagger(&ops.f1).dot(g).dot(&ops.f2);
    let h_beam = f2h.dot(h);
    Ok((g_beam, h_beam))
}

// ----------------------------------------------------------- persistence

const CHANNEL_MAGIC: &str = "ris-hmr-channel-v1";

pub(crate) fn write_matrix<T: RealScalar, W: Write>(
    w: &mut W,
    name: &str,
    mat: &CxMat<T>,
) -> Result<()> {
    writeln!(w, "{name} {} {}", mat.nrows(), mat.ncols())?;
    for r in 0..mat.nrows() {
        let mut line = String::new();
        for c in 0..mat.ncols() {
            if c > 0 {
                line.push(' ');
            }
            let z = mat[[r, c]];
            line.push_str(&format!("{} {}", z.re, z.im));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub(crate) fn read_matrix<T: RealScalar, R: BufRead>(
    lines: &mut std::io::Lines<R>,
    name: &str,
) -> Result<CxMat<T>> {
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("missing {name} header")))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != name {
        return Err(Error::Parse(format!("bad {name} header: {header}")));
    }
    let rows: usize = parts[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad row count in {name} header")))?;
    let cols: usize = parts[2]
        .parse()
        .map_err(|_| Error::Parse(format!("bad column count in {name} header")))?;
    let mut mat = Array2::zeros((rows, cols));
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("{name}: missing row {r}")))??;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 2 * cols {
            return Err(Error::Parse(format!(
                "{name} row {r}: expected {} numbers, got {}",
                2 * cols,
                vals.len()
            )));
        }
        for c in 0..cols {
            let re: f64 = vals[2 * c]
                .parse()
                .map_err(|_| Error::Parse(format!("{name} row {r}: bad float")))?;
            let im: f64 = vals[2 * c + 1]
                .parse()
                .map_err(|_| Error::Parse(format!("{name} row {r}: bad float")))?;
            mat[[r, c]] = Complex::new(T::lit(re), T::lit(im));
        }
    }
    Ok(mat)
}

/// Writes a realization as a plain-text dump (shortest round-trip floats).
/// Paths are not persisted; readers rebuild the beamspace images from G, H.
pub fn write_channel<T: RealScalar, W: Write>(
    w: &mut W,
    real: &ChannelRealization<T>,
) -> Result<()> {
    writeln!(w, "{CHANNEL_MAGIC}")?;
    writeln!(
        w,
        "dims {} {} {} {} {}",
        real.g.nrows(),
        real.h.ncols(),
        real.n1,
        real.n2,
        u8::from(real.on_grid)
    )?;
    write_matrix(w, "g", &real.g)?;
    write_matrix(w, "h", &real.h)?;
    Ok(())
}

/// Reads a dump written by [`write_channel`] and recomputes the beamspace
/// images. The path lists are empty on the way back.
pub fn read_channel<T: RealScalar, R: BufRead>(r: R) -> Result<ChannelRealization<T>> {
    let mut lines = r.lines();
    let magic = lines
        .next()
        .ok_or_else(|| Error::Parse("empty channel dump".into()))??;
    if magic.trim() != CHANNEL_MAGIC {
        return Err(Error::Parse(format!("unrecognized channel dump: {magic}")));
    }
    let dims_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing dims line".into()))??;
    let parts: Vec<&str> = dims_line.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "dims" {
        return Err(Error::Parse(format!("bad dims line: {dims_line}")));
    }
    let m: usize = parts[1].parse().map_err(|_| Error::Parse("bad M".into()))?;
    let k: usize = parts[2].parse().map_err(|_| Error::Parse("bad K".into()))?;
    let n1: usize = parts[3].parse().map_err(|_| Error::Parse("bad N1".into()))?;
    let n2: usize = parts[4].parse().map_err(|_| Error::Parse("bad N2".into()))?;
    let on_grid = match parts[5] {
        "0" => false,
        "1" => true,
        other => return Err(Error::Parse(format!("bad on_grid flag: {other}"))),
    };
    let g: CxMat<T> = read_matrix(&mut lines, "g")?;
    let h: CxMat<T> = read_matrix(&mut lines, "h")?;
    let n = n1 * n2;
    if g.dim() != (m, n) || h.dim() != (n, k) {
        return Err(Error::Parse("matrix shapes disagree with dims line".into()));
    }
    // T = K and L = N are placeholders; the decomposition only needs the
    // array geometry.
    let dims = SystemDims::new(m, k, n1, n2, n, k)?;
    let (g_beam, h_beam) = beamspace_decompose(&g, &h, &dims)?;
    Ok(ChannelRealization {
        g,
        h,
        g_beam,
        h_beam,
        g_paths: Vec::new(),
        h_paths: Vec::new(),
        n1,
        n2,
        on_grid,
    })
}

// -------------------------------------------------------------------- tests
