//! Flat `key = value` experiment configuration.
//!
//! The format is a plain text file of dotted keys, one assignment per line;
//! `#` starts a comment. Every key has a default, so an empty file is a
//! valid (full-size) experiment. Unknown keys are rejected by name so typos
//! surface immediately. The `RIS_HMR_SEED` environment variable, when set,
//! overrides the configured seed.

use std::env;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::channel::{ChannelParams, SystemDims};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, Termination};
use crate::evaluation::SweepConfig;
use crate::numerics::Backend;
use crate::system::PhiKind;
use crate::Real;

/// A parsed experiment: the sweep itself plus output locations.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sweep: SweepConfig<Real>,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

fn parse_num<F: FromStr>(key: &str, value: &str) -> Result<F>
where
    F::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Parse(format!("{key}: `{value}`: {e}")))
}

fn parse_list<F: FromStr>(key: &str, value: &str) -> Result<Vec<F>>
where
    F::Err: Display,
{
    let items: Result<Vec<F>> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(Error::Parse(format!("{key}: empty list")));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse(format!(
            "{key}: expected true or false, got `{other}`"
        ))),
    }
}

/// Parses configuration text. See the module docs for the format.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut m = 32usize;
    let mut k = 32usize;
    let mut n1 = 4usize;
    let mut n2 = 8usize;
    let mut t: Option<usize> = None;
    let mut channel = ChannelParams::<Real>::default();
    let mut est = EstimatorConfig::<Real>::default();
    let mut l_list = vec![16usize, 24];
    let mut snr_db_list = vec![0.0, 10.0, 20.0, 30.0];
    let mut trials = 5usize;
    let mut seed = 1u64;
    let mut phi_kind = PhiKind::PartialDft;
    let mut run_oracle = true;
    let mut csv = PathBuf::from("results.csv");
    let mut svg = PathBuf::from("nmse.svg");

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Parse(format!("line {}: expected `key = value`", idx + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "system.m" => m = parse_num(key, value)?,
            "system.k" => k = parse_num(key, value)?,
            "system.n1" => n1 = parse_num(key, value)?,
            "system.n2" => n2 = parse_num(key, value)?,
            "system.t" => t = Some(parse_num(key, value)?),
            "channel.paths_g" => channel.paths_g = parse_num(key, value)?,
            "channel.paths_h" => channel.paths_h = parse_num(key, value)?,
            "channel.rician_k_db" => channel.rician_k_db = parse_num(key, value)?,
            "channel.on_grid" => channel.on_grid = parse_bool(key, value)?,
            "estimator.zeta" => est.zeta = parse_num(key, value)?,
            "estimator.max_iters" => est.max_iters = parse_num(key, value)?,
            "estimator.damping" => est.damping = parse_num(key, value)?,
            // One knob for both precision priors; they only differ when set
            // programmatically.
            "estimator.eta" => {
                let eta: Real = parse_num(key, value)?;
                est.eta_g = eta;
                est.eta_h = eta;
            }
            "estimator.termination" => {
                est.termination = match value {
                    "self_change" => Termination::SelfChange,
                    "genie" => Termination::Genie,
                    other => {
                        return Err(Error::Parse(format!(
                            "{key}: expected self_change or genie, got `{other}`"
                        )))
                    }
                }
            }
            "estimator.backend" => {
                est.backend = match value {
                    "fft" => Backend::Fft,
                    "dense" => Backend::Dense,
                    other => {
                        return Err(Error::Parse(format!(
                            "{key}: expected fft or dense, got `{other}`"
                        )))
                    }
                }
            }
            "sweep.l_list" => l_list = parse_list(key, value)?,
            "sweep.snr_db" => snr_db_list = parse_list(key, value)?,
            "sweep.trials" => trials = parse_num(key, value)?,
            "sweep.seed" => seed = parse_num(key, value)?,
            "sweep.oracle" => run_oracle = parse_bool(key, value)?,
            "sweep.phi" => {
                phi_kind = match value {
                    "partial_dft" => PhiKind::PartialDft,
                    "random_phase" => PhiKind::RandomPhase,
                    "bernoulli" => PhiKind::Bernoulli,
                    other => {
                        return Err(Error::Parse(format!(
                            "{key}: expected partial_dft, random_phase, or bernoulli, \
                             got `{other}`"
                        )))
                    }
                }
            }
            "output.csv" => csv = PathBuf::from(value),
            "output.svg" => svg = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
    }

    let t = t.unwrap_or(k);
    for &l in &l_list {
        SystemDims::new(m, k, n1, n2, l, t)?;
    }
    let sweep = SweepConfig {
        m,
        k,
        n1,
        n2,
        t,
        l_list,
        snr_db_list,
        trials,
        master_seed: seed,
        channel,
        phi_kind,
        estimator: est,
        run_oracle,
    };
    sweep.validate()?;
    Ok(ExperimentConfig { sweep, csv, svg })
}

/// Reads a config file and applies the `RIS_HMR_SEED` override if present.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    if let Ok(s) = env::var("RIS_HMR_SEED") {
        cfg.sweep.master_seed = s.trim().parse().map_err(|_| {
            Error::Config(format!("RIS_HMR_SEED must be an unsigned integer, got `{s}`"))
        })?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.sweep.m, 32);
        assert_eq!(cfg.sweep.k, 32);
        assert_eq!(cfg.sweep.t, 32, "pilot length defaults to user count");
        assert_eq!(cfg.sweep.l_list, vec![16, 24]);
        assert_eq!(cfg.sweep.snr_db_list, vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(cfg.sweep.trials, 5);
        assert_eq!(cfg.sweep.master_seed, 1);
        assert!(cfg.sweep.run_oracle);
        assert_eq!(cfg.csv, PathBuf::from("results.csv"));
        assert_eq!(cfg.svg, PathBuf::from("nmse.svg"));
    }

    #[test]
    fn keys_comments_and_lists_parse() {
        let text = "\
# comment line
system.m = 8
system.k = 2        # trailing comment
system.n1 = 2
system.n2 = 4
sweep.l_list = 4, 8
sweep.snr_db = 20
channel.on_grid = true
estimator.termination = genie
estimator.backend = dense
sweep.phi = bernoulli
output.csv = out/run.csv
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.sweep.m, 8);
        assert_eq!(cfg.sweep.t, 2, "follows system.k when unset");
        assert_eq!(cfg.sweep.l_list, vec![4, 8]);
        assert_eq!(cfg.sweep.snr_db_list, vec![20.0]);
        assert!(cfg.sweep.channel.on_grid);
        assert!(matches!(cfg.sweep.estimator.termination, Termination::Genie));
        assert!(matches!(cfg.sweep.estimator.backend, Backend::Dense));
        assert!(matches!(cfg.sweep.phi_kind, PhiKind::Bernoulli));
        assert_eq!(cfg.csv, PathBuf::from("out/run.csv"));
    }

    #[test]
    fn unknown_key_is_named_in_error() {
        let err = parse_config("system.mm = 8\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("system.mm"), "got: {msg}");
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_config("just words\n").is_err());
        assert!(parse_config("system.m = eight\n").is_err());
        assert!(parse_config("channel.on_grid = yes\n").is_err());
        assert!(parse_config("estimator.termination = magic\n").is_err());
        assert!(parse_config("sweep.l_list = ,\n").is_err());
    }

    #[test]
    fn dimension_constraints_are_checked_at_parse_time() {
        // Pilot length shorter than the user count is unusable.
        let err = parse_config("system.k = 8\nsystem.t = 4\n").unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        // More measurement blocks than RIS elements is unsupported.
        let err = parse_config("sweep.l_list = 64\n").unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn env_seed_overrides_file() {
        // Serialize env mutation against other tests in this binary.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        fs::write(&path, "sweep.seed = 7\n").unwrap();
        env::set_var("RIS_HMR_SEED", "99");
        let cfg = load_config(&path).unwrap();
        env::remove_var("RIS_HMR_SEED");
        assert_eq!(cfg.sweep.master_seed, 99);
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.sweep.master_seed, 7);
    }
}
