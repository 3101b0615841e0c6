//! Command-line driver.
//!
//! `sweep` runs a Monte-Carlo grid over (SNR, measurement blocks) and writes
//! per-trial CSV, aggregated CSV, and two SVG charts (error vs SNR, error vs
//! block count at the highest SNR). `single` runs one fully traced instance
//! at the first configured operating point.

pub mod config;
pub mod svg;

use std::fs;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimator::Termination;
use crate::evaluation::{
    derive_seed, quantile, run_single, run_sweep, write_aggregates_csv, write_trace_csv,
    write_trials_csv, EstimatorKind, TrialResult,
};
use crate::Real;
use config::load_config;
use svg::{render_line_chart, Curve};

/// Beamspace channel estimation simulator for a RIS-aided multi-user uplink.
#[derive(Debug, Parser)]
#[command(name = "ris-hmr", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured Monte-Carlo sweep and write CSV/SVG reports.
    Sweep {
        /// Experiment description (flat `key = value` file).
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: all cores). Results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
        /// Exit with an error if any trial diverged.
        #[arg(long)]
        strict: bool,
    },
    /// Run one instance at the first configured (L, SNR) point.
    Single {
        /// Experiment description (flat `key = value` file).
        #[arg(long)]
        config: PathBuf,
        /// Write the per-iteration error trace next to the configured CSV.
        #[arg(long)]
        dump_trace: bool,
        /// Stop on true-error threshold instead of self-change.
        #[arg(long)]
        genie: bool,
    },
}

/// Parses `std::env::args` and dispatches. Returns any pipeline error to the
/// binary wrapper for exit-code handling.
pub fn run() -> Result<()> {
    dispatch(Cli::parse())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep {
            config,
            jobs,
            strict,
        } => cmd_sweep(&config, jobs, strict),
        Command::Single {
            config,
            dump_trace,
            genie,
        } => cmd_single(&config, dump_trace, genie),
    }
}

/// `results.csv` + `_agg` -> `results_agg.csv`; extension is preserved.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn create_output(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(File::create(path)?)
}

/// Median over trials of the per-trial average of the two channel errors.
fn median_combined(
    trials: &[TrialResult<Real>],
    kind: EstimatorKind,
    l: usize,
    snr_db: Real,
) -> Option<f64> {
    let mut vals: Vec<f64> = trials
        .iter()
        .filter(|t| t.estimator == kind && t.l == l && t.snr_db == snr_db)
        .map(|t| 0.5 * (t.nmse_g_db + t.nmse_h_db))
        .collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(quantile(&vals, 0.5))
}

fn estimator_kinds(run_oracle: bool) -> Vec<EstimatorKind> {
    if run_oracle {
        vec![EstimatorKind::Proposed, EstimatorKind::OracleLs]
    } else {
        vec![EstimatorKind::Proposed]
    }
}

fn cmd_sweep(config_path: &Path, jobs: Option<usize>, strict: bool) -> Result<()> {
    let cfg = load_config(config_path)?;
    let sweep = &cfg.sweep;
    let out = run_sweep(sweep, jobs)?;

    let agg_path = with_suffix(&cfg.csv, "_agg");
    write_trials_csv(&mut create_output(&cfg.csv)?, &out.trials)?;
    write_aggregates_csv(&mut create_output(&agg_path)?, &out.aggregates)?;

    // Error vs SNR, one curve per (estimator, L).
    let mut snr_curves = Vec::new();
    for kind in estimator_kinds(sweep.run_oracle) {
        for &l in &sweep.l_list {
            let points: Vec<(f64, f64)> = sweep
                .snr_db_list
                .iter()
                .filter_map(|&s| median_combined(&out.trials, kind, l, s).map(|y| (s, y)))
                .collect();
            snr_curves.push(Curve {
                label: format!("{} L={l}", kind.as_str()),
                points,
            });
        }
    }
    let snr_svg = with_suffix(&cfg.svg, "_snr");
    fs::write(
        &snr_svg,
        render_line_chart(
            "Estimation error vs SNR",
            "SNR (dB)",
            "median NMSE (dB)",
            &snr_curves,
        ),
    )?;

    // Error vs block count at the highest SNR, one curve per estimator.
    let snr_max = sweep
        .snr_db_list
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut l_curves = Vec::new();
    for kind in estimator_kinds(sweep.run_oracle) {
        let points: Vec<(f64, f64)> = sweep
            .l_list
            .iter()
            .filter_map(|&l| {
                median_combined(&out.trials, kind, l, snr_max).map(|y| (l as f64, y))
            })
            .collect();
        l_curves.push(Curve {
            label: kind.as_str().into(),
            points,
        });
    }
    let l_svg = with_suffix(&cfg.svg, "_l");
    fs::write(
        &l_svg,
        render_line_chart(
            &format!("Estimation error vs measurement blocks (SNR {snr_max} dB)"),
            "measurement blocks L",
            "median NMSE (dB)",
            &l_curves,
        ),
    )?;

    for row in &out.aggregates {
        println!(
            "{:<9} L={:<3} SNR={:>5.1} dB  G median {:>8.2} dB  H median {:>8.2} dB  \
             ({}/{} converged)",
            row.estimator.as_str(),
            row.l,
            row.snr_db,
            row.g_median,
            row.h_median,
            row.converged_trials,
            row.trials
        );
    }
    println!(
        "wrote {}, {}, {}, {}",
        cfg.csv.display(),
        agg_path.display(),
        snr_svg.display(),
        l_svg.display()
    );

    if strict {
        let diverged = out.trials.iter().filter(|t| t.diverged).count();
        if diverged > 0 {
            return Err(Error::Degenerate(format!(
                "strict mode: {diverged} trial(s) diverged"
            )));
        }
    }
    Ok(())
}

fn cmd_single(config_path: &Path, dump_trace: bool, genie: bool) -> Result<()> {
    let mut cfg = load_config(config_path)?;
    if genie {
        cfg.sweep.estimator.termination = Termination::Genie;
    }
    let l = cfg.sweep.l_list[0];
    let snr_db = cfg.sweep.snr_db_list[0];
    let seed = derive_seed(cfg.sweep.master_seed, 0);
    let out = run_single(&cfg.sweep, l, snr_db, seed)?;

    println!("L={l}  SNR={snr_db} dB  seed={seed:#018x}");
    println!("NMSE G: {:.2} dB", out.nmse_g_db);
    println!("NMSE H: {:.2} dB", out.nmse_h_db);
    let status = if out.diverged {
        "diverged"
    } else if out.converged {
        "converged"
    } else {
        "hit max iterations"
    };
    println!("iterations: {} ({status})", out.iterations);
    println!("noise precision estimate: {:.4e}", out.noise_precision_hat);
    println!("runtime: {:.1} ms", out.runtime_ms);

    if dump_trace {
        let path = with_suffix(&cfg.csv, "_trace");
        write_trace_csv(&mut create_output(&path)?, &out.trace)?;
        println!("wrote {}", path.display());
    }
    if out.diverged {
        return Err(Error::Degenerate("estimator diverged".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from([
            "ris-hmr", "sweep", "--config", "x.cfg", "--jobs", "2", "--strict",
        ])
        .unwrap();
        match cli.command {
            Command::Sweep {
                config,
                jobs,
                strict,
            } => {
                assert_eq!(config, PathBuf::from("x.cfg"));
                assert_eq!(jobs, Some(2));
                assert!(strict);
            }
            _ => panic!("expected sweep"),
        }
        let cli =
            Cli::try_parse_from(["ris-hmr", "single", "--config", "x.cfg", "--dump-trace"])
                .unwrap();
        assert!(matches!(
            cli.command,
            Command::Single {
                dump_trace: true,
                genie: false,
                ..
            }
        ));
        assert!(Cli::try_parse_from(["ris-hmr", "sweep"]).is_err(), "config is required");
    }

    #[test]
    fn suffix_insertion_preserves_extension() {
        assert_eq!(
            with_suffix(Path::new("out/results.csv"), "_agg"),
            PathBuf::from("out/results_agg.csv")
        );
        assert_eq!(with_suffix(Path::new("plot"), "_snr"), PathBuf::from("plot_snr"));
    }

    fn tiny_config_text() -> &'static str {
        "system.m = 8\nsystem.k = 2\nsystem.n1 = 2\nsystem.n2 = 4\n\
         channel.paths_g = 2\nchannel.paths_h = 1\nchannel.on_grid = true\n\
         sweep.l_list = 8\nsweep.snr_db = 10, 20\nsweep.trials = 2\n\
         estimator.max_iters = 10\n"
    }

    #[test]
    fn sweep_command_writes_all_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("exp.cfg");
        let csv = dir.path().join("res.csv");
        let svg = dir.path().join("plot.svg");
        fs::write(
            &cfg_path,
            format!(
                "{}output.csv = {}\noutput.svg = {}\n",
                tiny_config_text(),
                csv.display(),
                svg.display()
            ),
        )
        .unwrap();
        cmd_sweep(&cfg_path, Some(2), true).unwrap();

        let trials = fs::read_to_string(&csv).unwrap();
        assert!(trials.starts_with(
            "estimator,snr_db,L,trial,nmse_G_db,nmse_H_db,iterations,runtime_ms,converged"
        ));
        assert_eq!(trials.lines().count(), 1 + 2 * 2 * 2, "snr x trials x methods");
        let agg = fs::read_to_string(dir.path().join("res_agg.csv")).unwrap();
        assert_eq!(agg.lines().count(), 1 + 4);
        let snr_svg = fs::read_to_string(dir.path().join("plot_snr.svg")).unwrap();
        assert!(snr_svg.contains("<polyline"));
        assert!(snr_svg.contains("oracle_ls L=8"));
        let l_svg = fs::read_to_string(dir.path().join("plot_l.svg")).unwrap();
        assert!(l_svg.contains("<circle"));
    }

    #[test]
    fn single_command_reports_and_dumps_trace() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("exp.cfg");
        let csv = dir.path().join("one.csv");
        fs::write(
            &cfg_path,
            format!("{}output.csv = {}\n", tiny_config_text(), csv.display()),
        )
        .unwrap();
        cmd_single(&cfg_path, true, true).unwrap();
        let trace = fs::read_to_string(dir.path().join("one_trace.csv")).unwrap();
        assert!(trace.starts_with("iteration,nmse_G_db,nmse_H_db,noise_precision"));
        assert!(trace.lines().count() > 1, "at least one iteration traced");
    }
}
