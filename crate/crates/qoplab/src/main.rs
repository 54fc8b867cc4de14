//! `qoplab` — drive spectral experiments on model magnetic Laplacians.
//!
//! Usage: `qoplab <experiment> [flags]`, experiments `dim | gap | rate |
//! profile | gaussian | heat | invariants`.  Settings come from an
//! optional flat `key = value` config file with CLI flags taking
//! precedence.  Results land in the output directory as one CSV per
//! experiment, a JSON run report, and (on request) SVG plots.

use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;

use qoplab::config::{build_config, parse_config_file, ExperimentKind, RawSettings};
use qoplab::run_experiment;

#[derive(Parser)]
#[command(name = "qoplab")]
#[command(about = "Spectral experiments on lattice magnetic Laplacians")]
struct Cli {
    /// Experiment: dim | gap | rate | profile | gaussian | heat | invariants
    experiment: String,

    /// Flat key = value configuration file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,

    /// Comma-separated flux values, e.g. 8,16,32
    #[arg(long)]
    p: Option<String>,

    /// Model: flat-torus-2 | flat-torus-4 | conformal-torus-2
    #[arg(long)]
    model: Option<String>,

    /// Grid: auto | <N>   (auto = max(16, 8⌈√p⌉))
    #[arg(long)]
    grid: Option<String>,

    /// Potential preset: zero | cosine:<amp>
    #[arg(long)]
    phi: Option<String>,

    /// Conformal factor preset: one | cosine:<amp>
    #[arg(long)]
    lambda: Option<String>,

    /// Output directory (default: out)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Eigendecomposition cache directory
    #[arg(long)]
    cache: Option<PathBuf>,

    /// Disable the cache even if the config file sets one
    #[arg(long)]
    no_cache: bool,

    /// Emit SVG plots alongside the CSV
    #[arg(long)]
    plot: bool,
}

fn fail_config(msg: &str) -> ExitCode {
    eprintln!("qoplab: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let experiment = match ExperimentKind::parse(&cli.experiment) {
        Ok(e) => e,
        Err(msg) => return fail_config(&msg),
    };

    let file_settings = match &cli.config {
        None => RawSettings::default(),
        Some(path) => match parse_config_file(path) {
            Ok(s) => s,
            Err(msg) => return fail_config(&msg),
        },
    };
    let mut flag_settings = RawSettings::default();
    if let Some(v) = &cli.p {
        flag_settings.set("p", v.clone());
    }
    if let Some(v) = &cli.model {
        flag_settings.set("model", v.clone());
    }
    if let Some(v) = &cli.grid {
        flag_settings.set("grid", v.clone());
    }
    if let Some(v) = &cli.phi {
        flag_settings.set("phi", v.clone());
    }
    if let Some(v) = &cli.lambda {
        flag_settings.set("lambda", v.clone());
    }
    if let Some(v) = &cli.out {
        flag_settings.set("out", v.display().to_string());
    }
    if let Some(v) = &cli.cache {
        flag_settings.set("cache", v.display().to_string());
    }
    if cli.plot {
        flag_settings.set("plot", "true".to_string());
    }

    let mut settings = file_settings.merged_with(&flag_settings);
    if cli.no_cache {
        settings.map.remove("cache");
    }

    let cfg = match build_config(experiment, &settings) {
        Ok(c) => c,
        Err(msg) => return fail_config(&msg),
    };

    if let Err(e) = std::fs::create_dir_all(&cfg.out_dir) {
        return fail_config(&format!(
            "cannot create output directory {}: {e}",
            cfg.out_dir.display()
        ));
    }

    let outcome = match run_experiment(&cfg) {
        Ok(o) => o,
        Err(msg) => return fail_config(&msg),
    };

    let csv_path = cfg.out_dir.join(&outcome.csv_name);
    if let Err(e) = std::fs::write(&csv_path, &outcome.csv) {
        return fail_config(&format!("cannot write {}: {e}", csv_path.display()));
    }
    let report_path = cfg
        .out_dir
        .join(format!("report_{}.json", cfg.experiment.name()));
    if let Err(e) = std::fs::write(&report_path, outcome.report.to_json()) {
        return fail_config(&format!("cannot write {}: {e}", report_path.display()));
    }
    for (name, svg) in &outcome.plots {
        let path = cfg.out_dir.join(name);
        if let Err(e) = std::fs::write(&path, svg) {
            return fail_config(&format!("cannot write {}: {e}", path.display()));
        }
    }

    println!(
        "{}: {} flux value(s), wall clock {:.2}s, wrote {}",
        cfg.experiment.name(),
        outcome.report.records.len(),
        outcome.report.wall_clock_seconds,
        csv_path.display()
    );
    for slope in &outcome.report.slopes {
        println!(
            "  {}: slope {:.4} (r^2 {:.4})",
            slope.label, slope.slope, slope.r_squared
        );
    }
    if outcome.report.passed {
        println!("  all assertions passed");
        ExitCode::SUCCESS
    } else {
        for f in &outcome.report.failures {
            eprintln!("  FAILED: {f}");
        }
        ExitCode::from(1)
    }
}
