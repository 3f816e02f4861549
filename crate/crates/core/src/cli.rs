//! `slp` command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::ScenarioConfig;
use crate::error::{Result, SlpError};
use crate::harness::{run_accuracy, run_power_sweep, run_ser, run_timing, ACCURACY_SINR_DB};
use crate::output::{render, write_atomic, Format, Tabular};
use crate::verify::run_verify;

#[derive(Debug, Parser)]
#[command(name = "slp", version, about = "Symbol-level precoding experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean transmit power vs. SINR threshold for each scheme.
    PowerSweep(Common),
    /// Accuracy of the sign-based inactive-set presumption.
    Accuracy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = ACCURACY_SINR_DB)]
        sinr_db: f64,
    },
    /// Per-slot execution time of each scheme.
    Timing(Common),
    /// Symbol error rate per SINR threshold with receive noise.
    Ser {
        #[command(flatten)]
        common: Common,
        /// Receive noise std as a multiple of sigma_k (0 disables noise).
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
    },
    /// Check optimality certificates and precoder invariants.
    Verify(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario config (JSON object).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutFormat::Csv)]
    pub format: OutFormat,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutFormat {
    Csv,
    Json,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }
    }
}

/// Config file merged with overrides, validated.
pub fn load_config(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| SlpError::Config {
                key: "--config".into(),
                msg: format!("cannot read {}: {e}", p.display()),
            })?;
            ScenarioConfig::from_json_str(&text)?
        }
        None => ScenarioConfig::default(),
    };
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn meta_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn emit<T: Tabular>(
    command: &str,
    common: &Common,
    cfg: &ScenarioConfig,
    rows: &[T],
    extra: serde_json::Value,
) -> Result<()> {
    let body = render(rows, common.format.into())?;
    let meta = json!({
        "command": command,
        "config": cfg,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "overrides": common.overrides,
        "results": extra,
    });
    match &common.out {
        Some(p) => {
            write_atomic(p, &body)?;
            write_atomic(&meta_path(p), &(serde_json::to_string_pretty(&meta).expect("meta") + "\n"))?;
        }
        None => print!("{body}"),
    }
    eprintln!("# {command}: config_hash={} seed={}", cfg.hash(), cfg.seed);
    Ok(())
}

enum Failure {
    Usage(SlpError),
    Runtime(SlpError),
    Checks,
}

fn classify(e: SlpError) -> Failure {
    match e {
        SlpError::Config { .. } => Failure::Usage(e),
        other => Failure::Runtime(other),
    }
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::PowerSweep(common) => {
            let cfg = load_config(&common).map_err(Failure::Usage)?;
            let rows = run_power_sweep(&cfg).map_err(classify)?;
            for r in &rows {
                eprintln!(
                    "{:>8} {:>2}x{:<2} M={:<2} {:>6.2} dB  {:>9.4} dBW  (per-slot {:>8.4} dB){}",
                    r.scheme.as_str(),
                    r.k,
                    r.n,
                    r.m,
                    r.sinr_db,
                    r.mean_power_dbw,
                    r.mean_slot_power_db,
                    r.accuracy_mean.map(|a| format!("  acc={a:.4}")).unwrap_or_default()
                );
            }
            let extra = json!({
                "accuracy_mean": rows.iter().filter_map(|r| r.accuracy_mean.map(|a| json!({"sinr_db": r.sinr_db, "accuracy": a}))).collect::<Vec<_>>(),
                "mean_slot_power_db": rows.iter().map(|r| json!({"scheme": r.scheme, "sinr_db": r.sinr_db, "value": r.mean_slot_power_db})).collect::<Vec<_>>(),
                "flagged": rows.iter().map(|r| r.flagged).sum::<usize>(),
            });
            emit("power-sweep", &common, &cfg, &rows, extra).map_err(Failure::Runtime)
        }
        Command::Accuracy { common, sinr_db } => {
            let cfg = load_config(&common).map_err(Failure::Usage)?;
            let rec = run_accuracy(&cfg, sinr_db).map_err(classify)?;
            eprintln!("accuracy {}x{} M={} at {} dB: {:.4}", rec.k, rec.n, rec.m, rec.sinr_db, rec.accuracy_mean);
            emit("accuracy", &common, &cfg, &[rec], json!({})).map_err(Failure::Runtime)
        }
        Command::Timing(common) => {
            let cfg = load_config(&common).map_err(Failure::Usage)?;
            let rep = run_timing(&cfg).map_err(classify)?;
            for r in &rep.records {
                eprintln!("{:>8} median {:.6} ms/slot (batch {})", r.scheme.as_str(), r.median_ms_per_slot, r.batch);
            }
            if let Some(x) = rep.opt_over_cf {
                eprintln!("OPT/CF median ratio: {x:.2}");
            }
            let extra = json!({"opt_over_cf": rep.opt_over_cf, "cf_over_zf": rep.cf_over_zf});
            emit("timing", &common, &cfg, &rep.records, extra).map_err(Failure::Runtime)
        }
        Command::Ser { common, noise_scale } => {
            let cfg = load_config(&common).map_err(Failure::Usage)?;
            if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
                return Err(Failure::Usage(SlpError::Config {
                    key: "--noise-scale".into(),
                    msg: "must be a finite non-negative number".into(),
                }));
            }
            let rows = run_ser(&cfg, noise_scale).map_err(classify)?;
            for r in &rows {
                eprintln!("{:>8} {:>6.2} dB  SER {:.3e} ± {:.1e}", r.scheme.as_str(), r.sinr_db, r.ser, r.std_err);
            }
            emit("ser", &common, &cfg, &rows, json!({})).map_err(Failure::Runtime)
        }
        Command::Verify(common) => {
            let cfg = load_config(&common).map_err(Failure::Usage)?;
            let checks = run_verify(&cfg).map_err(classify)?;
            for c in &checks {
                println!(
                    "{} {} ({} checked, {} failures, worst {:.3e})",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.name,
                    c.checked,
                    c.failures,
                    c.worst
                );
            }
            if common.out.is_some() {
                emit("verify", &common, &cfg, &checks, json!({})).map_err(Failure::Runtime)?;
            }
            if checks.iter().all(|c| c.passed()) {
                Ok(())
            } else {
                Err(Failure::Checks)
            }
        }
    }
}

/// Parses `argv` (program name first) and runs the command.
///
/// Exit codes: 0 success, 1 runtime failure or failed checks, 2 usage or config error.
pub fn parse_and_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Checks) => 1,
    }
}
