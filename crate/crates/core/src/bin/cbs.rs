use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cbs_core::scenario::{self, RunReport};
use cbs_core::Result;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cbs", version, about = "Convolutional-beamspace receiver experiments")]
struct Cli {
    /// Master seed; overrides the seed in a scenario config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a near-field filter from a band spec.
    DesignFilter { spec: PathBuf },
    /// Run a scenario config.
    Run { config: PathBuf },
    /// Write per-family `x y` curves from a run report.
    Export { report: PathBuf, tag: String },
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::DesignFilter { spec } => {
            let start = Instant::now();
            let (report, out) = scenario::run_filter_design(spec, &cli.out_dir)?;
            let e = &report.verify;
            println!(
                "designed L={} for N={} in {} SCA iterations ({:.1} s)",
                report.filter_len,
                report.n_elements,
                report.sca.iterations,
                start.elapsed().as_secs_f64()
            );
            println!(
                "verify grid ({} points): passband [{:.4}, {:.4}], transition max {:.4}, stopband max {:.3e}, gap {:.1} dB, violations {}",
                report.verify_points,
                e.passband_min,
                e.passband_max,
                e.transition_max,
                e.stopband_max,
                report.gap_db,
                report.violations
            );
            println!("wrote {}", out.filter.display());
        }
        Command::Run { config } => {
            let start = Instant::now();
            let (report, csv, json) = scenario::run_config_file(config, cli.seed, &cli.out_dir)?;
            summarize(&report);
            println!(
                "{} rows in {:.1} s -> {}, {}",
                report.rows.len(),
                start.elapsed().as_secs_f64(),
                csv.display(),
                json.display()
            );
        }
        Command::Export { report, tag } => {
            let report = RunReport::load(report)?;
            for path in scenario::export(&report, tag, &cli.out_dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn summarize(report: &RunReport) {
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let failures = report.failures().count();
    if failures > 0 {
        eprintln!("{failures} receiver evaluation(s) failed; see the status column");
    }
    for c in &report.curves {
        if let Some(rate) = c.mean_sum_rate {
            println!("{:<20} {:>7.2} dB  sum rate {:>9.3}", c.family.as_str(), c.snr_db, rate);
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { scenario::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(scenario::EXIT_CONFIG as u8);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(scenario::exit_code(&e) as u8)
        }
    }
}
