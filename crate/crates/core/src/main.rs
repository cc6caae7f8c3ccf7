use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stefan_etc::harness::{self, RunSummary};

#[derive(Parser)]
#[command(name = "stefan-etc", version, about = "Event-triggered safe boundary control of the one-phase Stefan problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the event-triggered controller on a scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the continuous-time comparator (U recomputed every step).
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a parameter grid such as "delta2=0.3,0.7;c1=3.2e-3".
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-check a stored run directory.
    Audit {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn print_summary(s: &RunSummary) {
    println!("events        {}", s.event_count);
    println!("steps         {}", s.steps);
    println!("t_end         {}", s.t_end);
    println!("final s       {} (|s - s_r| = {:e})", s.final_s, s.final_s_error);
    println!(
        "min gap       {} (tau = {})",
        s.min_gap.map_or("-".to_string(), |g| g.to_string()),
        s.tau
    );
    println!("min h1/h2/h3  {:e} / {:e} / {:e}", s.min_h1, s.min_h2, s.min_h3);
    println!("min T - T_m   {:e}", s.min_h);
    println!("Phi ratio     {:e}", s.phi_ratio);
    println!("wall time     {:.2} s", s.wall_time);
}

fn run() -> Result<bool, Box<dyn std::error::Error>> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let s = harness::run_scenario(&config, &out)?;
            print_summary(&s);
            Ok(s.safe_set_passed && s.zeno_passed)
        }
        Command::Baseline { config, out } => {
            let s = harness::run_baseline_continuous(&config, &out)?;
            print_summary(&s);
            Ok(s.safe_set_passed)
        }
        Command::Sweep { config, grid, out, jobs } => {
            let rows = harness::sweep(&config, &grid, &out, jobs)?;
            for r in &rows {
                let detail = if r.status == "ok" {
                    format!(
                        "events {} safe {} dwell {}",
                        r.event_count.unwrap_or(0),
                        r.safe_set_passed.unwrap_or(false),
                        r.zeno_passed.unwrap_or(false)
                    )
                } else {
                    r.error.clone()
                };
                println!("{} [{}] {}: {}", r.run, r.overrides, r.status, detail);
            }
            Ok(rows.iter().all(|r| r.status == "ok"))
        }
        Command::Audit { trace } => {
            let report = harness::audit(&trace)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
