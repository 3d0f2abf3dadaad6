//! Command-line front end: run walkthroughs, fuzz the network, replay logs.
//!
//! Exit codes: 0 on success, 1 when a run or log fails its checks
//! (divergence, causal gaps, oracle mismatch, unreadable logs), 2 for
//! usage errors such as unknown scenarios or zero-sized runs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use forelist_core::log::{read_log, write_log};
use forelist_core::{
    canonical_json, check_convergence, run_fuzz, scenario, FuzzConfig, FuzzKind, FuzzReport,
    History,
};

#[derive(Parser)]
#[command(
    name = "forelist",
    version,
    about = "Replicated lists with buffered for-each"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    RichChar,
    Ingredient,
    Vec2,
    Object,
}

impl From<KindArg> for FuzzKind {
    fn from(k: KindArg) -> FuzzKind {
        match k {
            KindArg::RichChar => FuzzKind::RichChar,
            KindArg::Ingredient => FuzzKind::Ingredient,
            KindArg::Vec2 => FuzzKind::Vec2,
            KindArg::Object => FuzzKind::Object,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// List the available walkthroughs.
    Scenarios,
    /// Run a named walkthrough and print its outcome.
    Simulate {
        /// Walkthrough name; see `scenarios`.
        #[arg(long)]
        scenario: String,
        /// Print the labeled snapshots as canonical JSON instead of text.
        #[arg(long)]
        json: bool,
        /// Write the walkthrough's message log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Drive one randomized multi-replica run with every check enabled.
    Fuzz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        ops: usize,
        #[arg(long, default_value_t = 4)]
        replicas: usize,
        /// Oracle replay schedules checked at quiescence.
        #[arg(long, default_value_t = 10)]
        schedules: usize,
        /// Generate point operations only.
        #[arg(long)]
        no_foreach: bool,
        /// Element kind; drawn from the seed when omitted.
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
        /// Break the insertion effector's buffered replay on every
        /// replica to demonstrate the resulting divergence.
        #[arg(long)]
        inject_skip_buffer_replay: bool,
        /// Write the run's message log (or a failure's shrunken log).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Replay a JSON-lines message log and print the converged snapshot.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 8)]
        schedules: usize,
        /// Seed for the shuffled replay schedules.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Scenarios => {
            for name in scenario::NAMES {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Simulate {
            scenario: name,
            json,
            log,
        } => simulate(&name, json, log),
        Command::Fuzz {
            seed,
            ops,
            replicas,
            schedules,
            no_foreach,
            kind,
            inject_skip_buffer_replay,
            log,
        } => {
            if replicas == 0 || ops == 0 {
                eprintln!("fuzz needs at least one replica and one operation");
                return ExitCode::from(2);
            }
            let config = FuzzConfig {
                seed,
                replicas,
                ops,
                schedules,
                foreach: !no_foreach,
                kind: kind.map(FuzzKind::from),
                inject_skip_buffer_replay,
            };
            fuzz(&config, log)
        }
        Command::Replay {
            log,
            schedules,
            seed,
        } => replay(&log, schedules, seed),
    }
}

fn simulate(name: &str, json: bool, log: Option<PathBuf>) -> ExitCode {
    let Some(s) = scenario::by_name(name) else {
        eprintln!(
            "unknown scenario '{name}'; available: {}",
            scenario::NAMES.join(", ")
        );
        return ExitCode::from(2);
    };
    if json {
        println!("{}", canonical_json(&s.snapshots));
    } else {
        println!("{}: {}", s.name, s.blurb);
        println!();
        print!("{}", s.rendering);
        println!();
        for note in &s.notes {
            println!("- {note}");
        }
    }
    if let Some(path) = log {
        if let Err(e) = write_log(&path, &s.log) {
            eprintln!("cannot write log to {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
        eprintln!("wrote {} envelopes to {}", s.log.len(), path.display());
    }
    ExitCode::SUCCESS
}

fn print_report(report: &FuzzReport, injected: bool) {
    println!("seed        {}", report.seed);
    println!("kind        {}", report.kind);
    println!("envelopes   {}", report.envelopes);
    println!("foreaches   {}", report.foreaches);
    println!("evals       {}", report.evals_audited);
    println!("gap-probes  {}", report.gap_probes);
    println!("dup-probes  {}", report.duplicate_probes);
    println!("schedules   {}", report.schedules_checked);
    println!("elements    {}", report.final_elements);
    if injected {
        println!(
            "fault       {}",
            if report.fault_observed {
                "observed"
            } else {
                "not observed"
            }
        );
    }
}

fn fuzz(config: &FuzzConfig, log: Option<PathBuf>) -> ExitCode {
    match run_fuzz(config) {
        Ok(report) => {
            print_report(&report, config.inject_skip_buffer_replay);
            if let Some(path) = log {
                if let Err(e) = write_log(&path, &report.log) {
                    eprintln!("cannot write log to {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
                eprintln!("wrote {} envelopes to {}", report.log.len(), path.display());
            }
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("{failure}");
            if let Some(path) = log {
                match write_log(&path, &failure.log) {
                    Ok(()) => eprintln!(
                        "wrote the reproducing log ({} envelopes) to {}",
                        failure.log.len(),
                        path.display()
                    ),
                    Err(e) => eprintln!("cannot write log to {}: {e}", path.display()),
                }
            }
            ExitCode::FAILURE
        }
    }
}

fn replay(path: &PathBuf, schedules: usize, seed: u64) -> ExitCode {
    let envelopes = match read_log(path) {
        Ok(envelopes) => envelopes,
        Err(e) => {
            eprintln!("cannot read log {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    };
    let history = match History::new(envelopes) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("log is not a causal history: {e}");
            return ExitCode::FAILURE;
        }
    };
    match check_convergence(&history, schedules, seed) {
        Ok(convergence) => {
            eprintln!(
                "replayed {} envelopes over {} schedules",
                history.canonical_order().count(),
                schedules.max(1)
            );
            println!("{}", canonical_json(&convergence.oracle));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("replay failed: {e}");
            ExitCode::FAILURE
        }
    }
}
