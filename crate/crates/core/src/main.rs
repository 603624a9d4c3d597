use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use dots::bench::{self, BenchConfig, BenchOutcome};
use dots::evalproto::serve;
use dots::{Benchmark, BenchmarkObjective, Error};

#[derive(Parser)]
#[command(name = "dots", version, about = "Stochastic tree search benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured experiment for every seed.
    Run {
        config: PathBuf,
        /// Evaluate through an external evaluator (`cmd:<program>` or `tcp:<host>:<port>`).
        #[arg(long)]
        external: Option<String>,
        /// Override the output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run full search and each single-mechanism ablation.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Convergence ratio over the history files in a directory.
    Ratio {
        dir: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        target: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Probe an external evaluator for protocol conformance.
    CheckEvaluator {
        transport: String,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
    /// Serve a benchmark function as an evaluator on stdin/stdout.
    Serve {
        objective: Benchmark,
        #[arg(long)]
        dims: usize,
    },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PROTOCOL: u8 = 3;

fn exit_for(e: &Error) -> ExitCode {
    ExitCode::from(match e {
        Error::Config { .. } => EXIT_CONFIG,
        e if e.is_protocol() => EXIT_PROTOCOL,
        _ => EXIT_FAILURE,
    })
}

fn load(config: &PathBuf, output: Option<PathBuf>) -> Result<BenchConfig, Error> {
    let mut cfg = BenchConfig::load(config)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn report(out: &BenchOutcome) -> ExitCode {
    for s in &out.summaries {
        let ratio = s.convergence_ratio.map_or("-".into(), |r| format!("{r:.2}"));
        let best = s.median_best.map_or("-".into(), |b| b.to_string());
        println!(
            "{:<20} runs {}/{}  convergence {ratio}  median best {best}",
            s.variant, s.completed, s.repeats
        );
    }
    for f in &out.failures {
        eprintln!("seed {} ({}) failed: {}", f.seed, f.variant, f.error);
    }
    println!("results in {}", out.output.display());
    if out.failures.iter().any(|f| f.protocol) {
        ExitCode::from(EXIT_PROTOCOL)
    } else if !out.failures.is_empty() {
        ExitCode::from(EXIT_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { config, external, output } => load(&config, output).and_then(|mut cfg| {
            if let Some(t) = external {
                cfg.set_external(&t)?;
            }
            bench::cmd_run(&cfg).map(|o| report(&o))
        }),
        Cmd::Ablate { config, output } => {
            load(&config, output).and_then(|cfg| bench::cmd_ablate(&cfg).map(|o| report(&o)))
        }
        Cmd::Ratio { dir, target, tol } => bench::cmd_ratio(&dir, target, tol).map(|r| {
            println!("converged {}/{}  ratio {:.2}", r.converged, r.files, r.ratio);
            ExitCode::SUCCESS
        }),
        Cmd::CheckEvaluator { transport, dims, timeout_ms } => {
            bench::cmd_check_evaluator(&transport, dims, Duration::from_millis(timeout_ms)).map(|rep| {
                for (step, fault) in &rep.steps {
                    match fault {
                        None => println!("ok    {step}"),
                        Some(msg) => println!("FAIL  {step}: {msg}"),
                    }
                }
                if rep.passed() {
                    println!("evaluator conforms");
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_PROTOCOL)
                }
            })
        }
        Cmd::Serve { objective, dims } => BenchmarkObjective::new(objective, dims).and_then(|f| {
            let stdin = io::stdin();
            serve(&f, BufReader::new(stdin.lock()), io::stdout().lock()).map(|_| ExitCode::SUCCESS)
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
