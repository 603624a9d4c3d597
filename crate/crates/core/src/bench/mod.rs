//! Experiment harness behind the `dots` command line.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

pub use config::{BenchConfig, ObjectiveSpec};

use crate::driver::{self, ratio_of, Ablations, RunHistory, HISTORY_HEADER};
use crate::error::{Error, Result};
use crate::evalproto::{check_evaluator, CheckReport, Transport};
use crate::space::ConstraintSet;

pub const SUMMARY_HEADER: &str =
    "objective,dims,scenario,variant,repeats,completed,convergence_ratio,median_best,median_evals_to_converge";

/// The five variants compared by `ablate`, in table order.
pub fn ablation_variants() -> [(&'static str, Ablations); 5] {
    let off = Ablations::default();
    [
        ("full", off),
        ("no-top-visit", Ablations { no_top_visit: true, ..off }),
        ("no-local-backprop", Ablations { no_local_backprop: true, ..off }),
        ("no-adaptive-weight", Ablations { no_adaptive_weight: true, ..off }),
        ("greedy", Ablations { greedy: true, ..off }),
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub seed: u64,
    pub variant: String,
    pub error: String,
    #[serde(skip)]
    pub protocol: bool,
}

/// Aggregate over the repeats of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: String,
    pub repeats: usize,
    pub completed: usize,
    pub convergence_ratio: Option<f64>,
    pub median_best: Option<f64>,
    pub median_evals_to_converge: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub output: PathBuf,
    pub summaries: Vec<VariantSummary>,
    pub failures: Vec<RunFailure>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn summarize(cfg: &BenchConfig, variant: &str, histories: &[RunHistory]) -> VariantSummary {
    let target = cfg.target();
    let tol = cfg.run.tol;
    let best: Vec<f64> = histories.iter().map(|h| h.best_value()).collect();
    let to_converge: Vec<f64> = match target {
        Some(t) => histories
            .iter()
            .filter_map(|h| h.evals_to_reach(t, tol))
            .map(|n| n as f64)
            .collect(),
        None => Vec::new(),
    };
    VariantSummary {
        variant: variant.to_string(),
        repeats: cfg.repeats,
        completed: histories.len(),
        convergence_ratio: target.and_then(|t| ratio_of(best.iter().copied(), t, tol).ok()),
        median_best: median(&best),
        median_evals_to_converge: median(&to_converge),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_row(cfg: &BenchConfig, s: &VariantSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        cfg.objective_name(),
        cfg.dims,
        cfg.run.scenario,
        s.variant,
        s.repeats,
        s.completed,
        opt(s.convergence_ratio),
        opt(s.median_best),
        opt(s.median_evals_to_converge),
    )
}

fn history_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("history_seed{seed}.csv"))
}

// Runs every seed of one variant on a bounded pool; results come back in
// seed order regardless of scheduling.
fn run_variant(
    cfg: &BenchConfig,
    variant: &str,
    ablations: Ablations,
    dir: &Path,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<RunHistory>, Vec<RunFailure>)> {
    use rayon::prelude::*;
    fs::create_dir_all(dir)?;
    let space = cfg.space()?;
    let seeds = cfg.seeds();
    let results: Vec<(u64, Result<RunHistory>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let run = || -> Result<RunHistory> {
                    let objective = cfg.build_objective()?;
                    let mut rc = cfg.run.clone();
                    rc.seed = seed;
                    rc.ablations = ablations;
                    let h = driver::run(&*objective, &space, &ConstraintSet::new(), &rc)?;
                    h.write_csv(&history_file(dir, seed))?;
                    Ok(h)
                };
                (seed, run())
            })
            .collect()
    });
    let mut histories = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(h) => histories.push(h),
            Err(e) => failures.push(RunFailure {
                seed,
                variant: variant.to_string(),
                protocol: e.is_protocol(),
                error: e.to_string(),
            }),
        }
    }
    Ok((histories, failures))
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_sha256: String,
    config: &'a BenchConfig,
    seeds: Vec<u64>,
    variants: Vec<&'a str>,
    failures: &'a [RunFailure],
}

fn write_manifest(cfg: &BenchConfig, command: &str, variants: Vec<&str>, failures: &[RunFailure]) -> Result<()> {
    let m = Manifest {
        tool: "dots",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_sha256: cfg.hash(),
        config: cfg,
        seeds: cfg.seeds(),
        variants,
        failures,
    };
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    fs::write(cfg.output.join("manifest.json"), json + "\n")?;
    Ok(())
}

fn pool(cfg: &BenchConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::config("parallelism", e.to_string()))
}

/// Runs `repeats` seeds of the configured experiment and writes histories,
/// `summary.csv` and `manifest.json` under the output directory.
pub fn cmd_run(cfg: &BenchConfig) -> Result<BenchOutcome> {
    fs::create_dir_all(&cfg.output)?;
    let variant = cfg.run.ablations.label();
    let (histories, failures) = run_variant(cfg, &variant, cfg.run.ablations, &cfg.output, &pool(cfg)?)?;
    let summary = summarize(cfg, &variant, &histories);
    fs::write(
        cfg.output.join("summary.csv"),
        format!("{SUMMARY_HEADER}\n{}\n", summary_row(cfg, &summary)),
    )?;
    write_manifest(cfg, "run", vec![&variant], &failures)?;
    Ok(BenchOutcome {
        output: cfg.output.clone(),
        summaries: vec![summary],
        failures,
    })
}

/// Full search plus the four single-mechanism ablations over a shared seed
/// set; one subdirectory per variant and `ablation.csv` comparing them.
pub fn cmd_ablate(cfg: &BenchConfig) -> Result<BenchOutcome> {
    fs::create_dir_all(&cfg.output)?;
    let pool = pool(cfg)?;
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    let mut table = format!("order,{SUMMARY_HEADER}\n");
    for (order, (name, ablations)) in ablation_variants().into_iter().enumerate() {
        let (histories, f) = run_variant(cfg, name, ablations, &cfg.output.join(name), &pool)?;
        let s = summarize(cfg, name, &histories);
        table.push_str(&format!("{order},{}\n", summary_row(cfg, &s)));
        summaries.push(s);
        failures.extend(f);
    }
    fs::write(cfg.output.join("ablation.csv"), table)?;
    let names = ablation_variants().iter().map(|(n, _)| *n).collect();
    write_manifest(cfg, "ablate", names, &failures)?;
    Ok(BenchOutcome {
        output: cfg.output.clone(),
        summaries,
        failures,
    })
}

/// Final best value of a history CSV.
pub fn read_history_best(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HISTORY_HEADER) {
        return Err(Error::InvalidArgument(format!("{} is not a history file", path.display())));
    }
    let last = lines
        .filter(|l| !l.trim().is_empty())
        .last()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no rows", path.display())))?;
    last.split(',')
        .nth(2)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("{}: bad row {last:?}", path.display())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub files: usize,
    pub converged: usize,
    pub ratio: f64,
}

/// Convergence ratio over every history file directly inside `dir`.
pub fn cmd_ratio(dir: &Path, target: f64, tol: f64) -> Result<RatioReport> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut best = Vec::new();
    for p in paths {
        let head = fs::read_to_string(&p)?;
        if head.lines().next() == Some(HISTORY_HEADER) {
            best.push(read_history_best(&p)?);
        }
    }
    let ratio = ratio_of(best.iter().copied(), target, tol)
        .map_err(|_| Error::InvalidArgument(format!("no history files in {}", dir.display())))?;
    Ok(RatioReport {
        files: best.len(),
        converged: best.iter().filter(|v| (*v - target).abs() <= tol).count(),
        ratio,
    })
}

pub fn cmd_check_evaluator(transport: &str, dims: usize, timeout: Duration) -> Result<CheckReport> {
    let t: Transport = transport.parse()?;
    check_evaluator(&t, dims, timeout)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_examples() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn variant_table_order() {
        let names: Vec<&str> = ablation_variants().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, ["full", "no-top-visit", "no-local-backprop", "no-adaptive-weight", "greedy"]);
        assert!(ablation_variants()[1..].iter().all(|(n, a)| a.label() == *n));
    }

    #[test]
    fn run_writes_histories_summary_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let src = format!(
            "objective = \"rastrigin\"\ndims = 3\neval_budget = 400\ninit_points = 20\nrollouts = 10\nrepeats = 3\noutput = {:?}\n",
            dir.path().join("out")
        );
        let cfg = BenchConfig::parse(&src).unwrap();
        let out = cmd_run(&cfg).unwrap();
        for seed in 0..3 {
            assert!(history_file(&out.output, seed).exists());
        }
        let summary = fs::read_to_string(out.output.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 2);
        assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));

        let bests: Vec<f64> = (0..3)
            .map(|s| read_history_best(&history_file(&out.output, s)).unwrap())
            .collect();
        assert_eq!(out.summaries[0].median_best, median(&bests));
        let r = cmd_ratio(&out.output, 0.0, 1e-9).unwrap();
        assert_eq!(Some(r.ratio), out.summaries[0].convergence_ratio);

        let manifest = fs::read_to_string(out.output.join("manifest.json")).unwrap();
        assert!(manifest.contains(&cfg.hash()));

        cmd_run(&cfg).unwrap();
        assert_eq!(fs::read_to_string(out.output.join("summary.csv")).unwrap(), summary);
        assert_eq!(fs::read_to_string(out.output.join("manifest.json")).unwrap(), manifest);
    }

    #[test]
    fn failed_seeds_do_not_abort_siblings() {
        let dir = tempfile::tempdir().unwrap();
        let src = format!(
            "objective = \"rastrigin\"\ndims = 2\neval_budget = 100\ninit_points = 20\nrepeats = 2\noutput = {:?}\nexternal = \"cmd:exit 0\"\n",
            dir.path().join("out")
        );
        let cfg = BenchConfig::parse(&src).unwrap();
        let out = cmd_run(&cfg).unwrap();
        assert_eq!(out.failures.len(), 2);
        assert!(out.failures.iter().all(|f| f.protocol));
        assert_eq!(out.summaries[0].completed, 0);
    }
}
