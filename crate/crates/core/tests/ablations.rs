use std::collections::HashSet;
use std::fs;

use dots::bench::{cmd_ablate, median, BenchConfig};
use dots::driver::run_surrogate_with_data;
use dots::*;

fn lattice(dims: usize) -> SearchSpace {
    SearchSpace::uniform(dims, -5.0, 5.0, 0.1).unwrap()
}

#[test]
fn greedy_trails_full_search_on_rosenbrock_10d() {
    let f = BenchmarkObjective::new(Benchmark::Rosenbrock, 10).unwrap();
    let space = lattice(10);
    let mut full = Vec::new();
    let mut greedy = Vec::new();
    for seed in 0..10 {
        let mut cfg = RunConfig::new(Scenario::Exact, 100_000, seed);
        full.push(run_exact(&f, &space, &ConstraintSet::new(), &cfg).unwrap().best_value());
        cfg.ablations.greedy = true;
        greedy.push(run_exact(&f, &space, &ConstraintSet::new(), &cfg).unwrap().best_value());
    }
    let (full, greedy) = (median(&full).unwrap(), median(&greedy).unwrap());
    assert!(full < greedy, "full {full} vs greedy {greedy}");
}

// Basin of a point: its coordinates rounded to the nearest integer, which
// is where Rastrigin's local minima sit.
fn basins(space: &SearchSpace, data: &dots::surrogate::Dataset) -> usize {
    (0..data.len())
        .filter(|&i| data.rounds()[i] > 0)
        .map(|i| {
            space
                .realize(&data.points()[i])
                .iter()
                .map(|v| v.round() as i64)
                .collect::<Vec<_>>()
        })
        .collect::<HashSet<_>>()
        .len()
}

#[test]
fn top_visit_sampling_reaches_more_basins() {
    let f = BenchmarkObjective::new(Benchmark::Rastrigin, 10).unwrap();
    let space = lattice(10);
    let (mut with, mut without) = (0, 0);
    for seed in 0..5 {
        let mut cfg = RunConfig::new(Scenario::Surrogate, 600, seed);
        let (_, d) = run_surrogate_with_data(&f, &space, &ConstraintSet::new(), &cfg).unwrap();
        with += basins(&space, &d);
        cfg.ablations.no_top_visit = true;
        let (_, d) = run_surrogate_with_data(&f, &space, &ConstraintSet::new(), &cfg).unwrap();
        without += basins(&space, &d);
    }
    assert!(without < with, "top-k only {without} basins, top-visit {with}");
}

#[test]
fn ablate_table_puts_full_search_first() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ablate.toml");
    fs::write(
        &path,
        "objective = \"rosenbrock\"\ndims = 20\neval_budget = 100000\nrepeats = 10\nscenario = \"exact\"\n",
    )
    .unwrap();
    let cfg = BenchConfig::load(&path).unwrap();
    let out = cmd_ablate(&cfg).unwrap();
    assert!(out.failures.is_empty());
    let full = out.summaries[0].median_best.unwrap();
    assert_eq!(out.summaries[0].variant, "full");
    for s in &out.summaries[1..] {
        assert!(full <= s.median_best.unwrap(), "{} median below full", s.variant);
    }
    let table = fs::read_to_string(dir.path().join("results/ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);
}
