//! Optimization campaigns: exact-oracle search, surrogate active learning,
//! and the random-search control.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{Direction, Objective};
use crate::sampler::{top_visit_sample, SampleRatio};
use crate::search::{adaptive_weight, run_phase, DucbParams, PhaseSettings, RolloutRecord};
use crate::space::{random_point, ConstraintSet, Point, SearchSpace};
use crate::surrogate::{r_squared, train, Dataset, RegressorConfig};

pub const HISTORY_HEADER: &str = "round,evals_cum,best_value,c_eff,r2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Exact,
    Surrogate,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::Exact => "exact",
            Scenario::Surrogate => "surrogate",
        })
    }
}

/// Mechanisms that can be switched off for ablation studies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Never bump visit counts, so the exploration bonus stays zero.
    pub no_local_backprop: bool,
    /// Fixed weight `c0` instead of one scaled by the best label.
    pub no_adaptive_weight: bool,
    /// Plain top-k batch selection.
    pub no_top_visit: bool,
    /// Weight zero.
    pub greedy: bool,
}

impl Ablations {
    pub const ALL: Ablations = Ablations {
        no_local_backprop: true,
        no_adaptive_weight: true,
        no_top_visit: true,
        greedy: true,
    };

    /// Variant name used in result tables.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_local_backprop {
            parts.push("no-local-backprop");
        }
        if self.no_adaptive_weight {
            parts.push("no-adaptive-weight");
        }
        if self.no_top_visit {
            parts.push("no-top-visit");
        }
        if self.greedy {
            parts.push("greedy");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub init_points: usize,
    /// Ground-truth evaluations per surrogate round.
    pub batch: usize,
    /// Upper bound on search rounds after initialization.
    pub rounds: usize,
    pub eval_budget: usize,
    /// Rollout start points per round.
    pub chains: usize,
    pub ablations: Ablations,
    pub seed: u64,
    pub ducb: DucbParams,
    pub sample_ratio: SampleRatio,
    /// Convergence tolerance around the target.
    pub tol: f64,
    /// Overrides the objective's known optimum as convergence target.
    pub target: Option<f64>,
    /// Fraction of the dataset held out for the fit diagnostic.
    pub holdout: f64,
    /// Surrogate settings; `None` picks the defaults for the space.
    pub regressor: Option<RegressorConfig>,
}

impl RunConfig {
    pub fn new(scenario: Scenario, eval_budget: usize, seed: u64) -> Self {
        RunConfig {
            scenario,
            init_points: 200,
            batch: 20,
            rounds: 1000,
            eval_budget,
            chains: 5,
            ablations: Ablations::default(),
            seed,
            ducb: DucbParams::default(),
            sample_ratio: SampleRatio::default(),
            tol: 1e-9,
            target: None,
            holdout: 0.1,
            regressor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("init_points", self.init_points),
            ("batch", self.batch),
            ("rounds", self.rounds),
            ("eval_budget", self.eval_budget),
            ("chains", self.chains),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.eval_budget < self.init_points {
            return Err(Error::config(
                "eval_budget",
                format!("budget {} is below init_points {}", self.eval_budget, self.init_points),
            ));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::config("tol", "must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.holdout) {
            return Err(Error::config("holdout", "must lie in [0, 0.5)"));
        }
        if self.sample_ratio.score_parts == 0 && self.sample_ratio.visit_parts == 0 {
            return Err(Error::config("sample_ratio", "cannot be 0:0"));
        }
        self.ducb
            .validate()
            .map_err(|e| Error::config("ducb", e.to_string()))?;
        if let Some(r) = &self.regressor {
            r.validate().map_err(|e| Error::config("regressor", e.to_string()))?;
        }
        Ok(())
    }

    fn effective_ratio(&self) -> SampleRatio {
        if self.ablations.no_top_visit {
            SampleRatio::TOP_K
        } else {
            self.sample_ratio
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    /// 0 for initialization.
    pub round: usize,
    /// Ground-truth evaluations spent in this round.
    pub evals: usize,
    pub evals_cum: usize,
    /// Best raw objective value so far.
    pub best_value: f64,
    pub best_point: Point,
    pub r2: Option<f64>,
    pub c_eff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub direction: Direction,
    pub entries: Vec<RoundEntry>,
    pub status: Status,
}

impl RunHistory {
    fn last(&self) -> &RoundEntry {
        self.entries.last().expect("history has an initialization entry")
    }

    pub fn best_value(&self) -> f64 {
        self.last().best_value
    }

    pub fn best_point(&self) -> &Point {
        &self.last().best_point
    }

    pub fn total_evals(&self) -> usize {
        self.last().evals_cum
    }

    /// Completed search rounds, initialization excluded.
    pub fn rounds(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn reached(&self, target: f64, tol: f64) -> bool {
        (self.best_value() - target).abs() <= tol
    }

    /// Cumulative evaluations at the first round that got within `tol` of `target`.
    pub fn evals_to_reach(&self, target: f64, tol: f64) -> Option<usize> {
        self.entries
            .iter()
            .find(|e| (e.best_value - target).abs() <= tol)
            .map(|e| e.evals_cum)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(32 * self.entries.len());
        s.push_str(HISTORY_HEADER);
        s.push('\n');
        for e in &self.entries {
            let r2 = e.r2.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", e.round, e.evals_cum, e.best_value, e.c_eff, r2);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Fraction of `histories` whose best value lies within `tol` of `target`.
pub fn convergence_ratio(histories: &[RunHistory], target: f64, tol: f64) -> Result<f64> {
    ratio_of(histories.iter().map(|h| h.best_value()), target, tol)
}

pub(crate) fn ratio_of(
    best_values: impl ExactSizeIterator<Item = f64>,
    target: f64,
    tol: f64,
) -> Result<f64> {
    let n = best_values.len();
    if n == 0 {
        return Err(Error::InvalidArgument("convergence ratio of no runs".into()));
    }
    let hits = best_values.filter(|v| (v - target).abs() <= tol).count();
    Ok(hits as f64 / n as f64)
}

// Internal early exits from inside a search phase.
enum Stop {
    Budget,
    Converged,
    Failed(Error),
}

impl From<Error> for Stop {
    fn from(e: Error) -> Self {
        Stop::Failed(e)
    }
}

struct Campaign<'a, O: Objective + ?Sized> {
    objective: &'a O,
    space: &'a SearchSpace,
    constraints: &'a ConstraintSet,
    cfg: &'a RunConfig,
    direction: Direction,
    target: Option<f64>,
    data: Dataset,
    best: Option<(Point, f64)>,
    evals: usize,
    round: usize,
    rng: ChaCha8Rng,
    entries: Vec<RoundEntry>,
}

impl<'a, O: Objective + ?Sized> Campaign<'a, O> {
    fn new(
        objective: &'a O,
        space: &'a SearchSpace,
        constraints: &'a ConstraintSet,
        cfg: &'a RunConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Campaign {
            objective,
            space,
            constraints,
            cfg,
            direction: objective.direction(),
            target: cfg.target.or_else(|| objective.known_optimum().map(|o| o.value)),
            data: Dataset::new(),
            best: None,
            evals: 0,
            round: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            entries: Vec::new(),
        })
    }

    fn remaining(&self) -> usize {
        self.cfg.eval_budget - self.evals
    }

    fn converged(&self) -> bool {
        match (&self.best, self.target) {
            (Some((_, b)), Some(t)) => (b - t).abs() <= self.cfg.tol,
            _ => false,
        }
    }

    /// Evaluates `points` on the objective and records them. Points must be
    /// fresh and within budget.
    fn evaluate(&mut self, points: &[Point]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let xs: Vec<Vec<f64>> = points.iter().map(|p| self.space.realize(p)).collect();
        let ys = self
            .objective
            .evaluate_batch(&xs)
            .map_err(|e| Error::Round { round: self.round, source: Box::new(e) })?;
        if ys.len() != points.len() {
            return Err(Error::Round {
                round: self.round,
                source: Box::new(Error::InvalidArgument(format!(
                    "objective returned {} values for {} points",
                    ys.len(),
                    points.len()
                ))),
            });
        }
        for (p, &y) in points.iter().zip(&ys) {
            if !y.is_finite() {
                return Err(Error::Round {
                    round: self.round,
                    source: Box::new(Error::InvalidArgument(format!(
                        "objective returned {y} at {p:?}"
                    ))),
                });
            }
            self.data.push(p.clone(), y, self.round);
            let better = match &self.best {
                None => true,
                Some((_, b)) => self.direction.better(y, *b),
            };
            if better {
                self.best = Some((p.clone(), y));
            }
        }
        self.evals += points.len();
        Ok(ys)
    }

    fn initialize(&mut self) -> Result<()> {
        let want = self.cfg.init_points;
        let mut points = Vec::with_capacity(want);
        let mut seen = std::collections::HashSet::with_capacity(want);
        let mut attempts = 0;
        while points.len() < want && attempts < want * 100 {
            attempts += 1;
            let p = random_point(self.space, self.constraints, &mut self.rng)?;
            if seen.insert(p.clone()) {
                points.push(p);
            }
        }
        self.evaluate(&points)?;
        self.push_entry(0, None, 0.0);
        Ok(())
    }

    fn push_entry(&mut self, evals_before: usize, r2: Option<f64>, c_eff: f64) {
        let (p, v) = self.best.clone().expect("initialized");
        self.entries.push(RoundEntry {
            round: self.round,
            evals: self.evals - evals_before,
            evals_cum: self.evals,
            best_value: v,
            best_point: p,
            r2,
            c_eff,
        });
    }

    fn c_eff(&self) -> Result<f64> {
        let ab = self.cfg.ablations;
        if ab.greedy {
            return Ok(0.0);
        }
        if ab.no_adaptive_weight {
            return Ok(self.cfg.ducb.c0);
        }
        let labels: Vec<f64> = self.data.labels().iter().map(|&y| -self.direction.orient(y)).collect();
        adaptive_weight(self.cfg.ducb.c0, &labels)
    }

    fn settings(&self, c_eff: f64) -> PhaseSettings {
        PhaseSettings {
            local_backprop: !self.cfg.ablations.no_local_backprop,
            ..PhaseSettings::new(&self.cfg.ducb, c_eff)
        }
    }

    fn starts(&self) -> Vec<Point> {
        self.data
            .top_k(self.cfg.chains, self.direction)
            .into_iter()
            .map(|i| self.data.points()[i].clone())
            .collect()
    }

    fn finish(self) -> (RunHistory, Dataset) {
        let status = if self.converged() {
            Status::Converged
        } else {
            Status::BudgetExhausted
        };
        (
            RunHistory {
                direction: self.direction,
                entries: self.entries,
                status,
            },
            self.data,
        )
    }

    fn run_exact(mut self) -> Result<(RunHistory, Dataset)> {
        self.initialize()?;
        while !self.converged() && self.remaining() > 0 && self.round < self.cfg.rounds {
            self.round += 1;
            let before = self.evals;
            let c_eff = self.c_eff()?;
            let settings = self.settings(c_eff);
            let mut stopped = false;
            for start in self.starts() {
                let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
                let (space, constraints) = (self.space, self.constraints);
                let outcome = run_phase(
                    &start,
                    |pts: &[Point]| self.exact_values(pts),
                    space,
                    constraints,
                    &settings,
                    &mut rng,
                );
                self.rng = rng;
                match outcome {
                    Ok(_) => {}
                    Err(Stop::Budget) | Err(Stop::Converged) => {
                        stopped = true;
                    }
                    Err(Stop::Failed(e)) => return Err(e),
                }
                if stopped {
                    break;
                }
            }
            self.push_entry(before, None, c_eff);
        }
        Ok(self.finish())
    }

    // Values in the maximization frame; labeled points are looked up, fresh
    // ones spend budget.
    fn exact_values(&mut self, points: &[Point]) -> std::result::Result<Vec<f64>, Stop> {
        let fresh: Vec<Point> = points.iter().filter(|p| !self.data.contains(p)).cloned().collect();
        let affordable = fresh.len().min(self.remaining());
        self.evaluate(&fresh[..affordable])?;
        if affordable < fresh.len() {
            return Err(Stop::Budget);
        }
        if self.converged() {
            return Err(Stop::Converged);
        }
        Ok(points
            .iter()
            .map(|p| self.direction.orient(self.data.label_of(p).expect("just evaluated")))
            .collect())
    }

    fn run_surrogate(mut self) -> Result<(RunHistory, Dataset)> {
        if self.cfg.init_points < 10 {
            return Err(Error::config("init_points", "surrogate mode needs at least 10"));
        }
        self.initialize()?;
        let base = self
            .cfg
            .regressor
            .clone()
            .unwrap_or_else(|| RegressorConfig::for_dims(self.space.dims()));
        while !self.converged() && self.remaining() > 0 && self.round < self.cfg.rounds {
            self.round += 1;
            let round = self.round;
            let before = self.evals;
            let with_round = |e: Error| match e {
                Error::Round { .. } => e,
                e => Error::Round { round, source: Box::new(e) },
            };

            let round_seed = mix(self.cfg.seed, round as u64);
            let (train_set, holdout) = self.data.split_holdout(self.cfg.holdout, round_seed);
            let model = train(&train_set, &RegressorConfig { seed: round_seed, ..base.clone() })
                .map_err(with_round)?;
            let r2 = r_squared(&model, &holdout).ok();

            let c_eff = self.c_eff().map_err(with_round)?;
            let settings = self.settings(c_eff);
            let direction = self.direction;
            let mut merged = RolloutRecord::default();
            for start in self.starts() {
                let rec = run_phase(
                    &start,
                    |pts: &[Point]| -> Result<Vec<f64>> {
                        Ok(model.predict(pts)?.into_iter().map(|y| direction.orient(y)).collect())
                    },
                    self.space,
                    self.constraints,
                    &settings,
                    &mut self.rng,
                )
                .map_err(with_round)?;
                merged.merge(rec);
            }

            let want = self.cfg.batch.min(self.remaining());
            let mut batch = top_visit_sample(&merged, &self.data, want, self.cfg.effective_ratio())
                .map_err(with_round)?
                .points;
            self.top_up(&mut batch, want).map_err(with_round)?;
            self.evaluate(&batch)?;
            self.push_entry(before, r2, c_eff);
            if self.evals == before {
                // Nothing new could be proposed; the lattice is exhausted.
                break;
            }
        }
        Ok(self.finish())
    }

    // Fills a short batch with random unlabeled points.
    fn top_up(&mut self, batch: &mut Vec<Point>, want: usize) -> Result<()> {
        let mut attempts = 0;
        while batch.len() < want && attempts < want * 100 {
            attempts += 1;
            let p = random_point(self.space, self.constraints, &mut self.rng)?;
            if !self.data.contains(&p) && !batch.contains(&p) {
                batch.push(p);
            }
        }
        Ok(())
    }
}

// SplitMix64 finalizer over the pair.
fn mix(seed: u64, round: u64) -> u64 {
    let mut z = seed ^ round.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Search driven directly by objective values.
pub fn run_exact<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    cfg: &RunConfig,
) -> Result<RunHistory> {
    run_exact_with_data(objective, space, constraints, cfg).map(|(h, _)| h)
}

/// [`run_exact`], also returning every labeled point in evaluation order.
pub fn run_exact_with_data<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    cfg: &RunConfig,
) -> Result<(RunHistory, Dataset)> {
    Campaign::new(objective, space, constraints, cfg)?.run_exact()
}

/// Active learning: the search runs on a surrogate retrained every round and
/// only the sampled batch is evaluated for real.
pub fn run_surrogate<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    cfg: &RunConfig,
) -> Result<RunHistory> {
    run_surrogate_with_data(objective, space, constraints, cfg).map(|(h, _)| h)
}

pub fn run_surrogate_with_data<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    cfg: &RunConfig,
) -> Result<(RunHistory, Dataset)> {
    Campaign::new(objective, space, constraints, cfg)?.run_surrogate()
}

/// Dispatches on `cfg.scenario`.
pub fn run<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    cfg: &RunConfig,
) -> Result<RunHistory> {
    match cfg.scenario {
        Scenario::Exact => run_exact(objective, space, constraints, cfg),
        Scenario::Surrogate => run_surrogate(objective, space, constraints, cfg),
    }
}

/// Uniform lattice sampling with the same budget and history layout. The
/// first `init_points` draws form round 0, then one round per `batch` draws.
/// Repeated draws are re-evaluated and counted.
pub fn random_search_baseline<O: Objective + ?Sized>(
    objective: &O,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    cfg: &RunConfig,
) -> Result<RunHistory> {
    cfg.validate()?;
    let direction = objective.direction();
    let target = cfg.target.or_else(|| objective.known_optimum().map(|o| o.value));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Point, f64)> = None;
    let mut evals = 0;
    let mut entries = Vec::new();
    let mut round = 0;
    let mut chunk = cfg.init_points;
    loop {
        let n = chunk.min(cfg.eval_budget - evals);
        let mut xs = Vec::with_capacity(n);
        let mut ps = Vec::with_capacity(n);
        for _ in 0..n {
            let p = random_point(space, constraints, &mut rng)?;
            xs.push(space.realize(&p));
            ps.push(p);
        }
        let ys = objective
            .evaluate_batch(&xs)
            .map_err(|e| Error::Round { round, source: Box::new(e) })?;
        for (p, y) in ps.into_iter().zip(ys) {
            if best.as_ref().map_or(true, |(_, b)| direction.better(y, *b)) {
                best = Some((p, y));
            }
        }
        evals += n;
        let (bp, bv) = best.clone().expect("at least one draw");
        entries.push(RoundEntry {
            round,
            evals: n,
            evals_cum: evals,
            best_value: bv,
            best_point: bp,
            r2: None,
            c_eff: 0.0,
        });
        let hit = target.is_some_and(|t| (bv - t).abs() <= cfg.tol);
        if hit || evals >= cfg.eval_budget {
            return Ok(RunHistory {
                direction,
                entries,
                status: if hit { Status::Converged } else { Status::BudgetExhausted },
            });
        }
        round += 1;
        chunk = cfg.batch;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{Benchmark, BenchmarkObjective, FnObjective, KnownOptimum};
    use crate::search::stochastic_expansion;
    use std::collections::HashSet;

    fn cfg(scenario: Scenario, budget: usize, seed: u64) -> RunConfig {
        RunConfig {
            init_points: 20,
            batch: 10,
            ducb: DucbParams { rollouts: 20, ..DucbParams::default() },
            ..RunConfig::new(scenario, budget, seed)
        }
    }

    fn rastrigin(dims: usize) -> (BenchmarkObjective, SearchSpace) {
        (
            BenchmarkObjective::new(Benchmark::Rastrigin, dims).unwrap(),
            SearchSpace::uniform(dims, -5.0, 5.0, 0.1).unwrap(),
        )
    }

    fn assert_accounting(h: &RunHistory) {
        assert_eq!(h.entries.iter().map(|e| e.evals).sum::<usize>(), h.total_evals());
        for w in h.entries.windows(2) {
            assert!(w[1].best_value <= w[0].best_value);
            assert_eq!(w[1].evals_cum, w[0].evals_cum + w[1].evals);
            assert_eq!(w[1].round, w[0].round + 1);
        }
    }

    #[test]
    fn budget_equal_to_init_stops_after_initialization() {
        let (f, s) = rastrigin(4);
        let h = run_exact(&f, &s, &ConstraintSet::new(), &cfg(Scenario::Exact, 20, 1)).unwrap();
        assert_eq!(h.entries.len(), 1);
        assert_eq!(h.total_evals(), 20);
        assert_eq!(h.status, Status::BudgetExhausted);
    }

    #[test]
    fn exact_accounting_and_monotonicity() {
        let (f, s) = rastrigin(5);
        for (i, ab) in [Ablations::default(), Ablations::ALL, Ablations { greedy: true, ..Default::default() }]
            .into_iter()
            .enumerate()
        {
            let c = RunConfig { ablations: ab, ..cfg(Scenario::Exact, 3000, i as u64) };
            let (h, d) = run_exact_with_data(&f, &s, &ConstraintSet::new(), &c).unwrap();
            assert_accounting(&h);
            assert_eq!(h.total_evals(), d.len());
            assert!(h.total_evals() <= 3000);
            assert_eq!(h.best_value(), d.labels().iter().copied().fold(f64::INFINITY, f64::min));
        }
    }

    #[test]
    fn exact_mode_converges_on_easy_instance() {
        let (f, s) = rastrigin(3);
        let h = run_exact(&f, &s, &ConstraintSet::new(), &cfg(Scenario::Exact, 20_000, 3)).unwrap();
        assert_eq!(h.status, Status::Converged);
        assert_eq!(h.best_value(), 0.0);
        assert_eq!(h.evals_to_reach(0.0, 1e-9), Some(h.total_evals()));
    }

    #[test]
    fn surrogate_accounting() {
        let (f, s) = rastrigin(3);
        let mut c = cfg(Scenario::Surrogate, 60, 4);
        c.regressor = Some(RegressorConfig { epochs: 20, ..RegressorConfig::for_dims(3) });
        let (h, d) = run_surrogate_with_data(&f, &s, &ConstraintSet::new(), &c).unwrap();
        assert_accounting(&h);
        assert_eq!(h.rounds(), 4);
        assert_eq!(h.total_evals(), 60);
        assert_eq!(d.len(), 60);
        assert!(h.entries[1..].iter().all(|e| e.r2.is_some() && e.evals == 10));
        assert!(h.entries[0].r2.is_none());
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let (f, s) = rastrigin(4);
        let c = cfg(Scenario::Exact, 2000, 7);
        let a = run_exact(&f, &s, &ConstraintSet::new(), &c).unwrap();
        assert_eq!(a, run_exact(&f, &s, &ConstraintSet::new(), &c).unwrap());
        assert_eq!(a.to_csv(), run_exact(&f, &s, &ConstraintSet::new(), &c).unwrap().to_csv());

        let mut c = cfg(Scenario::Surrogate, 50, 7);
        c.regressor = Some(RegressorConfig { epochs: 10, ..RegressorConfig::for_dims(4) });
        let a = run_surrogate(&f, &s, &ConstraintSet::new(), &c).unwrap();
        assert_eq!(a, run_surrogate(&f, &s, &ConstraintSet::new(), &c).unwrap());
    }

    #[test]
    fn maximizing_the_negation_mirrors_minimization() {
        let (f, s) = rastrigin(4);
        let neg = FnObjective::new("neg", Direction::Maximize, |x: &[f64]| -crate::objectives::rastrigin(x))
            .with_optimum(KnownOptimum { value: 0.0, point: vec![0.0; 4] });
        let c = cfg(Scenario::Exact, 1500, 11);
        let (h1, d1) = run_exact_with_data(&f, &s, &ConstraintSet::new(), &c).unwrap();
        let (h2, d2) = run_exact_with_data(&neg, &s, &ConstraintSet::new(), &c).unwrap();
        assert_eq!(d1.points(), d2.points());
        assert_eq!(h1.best_value(), -h2.best_value());
        for (a, b) in h1.entries.iter().zip(&h2.entries) {
            assert_eq!(a.c_eff, b.c_eff);
        }
    }

    // Greedy stochastic hill climbing written out directly: accept the first
    // strictly better child, no visit bookkeeping.
    fn greedy_reference(
        f: &dyn Objective,
        s: &SearchSpace,
        c: &RunConfig,
    ) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let none = ConstraintSet::new();
        let mut order: Vec<Point> = Vec::new();
        let mut label = std::collections::HashMap::new();
        let mut eval = |p: &Point, order: &mut Vec<Point>| -> f64 {
            *label.entry(p.clone()).or_insert_with(|| {
                order.push(p.clone());
                f.evaluate(&s.realize(p)).unwrap()
            })
        };
        let mut seen = HashSet::new();
        let mut init = Vec::new();
        while init.len() < c.init_points {
            let p = random_point(s, &none, &mut rng).unwrap();
            if seen.insert(p.clone()) {
                init.push(p);
            }
        }
        for p in &init {
            eval(p, &mut order);
        }
        for _ in 0..c.rounds {
            let mut ranked: Vec<usize> = (0..order.len()).collect();
            let vals: Vec<f64> = order.iter().map(|p| eval(p, &mut Vec::new())).collect();
            ranked.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
            let starts: Vec<Point> = ranked.iter().take(c.chains).map(|&i| order[i].clone()).collect();
            for start in starts {
                let mut root = start;
                for _ in 0..c.ducb.rollouts {
                    let children = stochastic_expansion(&root, s, &none, c.ducb.mutation_fraction, &mut rng);
                    let vals: Vec<f64> = children.iter().map(|ch| eval(ch, &mut order)).collect();
                    let mut best = 0;
                    for i in 1..vals.len() {
                        if vals[i] < vals[best] {
                            best = i;
                        }
                    }
                    if vals[best] < eval(&root, &mut order) {
                        root = children[best].clone();
                    }
                }
            }
        }
        order
    }

    #[test]
    fn all_ablations_reduce_to_greedy_hill_climbing() {
        let f = FnObjective::new("rosen", Direction::Minimize, crate::objectives::rosenbrock);
        let s = SearchSpace::uniform(2, -5.0, 5.0, 0.1).unwrap();
        let c = RunConfig {
            rounds: 3,
            chains: 2,
            ablations: Ablations::ALL,
            ..cfg(Scenario::Exact, 1_000_000, 5)
        };
        let (_, d) = run_exact_with_data(&f, &s, &ConstraintSet::new(), &c).unwrap();
        assert_eq!(d.points(), greedy_reference(&f, &s, &c).as_slice());
    }

    #[test]
    fn evaluation_errors_carry_round_context() {
        struct Flaky;
        impl Objective for Flaky {
            fn name(&self) -> &str {
                "flaky"
            }
            fn evaluate(&self, x: &[f64]) -> Result<f64> {
                if x[0] > 4.0 {
                    Err(Error::Evaluation { id: 0, message: "nan".into() })
                } else {
                    Ok(x.iter().map(|v| v * v).sum())
                }
            }
        }
        let s = SearchSpace::uniform(2, -5.0, 5.0, 0.1).unwrap();
        let err = run_exact(&Flaky, &s, &ConstraintSet::new(), &cfg(Scenario::Exact, 100_000, 1)).unwrap_err();
        assert!(matches!(err, Error::Round { .. }), "{err}");
    }

    #[test]
    fn random_baseline_spends_exact_budget() {
        let (f, s) = rastrigin(4);
        let c = cfg(Scenario::Exact, 1234, 2);
        let h = random_search_baseline(&f, &s, &ConstraintSet::new(), &c).unwrap();
        assert_eq!(h.total_evals(), 1234);
        assert_accounting(&h);
        assert_eq!(h, random_search_baseline(&f, &s, &ConstraintSet::new(), &c).unwrap());
    }

    #[test]
    fn convergence_ratio_arithmetic() {
        let (f, s) = rastrigin(2);
        let base = run_exact(&f, &s, &ConstraintSet::new(), &cfg(Scenario::Exact, 20, 0)).unwrap();
        let with = |v: f64| {
            let mut h = base.clone();
            h.entries.last_mut().unwrap().best_value = v;
            h
        };
        let hs = vec![with(0.0), with(0.0), with(1.0), with(0.0), with(0.0)];
        assert_eq!(convergence_ratio(&hs, 0.0, 1e-9).unwrap(), 0.8);
        assert_eq!(convergence_ratio(&hs[2..3], 0.0, 1e-9).unwrap(), 0.0);
        assert_eq!(convergence_ratio(&hs[..2], 0.0, 1e-9).unwrap(), 1.0);
        assert!(convergence_ratio(&[], 0.0, 1e-9).is_err());
    }

    #[test]
    fn csv_layout() {
        let (f, s) = rastrigin(2);
        let h = run_exact(&f, &s, &ConstraintSet::new(), &cfg(Scenario::Exact, 300, 0)).unwrap();
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(HISTORY_HEADER));
        assert!(lines.next().unwrap().starts_with("0,20,"));
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 5 && l.ends_with(',')));
    }

    #[test]
    fn config_validation_names_keys() {
        let mut c = RunConfig::new(Scenario::Exact, 100, 0);
        match c.validate().unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "eval_budget"),
            e => panic!("{e}"),
        }
        c.eval_budget = 1000;
        c.chains = 0;
        assert!(matches!(c.validate(), Err(Error::Config { key, .. }) if key == "chains"));
    }
}
