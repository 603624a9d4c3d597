//! Stochastic tree search.
//!
//! One rollout expands the current root into exactly one child per dimension,
//! scores root and children with the dynamic upper confidence bound
//!
//! ```text
//! ducb(v, n, N) = v + c_eff * sqrt(2 ln N / (n + 1))
//! ```
//!
//! and moves to the best child only when its score strictly beats the root's.
//! Afterwards only the visit counts of the root and the accepted child are
//! bumped; node values are never propagated. A root that keeps rejecting its
//! children accumulates visits, which inflates the bonus of its unvisited
//! children until one of them is accepted.
//!
//! Everything here works in a maximization frame. Callers negate minimization
//! objectives before handing values in (see [`crate::objectives::Direction`]).

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ConstraintSet, Point, SearchSpace};

/// Lower bound on the magnitude the exploration weight scales with.
pub const WEIGHT_FLOOR: f64 = 1e-6;

/// Attempts per child before expansion falls back to a one-step move.
pub const EXPANSION_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DucbParams {
    /// Base exploration constant; the effective weight is `c0 * |best label|`.
    pub c0: f64,
    /// Rollouts per search phase.
    pub rollouts: usize,
    /// Range of the fraction of coordinates a scaled random mutation resamples.
    pub mutation_fraction: (f64, f64),
}

impl Default for DucbParams {
    fn default() -> Self {
        DucbParams {
            c0: 0.5,
            rollouts: 100,
            mutation_fraction: (0.1, 0.5),
        }
    }
}

impl DucbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::InvalidArgument(format!("c0 must be positive, got {}", self.c0)));
        }
        if self.rollouts == 0 {
            return Err(Error::InvalidArgument("rollouts must be at least 1".into()));
        }
        let (lo, hi) = self.mutation_fraction;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mutation fraction range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
            )));
        }
        Ok(())
    }
}

/// Visit counts per node. A missing key means zero visits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VisitTable {
    counts: HashMap<Point, u64>,
}

impl VisitTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, p: &Point) -> u64 {
        self.counts.get(p).copied().unwrap_or(0)
    }

    pub fn increment(&mut self, p: &Point) {
        *self.counts.entry(p.clone()).or_insert(0) += 1;
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, u64)> {
        self.counts.iter().map(|(p, &n)| (p, n))
    }
}

/// Exploration weight `c0 * max(|min(labels)|, WEIGHT_FLOOR)`.
///
/// `labels` are in the minimization frame, so `min` is the best label seen.
pub fn adaptive_weight(c0: f64, labels: &[f64]) -> Result<f64> {
    let best = labels
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| Error::InvalidArgument("adaptive weight needs at least one label".into()))?;
    Ok(c0 * best.abs().max(WEIGHT_FLOOR))
}

/// Dynamic upper confidence bound of a node with value `value` (maximization
/// frame) and `n_node` visits, under a root visited `n_root_total` times.
pub fn ducb(value: f64, n_node: u64, n_root_total: u64, c_eff: f64) -> Result<f64> {
    if n_root_total == 0 {
        return Err(Error::InvalidArgument("root visit count must be at least 1".into()));
    }
    Ok(ducb_unchecked(value, n_node, n_root_total, c_eff))
}

#[inline]
fn ducb_unchecked(value: f64, n_node: u64, n_root_total: u64, c_eff: f64) -> f64 {
    let bonus = (2.0 * (n_root_total as f64).ln() / (n_node as f64 + 1.0)).sqrt();
    value + c_eff * bonus
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    OneStep,
    SingleMutation,
    ScaledMutation,
}

impl Action {
    fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        match rng.gen_range(0..3) {
            0 => Action::OneStep,
            1 => Action::SingleMutation,
            _ => Action::ScaledMutation,
        }
    }
}

/// Moves one uniformly chosen coordinate by one lattice step. The sign is
/// uniform among the directions that stay in bounds.
pub fn one_step_move<R: Rng + ?Sized>(root: &Point, space: &SearchSpace, rng: &mut R) -> Point {
    let mut child = root.clone();
    let i = rng.gen_range(0..space.dims());
    let cur = root.coords()[i];
    let last = space.size(i) - 1;
    let next = match (cur > 0, cur < last) {
        (true, true) => {
            if rng.gen_bool(0.5) {
                cur + 1
            } else {
                cur - 1
            }
        }
        (true, false) => cur - 1,
        (false, true) => cur + 1,
        // Every lattice has at least two values.
        (false, false) => unreachable!("degenerate lattice dimension"),
    };
    child.coords_mut()[i] = next;
    child
}

fn single_mutation<R: Rng + ?Sized>(root: &Point, space: &SearchSpace, rng: &mut R) -> Point {
    let mut child = root.clone();
    let i = rng.gen_range(0..space.dims());
    let cur = root.coords()[i];
    let mut v = rng.gen_range(0..space.size(i) - 1);
    if v >= cur {
        v += 1;
    }
    child.coords_mut()[i] = v;
    child
}

fn scaled_mutation<R: Rng + ?Sized>(
    root: &Point,
    space: &SearchSpace,
    fraction: (f64, f64),
    rng: &mut R,
) -> Point {
    let dims = space.dims();
    let frac = if fraction.0 < fraction.1 {
        rng.gen_range(fraction.0..=fraction.1)
    } else {
        fraction.0
    };
    let k = ((frac * dims as f64).round() as usize).clamp(1, dims);
    let mut child = root.clone();
    for i in index::sample(rng, dims, k) {
        child.coords_mut()[i] = rng.gen_range(0..space.size(i));
    }
    child
}

pub fn apply_action<R: Rng + ?Sized>(
    action: Action,
    root: &Point,
    space: &SearchSpace,
    mutation_fraction: (f64, f64),
    rng: &mut R,
) -> Point {
    match action {
        Action::OneStep => one_step_move(root, space, rng),
        Action::SingleMutation => single_mutation(root, space, rng),
        Action::ScaledMutation => scaled_mutation(root, space, mutation_fraction, rng),
    }
}

/// Generates exactly `space.dims()` children of `root`.
///
/// Each child uses an action drawn uniformly from the three modes. Children
/// that violate `constraints` are redrawn up to [`EXPANSION_RETRIES`] times;
/// after that the child is a single one-step move from the root, or the root
/// itself when that move is infeasible too.
pub fn stochastic_expansion<R: Rng + ?Sized>(
    root: &Point,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    mutation_fraction: (f64, f64),
    rng: &mut R,
) -> Vec<Point> {
    (0..space.dims())
        .map(|_| {
            for _ in 0..EXPANSION_RETRIES {
                let action = Action::draw(rng);
                let child = apply_action(action, root, space, mutation_fraction, rng);
                if constraints.accepts(&child) {
                    return child;
                }
            }
            let fallback = one_step_move(root, space, rng);
            if constraints.accepts(&fallback) {
                fallback
            } else {
                root.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Root for the next rollout.
    pub root: Point,
    pub accepted: bool,
    /// Index of the best-scoring child, accepted or not.
    pub best_child: usize,
}

/// Keeps the root unless the best child's DUCB strictly exceeds the root's.
///
/// `N` is the root's visit count (at least 1). Ties among children go to the
/// lowest index; a tie with the root keeps the root.
pub fn conditional_select(
    root: &Point,
    children: &[Point],
    value_of: impl Fn(&Point) -> f64,
    visits: &VisitTable,
    c_eff: f64,
) -> Result<Selection> {
    if children.is_empty() {
        return Err(Error::InvalidArgument("conditional selection needs children".into()));
    }
    let n_root = visits.get(root);
    let total = n_root.max(1);
    let root_score = ducb_unchecked(value_of(root), n_root, total, c_eff);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in children.iter().enumerate() {
        let s = ducb_unchecked(value_of(c), visits.get(c), total, c_eff);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    let accepted = best_score > root_score;
    Ok(Selection {
        root: if accepted { children[best].clone() } else { root.clone() },
        accepted,
        best_child: best,
    })
}

/// Bumps the root's visit count and, when a child was accepted, the child's.
pub fn local_backprop(visits: &mut VisitTable, root: &Point, selected: Option<&Point>) {
    visits.increment(root);
    if let Some(child) = selected {
        visits.increment(child);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    /// Value in the maximization frame.
    pub value: f64,
    /// Visit count at the end of the phase.
    pub visits: u64,
}

/// Everything one search phase evaluated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutRecord {
    /// Evaluated nodes in first-evaluation order.
    pub visited: IndexMap<Point, NodeStats>,
    /// Root before the first rollout, then the root after each rollout.
    pub trajectory: Vec<Point>,
}

impl RolloutRecord {
    /// Node with the highest value; first evaluated wins ties.
    pub fn best(&self) -> Option<(&Point, &NodeStats)> {
        self.visited
            .iter()
            .reduce(|a, b| if b.1.value > a.1.value { b } else { a })
    }

    /// Folds another phase's record into this one. Visit counts add up; the
    /// value seen first is kept.
    pub fn merge(&mut self, other: RolloutRecord) {
        for (p, s) in other.visited {
            self.visited
                .entry(p)
                .and_modify(|e| e.visits += s.visits)
                .or_insert(s);
        }
        self.trajectory.extend(other.trajectory);
    }
}

/// Fully resolved settings for one search phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseSettings {
    pub rollouts: usize,
    pub mutation_fraction: (f64, f64),
    pub c_eff: f64,
    pub local_backprop: bool,
}

impl PhaseSettings {
    pub fn new(params: &DucbParams, c_eff: f64) -> Self {
        PhaseSettings {
            rollouts: params.rollouts,
            mutation_fraction: params.mutation_fraction,
            c_eff,
            local_backprop: true,
        }
    }
}

/// Runs `params.rollouts` rollouts from `start`, with the exploration weight
/// derived from `labels_for_weight` (minimization frame).
///
/// `value_fn` receives batches of not-yet-evaluated points and returns their
/// values in the maximization frame, in order. Each distinct point is
/// evaluated at most once per phase.
pub fn rollout_search<E, F, R>(
    start: &Point,
    value_fn: F,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    params: &DucbParams,
    labels_for_weight: &[f64],
    rng: &mut R,
) -> std::result::Result<RolloutRecord, E>
where
    E: From<Error>,
    F: FnMut(&[Point]) -> std::result::Result<Vec<f64>, E>,
    R: Rng + ?Sized,
{
    params.validate()?;
    let c_eff = adaptive_weight(params.c0, labels_for_weight)?;
    run_phase(start, value_fn, space, constraints, &PhaseSettings::new(params, c_eff), rng)
}

/// [`rollout_search`] with an explicit exploration weight and backprop switch.
pub fn run_phase<E, F, R>(
    start: &Point,
    mut value_fn: F,
    space: &SearchSpace,
    constraints: &ConstraintSet,
    settings: &PhaseSettings,
    rng: &mut R,
) -> std::result::Result<RolloutRecord, E>
where
    E: From<Error>,
    F: FnMut(&[Point]) -> std::result::Result<Vec<f64>, E>,
    R: Rng + ?Sized,
{
    if !space.contains(start) {
        return Err(Error::InvalidArgument(format!("start {start:?} is not on the lattice")).into());
    }
    let mut record = RolloutRecord::default();
    let mut visits = VisitTable::new();
    evaluate_into(&mut record, vec![start.clone()], &mut value_fn)?;

    let mut root = start.clone();
    record.trajectory.push(root.clone());
    for _ in 0..settings.rollouts {
        let children =
            stochastic_expansion(&root, space, constraints, settings.mutation_fraction, rng);
        let mut seen = HashSet::with_capacity(children.len());
        let fresh: Vec<Point> = children
            .iter()
            .filter(|c| !record.visited.contains_key(*c) && seen.insert(*c))
            .cloned()
            .collect();
        evaluate_into(&mut record, fresh, &mut value_fn)?;

        let sel = conditional_select(
            &root,
            &children,
            |p| record.visited[p].value,
            &visits,
            settings.c_eff,
        )?;
        if settings.local_backprop {
            local_backprop(&mut visits, &root, sel.accepted.then_some(&sel.root));
        }
        root = sel.root;
        record.trajectory.push(root.clone());
    }
    for (p, n) in visits.iter() {
        if let Some(s) = record.visited.get_mut(p) {
            s.visits = n;
        }
    }
    Ok(record)
}

fn evaluate_into<E, F>(
    record: &mut RolloutRecord,
    points: Vec<Point>,
    value_fn: &mut F,
) -> std::result::Result<(), E>
where
    E: From<Error>,
    F: FnMut(&[Point]) -> std::result::Result<Vec<f64>, E>,
{
    if points.is_empty() {
        return Ok(());
    }
    let values = value_fn(&points)?;
    if values.len() != points.len() {
        return Err(Error::InvalidArgument(format!(
            "value function returned {} values for {} points",
            values.len(),
            points.len()
        ))
        .into());
    }
    for (p, value) in points.into_iter().zip(values) {
        record.visited.insert(p, NodeStats { value, visits: 0 });
    }
    Ok(())
}
