//! Labeled data and the regression surrogate trained on it.

mod mlp;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use mlp::{train, Affine, Loss, Regressor, RegressorConfig};

use crate::error::{Error, Result};
use crate::objectives::Direction;
use crate::space::Point;

/// Labeled lattice points. Each point appears at most once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    points: Vec<Point>,
    labels: Vec<f64>,
    rounds: Vec<usize>,
    index: HashMap<Point, usize>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a labeled point. Returns `false` (and changes nothing) when the
    /// point is already present.
    pub fn push(&mut self, point: Point, label: f64, round: usize) -> bool {
        if self.index.contains_key(&point) {
            return false;
        }
        self.index.insert(point.clone(), self.points.len());
        self.points.push(point);
        self.labels.push(label);
        self.rounds.push(round);
        true
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.index.contains_key(p)
    }

    pub fn label_of(&self, p: &Point) -> Option<f64> {
        self.index.get(p).map(|&i| self.labels[i])
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Round in which each entry was added.
    pub fn rounds(&self) -> &[usize] {
        &self.rounds
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.points.iter().zip(self.labels.iter().copied())
    }

    /// Indices of the `k` best entries, best first. Ties keep insertion order.
    pub fn top_k(&self, k: usize, direction: Direction) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            direction
                .orient(self.labels[b])
                .total_cmp(&direction.orient(self.labels[a]))
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }

    pub fn best(&self, direction: Direction) -> Option<(&Point, f64)> {
        self.top_k(1, direction)
            .first()
            .map(|&i| (&self.points[i], self.labels[i]))
    }

    /// Splits off a seeded random `fraction` as holdout: `(train, holdout)`.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_hold = (self.len() as f64 * fraction).round() as usize;
        let (hold, train) = order.split_at(n_hold.min(self.len()));
        (self.subset(train), self.subset(hold))
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        let mut out = Dataset::new();
        for i in sorted {
            out.push(self.points[i].clone(), self.labels[i], self.rounds[i]);
        }
        out
    }
}

/// Coefficient of determination of `predictions` against `labels`.
pub fn r_squared_of(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    if labels.len() < 2 {
        return Err(Error::InvalidArgument("R² needs at least two labels".into()));
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let ss_tot: f64 = labels.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument("R² undefined for zero label variance".into()));
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (y - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn r_squared(model: &Regressor, holdout: &Dataset) -> Result<f64> {
    let preds = model.predict(holdout.points())?;
    r_squared_of(&preds, holdout.labels())
}
