//! Picks the batch sent for ground-truth evaluation out of a search phase.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{NodeStats, RolloutRecord};
use crate::space::Point;
use crate::surrogate::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    TopScore,
    TopVisit,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<Point>,
    pub origin: Vec<Origin>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.origin.iter().filter(|&&o| o == origin).count()
    }
}

/// Score and visit weights of the batch split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRatio {
    pub score_parts: u32,
    pub visit_parts: u32,
}

impl Default for SampleRatio {
    fn default() -> Self {
        SampleRatio {
            score_parts: 5,
            visit_parts: 1,
        }
    }
}

impl SampleRatio {
    pub const TOP_K: SampleRatio = SampleRatio {
        score_parts: 1,
        visit_parts: 0,
    };

    pub fn new(score_parts: u32, visit_parts: u32) -> Result<Self> {
        if score_parts == 0 && visit_parts == 0 {
            return Err(Error::InvalidArgument("sample ratio cannot be 0:0".into()));
        }
        Ok(SampleRatio {
            score_parts,
            visit_parts,
        })
    }

    /// Visit-ranked slots in a batch of `batch`: at least one whenever
    /// `visit_parts > 0`, none otherwise.
    pub fn visit_slots(&self, batch: usize) -> usize {
        if self.visit_parts == 0 {
            return 0;
        }
        let total = (self.score_parts + self.visit_parts) as usize;
        (batch * self.visit_parts as usize / total).max(1).min(batch)
    }
}

type Ranking = fn(&(&Point, &NodeStats), &(&Point, &NodeStats)) -> Ordering;

fn by_score(a: &(&Point, &NodeStats), b: &(&Point, &NodeStats)) -> Ordering {
    b.1.value
        .total_cmp(&a.1.value)
        .then(b.1.visits.cmp(&a.1.visits))
        .then(a.0.cmp(b.0))
}

fn by_visits(a: &(&Point, &NodeStats), b: &(&Point, &NodeStats)) -> Ordering {
    b.1.visits
        .cmp(&a.1.visits)
        .then(b.1.value.total_cmp(&a.1.value))
        .then(a.0.cmp(b.0))
}

/// Top-scored nodes first, then the most visited ones, skipping anything
/// already labeled or already chosen. Returns fewer than `batch` points when
/// candidates run out.
pub fn top_visit_sample(
    record: &RolloutRecord,
    dataset: &Dataset,
    batch: usize,
    ratio: SampleRatio,
) -> Result<SampleBatch> {
    if record.visited.is_empty() {
        return Err(Error::InvalidArgument("cannot sample from an empty rollout record".into()));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be at least 1".into()));
    }
    let visit_slots = ratio.visit_slots(batch);
    let score_slots = batch - visit_slots;

    let candidates: Vec<(&Point, &NodeStats)> = record
        .visited
        .iter()
        .filter(|(p, _)| !dataset.contains(p))
        .collect();
    let mut chosen: HashSet<Point> = HashSet::with_capacity(batch);
    let mut out = SampleBatch::default();
    let mut ranked = candidates;
    for (order, slots, origin) in [
        (by_score as Ranking, score_slots, Origin::TopScore),
        (by_visits as Ranking, visit_slots, Origin::TopVisit),
    ] {
        ranked.sort_by(order);
        let mut taken = 0;
        for (p, _) in &ranked {
            if taken == slots {
                break;
            }
            if chosen.insert((*p).clone()) {
                out.points.push((*p).clone());
                out.origin.push(origin);
                taken += 1;
            }
        }
    }
    Ok(out)
}
