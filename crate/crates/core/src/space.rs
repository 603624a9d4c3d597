//! Discretized search domains.
//!
//! A [`SearchSpace`] is a per-dimension bounded lattice. Points live on the
//! lattice as integer indices so that equality and hashing are exact; the
//! real-valued realization is reconstructed on demand as `lower + index * step`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of draws [`random_point`] makes before giving up.
pub const DEFAULT_REJECTION_BUDGET: usize = 10_000;

// Slack for floor((upper - lower) / step) when the quotient lands a hair
// under an integer, e.g. 10 / 0.1.
const LATTICE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    step: Vec<f64>,
    sizes: Vec<u32>,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, step: Vec<f64>) -> Result<Self> {
        let dims = lower.len();
        if dims == 0 {
            return Err(Error::InvalidSpace("at least one dimension is required".into()));
        }
        if upper.len() != dims || step.len() != dims {
            return Err(Error::InvalidSpace(format!(
                "bound lengths differ: lower {}, upper {}, step {}",
                dims,
                upper.len(),
                step.len()
            )));
        }
        let mut sizes = Vec::with_capacity(dims);
        for i in 0..dims {
            let (lo, hi, st) = (lower[i], upper[i], step[i]);
            if !(lo.is_finite() && hi.is_finite() && st.is_finite()) {
                return Err(Error::InvalidSpace(format!("dimension {i}: non-finite bound")));
            }
            if lo >= hi {
                return Err(Error::InvalidSpace(format!(
                    "dimension {i}: lower {lo} must be below upper {hi}"
                )));
            }
            if st <= 0.0 {
                return Err(Error::InvalidSpace(format!("dimension {i}: step {st} must be positive")));
            }
            let count = ((hi - lo) / st + LATTICE_SLACK).floor() + 1.0;
            if count < 2.0 || count > u32::MAX as f64 {
                return Err(Error::InvalidSpace(format!(
                    "dimension {i}: lattice size {count} out of range"
                )));
            }
            sizes.push(count as u32);
        }
        Ok(SearchSpace { lower, upper, step, sizes })
    }

    /// Same bounds and step in every dimension.
    pub fn uniform(dims: usize, lower: f64, upper: f64, step: f64) -> Result<Self> {
        Self::new(vec![lower; dims], vec![upper; dims], vec![step; dims])
    }

    pub fn dims(&self) -> usize {
        self.sizes.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn step(&self) -> &[f64] {
        &self.step
    }

    /// Number of lattice values along dimension `i`.
    pub fn size(&self, i: usize) -> u32 {
        self.sizes[i]
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    /// Real coordinate of lattice index `index` along dimension `i`.
    #[inline]
    pub fn value_at(&self, i: usize, index: u32) -> f64 {
        self.lower[i] + index as f64 * self.step[i]
    }

    pub fn realize(&self, p: &Point) -> Vec<f64> {
        p.coords
            .iter()
            .enumerate()
            .map(|(i, &idx)| self.value_at(i, idx))
            .collect()
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.dims() == self.dims() && p.coords.iter().zip(&self.sizes).all(|(&c, &n)| c < n)
    }

    /// Builds a point from raw indices, checking it lies on this lattice.
    pub fn point(&self, coords: Vec<u32>) -> Result<Point> {
        let p = Point { coords };
        if p.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: p.dims(),
            });
        }
        if !self.contains(&p) {
            return Err(Error::InvalidArgument(format!("{p:?} lies outside the lattice")));
        }
        Ok(p)
    }

    /// Projects a real vector onto the nearest lattice point.
    ///
    /// Out-of-range coordinates clamp to the nearest bound; exact midpoints
    /// round away from zero.
    pub fn snap(&self, v: &[f64]) -> Result<Point> {
        if v.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: v.len(),
            });
        }
        let coords = v
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let max = (self.sizes[i] - 1) as f64;
                let t = ((x - self.lower[i]) / self.step[i]).round();
                // NaN clamps to the lower bound.
                if t.is_nan() {
                    0
                } else {
                    t.clamp(0.0, max) as u32
                }
            })
            .collect();
        Ok(Point { coords })
    }
}

/// A position on a [`SearchSpace`] lattice.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<u32>,
}

impl Point {
    /// Wraps raw indices without bounds checking; see [`SearchSpace::point`].
    pub fn from_indices(coords: Vec<u32>) -> Self {
        Point { coords }
    }

    pub fn coords(&self) -> &[u32] {
        &self.coords
    }

    pub fn dims(&self) -> usize {
        self.coords.len()
    }

    pub(crate) fn coords_mut(&mut self) -> &mut [u32] {
        &mut self.coords
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.coords).finish()
    }
}

type Predicate = Arc<dyn Fn(&Point) -> bool + Send + Sync>;

/// Ordered list of feasibility predicates. The empty set accepts everything.
#[derive(Clone, Default)]
pub struct ConstraintSet {
    predicates: Vec<Predicate>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, predicate: impl Fn(&Point) -> bool + Send + Sync + 'static) -> Self {
        self.push(predicate);
        self
    }

    pub fn push(&mut self, predicate: impl Fn(&Point) -> bool + Send + Sync + 'static) {
        self.predicates.push(Arc::new(predicate));
    }

    pub fn len(&self) -> usize {
        self.predicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    pub fn accepts(&self, p: &Point) -> bool {
        self.predicates.iter().all(|pred| pred(p))
    }
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("predicates", &self.predicates.len())
            .finish()
    }
}

/// Uniform draw over lattice indices, rejection-sampled against `constraints`.
pub fn random_point<R: Rng + ?Sized>(
    space: &SearchSpace,
    constraints: &ConstraintSet,
    rng: &mut R,
) -> Result<Point> {
    random_point_with_budget(space, constraints, rng, DEFAULT_REJECTION_BUDGET)
}

pub fn random_point_with_budget<R: Rng + ?Sized>(
    space: &SearchSpace,
    constraints: &ConstraintSet,
    rng: &mut R,
    budget: usize,
) -> Result<Point> {
    for _ in 0..budget {
        let coords = space.sizes.iter().map(|&n| rng.gen_range(0..n)).collect();
        let p = Point { coords };
        if constraints.accepts(&p) {
            return Ok(p);
        }
    }
    Err(Error::Infeasible { tries: budget })
}
