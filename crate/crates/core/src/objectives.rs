//! Objective functions: synthetic benchmarks, product composition and the
//! common [`Objective`] interface.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// Maps a raw objective value into the search's internal maximization frame.
    #[inline]
    pub fn orient(self, y: f64) -> f64 {
        match self {
            Direction::Minimize => -y,
            Direction::Maximize => y,
        }
    }

    /// True when `a` is strictly better than `b`.
    #[inline]
    pub fn better(self, a: f64, b: f64) -> bool {
        self.orient(a) > self.orient(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnownOptimum {
    pub value: f64,
    pub point: Vec<f64>,
}

/// A deterministic black-box objective over real coordinates.
///
/// Implementations receive the lattice realization of a point.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn direction(&self) -> Direction {
        Direction::Minimize
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    /// Evaluates several points; the default evaluates them one by one.
    /// Remote objectives override this to pipeline requests.
    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.iter().map(|x| self.evaluate(x)).collect()
    }

    fn known_optimum(&self) -> Option<KnownOptimum> {
        None
    }
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn direction(&self) -> Direction {
        (**self).direction()
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        (**self).evaluate(x)
    }
    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        (**self).evaluate_batch(xs)
    }
    fn known_optimum(&self) -> Option<KnownOptimum> {
        (**self).known_optimum()
    }
}

pub fn ackley(x: &[f64]) -> f64 {
    const A: f64 = 20.0;
    const B: f64 = 0.2;
    const C: f64 = 2.0 * PI;
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cs = x.iter().map(|v| (C * v).cos()).sum::<f64>() / d;
    -A * (-B * sq.sqrt()).exp() - cs.exp() + A + E
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (w[0] - 1.0).powi(2))
        .sum()
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
            .sum::<f64>()
}

pub fn griewank(x: &[f64]) -> f64 {
    let sum = x.iter().map(|v| v * v).sum::<f64>() / 4000.0;
    let prod = x
        .iter()
        .enumerate()
        .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
        .product::<f64>();
    1.0 + sum - prod
}

/// Standard Schwefel form, `418.9829 d - sum x sin(sqrt|x|)`.
pub fn schwefel(x: &[f64]) -> f64 {
    418.9829 * x.len() as f64 - x.iter().map(|v| v * v.abs().sqrt().sin()).sum::<f64>()
}

pub const MICHALEWICZ_M: i32 = 10;

pub fn michalewicz(x: &[f64]) -> f64 {
    -x.iter()
        .enumerate()
        .map(|(i, v)| v.sin() * ((i + 1) as f64 * v * v / PI).sin().powi(2 * MICHALEWICZ_M))
        .sum::<f64>()
}

pub const SCHWEFEL_OPTIMIZER: f64 = 420.9687;

// Two-dimensional Michalewicz minimum (m = 10), refined by local search.
const MICHALEWICZ_2D: ([f64; 2], f64) = ([2.202905519833619, 1.5707963269216143], -1.8013034100985534);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Ackley,
    Rosenbrock,
    Rastrigin,
    Griewank,
    Schwefel,
    Michalewicz,
}

impl Benchmark {
    pub const ALL: [Benchmark; 6] = [
        Benchmark::Ackley,
        Benchmark::Rosenbrock,
        Benchmark::Rastrigin,
        Benchmark::Griewank,
        Benchmark::Schwefel,
        Benchmark::Michalewicz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Ackley => "ackley",
            Benchmark::Rosenbrock => "rosenbrock",
            Benchmark::Rastrigin => "rastrigin",
            Benchmark::Griewank => "griewank",
            Benchmark::Schwefel => "schwefel",
            Benchmark::Michalewicz => "michalewicz",
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Benchmark::Ackley => ackley(x),
            Benchmark::Rosenbrock => rosenbrock(x),
            Benchmark::Rastrigin => rastrigin(x),
            Benchmark::Griewank => griewank(x),
            Benchmark::Schwefel => schwefel(x),
            Benchmark::Michalewicz => michalewicz(x),
        }
    }

    pub fn min_dims(self) -> usize {
        match self {
            Benchmark::Rosenbrock => 2,
            _ => 1,
        }
    }

    /// Conventional domain `(lower, upper)` for this function.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            Benchmark::Schwefel => (-500.0, 500.0),
            Benchmark::Michalewicz => (0.0, PI),
            _ => (-5.0, 5.0),
        }
    }

    /// Global minimum and a minimizer, where one is known for `dims`.
    pub fn known_optimum(self, dims: usize) -> Option<KnownOptimum> {
        let at = |v: f64, value: f64| {
            Some(KnownOptimum {
                value,
                point: vec![v; dims],
            })
        };
        match self {
            Benchmark::Ackley | Benchmark::Rastrigin | Benchmark::Griewank => at(0.0, 0.0),
            Benchmark::Rosenbrock => at(1.0, 0.0),
            Benchmark::Schwefel => at(SCHWEFEL_OPTIMIZER, 0.0),
            Benchmark::Michalewicz if dims == 2 => Some(KnownOptimum {
                value: MICHALEWICZ_2D.1,
                point: MICHALEWICZ_2D.0.to_vec(),
            }),
            Benchmark::Michalewicz => None,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown benchmark `{s}`")))
    }
}

/// A benchmark function bound to a dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkObjective {
    kind: Benchmark,
    dims: usize,
}

impl BenchmarkObjective {
    pub fn new(kind: Benchmark, dims: usize) -> Result<Self> {
        if dims < kind.min_dims() {
            return Err(Error::InvalidArgument(format!(
                "{kind} needs at least {} dimensions, got {dims}",
                kind.min_dims()
            )));
        }
        Ok(BenchmarkObjective { kind, dims })
    }

    pub fn kind(&self) -> Benchmark {
        self.kind
    }

    pub fn dims(&self) -> usize {
        self.dims
    }
}

impl Objective for BenchmarkObjective {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                actual: x.len(),
            });
        }
        Ok(self.kind.eval(x))
    }

    fn known_optimum(&self) -> Option<KnownOptimum> {
        self.kind.known_optimum(self.dims)
    }
}

/// Adapts a closure into an [`Objective`].
pub struct FnObjective<F> {
    name: String,
    direction: Direction,
    optimum: Option<KnownOptimum>,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, direction: Direction, f: F) -> Self {
        FnObjective {
            name: name.into(),
            direction,
            optimum: None,
            f,
        }
    }

    pub fn with_optimum(mut self, optimum: KnownOptimum) -> Self {
        self.optimum = Some(optimum);
        self
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn direction(&self) -> Direction {
        self.direction
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
    fn known_optimum(&self) -> Option<KnownOptimum> {
        self.optimum.clone()
    }
}

/// Several targets collapsed into one by multiplication.
pub struct ProductObjective {
    name: String,
    direction: Direction,
    components: Vec<Box<dyn Objective>>,
}

impl ProductObjective {
    pub fn components(&self) -> &[Box<dyn Objective>] {
        &self.components
    }
}

pub fn product(components: Vec<Box<dyn Objective>>) -> Result<ProductObjective> {
    let direction = components
        .first()
        .map(|c| c.direction())
        .ok_or_else(|| Error::InvalidArgument("product of zero objectives".into()))?;
    if components.iter().any(|c| c.direction() != direction) {
        return Err(Error::InvalidArgument(
            "product components disagree on direction".into(),
        ));
    }
    let name = components
        .iter()
        .map(|c| c.name())
        .collect::<Vec<_>>()
        .join("*");
    Ok(ProductObjective {
        name,
        direction,
        components,
    })
}

impl Objective for ProductObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn direction(&self) -> Direction {
        self.direction
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.components
            .iter()
            .try_fold(1.0, |acc, c| Ok(acc * c.evaluate(x)?))
    }

    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = vec![1.0; xs.len()];
        for c in &self.components {
            for (o, y) in out.iter_mut().zip(c.evaluate_batch(xs)?) {
                *o *= y;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{random_point, ConstraintSet, SearchSpace};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ackley_values() {
        for d in [1, 2, 7, 50] {
            assert_abs_diff_eq!(ackley(&vec![0.0; d]), 0.0, epsilon = 1e-12);
        }
        // -20 e^{-0.2} - e^{cos 2pi} + 20 + e
        let expected = -20.0 * (-0.2f64).exp() + 20.0;
        assert_abs_diff_eq!(ackley(&[1.0, 1.0]), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(ackley(&[1.0, 1.0]), 3.62538, epsilon = 1e-5);
        assert_eq!(ackley(&[-1.0]), ackley(&[1.0]));
    }

    #[test]
    fn rosenbrock_values() {
        assert_eq!(rosenbrock(&[1.0; 6]), 0.0);
        assert_eq!(rosenbrock(&[0.0, 0.0]), 1.0);
        // 100 * (1.2 - 1.21)^2 + (1 - 1.1)^2 = 0.01 + 0.01
        assert_abs_diff_eq!(rosenbrock(&[1.1, 1.2]), 0.02, epsilon = 1e-12);
        assert!(BenchmarkObjective::new(Benchmark::Rosenbrock, 1).is_err());
    }

    #[test]
    fn rastrigin_values() {
        assert_eq!(rastrigin(&[0.0; 4]), 0.0);
        assert_abs_diff_eq!(rastrigin(&[1.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rastrigin(&[0.5, 0.0]), 20.25, epsilon = 1e-12);
    }

    #[test]
    fn other_benchmarks_at_optimum() {
        assert_eq!(griewank(&[0.0; 5]), 0.0);
        assert_abs_diff_eq!(schwefel(&[SCHWEFEL_OPTIMIZER]), 0.0, epsilon = 1e-3);
        let (x, v) = MICHALEWICZ_2D;
        assert_abs_diff_eq!(michalewicz(&x), v, epsilon = 1e-12);
    }

    // Grid search over [0, pi]^2, then repeated local grid refinement around the
    // incumbent. Independent of the stored constant.
    #[test]
    fn michalewicz_2d_minimum_by_grid_refinement() {
        let n = 400;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..=n {
            for j in 0..=n {
                let x = [PI * i as f64 / n as f64, PI * j as f64 / n as f64];
                let v = michalewicz(&x);
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
        let mut h = PI / n as f64;
        for _ in 0..30 {
            let c = best.1;
            for i in -10..=10 {
                for j in -10..=10 {
                    let x = [c[0] + h * i as f64 / 10.0, c[1] + h * j as f64 / 10.0];
                    let v = michalewicz(&x);
                    if v < best.0 {
                        best = (v, x);
                    }
                }
            }
            h /= 2.0;
        }
        assert_abs_diff_eq!(best.0, -1.8013, epsilon = 1e-4);
        assert_abs_diff_eq!(best.0, MICHALEWICZ_2D.1, epsilon = 1e-9);
    }

    #[test]
    fn benchmark_known_optima_evaluate_to_their_value() {
        for b in Benchmark::ALL {
            let dims = 2;
            let opt = b.known_optimum(dims).unwrap();
            let tol = if b == Benchmark::Schwefel { 1e-3 } else { 1e-9 };
            assert_abs_diff_eq!(b.eval(&opt.point), opt.value, epsilon = tol);
        }
    }

    #[test]
    fn schwefel_snapped_to_fine_lattice() {
        let s = SearchSpace::uniform(3, -500.0, 500.0, 1e-4).unwrap();
        let p = s.snap(&[SCHWEFEL_OPTIMIZER; 3]).unwrap();
        assert_abs_diff_eq!(schwefel(&s.realize(&p)), 0.0, epsilon = 1e-3);
    }

    #[test]
    fn no_random_lattice_point_beats_known_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for b in Benchmark::ALL {
            let dims = if b == Benchmark::Michalewicz { 2 } else { 6 };
            let (lo, hi) = b.default_bounds();
            let s = SearchSpace::uniform(dims, lo, hi, (hi - lo) / 1000.0).unwrap();
            let min = b.known_optimum(dims).unwrap().value;
            for _ in 0..10_000 {
                let p = random_point(&s, &ConstraintSet::new(), &mut rng).unwrap();
                assert!(b.eval(&s.realize(&p)) >= min, "{b} below its optimum");
            }
        }
    }

    #[test]
    fn product_composition() {
        let two: Box<dyn Objective> = Box::new(FnObjective::new("two", Direction::Minimize, |_: &[f64]| 2.0));
        let three: Box<dyn Objective> = Box::new(FnObjective::new("three", Direction::Minimize, |_: &[f64]| 3.0));
        let p = product(vec![two, three]).unwrap();
        assert_eq!(p.evaluate(&[0.3]).unwrap(), 6.0);
        assert_eq!(p.name(), "two*three");

        let r = BenchmarkObjective::new(Benchmark::Rastrigin, 2).unwrap();
        let single = product(vec![Box::new(r)]).unwrap();
        assert_eq!(single.evaluate(&[0.3, 1.2]).unwrap(), rastrigin(&[0.3, 1.2]));

        let zero_at_origin = product(vec![
            Box::new(BenchmarkObjective::new(Benchmark::Ackley, 2).unwrap()),
            Box::new(BenchmarkObjective::new(Benchmark::Rosenbrock, 2).unwrap()),
        ])
        .unwrap();
        assert_eq!(zero_at_origin.evaluate(&[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            zero_at_origin.evaluate_batch(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap(),
            vec![0.0, ackley(&[0.0, 0.0]) * 1.0]
        );
    }

    #[test]
    fn product_errors() {
        assert!(product(vec![]).is_err());
        let mixed: Vec<Box<dyn Objective>> = vec![
            Box::new(FnObjective::new("a", Direction::Minimize, |_: &[f64]| 1.0)),
            Box::new(FnObjective::new("b", Direction::Maximize, |_: &[f64]| 1.0)),
        ];
        assert!(product(mixed).is_err());
    }

    #[test]
    fn names_round_trip() {
        for b in Benchmark::ALL {
            assert_eq!(b.name().parse::<Benchmark>().unwrap(), b);
        }
        assert!("sphere".parse::<Benchmark>().is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariance(x in proptest::collection::vec(-5.0f64..5.0, 2..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut y = x.clone();
            y.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((ackley(&x) - ackley(&y)).abs() < 1e-9);
            prop_assert!((rastrigin(&x) - rastrigin(&y)).abs() < 1e-9);
        }
    }

    #[test]
    fn griewank_product_term_depends_on_position() {
        let a = griewank(&[3.0, 0.0]);
        let b = griewank(&[0.0, 3.0]);
        assert!((a - b).abs() > 1e-3);
    }
}
