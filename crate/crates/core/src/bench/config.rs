//! TOML experiment configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::driver::{Ablations, RunConfig, Scenario};
use crate::error::{Error, Result};
use crate::evalproto::{external_objective, Transport};
use crate::objectives::{product, Benchmark, BenchmarkObjective, Direction, Objective};
use crate::sampler::SampleRatio;
use crate::search::DucbParams;
use crate::space::SearchSpace;
use crate::surrogate::{Loss, RegressorConfig};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum PerDim {
    One(f64),
    Each(Vec<f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegressor {
    hidden_layers: Option<Vec<usize>>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    loss: Option<Loss>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    objective: Option<String>,
    components: Option<Vec<String>>,
    direction: Option<Direction>,
    dims: Option<usize>,
    lower: Option<PerDim>,
    upper: Option<PerDim>,
    step: Option<PerDim>,
    scenario: Option<Scenario>,
    init_points: Option<usize>,
    batch: Option<usize>,
    rounds: Option<usize>,
    eval_budget: Option<usize>,
    chains: Option<usize>,
    c0: Option<f64>,
    rollouts: Option<usize>,
    mutation_fraction: Option<[f64; 2]>,
    sample_ratio: Option<[u32; 2]>,
    repeats: Option<usize>,
    seed_base: Option<u64>,
    output: Option<PathBuf>,
    parallelism: Option<usize>,
    tol: Option<f64>,
    target: Option<f64>,
    holdout: Option<f64>,
    external: Option<String>,
    inflight: Option<usize>,
    timeout_ms: Option<u64>,
    ablations: Option<Ablations>,
    regressor: Option<RawRegressor>,
}

/// What gets optimized.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectiveSpec {
    Benchmark { name: Benchmark },
    Product { components: Vec<Benchmark> },
    External { transport: String, label: String, direction: Direction },
}

/// A fully resolved experiment. Every default is filled in so the manifest
/// records exactly what ran.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub objective: ObjectiveSpec,
    pub dims: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: Vec<f64>,
    pub run: RunConfig,
    pub repeats: usize,
    pub seed_base: u64,
    pub output: PathBuf,
    pub parallelism: usize,
    pub inflight: usize,
    pub timeout_ms: u64,
}

// Name of the key a TOML error points at, recovered from the source line.
fn offending_key(src: &str, err: &toml::de::Error) -> String {
    let msg = err.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    if let Some(span) = err.span() {
        let line_start = src[..span.start].rfind('\n').map_or(0, |i| i + 1);
        let line = &src[line_start..];
        let line = line.lines().next().unwrap_or("");
        if let Some(eq) = line.find('=') {
            let key = line[..eq].trim();
            if !key.is_empty() {
                return key.trim_matches('"').to_string();
            }
        }
        if let Some(sec) = line.trim().strip_prefix('[') {
            return sec.trim_end_matches(']').trim().to_string();
        }
    }
    "<config>".to_string()
}

fn broadcast(key: &str, v: Option<PerDim>, dims: usize, default: f64) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![default; dims]),
        Some(PerDim::One(x)) => Ok(vec![x; dims]),
        Some(PerDim::Each(xs)) if xs.len() == dims => Ok(xs),
        Some(PerDim::Each(xs)) => Err(Error::config(
            key,
            format!("has {} entries but dims is {dims}", xs.len()),
        )),
    }
}

fn benchmark(key: &str, name: &str) -> Result<Benchmark> {
    name.parse()
        .map_err(|_| Error::config(key, format!("unknown benchmark {name:?}")))
}

impl BenchConfig {
    /// Parses and resolves a config file. A relative `output` is taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&src)?;
        if cfg.output.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(src)
            .map_err(|e| Error::config(offending_key(src, &e), e.message().to_string()))?;
        Self::resolve(raw)
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let dims = raw.dims.ok_or_else(|| Error::config("dims", "is required"))?;
        if dims == 0 {
            return Err(Error::config("dims", "must be at least 1"));
        }
        let objective = match (&raw.external, &raw.objective, &raw.components) {
            (Some(t), label, None) => {
                t.parse::<Transport>().map_err(|e| Error::config("external", e.to_string()))?;
                ObjectiveSpec::External {
                    transport: t.clone(),
                    label: label.clone().unwrap_or_else(|| "external".into()),
                    direction: raw.direction.unwrap_or(Direction::Minimize),
                }
            }
            (None, Some(name), None) => ObjectiveSpec::Benchmark {
                name: benchmark("objective", name)?,
            },
            (None, None, Some(names)) => {
                if names.is_empty() {
                    return Err(Error::config("components", "must not be empty"));
                }
                ObjectiveSpec::Product {
                    components: names
                        .iter()
                        .map(|n| benchmark("components", n))
                        .collect::<Result<_>>()?,
                }
            }
            (None, None, None) => {
                return Err(Error::config("objective", "one of objective, components or external is required"))
            }
            (_, Some(_), Some(_)) | (Some(_), None, Some(_)) => {
                return Err(Error::config("components", "conflicts with objective/external"))
            }
        };
        if raw.direction.is_some() && !matches!(objective, ObjectiveSpec::External { .. }) {
            return Err(Error::config("direction", "only applies to external objectives"));
        }
        let kinds: Vec<Benchmark> = match &objective {
            ObjectiveSpec::Benchmark { name } => vec![*name],
            ObjectiveSpec::Product { components } => components.clone(),
            ObjectiveSpec::External { .. } => vec![],
        };
        for k in &kinds {
            if dims < k.min_dims() {
                return Err(Error::config("dims", format!("{k} needs at least {}", k.min_dims())));
            }
        }
        let (def_lo, def_hi) = kinds.first().map_or((-5.0, 5.0), |k| k.default_bounds());
        let lower = broadcast("lower", raw.lower, dims, def_lo)?;
        let upper = broadcast("upper", raw.upper, dims, def_hi)?;
        let step = broadcast("step", raw.step, dims, 0.1)?;
        SearchSpace::new(lower.clone(), upper.clone(), step.clone())
            .map_err(|e| Error::config("step", e.to_string()))?;

        let scenario = raw.scenario.unwrap_or(Scenario::Exact);
        let eval_budget = raw
            .eval_budget
            .ok_or_else(|| Error::config("eval_budget", "is required"))?;
        let mut run = RunConfig::new(scenario, eval_budget, raw.seed_base.unwrap_or(0));
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = raw.$f { run.$f = v; } )* };
        }
        set!(init_points, batch, rounds, chains, tol, holdout);
        run.target = raw.target;
        let defaults = DucbParams::default();
        run.ducb = DucbParams {
            c0: raw.c0.unwrap_or(defaults.c0),
            rollouts: raw.rollouts.unwrap_or(defaults.rollouts),
            mutation_fraction: raw
                .mutation_fraction
                .map_or(defaults.mutation_fraction, |[a, b]| (a, b)),
        };
        if let Some([s, v]) = raw.sample_ratio {
            run.sample_ratio = SampleRatio::new(s, v).map_err(|e| Error::config("sample_ratio", e.to_string()))?;
        }
        run.ablations = raw.ablations.unwrap_or_default();
        let mut reg = RegressorConfig::for_dims(dims);
        if let Some(r) = raw.regressor {
            if let Some(v) = r.hidden_layers {
                reg.hidden_layers = v;
            }
            if let Some(v) = r.learning_rate {
                reg.learning_rate = v;
            }
            if let Some(v) = r.epochs {
                reg.epochs = v;
            }
            if let Some(v) = r.batch_size {
                reg.batch_size = v;
            }
            if let Some(v) = r.loss {
                reg.loss = v;
            }
        }
        run.regressor = Some(reg);
        run.validate()?;

        let repeats = raw.repeats.unwrap_or(5);
        if repeats == 0 {
            return Err(Error::config("repeats", "must be at least 1"));
        }
        let parallelism = raw.parallelism.unwrap_or(1);
        if parallelism == 0 {
            return Err(Error::config("parallelism", "must be at least 1"));
        }
        let inflight = raw.inflight.unwrap_or(1);
        if inflight == 0 {
            return Err(Error::config("inflight", "must be at least 1"));
        }
        let timeout_ms = raw.timeout_ms.unwrap_or(30_000);
        if timeout_ms == 0 {
            return Err(Error::config("timeout_ms", "must be positive"));
        }
        Ok(BenchConfig {
            objective,
            dims,
            lower,
            upper,
            step,
            run,
            repeats,
            seed_base: raw.seed_base.unwrap_or(0),
            output: raw.output.unwrap_or_else(|| PathBuf::from("results")),
            parallelism,
            inflight,
            timeout_ms,
        })
    }

    pub fn space(&self) -> Result<SearchSpace> {
        SearchSpace::new(self.lower.clone(), self.upper.clone(), self.step.clone())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|i| self.seed_base + i).collect()
    }

    pub fn objective_name(&self) -> String {
        match &self.objective {
            ObjectiveSpec::Benchmark { name } => name.to_string(),
            ObjectiveSpec::Product { components } => {
                components.iter().map(|c| c.name()).collect::<Vec<_>>().join("*")
            }
            ObjectiveSpec::External { label, .. } => label.clone(),
        }
    }

    /// A fresh objective instance; external ones open their own session.
    pub fn build_objective(&self) -> Result<Box<dyn Objective>> {
        Ok(match &self.objective {
            ObjectiveSpec::Benchmark { name } => Box::new(BenchmarkObjective::new(*name, self.dims)?),
            ObjectiveSpec::Product { components } => Box::new(product(
                components
                    .iter()
                    .map(|&c| BenchmarkObjective::new(c, self.dims).map(|o| Box::new(o) as Box<dyn Objective>))
                    .collect::<Result<_>>()?,
            )?),
            ObjectiveSpec::External { transport, label, direction } => {
                let t: Transport = transport.parse()?;
                Box::new(
                    external_objective(&t, self.dims, Duration::from_millis(self.timeout_ms))?
                        .with_inflight(self.inflight)
                        .with_direction(*direction)
                        .with_name(label.clone()),
                )
            }
        })
    }

    /// Convergence target: explicit `target`, else the known optimum.
    pub fn target(&self) -> Option<f64> {
        self.run.target.or_else(|| match &self.objective {
            ObjectiveSpec::Benchmark { name } => name.known_optimum(self.dims).map(|o| o.value),
            ObjectiveSpec::Product { components } => {
                // Product of non-negative minima at a shared optimizer is zero.
                let all_zero = components
                    .iter()
                    .all(|c| c.known_optimum(self.dims).is_some_and(|o| o.value == 0.0));
                all_zero.then_some(0.0)
            }
            ObjectiveSpec::External { .. } => None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces the objective with an external evaluator that serves the
    /// same function, keeping its convergence target.
    pub fn set_external(&mut self, transport: &str) -> Result<()> {
        transport.parse::<Transport>().map_err(|e| Error::config("external", e.to_string()))?;
        let label = self.objective_name();
        self.run.target = self.target();
        self.objective = ObjectiveSpec::External {
            transport: transport.to_string(),
            label,
            direction: Direction::Minimize,
        };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
objective = "rastrigin"
dims = 4
eval_budget = 1000
init_points = 50
"#;

    fn key_of(src: &str) -> String {
        match BenchConfig::parse(src).unwrap_err() {
            Error::Config { key, .. } => key,
            e => panic!("not a config error: {e}"),
        }
    }

    #[test]
    fn defaults_are_resolved() {
        let c = BenchConfig::parse(BASIC).unwrap();
        assert_eq!(c.lower, vec![-5.0; 4]);
        assert_eq!(c.step, vec![0.1; 4]);
        assert_eq!(c.repeats, 5);
        assert_eq!(c.run.batch, 20);
        assert_eq!(c.run.sample_ratio, SampleRatio::default());
        assert_eq!(c.run.regressor.as_ref().unwrap().hidden_layers, vec![64, 64]);
        assert_eq!(c.target(), Some(0.0));
        assert_eq!(c.seeds(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn per_dimension_bounds() {
        let c = BenchConfig::parse(&format!("{BASIC}lower = [-1, -2, -3, -4]\nupper = 1.0\n")).unwrap();
        assert_eq!(c.lower, vec![-1.0, -2.0, -3.0, -4.0]);
        assert_eq!(c.upper, vec![1.0; 4]);
        assert_eq!(key_of(&format!("{BASIC}lower = [-1, -2]\n")), "lower");
    }

    #[test]
    fn diagnostics_name_the_key() {
        assert_eq!(key_of(&format!("{BASIC}bogus = 1\n")), "bogus");
        assert_eq!(key_of(&format!("{BASIC}batch = \"many\"\n")), "batch");
        assert_eq!(key_of(&format!("{BASIC}repeats = 0\n")), "repeats");
        assert_eq!(key_of(&format!("{BASIC}chains = 0\n")), "chains");
        assert_eq!(key_of(&format!("{BASIC}[ablations]\nwhatever = true\n")), "whatever");
        assert_eq!(key_of("objective = \"nope\"\ndims = 2\neval_budget = 10\n"), "objective");
        assert_eq!(key_of("objective = \"ackley\"\neval_budget = 10\n"), "dims");
        assert_eq!(key_of("objective = \"ackley\"\ndims = 2\neval_budget = 10\n"), "eval_budget");
        assert_eq!(key_of(&format!("{BASIC}external = \"udp:x\"\n")), "external");
    }

    #[test]
    fn external_override_keeps_the_target() {
        let mut c = BenchConfig::parse(BASIC).unwrap();
        c.set_external("cmd:dots serve rastrigin --dims 4").unwrap();
        assert_eq!(c.objective_name(), "rastrigin");
        assert_eq!(c.target(), Some(0.0));
        assert!(c.set_external("udp:nowhere").is_err());
    }

    #[test]
    fn product_and_ablations() {
        let c = BenchConfig::parse(
            "components = [\"ackley\", \"rastrigin\"]\ndims = 3\neval_budget = 500\ninit_points = 10\n[ablations]\ngreedy = true\n",
        )
        .unwrap();
        assert_eq!(c.objective_name(), "ackley*rastrigin");
        assert!(c.run.ablations.greedy && !c.run.ablations.no_top_visit);
        assert_eq!(c.build_objective().unwrap().evaluate(&[0.0; 3]).unwrap(), 0.0);
        assert_eq!(c.target(), Some(0.0));
    }

    #[test]
    fn hash_tracks_content() {
        let a = BenchConfig::parse(BASIC).unwrap();
        let b = BenchConfig::parse(&format!("{BASIC}c0 = 0.5\n")).unwrap();
        let c = BenchConfig::parse(&format!("{BASIC}c0 = 0.25\n")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
