use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::error::{Error, Result};
use crate::space::Point;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MIN_TRAINING_POINTS: usize = 10;
const ARTIFACT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Mean squared error on standardized labels.
    Mse,
    /// Mean absolute percentage error on raw labels.
    Mape,
}

/// Fully-connected rectifier network settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    /// L2 penalty on weights (not biases), added to the gradient.
    #[serde(default)]
    pub weight_decay: f64,
    pub seed: u64,
}

impl RegressorConfig {
    /// Two hidden layers of width `max(64, 2 * dims)`, 300 epochs, batches of
    /// 32, weight decay 1e-2.
    pub fn for_dims(dims: usize) -> Self {
        let width = (2 * dims).max(64);
        RegressorConfig {
            hidden_layers: vec![width, width],
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 32,
            loss: Loss::Mse,
            weight_decay: 1e-2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument("hidden layer widths must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} outside (0, 1)",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument("weight decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `(x - shift) / scale` and back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    /// Standardizing map for `values`; zero spread keeps unit scale.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count().max(1) as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Affine {
            shift: mean,
            scale: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    #[inline]
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.shift) / self.scale
    }

    #[inline]
    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.scale + self.shift
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    // (inputs, outputs)
    w: Array2<f64>,
    b: Array1<f64>,
}

/// A trained feed-forward regressor over lattice points.
///
/// Inputs are the lattice indices, standardized per dimension; labels are
/// standardized as well and mapped back on prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    config: RegressorConfig,
    dims: usize,
    input: Vec<Affine>,
    output: Affine,
    layers: Vec<Dense>,
}

struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: i32,
}

pub fn train(data: &Dataset, cfg: &RegressorConfig) -> Result<Regressor> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if data.len() < MIN_TRAINING_POINTS {
        return Err(Error::InvalidArgument(format!(
            "training needs at least {MIN_TRAINING_POINTS} points, got {}",
            data.len()
        )));
    }
    if data.labels().iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidArgument("labels must be finite".into()));
    }
    let dims = data.points()[0].dims();
    if let Some(p) = data.points().iter().find(|p| p.dims() != dims) {
        return Err(Error::DimensionMismatch {
            expected: dims,
            actual: p.dims(),
        });
    }

    let input: Vec<Affine> = (0..dims)
        .map(|i| Affine::fit(data.points().iter().map(move |p| p.coords()[i] as f64)))
        .collect();
    let output = Affine::fit(data.labels().iter().copied());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Regressor {
        config: cfg.clone(),
        dims,
        input,
        output,
        layers: init_layers(dims, &cfg.hidden_layers, &mut rng),
    };

    let x = model.features(data.points());
    let y_raw = Array1::from(data.labels().to_vec());
    let y = y_raw.mapv(|v| output.normalize(v));

    let mut adam = AdamState {
        m_w: model.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
        v_w: model.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
        m_b: model.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        v_b: model.layers.iter().map(|l| Array1::zeros(l.b.len())).collect(),
        t: 0,
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let yb_raw = y_raw.select(Axis(0), chunk);
            model.step(&xb.view(), &yb, &yb_raw, &mut adam);
        }
    }
    Ok(model)
}

// He-uniform hidden layers; the output layer starts at zero so an untrained
// model predicts the label mean.
fn init_layers<R: Rng>(dims: usize, hidden: &[usize], rng: &mut R) -> Vec<Dense> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut fan_in = dims;
    for &width in hidden {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = Array2::from_shape_simple_fn((fan_in, width), || rng.gen_range(-bound..bound));
        layers.push(Dense {
            w,
            b: Array1::zeros(width),
        });
        fan_in = width;
    }
    layers.push(Dense {
        w: Array2::zeros((fan_in, 1)),
        b: Array1::zeros(1),
    });
    layers
}

impl Regressor {
    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn label_map(&self) -> Affine {
        self.output
    }

    fn features(&self, points: &[Point]) -> Array2<f64> {
        let mut x = Array2::zeros((points.len(), self.dims));
        for (mut row, p) in x.outer_iter_mut().zip(points) {
            for ((v, &c), a) in row.iter_mut().zip(p.coords()).zip(&self.input) {
                *v = a.normalize(c as f64);
            }
        }
        x
    }

    /// Hidden pre-activations and activations, plus the network output.
    fn forward(&self, x: &ArrayView2<f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
                acts.push(std::mem::replace(&mut a, z));
            } else {
                acts.push(a);
                return (acts, z.column(0).to_owned());
            }
        }
        unreachable!("network has an output layer")
    }

    fn step(
        &mut self,
        x: &ArrayView2<f64>,
        y: &Array1<f64>,
        y_raw: &Array1<f64>,
        adam: &mut AdamState,
    ) {
        let n = x.nrows() as f64;
        let (acts, out) = self.forward(x);
        let grad_out: Array1<f64> = match self.config.loss {
            Loss::Mse => (&out - y).mapv(|d| 2.0 * d / n),
            Loss::Mape => {
                let scale = self.output.scale;
                Zip::from(&out).and(y_raw).map_collect(|&z, &t| {
                    let pred = self.output.denormalize(z);
                    let denom = t.abs().max(1e-8);
                    (pred - t).signum() * scale / (denom * n)
                })
            }
        };
        let mut g = grad_out.insert_axis(Axis(1));
        adam.t += 1;
        let lr = self.config.learning_rate;
        let bc1 = 1.0 - ADAM_BETA1.powi(adam.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(adam.t);
        for l in (0..self.layers.len()).rev() {
            let a_prev = &acts[l];
            let mut gw = a_prev.t().dot(&g);
            if self.config.weight_decay > 0.0 {
                gw.scaled_add(self.config.weight_decay, &self.layers[l].w);
            }
            let gb = g.sum_axis(Axis(0));
            // Gradient for the layer below, through the rectifier (a > 0 iff z > 0).
            let g_prev = if l > 0 {
                let mut gp = g.dot(&self.layers[l].w.t());
                Zip::from(&mut gp).and(a_prev).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                Some(gp)
            } else {
                None
            };
            let layer = &mut self.layers[l];
            adam_update(&mut layer.w, &gw, &mut adam.m_w[l], &mut adam.v_w[l], lr, bc1, bc2);
            adam_update(&mut layer.b, &gb, &mut adam.m_b[l], &mut adam.v_b[l], lr, bc1, bc2);
            if let Some(gp) = g_prev {
                g = gp;
            }
        }
    }

    /// Predictions for `points`, in order.
    pub fn predict(&self, points: &[Point]) -> Result<Vec<f64>> {
        if let Some(p) = points.iter().find(|p| p.dims() != self.dims) {
            return Err(Error::DimensionMismatch {
                expected: self.dims,
                actual: p.dims(),
            });
        }
        if points.is_empty() {
            return Ok(Vec::new());
        }
        // Row at a time so results never depend on how callers batch.
        let x = self.features(points);
        Ok(x.outer_iter()
            .map(|row| {
                let row = row.insert_axis(Axis(0));
                let (_, out) = self.forward(&row);
                self.output.denormalize(out[0])
            })
            .collect())
    }

    /// Configured loss over `data`, in the units the optimizer sees.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        let preds = self.predict(data.points())?;
        let n = data.len().max(1) as f64;
        Ok(match self.config.loss {
            Loss::Mse => {
                preds
                    .iter()
                    .zip(data.labels())
                    .map(|(p, y)| (self.output.normalize(*p) - self.output.normalize(*y)).powi(2))
                    .sum::<f64>()
                    / n
            }
            Loss::Mape => {
                preds
                    .iter()
                    .zip(data.labels())
                    .map(|(p, y)| (p - y).abs() / y.abs().max(1e-8))
                    .sum::<f64>()
                    / n
            }
        })
    }

    pub fn to_json(&self) -> String {
        let artifact = Artifact {
            format: ARTIFACT_FORMAT,
            fingerprint: self.config.fingerprint(),
            config: self.config.clone(),
            dims: self.dims,
            input: self.input.clone(),
            output: self.output,
            layers: self
                .layers
                .iter()
                .map(|l| LayerArtifact {
                    inputs: l.w.nrows(),
                    outputs: l.w.ncols(),
                    weights: l.w.iter().copied().collect(),
                    bias: l.b.to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&artifact).expect("artifact serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: Artifact = serde_json::from_str(s)
            .map_err(|e| Error::InvalidArgument(format!("malformed model artifact: {e}")))?;
        if a.format != ARTIFACT_FORMAT {
            return Err(Error::InvalidArgument(format!("unsupported artifact format {}", a.format)));
        }
        if a.fingerprint != a.config.fingerprint() {
            return Err(Error::InvalidArgument("artifact fingerprint does not match its config".into()));
        }
        if a.input.len() != a.dims {
            return Err(Error::InvalidArgument("artifact input map has the wrong length".into()));
        }
        let mut fan_in = a.dims;
        let mut layers = Vec::with_capacity(a.layers.len());
        for l in a.layers {
            if l.inputs != fan_in {
                return Err(Error::InvalidArgument("artifact layer shapes do not chain".into()));
            }
            let w = Array2::from_shape_vec((l.inputs, l.outputs), l.weights)
                .map_err(|e| Error::InvalidArgument(format!("artifact layer: {e}")))?;
            if l.bias.len() != l.outputs {
                return Err(Error::InvalidArgument("artifact bias has the wrong length".into()));
            }
            fan_in = l.outputs;
            layers.push(Dense {
                w,
                b: Array1::from(l.bias),
            });
        }
        if fan_in != 1 || layers.is_empty() {
            return Err(Error::InvalidArgument("artifact must end in a single output".into()));
        }
        Ok(Regressor {
            config: a.config,
            dims: a.dims,
            input: a.input,
            output: a.output,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Loads an artifact, optionally insisting it was trained with `expected`.
    pub fn load(path: &Path, expected: Option<&RegressorConfig>) -> Result<Self> {
        let model = Self::from_json(&fs::read_to_string(path)?)?;
        if let Some(cfg) = expected {
            if cfg.fingerprint() != model.config.fingerprint() {
                return Err(Error::InvalidArgument(
                    "model artifact was trained with a different config".into(),
                ));
            }
        }
        Ok(model)
    }

    #[cfg(test)]
    fn first_layer_weights(&self) -> ndarray::ArrayView2<'_, f64> {
        self.layers[0].w.view()
    }
}

fn adam_update<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    });
}

#[derive(Serialize, Deserialize)]
struct Artifact {
    format: u32,
    fingerprint: String,
    config: RegressorConfig,
    dims: usize,
    input: Vec<Affine>,
    output: Affine,
    layers: Vec<LayerArtifact>,
}

#[derive(Serialize, Deserialize)]
struct LayerArtifact {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}
