//! Fully connected policy network, trained from scratch on a mean-squared
//! imitation loss with Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::io;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Per-dimension standardization of inputs and the scalar output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_mean: f64,
    pub output_scale: f64,
}

impl Normalization {
    pub fn identity(inputs: usize) -> Self {
        Normalization {
            input_mean: vec![0.0; inputs],
            input_scale: vec![1.0; inputs],
            output_mean: 0.0,
            output_scale: 1.0,
        }
    }

    /// Mean and standard deviation from a dataset; degenerate scales map to 1.
    pub fn fit(inputs: &[Vec<f64>], targets: &[f64]) -> Self {
        let n = inputs.len() as f64;
        let dim = inputs[0].len();
        let mut input_mean = vec![0.0; dim];
        let mut input_scale = vec![0.0; dim];
        for x in inputs {
            for (m, v) in input_mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        for x in inputs {
            for ((s, m), v) in input_scale.iter_mut().zip(&input_mean).zip(x) {
                *s += (v - m).powi(2) / n;
            }
        }
        let fix = |s: f64| if s.sqrt() > 1e-12 { s.sqrt() } else { 1.0 };
        let input_scale = input_scale.into_iter().map(fix).collect();
        let output_mean = targets.iter().sum::<f64>() / n;
        let output_var = targets
            .iter()
            .map(|t| (t - output_mean).powi(2))
            .sum::<f64>()
            / n;
        Normalization {
            input_mean,
            input_scale,
            output_mean,
            output_scale: fix(output_var),
        }
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn denormalize_input(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    pub fn normalize_output(&self, y: f64) -> f64 {
        (y - self.output_mean) / self.output_scale
    }

    pub fn denormalize_output(&self, z: f64) -> f64 {
        z * self.output_scale + self.output_mean
    }
}

/// One affine layer; `weights` is row-major `outputs x inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub normalization: Normalization,
}

/// Hidden layer widths used for the cart-pole policy.
pub const CARTPOLE_LAYERS: [usize; 6] = [4, 17, 17, 17, 17, 1];

impl MlpWeights {
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        MlpWeights {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            activation: Activation::Tanh,
            normalization: Normalization::identity(layer_sizes[0]),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(layer_sizes);
        for (layer, sizes) in w.layers.iter_mut().zip(layer_sizes.windows(2)) {
            let s = (6.0 / (sizes[0] + sizes[1]) as f64).sqrt();
            for v in layer.weights.iter_mut() {
                *v = rng.gen_range(-s..s);
            }
        }
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layers.len() + 1 != self.layer_sizes.len() {
            return Err(Error::Shape(format!(
                "{} layers for sizes {:?}",
                self.layers.len(),
                self.layer_sizes
            )));
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return Err(Error::Shape("policy output must be scalar".into()));
        }
        for (l, w) in self.layers.iter().zip(self.layer_sizes.windows(2)) {
            if l.weights.len() != w[0] * w[1] || l.biases.len() != w[1] {
                return Err(Error::Shape(format!(
                    "layer {}x{} has {} weights",
                    w[1],
                    w[0],
                    l.weights.len()
                )));
            }
        }
        let norm = &self.normalization;
        if norm.input_mean.len() != self.layer_sizes[0]
            || norm.input_scale.len() != self.layer_sizes[0]
        {
            return Err(Error::Shape(
                "normalization width differs from input layer".into(),
            ));
        }
        let finite = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("network weights"));
        }
        Ok(())
    }

    /// Network output on an already-normalized input.
    pub fn forward_normalized(&self, z: &[f64]) -> f64 {
        let mut a = z.to_vec();
        let last = self.layers.len() - 1;
        for (idx, (layer, sizes)) in self
            .layers
            .iter()
            .zip(self.layer_sizes.windows(2))
            .enumerate()
        {
            let (fan_in, fan_out) = (sizes[0], sizes[1]);
            let mut next = layer.biases.clone();
            for (o, out) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                *out += row.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>();
            }
            if idx < last {
                for v in next.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            debug_assert_eq!(next.len(), fan_out);
            a = next;
        }
        a[0]
    }

    /// Policy output in Newtons for a raw input vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.layer_sizes[0] {
            return Err(Error::Shape(format!(
                "input of width {} for layer {}",
                x.len(),
                self.layer_sizes[0]
            )));
        }
        let z = self.normalization.normalize_input(x);
        Ok(self
            .normalization
            .denormalize_output(self.forward_normalized(&z)))
    }

    fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    fn set_params_flat(&mut self, flat: &[f64]) {
        let mut i = 0;
        for l in self.layers.iter_mut() {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v = flat[i];
                i += 1;
            }
        }
    }

    /// Squared error `(f(z) - y)^2` and its gradient over all parameters, in
    /// the flat order weights-then-biases per layer.
    pub fn loss_and_gradient(&self, z: &[f64], y: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.parameter_count()];
        let mut ws = Workspace::new(self);
        let loss = self.accumulate_gradient(z, y, 1.0, &mut grad, &mut ws);
        (loss, grad)
    }

    /// Forward pass that keeps every layer's activations in `ws`.
    fn forward_ws(&self, z: &[f64], ws: &mut Workspace) -> f64 {
        let last = self.layers.len() - 1;
        ws.acts[0].copy_from_slice(z);
        for (idx, layer) in self.layers.iter().enumerate() {
            let fan_in = self.layer_sizes[idx];
            let (head, tail) = ws.acts.split_at_mut(idx + 1);
            let prev = &head[idx];
            let next = &mut tail[0];
            next.copy_from_slice(&layer.biases);
            for (o, out) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                *out += row.iter().zip(prev.iter()).map(|(w, x)| w * x).sum::<f64>();
            }
            if idx < last {
                for v in next.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
        }
        ws.acts[self.layers.len()][0]
    }

    fn accumulate_gradient(
        &self,
        z: &[f64],
        y: f64,
        weight: f64,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let err = self.forward_ws(z, ws) - y;
        ws.delta[0] = 2.0 * err * weight;
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let fan_in = self.layer_sizes[idx];
            let fan_out = self.layer_sizes[idx + 1];
            let input = &ws.acts[idx];
            let base = ws.offsets[idx];
            let n_weights = layer.weights.len();
            for o in 0..fan_out {
                let d = ws.delta[o];
                let g = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (gi, x) in g.iter_mut().zip(input.iter()) {
                    *gi += d * x;
                }
                grad[base + n_weights + o] += d;
            }
            if idx > 0 {
                let back = &mut ws.back[..fan_in];
                back.iter_mut().for_each(|b| *b = 0.0);
                for o in 0..fan_out {
                    let d = ws.delta[o];
                    let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                    for (b, w) in back.iter_mut().zip(row) {
                        *b += d * w;
                    }
                }
                for (b, a) in back.iter_mut().zip(input.iter()) {
                    *b *= self.activation.derivative_from_output(*a);
                }
                ws.delta[..fan_in].copy_from_slice(back);
            }
        }
        err * err
    }
}

/// Scratch buffers for backpropagation, reused across samples.
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    back: Vec<f64>,
    /// Start of each layer's parameters in the flat order.
    offsets: Vec<usize>,
}

impl Workspace {
    fn new(w: &MlpWeights) -> Self {
        let widest = *w.layer_sizes.iter().max().expect("non-empty layer sizes");
        let mut offsets = Vec::with_capacity(w.layers.len());
        let mut off = 0;
        for l in &w.layers {
            offsets.push(off);
            off += l.weights.len() + l.biases.len();
        }
        Workspace {
            acts: w.layer_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            delta: vec![0.0; widest],
            back: vec![0.0; widest],
            offsets,
        }
    }
}

/// Policy output for a cart-pole state.
pub fn forward(w: &MlpWeights, s: &State) -> Result<f64> {
    w.predict(s.as_slice())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// When set, the step size decays geometrically to this value at the
    /// last epoch.
    #[serde(default)]
    pub final_learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            final_learning_rate: Some(1e-5),
            epochs: 50_000,
            batch_size: 100,
            seed: 0,
            layer_sizes: CARTPOLE_LAYERS.to_vec(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.final_learning_rate.map_or(true, |lr| lr > 0.0)
            && self.epochs >= 1
            && self.batch_size >= 1
            && self.layer_sizes.len() >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid training config {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: MlpWeights,
    /// Full-dataset normalized MSE after each epoch.
    pub loss_history: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().unwrap_or(&f64::NAN)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Mean squared error on normalized targets over a whole dataset.
pub fn normalized_mse(w: &MlpWeights, inputs: &[Vec<f64>], targets: &[f64]) -> f64 {
    let norm = &w.normalization;
    inputs
        .iter()
        .zip(targets)
        .map(|(x, y)| {
            let z = norm.normalize_input(x);
            (w.forward_normalized(&z) - norm.normalize_output(*y)).powi(2)
        })
        .sum::<f64>()
        / inputs.len() as f64
}

/// Supervised training on `(input, label)` pairs.
pub fn train(inputs: &[Vec<f64>], targets: &[f64], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::EmptyDataset);
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("training labels"));
    }
    if inputs.iter().any(|x| x.len() != cfg.layer_sizes[0]) {
        return Err(Error::Shape(
            "training input width differs from input layer".into(),
        ));
    }
    let mut weights = MlpWeights::init(&cfg.layer_sizes, cfg.seed);
    weights.normalization = Normalization::fit(inputs, targets);
    let norm = weights.normalization.clone();
    let zs: Vec<Vec<f64>> = inputs.iter().map(|x| norm.normalize_input(x)).collect();
    let ys: Vec<f64> = targets.iter().map(|y| norm.normalize_output(*y)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..zs.len()).collect();
    let batch = cfg.batch_size.min(zs.len());
    let mut params = weights.params_flat();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut grad = vec![0.0; params.len()];
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut ws = Workspace::new(&weights);

    let decay = match cfg.final_learning_rate {
        Some(end) if cfg.epochs > 1 => {
            (end / cfg.learning_rate).powf(1.0 / (cfg.epochs - 1) as f64)
        }
        _ => 1.0,
    };
    for epoch in 0..cfg.epochs {
        adam.lr = cfg.learning_rate * decay.powi(epoch as i32);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                weights.accumulate_gradient(&zs[i], ys[i], scale, &mut grad, &mut ws);
            }
            adam.step(&mut params, &grad);
            weights.set_params_flat(&params);
        }
        let loss = zs
            .iter()
            .zip(&ys)
            .map(|(z, y)| (weights.forward_ws(z, &mut ws) - y).powi(2))
            .sum::<f64>()
            / zs.len() as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
        loss_history.push(loss);
    }
    Ok(TrainOutcome {
        weights,
        loss_history,
    })
}

/// Largest relative difference between backpropagation and central finite
/// differences (step `h`) of the squared error at one sample.
pub fn gradient_check(w: &MlpWeights, z: &[f64], y: f64, h: f64) -> f64 {
    let (_, analytic) = w.loss_and_gradient(z, y);
    let base = w.params_flat();
    let mut probe = w.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.set_params_flat(&p);
        let up = (probe.forward_normalized(z) - y).powi(2);
        p[i] = base[i] - h;
        probe.set_params_flat(&p);
        let down = (probe.forward_normalized(z) - y).powi(2);
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// On-disk weights with the training setup that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub weights: MlpWeights,
    pub train_config: TrainConfig,
    /// SHA-256 of the training pairs.
    pub dataset_fingerprint: String,
    pub final_loss: f64,
    pub provenance: String,
    pub config_hash: String,
}

impl WeightsFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: WeightsFile = io::read_json(path)?;
        file.weights.validate()?;
        Ok(file)
    }
}

/// Stable fingerprint of a training set (bit patterns of every value).
pub fn dataset_fingerprint(inputs: &[Vec<f64>], targets: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(inputs.len() * 40);
    for (x, y) in inputs.iter().zip(targets) {
        for v in x.iter().chain(std::iter::once(y)) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    io::sha256_hex(&bytes)
}
