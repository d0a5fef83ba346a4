//! Temporally encoded spiking networks: KL training on expected P lifetimes
//! and first-spike / k-spike inference.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::behavior::{g, g_prime, sample_kth_spike, ActivationFit};
use crate::dataio::Encoded;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weights: Array2<f64>,
    /// Per-neuron constant drive added to `Wᵀh` (a synapse fed by a fixed 1 V line).
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub activation: ActivationFit,
    /// Hidden time-to-voltage normalization (s per V).
    pub t_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub t1: f64,
    pub t2: f64,
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec { t1: 1e-9, t2: 300e-9 }
    }
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0 && self.t1 < self.t2 && self.t2.is_finite()) {
            return Err(Error::invalid(format!(
                "targets need 0 < t1 < t2, got t1={}, t2={}",
                self.t1, self.t2
            )));
        }
        Ok(())
    }

    pub fn lambda(&self, label: usize, n_classes: usize) -> Vec<f64> {
        (0..n_classes)
            .map(|k| if k == label { self.t1 } else { self.t2 })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
}

/// Update rule applied to the batch-mean gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// `w ← w − α·∂L/∂w`.
    #[default]
    Sgd,
    /// Per-weight step normalized by running gradient moments.
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            seed: 1,
            init_scale: 1.0,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init_scale must be finite and non-negative"));
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0) {
                return Err(Error::invalid("adam needs beta1, beta2 in [0, 1) and epsilon > 0"));
            }
        }
        Ok(())
    }
}

/// Normalization that maps hidden times `[t1, t2]` onto a span equal to the
/// activation window width.
pub fn default_t_norm(fit: &ActivationFit, targets: &TargetSpec) -> f64 {
    (targets.t2 - targets.t1) / (fit.v_max - fit.v_min)
}

impl Network {
    /// Weights `U(−a, a)` with `a = init_scale/√fan_in`; biases at `vref`.
    pub fn init(
        sizes: &[usize],
        activation: ActivationFit,
        t_norm: f64,
        init_scale: f64,
        seed: u64,
    ) -> Result<Network> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (l, w) in sizes.windows(2).enumerate() {
            let a = init_scale / (w[0] as f64).sqrt();
            let mut rng = seed::stream(seed, "init", l as u64);
            let weights = if a > 0.0 {
                let u = Uniform::new(-a, a).map_err(|e| Error::invalid(e.to_string()))?;
                Array2::from_shape_simple_fn((w[0], w[1]), || u.sample(&mut rng))
            } else {
                Array2::zeros((w[0], w[1]))
            };
            layers.push(Layer {
                weights,
                bias: Array1::from_elem(w[1], activation.vref),
            });
        }
        let net = Network {
            layers,
            activation,
            t_norm,
        };
        net.validate()?;
        Ok(net)
    }

    /// Network with the given weights and zero biases.
    pub fn from_weights(weights: Vec<Array2<f64>>, activation: ActivationFit, t_norm: f64) -> Result<Network> {
        let layers = weights
            .into_iter()
            .map(|w| Layer {
                bias: Array1::zeros(w.ncols()),
                weights: w,
            })
            .collect();
        let net = Network {
            layers,
            activation,
            t_norm,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        if !(self.t_norm > 0.0 && self.t_norm.is_finite()) {
            return Err(Error::invalid("t_norm must be positive"));
        }
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::Shape(format!("layer {l}: bias length mismatch")));
            }
            if l > 0 && self.layers[l - 1].fan_out() != layer.fan_in() {
                return Err(Error::Shape(format!(
                    "layer {l}: fan-in {} does not match previous fan-out {}",
                    layer.fan_in(),
                    self.layers[l - 1].fan_out()
                )));
            }
            if !layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("layer {l}: non-finite weight")));
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].fan_in()];
        s.extend(self.layers.iter().map(Layer::fan_out));
        s
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, Layer::fan_out)
    }

    /// Total number of spiking devices (all non-input layers).
    pub fn n_neurons(&self) -> usize {
        self.layers.iter().map(Layer::fan_out).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub v1: Array1<f64>,
    pub z: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    pub v1: Array2<f64>,
    pub z: Array2<f64>,
}

fn check_input(net: &Network, n: usize) -> Result<()> {
    if n != net.n_inputs() {
        return Err(Error::Shape(format!(
            "input length {n} does not match fan-in {}",
            net.n_inputs()
        )));
    }
    Ok(())
}

fn activate(v1: &Array2<f64>, fit: &ActivationFit) -> Array2<f64> {
    v1.mapv(|v| g(v, fit))
}

/// Forward pass for a batch (one sample per row).
pub fn forward_batch(net: &Network, inputs: ArrayView2<f64>) -> Result<Vec<BatchState>> {
    check_input(net, inputs.ncols())?;
    let mut out: Vec<BatchState> = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let v1 = if l == 0 {
            inputs.dot(&layer.weights) + &layer.bias
        } else {
            let h = &out[l - 1].z / net.t_norm;
            h.dot(&layer.weights) + &layer.bias
        };
        let z = activate(&v1, &net.activation);
        out.push(BatchState { v1, z });
    }
    Ok(out)
}

pub fn forward(net: &Network, input: ArrayView1<f64>) -> Result<Vec<LayerState>> {
    let batch = input.insert_axis(Axis(0));
    Ok(forward_batch(net, batch)?
        .into_iter()
        .map(|s| LayerState {
            v1: s.v1.row(0).to_owned(),
            z: s.z.row(0).to_owned(),
        })
        .collect())
}

fn check_positive(z: f64, lambda: f64) -> Result<()> {
    if !(z > 0.0 && lambda > 0.0) {
        return Err(Error::invalid(format!(
            "lifetimes must be positive (z={z}, lambda={lambda})"
        )));
    }
    Ok(())
}

#[inline]
fn kl(z: f64, lambda: f64) -> f64 {
    (z / lambda).ln() + lambda / z - 1.0
}

#[inline]
fn kl_dz(z: f64, lambda: f64) -> f64 {
    1.0 / z - lambda / (z * z)
}

/// KL divergence of an exponential with mean `lambda` from one with mean `z`.
pub fn kl_loss(z: f64, lambda: f64) -> Result<f64> {
    check_positive(z, lambda)?;
    Ok(kl(z, lambda))
}

/// ∂[`kl_loss`]/∂z.
pub fn kl_grad(z: f64, lambda: f64) -> Result<f64> {
    check_positive(z, lambda)?;
    Ok(kl_dz(z, lambda))
}

fn check_label(net: &Network, label: usize) -> Result<()> {
    if label >= net.n_outputs() {
        return Err(Error::invalid(format!(
            "label {label} outside {} classes",
            net.n_outputs()
        )));
    }
    Ok(())
}

pub fn loss_total(net: &Network, input: ArrayView1<f64>, label: usize, targets: &TargetSpec) -> Result<f64> {
    check_label(net, label)?;
    let states = forward(net, input)?;
    let z = &states.last().expect("validated network").z;
    let lambda = targets.lambda(label, net.n_outputs());
    z.iter().zip(&lambda).map(|(&z, &l)| kl_loss(z, l)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

/// Summed loss and summed gradients over a batch.
pub fn backward_batch(
    net: &Network,
    inputs: ArrayView2<f64>,
    labels: &[u8],
    targets: &TargetSpec,
) -> Result<(f64, Gradients)> {
    if labels.len() != inputs.nrows() {
        return Err(Error::Shape("inputs and labels differ in length".into()));
    }
    for &y in labels {
        check_label(net, y as usize)?;
    }
    let states = forward_batch(net, inputs)?;
    let fit = &net.activation;
    let n_layers = net.layers.len();
    let out = &states[n_layers - 1];

    let mut loss = 0.0;
    let mut delta = Array2::zeros(out.z.raw_dim());
    for (r, &y) in labels.iter().enumerate() {
        for k in 0..net.n_outputs() {
            let lambda = if k == y as usize { targets.t1 } else { targets.t2 };
            let z = out.z[[r, k]];
            loss += kl(z, lambda);
            delta[[r, k]] = kl_dz(z, lambda) * g_prime(out.v1[[r, k]], fit);
        }
    }

    let mut gw = Vec::with_capacity(n_layers);
    let mut gb = Vec::with_capacity(n_layers);
    for l in (0..n_layers).rev() {
        let h_prev = if l == 0 {
            inputs.to_owned()
        } else {
            &states[l - 1].z / net.t_norm
        };
        gw.push(h_prev.t().dot(&delta));
        gb.push(delta.sum_axis(Axis(0)));
        if l > 0 {
            let mut dh = delta.dot(&net.layers[l].weights.t());
            Zip::from(&mut dh)
                .and(&states[l - 1].v1)
                .for_each(|d, &v| *d *= g_prime(v, fit) / net.t_norm);
            delta = dh;
        }
    }
    gw.reverse();
    gb.reverse();
    Ok((loss, Gradients { weights: gw, bias: gb }))
}

pub fn backward(net: &Network, input: ArrayView1<f64>, label: usize, targets: &TargetSpec) -> Result<Gradients> {
    check_label(net, label)?;
    let labels = [label as u8];
    Ok(backward_batch(net, input.insert_axis(Axis(0)), &labels, targets)?.1)
}

struct Moments {
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Moments {
    fn new(net: &Network) -> Self {
        let zeros = Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            bias: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        };
        Moments {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

fn adam_update<D: ndarray::Dimension>(
    w: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    scale: f64,
    (lr, beta1, beta2, epsilon, t): (f64, f64, f64, f64, i32),
) {
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
        let g = g * scale;
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
    });
}

fn apply_update(net: &mut Network, grads: &Gradients, n: usize, config: &TrainConfig, moments: &mut Moments) {
    let scale = 1.0 / n as f64;
    match config.optimizer {
        Optimizer::Sgd => {
            let step = config.learning_rate * scale;
            for (layer, (gw, gb)) in net.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
                layer.weights.scaled_add(-step, gw);
                layer.bias.scaled_add(-step, gb);
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            moments.t += 1;
            let hp = (config.learning_rate, beta1, beta2, epsilon, moments.t);
            for (l, layer) in net.layers.iter_mut().enumerate() {
                adam_update(
                    &mut layer.weights,
                    &grads.weights[l],
                    &mut moments.m.weights[l],
                    &mut moments.v.weights[l],
                    scale,
                    hp,
                );
                adam_update(
                    &mut layer.bias,
                    &grads.bias[l],
                    &mut moments.m.bias[l],
                    &mut moments.v.bias[l],
                    scale,
                    hp,
                );
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: Option<f64>,
}

/// Mini-batch descent on the mean per-sample loss.
pub fn train(
    net: &Network,
    data: &Encoded,
    test: Option<&Encoded>,
    targets: &TargetSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Network, Vec<EpochMetrics>)> {
    config.validate()?;
    targets.validate()?;
    net.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_input(net, data.inputs.ncols())?;

    let mut net = net.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut xb = Array2::zeros((config.batch_size, net.n_inputs()));
    let mut yb = Vec::with_capacity(config.batch_size);
    let mut moments = Moments::new(&net);

    for epoch in 0..config.epochs {
        let mut rng = seed::stream(config.seed, "shuffle", epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut xs = xb.slice_mut(s![..chunk.len(), ..]);
            yb.clear();
            for (r, &i) in chunk.iter().enumerate() {
                xs.row_mut(r).assign(&data.inputs.row(i));
                yb.push(data.labels[i]);
            }
            let (loss, grads) = backward_batch(&net, xs.view(), &yb, targets)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("loss {loss}"),
                });
            }
            total += loss;
            apply_update(&mut net, &grads, chunk.len(), config, &mut moments);
            if !net
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
            {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: "non-finite weight after update".into(),
                });
            }
        }
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            train_loss: total / data.len() as f64,
            test_acc: test.map(|t| accuracy_software(&net, t)).transpose()?,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok((net, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub predicted: usize,
    /// Output-layer expected lifetimes (s).
    pub z: Vec<f64>,
    /// Output-layer k-th spike times (s), stochastic mode only.
    pub spike_times: Option<Vec<f64>>,
    /// Spikes consumed per layer, input layer excluded.
    pub spikes_used: Vec<usize>,
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v < best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn infer_software(net: &Network, input: ArrayView1<f64>) -> Result<InferenceResult> {
    let states = forward(net, input)?;
    let z = states.last().expect("validated network").z.to_vec();
    Ok(InferenceResult {
        predicted: argmin(z.iter().copied()),
        z,
        spike_times: None,
        spikes_used: net.layers.iter().map(Layer::fan_out).collect(),
    })
}

pub fn accuracy_software(net: &Network, data: &Encoded) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(1000) {
        let end = (start + 1000).min(data.len());
        let states = forward_batch(net, data.inputs.slice(s![start..end, ..]))?;
        let z = &states.last().expect("validated network").z;
        for (r, row) in z.rows().into_iter().enumerate() {
            if argmin(row.iter().copied()) == data.labels[start + r] as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Spike counts read per neuron in stochastic inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeBudget {
    /// Output neurons race to their k-th spike.
    pub output: usize,
    /// Hidden neurons charge their capacitor over this many P dwells.
    pub hidden: usize,
}

impl SpikeBudget {
    pub fn new(output: usize, hidden: usize) -> Result<Self> {
        if output == 0 || hidden == 0 {
            return Err(Error::invalid("spike counts must be at least 1"));
        }
        Ok(SpikeBudget { output, hidden })
    }
}

/// Hidden activation from `n` sampled P dwells of mean `z`: mean dwell over `t_norm`.
fn sample_hidden<R: Rng + ?Sized>(z: f64, n: usize, t_norm: f64, rng: &mut R) -> f64 {
    let mut t = 0.0;
    for _ in 0..n {
        t += z * rng.sample::<f64, _>(rand_distr::Exp1);
    }
    t / (n as f64 * t_norm)
}

/// Stochastic inference continuing from first-layer pre-activations `v1`.
pub fn infer_stochastic_from<R: Rng + ?Sized>(
    net: &Network,
    first_v1: ArrayView1<f64>,
    budget: SpikeBudget,
    rng: &mut R,
) -> Result<InferenceResult> {
    let fit = &net.activation;
    let mut v1 = first_v1.to_owned();
    let mut spikes_used = Vec::with_capacity(net.layers.len());
    for layer in &net.layers[1..] {
        let h: Array1<f64> = v1.mapv(|v| sample_hidden(g(v, fit), budget.hidden, net.t_norm, rng));
        spikes_used.push(budget.hidden * h.len());
        v1 = h.dot(&layer.weights) + &layer.bias;
    }
    let z: Vec<f64> = v1.iter().map(|&v| g(v, fit)).collect();
    let times: Vec<f64> = z
        .iter()
        .map(|&z| sample_kth_spike(z, fit.tau_ap_fixed, budget.output, rng))
        .collect();
    spikes_used.push(budget.output * z.len());
    Ok(InferenceResult {
        predicted: argmin(times.iter().copied()),
        z,
        spike_times: Some(times),
        spikes_used,
    })
}

/// k-spike inference: hidden neurons report their first spike time, output
/// neurons race to their k-th spike.
pub fn infer_stochastic(net: &Network, input: ArrayView1<f64>, k: usize, seed: u64) -> Result<InferenceResult> {
    infer_stochastic_budget(net, input, SpikeBudget::new(k, 1)?, seed)
}

pub fn infer_stochastic_budget(
    net: &Network,
    input: ArrayView1<f64>,
    budget: SpikeBudget,
    seed: u64,
) -> Result<InferenceResult> {
    check_input(net, input.len())?;
    let l0 = &net.layers[0];
    let v1 = input.dot(&l0.weights) + &l0.bias;
    infer_stochastic_from(net, v1.view(), budget, &mut seed::from_seed(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticSummary {
    pub budget: SpikeBudget,
    pub seed: u64,
    pub accuracy: f64,
    pub correct: usize,
    pub n: usize,
    /// Mean spikes per neuron per inference, per layer.
    pub spikes_per_neuron: Vec<f64>,
}

/// Stochastic accuracy over a dataset; image `i` draws from
/// `stream(seed, "infer", i)`.
pub fn evaluate_stochastic(
    net: &Network,
    data: &Encoded,
    budget: SpikeBudget,
    master_seed: u64,
) -> Result<StochasticSummary> {
    if data.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    check_input(net, data.inputs.ncols())?;
    let l0 = &net.layers[0];
    let mut correct = 0;
    let mut spikes = vec![0usize; net.layers.len()];
    for start in (0..data.len()).step_by(1000) {
        let end = (start + 1000).min(data.len());
        let v1 = data.inputs.slice(s![start..end, ..]).dot(&l0.weights) + &l0.bias;
        for (r, row) in v1.rows().into_iter().enumerate() {
            let i = start + r;
            let mut rng = seed::stream(master_seed, "infer", i as u64);
            let res = infer_stochastic_from(net, row, budget, &mut rng)?;
            if res.predicted == data.labels[i] as usize {
                correct += 1;
            }
            for (acc, s) in spikes.iter_mut().zip(&res.spikes_used) {
                *acc += s;
            }
        }
    }
    let n = data.len();
    let spikes_per_neuron = spikes
        .iter()
        .zip(&net.layers)
        .map(|(&s, l)| s as f64 / (l.fan_out() * n) as f64)
        .collect();
    Ok(StochasticSummary {
        budget,
        seed: master_seed,
        accuracy: correct as f64 / n as f64,
        correct,
        n,
        spikes_per_neuron,
    })
}

/// Mean spikes per neuron per inference, all layers pooled.
pub fn sparsity_report(results: &[InferenceResult], net: &Network) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::invalid("no inference results"));
    }
    let total: usize = results.iter().flat_map(|r| r.spikes_used.iter()).sum();
    Ok(total as f64 / (net.n_neurons() * results.len()) as f64)
}

/// Checkpoint document: weights row-major with explicit shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: ActivationFit,
    pub t_norm: f64,
    pub targets: TargetSpec,
    pub train: TrainConfig,
    /// Pixel-to-voltage window `[v_lo, v_hi]` the network was trained on.
    #[serde(default)]
    pub input_window: Option<[f64; 2]>,
    pub config_hash: String,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(net: &Network, targets: TargetSpec, train: TrainConfig, config_hash: String) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            sizes: net.sizes(),
            weights: net.layers.iter().map(|l| l.weights.iter().copied().collect()).collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
            activation: net.activation,
            t_norm: net.t_norm,
            targets,
            train,
            input_window: None,
            config_hash,
        }
    }

    pub fn network(&self) -> Result<Network> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let n = self.sizes.len().saturating_sub(1);
        if n == 0 || self.weights.len() != n || self.biases.len() != n {
            return Err(Error::Shape("checkpoint layer count mismatch".into()));
        }
        let layers = (0..n)
            .map(|l| {
                let weights = Array2::from_shape_vec((self.sizes[l], self.sizes[l + 1]), self.weights[l].clone())
                    .map_err(|e| Error::Shape(format!("layer {l}: {e}")))?;
                Ok(Layer {
                    weights,
                    bias: Array1::from(self.biases[l].clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Network {
            layers,
            activation: self.activation,
            t_norm: self.t_norm,
        };
        net.validate()?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn fit() -> ActivationFit {
        ActivationFit {
            tau0: 10e-9,
            vref: -0.2,
            vc: 0.05,
            v_min: -0.5,
            v_max: 0.1,
            tau_ap_fixed: 1e-9,
            residual: 0.0,
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(3e-9, 3e-9).unwrap(), 0.0);
        assert!((kl_loss(2.0, 1.0).unwrap() - (2f64.ln() - 0.5)).abs() < 1e-15);
        assert_eq!(kl_grad(1.0, 1.0).unwrap(), 0.0);
        assert!((kl_grad(2.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(kl_loss(0.0, 1.0).is_err());
        assert!(kl_grad(1.0, -1.0).is_err());
    }

    #[test]
    fn single_neuron_at_reference() {
        let f = fit();
        let net = Network::from_weights(vec![array![[1.0]]], f, 1e-9).unwrap();
        let st = forward(&net, array![f.vref].view()).unwrap();
        assert_eq!(st[0].z[0], f.tau0);
    }

    #[test]
    fn zero_weights_give_uniform_z() {
        let net = Network::from_weights(vec![Array2::zeros((4, 3))], fit(), 1e-9).unwrap();
        let st = forward(&net, array![0.1, -0.2, 0.3, 0.0].view()).unwrap();
        assert!(st[0].v1.iter().all(|&v| v == 0.0));
        assert!(st[0].z.iter().all(|&z| z == st[0].z[0]));
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = Network::from_weights(vec![Array2::zeros((4, 3))], fit(), 1e-9).unwrap();
        assert!(matches!(forward(&net, array![0.0, 1.0].view()), Err(Error::Shape(_))));
        assert!(Network::from_weights(vec![Array2::zeros((4, 3)), Array2::zeros((2, 2))], fit(), 1e-9).is_err());
    }

    #[test]
    fn argmin_ties_lowest_index() {
        assert_eq!(argmin([5e-9, 1e-9, 9e-9]), 1);
        assert_eq!(argmin([2.0, 1.0, 1.0]), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let f = fit();
        let net = Network::init(&[4, 3], f, 1e-9, 1.0, 5).unwrap();
        let data = Encoded {
            inputs: Array2::from_elem((6, 4), -0.1),
            labels: vec![0, 1, 2, 0, 1, 2],
        };
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 4,
            seed: 1,
            init_scale: 1.0,
            optimizer: Optimizer::adam(),
        };
        let (trained, hist) = train(&net, &data, None, &TargetSpec::default(), &cfg, |_| {}).unwrap();
        assert_eq!(trained, net);
        assert_eq!(hist.len(), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Network::init(&[5, 4, 3], fit(), 2e-9, 1.0, 9).unwrap();
        let ck = Checkpoint::new(&net, TargetSpec::default(), TrainConfig::default(), "h".into());
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.network().unwrap(), net);
    }

    #[test]
    fn stochastic_spike_accounting() {
        let net = Network::init(&[5, 4, 3], fit(), 2e-9, 1.0, 9).unwrap();
        let x = array![0.0, -0.1, -0.2, -0.3, -0.4];
        let r = infer_stochastic(&net, x.view(), 3, 11).unwrap();
        assert_eq!(r.spikes_used, vec![4, 9]);
        assert_eq!(r, infer_stochastic(&net, x.view(), 3, 11).unwrap());
        let s = sparsity_report(&[r.clone(), r], &net).unwrap();
        assert!((s - 13.0 / 7.0).abs() < 1e-12);
    }
}
