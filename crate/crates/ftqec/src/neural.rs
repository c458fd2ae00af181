//! Feedforward neural decoder trained to supplement a baseline recovery.
//!
//! Two disjoint heads read the syndrome bits of a corpus sample and each
//! emit two logits, a 1-hot choice between "leave the baseline recovery
//! alone" and "apply the logical operator on top of it". The X head
//! predicts the logical-X supplement bit `b1`, the Z head predicts `b2`,
//! and the shared loss is the sum of the two softmax cross-entropies
//! averaged over a mini-batch. Everything here is plain `f64` dense
//! arithmetic: forward, backprop, four first-order optimizers, a training
//! loop with early stopping, and a hyperparameter search harness.

use std::fmt;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{Dataset, Sample, SampleGeometry};

/// Bumped when the model container layout changes.
pub const MODEL_VERSION: u32 = 1;

/// Denominator guard inside the adaptive-rate updates.
pub const SMOOTHING: f64 = 1e-8;

const MODEL_MAGIC: &str = "ftqec-model";

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("input of width {got} fed to a head expecting {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample geometry {got_x}+{got_z} does not match the net's inputs")]
    GeometryMismatch { got_x: usize, got_z: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("hyperparameter {name} = {value} outside its allowed range")]
    BadHyperparam { name: &'static str, value: f64 },
    #[error("model bytes do not parse: {0}")]
    Format(String),
}

/// Which syndrome bits each head reads: its own error type's block, or the
/// concatenation of both blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Split,
    Joint,
}

impl InputMode {
    pub fn id(self) -> &'static str {
        match self {
            InputMode::Split => "split",
            InputMode::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Option<InputMode> {
        match s {
            "split" => Some(InputMode::Split),
            "joint" => Some(InputMode::Joint),
            _ => None,
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Layer widths shared by both heads; outputs are fixed at two logits per
/// head. At most three hidden layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetShape {
    pub x_inputs: usize,
    pub z_inputs: usize,
    pub hidden: Vec<usize>,
    pub mode: InputMode,
}

impl NetShape {
    pub fn new(geometry: SampleGeometry, mode: InputMode, hidden: Vec<usize>) -> NetShape {
        assert!(hidden.len() <= 3, "at most three hidden layers");
        assert!(hidden.iter().all(|&h| h >= 1), "empty hidden layer");
        let (x_inputs, z_inputs) = match mode {
            InputMode::Split => (geometry.x_bits, geometry.z_bits),
            InputMode::Joint => {
                let both = geometry.x_bits + geometry.z_bits;
                (both, both)
            }
        };
        NetShape { x_inputs, z_inputs, hidden, mode }
    }

    fn matches(&self, geometry: SampleGeometry) -> bool {
        *self == NetShape::new(geometry, self.mode, self.hidden.clone())
    }

    /// Full width chain of one head: input, hidden layers, two logits.
    fn sizes(&self, head: usize) -> Vec<usize> {
        let input = if head == 0 { self.x_inputs } else { self.z_inputs };
        let mut v = vec![input];
        v.extend_from_slice(&self.hidden);
        v.push(2);
        v
    }
}

/// Weight matrix (fan-in by fan-out) and bias vector of one affine layer.
/// Gradients and optimizer accumulators reuse the same shape pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Layer {
        Layer { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }
}

/// Dual-head network: `heads[0]` reads the X-relevant bits and scores the
/// logical-X supplement, `heads[1]` likewise for Z. Hidden layers apply a
/// rectifier, the final layer is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNet {
    pub shape: NetShape,
    pub heads: [Vec<Layer>; 2],
}

impl FeedforwardNet {
    /// Gaussian weights of the given standard deviation, zero biases.
    pub fn init(shape: NetShape, std: f64, rng: &mut impl Rng) -> FeedforwardNet {
        let normal = Normal::new(0.0, std).expect("finite nonnegative std");
        let heads = [0, 1].map(|h| {
            let sizes = shape.sizes(h);
            sizes
                .windows(2)
                .map(|io| Layer {
                    w: Array2::from_shape_simple_fn((io[0], io[1]), || normal.sample(rng)),
                    b: Array1::zeros(io[1]),
                })
                .collect()
        });
        FeedforwardNet { shape, heads }
    }

    /// All-zero parameters: every logit is zero, ties resolve to "no
    /// supplement", so this net reproduces the bare baseline decoder.
    pub fn zeros(shape: NetShape) -> FeedforwardNet {
        let heads = [0, 1].map(|h| {
            let sizes = shape.sizes(h);
            sizes.windows(2).map(|io| Layer::zeros(io[0], io[1])).collect()
        });
        FeedforwardNet { shape, heads }
    }

    fn zero_mirror(&self) -> [Vec<Layer>; 2] {
        [0, 1].map(|h| {
            self.heads[h]
                .iter()
                .map(|l| Layer::zeros(l.w.nrows(), l.w.ncols()))
                .collect()
        })
    }
}

/// Gradient of the loss with respect to every parameter.
#[derive(Debug, Clone)]
pub struct Grads {
    pub heads: [Vec<Layer>; 2],
}

/// Inputs and label bits for a contiguous run of samples. Row `i` of each
/// input matrix holds sample `i`'s bits as 0.0/1.0 values.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    pub b1: Vec<bool>,
    pub b2: Vec<bool>,
}

impl Batch {
    /// Assemble the rows selected by `idx` under the shape's input mode.
    pub fn gather(
        shape: &NetShape,
        geometry: SampleGeometry,
        samples: &[Sample],
        idx: &[u32],
    ) -> Result<Batch, NeuralError> {
        if !shape.matches(geometry) {
            return Err(NeuralError::GeometryMismatch {
                got_x: geometry.x_bits,
                got_z: geometry.z_bits,
            });
        }
        let n = idx.len();
        let mut x = Array2::zeros((n, shape.x_inputs));
        let mut z = Array2::zeros((n, shape.z_inputs));
        let mut b1 = Vec::with_capacity(n);
        let mut b2 = Vec::with_capacity(n);
        for (row, &i) in idx.iter().enumerate() {
            let s = &samples[i as usize];
            match shape.mode {
                InputMode::Split => {
                    for j in 0..geometry.x_bits {
                        x[[row, j]] = s.x_bit(j) as u8 as f64;
                    }
                    for j in 0..geometry.z_bits {
                        z[[row, j]] = s.z_bit(j) as u8 as f64;
                    }
                }
                InputMode::Joint => {
                    for j in 0..geometry.x_bits {
                        let v = s.x_bit(j) as u8 as f64;
                        x[[row, j]] = v;
                        z[[row, j]] = v;
                    }
                    for j in 0..geometry.z_bits {
                        let v = s.z_bit(j) as u8 as f64;
                        x[[row, geometry.x_bits + j]] = v;
                        z[[row, geometry.x_bits + j]] = v;
                    }
                }
            }
            b1.push(s.b1);
            b2.push(s.b2);
        }
        Ok(Batch { x, z, b1, b2 })
    }

    pub fn from_all(
        shape: &NetShape,
        geometry: SampleGeometry,
        samples: &[Sample],
    ) -> Result<Batch, NeuralError> {
        let idx: Vec<u32> = (0..samples.len() as u32).collect();
        Batch::gather(shape, geometry, samples, &idx)
    }

    pub fn len(&self) -> usize {
        self.b1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b1.is_empty()
    }
}

/// Post-activation values of every layer; the last entry holds the logits.
fn head_pass(layers: &[Layer], input: &Array2<f64>) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let prev = if l == 0 { input } else { &acts[l - 1] };
        let mut a = prev.dot(&layer.w) + &layer.b;
        if l + 1 < layers.len() {
            a.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(a);
    }
    acts
}

/// Logits of both heads for a single sample.
pub fn forward(
    net: &FeedforwardNet,
    x_bits: &[f64],
    z_bits: &[f64],
) -> Result<([f64; 2], [f64; 2]), NeuralError> {
    for (got, expected) in [(x_bits.len(), net.shape.x_inputs), (z_bits.len(), net.shape.z_inputs)] {
        if got != expected {
            return Err(NeuralError::ShapeMismatch { expected, got });
        }
    }
    let row = |bits: &[f64]| Array2::from_shape_vec((1, bits.len()), bits.to_vec()).unwrap();
    let out = [0, 1].map(|h| {
        let acts = head_pass(&net.heads[h], &row(if h == 0 { x_bits } else { z_bits }));
        let logits = acts.last().unwrap();
        [logits[[0, 0]], logits[[0, 1]]]
    });
    Ok((out[0], out[1]))
}

/// Softmax of a two-logit head, computed against the shifted maximum so
/// large logits cannot overflow.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

/// Mean cross-entropy of one head over the batch, plus the matching output
/// delta (softmax minus one-hot, divided by the batch size).
fn head_loss_delta(logits: &Array2<f64>, labels: &[bool]) -> (f64, Array2<f64>) {
    let n = labels.len();
    let mut delta = Array2::zeros((n, 2));
    let mut total = 0.0;
    for i in 0..n {
        let l0 = logits[[i, 0]];
        let l1 = logits[[i, 1]];
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        let y = labels[i] as usize;
        total += lse - if y == 0 { l0 } else { l1 };
        delta[[i, 0]] = ((l0 - lse).exp() - (1 - y) as f64) / n as f64;
        delta[[i, 1]] = ((l1 - lse).exp() - y as f64) / n as f64;
    }
    (total / n as f64, delta)
}

/// Propagate an output delta back through one head.
fn head_backward(
    layers: &[Layer],
    input: &Array2<f64>,
    acts: &[Array2<f64>],
    delta_out: Array2<f64>,
) -> Vec<Layer> {
    let mut grads = Vec::with_capacity(layers.len());
    let mut delta = delta_out;
    for l in (0..layers.len()).rev() {
        let prev = if l == 0 { input } else { &acts[l - 1] };
        grads.push(Layer { w: prev.t().dot(&delta), b: delta.sum_axis(Axis(0)) });
        if l > 0 {
            let mut d = delta.dot(&layers[l].w.t());
            Zip::from(&mut d).and(&acts[l - 1]).for_each(|v, &a| {
                if a <= 0.0 {
                    *v = 0.0;
                }
            });
            delta = d;
        }
    }
    grads.reverse();
    grads
}

fn loss_and_grads(net: &FeedforwardNet, batch: &Batch) -> Result<(f64, Grads), NeuralError> {
    if batch.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let mut total = 0.0;
    let mut heads = Vec::with_capacity(2);
    for h in 0..2 {
        let input = if h == 0 { &batch.x } else { &batch.z };
        let labels = if h == 0 { &batch.b1 } else { &batch.b2 };
        let acts = head_pass(&net.heads[h], input);
        let (l, delta) = head_loss_delta(acts.last().unwrap(), labels);
        total += l;
        heads.push(head_backward(&net.heads[h], input, &acts, delta));
    }
    let z = heads.pop().unwrap();
    let x = heads.pop().unwrap();
    Ok((total, Grads { heads: [x, z] }))
}

/// Mean over the batch of the two heads' softmax cross-entropies.
pub fn loss(net: &FeedforwardNet, batch: &Batch) -> Result<f64, NeuralError> {
    if batch.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let mut total = 0.0;
    for h in 0..2 {
        let input = if h == 0 { &batch.x } else { &batch.z };
        let labels = if h == 0 { &batch.b1 } else { &batch.b2 };
        let acts = head_pass(&net.heads[h], input);
        total += head_loss_delta(acts.last().unwrap(), labels).0;
    }
    Ok(total)
}

/// Exact gradient of [`loss`] with respect to every weight and bias.
pub fn backprop(net: &FeedforwardNet, batch: &Batch) -> Result<Grads, NeuralError> {
    loss_and_grads(net, batch).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Optimizer {
    Sgd,
    Momentum,
    Adagrad,
    RmsProp,
}

impl Optimizer {
    pub const ALL: [Optimizer; 4] =
        [Optimizer::Sgd, Optimizer::Momentum, Optimizer::Adagrad, Optimizer::RmsProp];

    pub fn id(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Momentum => "momentum",
            Optimizer::Adagrad => "adagrad",
            Optimizer::RmsProp => "rmsprop",
        }
    }

    pub fn parse(s: &str) -> Option<Optimizer> {
        Optimizer::ALL.into_iter().find(|o| o.id() == s)
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Everything the training loop and search harness can vary. `hidden` is
/// consumed by the search harness when it builds a [`NetShape`]; `train`
/// itself takes the shape as an argument.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Squared-gradient averaging rate of rmsprop.
    pub decay_rate: f64,
    /// Velocity retention of the momentum and rmsprop updates.
    pub momentum: f64,
    pub initial_std: f64,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before training stops.
    pub patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Hyperparams {
        Hyperparams {
            optimizer: Optimizer::RmsProp,
            learning_rate: 1e-3,
            decay_rate: 0.9,
            momentum: 0.0,
            initial_std: 1e-2,
            hidden: vec![128, 128],
            batch_size: 1024,
            max_epochs: 50,
            patience: 5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let unit = 1.0 - 1e-6;
        let checks = [
            ("learning_rate", self.learning_rate, self.learning_rate > 0.0),
            ("decay_rate", self.decay_rate, (0.0..=unit).contains(&self.decay_rate)),
            ("momentum", self.momentum, (0.0..=unit).contains(&self.momentum)),
            ("initial_std", self.initial_std, self.initial_std >= 0.0),
            ("batch_size", self.batch_size as f64, self.batch_size >= 1),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(NeuralError::BadHyperparam { name, value });
            }
        }
        Ok(())
    }
}

/// Per-parameter accumulators: `delta` keeps the momentum velocity, `sigma`
/// the squared-gradient sums of adagrad and rmsprop.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub delta: [Vec<Layer>; 2],
    pub sigma: [Vec<Layer>; 2],
}

impl OptimizerState {
    pub fn new(net: &FeedforwardNet) -> OptimizerState {
        OptimizerState { delta: net.zero_mirror(), sigma: net.zero_mirror() }
    }
}

fn update_slice(
    opt: Optimizer,
    hp: &Hyperparams,
    p: &mut [f64],
    g: &[f64],
    d: &mut [f64],
    s: &mut [f64],
) {
    let eta = hp.learning_rate;
    match opt {
        Optimizer::Sgd => {
            for i in 0..p.len() {
                p[i] -= eta * g[i];
            }
        }
        Optimizer::Momentum => {
            for i in 0..p.len() {
                d[i] = hp.momentum * d[i] - eta * g[i];
                p[i] += d[i];
            }
        }
        Optimizer::Adagrad => {
            for i in 0..p.len() {
                s[i] += g[i] * g[i];
                p[i] -= eta / (s[i] + SMOOTHING).sqrt() * g[i];
            }
        }
        Optimizer::RmsProp => {
            for i in 0..p.len() {
                s[i] = hp.decay_rate * s[i] + (1.0 - hp.decay_rate) * g[i] * g[i];
                d[i] = hp.momentum * d[i] - eta / (s[i] + SMOOTHING).sqrt() * g[i];
                p[i] += d[i];
            }
        }
    }
}

/// Apply one optimizer update in place.
pub fn step(net: &mut FeedforwardNet, grads: &Grads, hp: &Hyperparams, state: &mut OptimizerState) {
    for h in 0..2 {
        for l in 0..net.heads[h].len() {
            let layer = &mut net.heads[h][l];
            let g = &grads.heads[h][l];
            let d = &mut state.delta[h][l];
            let s = &mut state.sigma[h][l];
            assert_eq!(layer.w.dim(), g.w.dim(), "gradient shape mismatch");
            update_slice(
                hp.optimizer,
                hp,
                layer.w.as_slice_mut().unwrap(),
                g.w.as_slice().unwrap(),
                d.w.as_slice_mut().unwrap(),
                s.w.as_slice_mut().unwrap(),
            );
            update_slice(
                hp.optimizer,
                hp,
                layer.b.as_slice_mut().unwrap(),
                g.b.as_slice().unwrap(),
                d.b.as_slice_mut().unwrap(),
                s.b.as_slice_mut().unwrap(),
            );
        }
    }
}

/// Losses and held-out logical rate recorded after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters of the best-validation epoch, not the last one.
    pub net: FeedforwardNet,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_test_loss: f64,
    pub train_idx: Vec<u32>,
    pub test_idx: Vec<u32>,
}

impl TrainResult {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss,test_rate\n");
        for e in &self.history {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_loss, e.test_loss, e.test_rate
            ));
        }
        out
    }
}

/// Mini-batch training with a 90/10 cyclic train/validation split.
///
/// Deterministic for a fixed seed: the split, the Gaussian initialization
/// and every epoch's shuffle all come from one seeded stream. Training
/// stops after `hp.patience` epochs without a validation-loss improvement
/// and returns the best-validation snapshot. A non-finite loss aborts.
pub fn train(
    dataset: &Dataset,
    shape: &NetShape,
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainResult, NeuralError> {
    hp.validate()?;
    let geometry = dataset.geometry();
    if !shape.matches(geometry) {
        return Err(NeuralError::GeometryMismatch {
            got_x: geometry.x_bits,
            got_z: geometry.z_bits,
        });
    }
    let (mut train_idx, test_idx) = dataset.split_cyclic(0.9, seed);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let test_batch = Batch::gather(shape, geometry, &dataset.samples, &test_idx)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = FeedforwardNet::init(shape.clone(), hp.initial_std, &mut rng);
    let mut state = OptimizerState::new(&net);

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, FeedforwardNet)> = None;
    let mut stale = 0;
    for epoch in 1..=hp.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in train_idx.chunks(hp.batch_size) {
            let batch = Batch::gather(shape, geometry, &dataset.samples, chunk)?;
            let (l, grads) = loss_and_grads(&net, &batch)?;
            if !l.is_finite() {
                return Err(NeuralError::Diverged { epoch });
            }
            loss_sum += l * chunk.len() as f64;
            step(&mut net, &grads, hp, &mut state);
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let test_loss = loss(&net, &test_batch)?;
        if !test_loss.is_finite() {
            return Err(NeuralError::Diverged { epoch });
        }
        let test_rate = evaluate(&net, dataset, &test_idx)?.rate();
        history.push(EpochStats { epoch, train_loss, test_loss, test_rate });

        if best.as_ref().is_none_or(|(_, b, _)| test_loss < *b) {
            best = Some((epoch, test_loss, net.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= hp.patience {
                break;
            }
        }
    }
    let (best_epoch, best_test_loss, net) = best.expect("at least one epoch ran");
    Ok(TrainResult { net, history, best_epoch, best_test_loss, train_idx, test_idx })
}

/// Fault count of the supplemented decoder over a sample subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Samples whose predicted supplement differs from the label in either
    /// head.
    pub faults: u64,
    pub n_samples: usize,
    /// Share of the corpus's total shots this subset stands for; dropped
    /// all-zero shots count as automatic successes, which keeps the rate
    /// comparable with the baseline logical rate.
    pub effective_shots: f64,
}

impl EvalReport {
    pub fn rate(&self) -> f64 {
        self.faults as f64 / self.effective_shots
    }

    /// Faults and effective shots rounded for a Wilson interval.
    pub fn counts(&self) -> (u64, u64) {
        (self.faults, self.effective_shots.round() as u64)
    }
}

/// Argmax supplement bits per head; ties choose "no supplement".
pub fn predict(net: &FeedforwardNet, batch: &Batch) -> (Vec<bool>, Vec<bool>) {
    let out = [0, 1].map(|h| {
        let input = if h == 0 { &batch.x } else { &batch.z };
        let acts = head_pass(&net.heads[h], input);
        let logits = acts.last().unwrap();
        (0..batch.len()).map(|i| logits[[i, 1]] > logits[[i, 0]]).collect::<Vec<bool>>()
    });
    let [px, pz] = out;
    (px, pz)
}

/// Logical fault rate of baseline-plus-network over the subset `idx`,
/// renormalized so it is comparable with [`Dataset::baseline_rate`].
pub fn evaluate(
    net: &FeedforwardNet,
    dataset: &Dataset,
    idx: &[u32],
) -> Result<EvalReport, NeuralError> {
    if idx.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let geometry = dataset.geometry();
    let mut faults = 0u64;
    for chunk in idx.chunks(4096) {
        let batch = Batch::gather(&net.shape, geometry, &dataset.samples, chunk)?;
        let (px, pz) = predict(net, &batch);
        for i in 0..batch.len() {
            if px[i] != batch.b1[i] || pz[i] != batch.b2[i] {
                faults += 1;
            }
        }
    }
    let effective_shots =
        dataset.meta.total_shots as f64 * idx.len() as f64 / dataset.meta.kept as f64;
    Ok(EvalReport { faults, n_samples: idx.len(), effective_shots })
}

/// One point of a cross-training curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossPoint {
    pub p: f64,
    pub dnd_rate: f64,
    pub baseline_rate: f64,
}

/// Evaluate one trained net against corpora generated at other physical
/// rates; all corpora must share the net's sample geometry.
pub fn cross_train_eval(
    net: &FeedforwardNet,
    datasets: &[Dataset],
) -> Result<Vec<CrossPoint>, NeuralError> {
    let mut curve = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let idx: Vec<u32> = (0..ds.samples.len() as u32).collect();
        let report = evaluate(net, ds, &idx)?;
        curve.push(CrossPoint {
            p: ds.meta.p,
            dnd_rate: report.rate(),
            baseline_rate: ds.baseline_rate(),
        });
    }
    Ok(curve)
}

/// Hyperparameter ranges the search harness draws from. Learning rate and
/// initial std are sampled log-uniformly, decay and momentum linearly, the
/// hidden width linearly with rounding; every hidden layer shares the
/// sampled width. The five of them are the search dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub initial_std: (f64, f64),
    pub decay_rate: (f64, f64),
    pub momentum: (f64, f64),
    pub hidden: (usize, usize),
    pub layers: usize,
    pub optimizer: Optimizer,
    pub mode: InputMode,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl SearchSpace {
    /// Ranges tuned for the distance-three corpora.
    pub fn d3_defaults() -> SearchSpace {
        SearchSpace {
            learning_rate: (1e-5, 1e-1),
            initial_std: (1e-3, 1e-1),
            decay_rate: (0.0, 1.0 - 1e-6),
            momentum: (0.0, 1.0 - 1e-6),
            hidden: (100, 1000),
            layers: 2,
            optimizer: Optimizer::RmsProp,
            mode: InputMode::Split,
            batch_size: 1024,
            max_epochs: 50,
            patience: 5,
        }
    }

    /// Map a point of the unit cube to concrete hyperparameters.
    pub fn at(&self, u: &[f64; 5]) -> Hyperparams {
        let log_lerp = |(lo, hi): (f64, f64), t: f64| (lo.ln() + (hi.ln() - lo.ln()) * t).exp();
        let lerp = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t;
        let width = lerp((self.hidden.0 as f64, self.hidden.1 as f64), u[4]).round() as usize;
        Hyperparams {
            optimizer: self.optimizer,
            learning_rate: log_lerp(self.learning_rate, u[0]),
            initial_std: log_lerp(self.initial_std, u[1]),
            decay_rate: lerp(self.decay_rate, u[2]),
            momentum: lerp(self.momentum, u[3]),
            hidden: vec![width; self.layers],
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }
}

/// `n` points in `[0,1)^dims` where each dimension's coordinates occupy the
/// `n` equal bins in some order, one point per bin.
pub fn latin_hypercube(n: usize, dims: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut coords: Vec<Vec<f64>> = vec![Vec::with_capacity(dims); n];
    for _ in 0..dims {
        let mut bins: Vec<usize> = (0..n).collect();
        bins.shuffle(rng);
        for (point, &bin) in coords.iter_mut().zip(&bins) {
            point.push((bin as f64 + rng.gen::<f64>()) / n as f64);
        }
    }
    coords
}

/// One search query: where it sampled, what it trained with, and the
/// validation cross-entropy it reached.
#[derive(Debug, Clone)]
pub struct Query {
    pub unit: [f64; 5],
    pub hp: Hyperparams,
    pub seed: u64,
    /// Best validation loss of the trained net; infinite when training
    /// diverged.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub best: Query,
    pub log: Vec<Query>,
}

/// Half-width of the refinement box around the incumbent, in unit-cube
/// coordinates.
const REFINE_RADIUS: f64 = 0.1;

/// Search `budget` hyperparameter queries: up to ten Latin-hypercube
/// samples first, then uniform draws from a shrinking box around the best
/// query so far. Every query trains on the corpus and is scored by its
/// validation cross-entropy; a diverging query scores infinity and stays in
/// the log.
pub fn hypertune(
    space: &SearchSpace,
    dataset: &Dataset,
    budget: usize,
    seed: u64,
) -> Result<TuneResult, NeuralError> {
    assert!(budget >= 1, "need at least one query");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geometry = dataset.geometry();
    let n_initial = budget.min(10);
    let initial = latin_hypercube(n_initial, 5, &mut rng);

    let mut log: Vec<Query> = Vec::with_capacity(budget);
    let run = |unit: [f64; 5], rng: &mut ChaCha8Rng| -> Result<Query, NeuralError> {
        let hp = space.at(&unit);
        let query_seed = rng.gen::<u64>();
        let shape = NetShape::new(geometry, space.mode, hp.hidden.clone());
        let objective = match train(dataset, &shape, &hp, query_seed) {
            Ok(result) => result.best_test_loss,
            Err(NeuralError::Diverged { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        Ok(Query { unit, hp, seed: query_seed, objective })
    };

    for point in initial {
        let unit: [f64; 5] = point.try_into().unwrap();
        log.push(run(unit, &mut rng)?);
    }
    for _ in n_initial..budget {
        let center = log
            .iter()
            .min_by(|a, b| a.objective.total_cmp(&b.objective))
            .expect("log nonempty")
            .unit;
        let mut unit = [0.0; 5];
        for (u, c) in unit.iter_mut().zip(center) {
            let lo = (c - REFINE_RADIUS).max(0.0);
            let hi = (c + REFINE_RADIUS).min(1.0);
            *u = rng.gen_range(lo..hi);
        }
        log.push(run(unit, &mut rng)?);
    }
    let best = log
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .expect("log nonempty")
        .clone();
    Ok(TuneResult { best, log })
}

/// Serialize a net with its training provenance: a text header carrying the
/// shape, hyperparameters and seed, a blank line, then each head's layers
/// as little-endian f64 blocks (weights row-major, then biases).
pub fn save_model(net: &FeedforwardNet, hp: &Hyperparams, seed: u64) -> Vec<u8> {
    let shape = &net.shape;
    let hidden: Vec<String> = shape.hidden.iter().map(|h| h.to_string()).collect();
    let mut out = format!(
        "{MODEL_MAGIC} v{MODEL_VERSION}\nmode: {}\nx_inputs: {}\nz_inputs: {}\nhidden: {}\n\
         optimizer: {}\nlearning_rate: {}\ndecay_rate: {}\nmomentum: {}\ninitial_std: {}\n\
         batch_size: {}\nmax_epochs: {}\npatience: {}\nseed: {}\n\n",
        shape.mode,
        shape.x_inputs,
        shape.z_inputs,
        hidden.join(","),
        hp.optimizer,
        hp.learning_rate,
        hp.decay_rate,
        hp.momentum,
        hp.initial_std,
        hp.batch_size,
        hp.max_epochs,
        hp.patience,
        seed,
    )
    .into_bytes();
    for head in &net.heads {
        for layer in head {
            for &v in layer.w.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &v in layer.b.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn load_model(bytes: &[u8]) -> Result<(FeedforwardNet, Hyperparams, u64), NeuralError> {
    let bad = |m: &str| NeuralError::Format(m.to_string());
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("missing header terminator"))?;
    let header =
        std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8"))?;
    let mut lines = header.lines();
    let magic = lines.next().ok_or_else(|| bad("empty header"))?;
    if magic != format!("{MODEL_MAGIC} v{MODEL_VERSION}") {
        return Err(bad(&format!("unsupported container tag {magic:?}")));
    }
    let mut fields = std::collections::HashMap::new();
    for line in lines {
        let (k, v) = line.split_once(": ").ok_or_else(|| bad("malformed header line"))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let field = |k: &str| {
        fields.get(k).cloned().ok_or_else(|| bad(&format!("missing header field {k}")))
    };
    let parse_f64 = |k: &str| -> Result<f64, NeuralError> {
        field(k)?.parse().map_err(|_| bad(&format!("bad value for {k}")))
    };
    let parse_usize = |k: &str| -> Result<usize, NeuralError> {
        field(k)?.parse().map_err(|_| bad(&format!("bad value for {k}")))
    };

    let mode = InputMode::parse(&field("mode")?).ok_or_else(|| bad("unknown input mode"))?;
    let hidden_field = field("hidden")?;
    let hidden: Vec<usize> = if hidden_field.is_empty() {
        Vec::new()
    } else {
        hidden_field
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad hidden width")))
            .collect::<Result<_, _>>()?
    };
    let shape = NetShape {
        x_inputs: parse_usize("x_inputs")?,
        z_inputs: parse_usize("z_inputs")?,
        hidden: hidden.clone(),
        mode,
    };
    let hp = Hyperparams {
        optimizer: Optimizer::parse(&field("optimizer")?)
            .ok_or_else(|| bad("unknown optimizer"))?,
        learning_rate: parse_f64("learning_rate")?,
        decay_rate: parse_f64("decay_rate")?,
        momentum: parse_f64("momentum")?,
        initial_std: parse_f64("initial_std")?,
        hidden,
        batch_size: parse_usize("batch_size")?,
        max_epochs: parse_usize("max_epochs")?,
        patience: parse_usize("patience")?,
    };
    let seed: u64 =
        field("seed")?.parse().map_err(|_| bad("bad value for seed"))?;

    let mut body = &bytes[split + 2..];
    let mut take = |count: usize| -> Result<Vec<f64>, NeuralError> {
        let need = count * 8;
        if body.len() < need {
            return Err(bad("parameter blocks truncated"));
        }
        let vals = body[..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        body = &body[need..];
        Ok(vals)
    };
    let heads_vec: Vec<Vec<Layer>> = (0..2)
        .map(|h| {
            let sizes = shape.sizes(h);
            sizes
                .windows(2)
                .map(|io| {
                    let w = Array2::from_shape_vec((io[0], io[1]), take(io[0] * io[1])?)
                        .expect("shape matches count");
                    let b = Array1::from_vec(take(io[1])?);
                    Ok(Layer { w, b })
                })
                .collect()
        })
        .collect::<Result<_, NeuralError>>()?;
    if !body.is_empty() {
        return Err(bad("trailing bytes after parameter blocks"));
    }
    let heads: [Vec<Layer>; 2] = heads_vec.try_into().unwrap();
    Ok((FeedforwardNet { shape, heads }, hp, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, DatasetMeta, ProtocolId};
    use crate::decoder::Baseline;
    use crate::circuit::Basis;

    fn toy_geometry() -> SampleGeometry {
        ProtocolId::SteaneD3.geometry()
    }

    /// Corpus where every syndrome bit equals its head's label bit: all X
    /// bits are b1, all Z bits are b2.
    fn toy_dataset(n: usize) -> Dataset {
        let g = toy_geometry();
        let samples = (0..n)
            .map(|i| {
                let b1 = i % 2 == 1;
                let b2 = i % 4 >= 2;
                Sample {
                    x_word: if b1 { (1 << g.x_bits) - 1 } else { 0 },
                    z_word: if b2 { (1 << g.z_bits) - 1 } else { 0 },
                    b1,
                    b2,
                    basis: Basis::Z,
                }
            })
            .collect();
        Dataset {
            meta: DatasetMeta {
                protocol: ProtocolId::SteaneD3,
                p: 1e-3,
                baseline: Baseline::Lookup,
                total_shots: n as u64,
                kept: n as u64,
                seed: 0,
                version: 1,
            },
            samples,
        }
    }

    fn toy_shape(hidden: Vec<usize>) -> NetShape {
        NetShape::new(toy_geometry(), InputMode::Split, hidden)
    }

    fn random_batch(shape: &NetShape, n: usize, rng: &mut ChaCha8Rng) -> Batch {
        let x = Array2::from_shape_simple_fn((n, shape.x_inputs), || {
            if rng.gen::<bool>() { 1.0 } else { 0.0 }
        });
        let z = Array2::from_shape_simple_fn((n, shape.z_inputs), || {
            if rng.gen::<bool>() { 1.0 } else { 0.0 }
        });
        let b1 = (0..n).map(|_| rng.gen()).collect();
        let b2 = (0..n).map(|_| rng.gen()).collect();
        Batch { x, z, b1, b2 }
    }

    #[test]
    fn zero_net_logits_are_uniform() {
        let net = FeedforwardNet::zeros(toy_shape(vec![5]));
        let (lx, lz) = forward(&net, &[1.0; 12], &[0.0; 12]).unwrap();
        assert_eq!(lx, [0.0, 0.0]);
        assert_eq!(lz, [0.0, 0.0]);
        assert_eq!(softmax2(lx), [0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = random_batch(&net.shape, 40, &mut rng);
        let l = loss(&net, &batch).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn single_layer_forward_is_affine() {
        let g = SampleGeometry { x_bits: 2, z_bits: 2 };
        let mut net = FeedforwardNet::zeros(NetShape::new(g, InputMode::Split, vec![]));
        net.heads[0][0].w =
            Array2::from_shape_vec((2, 2), vec![1.5, -2.0, 0.25, 4.0]).unwrap();
        net.heads[0][0].b = Array1::from_vec(vec![0.5, -0.5]);
        let (lx, _) = forward(&net, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(lx, [2.0, -2.5]);
        assert!(matches!(
            forward(&net, &[1.0], &[0.0, 0.0]),
            Err(NeuralError::ShapeMismatch { expected: 2, got: 1 })
        ));
    }

    /// Forward agrees with a per-neuron evaluation that never touches the
    /// matrix helpers.
    #[test]
    fn forward_matches_neuronwise_reference() {
        let shape = toy_shape(vec![7, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = FeedforwardNet::init(shape, 0.8, &mut rng);
        let batch = random_batch(&net.shape, 6, &mut rng);
        for i in 0..batch.len() {
            let xin: Vec<f64> = batch.x.row(i).to_vec();
            let zin: Vec<f64> = batch.z.row(i).to_vec();
            let (lx, lz) = forward(&net, &xin, &zin).unwrap();
            for (h, (input, logits)) in [(&xin, lx), (&zin, lz)].into_iter().enumerate() {
                let mut a = input.clone();
                for (l, layer) in net.heads[h].iter().enumerate() {
                    let mut next = vec![0.0; layer.b.len()];
                    for (v, out) in next.iter_mut().enumerate() {
                        let mut sum = layer.b[v];
                        for (u, &x) in a.iter().enumerate() {
                            sum += layer.w[[u, v]] * x;
                        }
                        *out = if l + 1 < net.heads[h].len() { sum.max(0.0) } else { sum };
                    }
                    a = next;
                }
                assert!((a[0] - logits[0]).abs() < 1e-12);
                assert!((a[1] - logits[1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn joint_mode_feeds_both_bit_blocks() {
        let g = SampleGeometry { x_bits: 3, z_bits: 2 };
        let shape = NetShape::new(g, InputMode::Joint, vec![]);
        assert_eq!((shape.x_inputs, shape.z_inputs), (5, 5));
        let samples = [Sample {
            x_word: 0b101,
            z_word: 0b10,
            b1: true,
            b2: false,
            basis: Basis::Z,
        }];
        let batch = Batch::gather(&shape, g, &samples, &[0]).unwrap();
        let expect = [1.0, 0.0, 1.0, 0.0, 1.0];
        assert_eq!(batch.x.row(0).to_vec(), expect);
        assert_eq!(batch.z.row(0).to_vec(), expect);
        let split = NetShape::new(g, InputMode::Split, vec![]);
        assert!(matches!(
            Batch::gather(&split, SampleGeometry { x_bits: 4, z_bits: 2 }, &samples, &[0]),
            Err(NeuralError::GeometryMismatch { .. })
        ));
    }

    #[test]
    fn softmax_rows_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let l = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)];
            let p = softmax2(l);
            assert!(p[0] >= 0.0 && p[1] >= 0.0);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
        // Extreme logits stay finite.
        let p = softmax2([800.0, -800.0]);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn confident_correct_predictions_drive_loss_to_zero() {
        let g = SampleGeometry { x_bits: 1, z_bits: 1 };
        let mut net = FeedforwardNet::zeros(NetShape::new(g, InputMode::Split, vec![]));
        // Map bit 1 to logit gap +60 for class 1, bit 0 to gap +60 for
        // class 0.
        for h in 0..2 {
            net.heads[h][0].w = Array2::from_shape_vec((1, 2), vec![-60.0, 60.0]).unwrap();
            net.heads[h][0].b = Array1::from_vec(vec![30.0, -30.0]);
        }
        let samples = [
            Sample { x_word: 1, z_word: 0, b1: true, b2: false, basis: Basis::Z },
            Sample { x_word: 0, z_word: 1, b1: false, b2: true, basis: Basis::Z },
        ];
        let shape = net.shape.clone();
        let batch = Batch::gather(&shape, g, &samples, &[0, 1]).unwrap();
        let l = loss(&net, &batch).unwrap();
        assert!(l >= 0.0);
        assert!(l < 1e-10, "loss {l}");
    }

    /// Random net and batch whose hidden pre-activations all sit at least
    /// `margin` away from the rectifier kink, so a central difference of
    /// step 1e-4 stays inside one linear region. Inputs are 0/1 bits, so a
    /// single perturbed parameter moves any pre-activation by at most the
    /// step size; rejected draws retry on a shifted seed.
    fn smooth_case(
        seed: u64,
        g: SampleGeometry,
        hidden: usize,
        std: f64,
        n: usize,
    ) -> (FeedforwardNet, Batch) {
        let margin = 1e-3;
        for attempt in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100_000 * attempt);
            let shape = NetShape::new(g, InputMode::Split, vec![hidden]);
            let mut net = FeedforwardNet::init(shape, std, &mut rng);
            // Random biases too, so their gradients are exercised away from
            // zero.
            for head in net.heads.iter_mut() {
                for layer in head.iter_mut() {
                    layer.b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
                }
            }
            let batch = random_batch(&net.shape, n, &mut rng);
            let clear = [0, 1].iter().all(|&h| {
                let input = if h == 0 { &batch.x } else { &batch.z };
                let layer = &net.heads[h][0];
                let z = input.dot(&layer.w) + &layer.b;
                z.iter().all(|v| v.abs() >= margin)
            });
            if clear {
                return (net, batch);
            }
        }
        panic!("no kink-free configuration found near seed {seed}");
    }

    #[test]
    fn backprop_matches_central_differences() {
        let mut worst: f64 = 0.0;
        for seed in 0..100 {
            let g = SampleGeometry { x_bits: 4, z_bits: 5 };
            let (mut net, batch) = smooth_case(seed, g, 6, 0.7, 8);
            let grads = backprop(&net, &batch).unwrap();
            worst = worst.max(max_fd_error(&mut net, &batch, &grads));
        }
        // One wider net matching the documented check size.
        let g = SampleGeometry { x_bits: 12, z_bits: 12 };
        let (mut net, batch) = smooth_case(1000, g, 20, 0.5, 16);
        let grads = backprop(&net, &batch).unwrap();
        worst = worst.max(max_fd_error(&mut net, &batch, &grads));
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    /// Central finite differences with step 1e-4 against the analytic
    /// gradient; returns the largest relative error over all parameters.
    fn max_fd_error(net: &mut FeedforwardNet, batch: &Batch, grads: &Grads) -> f64 {
        let step = 1e-4;
        let mut worst: f64 = 0.0;
        for h in 0..2 {
            for l in 0..net.heads[h].len() {
                for part in 0..2 {
                    let count = if part == 0 {
                        net.heads[h][l].w.len()
                    } else {
                        net.heads[h][l].b.len()
                    };
                    for i in 0..count {
                        let read = |net: &mut FeedforwardNet, delta: f64| {
                            let slot = if part == 0 {
                                &mut net.heads[h][l].w.as_slice_mut().unwrap()[i]
                            } else {
                                &mut net.heads[h][l].b.as_slice_mut().unwrap()[i]
                            };
                            *slot += delta;
                        };
                        read(net, step);
                        let up = loss(net, batch).unwrap();
                        read(net, -2.0 * step);
                        let down = loss(net, batch).unwrap();
                        read(net, step);
                        let fd = (up - down) / (2.0 * step);
                        let an = if part == 0 {
                            grads.heads[h][l].w.as_slice().unwrap()[i]
                        } else {
                            grads.heads[h][l].b.as_slice().unwrap()[i]
                        };
                        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                        worst = worst.max(rel);
                    }
                }
            }
        }
        worst
    }

    #[test]
    fn final_bias_gradient_is_softmax_minus_onehot_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = toy_shape(vec![9]);
        let net = FeedforwardNet::init(shape, 0.6, &mut rng);
        let batch = random_batch(&net.shape, 11, &mut rng);
        let grads = backprop(&net, &batch).unwrap();
        for h in 0..2 {
            let input = if h == 0 { &batch.x } else { &batch.z };
            let labels = if h == 0 { &batch.b1 } else { &batch.b2 };
            let acts = head_pass(&net.heads[h], input);
            let logits = acts.last().unwrap();
            let mut expect = [0.0, 0.0];
            for i in 0..batch.len() {
                let p = softmax2([logits[[i, 0]], logits[[i, 1]]]);
                let y = labels[i] as usize;
                expect[0] += p[0] - (1 - y) as f64;
                expect[1] += p[1] - y as f64;
            }
            let db = &grads.heads[h].last().unwrap().b;
            for c in 0..2 {
                assert!((db[c] - expect[c] / batch.len() as f64).abs() < 1e-12);
            }
        }
    }

    /// Identical inputs with balanced labels under all-zero parameters:
    /// softmax is uniform everywhere and the per-sample deltas cancel.
    #[test]
    fn balanced_batch_at_zero_weights_is_stationary() {
        let shape = toy_shape(vec![6]);
        let net = FeedforwardNet::zeros(shape.clone());
        let n = 8;
        let x = Array2::ones((n, shape.x_inputs));
        let z = Array2::ones((n, shape.z_inputs));
        let b1 = (0..n).map(|i| i % 2 == 0).collect();
        let b2 = (0..n).map(|i| i % 2 == 1).collect();
        let batch = Batch { x, z, b1, b2 };
        let grads = backprop(&net, &batch).unwrap();
        for head in &grads.heads {
            for layer in head {
                assert!(layer.w.iter().all(|&v| v == 0.0));
                assert!(layer.b.iter().all(|&v| v == 0.0));
            }
        }
    }

    fn bias_only_net() -> (FeedforwardNet, Grads) {
        let g = SampleGeometry { x_bits: 1, z_bits: 1 };
        let net = FeedforwardNet::zeros(NetShape::new(g, InputMode::Split, vec![]));
        let mut grads = Grads { heads: net.zero_mirror() };
        grads.heads[0][0].b = Array1::from_vec(vec![1.0, -2.0]);
        (net, grads)
    }

    #[test]
    fn sgd_step_matches_formula() {
        let (mut net, grads) = bias_only_net();
        let hp = Hyperparams {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.1,
            ..Hyperparams::default()
        };
        let mut state = OptimizerState::new(&net);
        step(&mut net, &grads, &hp, &mut state);
        let b = &net.heads[0][0].b;
        assert!((b[0] - -0.1).abs() < 1e-15);
        assert!((b[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn momentum_zero_is_sgd() {
        let (mut a, grads) = bias_only_net();
        let mut b = a.clone();
        let sgd = Hyperparams {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.05,
            ..Hyperparams::default()
        };
        let mom = Hyperparams {
            optimizer: Optimizer::Momentum,
            learning_rate: 0.05,
            momentum: 0.0,
            ..Hyperparams::default()
        };
        let mut sa = OptimizerState::new(&a);
        let mut sb = OptimizerState::new(&b);
        for _ in 0..4 {
            step(&mut a, &grads, &sgd, &mut sa);
            step(&mut b, &grads, &mom, &mut sb);
        }
        assert_eq!(a.heads[0][0].b, b.heads[0][0].b);
    }

    #[test]
    fn adagrad_constant_gradient_closed_form() {
        let (mut net, grads) = bias_only_net();
        let eta = 0.3;
        let hp = Hyperparams {
            optimizer: Optimizer::Adagrad,
            learning_rate: eta,
            ..Hyperparams::default()
        };
        let mut state = OptimizerState::new(&net);
        let k = 5;
        for _ in 0..k {
            step(&mut net, &grads, &hp, &mut state);
        }
        for (slot, g) in [(0, 1.0f64), (1, -2.0f64)] {
            assert!((state.sigma[0][0].b[slot] - k as f64 * g * g).abs() < 1e-12);
            let expect: f64 =
                (1..=k).map(|j| -eta * g / (j as f64 * g * g + SMOOTHING).sqrt()).sum();
            assert!((net.heads[0][0].b[slot] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rmsprop_zero_decay_tracks_squared_gradient() {
        let (mut net, grads) = bias_only_net();
        let hp = Hyperparams {
            optimizer: Optimizer::RmsProp,
            learning_rate: 0.2,
            decay_rate: 0.0,
            momentum: 0.0,
            ..Hyperparams::default()
        };
        let mut state = OptimizerState::new(&net);
        step(&mut net, &grads, &hp, &mut state);
        assert_eq!(state.sigma[0][0].b[0], 1.0);
        assert_eq!(state.sigma[0][0].b[1], 4.0);
        let b = &net.heads[0][0].b;
        assert!((b[0] - -0.2 / (1.0 + SMOOTHING).sqrt()).abs() < 1e-15);
        assert!((b[1] - 0.4 / (4.0 + SMOOTHING).sqrt()).abs() < 1e-15);
        // A second identical step keeps sigma at the squared gradient.
        step(&mut net, &grads, &hp, &mut state);
        assert_eq!(state.sigma[0][0].b[1], 4.0);
    }

    #[test]
    fn train_toy_corpus_reaches_tiny_loss() {
        let ds = toy_dataset(400);
        let shape = toy_shape(vec![8]);
        let hp = Hyperparams {
            optimizer: Optimizer::RmsProp,
            learning_rate: 0.02,
            decay_rate: 0.9,
            momentum: 0.0,
            initial_std: 0.05,
            hidden: vec![8],
            batch_size: 32,
            max_epochs: 50,
            patience: 50,
            ..Hyperparams::default()
        };
        let result = train(&ds, &shape, &hp, 7).unwrap();
        let last = result.history.last().unwrap();
        assert!(last.train_loss < 1e-3, "train loss {}", last.train_loss);
        assert_eq!(result.history[result.best_epoch - 1].test_loss, result.best_test_loss);
        // The separable rule is learned outright.
        assert_eq!(result.history.last().unwrap().test_rate, 0.0);
    }

    #[test]
    fn train_is_deterministic() {
        let ds = toy_dataset(200);
        let shape = toy_shape(vec![6]);
        let hp = Hyperparams {
            batch_size: 32,
            max_epochs: 4,
            hidden: vec![6],
            ..Hyperparams::default()
        };
        let a = train(&ds, &shape, &hp, 11).unwrap();
        let b = train(&ds, &shape, &hp, 11).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (ea, eb) in a.history.iter().zip(&b.history) {
            assert_eq!(ea.train_loss.to_bits(), eb.train_loss.to_bits());
            assert_eq!(ea.test_loss.to_bits(), eb.test_loss.to_bits());
            assert_eq!(ea.test_rate.to_bits(), eb.test_rate.to_bits());
        }
        assert_eq!(a.net, b.net);
        assert_eq!(a.history_csv(), b.history_csv());
        let c = train(&ds, &shape, &hp, 12).unwrap();
        assert_ne!(a.net, c.net);
    }

    /// A learning rate this large pushes first-layer weights and the next
    /// layer's weights to ~1e200 apiece within a step, so the following
    /// forward pass multiplies them into an overflow and the loss stops
    /// being finite.
    #[test]
    fn train_divergence_aborts() {
        let ds = toy_dataset(200);
        let shape = toy_shape(vec![6]);
        let hp = Hyperparams {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e200,
            initial_std: 1.0,
            hidden: vec![6],
            batch_size: 32,
            max_epochs: 10,
            ..Hyperparams::default()
        };
        match train(&ds, &shape, &hp, 3) {
            Err(NeuralError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn hyperparam_bounds_are_enforced() {
        let mut hp = Hyperparams::default();
        hp.momentum = 1.0;
        assert!(matches!(
            hp.validate(),
            Err(NeuralError::BadHyperparam { name: "momentum", .. })
        ));
        hp.momentum = 0.5;
        hp.learning_rate = 0.0;
        assert!(hp.validate().is_err());
    }

    #[test]
    fn evaluate_zero_net_reproduces_baseline_rate() {
        let ds = generate(ProtocolId::SteaneD3, 1e-3, Baseline::Lookup, 300, 41).unwrap();
        let net = FeedforwardNet::zeros(toy_shape(vec![4]));
        let idx: Vec<u32> = (0..ds.samples.len() as u32).collect();
        let report = evaluate(&net, &ds, &idx).unwrap();
        assert_eq!(report.faults, ds.failures());
        assert!((report.rate() - ds.baseline_rate()).abs() < 1e-15);
        assert_eq!(report.counts().1, ds.meta.total_shots);
    }

    /// A net wired to read the labels straight off the toy corpus inputs
    /// never mispredicts.
    #[test]
    fn oracle_net_scores_zero_faults() {
        let ds = toy_dataset(120);
        let g = ds.geometry();
        let mut net = FeedforwardNet::zeros(toy_shape(vec![]));
        for h in 0..2 {
            for r in 0..g.x_bits {
                net.heads[h][0].w[[r, 1]] = 1.0;
            }
        }
        let idx: Vec<u32> = (0..ds.samples.len() as u32).collect();
        assert_eq!(evaluate(&net, &ds, &idx).unwrap().faults, 0);
    }

    #[test]
    fn argmax_invariant_under_positive_scaling_and_shift() {
        let ds = toy_dataset(64);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let net = FeedforwardNet::init(toy_shape(vec![5]), 0.9, &mut rng);
        let batch = Batch::from_all(&net.shape, ds.geometry(), &ds.samples).unwrap();
        let base = predict(&net, &batch);

        let mut scaled = net.clone();
        for h in 0..2 {
            let last = scaled.heads[h].last_mut().unwrap();
            last.w.mapv_inplace(|v| 3.0 * v);
            last.b.mapv_inplace(|v| 3.0 * v);
        }
        assert_eq!(predict(&scaled, &batch), base);

        let mut shifted = net.clone();
        for h in 0..2 {
            let last = shifted.heads[h].last_mut().unwrap();
            last.b.mapv_inplace(|v| v + 4.25);
        }
        assert_eq!(predict(&shifted, &batch), base);
    }

    #[test]
    fn latin_hypercube_covers_every_decile() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let points = latin_hypercube(10, 5, &mut rng);
        assert_eq!(points.len(), 10);
        for dim in 0..5 {
            let mut bins: Vec<usize> =
                points.iter().map(|p| (p[dim] * 10.0).floor() as usize).collect();
            bins.sort_unstable();
            assert_eq!(bins, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn hypertune_lhs_only_returns_best_query() {
        let ds = toy_dataset(300);
        let space = SearchSpace {
            learning_rate: (1e-3, 1e-1),
            initial_std: (1e-2, 1e-1),
            decay_rate: (0.5, 0.99),
            momentum: (0.0, 0.5),
            hidden: (4, 8),
            layers: 1,
            optimizer: Optimizer::RmsProp,
            mode: InputMode::Split,
            batch_size: 64,
            max_epochs: 3,
            patience: 3,
        };
        let result = hypertune(&space, &ds, 10, 29).unwrap();
        assert_eq!(result.log.len(), 10);
        let min = result.log.iter().map(|q| q.objective).fold(f64::INFINITY, f64::min);
        assert_eq!(result.best.objective, min);
        for q in &result.log {
            assert_eq!(q.hp.hidden.len(), 1);
            assert!((4..=8).contains(&q.hp.hidden[0]));
            assert!((1e-3..=1e-1).contains(&q.hp.learning_rate));
        }

        // Refinement queries stay inside the box around the incumbent.
        let refined = hypertune(&space, &ds, 12, 29).unwrap();
        assert_eq!(refined.log.len(), 12);
        assert_eq!(refined.log[9].unit, result.log[9].unit);
        assert!(refined.best.objective <= result.best.objective);
        let center = result.best.unit;
        for q in &refined.log[10..] {
            let near_center_or_better = q
                .unit
                .iter()
                .zip(center)
                .all(|(u, c)| (u - c).abs() <= REFINE_RADIUS + 1e-12);
            let better = q.objective <= result.best.objective;
            assert!(near_center_or_better || better);
        }
    }

    #[test]
    fn model_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let hp = Hyperparams { hidden: vec![5, 3], learning_rate: 0.0123, ..Hyperparams::default() };
        let net = FeedforwardNet::init(toy_shape(vec![5, 3]), 0.4, &mut rng);
        let bytes = save_model(&net, &hp, 99);
        let (loaded, hp2, seed) = load_model(&bytes).unwrap();
        assert_eq!(loaded, net);
        assert_eq!(hp2, hp);
        assert_eq!(seed, 99);

        assert!(load_model(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(load_model(&extra).is_err());
        let mut wrong = bytes;
        wrong[0] = b'x';
        assert!(load_model(&wrong).is_err());
    }

    #[test]
    fn cross_train_eval_matches_pointwise_evaluate() {
        let a = generate(ProtocolId::SteaneD3, 2e-3, Baseline::Lookup, 200, 43).unwrap();
        let mut b = generate(ProtocolId::SteaneD3, 1e-3, Baseline::Lookup, 200, 44).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let net = FeedforwardNet::init(toy_shape(vec![6]), 0.3, &mut rng);
        let curve = cross_train_eval(&net, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[0].p, 2e-3);
        assert_eq!(curve[1].p, 1e-3);
        let idx: Vec<u32> = (0..a.samples.len() as u32).collect();
        assert_eq!(curve[0].dnd_rate, evaluate(&net, &a, &idx).unwrap().rate());
        assert_eq!(curve[0].baseline_rate, a.baseline_rate());

        // Geometry mismatches are rejected.
        b.meta.protocol = ProtocolId::SurfaceD5;
        assert!(cross_train_eval(&net, &[b]).is_err());
    }

    /// End-to-end smoke run on a real corpus: a small tuned net should at
    /// least match the lookup baseline it supplements at a rate well above
    /// the pseudo-threshold.
    #[test]
    fn steane_corpus_training_improves_on_baseline() {
        let ds = generate(ProtocolId::SteaneD3, 2e-3, Baseline::Lookup, 20_000, 77).unwrap();
        let shape = toy_shape(vec![32, 32]);
        let hp = Hyperparams {
            optimizer: Optimizer::RmsProp,
            learning_rate: 2e-3,
            decay_rate: 0.9,
            momentum: 0.0,
            initial_std: 0.03,
            hidden: vec![32, 32],
            batch_size: 512,
            max_epochs: 12,
            patience: 4,
            ..Hyperparams::default()
        };
        let result = train(&ds, &shape, &hp, 5).unwrap();
        let report = evaluate(&result.net, &ds, &result.test_idx).unwrap();
        let baseline = ds.baseline_rate();
        assert!(
            report.rate() < baseline,
            "dnd {} vs baseline {baseline}",
            report.rate()
        );
    }
}
