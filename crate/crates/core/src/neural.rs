//! A small conditional velocity network and its flow-matching trainer.
//!
//! Input: state, 9 time features, and one learned embedding row per factor
//! (the last row of each table is the null row for an absent factor).
//! Two SiLU hidden layers, linear output. Gradients are computed by hand.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::conditioning::{mask_dropout, sample_target, ConditionPair, TaskSpec};
use crate::error::{check_dims, invalid, Error, Result};
use crate::model::VelocityModel;
use crate::numerics::{gaussian_sample, Rng, Vector};

pub const TIME_FEATURES: usize = 9;

/// `[t, sin(2 pi k t), cos(2 pi k t) for k = 1..4]`
pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut f = [0.0; TIME_FEATURES];
    f[0] = t;
    for k in 1..=4 {
        let (s, c) = (2.0 * PI * k as f64 * t).sin_cos();
        f[2 * k - 1] = s;
        f[2 * k] = c;
    }
    f
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub dim: usize,
    pub hidden: [usize; 2],
    pub embed_dim: usize,
    pub classes_a: usize,
    pub classes_b: usize,
}

impl Architecture {
    pub fn for_task(spec: &TaskSpec) -> Self {
        Self {
            dim: spec.dim,
            hidden: [64, 64],
            embed_dim: 8,
            classes_a: spec.centers_a.len(),
            classes_b: spec.centers_b.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dim + TIME_FEATURES + 2 * self.embed_dim
    }

    /// `(name, shape)` of every parameter tensor in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, [usize; 2])> {
        let [h1, h2] = self.hidden;
        vec![
            ("w1", [h1, self.input_dim()]),
            ("b1", [h1, 1]),
            ("w2", [h2, h1]),
            ("b2", [h2, 1]),
            ("w3", [self.dim, h2]),
            ("b3", [self.dim, 1]),
            ("emb_a", [self.classes_a + 1, self.embed_dim]),
            ("emb_b", [self.classes_b + 1, self.embed_dim]),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, [r, c])| r * c).sum()
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    emb_a: usize,
    emb_b: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut offsets = [0usize; 8];
        let mut at = 0;
        for (slot, (_, [r, c])) in offsets.iter_mut().zip(arch.tensors()) {
            *slot = at;
            at += r * c;
        }
        let [w1, b1, w2, b2, w3, b3, emb_a, emb_b] = offsets;
        Self { w1, b1, w2, b2, w3, b3, emb_a, emb_b }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `out[b] = w * input[b] + bias` for a row-major `[rows_out, cols]` weight.
fn dense(input: &[f64], cols: usize, w: &[f64], bias: &[f64], out: &mut Vec<f64>) {
    let rows_out = bias.len();
    out.clear();
    for row in input.chunks_exact(cols) {
        for (o, wo) in w.chunks_exact(cols).enumerate() {
            out.push(dot(wo, row) + bias[o]);
        }
    }
    debug_assert_eq!(out.len(), input.len() / cols * rows_out);
}

/// Forward activations for one batch, kept for backpropagation.
#[derive(Default)]
struct Activations {
    input: Vec<f64>,
    rows_a: Vec<usize>,
    rows_b: Vec<usize>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    act2: Vec<f64>,
    out: Vec<f64>,
}

/// Fixed training inputs: interpolated states, times, masks and targets.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub states: Vec<Vector>,
    pub times: Vec<f64>,
    pub conds: Vec<ConditionPair>,
    pub targets: Vec<Vector>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    arch: Architecture,
    params: Vec<f64>,
}

impl MlpModel {
    /// Random initialization: weights `N(0, 1/fan_in)`, zero biases,
    /// unit-normal embeddings.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Self {
        let mut params = Vec::with_capacity(arch.param_count());
        for (name, [r, c]) in arch.tensors() {
            let n = r * c;
            match name {
                "w1" | "w2" | "w3" => {
                    let std = (1.0 / c as f64).sqrt();
                    params.extend((0..n).map(|_| std * rng.normal()));
                }
                "emb_a" | "emb_b" => params.extend((0..n).map(|_| rng.normal())),
                _ => params.extend(std::iter::repeat_n(0.0, n)),
            }
        }
        Self { arch, params }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        Self { arch, params: vec![0.0; n] }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::DimensionMismatch { expected: arch.param_count(), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Slices of the flat parameter vector, one per tensor.
    pub fn tensor_ranges(&self) -> Vec<(&'static str, std::ops::Range<usize>)> {
        let mut at = 0;
        self.arch
            .tensors()
            .into_iter()
            .map(|(name, [r, c])| {
                let range = at..at + r * c;
                at += r * c;
                (name, range)
            })
            .collect()
    }

    fn embedding_row(&self, cond: &ConditionPair) -> (usize, usize) {
        (cond.a.unwrap_or(self.arch.classes_a), cond.b.unwrap_or(self.arch.classes_b))
    }

    fn check_condition(&self, cond: &ConditionPair) -> Result<()> {
        if cond.a.is_some_and(|a| a >= self.arch.classes_a) || cond.b.is_some_and(|b| b >= self.arch.classes_b) {
            return Err(invalid("condition class out of range for this model"));
        }
        Ok(())
    }

    fn forward(&self, states: &[Vector], times: &[f64], conds: &[ConditionPair], acts: &mut Activations) {
        let arch = &self.arch;
        let lay = Layout::new(arch);
        let p = &self.params;
        let (d, e) = (arch.dim, arch.embed_dim);
        let [h1, h2] = arch.hidden;

        acts.input.clear();
        acts.rows_a.clear();
        acts.rows_b.clear();
        for ((x, &t), cond) in states.iter().zip(times).zip(conds) {
            let (ra, rb) = self.embedding_row(cond);
            acts.input.extend_from_slice(x.as_slice());
            acts.input.extend_from_slice(&time_features(t));
            acts.input.extend_from_slice(&p[lay.emb_a + ra * e..lay.emb_a + (ra + 1) * e]);
            acts.input.extend_from_slice(&p[lay.emb_b + rb * e..lay.emb_b + (rb + 1) * e]);
            acts.rows_a.push(ra);
            acts.rows_b.push(rb);
        }
        let in_dim = arch.input_dim();
        dense(&acts.input, in_dim, &p[lay.w1..lay.b1], &p[lay.b1..lay.w2], &mut acts.pre1);
        acts.act1.clear();
        acts.act1.extend(acts.pre1.iter().map(|&x| silu(x)));
        dense(&acts.act1, h1, &p[lay.w2..lay.b2], &p[lay.b2..lay.w3], &mut acts.pre2);
        acts.act2.clear();
        acts.act2.extend(acts.pre2.iter().map(|&x| silu(x)));
        dense(&acts.act2, h2, &p[lay.w3..lay.b3], &p[lay.b3..lay.b3 + d], &mut acts.out);
    }

    /// Mean over the batch of `|output - target|^2`, with its gradient with
    /// respect to every parameter.
    pub fn loss_and_grad(&self, batch: &TrainBatch) -> Result<(f64, Vec<f64>)> {
        let mut acts = Activations::default();
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.loss_and_grad_into(batch, &mut acts, &mut grad)?;
        Ok((loss, grad))
    }

    fn loss_and_grad_into(&self, batch: &TrainBatch, acts: &mut Activations, grad: &mut [f64]) -> Result<f64> {
        if batch.is_empty() {
            return Err(invalid("training batch is empty"));
        }
        let arch = &self.arch;
        let (d, e) = (arch.dim, arch.embed_dim);
        for (x, y) in batch.states.iter().zip(&batch.targets) {
            check_dims(d, x.dim())?;
            check_dims(d, y.dim())?;
        }
        for c in &batch.conds {
            self.check_condition(c)?;
        }
        self.forward(&batch.states, &batch.times, &batch.conds, acts);

        let lay = Layout::new(arch);
        let p = &self.params;
        let [h1, h2] = arch.hidden;
        let in_dim = arch.input_dim();
        let n = batch.len();
        let scale = 2.0 / n as f64;
        grad.fill(0.0);

        let mut loss = 0.0;
        let mut d_out = vec![0.0; n * d];
        for (b, y) in batch.targets.iter().enumerate() {
            for k in 0..d {
                let r = acts.out[b * d + k] - y[k];
                loss += r * r;
                d_out[b * d + k] = scale * r;
            }
        }
        loss /= n as f64;

        // Output layer.
        let mut d_act2 = vec![0.0; n * h2];
        for b in 0..n {
            let a2 = &acts.act2[b * h2..(b + 1) * h2];
            for k in 0..d {
                let g = d_out[b * d + k];
                axpy(&mut grad[lay.w3 + k * h2..lay.w3 + (k + 1) * h2], g, a2);
                grad[lay.b3 + k] += g;
                axpy(&mut d_act2[b * h2..(b + 1) * h2], g, &p[lay.w3 + k * h2..lay.w3 + (k + 1) * h2]);
            }
        }
        // Second hidden layer.
        let mut d_act1 = vec![0.0; n * h1];
        for b in 0..n {
            let a1 = &acts.act1[b * h1..(b + 1) * h1];
            for o in 0..h2 {
                let g = d_act2[b * h2 + o] * silu_grad(acts.pre2[b * h2 + o]);
                if g == 0.0 {
                    continue;
                }
                axpy(&mut grad[lay.w2 + o * h1..lay.w2 + (o + 1) * h1], g, a1);
                grad[lay.b2 + o] += g;
                axpy(&mut d_act1[b * h1..(b + 1) * h1], g, &p[lay.w2 + o * h1..lay.w2 + (o + 1) * h1]);
            }
        }
        // First hidden layer and the embedding rows it read.
        let emb_at = d + TIME_FEATURES;
        let mut d_emb = vec![0.0; 2 * e];
        for b in 0..n {
            let z = &acts.input[b * in_dim..(b + 1) * in_dim];
            d_emb.fill(0.0);
            for o in 0..h1 {
                let g = d_act1[b * h1 + o] * silu_grad(acts.pre1[b * h1 + o]);
                if g == 0.0 {
                    continue;
                }
                let w_row = lay.w1 + o * in_dim;
                axpy(&mut grad[w_row..w_row + in_dim], g, z);
                grad[lay.b1 + o] += g;
                axpy(&mut d_emb, g, &p[w_row + emb_at..w_row + in_dim]);
            }
            let (ra, rb) = (acts.rows_a[b], acts.rows_b[b]);
            axpy(&mut grad[lay.emb_a + ra * e..lay.emb_a + (ra + 1) * e], 1.0, &d_emb[..e]);
            axpy(&mut grad[lay.emb_b + rb * e..lay.emb_b + (rb + 1) * e], 1.0, &d_emb[e..]);
        }
        Ok(loss)
    }
}

impl VelocityModel for MlpModel {
    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn velocity(&self, x: &Vector, t: f64, cond: &ConditionPair) -> Result<Vector> {
        Ok(self.velocity_batch(std::slice::from_ref(x), t, cond)?.remove(0))
    }

    fn velocity_batch(&self, xs: &[Vector], t: f64, cond: &ConditionPair) -> Result<Vec<Vector>> {
        for x in xs {
            check_dims(self.arch.dim, x.dim())?;
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid(format!("t must lie in [0, 1], got {t}")));
        }
        self.check_condition(cond)?;
        let mut acts = Activations::default();
        let times = vec![t; xs.len()];
        let conds = vec![*cond; xs.len()];
        self.forward(xs, &times, &conds, &mut acts);
        Ok(acts.out.chunks_exact(self.arch.dim).map(|c| Vector::from_raw(c.to_vec())).collect())
    }
}

/// Draws the flow-matching inputs for a batch of `(x_1, condition)` pairs:
/// per item `t ~ U[0, 1)`, `x_0 ~ N(0, I)`, then condition dropout.
pub fn draw_fm_batch(spec: &TaskSpec, items: &[(Vector, ConditionPair)], rng: &mut Rng) -> Result<TrainBatch> {
    if items.is_empty() {
        return Err(invalid("training batch is empty"));
    }
    let n = items.len();
    let mut batch = TrainBatch {
        states: Vec::with_capacity(n),
        times: Vec::with_capacity(n),
        conds: Vec::with_capacity(n),
        targets: Vec::with_capacity(n),
    };
    for (x1, cond) in items {
        if !cond.is_full() {
            return Err(invalid("training items need both factors present"));
        }
        let t = rng.uniform();
        let x0 = gaussian_sample(rng, x1.dim())?;
        let masked = mask_dropout(cond, spec, rng);
        let target = x1 - &x0;
        batch.states.push(x0.add_scaled(t, &target));
        batch.times.push(t);
        batch.conds.push(masked);
        batch.targets.push(target);
    }
    Ok(batch)
}

/// Flow-matching loss on a batch of data points: the model regresses
/// `x_1 - x_0` at `x_t = x_0 + t (x_1 - x_0)`.
pub fn fm_loss(
    model: &MlpModel,
    spec: &TaskSpec,
    items: &[(Vector, ConditionPair)],
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    let batch = draw_fm_batch(spec, items, rng)?;
    model.loss_and_grad(&batch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 20_000, batch: 256, lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(invalid("batch must be positive"));
        }
        if !(self.lr > 0.0 && self.lr < 1.0) {
            return Err(invalid("learning rate must lie in (0, 1)"));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid("Adam betas must lie in [0, 1)"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(invalid("eps must be positive"));
        }
        Ok(())
    }
}

/// Stateful Adam trainer; [`train`] drives it to completion.
pub struct Trainer {
    spec: TaskSpec,
    cfg: TrainConfig,
    model: MlpModel,
    rng: Rng,
    m: Vec<f64>,
    v: Vec<f64>,
    grad: Vec<f64>,
    acts: Activations,
    step: usize,
    last_finite_step: usize,
    curve: Vec<(usize, f64)>,
}

impl Trainer {
    pub fn new(spec: &TaskSpec, cfg: &TrainConfig) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let root = Rng::new(cfg.seed);
        let model = MlpModel::init(Architecture::for_task(spec), &mut root.split_str("init"));
        let n = model.params().len();
        Ok(Self {
            spec: spec.clone(),
            cfg: cfg.clone(),
            model,
            rng: root.split_str("data"),
            m: vec![0.0; n],
            v: vec![0.0; n],
            grad: vec![0.0; n],
            acts: Activations::default(),
            step: 0,
            last_finite_step: 0,
            curve: Vec::new(),
        })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// `(step, loss)` for every completed step.
    pub fn curve(&self) -> &[(usize, f64)] {
        &self.curve
    }

    /// One Adam step on a fresh batch. Returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let conds = self.spec.all_conditions();
        let items = (0..self.cfg.batch)
            .map(|_| {
                let cond = conds[self.rng.below(conds.len())];
                Ok((sample_target(&self.spec, &cond, &mut self.rng)?, cond))
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = draw_fm_batch(&self.spec, &items, &mut self.rng)?;
        let loss = self.model.loss_and_grad_into(&batch, &mut self.acts, &mut self.grad)?;
        self.step += 1;
        if !loss.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure { step: self.step, last_valid_step: self.last_finite_step });
        }

        let TrainConfig { lr, beta1, beta2, eps, .. } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in self.model.params_mut().iter_mut().zip(&self.grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        if self.model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingFailure { step: self.step, last_valid_step: self.last_finite_step });
        }
        self.last_finite_step = self.step;
        self.curve.push((self.step, loss));
        Ok(loss)
    }

    /// Runs until `target` total steps have been taken.
    pub fn run_to(&mut self, target: usize) -> Result<()> {
        while self.step < target {
            self.step()?;
        }
        Ok(())
    }

    pub fn last_gradient(&self) -> &[f64] {
        &self.grad
    }

    pub fn finish(self) -> Trained {
        Trained { model: self.model, curve: self.curve, seed: self.cfg.seed }
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub model: MlpModel,
    pub curve: Vec<(usize, f64)>,
    pub seed: u64,
}

impl Trained {
    /// Mean loss over a range of curve entries.
    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.curve[range];
        s.iter().map(|(_, l)| l).sum::<f64>() / s.len() as f64
    }
}

/// Trains a fresh model for `cfg.steps` Adam steps.
pub fn train(spec: &TaskSpec, cfg: &TrainConfig) -> Result<Trained> {
    let mut trainer = Trainer::new(spec, cfg)?;
    trainer.run_to(cfg.steps)?;
    Ok(trainer.finish())
}
