//! Two-layer LSTM classifier over single document vectors.
//!
//! A document vector is fed as a sequence of one timestep. Layer 1 (128
//! units) and layer 2 (64 units) start from zero state, layer 2's output goes
//! through inverted dropout during training, then a dense softmax layer.
//! Training is mini-batch Adam on categorical cross-entropy.
//!
//! All weights live in one flat vector; [`LstmModel::tensors`] names the
//! slices. Gate order inside the 4·h blocks is input, forget, cell, output.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::boost::argmax;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

pub const LOSS_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmHyper {
    pub hidden1: usize,
    pub hidden2: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub validation_split: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for LstmHyper {
    fn default() -> Self {
        Self {
            hidden1: 128,
            hidden2: 64,
            dropout: 0.5,
            epochs: 10,
            batch_size: 64,
            validation_split: 0.1,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter count of one LSTM layer: `4·(h·(d_in + h) + h)`.
pub fn lstm_param_count(d_in: usize, h: usize) -> usize {
    4 * (h * (d_in + h) + h)
}

#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    d_in: usize,
    h: usize,
    kernel: usize,
    recurrent: usize,
    bias: usize,
}

impl LayerLayout {
    fn new(d_in: usize, h: usize, offset: usize) -> Self {
        Self {
            d_in,
            h,
            kernel: offset,
            recurrent: offset + d_in * 4 * h,
            bias: offset + (d_in + h) * 4 * h,
        }
    }

    fn end(&self) -> usize {
        self.bias + 4 * self.h
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    l1: LayerLayout,
    l2: LayerLayout,
    dense_w: usize,
    dense_b: usize,
    classes: usize,
    total: usize,
}

impl Layout {
    fn new(d_in: usize, h1: usize, h2: usize, classes: usize) -> Self {
        let l1 = LayerLayout::new(d_in, h1, 0);
        let l2 = LayerLayout::new(h1, h2, l1.end());
        let dense_w = l2.end();
        let dense_b = dense_w + h2 * classes;
        Self {
            l1,
            l2,
            dense_w,
            dense_b,
            classes,
            total: dense_b + classes,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ---------------------------------------------------------------------------
// LSTM cell
// ---------------------------------------------------------------------------

/// Activations of one cell step, kept for the backward pass.
#[derive(Debug, Clone, Default)]
struct CellCache {
    x: Vec<f64>,
    h_prev: Option<Vec<f64>>,
    c_prev: Option<Vec<f64>>,
    /// i, f, g, o after their nonlinearities, 4·h.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    c: Vec<f64>,
    h: Vec<f64>,
}

/// `state == None` is the zero initial state.
fn cell_forward(
    p: &[f64],
    l: LayerLayout,
    x: &[f64],
    state: Option<(&[f64], &[f64])>,
) -> CellCache {
    let (d_in, h) = (l.d_in, l.h);
    let w = 4 * h;
    let mut z = p[l.bias..l.bias + w].to_vec();
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        let row = &p[l.kernel + k * w..l.kernel + (k + 1) * w];
        for (zj, wj) in z.iter_mut().zip(row) {
            *zj += xk * wj;
        }
    }
    if let Some((h_prev, _)) = state {
        for (k, &hk) in h_prev.iter().enumerate() {
            let row = &p[l.recurrent + k * w..l.recurrent + (k + 1) * w];
            for (zj, uj) in z.iter_mut().zip(row) {
                *zj += hk * uj;
            }
        }
    }
    debug_assert_eq!(x.len(), d_in);
    let mut gates = z;
    for j in 0..h {
        gates[j] = sigmoid(gates[j]);
        gates[h + j] = sigmoid(gates[h + j]);
        gates[2 * h + j] = gates[2 * h + j].tanh();
        gates[3 * h + j] = sigmoid(gates[3 * h + j]);
    }
    let mut c = vec![0.0; h];
    let mut tanh_c = vec![0.0; h];
    let mut out = vec![0.0; h];
    for j in 0..h {
        c[j] = gates[j] * gates[2 * h + j];
        if let Some((_, c_prev)) = state {
            c[j] += gates[h + j] * c_prev[j];
        }
        tanh_c[j] = c[j].tanh();
        out[j] = gates[3 * h + j] * tanh_c[j];
    }
    CellCache {
        x: x.to_vec(),
        h_prev: state.map(|s| s.0.to_vec()),
        c_prev: state.map(|s| s.1.to_vec()),
        gates,
        tanh_c,
        c,
        h: out,
    }
}

/// Accumulates parameter gradients into `grad` and returns
/// `(dx, dh_prev, dc_prev)`.
fn cell_backward(
    p: &[f64],
    l: LayerLayout,
    cache: &CellCache,
    dh: &[f64],
    dc_next: Option<&[f64]>,
    grad: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = l.h;
    let w = 4 * h;
    let g = &cache.gates;
    let mut dz = vec![0.0; w];
    let mut dc_prev = vec![0.0; h];
    for j in 0..h {
        let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
        let t = cache.tanh_c[j];
        let d_o = dh[j] * t;
        let mut dc = dh[j] * o_g * (1.0 - t * t);
        if let Some(dn) = dc_next {
            dc += dn[j];
        }
        let c_prev = cache.c_prev.as_ref().map_or(0.0, |c| c[j]);
        dz[j] = dc * c_g * i_g * (1.0 - i_g);
        dz[h + j] = dc * c_prev * f_g * (1.0 - f_g);
        dz[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
        dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
        dc_prev[j] = dc * f_g;
    }
    for (gb, d) in grad[l.bias..l.bias + w].iter_mut().zip(&dz) {
        *gb += d;
    }
    let mut dx = vec![0.0; l.d_in];
    for (k, &xk) in cache.x.iter().enumerate() {
        let row = l.kernel + k * w;
        let mut acc = 0.0;
        for j in 0..w {
            grad[row + j] += xk * dz[j];
            acc += p[row + j] * dz[j];
        }
        dx[k] = acc;
    }
    let mut dh_prev = vec![0.0; h];
    if let Some(h_prev) = &cache.h_prev {
        for (k, &hk) in h_prev.iter().enumerate() {
            let row = l.recurrent + k * w;
            let mut acc = 0.0;
            for j in 0..w {
                grad[row + j] += hk * dz[j];
                acc += p[row + j] * dz[j];
            }
            dh_prev[k] = acc;
        }
    }
    (dx, dh_prev, dc_prev)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub input_dim: usize,
    pub num_classes: usize,
    pub hyper: LstmHyper,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

struct SampleCache {
    l1: CellCache,
    l2: CellCache,
    mask: Option<Vec<f64>>,
    proba: Vec<f64>,
}

fn glorot(rng: &mut Rng, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.gen_range(-limit..limit);
    }
}

impl LstmModel {
    /// Glorot-uniform kernels, zero biases except forget-gate bias 1.
    pub fn new(input_dim: usize, num_classes: usize, hyper: &LstmHyper) -> Self {
        let layout = Layout::new(input_dim, hyper.hidden1, hyper.hidden2, num_classes);
        let mut params = vec![0.0; layout.total];
        let mut rng = seeded(derive_seed(hyper.seed, "lstm.init"));
        for l in [layout.l1, layout.l2] {
            let w = 4 * l.h;
            glorot(&mut rng, &mut params[l.kernel..l.recurrent], l.d_in, w);
            glorot(&mut rng, &mut params[l.recurrent..l.bias], l.h, w);
            params[l.bias + l.h..l.bias + 2 * l.h].fill(1.0);
        }
        glorot(
            &mut rng,
            &mut params[layout.dense_w..layout.dense_b],
            hyper.hidden2,
            num_classes,
        );
        Self {
            input_dim,
            num_classes,
            hyper: hyper.clone(),
            params,
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(
            self.input_dim,
            self.hyper.hidden1,
            self.hyper.hidden2,
            self.num_classes,
        )
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        let l = self.layout();
        let spec = |name: &str, shape: Vec<usize>, offset| TensorSpec {
            name: name.into(),
            shape,
            offset,
        };
        vec![
            spec("lstm1/kernel", vec![l.l1.d_in, 4 * l.l1.h], l.l1.kernel),
            spec(
                "lstm1/recurrent_kernel",
                vec![l.l1.h, 4 * l.l1.h],
                l.l1.recurrent,
            ),
            spec("lstm1/bias", vec![4 * l.l1.h], l.l1.bias),
            spec("lstm2/kernel", vec![l.l2.d_in, 4 * l.l2.h], l.l2.kernel),
            spec(
                "lstm2/recurrent_kernel",
                vec![l.l2.h, 4 * l.l2.h],
                l.l2.recurrent,
            ),
            spec("lstm2/bias", vec![4 * l.l2.h], l.l2.bias),
            spec("dense/kernel", vec![l.l2.h, l.classes], l.dense_w),
            spec("dense/bias", vec![l.classes], l.dense_b),
        ]
    }

    /// Rebuilds a model from a flat parameter vector.
    pub fn from_params(
        input_dim: usize,
        num_classes: usize,
        hyper: &LstmHyper,
        params: Vec<f64>,
    ) -> Result<Self> {
        let expected = Layout::new(input_dim, hyper.hidden1, hyper.hidden2, num_classes).total;
        if params.len() != expected {
            return Err(Error::InvalidInput(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite LSTM parameter".into()));
        }
        Ok(Self {
            input_dim,
            num_classes,
            hyper: hyper.clone(),
            params,
        })
    }

    /// Draws an inverted-dropout mask: kept units are scaled by `1/(1-rate)`.
    pub fn dropout_mask(&self, rng: &mut Rng) -> Vec<f64> {
        let rate = self.hyper.dropout;
        let keep = 1.0 / (1.0 - rate);
        (0..self.hyper.hidden2)
            .map(|_| if rng.gen::<f64>() >= rate { keep } else { 0.0 })
            .collect()
    }

    fn forward_cached(&self, x: &[f64], mask: Option<Vec<f64>>) -> SampleCache {
        let l = self.layout();
        let p = &self.params;
        let l1 = cell_forward(p, l.l1, x, None);
        let l2 = cell_forward(p, l.l2, &l1.h, None);
        let dropped: Vec<f64> = match &mask {
            Some(m) => l2.h.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => l2.h.clone(),
        };
        let c = l.classes;
        let mut logits = p[l.dense_b..l.dense_b + c].to_vec();
        for (k, &hk) in dropped.iter().enumerate() {
            let row = &p[l.dense_w + k * c..l.dense_w + (k + 1) * c];
            for (z, w) in logits.iter_mut().zip(row) {
                *z += hk * w;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut proba: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = proba.iter().sum();
        proba.iter_mut().for_each(|v| *v /= sum);
        SampleCache {
            l1,
            l2,
            mask,
            proba,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::InvalidInput(format!(
                "expected input of length {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite input".into()));
        }
        Ok(())
    }

    /// Class probabilities for one document vector. Dropout is applied only
    /// when `training` is set, with the mask drawn from `rng`.
    pub fn forward(&self, x: &[f64], training: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mask = training.then(|| self.dropout_mask(rng));
        Ok(self.forward_cached(x, mask).proba)
    }

    /// Row-major N×C probabilities without dropout.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if !x.len().is_multiple_of(self.input_dim) {
            return Err(Error::InvalidInput(
                "input rows do not match model width".into(),
            ));
        }
        let mut out = Vec::with_capacity(x.len() / self.input_dim * self.num_classes);
        for row in x.chunks(self.input_dim) {
            self.check_input(row)?;
            out.extend(self.forward_cached(row, None).proba);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(x)?
            .chunks(self.num_classes)
            .map(argmax)
            .collect())
    }

    fn backward(&self, cache: &SampleCache, label: usize, grad: &mut [f64]) {
        let l = self.layout();
        let p = &self.params;
        let c = l.classes;
        let mut dlogits = cache.proba.clone();
        if cache.proba[label] < LOSS_CLIP {
            // clipped: the loss is constant in the parameters
            return;
        }
        dlogits[label] -= 1.0;
        for (gb, d) in grad[l.dense_b..l.dense_b + c].iter_mut().zip(&dlogits) {
            *gb += d;
        }
        let mut dh2 = vec![0.0; l.l2.h];
        for k in 0..l.l2.h {
            let hk = cache.l2.h[k] * cache.mask.as_ref().map_or(1.0, |m| m[k]);
            let row = l.dense_w + k * c;
            let mut acc = 0.0;
            for j in 0..c {
                grad[row + j] += hk * dlogits[j];
                acc += p[row + j] * dlogits[j];
            }
            dh2[k] = acc * cache.mask.as_ref().map_or(1.0, |m| m[k]);
        }
        let (dh1, _, _) = cell_backward(p, l.l2, &cache.l2, &dh2, None, grad);
        cell_backward(p, l.l1, &cache.l1, &dh1, None, grad);
    }

    /// Mean cross-entropy over a batch and its gradient. `masks`, when given,
    /// fixes the dropout mask of each sample.
    pub fn loss_and_grad(
        &self,
        x: &[f64],
        y: &[usize],
        masks: Option<&[Vec<f64>]>,
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let n = y.len();
        let mut loss = 0.0;
        for (i, &label) in y.iter().enumerate() {
            let mask = masks.map(|m| m[i].clone());
            let cache = self.forward_cached(&x[i * self.input_dim..(i + 1) * self.input_dim], mask);
            loss -= cache.proba[label].max(LOSS_CLIP).ln();
            self.backward(&cache, label, &mut grad);
        }
        let scale = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (loss * scale, grad)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], h: &LstmHyper) {
        self.t += 1;
        let lr_t =
            h.learning_rate * (1.0 - h.beta2.powi(self.t)).sqrt() / (1.0 - h.beta1.powi(self.t));
        for i in 0..params.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * grad[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
            params[i] -= lr_t * self.m[i] / (self.v[i].sqrt() + h.epsilon);
        }
    }
}

fn evaluate(model: &LstmModel, x: &[f64], y: &[usize], idx: &[usize]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0;
    for &i in idx {
        let cache = model.forward_cached(&x[i * model.input_dim..(i + 1) * model.input_dim], None);
        loss -= cache.proba[y[i]].max(LOSS_CLIP).ln();
        correct += usize::from(argmax(&cache.proba) == y[i]);
    }
    let n = idx.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Trains a fresh model on row-major `x`. After a seeded shuffle the last
/// `validation_split` of the rows is held out for validation.
pub fn fit(
    x: &[f64],
    input_dim: usize,
    y: &[usize],
    num_classes: usize,
    hyper: &LstmHyper,
) -> Result<(LstmModel, Vec<EpochStats>)> {
    let n = y.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 samples for a validation split, got {n}"
        )));
    }
    if x.len() != n * input_dim {
        return Err(Error::InvalidInput(format!(
            "{} values for {n} rows of {input_dim}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite input".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
        return Err(Error::InvalidInput(format!("label {bad} out of range")));
    }
    if hyper.batch_size == 0 || !(0.0..1.0).contains(&hyper.dropout) {
        return Err(Error::InvalidInput(
            "batch size must be positive and dropout in [0, 1)".into(),
        ));
    }
    let split_at = (n as f64 * (1.0 - hyper.validation_split)) as usize;
    if split_at == 0 || split_at >= n {
        return Err(Error::InvalidInput(
            "validation split leaves an empty side".into(),
        ));
    }

    let mut model = LstmModel::new(input_dim, num_classes, hyper);
    let mut rng = seeded(derive_seed(hyper.seed, "lstm.fit"));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (train_idx, val_idx) = order.split_at(split_at);
    let mut train_idx = train_idx.to_vec();
    let mut adam = Adam::new(model.params.len());
    let mut history = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in train_idx.chunks(hyper.batch_size) {
            let mut grad = vec![0.0; model.params.len()];
            for &i in batch {
                let mask = (hyper.dropout > 0.0).then(|| model.dropout_mask(&mut rng));
                let cache = model.forward_cached(&x[i * input_dim..(i + 1) * input_dim], mask);
                loss_sum -= cache.proba[y[i]].max(LOSS_CLIP).ln();
                correct += usize::from(argmax(&cache.proba) == y[i]);
                model.backward(&cache, y[i], &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut model.params, &grad, hyper);
        }
        if !model.all_finite() {
            return Err(Error::InvalidInput(format!(
                "LSTM diverged in epoch {}",
                epoch + 1
            )));
        }
        let (val_loss, val_accuracy) = evaluate(&model, x, y, val_idx);
        history.push(EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / train_idx.len() as f64,
            train_accuracy: correct as f64 / train_idx.len() as f64,
            val_loss,
            val_accuracy,
        });
    }
    Ok((model, history))
}
