//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cryptext_core::embed::{self, Mode};
use cryptext_core::pipeline::ExperimentConfig;
use cryptext_core::recur::{LstmHyper, LstmModel};
use rand::Rng as _;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Default configuration pointed at a fixture corpus.
pub fn fixture_config(corpus: &str, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        corpus_root: fixture(corpus),
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

/// Worst relative error between `analytic` and central differences of
/// `loss`, plus the number of coordinates with a non-negligible gradient.
pub fn finite_difference_check(
    params: &mut [f64],
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
) -> (f64, usize) {
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut active = 0;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let up = loss(params);
        params[i] = orig - eps;
        let down = loss(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let scale = numeric.abs().max(analytic[i].abs());
        if scale < 1e-7 {
            // both effectively zero; anything else is a hard failure
            if (numeric - analytic[i]).abs() > 1e-9 {
                worst = f64::INFINITY;
            }
            continue;
        }
        worst = worst.max((numeric - analytic[i]).abs() / scale);
        active += 1;
    }
    (worst, active)
}

// --- paragraph vectors --------------------------------------------------------

/// (doc, context ids, [(word, label)])
pub type Position = (usize, Vec<usize>, Vec<(usize, f64)>);

pub struct EmbedToy {
    pub d: usize,
    pub v: usize,
    pub n: usize,
    pub positions: Vec<Position>,
}

impl EmbedToy {
    pub fn new() -> Self {
        Self {
            d: 4,
            v: 5,
            n: 3,
            positions: vec![
                (0, vec![1, 2], vec![(0, 1.0), (3, 0.0), (4, 0.0)]),
                (0, vec![0, 2, 2], vec![(1, 1.0), (4, 0.0)]),
                (1, vec![3], vec![(2, 1.0), (0, 0.0), (1, 0.0)]),
                (2, vec![], vec![(4, 1.0), (2, 0.0)]),
                (2, vec![4, 0], vec![(3, 1.0), (1, 0.0), (2, 0.0)]),
            ],
        }
    }

    /// Flat layout: w_in | w_out | docs.
    pub fn param_len(&self) -> usize {
        2 * self.v * self.d + self.n * self.d
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let vd = self.v * self.d;
        (&p[..vd], &p[vd..2 * vd], &p[2 * vd..])
    }

    /// Negative-sampling loss summed over positions, written out directly.
    pub fn loss(&self, p: &[f64], mode: Mode) -> f64 {
        let d = self.d;
        let (w_in, w_out, docs) = self.split(p);
        let ln_sigmoid = |x: f64| -(1.0 + (-x).exp()).ln();
        let mut loss = 0.0;
        for (doc, ctx, samples) in &self.positions {
            let mut h = docs[doc * d..(doc + 1) * d].to_vec();
            if mode == Mode::PvDmMean {
                for &c in ctx {
                    for k in 0..d {
                        h[k] += w_in[c * d + k];
                    }
                }
                let n = (ctx.len() + 1) as f64;
                h.iter_mut().for_each(|x| *x /= n);
            }
            for &(w, label) in samples {
                let s: f64 = (0..d).map(|k| h[k] * w_out[w * d + k]).sum();
                loss -= if label == 1.0 {
                    ln_sigmoid(s)
                } else {
                    ln_sigmoid(-s)
                };
            }
        }
        loss
    }

    pub fn gradient(&self, p: &[f64], mode: Mode) -> Vec<f64> {
        let d = self.d;
        let vd = self.v * d;
        let (w_in, w_out, docs) = self.split(p);
        let mut g = vec![0.0; p.len()];
        for (doc, ctx, samples) in &self.positions {
            let dv = &docs[doc * d..(doc + 1) * d];
            let (gi, go, gd) = embed::position_gradient(w_in, w_out, dv, mode, ctx, samples);
            for (a, b) in g[..vd].iter_mut().zip(&gi) {
                *a += b;
            }
            for (a, b) in g[vd..2 * vd].iter_mut().zip(&go) {
                *a += b;
            }
            for (a, b) in g[2 * vd + doc * d..2 * vd + (doc + 1) * d]
                .iter_mut()
                .zip(&gd)
            {
                *a += b;
            }
        }
        g
    }

    pub fn random_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = cryptext_core::rng::seeded(seed);
        (0..self.param_len())
            .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
            .collect()
    }
}

// --- LSTM classifier -----------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn tensor<'a>(model: &LstmModel, p: &'a [f64], name: &str) -> &'a [f64] {
    let t = model
        .tensors()
        .into_iter()
        .find(|t| t.name == name)
        .unwrap_or_else(|| panic!("no tensor {name}"));
    &p[t.offset..t.offset + t.len()]
}

/// One LSTM step from a zero state, Keras gate order i, f, c, o.
fn naive_cell(kernel: &[f64], bias: &[f64], x: &[f64], h: usize) -> Vec<f64> {
    let w = 4 * h;
    let z: Vec<f64> = (0..w)
        .map(|j| bias[j] + (0..x.len()).map(|k| x[k] * kernel[k * w + j]).sum::<f64>())
        .collect();
    (0..h)
        .map(|j| {
            let i = sigmoid(z[j]);
            let g = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            o * (i * g).tanh()
        })
        .collect()
}

/// Mean cross-entropy of the two-layer network, computed from the tensor
/// table without touching the model's own forward pass.
pub fn naive_lstm_loss(
    model: &LstmModel,
    p: &[f64],
    x: &[f64],
    y: &[usize],
    masks: &[Vec<f64>],
) -> f64 {
    let (h1, h2, c) = (model.hyper.hidden1, model.hyper.hidden2, model.num_classes);
    let d = model.input_dim;
    let mut total = 0.0;
    for (i, &label) in y.iter().enumerate() {
        let a1 = naive_cell(
            tensor(model, p, "lstm1/kernel"),
            tensor(model, p, "lstm1/bias"),
            &x[i * d..(i + 1) * d],
            h1,
        );
        let a2 = naive_cell(
            tensor(model, p, "lstm2/kernel"),
            tensor(model, p, "lstm2/bias"),
            &a1,
            h2,
        );
        let dropped: Vec<f64> = a2.iter().zip(&masks[i]).map(|(a, m)| a * m).collect();
        let wk = tensor(model, p, "dense/kernel");
        let b = tensor(model, p, "dense/bias");
        let logits: Vec<f64> = (0..c)
            .map(|j| b[j] + (0..h2).map(|k| dropped[k] * wk[k * c + j]).sum::<f64>())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[label];
    }
    total / y.len() as f64
}

pub struct LstmToy {
    pub model: LstmModel,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub masks: Vec<Vec<f64>>,
}

/// Three samples, three classes, hidden sizes (4, 3), fixed dropout masks.
pub fn lstm_toy(seed: u64) -> LstmToy {
    let hyper = LstmHyper {
        hidden1: 4,
        hidden2: 3,
        seed,
        ..LstmHyper::default()
    };
    let mut model = LstmModel::new(5, 3, &hyper);
    let mut rng = cryptext_core::rng::seeded(seed ^ 0x5eed);
    // spread the weights so every gate is away from saturation and zero
    for v in model.params_mut() {
        *v += rng.gen::<f64>() * 0.6 - 0.3;
    }
    let x = (0..15).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    LstmToy {
        model,
        x,
        y: vec![0, 2, 1],
        masks: vec![
            vec![2.0, 0.0, 2.0],
            vec![2.0, 2.0, 2.0],
            vec![0.0, 2.0, 2.0],
        ],
    }
}

/// Worst relative error of the LSTM gradient against the naive loss.
pub fn lstm_gradient_error(seed: u64) -> (f64, usize) {
    let toy = lstm_toy(seed);
    let (loss, grad) = toy.model.loss_and_grad(&toy.x, &toy.y, Some(&toy.masks));
    let mut p = toy.model.params().to_vec();
    let reference = naive_lstm_loss(&toy.model, &p, &toy.x, &toy.y, &toy.masks);
    assert!(
        (loss - reference).abs() < 1e-12,
        "loss {loss} vs naive {reference}"
    );
    let model = &toy.model;
    finite_difference_check(&mut p, &grad, |q| {
        naive_lstm_loss(model, q, &toy.x, &toy.y, &toy.masks)
    })
}

/// Worst relative error of the paragraph-vector gradient in `mode`.
pub fn embed_gradient_error(mode: Mode, seed: u64) -> (f64, usize) {
    let toy = EmbedToy::new();
    let mut p = toy.random_params(seed);
    let grad = toy.gradient(&p, mode);
    finite_difference_check(&mut p, &grad, |q| toy.loss(q, mode))
}
