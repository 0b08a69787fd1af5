//! Multiclass gradient-boosted regression trees with a softmax objective.
//!
//! Each round computes softmax probabilities from the current margins and
//! grows one regression tree per class on the first and second derivatives
//! of the multiclass log loss. Splits are exact greedy over presorted feature
//! values with midpoint thresholds; rows with `x < threshold` go left.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HESSIAN_FLOOR: f64 = 1e-16;
pub const LOSS_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostHyper {
    pub rounds: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

impl Default for BoostHyper {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_depth: 6,
            eta: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Missing-value direction; features are always dense so this is
        /// never consulted.
        default_left: bool,
    },
    Leaf {
        leaf: f64,
    },
}

/// Nodes in an arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { leaf } => return leaf,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[feature] < threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub hyper: BoostHyper,
    pub num_classes: usize,
    pub num_features: usize,
    pub base_score: f64,
    /// Round-major: the tree for round `r`, class `c` is `trees[r * C + c]`.
    pub trees: Vec<Tree>,
    /// Training mlogloss before the first round and after every round.
    pub train_mlogloss: Vec<f64>,
}

fn validate_matrix(x: &[f64], num_features: usize) -> Result<usize> {
    if num_features == 0 || !x.len().is_multiple_of(num_features) {
        return Err(Error::InvalidInput(format!(
            "feature matrix of {} values does not split into rows of {num_features}",
            x.len()
        )));
    }
    if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite feature at row {}, column {}",
            pos / num_features,
            pos % num_features
        )));
    }
    Ok(x.len() / num_features)
}

fn softmax_into(margins: &[f64], out: &mut [f64]) {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, m) in out.iter_mut().zip(margins) {
        *o = (m - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// `-(1/N) Σ ln max(p[i, y_i], 1e-15)` over row-major N×C probabilities.
pub fn mlogloss(proba: &[f64], num_classes: usize, y: &[usize]) -> f64 {
    let n = y.len();
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &c)| proba[i * num_classes + c].max(LOSS_CLIP).ln())
        .sum();
    -total / n as f64
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    grad_left: f64,
    hess_left: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Scan {
    grad: f64,
    hess: f64,
    last: Option<f64>,
}

struct FrontierNode {
    node: usize,
    grad: f64,
    hess: f64,
}

const DONE: u32 = u32::MAX;

struct TreeBuilder<'a> {
    x: &'a [f64],
    d: usize,
    sorted: &'a [Vec<u32>],
    hyper: &'a BoostHyper,
}

impl TreeBuilder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.hyper.lambda)
    }

    fn leaf(&self, g: f64, h: f64) -> TreeNode {
        TreeNode::Leaf {
            leaf: -g / (h + self.hyper.lambda),
        }
    }

    fn grow(&self, grad: &[f64], hess: &[f64]) -> Tree {
        let n = grad.len();
        let mut nodes = vec![TreeNode::Leaf { leaf: 0.0 }];
        let mut node_of = vec![0u32; n];
        let mut frontier = vec![FrontierNode {
            node: 0,
            grad: grad.iter().sum(),
            hess: hess.iter().sum(),
        }];
        // node id -> index in frontier
        let mut slot = vec![0usize];

        for _depth in 0..self.hyper.max_depth {
            if frontier.is_empty() {
                break;
            }
            let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
            let mut scan = vec![Scan::default(); frontier.len()];
            for (f, order) in self.sorted.iter().enumerate() {
                scan.iter_mut().for_each(|s| *s = Scan::default());
                for &i in order {
                    let i = i as usize;
                    let node = node_of[i];
                    if node == DONE {
                        continue;
                    }
                    let s = slot[node as usize];
                    let v = self.x[i * self.d + f];
                    let st = &mut scan[s];
                    if let Some(prev) = st.last {
                        if v > prev {
                            let fr = &frontier[s];
                            let (gl, hl) = (st.grad, st.hess);
                            let (gr, hr) = (fr.grad - gl, fr.hess - hl);
                            if hl >= self.hyper.min_child_weight
                                && hr >= self.hyper.min_child_weight
                            {
                                let gain = 0.5
                                    * (self.score(gl, hl) + self.score(gr, hr)
                                        - self.score(fr.grad, fr.hess))
                                    - self.hyper.gamma;
                                if gain > best[s].map_or(0.0, |b| b.gain) {
                                    let mut threshold = prev + (v - prev) * 0.5;
                                    if threshold <= prev {
                                        threshold = v;
                                    }
                                    best[s] = Some(Candidate {
                                        gain,
                                        feature: f,
                                        threshold,
                                        grad_left: gl,
                                        hess_left: hl,
                                    });
                                }
                            }
                        }
                    }
                    st.grad += grad[i];
                    st.hess += hess[i];
                    st.last = Some(v);
                }
            }

            let mut next = Vec::new();
            for (s, fr) in frontier.iter().enumerate() {
                match best[s] {
                    Some(c) => {
                        let left = nodes.len();
                        nodes.push(TreeNode::Leaf { leaf: 0.0 });
                        nodes.push(TreeNode::Leaf { leaf: 0.0 });
                        nodes[fr.node] = TreeNode::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            left,
                            right: left + 1,
                            default_left: true,
                        };
                        next.push(FrontierNode {
                            node: left,
                            grad: c.grad_left,
                            hess: c.hess_left,
                        });
                        next.push(FrontierNode {
                            node: left + 1,
                            grad: fr.grad - c.grad_left,
                            hess: fr.hess - c.hess_left,
                        });
                    }
                    None => nodes[fr.node] = self.leaf(fr.grad, fr.hess),
                }
            }
            for node in node_of.iter_mut().enumerate() {
                let (i, node) = node;
                if *node == DONE {
                    continue;
                }
                *node = match nodes[*node as usize] {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        ..
                    } => {
                        if self.x[i * self.d + feature] < threshold {
                            left as u32
                        } else {
                            right as u32
                        }
                    }
                    TreeNode::Leaf { .. } => DONE,
                };
            }
            slot = vec![usize::MAX; nodes.len()];
            for (s, fr) in next.iter().enumerate() {
                slot[fr.node] = s;
            }
            frontier = next;
        }
        for fr in &frontier {
            nodes[fr.node] = self.leaf(fr.grad, fr.hess);
        }
        Tree { nodes }
    }
}

/// Fits `hyper.rounds × num_classes` trees on row-major `x`.
pub fn fit(
    x: &[f64],
    num_features: usize,
    y: &[usize],
    num_classes: usize,
    hyper: &BoostHyper,
) -> Result<TreeEnsemble> {
    let n = validate_matrix(x, num_features)?;
    if n == 0 {
        return Err(Error::InvalidInput("cannot fit on zero rows".into()));
    }
    if n != y.len() {
        return Err(Error::InvalidInput(format!(
            "{n} rows but {} labels",
            y.len()
        )));
    }
    if num_classes < 2 {
        return Err(Error::InvalidInput("need at least two classes".into()));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
        return Err(Error::InvalidInput(format!("label {bad} out of range")));
    }
    let d = num_features;
    let c_count = num_classes;

    let sorted: Vec<Vec<u32>> = (0..d)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                x[a as usize * d + f]
                    .total_cmp(&x[b as usize * d + f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    let builder = TreeBuilder {
        x,
        d,
        sorted: &sorted,
        hyper,
    };

    let base_score = 0.0;
    let mut margins = vec![base_score; n * c_count];
    let mut proba = vec![0.0; n * c_count];
    let refresh = |margins: &[f64], proba: &mut [f64]| {
        for i in 0..n {
            softmax_into(
                &margins[i * c_count..(i + 1) * c_count],
                &mut proba[i * c_count..(i + 1) * c_count],
            );
        }
    };
    refresh(&margins, &mut proba);
    let mut history = vec![mlogloss(&proba, c_count, y)];
    let mut trees = Vec::with_capacity(hyper.rounds * c_count);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for _round in 0..hyper.rounds {
        for c in 0..c_count {
            for i in 0..n {
                let p = proba[i * c_count + c];
                grad[i] = p - if y[i] == c { 1.0 } else { 0.0 };
                hess[i] = (p * (1.0 - p)).max(HESSIAN_FLOOR);
            }
            let tree = builder.grow(&grad, &hess);
            for i in 0..n {
                margins[i * c_count + c] += hyper.eta * tree.predict(&x[i * d..(i + 1) * d]);
            }
            trees.push(tree);
        }
        refresh(&margins, &mut proba);
        history.push(mlogloss(&proba, c_count, y));
    }

    Ok(TreeEnsemble {
        hyper: hyper.clone(),
        num_classes,
        num_features,
        base_score,
        trees,
        train_mlogloss: history,
    })
}

impl TreeEnsemble {
    pub fn rounds(&self) -> usize {
        self.trees.len() / self.num_classes
    }

    /// Row-major N×C softmax probabilities.
    pub fn predict_proba(&self, x: &[f64], num_features: usize) -> Result<Vec<f64>> {
        if num_features != self.num_features {
            return Err(Error::InvalidInput(format!(
                "model expects {} features, got {num_features}",
                self.num_features
            )));
        }
        let n = validate_matrix(x, num_features)?;
        let c = self.num_classes;
        let mut out = vec![0.0; n * c];
        let mut margins = vec![0.0; c];
        for i in 0..n {
            let row = &x[i * num_features..(i + 1) * num_features];
            margins.iter_mut().for_each(|m| *m = self.base_score);
            for (t, tree) in self.trees.iter().enumerate() {
                margins[t % c] += self.hyper.eta * tree.predict(row);
            }
            softmax_into(&margins, &mut out[i * c..(i + 1) * c]);
        }
        Ok(out)
    }

    pub fn predict(&self, x: &[f64], num_features: usize) -> Result<Vec<usize>> {
        let p = self.predict_proba(x, num_features)?;
        Ok(p.chunks(self.num_classes).map(argmax).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("bad ensemble JSON: {e}")))?;
        if model.num_classes < 2 || !model.trees.len().is_multiple_of(model.num_classes) {
            return Err(Error::InvalidInput(
                "ensemble JSON has inconsistent tree count".into(),
            ));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn uniform_loss_oracles() {
        let u20 = vec![1.0 / 20.0; 20 * 3];
        assert!((mlogloss(&u20, 20, &[0, 7, 19]) - 20f64.ln()).abs() < 1e-12);
        let u2 = vec![0.5; 4];
        assert!((mlogloss(&u2, 2, &[0, 1]) - 0.693147).abs() < 1e-6);
        let onehot = [1.0, 0.0, 0.0, 1.0];
        assert!(mlogloss(&onehot, 2, &[0, 1]).abs() < 1e-12);
        // clipping bounds the loss of a confidently wrong prediction
        assert!((mlogloss(&onehot, 2, &[1, 0]) + LOSS_CLIP.ln()).abs() < 1e-9);
    }

    #[test]
    fn initial_training_loss_is_ln_c() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<usize> = (0..40).map(|i| i % 20).collect();
        let m = fit(
            &x,
            1,
            &y,
            20,
            &BoostHyper {
                rounds: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((m.train_mlogloss[0] - 2.995732).abs() < 1e-6);
        let p = m.predict_proba(&x, 1).unwrap();
        assert!(p.iter().all(|&v| (v - 0.05).abs() < 1e-15));
    }

    #[test]
    fn single_class_training_set() {
        let x = vec![0.1, 0.5, 0.2, 0.9, 0.3, 0.4];
        let y = vec![1; 3];
        let m = fit(
            &x,
            2,
            &y,
            3,
            &BoostHyper {
                rounds: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.predict(&x, 2).unwrap(), vec![1, 1, 1]);
        assert_eq!(m.predict(&[9.0, -9.0], 2).unwrap(), vec![1]);
    }

    #[test]
    fn hand_computed_stump() {
        // p = 1/2 everywhere, so g = ±1/2 and h = 1/4; the best split is at 1.5
        // with gain 0.5 * (1/1.5 + 1/1.5) and leaves ∓1/1.5
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0, 0, 1, 1];
        let hyper = BoostHyper {
            rounds: 1,
            max_depth: 1,
            min_child_weight: 0.0,
            ..Default::default()
        };
        let m = fit(&x, 1, &y, 2, &hyper).unwrap();
        match &m.trees[0].nodes[..] {
            [TreeNode::Split {
                feature: 0,
                threshold,
                left: 1,
                right: 2,
                ..
            }, TreeNode::Leaf { leaf: l }, TreeNode::Leaf { leaf: r }] => {
                assert_eq!(*threshold, 1.5);
                assert!((l - 1.0 / 1.5).abs() < 1e-12);
                assert!((r + 1.0 / 1.5).abs() < 1e-12);
            }
            other => panic!("unexpected tree {other:?}"),
        }
        let p = m.predict_proba(&[0.0], 1).unwrap();
        // margins ±0.3 * 2/3 = ±0.2, so p0 = σ(0.4)
        assert!((p[0] - 1.0 / (1.0 + (-0.4f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn min_child_weight_blocks_small_children() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let m = fit(
            &x,
            1,
            &[0, 0, 1, 1],
            2,
            &BoostHyper {
                rounds: 1,
                ..Default::default()
            },
        )
        .unwrap();
        // each child would hold hessian 0.5 < 1
        assert!(matches!(m.trees[0].nodes[..], [TreeNode::Leaf { .. }]));
    }

    pub(crate) fn separable_toy() -> (Vec<f64>, Vec<usize>) {
        // class 0 sits 0.5 above the diagonal, class 1 0.5 below it
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let a = i as f64 / 20.0;
            x.extend([a, a + 0.5]);
            y.push(0);
            x.extend([a + 0.025, a - 0.475]);
            y.push(1);
        }
        (x, y)
    }

    #[test]
    fn separable_toy_is_fit_within_ten_rounds() {
        let (x, y) = separable_toy();
        let m = fit(
            &x,
            2,
            &y,
            2,
            &BoostHyper {
                rounds: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.predict(&x, 2).unwrap(), y);
        assert!(m.train_mlogloss.last().unwrap() < &m.train_mlogloss[0]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5]), 1);
        let m = fit(
            &[0.0, 1.0],
            1,
            &[0, 1],
            3,
            &BoostHyper {
                rounds: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.predict(&[0.0], 1).unwrap(), vec![0]);
    }

    #[test]
    fn input_validation() {
        let h = BoostHyper::default();
        assert!(fit(&[], 1, &[], 2, &h).is_err());
        assert!(fit(&[f64::NAN], 1, &[0], 2, &h).is_err());
        assert!(fit(&[1.0], 1, &[0], 1, &h).is_err());
        assert!(fit(&[1.0], 1, &[2], 2, &h).is_err());
        let m = fit(&[1.0, 2.0], 1, &[0, 1], 2, &BoostHyper { rounds: 1, ..h }).unwrap();
        assert!(m.predict_proba(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let (x, y) = separable_toy();
        let m = fit(
            &x,
            2,
            &y,
            2,
            &BoostHyper {
                rounds: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let back = TreeEnsemble::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().contains("\"threshold\""));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fit_is_bounded_deterministic_and_normalised(
            rows in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 3), 0usize..3), 4..40),
            depth in 1usize..4,
        ) {
            let x: Vec<f64> = rows.iter().flat_map(|(r, _)| r.clone()).collect();
            let y: Vec<usize> = rows.iter().map(|(_, c)| *c).collect();
            let hyper = BoostHyper { rounds: 4, max_depth: depth, min_child_weight: 0.1, ..Default::default() };
            let a = fit(&x, 3, &y, 3, &hyper).unwrap();
            let b = fit(&x, 3, &y, 3, &hyper).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.trees.iter().all(|t| t.depth() <= depth));
            prop_assert!(a.train_mlogloss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            let p = a.predict_proba(&x, 3).unwrap();
            for row in p.chunks(3) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
