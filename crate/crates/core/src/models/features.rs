//! Hand-written state features and the baselines trained on them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::term::{Name, TermId, TermStore};

/// Edit distance reported for a state without hypotheses.
pub const NO_HYPOTHESIS_DISTANCE: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeuristicFeatures {
    pub context_size: usize,
    /// Expanded node count of the goal.
    pub goal_size: usize,
    /// Context identifiers the goal mentions.
    pub hypothesis_count: usize,
    /// Smallest token-level edit distance between a hypothesis type and the
    /// goal, over whitespace-separated tokens of the printed terms.
    pub min_edit_distance: usize,
}

impl HeuristicFeatures {
    pub fn as_vec(&self) -> [f64; 4] {
        [
            self.context_size as f64,
            self.goal_size as f64,
            self.hypothesis_count as f64,
            self.min_edit_distance as f64,
        ]
    }
}

/// Levenshtein distance between token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn extract_features(store: &TermStore, ctx: &[(Name, TermId)], goal: TermId) -> HeuristicFeatures {
    let fv = store.free_vars(goal);
    let goal_text = store.print_sexpr(goal);
    let goal_tokens: Vec<&str> = goal_text.split_whitespace().collect();
    let min_edit_distance = ctx
        .iter()
        .map(|(_, t)| {
            let s = store.print_sexpr(*t);
            let toks: Vec<&str> = s.split_whitespace().collect();
            edit_distance(&toks, &goal_tokens)
        })
        .min()
        .unwrap_or(NO_HYPOTHESIS_DISTANCE);
    HeuristicFeatures {
        context_size: ctx.len(),
        goal_size: store.tree_size(goal),
        hypothesis_count: ctx.iter().filter(|(n, _)| fv.contains(n)).count(),
        min_edit_distance,
    }
}

/// Most frequent label, lowest id on ties; `None` for no labels.
pub fn constant_baseline(labels: &[usize]) -> Option<usize> {
    let k = labels.iter().copied().max()? + 1;
    let mut counts = vec![0usize; k];
    for l in labels {
        counts[*l] += 1;
    }
    let best = *counts.iter().max()?;
    counts.iter().position(|c| *c == best)
}

/// One-vs-rest linear classifier over standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Per class: weights then bias.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearHyper {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearHyper {
    fn default() -> Self {
        LinearHyper {
            lambda: 1e-4,
            epochs: 50,
            seed: 0,
        }
    }
}

impl LinearModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardize(x);
        self.weights
            .iter()
            .map(|w| {
                let d = z.len();
                w[..d].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + w[d]
            })
            .collect()
    }

    /// Highest score, lowest class on ties.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Hinge loss with L2 regularization, minimized by stochastic subgradient
/// steps with a `1 / (lambda t)` schedule. Bias terms are not regularized.
pub fn train_linear_baseline(
    xs: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    hyper: &LinearHyper,
) -> Result<LinearModel, ModelError> {
    let mut present: Vec<usize> = labels.to_vec();
    present.sort();
    present.dedup();
    if present.len() < 2 {
        return Err(ModelError::SingleClass);
    }
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mut mean = vec![0.0; d];
    for x in xs {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for x in xs {
        for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let mut model = LinearModel {
        mean,
        scale,
        weights: vec![vec![0.0; d + 1]; classes],
    };
    let zs: Vec<Vec<f64>> = xs.iter().map(|x| model.standardize(x)).collect();
    let mut order: Vec<usize> = (0..zs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    for (k, w) in model.weights.iter_mut().enumerate() {
        let mut t = 0usize;
        for _ in 0..hyper.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (hyper.lambda * t as f64);
                let y = if labels[i] == k { 1.0 } else { -1.0 };
                let z = &zs[i];
                let margin = y * (w[..d].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[d]);
                for a in &mut w[..d] {
                    *a *= 1.0 - eta * hyper.lambda;
                }
                if margin < 1.0 {
                    // the bias step is capped so early huge rates cannot blow it up
                    let step = eta.min(1.0);
                    for (a, b) in w[..d].iter_mut().zip(z) {
                        *a += eta * y * b;
                    }
                    w[d] += step * y;
                }
            }
        }
    }
    Ok(model)
}
