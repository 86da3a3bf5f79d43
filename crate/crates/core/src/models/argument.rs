//! Per-entry prediction of which context entries a tactic takes as
//! arguments.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::neural::{init_head, Hyper, INFERENCE_SEED};
use super::{LabeledState, ModelError};
use crate::autodiff::{softmax, Adam, Exec, Graph, NodeId, ParamId, ParamStore};
use crate::embed::{mix, store_symbols, CellKind, EmbedConfig, EmbedParams, Embedder};
use crate::term::TermStore;

/// At most this many negatives per positive in each training epoch.
pub const MAX_NEGATIVE_RATIO: usize = 4;

#[derive(Clone, Debug)]
pub struct ArgumentModel {
    pub params: ParamStore,
    pub embed: EmbedParams,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub positive_weight: f64,
    pub drop_implicit: bool,
}

impl ArgumentModel {
    pub fn new(store: &TermStore, hyper: &Hyper, positive_weight: f64) -> Result<Self, ModelError> {
        let mut params = ParamStore::new();
        let embed = EmbedParams::new(&mut params, "emb", hyper.dim, hyper.cell, &store_symbols(store), hyper.seed)?;
        let (head_w, head_b) = init_head(&mut params, "head", 2, 3 * hyper.dim, mix(hyper.seed, 1))?;
        Ok(ArgumentModel {
            params,
            embed,
            head_w,
            head_b,
            positive_weight,
            drop_implicit: hyper.drop_implicit,
        })
    }

    /// Logits of every listed entry of a state: `[absent, present]`. The
    /// product term lets the score of an entry depend on the state; over the
    /// bare concatenation the ranking of entries within one state would not.
    fn entry_logits(&self, g: &mut Graph, em: &mut Embedder, s: &LabeledState, entries: &[usize]) -> Result<Vec<NodeId>, ModelError> {
        let st = em.embed_state(g, &s.ctx, s.goal)?;
        let w = g.param(self.head_w);
        let b = g.param(self.head_b);
        Ok(entries
            .iter()
            .map(|&i| {
                let both = g.mul(st.goal, st.entries[i]);
                let x = g.concat(&[st.h, st.entries[i], both]);
                let z = g.matvec(w, x);
                g.add(z, b)
            })
            .collect())
    }

    /// Probability that each context entry is an argument, per state.
    pub fn scores(&self, store: &TermStore, states: &[&LabeledState]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut out = Vec::with_capacity(states.len());
        for chunk in states.chunks(64) {
            let mut g = Graph::new(&self.params, true);
            let cfg = EmbedConfig {
                drop_implicit: self.drop_implicit,
                pass_seed: INFERENCE_SEED,
                ..EmbedConfig::default()
            };
            let mut em = Embedder::new(&self.embed, store, cfg);
            let mut zs = Vec::new();
            for s in chunk {
                let all: Vec<usize> = (0..s.ctx.len()).collect();
                zs.push(self.entry_logits(&mut g, &mut em, s, &all)?);
            }
            let ev = g.forward(&self.params, Exec::Batched)?;
            out.extend(zs.iter().map(|row| row.iter().map(|z| softmax(ev.value(*z))[1]).collect()));
        }
        Ok(out)
    }

    pub fn save(&self) -> String {
        let mut meta = BTreeMap::new();
        meta.insert("task".to_owned(), "arg".to_owned());
        meta.insert("cell".to_owned(), self.embed.cell.as_str().to_owned());
        meta.insert("drop_implicit".to_owned(), self.drop_implicit.to_string());
        meta.insert("positive_weight".to_owned(), format!("{:?}", self.positive_weight));
        meta.insert("vocab".to_owned(), serde_json::to_string(&self.embed.vocab_list()).expect("strings serialize"));
        self.params.save(&meta)
    }

    pub fn load(text: &str) -> Result<Self, ModelError> {
        let (params, meta) = ParamStore::load(text)?;
        let get = |k: &str| meta.get(k).ok_or_else(|| ModelError::Checkpoint(format!("missing `{k}`")));
        let bad = |k: &str| ModelError::Checkpoint(format!("bad `{k}`"));
        if get("task")? != "arg" {
            return Err(ModelError::TaskMismatch {
                trained: get("task")?.clone(),
                asked: "arg".into(),
            });
        }
        let vocab: Vec<String> = serde_json::from_str(get("vocab")?).map_err(|_| bad("vocab"))?;
        let cell = CellKind::parse(get("cell")?)?;
        let embed = EmbedParams::lookup(&params, "emb", cell, &vocab).ok_or_else(|| bad("embedding parameters"))?;
        Ok(ArgumentModel {
            head_w: params.id("head.w").ok_or_else(|| bad("head.w"))?,
            head_b: params.id("head.b").ok_or_else(|| bad("head.b"))?,
            positive_weight: get("positive_weight")?.parse().map_err(|_| bad("positive_weight"))?,
            drop_implicit: get("drop_implicit")? == "true",
            params,
            embed,
        })
    }
}

/// Trains with the positive class weighted by the train split's
/// negative-to-positive ratio and negatives subsampled each epoch.
/// Stops early on validation average precision; recall at a fixed precision
/// saturates as soon as the positive rate exceeds that precision.
pub fn train_argument_model(
    store: &TermStore,
    train: &[&LabeledState],
    valid: &[&LabeledState],
    hyper: &Hyper,
) -> Result<ArgumentModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train".into()));
    }
    super::check_disjoint(&[train, valid])?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (si, s) in train.iter().enumerate() {
        for (ei, present) in s.args.iter().enumerate() {
            if *present {
                pos.push((si, ei));
            } else {
                neg.push((si, ei));
            }
        }
    }
    if pos.is_empty() {
        return Err(ModelError::NoPositives);
    }
    let weight = (neg.len() as f64 / pos.len() as f64).max(1.0);
    let mut model = ArgumentModel::new(store, hyper, weight)?;
    let mut adam = Adam::new(&model.params, hyper.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(hyper.seed, 5));
    let mut best = (f64::NEG_INFINITY, model.params.clone());
    let mut stale = 0;
    for epoch in 0..hyper.max_epochs {
        neg.shuffle(&mut rng);
        let keep = neg.len().min(MAX_NEGATIVE_RATIO * pos.len());
        // entries to train on, grouped by state
        let mut by_state: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(s, e) in pos.iter().chain(&neg[..keep]) {
            by_state.entry(s).or_default().push(e);
        }
        let mut groups: Vec<(usize, Vec<usize>)> = by_state.into_iter().collect();
        groups.shuffle(&mut rng);
        for (b, chunk) in groups.chunks(hyper.batch.max(1)).enumerate() {
            let pass = mix(mix(hyper.seed, epoch as u64 + 11), b as u64);
            let cfg = EmbedConfig {
                drop_implicit: hyper.drop_implicit,
                pass_seed: pass,
                dropout: hyper.dropout,
                dropout_seed: mix(pass, 4),
            };
            let mut g = Graph::new(&model.params, true);
            let mut em = Embedder::new(&model.embed, store, cfg);
            let mut losses = Vec::new();
            for (s, entries) in chunk {
                let st = train[*s];
                let zs = model.entry_logits(&mut g, &mut em, st, entries)?;
                for (z, e) in zs.into_iter().zip(entries) {
                    let present = st.args[*e];
                    let w = if present { weight } else { 1.0 };
                    losses.push(g.softmax_ce(z, usize::from(present), w));
                }
            }
            let total = g.sum_n(&losses);
            let loss = g.scale(total, 1.0 / losses.len() as f64);
            let ev = g.forward(&model.params, Exec::Batched)?;
            let grads = ev.backward(loss, Exec::Batched)?;
            adam.update(&mut model.params, &grads);
        }
        let score = if valid.is_empty() {
            epoch as f64
        } else {
            eval_argument(&model, store, valid)?.average_precision().unwrap_or(0.0)
        };
        if hyper.verbose {
            eprintln!("epoch {epoch}: valid average precision {score:.4}");
        }
        if score > best.0 {
            best = (score, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= hyper.patience {
                break;
            }
        }
    }
    if best.0 > f64::NEG_INFINITY {
        model.params = best.1;
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall when predicting "present" for scores at or above
/// each threshold, from the highest threshold down to 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub positives: usize,
    pub total: usize,
}

impl PrCurve {
    pub fn from_scores(scored: &[(f64, bool)]) -> PrCurve {
        let positives = scored.iter().filter(|(_, y)| *y).count();
        let total = scored.len();
        if positives == 0 {
            return PrCurve {
                points: Vec::new(),
                positives,
                total,
            };
        }
        let mut v: Vec<(f64, bool)> = scored.to_vec();
        v.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut points = Vec::new();
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < v.len() {
            let t = v[i].0;
            while i < v.len() && v[i].0 == t {
                if v[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push(PrPoint {
                threshold: t,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / positives as f64,
            });
        }
        if points.last().is_some_and(|p| p.threshold > 0.0) {
            points.push(PrPoint {
                threshold: 0.0,
                precision: positives as f64 / total as f64,
                recall: 1.0,
            });
        }
        PrCurve {
            points,
            positives,
            total,
        }
    }

    /// Best recall among thresholds reaching `min_precision`.
    pub fn recall_at_precision(&self, min_precision: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.precision >= min_precision)
            .map(|p| p.recall)
            .fold(None, |a, r| Some(a.map_or(r, |a: f64| a.max(r))))
    }

    /// Step-wise area under the curve.
    pub fn average_precision(&self) -> Option<f64> {
        let mut prev = 0.0;
        let mut ap = 0.0;
        for p in &self.points {
            ap += (p.recall - prev) * p.precision;
            prev = p.recall;
        }
        (!self.points.is_empty()).then_some(ap)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("precision,recall\n");
        for p in &self.points {
            s.push_str(&format!("{},{}\n", p.precision, p.recall));
        }
        s
    }
}

pub fn eval_argument(model: &ArgumentModel, store: &TermStore, split: &[&LabeledState]) -> Result<PrCurve, ModelError> {
    let scores = model.scores(store, split)?;
    let mut scored = Vec::new();
    for (s, row) in split.iter().zip(scores) {
        for (p, y) in row.into_iter().zip(&s.args) {
            scored.push((p, *y));
        }
    }
    Ok(PrCurve::from_scores(&scored))
}
