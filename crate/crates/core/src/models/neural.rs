//! Embedding plus one fully connected layer, trained with softmax
//! cross-entropy.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::argmax;
use super::{LabeledState, ModelError, Task, TacticMap};
use crate::autodiff::{softmax, Adam, Exec, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::embed::{mix, store_symbols, CellKind, EmbedConfig, EmbedParams, Embedder};
use crate::term::TermStore;
use crate::trace::DepthBin;

/// Pass seed used at inference time.
pub const INFERENCE_SEED: u64 = 0x5eed;

#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub dim: usize,
    pub cell: CellKind,
    pub batch: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub dropout: f64,
    pub drop_implicit: bool,
    pub seed: u64,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            dim: 128,
            cell: CellKind::Gru,
            batch: 32,
            lr: 0.001,
            max_epochs: 50,
            patience: 5,
            dropout: CellKind::Gru.default_dropout(),
            drop_implicit: false,
            seed: 0,
            verbose: false,
        }
    }
}

impl Hyper {
    pub fn with_cell(cell: CellKind) -> Self {
        Hyper {
            cell,
            dropout: cell.default_dropout(),
            ..Hyper::default()
        }
    }
}

/// A trained state classifier.
#[derive(Clone, Debug)]
pub struct Model {
    pub task: Task,
    pub params: ParamStore,
    pub embed: EmbedParams,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub drop_implicit: bool,
    /// Per-epoch `(train loss, validation accuracy)`.
    pub history: Vec<(f64, f64)>,
}

pub(crate) fn init_head(ps: &mut ParamStore, name: &str, rows: usize, cols: usize, seed: u64) -> Result<(ParamId, ParamId), ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (cols as f64).sqrt();
    let w = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    let hw = ps.add(&format!("{name}.w"), Tensor::from_values((rows, cols), w))?;
    let hb = ps.add(&format!("{name}.b"), Tensor::zeros((rows, 1)))?;
    Ok((hw, hb))
}

impl Model {
    pub fn new(task: Task, store: &TermStore, hyper: &Hyper) -> Result<Self, ModelError> {
        let mut params = ParamStore::new();
        let embed = EmbedParams::new(&mut params, "emb", hyper.dim, hyper.cell, &store_symbols(store), hyper.seed)?;
        let (head_w, head_b) = init_head(&mut params, "head", task.classes(), hyper.dim, mix(hyper.seed, 1))?;
        Ok(Model {
            task,
            params,
            embed,
            head_w,
            head_b,
            drop_implicit: hyper.drop_implicit,
            history: Vec::new(),
        })
    }

    fn logits(&self, g: &mut Graph, em: &mut Embedder, s: &LabeledState) -> Result<NodeId, ModelError> {
        let st = em.embed_state(g, &s.ctx, s.goal)?;
        let w = g.param(self.head_w);
        let b = g.param(self.head_b);
        let z = g.matvec(w, st.h);
        Ok(g.add(z, b))
    }

    /// Class distributions for a batch of states.
    pub fn predict_batch(&self, store: &TermStore, states: &[&LabeledState]) -> Result<Vec<Vec<f64>>, ModelError> {
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
                zs.push(self.logits(&mut g, &mut em, s)?);
            }
            let ev = g.forward(&self.params, Exec::Batched)?;
            out.extend(zs.iter().map(|z| softmax(ev.value(*z))));
        }
        Ok(out)
    }

    /// Mean cross-entropy of a batch and its gradients.
    fn batch_loss(
        &self,
        store: &TermStore,
        batch: &[&LabeledState],
        cfg: EmbedConfig,
    ) -> Result<(f64, crate::autodiff::Grads), ModelError> {
        let mut g = Graph::new(&self.params, true);
        let mut em = Embedder::new(&self.embed, store, cfg);
        let mut losses = Vec::with_capacity(batch.len());
        for s in batch {
            let z = self.logits(&mut g, &mut em, s)?;
            losses.push(g.softmax_ce(z, s.label, 1.0));
        }
        let total = g.sum_n(&losses);
        let loss = g.scale(total, 1.0 / batch.len() as f64);
        let ev = g.forward(&self.params, Exec::Batched)?;
        let grads = ev.backward(loss, Exec::Batched)?;
        Ok((ev.scalar(loss), grads))
    }

    /// Metadata stored alongside the parameters in a checkpoint.
    pub fn save(&self) -> String {
        let mut meta = BTreeMap::new();
        meta.insert("task".to_owned(), self.task.name().to_owned());
        meta.insert("cell".to_owned(), self.embed.cell.as_str().to_owned());
        meta.insert("drop_implicit".to_owned(), self.drop_implicit.to_string());
        meta.insert("vocab".to_owned(), serde_json::to_string(&self.embed.vocab_list()).expect("strings serialize"));
        match &self.task {
            Task::PosEval(b) => {
                meta.insert("bins".to_owned(), serde_json::to_string(&b.upper).expect("ints serialize"));
            }
            Task::GenericTactic(m) => {
                let mut rows: Vec<(&String, &usize)> = m.raw.iter().collect();
                rows.sort_by_key(|(r, c)| (**c, (*r).clone()));
                let pairs: Vec<(String, String)> = rows.iter().map(|(r, c)| ((*r).clone(), m.classes[**c].clone())).collect();
                meta.insert("tactic_map".to_owned(), serde_json::to_string(&pairs).expect("strings serialize"));
            }
            _ => {}
        }
        self.params.save(&meta)
    }

    pub fn load(text: &str) -> Result<Self, ModelError> {
        let (params, meta) = ParamStore::load(text)?;
        let get = |k: &str| meta.get(k).ok_or_else(|| ModelError::Checkpoint(format!("missing `{k}`")));
        let bad = |k: &str| ModelError::Checkpoint(format!("bad `{k}`"));
        let vocab: Vec<String> = serde_json::from_str(get("vocab")?).map_err(|_| bad("vocab"))?;
        let cell = CellKind::parse(get("cell")?)?;
        let task = match get("task")?.as_str() {
            "pos" => Task::PosEval(DepthBin {
                upper: serde_json::from_str(get("bins")?).map_err(|_| bad("bins"))?,
            }),
            "tac" => Task::ToyTactic,
            "generic" => {
                let pairs: Vec<(String, String)> = serde_json::from_str(get("tactic_map")?).map_err(|_| bad("tactic_map"))?;
                let text: String = pairs.iter().map(|(r, c)| format!("{r}\t{c}\n")).collect();
                Task::GenericTactic(TacticMap::parse(&text)?)
            }
            other => return Err(ModelError::Checkpoint(format!("`{other}` is not a classifier task"))),
        };
        let embed = EmbedParams::lookup(&params, "emb", cell, &vocab).ok_or_else(|| bad("embedding parameters"))?;
        let head_w = params.id("head.w").ok_or_else(|| bad("head.w"))?;
        let head_b = params.id("head.b").ok_or_else(|| bad("head.b"))?;
        Ok(Model {
            task,
            params,
            embed,
            head_w,
            head_b,
            drop_implicit: get("drop_implicit")? == "true",
            history: Vec::new(),
        })
    }
}

/// Trains on `train`, early-stopping on accuracy over `valid`; returns the
/// parameters of the best validation epoch.
pub fn train_classifier(
    task: Task,
    store: &TermStore,
    train: &[&LabeledState],
    valid: &[&LabeledState],
    hyper: &Hyper,
) -> Result<Model, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train".into()));
    }
    super::check_disjoint(&[train, valid])?;
    let k = task.classes();
    let mut seen = vec![false; k];
    for s in train {
        seen[s.label] = true;
    }
    if hyper.verbose {
        for (c, name) in task.class_names().iter().enumerate() {
            if !seen[c] {
                eprintln!("warning: class `{name}` does not occur in the training split");
            }
        }
    }
    let mut model = Model::new(task, store, hyper)?;
    let mut adam = Adam::new(&model.params, hyper.lr);
    let mut best = (f64::NEG_INFINITY, model.params.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(hyper.seed, 2));
    for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(hyper.batch.max(1)).enumerate() {
            let batch: Vec<&LabeledState> = idx.iter().map(|i| train[*i]).collect();
            let pass = mix(mix(hyper.seed, epoch as u64 + 3), b as u64);
            let cfg = EmbedConfig {
                drop_implicit: hyper.drop_implicit,
                pass_seed: pass,
                dropout: hyper.dropout,
                dropout_seed: mix(pass, 4),
            };
            let (loss, grads) = model.batch_loss(store, &batch, cfg)?;
            adam.update(&mut model.params, &grads);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let acc = if valid.is_empty() {
            -train_loss
        } else {
            evaluate(&model, store, valid)?.accuracy
        };
        model.history.push((train_loss, acc));
        if hyper.verbose {
            eprintln!("epoch {epoch}: loss {train_loss:.4} valid {acc:.4}");
        }
        if acc > best.0 {
            best = (acc, model.params.clone());
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

pub fn predict(model: &Model, store: &TermStore, state: &LabeledState) -> Result<Vec<f64>, ModelError> {
    Ok(model.predict_batch(store, &[state])?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub accuracy: f64,
    /// Accuracy over states of each true class; `None` when absent.
    pub per_class: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_predictions(classes: usize, truth: &[usize], pred: &[usize]) -> Metrics {
        let mut confusion = vec![vec![0; classes]; classes];
        for (t, p) in truth.iter().zip(pred) {
            confusion[*t][*p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Metrics {
            n: truth.len(),
            accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
            per_class,
            confusion,
        }
    }
}

pub fn evaluate(model: &Model, store: &TermStore, split: &[&LabeledState]) -> Result<Metrics, ModelError> {
    if split.is_empty() {
        return Err(ModelError::EmptySplit("evaluation".into()));
    }
    let probs = model.predict_batch(store, split)?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let truth: Vec<usize> = split.iter().map(|s| s.label).collect();
    Ok(Metrics::from_predictions(model.task.classes(), &truth, &pred))
}
