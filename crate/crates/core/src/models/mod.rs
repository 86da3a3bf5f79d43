//! Learning tasks over proof states: position evaluation, tactic prediction
//! and argument presence, plus feature-based baselines.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::embed::EmbedError;
use crate::proof::{ArgDescriptor, Law, StateId, Tactic};
use crate::term::{Name, TermId, TermStore};
use crate::trace::{by_lemma, tree_from_records, DepthBin, TraceError, TraceRecord};

pub mod argument;
pub mod features;
pub mod neural;

pub use argument::{eval_argument, train_argument_model, ArgumentModel, PrCurve};
pub use features::{constant_baseline, extract_features, train_linear_baseline, HeuristicFeatures, LinearModel};
pub use neural::{evaluate, predict, train_classifier, Hyper, Metrics, Model};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("split `{0}` is empty")]
    EmptySplit(String),
    #[error("tactic `{0}` has no equivalence class")]
    UnmappedTactic(String),
    #[error("rewrite position {0} is outside the toy class space")]
    PositionOutOfRange(usize),
    #[error("need at least two classes in the training labels")]
    SingleClass,
    #[error("no positive argument examples in the training split")]
    NoPositives,
    #[error("model was trained for {trained}, not {asked}")]
    TaskMismatch { trained: String, asked: String },
    #[error("lemma `{0}` appears in more than one split")]
    LeakyLemma(String),
    #[error("bad tactic map line {line}: {msg}")]
    BadMap { line: usize, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl From<crate::autodiff::GraphError> for ModelError {
    fn from(e: crate::autodiff::GraphError) -> Self {
        ModelError::Embed(e.into())
    }
}

/// Largest rewrite position with a toy class.
pub const TOY_MAX_POSITION: usize = 9;

/// Zero-based joint class of a rewrite: `(pos - 1) * 2 + law`.
pub fn toy_class(pos: usize, law: Law) -> Option<usize> {
    (1..=TOY_MAX_POSITION).contains(&pos).then(|| (pos - 1) * 2 + law.index())
}

pub fn toy_decode(class: usize) -> Option<(usize, Law)> {
    (class < 2 * TOY_MAX_POSITION).then(|| (class / 2 + 1, Law::ALL[class % 2]))
}

/// Shipped tactic equivalence map, `raw<TAB>class` per line.
pub const DEFAULT_TACTIC_MAP: &str = "\
rewrite\trewrite
have\thave
apply\tapply
move\tmove
intro\tintro
intros\tintro
reflexivity\treflexivity
done\treflexivity
trivial\treflexivity
exact\texact
case\tcase
elim\telim
split\tsplit
exists\texists
left\tleft
right\tright
simpl\tsimpl
cbn\tsimpl
unfold\tunfold
congr\tcongr
induction\tinduction
suff\tsuff
wlog\twlog
pose\tpose
set\tpose
clear\tclear
symmetry\tsymmetry
assumption\tassumption
";

/// Raw tactic name to equivalence class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TacticMap {
    pub classes: Vec<String>,
    pub raw: BTreeMap<String, usize>,
}

impl TacticMap {
    /// Parses `raw<TAB>class` lines; `#` starts a comment. Classes are
    /// numbered in order of first appearance.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut classes: Vec<String> = Vec::new();
        let mut raw = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim_end();
            if line.trim().is_empty() {
                continue;
            }
            let (r, c) = line.split_once('\t').ok_or(ModelError::BadMap {
                line: i + 1,
                msg: "expected raw<TAB>class".into(),
            })?;
            let (r, c) = (r.trim(), c.trim());
            if r.is_empty() || c.is_empty() {
                return Err(ModelError::BadMap {
                    line: i + 1,
                    msg: "empty name".into(),
                });
            }
            let id = match classes.iter().position(|x| x == c) {
                Some(id) => id,
                None => {
                    classes.push(c.to_owned());
                    classes.len() - 1
                }
            };
            if raw.insert(r.to_owned(), id).is_some() {
                return Err(ModelError::BadMap {
                    line: i + 1,
                    msg: format!("`{r}` mapped twice"),
                });
            }
        }
        Ok(TacticMap { classes, raw })
    }

    pub fn class_of(&self, raw: &str) -> Result<usize, ModelError> {
        self.raw.get(raw).copied().ok_or_else(|| ModelError::UnmappedTactic(raw.into()))
    }
}

impl Default for TacticMap {
    fn default() -> Self {
        TacticMap::parse(DEFAULT_TACTIC_MAP).expect("shipped map parses")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Task {
    /// Binned remaining proof steps.
    PosEval(DepthBin),
    /// Rewrite position and identity law jointly.
    ToyTactic,
    GenericTactic(TacticMap),
    /// Presence of each context entry among the tactic's arguments.
    Argument,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::PosEval(_) => "pos",
            Task::ToyTactic => "tac",
            Task::GenericTactic(_) => "generic",
            Task::Argument => "arg",
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        match self {
            Task::PosEval(b) => (0..b.classes()).map(|c| b.class_name(c)).collect(),
            Task::ToyTactic => (0..2 * TOY_MAX_POSITION)
                .map(|c| {
                    let (p, l) = toy_decode(c).expect("in range");
                    format!("{p}:{}", l.keyword())
                })
                .collect(),
            Task::GenericTactic(m) => m.classes.clone(),
            Task::Argument => vec!["absent".into(), "present".into()],
        }
    }

    pub fn classes(&self) -> usize {
        self.class_names().len()
    }
}

/// A proof state with the label of one task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledState {
    pub lemma: String,
    pub ctx: Vec<(Name, TermId)>,
    pub goal: TermId,
    /// Class id; unused by the argument task.
    pub label: usize,
    /// Per context entry, whether it occurs among the arguments.
    pub args: Vec<bool>,
}

fn ctx_names(store: &mut TermStore, r: &TraceRecord) -> Vec<(Name, TermId)> {
    r.ctx.iter().map(|(n, t)| (store.name(n), *t)).collect()
}

/// Labeled states of `task` from trace records. Toy tactic prediction keeps
/// rewrite steps only; the argument task keeps states with a context.
pub fn extract(task: &Task, records: &[TraceRecord], store: &mut TermStore) -> Result<Vec<LabeledState>, ModelError> {
    let mut out = Vec::new();
    match task {
        Task::PosEval(bins) => {
            for (_, recs) in by_lemma(records) {
                let tree = tree_from_records(&recs, store)?;
                for r in recs {
                    let steps = tree
                        .steps_below(StateId(r.state_id))
                        .map_err(|e| TraceError::Tree {
                            lemma: r.lemma.clone(),
                            msg: e.to_string(),
                        })?;
                    out.push(LabeledState {
                        lemma: r.lemma.clone(),
                        ctx: ctx_names(store, r),
                        goal: r.goal,
                        label: bins.bin(steps),
                        args: Vec::new(),
                    });
                }
            }
        }
        Task::ToyTactic => {
            for r in records {
                if let Tactic::Rewrite { pos, law } = r.tactic.to_tactic() {
                    let label = toy_class(pos.get(), law).ok_or(ModelError::PositionOutOfRange(pos.get()))?;
                    out.push(LabeledState {
                        lemma: r.lemma.clone(),
                        ctx: ctx_names(store, r),
                        goal: r.goal,
                        label,
                        args: Vec::new(),
                    });
                }
            }
        }
        Task::GenericTactic(map) => {
            for r in records {
                out.push(LabeledState {
                    lemma: r.lemma.clone(),
                    ctx: ctx_names(store, r),
                    goal: r.goal,
                    label: map.class_of(&r.tactic.raw)?,
                    args: Vec::new(),
                });
            }
        }
        Task::Argument => {
            for r in records.iter().filter(|r| !r.ctx.is_empty()) {
                let args = r
                    .ctx
                    .iter()
                    .map(|(n, _)| r.tactic.args.iter().any(|a| matches!(a, ArgDescriptor::Local(x) if x == n)))
                    .collect();
                out.push(LabeledState {
                    lemma: r.lemma.clone(),
                    ctx: ctx_names(store, r),
                    goal: r.goal,
                    label: 0,
                    args,
                });
            }
        }
    }
    Ok(out)
}

/// Partitions states by lemma membership.
pub fn partition<'a>(states: &'a [LabeledState], parts: [&[String]; 3]) -> Result<[Vec<&'a LabeledState>; 3], ModelError> {
    let mut which: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, p) in parts.iter().enumerate() {
        for l in p.iter() {
            if which.insert(l.as_str(), i).is_some_and(|j| j != i) {
                return Err(ModelError::LeakyLemma(l.clone()));
            }
        }
    }
    let mut out: [Vec<&LabeledState>; 3] = Default::default();
    for s in states {
        if let Some(&i) = which.get(s.lemma.as_str()) {
            out[i].push(s);
        }
    }
    Ok(out)
}

/// Re-asserts that no lemma contributes to more than one split.
pub fn check_disjoint(splits: &[&[&LabeledState]]) -> Result<(), ModelError> {
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in splits.iter().enumerate() {
        for x in s.iter() {
            if *owner.entry(x.lemma.as_str()).or_insert(i) != i {
                return Err(ModelError::LeakyLemma(x.lemma.clone()));
            }
        }
    }
    Ok(())
}
