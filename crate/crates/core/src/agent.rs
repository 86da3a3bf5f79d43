//! Greedy proof synthesis driven by a tactic classifier, with an optional
//! fallback to the reference prover, and the benchmark harness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::features::argmax;
use crate::models::{toy_class, toy_decode, LabeledState, Model, ModelError, Task};
use crate::proof::{EngineError, Law, ProofSession, ProofState, StateId, Tactic, EQ};
use crate::rewrite::{oracle_from_goal, provable, DomainError};
use crate::term::{Term, TermId, TermStore};
use crate::trace::TraceRecord;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("reference prover failed: {0}")]
    Oracle(#[from] DomainError),
    #[error("policy needs a toy tactic model")]
    WrongTask,
}

/// Chooses a toy tactic class for a proof state.
pub trait Policy {
    fn choose(&mut self, store: &mut TermStore, state: &ProofState) -> Result<usize, AgentError>;
}

/// Argmax of a trained toy tactic model.
pub struct ModelPolicy<'m> {
    pub model: &'m Model,
}

impl<'m> ModelPolicy<'m> {
    pub fn new(model: &'m Model) -> Result<Self, AgentError> {
        if model.task != Task::ToyTactic {
            return Err(AgentError::WrongTask);
        }
        Ok(ModelPolicy { model })
    }
}

impl Policy for ModelPolicy<'_> {
    fn choose(&mut self, store: &mut TermStore, state: &ProofState) -> Result<usize, AgentError> {
        let ls = LabeledState {
            lemma: String::new(),
            ctx: state.ctx.clone(),
            goal: state.goal,
            label: 0,
            args: Vec::new(),
        };
        let p = crate::models::predict(self.model, store, &ls)?;
        Ok(argmax(&p))
    }
}

/// The reference prover's next step.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn choose(&mut self, store: &mut TermStore, state: &ProofState) -> Result<usize, AgentError> {
        match oracle_from_goal(store, state.goal)?.first() {
            Some(Tactic::Rewrite { pos, law }) => Ok(toy_class(pos.get(), *law).unwrap_or(0)),
            _ => Ok(0),
        }
    }
}

/// Always the same class.
pub struct ConstantPolicy(pub usize);

impl Policy for ConstantPolicy {
    fn choose(&mut self, _: &mut TermStore, _: &ProofState) -> Result<usize, AgentError> {
        Ok(self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthesisOutcome {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub state: u64,
    pub tactic: String,
    pub accepted: bool,
    /// Supplied by the reference prover rather than the policy.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub theorem: String,
    pub outcome: SynthesisOutcome,
    pub steps: Vec<Step>,
    /// Reference-prover substitutions.
    pub fallback_uses: usize,
    /// Predicted tactics the engine refused.
    pub rejections: usize,
}

impl SynthesisResult {
    pub fn completed(&self) -> bool {
        self.outcome == SynthesisOutcome::Completed
    }

    /// Rewrites that were kept in the final proof.
    pub fn rewrites(&self) -> usize {
        self.steps.iter().filter(|s| s.accepted && s.tactic.starts_with("rewrite")).count()
    }
}

fn equation_lhs(store: &TermStore, theorem: TermId) -> TermId {
    let mut t = theorem;
    while let Term::Prod { body, .. } = store.get(t) {
        t = *body;
    }
    store
        .lookup_name(EQ)
        .and_then(|eq| store.explicit_args_of(t, eq))
        .and_then(|args| args.first().copied())
        .unwrap_or(t)
}

fn decode(class: usize) -> Tactic {
    match toy_decode(class) {
        Some((pos, law)) => Tactic::rewrite(pos, law),
        // out-of-range classes never come out of an 18-way head
        None => Tactic::rewrite(usize::MAX, Law::LeftId),
    }
}

fn synthesize(
    policy: &mut dyn Policy,
    store: &TermStore,
    theorem: TermId,
    name: &str,
    fallback: bool,
) -> Result<SynthesisResult, AgentError> {
    let budget = store.leaf_count(equation_lhs(store, theorem));
    let mut session = ProofSession::start(store.clone(), theorem, name)?;
    let mut res = SynthesisResult {
        theorem: name.to_owned(),
        outcome: SynthesisOutcome::Failed,
        steps: Vec::new(),
        fallback_uses: 0,
        rejections: 0,
    };
    let mut rewrites = 0;
    while let Some(cur) = session.current() {
        if session.is_final(cur) {
            session.apply(cur, Tactic::Reflexivity)?;
            res.steps.push(Step {
                state: cur.0,
                tactic: Tactic::Reflexivity.to_string(),
                accepted: true,
                fallback: false,
            });
            continue;
        }
        if rewrites >= budget {
            return Ok(res);
        }
        let state = session.state(cur)?.clone();
        let tactic = decode(policy.choose(session.store_mut(), &state)?);
        let ok = match session.apply(cur, tactic.clone()) {
            Ok(_) => {
                let next = session.current().expect("rewrites leave one open goal");
                let goal = session.state(next)?.goal;
                if fallback && !provable(session.store_mut(), goal) {
                    session.undo()?;
                    false
                } else {
                    true
                }
            }
            Err(_) => {
                res.rejections += 1;
                false
            }
        };
        res.steps.push(Step {
            state: cur.0,
            tactic: tactic.to_string(),
            accepted: ok,
            fallback: false,
        });
        if !ok {
            if !fallback {
                return Ok(res);
            }
            let step = oracle_from_goal(session.store_mut(), state.goal)?.remove(0);
            session.apply(cur, step.clone())?;
            res.fallback_uses += 1;
            res.steps.push(Step {
                state: cur.0,
                tactic: step.to_string(),
                accepted: true,
                fallback: true,
            });
        }
        rewrites += 1;
    }
    res.outcome = SynthesisOutcome::Completed;
    Ok(res)
}

/// Follows the policy's argmax; the first rejected tactic fails the proof.
/// Reflexivity is fired whenever the goal is trivially true.
pub fn synthesize_greedy(policy: &mut dyn Policy, store: &TermStore, theorem: TermId, name: &str) -> Result<SynthesisResult, AgentError> {
    synthesize(policy, store, theorem, name, false)
}

/// Like [`synthesize_greedy`], but a rejected prediction, or one leading to
/// an unprovable goal, is replaced by the reference prover's step for the
/// current state.
pub fn synthesize_with_fallback(
    policy: &mut dyn Policy,
    store: &TermStore,
    theorem: TermId,
    name: &str,
) -> Result<SynthesisResult, AgentError> {
    synthesize(policy, store, theorem, name, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub n: usize,
    pub strict_completed: usize,
    pub fallback_completed: usize,
    pub mean_fallback_uses: f64,
    pub mean_rejections: f64,
    pub tactic_accuracy: f64,
    pub tactic_states: usize,
    pub strict: Vec<SynthesisResult>,
    pub with_fallback: Vec<SynthesisResult>,
}

/// Theorems (root goals) of the named lemmas, in lemma order.
pub fn theorems_of(records: &[TraceRecord], lemmas: &[String]) -> Vec<(String, TermId)> {
    let mut out = Vec::new();
    for l in lemmas {
        if let Some(r) = records.iter().find(|r| &r.lemma == l && r.parent_id.is_none()) {
            out.push((l.clone(), r.goal));
        }
    }
    out
}

/// Strict and fallback synthesis over every theorem plus per-state accuracy.
pub fn run_benchmark(
    policy: &mut dyn Policy,
    store: &TermStore,
    theorems: &[(String, TermId)],
    states: &[&LabeledState],
) -> Result<BenchmarkReport, AgentError> {
    let mut strict = Vec::new();
    let mut with_fallback = Vec::new();
    for (name, t) in theorems {
        strict.push(synthesize_greedy(policy, store, *t, name)?);
        with_fallback.push(synthesize_with_fallback(policy, store, *t, name)?);
    }
    let mut correct = 0;
    let mut scratch = store.clone();
    for s in states {
        let st = ProofState {
            id: StateId(0),
            ctx: s.ctx.clone(),
            goal: s.goal,
        };
        if policy.choose(&mut scratch, &st)? == s.label {
            correct += 1;
        }
    }
    let n = theorems.len();
    let mean = |f: &dyn Fn(&SynthesisResult) -> usize| {
        if n == 0 {
            0.0
        } else {
            with_fallback.iter().map(f).sum::<usize>() as f64 / n as f64
        }
    };
    Ok(BenchmarkReport {
        n,
        strict_completed: strict.iter().filter(|r| r.completed()).count(),
        fallback_completed: with_fallback.iter().filter(|r| r.completed()).count(),
        mean_fallback_uses: mean(&|r| r.fallback_uses),
        mean_rejections: mean(&|r| r.rejections),
        tactic_accuracy: if states.is_empty() { 0.0 } else { correct as f64 / states.len() as f64 },
        tactic_states: states.len(),
        strict,
        with_fallback,
    })
}
