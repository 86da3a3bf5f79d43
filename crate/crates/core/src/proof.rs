//! Proof states, tactics, proof trees and interactive sessions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::term::{Arg, Name, Position, Term, TermError, TermId, TermStore};
use crate::trace::{TacticRecord, TraceRecord};

/// Equality predicate symbol.
pub const EQ: &str = "eq";
/// Left identity element.
pub const LEFT_UNIT: &str = "e";
/// Right identity element.
pub const RIGHT_UNIT: &str = "m";
/// Carrier type of the algebra.
pub const CARRIER: &str = "G";

/// A store with the algebraic signature declared.
pub fn toy_store() -> TermStore {
    let mut s = TermStore::new();
    s.declare(crate::term::DEFAULT_OPERATOR, Some(2));
    s.declare(EQ, Some(2));
    s.declare(LEFT_UNIT, Some(0));
    s.declare(RIGHT_UNIT, Some(0));
    s.declare(CARRIER, Some(0));
    s
}

/// Rewrites the operator node at `pos` of `t` with an identity law.
pub fn rewrite_term(store: &mut TermStore, t: TermId, pos: Position, law: Law) -> Result<TermId, EngineError> {
    let node = store.subterm_at(t, pos).map_err(|_| EngineError::InvalidPosition {
        pos: pos.get(),
        count: store.op_count(t),
    })?;
    let (l, r) = store.as_operator(node).expect("positions index operator nodes");
    let unit = |s: &TermStore, t: TermId, sym: &str| matches!(s.get(t), Term::Const(c) if s.name_str(*c) == sym);
    let replacement = match law {
        Law::LeftId if unit(store, l, LEFT_UNIT) => r,
        Law::RightId if unit(store, r, RIGHT_UNIT) => l,
        _ => return Err(EngineError::PatternMismatch { pos: pos.get(), law }),
    };
    Ok(store.replace_at(t, pos, replacement)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId(pub u64);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProofState {
    pub id: StateId,
    pub ctx: Vec<(Name, TermId)>,
    pub goal: TermId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Law {
    /// `e + y = y`
    LeftId,
    /// `y + m = y`
    RightId,
}

impl Law {
    pub const ALL: [Law; 2] = [Law::LeftId, Law::RightId];

    pub fn index(self) -> usize {
        match self {
            Law::LeftId => 0,
            Law::RightId => 1,
        }
    }

    pub fn lemma_name(self) -> &'static str {
        match self {
            Law::LeftId => "left_id",
            Law::RightId => "right_id",
        }
    }

    pub fn from_lemma_name(s: &str) -> Option<Law> {
        match s {
            "left_id" => Some(Law::LeftId),
            "right_id" => Some(Law::RightId),
            _ => None,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Law::LeftId => "left",
            Law::RightId => "right",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ArgDescriptor {
    Local(String),
    Global(String),
    Term(TermId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tactic {
    Rewrite { pos: Position, law: Law },
    Reflexivity,
    Generic { name: String, args: Vec<ArgDescriptor> },
}

impl Tactic {
    pub fn rewrite(pos: usize, law: Law) -> Tactic {
        Tactic::Rewrite {
            pos: Position::new(pos).expect("positions are 1-based"),
            law,
        }
    }

    pub fn intro() -> Tactic {
        Tactic::Generic {
            name: "intro".into(),
            args: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Tactic::Rewrite { .. } => "rewrite",
            Tactic::Reflexivity => "reflexivity",
            Tactic::Generic { name, .. } => name,
        }
    }
}

impl fmt::Display for Tactic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tactic::Rewrite { pos, law } => write!(f, "rewrite {} {}", pos, law.keyword()),
            Tactic::Reflexivity => f.write_str("reflexivity"),
            Tactic::Generic { name, args } => {
                f.write_str(name)?;
                for a in args {
                    match a {
                        ArgDescriptor::Local(s) | ArgDescriptor::Global(s) => write!(f, " {s}")?,
                        ArgDescriptor::Term(t) => write!(f, " {t}")?,
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("position {pos} out of range 1..={count}")]
    InvalidPosition { pos: usize, count: usize },
    #[error("{law:?} does not match the subterm at position {pos}")]
    PatternMismatch { pos: usize, law: Law },
    #[error("goal is not trivially true")]
    NotTrivial,
    #[error("state {0} is not an open goal")]
    StateClosed(StateId),
    #[error("unknown state {0}")]
    UnknownState(StateId),
    #[error("goal is not an equation")]
    NotAnEquation,
    #[error("theorem has free variables: {0}")]
    OpenTerm(String),
    #[error("tactic `{0}` cannot be executed by the engine")]
    Unsupported(String),
    #[error("proof below state {0} is incomplete")]
    Incomplete(StateId),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("the proof has no open goal")]
    NoGoal,
    #[error("malformed tree: {0}")]
    Malformed(String),
    #[error(transparent)]
    Term(#[from] TermError),
}

impl EngineError {
    /// Stable short name used in protocol responses.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::InvalidPosition { .. } => "InvalidPosition",
            EngineError::PatternMismatch { .. } => "PatternMismatch",
            EngineError::NotTrivial => "NotTrivial",
            EngineError::StateClosed(_) => "StateClosed",
            EngineError::UnknownState(_) => "UnknownState",
            EngineError::NotAnEquation => "NotAnEquation",
            EngineError::OpenTerm(_) => "OpenTerm",
            EngineError::Unsupported(_) => "Unsupported",
            EngineError::Incomplete(_) => "Incomplete",
            EngineError::NothingToUndo => "NothingToUndo",
            EngineError::NoGoal => "NoGoal",
            EngineError::Malformed(_) => "Malformed",
            EngineError::Term(_) => "TermError",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub parent: StateId,
    pub tactic: Tactic,
    pub children: Vec<StateId>,
}

/// Nodes are proof states, edges are tactic applications.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProofTree {
    pub nodes: BTreeMap<StateId, ProofState>,
    pub edges: Vec<Edge>,
    pub root: Option<StateId>,
    pub finals: BTreeSet<StateId>,
    incoming: HashMap<StateId, usize>,
    outgoing: HashMap<StateId, usize>,
}

impl ProofTree {
    pub fn with_root(root: ProofState) -> Self {
        let mut t = ProofTree {
            root: Some(root.id),
            ..Default::default()
        };
        t.nodes.insert(root.id, root);
        t
    }

    pub fn state(&self, id: StateId) -> Option<&ProofState> {
        self.nodes.get(&id)
    }

    pub fn parent_of(&self, id: StateId) -> Option<StateId> {
        self.incoming.get(&id).map(|&e| self.edges[e].parent)
    }

    pub fn outgoing(&self, id: StateId) -> Option<&Edge> {
        self.outgoing.get(&id).map(|&e| &self.edges[e])
    }

    /// Appends an edge from an existing node to fresh child states.
    pub fn add_edge(&mut self, parent: StateId, tactic: Tactic, children: Vec<ProofState>) -> Result<(), EngineError> {
        if !self.nodes.contains_key(&parent) {
            return Err(EngineError::UnknownState(parent));
        }
        if self.outgoing.contains_key(&parent) {
            return Err(EngineError::Malformed(format!("state {parent} already has a tactic")));
        }
        if self.finals.contains(&parent) {
            return Err(EngineError::StateClosed(parent));
        }
        for c in &children {
            if self.nodes.contains_key(&c.id) {
                return Err(EngineError::Malformed(format!("duplicate state id {}", c.id)));
            }
        }
        let idx = self.edges.len();
        let ids: Vec<StateId> = children.iter().map(|c| c.id).collect();
        for c in children {
            self.incoming.insert(c.id, idx);
            self.nodes.insert(c.id, c);
        }
        self.outgoing.insert(parent, idx);
        self.edges.push(Edge {
            parent,
            tactic,
            children: ids,
        });
        Ok(())
    }

    fn pop_edge(&mut self) -> Option<Edge> {
        let e = self.edges.pop()?;
        self.outgoing.remove(&e.parent);
        for c in &e.children {
            self.incoming.remove(c);
            self.nodes.remove(c);
            self.finals.remove(c);
        }
        Some(e)
    }

    /// Number of edges in the subtree below `id`; every branch must end in a
    /// final state or a tactic without children.
    pub fn steps_below(&self, id: StateId) -> Result<usize, EngineError> {
        if !self.nodes.contains_key(&id) {
            return Err(EngineError::UnknownState(id));
        }
        let mut total = 0;
        let mut stack = vec![id];
        while let Some(s) = stack.pop() {
            match self.outgoing(s) {
                Some(e) => {
                    total += 1;
                    stack.extend(e.children.iter().copied());
                }
                None if self.finals.contains(&s) => {}
                None => return Err(EngineError::Incomplete(id)),
            }
        }
        Ok(total)
    }

    /// Checks connectivity, single parents, and that finals are leaves.
    pub fn validate(&self) -> Result<(), EngineError> {
        let root = self.root.ok_or_else(|| EngineError::Malformed("no root".into()))?;
        let mut seen = BTreeSet::new();
        let mut stack = vec![root];
        while let Some(s) = stack.pop() {
            if !seen.insert(s) {
                return Err(EngineError::Malformed(format!("state {s} reached twice")));
            }
            if let Some(e) = self.outgoing(s) {
                if self.finals.contains(&s) {
                    return Err(EngineError::Malformed(format!("final state {s} has a tactic")));
                }
                stack.extend(e.children.iter().copied());
            }
        }
        if seen.len() != self.nodes.len() {
            return Err(EngineError::Malformed("disconnected states".into()));
        }
        for id in self.nodes.keys() {
            if *id != root && !self.incoming.contains_key(id) {
                return Err(EngineError::Malformed(format!("state {id} has no parent")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Children(Vec<StateId>),
    Closed,
}

#[derive(Clone, Debug)]
struct UndoEntry {
    open_index: usize,
    prev_next_id: u64,
}

/// A single proof attempt owning its term store.
#[derive(Clone, Debug)]
pub struct ProofSession {
    store: TermStore,
    tree: ProofTree,
    open: Vec<StateId>,
    next_id: u64,
    trace: Vec<TraceRecord>,
    undo: Vec<UndoEntry>,
    lemma: String,
}

impl ProofSession {
    /// Opens a session on a closed theorem without introducing binders.
    pub fn open(store: TermStore, theorem: TermId, lemma: &str) -> Result<Self, EngineError> {
        if !store.contains(theorem) {
            return Err(TermError::DanglingId(theorem.index()).into());
        }
        let fv = store.free_vars(theorem);
        if !fv.is_empty() {
            let names: Vec<&str> = fv.iter().map(|n| store.name_str(*n)).collect();
            return Err(EngineError::OpenTerm(names.join(", ")));
        }
        let root = ProofState {
            id: StateId(0),
            ctx: Vec::new(),
            goal: theorem,
        };
        Ok(ProofSession {
            store,
            tree: ProofTree::with_root(root),
            open: vec![StateId(0)],
            next_id: 1,
            trace: Vec::new(),
            undo: Vec::new(),
            lemma: lemma.to_owned(),
        })
    }

    /// Opens a session and introduces the theorem's leading binders.
    pub fn start(store: TermStore, theorem: TermId, lemma: &str) -> Result<Self, EngineError> {
        let mut s = Self::open(store, theorem, lemma)?;
        if matches!(s.store.get(theorem), Term::Prod { .. }) {
            s.apply(StateId(0), Tactic::intro())?;
            s.undo.clear();
        }
        Ok(s)
    }

    /// Rebuilds a session by re-executing exported records.
    pub fn replay(store: TermStore, records: &[TraceRecord]) -> Result<Self, EngineError> {
        let first = records
            .first()
            .ok_or_else(|| EngineError::Malformed("empty trace".into()))?;
        let mut s = Self::open(store, first.goal, &first.lemma)?;
        for r in records {
            let tactic = r.tactic.to_tactic();
            s.apply(StateId(r.state_id), tactic)?;
        }
        Ok(s)
    }

    pub fn store(&self) -> &TermStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut TermStore {
        &mut self.store
    }

    pub fn into_store(self) -> TermStore {
        self.store
    }

    pub fn tree(&self) -> &ProofTree {
        &self.tree
    }

    pub fn lemma(&self) -> &str {
        &self.lemma
    }

    pub fn open_goals(&self) -> &[StateId] {
        &self.open
    }

    pub fn current(&self) -> Option<StateId> {
        self.open.first().copied()
    }

    pub fn is_complete(&self) -> bool {
        self.open.is_empty()
    }

    pub fn state(&self, id: StateId) -> Result<&ProofState, EngineError> {
        self.tree.state(id).ok_or(EngineError::UnknownState(id))
    }

    /// Operands of an equation goal, ignoring implicit arguments.
    pub fn equation(&self, goal: TermId) -> Option<(TermId, TermId)> {
        let eq = self.store.lookup_name(EQ)?;
        match self.store.explicit_args_of(goal, eq)?.as_slice() {
            [l, r] => Some((*l, *r)),
            _ => None,
        }
    }

    /// Goal is `eq t t` with both sides the same shared term.
    pub fn is_final(&self, id: StateId) -> bool {
        self.tree
            .state(id)
            .and_then(|s| self.equation(s.goal))
            .is_some_and(|(l, r)| l == r)
    }

    pub fn steps_below(&self, id: StateId) -> Result<usize, EngineError> {
        self.tree.steps_below(id)
    }

    pub fn export_tree(&self) -> Vec<TraceRecord> {
        self.trace.clone()
    }

    fn fresh(&mut self) -> StateId {
        let id = StateId(self.next_id);
        self.next_id += 1;
        id
    }

    fn rewrite_goal(&mut self, goal: TermId, pos: Position, law: Law) -> Result<TermId, EngineError> {
        let (lhs, _) = self.equation(goal).ok_or(EngineError::NotAnEquation)?;
        let new_lhs = rewrite_term(&mut self.store, lhs, pos, law)?;
        // rebuild the equation keeping any implicit arguments in place
        let (head, mut args) = match self.store.get(goal) {
            Term::App { head, args } => (*head, args.clone()),
            _ => unreachable!("equation is an application"),
        };
        let first = args.iter().position(|a| !a.implicit).expect("equation has operands");
        args[first] = Arg::explicit(new_lhs);
        Ok(self.store.app(head, args)?)
    }

    fn intro(&mut self, state: &ProofState) -> Result<ProofState, EngineError> {
        let mut ctx = state.ctx.clone();
        let mut goal = state.goal;
        while let Term::Prod { binder, ty, body } = self.store.get(goal).clone() {
            let mut name = binder;
            while ctx.iter().any(|(n, _)| *n == name) {
                let fresh = format!("{}'", self.store.name_str(name));
                name = self.store.name(&fresh);
            }
            goal = if name == binder {
                body
            } else {
                self.store.rename_free(body, binder, name)
            };
            ctx.push((name, ty));
        }
        if goal == state.goal {
            return Err(EngineError::Unsupported("intro on a goal without binders".into()));
        }
        Ok(ProofState {
            id: self.fresh(),
            ctx,
            goal,
        })
    }

    /// Applies a tactic to an open goal.
    pub fn apply(&mut self, id: StateId, tactic: Tactic) -> Result<Outcome, EngineError> {
        let state = self.tree.state(id).cloned().ok_or(EngineError::UnknownState(id))?;
        let open_index = self
            .open
            .iter()
            .position(|s| *s == id)
            .ok_or(EngineError::StateClosed(id))?;
        let prev_next_id = self.next_id;

        let (tactic, children, closed) = match tactic {
            Tactic::Rewrite { pos, law } => {
                let goal = self.rewrite_goal(state.goal, pos, law)?;
                let child = ProofState {
                    id: self.fresh(),
                    ctx: state.ctx.clone(),
                    goal,
                };
                (Tactic::Rewrite { pos, law }, vec![child], false)
            }
            Tactic::Reflexivity => {
                if !self.is_final(id) {
                    return Err(EngineError::NotTrivial);
                }
                let closed = ProofState {
                    id: self.fresh(),
                    ..state.clone()
                };
                (Tactic::Reflexivity, vec![closed], true)
            }
            Tactic::Generic { name, args } if name == "intro" && args.is_empty() => {
                let child = match self.intro(&state) {
                    Ok(c) => c,
                    Err(e) => {
                        self.next_id = prev_next_id;
                        return Err(e);
                    }
                };
                let args = child.ctx[state.ctx.len()..]
                    .iter()
                    .map(|(n, _)| ArgDescriptor::Local(self.store.name_str(*n).to_owned()))
                    .collect();
                (Tactic::Generic { name, args }, vec![child], false)
            }
            Tactic::Generic { name, args } if name == "intro" => {
                // replayed intro: recompute and check the recorded names
                let child = self.intro(&state)?;
                let got: Vec<ArgDescriptor> = child.ctx[state.ctx.len()..]
                    .iter()
                    .map(|(n, _)| ArgDescriptor::Local(self.store.name_str(*n).to_owned()))
                    .collect();
                if got != args {
                    self.next_id = prev_next_id;
                    return Err(EngineError::Malformed("intro names differ from record".into()));
                }
                (Tactic::Generic { name, args }, vec![child], false)
            }
            Tactic::Generic { name, .. } => return Err(EngineError::Unsupported(name)),
        };

        let record = TraceRecord {
            lemma: self.lemma.clone(),
            state_id: id.0,
            parent_id: self.tree.parent_of(id).map(|p| p.0),
            ctx: state
                .ctx
                .iter()
                .map(|(n, t)| (self.store.name_str(*n).to_owned(), *t))
                .collect(),
            goal: state.goal,
            tactic: TacticRecord::from_tactic(&tactic),
            children: children.iter().map(|c| c.id.0).collect(),
        };
        let child_ids: Vec<StateId> = children.iter().map(|c| c.id).collect();
        self.tree.add_edge(id, tactic, children)?;
        self.open.remove(open_index);
        if closed {
            self.tree.finals.extend(child_ids.iter().copied());
        } else {
            for (k, c) in child_ids.iter().enumerate() {
                self.open.insert(open_index + k, *c);
            }
        }
        self.trace.push(record);
        self.undo.push(UndoEntry {
            open_index,
            prev_next_id,
        });
        Ok(if closed {
            Outcome::Closed
        } else {
            Outcome::Children(child_ids)
        })
    }

    /// Applies a tactic to the first open goal.
    pub fn apply_current(&mut self, tactic: Tactic) -> Result<Outcome, EngineError> {
        let id = self.current().ok_or(EngineError::NoGoal)?;
        self.apply(id, tactic)
    }

    /// Reverts the most recent tactic application.
    pub fn undo(&mut self) -> Result<StateId, EngineError> {
        let entry = self.undo.pop().ok_or(EngineError::NothingToUndo)?;
        let edge = self.tree.pop_edge().expect("undo entries track edges");
        self.open.retain(|s| !edge.children.contains(s));
        self.open.insert(entry.open_index, edge.parent);
        self.next_id = entry.prev_next_id;
        self.trace.pop();
        Ok(edge.parent)
    }

    pub fn can_undo(&self) -> bool {
        !self.undo.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theorem(s: &mut TermStore, lhs: &str) -> TermId {
        s.parse_sexpr(&format!("(prod b (c G) (app eq {lhs} (v b)))")).unwrap()
    }

    fn session(lhs: &str) -> ProofSession {
        let mut s = toy_store();
        let t = theorem(&mut s, lhs);
        ProofSession::start(s, t, "t").unwrap()
    }

    fn goal(s: &ProofSession) -> String {
        let id = s.current().unwrap();
        s.store().print_sexpr(s.state(id).unwrap().goal)
    }

    const B_EM: &str = "(app f (v b) (app f (c e) (c m)))";

    #[test]
    fn start_introduces_binder() {
        let s = session("(app f (v b) (c m))");
        let st = s.state(StateId(1)).unwrap();
        assert_eq!(st.ctx.len(), 1);
        assert_eq!(s.store().name_str(st.ctx[0].0), "b");
        assert_eq!(goal(&s), "(app eq (app f (v b) (c m)) (v b))");
        assert_eq!(s.export_tree().len(), 1);
        assert_eq!(s.export_tree()[0].tactic.raw, "intro");
    }

    #[test]
    fn trivial_theorem_is_final_immediately() {
        let s = session("(v b)");
        assert!(s.is_final(StateId(1)));
    }

    #[test]
    fn open_theorem_rejected() {
        let mut st = toy_store();
        let t = st.parse_sexpr("(app eq (v b) (v b))").unwrap();
        assert!(matches!(ProofSession::start(st, t, "x"), Err(EngineError::OpenTerm(_))));
    }

    #[test]
    fn left_identity_at_position_two() {
        let mut s = session(B_EM);
        let out = s.apply(StateId(1), Tactic::rewrite(2, Law::LeftId)).unwrap();
        assert_eq!(out, Outcome::Children(vec![StateId(2)]));
        assert_eq!(goal(&s), "(app eq (app f (v b) (c m)) (v b))");
        // parent untouched
        let parent = s.state(StateId(1)).unwrap().goal;
        assert_eq!(s.store().print_sexpr(parent), format!("(app eq {B_EM} (v b))"));
    }

    #[test]
    fn right_identity_at_position_two_is_a_dead_end() {
        let mut s = session(B_EM);
        s.apply(StateId(1), Tactic::rewrite(2, Law::RightId)).unwrap();
        assert_eq!(goal(&s), "(app eq (app f (v b) (c e)) (v b))");
        let id = s.current().unwrap();
        for law in Law::ALL {
            assert!(s.apply(id, Tactic::rewrite(1, law)).is_err());
        }
    }

    #[test]
    fn errors() {
        let mut s = session("(app f (v b) (c m))");
        assert_eq!(
            s.apply(StateId(1), Tactic::rewrite(9, Law::LeftId)),
            Err(EngineError::InvalidPosition { pos: 9, count: 1 })
        );
        assert_eq!(
            s.apply(StateId(1), Tactic::rewrite(1, Law::LeftId)),
            Err(EngineError::PatternMismatch { pos: 1, law: Law::LeftId })
        );
        assert_eq!(s.apply(StateId(1), Tactic::Reflexivity), Err(EngineError::NotTrivial));
        assert_eq!(
            s.apply(StateId(0), Tactic::Reflexivity),
            Err(EngineError::StateClosed(StateId(0)))
        );
        // failed tactics leave no trace
        assert_eq!(s.export_tree().len(), 1);
        assert_eq!(s.current(), Some(StateId(1)));
    }

    #[test]
    fn reflexivity_closes() {
        let mut s = session("(app f (v b) (c m))");
        s.apply(StateId(1), Tactic::rewrite(1, Law::RightId)).unwrap();
        assert!(s.is_final(StateId(2)));
        assert_eq!(s.apply(StateId(2), Tactic::Reflexivity), Ok(Outcome::Closed));
        assert!(s.is_complete());
        assert_eq!(
            s.apply(StateId(2), Tactic::Reflexivity),
            Err(EngineError::StateClosed(StateId(2)))
        );
        let recs = s.export_tree();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs.len(), s.tree().edges.len());
        s.tree().validate().unwrap();
        assert_eq!(s.steps_below(StateId(1)).unwrap(), 2);
        assert_eq!(s.steps_below(StateId(3)).unwrap(), 0);
        assert_eq!(s.steps_below(StateId(0)).unwrap(), 3);
    }

    #[test]
    fn is_final_cases() {
        let mut st = toy_store();
        let t = st
            .parse_sexpr("(prod b (c G) (app eq (app f (c e) (v b)) (app f (c e) (v b))))")
            .unwrap();
        let s = ProofSession::start(st, t, "x").unwrap();
        assert!(s.is_final(StateId(1)));
        let s2 = session("(app f (v b) (c m))");
        assert!(!s2.is_final(StateId(1)));
    }

    #[test]
    fn incomplete_subtree() {
        let s = session(B_EM);
        assert_eq!(s.steps_below(StateId(1)), Err(EngineError::Incomplete(StateId(1))));
    }

    #[test]
    fn undo_restores_state() {
        let mut s = session(B_EM);
        let before = s.export_tree();
        s.apply(StateId(1), Tactic::rewrite(2, Law::RightId)).unwrap();
        assert_eq!(s.undo().unwrap(), StateId(1));
        assert_eq!(s.export_tree(), before);
        assert_eq!(s.current(), Some(StateId(1)));
        s.apply(StateId(1), Tactic::rewrite(2, Law::LeftId)).unwrap();
        assert_eq!(s.current(), Some(StateId(2)));
        s.undo().unwrap();
        assert_eq!(s.undo(), Err(EngineError::NothingToUndo));
    }

    #[test]
    fn replay_reproduces_tree() {
        let mut s = session(B_EM);
        s.apply(StateId(1), Tactic::rewrite(2, Law::LeftId)).unwrap();
        s.apply(StateId(2), Tactic::rewrite(1, Law::RightId)).unwrap();
        s.apply(StateId(3), Tactic::Reflexivity).unwrap();
        let recs = s.export_tree();
        let r = ProofSession::replay(s.store().clone(), &recs).unwrap();
        assert_eq!(r.tree(), s.tree());
        assert_eq!(r.export_tree(), recs);
    }

    #[test]
    fn intro_freshens_clashing_names() {
        let mut st = toy_store();
        let t = st.parse_sexpr("(prod x (c G) (prod x (c G) (app eq (v x) (v x))))").unwrap();
        let s = ProofSession::start(st, t, "x").unwrap();
        let state = s.state(StateId(1)).unwrap();
        let names: Vec<&str> = state.ctx.iter().map(|(n, _)| s.store().name_str(*n)).collect();
        assert_eq!(names, ["x", "x'"]);
        assert_eq!(s.store().print_sexpr(state.goal), "(app eq (v x') (v x'))");
    }
}
