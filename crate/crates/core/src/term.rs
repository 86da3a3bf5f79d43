//! Hash-consed term language.
//!
//! Every structurally distinct term lives exactly once in a [`TermStore`], so
//! equality of [`TermId`]s is structural equality and shared subterms form a
//! DAG. Terms are immutable; rewriting produces new interned nodes.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Interned identifier or constant symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Name(u32);

impl Name {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense handle into a [`TermStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TermId(u32);

impl TermId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[cfg(test)]
    pub(crate) fn from_raw_for_tests(i: u32) -> Self {
        TermId(i)
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Arg {
    pub term: TermId,
    pub implicit: bool,
}

impl Arg {
    pub fn explicit(term: TermId) -> Self {
        Arg { term, implicit: false }
    }

    pub fn implicit(term: TermId) -> Self {
        Arg { term, implicit: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Var(Name),
    Const(Name),
    App { head: TermId, args: Vec<Arg> },
    Prod { binder: Name, ty: TermId, body: TermId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermKind {
    Var,
    Const,
    App,
    Prod,
}

impl TermKind {
    pub const ALL: [TermKind; 4] = [TermKind::Var, TermKind::Const, TermKind::App, TermKind::Prod];

    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::Var => "Var",
            TermKind::Const => "Const",
            TermKind::App => "App",
            TermKind::Prod => "Prod",
        }
    }
}

impl Term {
    pub fn kind(&self) -> TermKind {
        match self {
            Term::Var(_) => TermKind::Var,
            Term::Const(_) => TermKind::Const,
            Term::App { .. } => TermKind::App,
            Term::Prod { .. } => TermKind::Prod,
        }
    }
}

/// 1-based preorder rank of an operator node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position(usize);

impl Position {
    pub fn new(index: usize) -> Option<Position> {
        (index >= 1).then_some(Position(index))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TermError {
    #[error("undeclared constant symbol `{0}`")]
    UndeclaredSymbol(String),
    #[error("dangling term id {0}")]
    DanglingId(usize),
    #[error("application without arguments")]
    EmptyApp,
    #[error("constant `{symbol}` expects {expected} arguments, got {found}")]
    ArityMismatch {
        symbol: String,
        expected: usize,
        found: usize,
    },
    #[error("position {pos} out of range (term has {count} operator nodes)")]
    PositionOutOfRange { pos: usize, count: usize },
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("unbalanced parentheses at line {line}, column {col}")]
    Unbalanced { line: usize, col: usize },
    #[error("unknown head keyword `{keyword}` at line {line}, column {col}")]
    UnknownHead {
        keyword: String,
        line: usize,
        col: usize,
    },
}

/// Symbol used for the binary operator whose nodes positions count.
pub const DEFAULT_OPERATOR: &str = "f";

/// Interning table for terms, identifiers and constant symbols.
///
/// Interning goes through `&mut self`, so a store shared across threads needs
/// an external lock (or all writes confined to one thread); reads are free.
#[derive(Clone, Debug)]
pub struct TermStore {
    nodes: Vec<Term>,
    index: HashMap<Term, TermId>,
    names: Vec<String>,
    name_index: HashMap<String, Name>,
    arities: HashMap<Name, Option<usize>>,
    operator: Name,
}

impl Default for TermStore {
    fn default() -> Self {
        Self::new()
    }
}

impl TermStore {
    pub fn new() -> Self {
        let mut store = TermStore {
            nodes: Vec::new(),
            index: HashMap::new(),
            names: Vec::new(),
            name_index: HashMap::new(),
            arities: HashMap::new(),
            operator: Name(0),
        };
        store.operator = store.name(DEFAULT_OPERATOR);
        store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interns a string as an identifier or symbol name.
    pub fn name(&mut self, s: &str) -> Name {
        if let Some(&n) = self.name_index.get(s) {
            return n;
        }
        let n = Name(self.names.len() as u32);
        self.names.push(s.to_owned());
        self.name_index.insert(s.to_owned(), n);
        n
    }

    pub fn lookup_name(&self, s: &str) -> Option<Name> {
        self.name_index.get(s).copied()
    }

    pub fn name_str(&self, n: Name) -> &str {
        &self.names[n.index()]
    }

    /// Declares a constant symbol. `arity` of `None` accepts any number of
    /// arguments when the symbol heads an application.
    pub fn declare(&mut self, symbol: &str, arity: Option<usize>) -> Name {
        let n = self.name(symbol);
        self.arities.insert(n, arity);
        n
    }

    pub fn is_declared(&self, symbol: Name) -> bool {
        self.arities.contains_key(&symbol)
    }

    pub fn declared_symbols(&self) -> impl Iterator<Item = &str> {
        self.arities.keys().map(|n| self.name_str(*n))
    }

    pub fn operator(&self) -> Name {
        self.operator
    }

    pub fn set_operator(&mut self, symbol: &str) {
        self.operator = self.name(symbol);
    }

    pub fn get(&self, t: TermId) -> &Term {
        &self.nodes[t.index()]
    }

    pub fn contains(&self, t: TermId) -> bool {
        t.index() < self.nodes.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = TermId> {
        (0..self.nodes.len() as u32).map(TermId)
    }

    fn check(&self, t: TermId) -> Result<(), TermError> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(TermError::DanglingId(t.index()))
        }
    }

    /// Interns a term, returning the existing id when the structure is
    /// already present. Nested application heads are flattened.
    pub fn intern(&mut self, term: Term) -> Result<TermId, TermError> {
        let term = match term {
            Term::Var(_) => term,
            Term::Const(sym) => {
                if !self.is_declared(sym) {
                    return Err(TermError::UndeclaredSymbol(self.name_str(sym).to_owned()));
                }
                term
            }
            Term::App { head, args } => {
                self.check(head)?;
                for a in &args {
                    self.check(a.term)?;
                }
                if args.is_empty() {
                    return Err(TermError::EmptyApp);
                }
                let (head, args) = match self.get(head) {
                    Term::App { head: inner, args: first } => {
                        let mut all = first.clone();
                        all.extend(args);
                        (*inner, all)
                    }
                    _ => (head, args),
                };
                if let Term::Const(sym) = self.get(head) {
                    if let Some(Some(expected)) = self.arities.get(sym) {
                        if *expected != args.len() {
                            return Err(TermError::ArityMismatch {
                                symbol: self.name_str(*sym).to_owned(),
                                expected: *expected,
                                found: args.len(),
                            });
                        }
                    }
                }
                Term::App { head, args }
            }
            Term::Prod { ty, body, .. } => {
                self.check(ty)?;
                self.check(body)?;
                term
            }
        };
        if let Some(&id) = self.index.get(&term) {
            return Ok(id);
        }
        let id = TermId(self.nodes.len() as u32);
        self.nodes.push(term.clone());
        self.index.insert(term, id);
        Ok(id)
    }

    pub fn var(&mut self, ident: &str) -> TermId {
        let n = self.name(ident);
        self.intern(Term::Var(n)).expect("variables always intern")
    }

    pub fn constant(&mut self, symbol: &str) -> Result<TermId, TermError> {
        let n = self
            .lookup_name(symbol)
            .filter(|n| self.is_declared(*n))
            .ok_or_else(|| TermError::UndeclaredSymbol(symbol.to_owned()))?;
        self.intern(Term::Const(n))
    }

    pub fn app(&mut self, head: TermId, args: Vec<Arg>) -> Result<TermId, TermError> {
        self.intern(Term::App { head, args })
    }

    /// Application of a declared symbol to explicit arguments.
    pub fn app_sym(&mut self, symbol: &str, args: &[TermId]) -> Result<TermId, TermError> {
        let head = self.constant(symbol)?;
        self.app(head, args.iter().copied().map(Arg::explicit).collect())
    }

    pub fn prod(&mut self, binder: &str, ty: TermId, body: TermId) -> Result<TermId, TermError> {
        let binder = self.name(binder);
        self.intern(Term::Prod { binder, ty, body })
    }

    /// Children in traversal order: head then arguments, or type then body.
    pub fn children(&self, t: TermId) -> Vec<TermId> {
        match self.get(t) {
            Term::Var(_) | Term::Const(_) => Vec::new(),
            Term::App { head, args } => {
                let mut v = Vec::with_capacity(args.len() + 1);
                v.push(*head);
                v.extend(args.iter().map(|a| a.term));
                v
            }
            Term::Prod { ty, body, .. } => vec![*ty, *body],
        }
    }

    /// True if `t` is an application of the operator symbol.
    pub fn is_operator(&self, t: TermId) -> bool {
        match self.get(t) {
            Term::App { head, .. } => matches!(self.get(*head), Term::Const(s) if *s == self.operator),
            _ => false,
        }
    }

    /// Explicit arguments of an application headed by `symbol`.
    pub fn explicit_args_of(&self, t: TermId, symbol: Name) -> Option<Vec<TermId>> {
        match self.get(t) {
            Term::App { head, args } if matches!(self.get(*head), Term::Const(s) if *s == symbol) => {
                Some(args.iter().filter(|a| !a.implicit).map(|a| a.term).collect())
            }
            _ => None,
        }
    }

    /// Binary operator node as `(left, right)`.
    pub fn as_operator(&self, t: TermId) -> Option<(TermId, TermId)> {
        match self.explicit_args_of(t, self.operator)?.as_slice() {
            [l, r] => Some((*l, *r)),
            _ => None,
        }
    }

    fn count_memo<F>(&self, t: TermId, memo: &mut HashMap<TermId, usize>, leaf: &F) -> usize
    where
        F: Fn(&Self, TermId) -> usize,
    {
        if let Some(&n) = memo.get(&t) {
            return n;
        }
        let mut n = leaf(self, t);
        for c in self.children(t) {
            n += self.count_memo(c, memo, leaf);
        }
        memo.insert(t, n);
        n
    }

    /// Leaf occurrences (variables and constants), counted in the tree view.
    /// Application heads are part of the node, not leaves of the expression.
    pub fn leaf_count(&self, t: TermId) -> usize {
        fn go(s: &TermStore, t: TermId, memo: &mut HashMap<TermId, usize>) -> usize {
            if let Some(&n) = memo.get(&t) {
                return n;
            }
            let n = match s.get(t) {
                Term::Var(_) | Term::Const(_) => 1,
                Term::App { args, .. } => args.iter().map(|a| go(s, a.term, memo)).sum(),
                Term::Prod { ty, body, .. } => go(s, *ty, memo) + go(s, *body, memo),
            };
            memo.insert(t, n);
            n
        }
        go(self, t, &mut HashMap::new())
    }

    /// Number of operator nodes in the tree view.
    pub fn op_count(&self, t: TermId) -> usize {
        self.count_memo(t, &mut HashMap::new(), &|s, t| s.is_operator(t) as usize)
    }

    /// Number of nodes in the tree view (shared subterms counted per occurrence).
    pub fn tree_size(&self, t: TermId) -> usize {
        self.count_memo(t, &mut HashMap::new(), &|_, _| 1)
    }

    /// Operator nodes in preorder, paired with their 1-based rank.
    pub fn op_positions(&self, t: TermId) -> Vec<(Position, TermId)> {
        fn go(s: &TermStore, t: TermId, out: &mut Vec<(Position, TermId)>) {
            if s.is_operator(t) {
                out.push((Position(out.len() + 1), t));
            }
            for c in s.children(t) {
                go(s, c, out);
            }
        }
        let mut out = Vec::new();
        go(self, t, &mut out);
        out
    }

    pub fn subterm_at(&self, t: TermId, p: Position) -> Result<TermId, TermError> {
        let positions = self.op_positions(t);
        positions
            .get(p.0 - 1)
            .map(|(_, id)| *id)
            .ok_or(TermError::PositionOutOfRange {
                pos: p.0,
                count: positions.len(),
            })
    }

    /// Persistent replacement of the operator node at `p`.
    pub fn replace_at(&mut self, t: TermId, p: Position, new: TermId) -> Result<TermId, TermError> {
        self.check(new)?;
        let count = self.op_count(t);
        if p.0 > count {
            return Err(TermError::PositionOutOfRange { pos: p.0, count });
        }
        // `remaining` is the number of operator nodes still to skip before the target.
        fn go(
            s: &mut TermStore,
            t: TermId,
            remaining: &mut usize,
            new: TermId,
        ) -> Result<Option<TermId>, TermError> {
            if s.is_operator(t) {
                if *remaining == 0 {
                    return Ok(Some(new));
                }
                *remaining -= 1;
            }
            let within = s.op_count(t) - s.is_operator(t) as usize;
            if within <= *remaining {
                *remaining -= within;
                return Ok(None);
            }
            match s.get(t).clone() {
                Term::Var(_) | Term::Const(_) => Ok(None),
                Term::App { head, mut args } => {
                    if let Some(h) = go(s, head, remaining, new)? {
                        return s.intern(Term::App { head: h, args }).map(Some);
                    }
                    for i in 0..args.len() {
                        if let Some(a) = go(s, args[i].term, remaining, new)? {
                            args[i].term = a;
                            return s.intern(Term::App { head, args }).map(Some);
                        }
                    }
                    Ok(None)
                }
                Term::Prod { binder, ty, body } => {
                    if let Some(ty) = go(s, ty, remaining, new)? {
                        return s.intern(Term::Prod { binder, ty, body }).map(Some);
                    }
                    if let Some(body) = go(s, body, remaining, new)? {
                        return s.intern(Term::Prod { binder, ty, body }).map(Some);
                    }
                    Ok(None)
                }
            }
        }
        let mut remaining = p.0 - 1;
        Ok(go(self, t, &mut remaining, new)?.expect("position checked against op_count"))
    }

    /// Equality up to consistent renaming of bound variables.
    pub fn alpha_eq(&self, t1: TermId, t2: TermId) -> bool {
        fn go(s: &TermStore, a: TermId, b: TermId, ea: &mut Vec<Name>, eb: &mut Vec<Name>) -> bool {
            if a == b && ea == eb {
                return true;
            }
            match (s.get(a), s.get(b)) {
                (Term::Var(x), Term::Var(y)) => {
                    let ix = ea.iter().rposition(|n| n == x);
                    let iy = eb.iter().rposition(|n| n == y);
                    match (ix, iy) {
                        (None, None) => x == y,
                        (Some(i), Some(j)) => i == j,
                        _ => false,
                    }
                }
                (Term::Const(x), Term::Const(y)) => x == y,
                (Term::App { head: h1, args: a1 }, Term::App { head: h2, args: a2 }) => {
                    a1.len() == a2.len()
                        && go(s, *h1, *h2, ea, eb)
                        && a1
                            .iter()
                            .zip(a2)
                            .all(|(x, y)| x.implicit == y.implicit && go(s, x.term, y.term, ea, eb))
                }
                (
                    Term::Prod { binder: x, ty: t1, body: b1 },
                    Term::Prod { binder: y, ty: t2, body: b2 },
                ) => {
                    if !go(s, *t1, *t2, ea, eb) {
                        return false;
                    }
                    ea.push(*x);
                    eb.push(*y);
                    let r = go(s, *b1, *b2, ea, eb);
                    ea.pop();
                    eb.pop();
                    r
                }
                _ => false,
            }
        }
        go(self, t1, t2, &mut Vec::new(), &mut Vec::new())
    }

    /// Free variables in first-occurrence order.
    pub fn free_vars(&self, t: TermId) -> Vec<Name> {
        fn go(s: &TermStore, t: TermId, bound: &mut Vec<Name>, out: &mut Vec<Name>) {
            match s.get(t) {
                Term::Var(x) => {
                    if !bound.contains(x) && !out.contains(x) {
                        out.push(*x);
                    }
                }
                Term::Const(_) => {}
                Term::App { head, args } => {
                    go(s, *head, bound, out);
                    for a in args {
                        go(s, a.term, bound, out);
                    }
                }
                Term::Prod { binder, ty, body } => {
                    go(s, *ty, bound, out);
                    bound.push(*binder);
                    go(s, *body, bound, out);
                    bound.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(self, t, &mut Vec::new(), &mut out);
        out
    }

    pub fn is_closed(&self, t: TermId) -> bool {
        self.free_vars(t).is_empty()
    }

    /// Replaces free occurrences of variable `from` by variable `to`.
    pub fn rename_free(&mut self, t: TermId, from: Name, to: Name) -> TermId {
        match self.get(t).clone() {
            Term::Var(x) if x == from => self.intern(Term::Var(to)).expect("variable"),
            Term::Var(_) | Term::Const(_) => t,
            Term::App { head, args } => {
                let head = self.rename_free(head, from, to);
                let args = args
                    .iter()
                    .map(|a| Arg {
                        term: self.rename_free(a.term, from, to),
                        implicit: a.implicit,
                    })
                    .collect();
                self.intern(Term::App { head, args }).expect("same shape")
            }
            Term::Prod { binder, ty, body } => {
                let ty = self.rename_free(ty, from, to);
                let body = if binder == from {
                    body
                } else {
                    self.rename_free(body, from, to)
                };
                self.intern(Term::Prod { binder, ty, body }).expect("same shape")
            }
        }
    }

    /// Copies `t` and everything it references into `dst`.
    pub fn transplant(&self, t: TermId, dst: &mut TermStore) -> TermId {
        fn go(src: &TermStore, t: TermId, dst: &mut TermStore, memo: &mut HashMap<TermId, TermId>) -> TermId {
            if let Some(&id) = memo.get(&t) {
                return id;
            }
            let term = match src.get(t) {
                Term::Var(x) => Term::Var(dst.name(src.name_str(*x))),
                Term::Const(c) => {
                    let sym = src.name_str(*c);
                    let arity = src.arities.get(c).copied().flatten();
                    let n = dst.name(sym);
                    if !dst.is_declared(n) {
                        dst.declare(sym, arity);
                    }
                    Term::Const(n)
                }
                Term::App { head, args } => {
                    let head = go(src, *head, dst, memo);
                    let args = args
                        .iter()
                        .map(|a| Arg {
                            term: go(src, a.term, dst, memo),
                            implicit: a.implicit,
                        })
                        .collect();
                    Term::App { head, args }
                }
                Term::Prod { binder, ty, body } => {
                    let binder = dst.name(src.name_str(*binder));
                    let ty = go(src, *ty, dst, memo);
                    let body = go(src, *body, dst, memo);
                    Term::Prod { binder, ty, body }
                }
            };
            let id = dst.intern(term).expect("source term is well formed");
            memo.insert(t, id);
            id
        }
        go(self, t, dst, &mut HashMap::new())
    }
}
