//! Recursive term and proof-state embeddings built on [`crate::autodiff`].
//!
//! Applications fold a recurrent cell over the kind vector followed by the
//! child embeddings; binders draw a Gaussian vector for the bound variable
//! and embed the body under the extended environment.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId, ParamId, ParamStore, Tensor};
use crate::term::{Name, Term, TermId, TermKind, TermStore};

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("symbol `{0}` has no embedding")]
    UnknownSymbol(String),
    #[error("unknown cell `{0}` (expected tanh, gru or treelstm)")]
    UnknownCell(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Tanh,
    Gru,
    TreeLstm,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Tanh => "tanh",
            CellKind::Gru => "gru",
            CellKind::TreeLstm => "treelstm",
        }
    }

    pub fn parse(s: &str) -> Result<CellKind, EmbedError> {
        match s {
            "tanh" => Ok(CellKind::Tanh),
            "gru" => Ok(CellKind::Gru),
            "treelstm" => Ok(CellKind::TreeLstm),
            _ => Err(EmbedError::UnknownCell(s.into())),
        }
    }

    /// Default dropout rate for the cell.
    pub fn default_dropout(self) -> f64 {
        match self {
            CellKind::TreeLstm => 0.1,
            _ => 0.0,
        }
    }

    fn gates(self) -> usize {
        match self {
            CellKind::Tanh => 1,
            CellKind::Gru => 3,
            CellKind::TreeLstm => 4,
        }
    }
}

/// splitmix64 finalizer over a running state.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

const TAG_PROD: u64 = 1;
const TAG_CTX: u64 = 2;
const TAG_BOUND: u64 = 3;
const TAG_FREE: u64 = 4;
const TAG_CONST: u64 = 5;
const TAG_APP: u64 = 6;
const TAG_UNBOUND: u64 = 7;
const TAG_INPUT_DROP: u64 = 8;
const TAG_WEIGHT_DROP: u64 = 9;

/// Weights of one recurrent cell. Gate order: tanh `[h]`, GRU `[r, z, n]`,
/// TreeLSTM `[i, f, o, u]`.
#[derive(Clone, Debug)]
pub struct CellParams {
    pub kind: CellKind,
    pub w: Vec<ParamId>,
    pub u: Vec<ParamId>,
    pub b: Vec<ParamId>,
    /// Extra hidden-side bias of the GRU candidate.
    pub b_hn: Option<ParamId>,
}

impl CellParams {
    fn new(ps: &mut ParamStore, prefix: &str, kind: CellKind, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self, GraphError> {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut mat = |ps: &mut ParamStore, name: String, shape: (usize, usize)| {
            let values = (0..shape.0 * shape.1).map(|_| rng.random_range(-bound..bound)).collect();
            ps.add(&name, Tensor::from_values(shape, values))
        };
        let (mut w, mut u, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for g in 0..kind.gates() {
            w.push(mat(ps, format!("{prefix}.w{g}"), (dim, dim))?);
            u.push(mat(ps, format!("{prefix}.u{g}"), (dim, dim))?);
            b.push(mat(ps, format!("{prefix}.b{g}"), (dim, 1))?);
        }
        let b_hn = match kind {
            CellKind::Gru => Some(mat(ps, format!("{prefix}.bhn"), (dim, 1))?),
            _ => None,
        };
        Ok(CellParams { kind, w, u, b, b_hn })
    }

    fn lookup(ps: &ParamStore, prefix: &str, kind: CellKind) -> Option<Self> {
        let (mut w, mut u, mut b) = (Vec::new(), Vec::new(), Vec::new());
        for g in 0..kind.gates() {
            w.push(ps.id(&format!("{prefix}.w{g}"))?);
            u.push(ps.id(&format!("{prefix}.u{g}"))?);
            b.push(ps.id(&format!("{prefix}.b{g}"))?);
        }
        let b_hn = match kind {
            CellKind::Gru => Some(ps.id(&format!("{prefix}.bhn"))?),
            _ => None,
        };
        Some(CellParams { kind, w, u, b, b_hn })
    }
}

/// The learnable tables and cells of the embedding.
#[derive(Clone, Debug)]
pub struct EmbedParams {
    pub dim: usize,
    pub cell: CellKind,
    /// Row per [`TermKind`], in `TermKind::ALL` order.
    pub kinds: ParamId,
    pub symbols: ParamId,
    pub vocab: BTreeMap<String, usize>,
    pub term_cell: CellParams,
    pub ctx_cell: CellParams,
}

impl EmbedParams {
    /// Registers freshly initialized parameters under `prefix`.
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        dim: usize,
        cell: CellKind,
        symbols: &[String],
        seed: u64,
    ) -> Result<Self, GraphError> {
        assert!(dim >= 1, "embedding size must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab: BTreeMap<String, usize> = {
            let mut s: Vec<&String> = symbols.iter().collect();
            s.sort();
            s.dedup();
            s.into_iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
        };
        let mut table = |ps: &mut ParamStore, name: String, rows: usize| {
            let values = (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect();
            ps.add(&name, Tensor::from_values((rows, dim), values))
        };
        let kinds = table(ps, format!("{prefix}.kinds"), TermKind::ALL.len())?;
        let symbols = table(ps, format!("{prefix}.symbols"), vocab.len())?;
        let term_cell = CellParams::new(ps, &format!("{prefix}.term"), cell, dim, &mut rng)?;
        let ctx_cell = CellParams::new(ps, &format!("{prefix}.ctx"), cell, dim, &mut rng)?;
        Ok(EmbedParams {
            dim,
            cell,
            kinds,
            symbols,
            vocab,
            term_cell,
            ctx_cell,
        })
    }

    /// Re-attaches to parameters restored from a checkpoint.
    pub fn lookup(ps: &ParamStore, prefix: &str, cell: CellKind, vocab: &[String]) -> Option<Self> {
        let kinds = ps.id(&format!("{prefix}.kinds"))?;
        let symbols = ps.id(&format!("{prefix}.symbols"))?;
        let dim = ps.get(kinds).shape.1;
        let vocab: BTreeMap<String, usize> = vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        if ps.get(symbols).shape.0 != vocab.len() {
            return None;
        }
        Some(EmbedParams {
            dim,
            cell,
            kinds,
            symbols,
            vocab,
            term_cell: CellParams::lookup(ps, &format!("{prefix}.term"), cell)?,
            ctx_cell: CellParams::lookup(ps, &format!("{prefix}.ctx"), cell)?,
        })
    }

    /// Symbols in row order.
    pub fn vocab_list(&self) -> Vec<String> {
        let mut v: Vec<(&String, &usize)> = self.vocab.iter().collect();
        v.sort_by_key(|(_, i)| **i);
        v.into_iter().map(|(s, _)| s.clone()).collect()
    }
}

/// Symbols of every constant in a store, sorted.
pub fn store_symbols(store: &TermStore) -> Vec<String> {
    let mut out: Vec<String> = store
        .ids()
        .filter_map(|t| match store.get(t) {
            Term::Const(s) => Some(store.name_str(*s).to_owned()),
            _ => None,
        })
        .chain(store.declared_symbols().map(str::to_owned))
        .collect();
    out.sort();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug)]
pub struct EmbedConfig {
    /// Skip implicit-flagged application arguments.
    pub drop_implicit: bool,
    /// Seeds the binder vectors.
    pub pass_seed: u64,
    /// Input and recurrent-weight dropout rate; zero disables masks.
    pub dropout: f64,
    pub dropout_seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            drop_implicit: false,
            pass_seed: 0,
            dropout: 0.0,
            dropout_seed: 0,
        }
    }
}

/// Hidden state, plus the memory cell for TreeLSTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Emb {
    pub h: NodeId,
    pub c: Option<NodeId>,
}

#[derive(Clone, Copy, Debug)]
pub struct Binding {
    pub name: Name,
    /// Content key of the bound vector.
    pub key: u64,
    pub emb: Emb,
    pub depth: usize,
}

/// Scoped variable environment.
#[derive(Clone, Debug, Default)]
pub struct Env {
    entries: Vec<Binding>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: Name, key: u64, emb: Emb) {
        let depth = self.entries.len();
        self.entries.push(Binding { name, key, emb, depth });
    }

    pub fn pop(&mut self) -> Option<Binding> {
        self.entries.pop()
    }

    pub fn lookup(&self, name: Name) -> Option<&Binding> {
        self.entries.iter().rev().find(|b| b.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateEmb {
    pub h: NodeId,
    /// Embedding of each context entry's type.
    pub entries: Vec<NodeId>,
    pub goal: NodeId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EmbedStats {
    /// Term nodes embedded (memo misses).
    pub term_nodes: usize,
    pub memo_hits: usize,
    /// Implicit arguments embedded.
    pub implicit_reads: usize,
}

type MemoKey = (TermId, Vec<u64>, bool);

/// One embedding pass into one graph. Memoizes term embeddings when the
/// graph has sharing enabled.
pub struct Embedder<'a> {
    params: &'a EmbedParams,
    store: &'a TermStore,
    cfg: EmbedConfig,
    memo: HashMap<MemoKey, Emb>,
    fv: HashMap<TermId, Rc<[Name]>>,
    weights: HashMap<ParamId, NodeId>,
    pub stats: EmbedStats,
}

impl<'a> Embedder<'a> {
    pub fn new(params: &'a EmbedParams, store: &'a TermStore, cfg: EmbedConfig) -> Self {
        Embedder {
            params,
            store,
            cfg,
            memo: HashMap::new(),
            fv: HashMap::new(),
            weights: HashMap::new(),
            stats: EmbedStats::default(),
        }
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.cfg
    }

    fn free_vars(&mut self, t: TermId) -> Rc<[Name]> {
        if let Some(v) = self.fv.get(&t) {
            return v.clone();
        }
        let v: Rc<[Name]> = match self.store.get(t) {
            Term::Var(x) => Rc::from(vec![*x]),
            Term::Const(_) => Rc::from(Vec::new()),
            Term::App { head, args } => {
                let mut out: Vec<Name> = self.free_vars(*head).to_vec();
                for a in args.clone() {
                    for x in self.free_vars(a.term).iter() {
                        if !out.contains(x) {
                            out.push(*x);
                        }
                    }
                }
                Rc::from(out)
            }
            Term::Prod { binder, ty, body } => {
                let (binder, ty, body) = (*binder, *ty, *body);
                let mut out: Vec<Name> = self.free_vars(ty).to_vec();
                for x in self.free_vars(body).iter() {
                    if *x != binder && !out.contains(x) {
                        out.push(*x);
                    }
                }
                Rc::from(out)
            }
        };
        self.fv.insert(t, v.clone());
        v
    }

    /// Hash of `t` up to renaming of bound variables; free variables
    /// contribute the key of their binding.
    fn canon(&self, t: TermId, bound: &mut Vec<Name>, env: &Env) -> u64 {
        match self.store.get(t) {
            Term::Var(x) => match bound.iter().rev().position(|b| b == x) {
                Some(i) => mix(TAG_BOUND, i as u64),
                None => match env.lookup(*x) {
                    Some(b) => mix(TAG_FREE, b.key),
                    None => mix(TAG_UNBOUND, hash_str(self.store.name_str(*x))),
                },
            },
            Term::Const(s) => mix(TAG_CONST, hash_str(self.store.name_str(*s))),
            Term::App { head, args } => {
                let mut h = mix(TAG_APP, self.canon(*head, bound, env));
                for a in args {
                    h = mix(h, self.canon(a.term, bound, env) ^ a.implicit as u64);
                }
                h
            }
            Term::Prod { binder, ty, body } => {
                let h = mix(TAG_PROD, self.canon(*ty, bound, env));
                bound.push(*binder);
                let h = mix(h, self.canon(*body, bound, env));
                bound.pop();
                h
            }
        }
    }

    fn gaussian(&self, key: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..self.params.dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn mask(&self, key: u64, n: usize) -> Vec<f64> {
        let p = self.cfg.dropout;
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..n)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
            .collect()
    }

    fn table_row(&mut self, g: &mut Graph, p: ParamId, r: usize) -> NodeId {
        let row = g.row(p, r);
        if self.cfg.dropout > 0.0 {
            let key = mix(mix(mix(self.cfg.dropout_seed, TAG_INPUT_DROP), p.index() as u64), r as u64);
            let m = self.mask(key, self.params.dim);
            g.dropout(row, m)
        } else {
            row
        }
    }

    /// Recurrent weights carry one dropout mask per matrix per pass.
    fn hidden_weight(&mut self, g: &mut Graph, p: ParamId) -> NodeId {
        if let Some(&n) = self.weights.get(&p) {
            return n;
        }
        let w = g.param(p);
        let n = if self.cfg.dropout > 0.0 {
            let key = mix(mix(self.cfg.dropout_seed, TAG_WEIGHT_DROP), p.index() as u64);
            let (r, c) = g.shape(w);
            let m = self.mask(key, r * c);
            g.dropout(w, m)
        } else {
            w
        };
        self.weights.insert(p, n);
        n
    }

    fn input_weight(&mut self, g: &mut Graph, p: ParamId) -> NodeId {
        g.param(p)
    }

    fn kind_vector(&mut self, g: &mut Graph, k: TermKind) -> NodeId {
        let idx = TermKind::ALL.iter().position(|x| *x == k).expect("all kinds listed");
        self.table_row(g, self.params.kinds, idx)
    }

    /// `W x + U h + b` for one gate; the hidden term is skipped for a zero state.
    fn gate(&mut self, g: &mut Graph, cell: &CellParams, i: usize, x: NodeId, h: Option<NodeId>) -> NodeId {
        let w = self.input_weight(g, cell.w[i]);
        let mut acc = g.matvec(w, x);
        if let Some(h) = h {
            let u = self.hidden_weight(g, cell.u[i]);
            let uh = g.matvec(u, h);
            acc = g.add(acc, uh);
        }
        let b = g.param(cell.b[i]);
        g.add(acc, b)
    }

    /// One sequential step; `h` of `None` is the zero state.
    fn step(&mut self, g: &mut Graph, cell: &CellParams, x: NodeId, h: Option<NodeId>) -> NodeId {
        match cell.kind {
            CellKind::Tanh => {
                let a = self.gate(g, cell, 0, x, h);
                g.tanh(a)
            }
            CellKind::Gru => {
                let ar = self.gate(g, cell, 0, x, h);
                let r = g.sigmoid(ar);
                let az = self.gate(g, cell, 1, x, h);
                let z = g.sigmoid(az);
                let w = self.input_weight(g, cell.w[2]);
                let wx = g.matvec(w, x);
                let b_in = g.param(cell.b[2]);
                let wx = g.add(wx, b_in);
                let b_hn = g.param(cell.b_hn.expect("gru cells have a hidden candidate bias"));
                let hn = match h {
                    Some(h) => {
                        let u = self.hidden_weight(g, cell.u[2]);
                        let uh = g.matvec(u, h);
                        g.add(uh, b_hn)
                    }
                    None => b_hn,
                };
                let rh = g.mul(r, hn);
                let pre = g.add(wx, rh);
                let n = g.tanh(pre);
                // (1 - z) * n + z * h  ==  n + z * (h - n)
                let diff = match h {
                    Some(h) => g.sub(h, n),
                    None => g.scale(n, -1.0),
                };
                let zd = g.mul(z, diff);
                g.add(n, zd)
            }
            CellKind::TreeLstm => unreachable!("tree cells compose with child_sum"),
        }
    }

    /// Child-sum TreeLSTM node over input `x`.
    fn child_sum(&mut self, g: &mut Graph, cell: &CellParams, x: NodeId, children: &[Emb]) -> Emb {
        let hs: Vec<NodeId> = children.iter().map(|c| c.h).collect();
        let h_sum = if hs.is_empty() { None } else { Some(g.sum_n(&hs)) };
        let ai = self.gate(g, cell, 0, x, h_sum);
        let i = g.sigmoid(ai);
        let ao = self.gate(g, cell, 2, x, h_sum);
        let o = g.sigmoid(ao);
        let au = self.gate(g, cell, 3, x, h_sum);
        let u = g.tanh(au);
        let mut terms = vec![g.mul(i, u)];
        for ch in children {
            if let Some(c) = ch.c {
                let af = self.gate(g, cell, 1, x, Some(ch.h));
                let f = g.sigmoid(af);
                terms.push(g.mul(f, c));
            }
        }
        let c = g.sum_n(&terms);
        let tc = g.tanh(c);
        Emb {
            h: g.mul(o, tc),
            c: Some(c),
        }
    }

    /// Combines a kind vector with ordered child embeddings.
    fn compose(&mut self, g: &mut Graph, cell: &CellParams, kind: NodeId, children: &[Emb]) -> Emb {
        match cell.kind {
            CellKind::TreeLstm => self.child_sum(g, cell, kind, children),
            _ => {
                let mut h = self.step(g, cell, kind, None);
                for ch in children {
                    h = self.step(g, cell, ch.h, Some(h));
                }
                Emb { h, c: None }
            }
        }
    }

    fn leaf(h: NodeId) -> Emb {
        Emb { h, c: None }
    }

    pub fn embed_term(&mut self, g: &mut Graph, t: TermId, env: &mut Env) -> Result<Emb, EmbedError> {
        let key = if g.sharing() {
            let fv = self.free_vars(t);
            let mut keys = Vec::with_capacity(fv.len());
            for x in fv.iter() {
                keys.push(env.lookup(*x).map_or(u64::MAX, |b| b.key));
            }
            let key = (t, keys, self.cfg.drop_implicit);
            if let Some(e) = self.memo.get(&key) {
                self.stats.memo_hits += 1;
                return Ok(*e);
            }
            Some(key)
        } else {
            None
        };
        self.stats.term_nodes += 1;
        let store = self.store;
        let cell = self.params.term_cell.clone();
        let e = match store.get(t) {
            Term::Var(x) => match env.lookup(*x) {
                Some(b) => b.emb,
                None => return Err(EmbedError::UnboundVariable(store.name_str(*x).into())),
            },
            Term::Const(s) => {
                let sym = store.name_str(*s);
                let row = *self
                    .params
                    .vocab
                    .get(sym)
                    .ok_or_else(|| EmbedError::UnknownSymbol(sym.into()))?;
                Self::leaf(self.table_row(g, self.params.symbols, row))
            }
            Term::App { head, args } => {
                let mut children = vec![self.embed_term(g, *head, env)?];
                for a in args {
                    if a.implicit {
                        if self.cfg.drop_implicit {
                            continue;
                        }
                        self.stats.implicit_reads += 1;
                    }
                    children.push(self.embed_term(g, a.term, env)?);
                }
                let k = self.kind_vector(g, TermKind::App);
                self.compose(g, &cell, k, &children)
            }
            Term::Prod { binder, ty, body } => {
                let (binder, ty, body) = (*binder, *ty, *body);
                let ty_e = self.embed_term(g, ty, env)?;
                let vkey = mix(mix(self.cfg.pass_seed, TAG_PROD), self.canon(t, &mut Vec::new(), env));
                let v = g.input_keyed(vkey, || self.gaussian(vkey));
                env.push(binder, vkey, Self::leaf(v));
                let body_e = self.embed_term(g, body, env);
                env.pop();
                let body_e = body_e?;
                let k = self.kind_vector(g, TermKind::Prod);
                self.compose(g, &cell, k, &[ty_e, body_e])
            }
        };
        if let Some(key) = key {
            self.memo.insert(key, e);
        }
        Ok(e)
    }

    /// Vector bound to the `index`-th context entry in this pass.
    pub fn context_vector(&mut self, g: &mut Graph, index: usize) -> (u64, NodeId) {
        let key = mix(mix(self.cfg.pass_seed, TAG_CTX), index as u64);
        (key, g.input_keyed(key, || self.gaussian(key)))
    }

    /// Embeds entries in order (each may mention earlier ones), then the
    /// goal, then folds the context cell over all of them.
    pub fn embed_state(&mut self, g: &mut Graph, ctx: &[(Name, TermId)], goal: TermId) -> Result<StateEmb, EmbedError> {
        let mut env = Env::new();
        let mut entries = Vec::with_capacity(ctx.len());
        for (i, (name, ty)) in ctx.iter().enumerate() {
            entries.push(self.embed_term(g, *ty, &mut env)?.h);
            let (key, v) = self.context_vector(g, i);
            env.push(*name, key, Self::leaf(v));
        }
        let goal_e = self.embed_term(g, goal, &mut env)?.h;
        let cell = self.params.ctx_cell.clone();
        let h = match cell.kind {
            CellKind::TreeLstm => {
                let mut prev: Vec<Emb> = Vec::new();
                for x in entries.iter().chain([&goal_e]) {
                    prev = vec![self.child_sum(g, &cell, *x, &prev)];
                }
                prev[0].h
            }
            _ => {
                let mut h = None;
                for x in entries.iter().chain([&goal_e]) {
                    h = Some(self.step(g, &cell, *x, h));
                }
                h.expect("the goal is always folded")
            }
        };
        Ok(StateEmb {
            h,
            entries,
            goal: goal_e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Exec;
    use crate::proof::toy_store;

    fn setup(cell: CellKind, dim: usize) -> (TermStore, ParamStore, EmbedParams) {
        let store = toy_store();
        let mut ps = ParamStore::new();
        let ep = EmbedParams::new(&mut ps, "emb", dim, cell, &store_symbols(&store), 7).unwrap();
        (store, ps, ep)
    }

    #[test]
    fn constants_are_memoized() {
        let (mut store, ps, ep) = setup(CellKind::Gru, 8);
        let e = store.parse_sexpr("(c e)").unwrap();
        let mut g = Graph::new(&ps, true);
        let mut em = Embedder::new(&ep, &store, EmbedConfig::default());
        let a = em.embed_term(&mut g, e, &mut Env::new()).unwrap();
        let n = g.len();
        let b = em.embed_term(&mut g, e, &mut Env::new()).unwrap();
        assert_eq!(a, b);
        assert_eq!(g.len(), n);
        assert_eq!(em.stats.memo_hits, 1);
    }

    #[test]
    fn variable_is_its_binding() {
        let (mut store, ps, ep) = setup(CellKind::Gru, 8);
        let x = store.parse_sexpr("(v x)").unwrap();
        let mut g = Graph::new(&ps, true);
        let v = g.input(vec![0.5; 8]);
        let mut env = Env::new();
        env.push(store.lookup_name("x").unwrap(), 42, Emb { h: v, c: None });
        let mut em = Embedder::new(&ep, &store, EmbedConfig::default());
        assert_eq!(em.embed_term(&mut g, x, &mut env).unwrap().h, v);
    }

    #[test]
    fn unbound_and_unknown_are_errors() {
        let (mut store, ps, ep) = setup(CellKind::Tanh, 4);
        let x = store.parse_sexpr("(v x)").unwrap();
        let q = store.parse_sexpr("(c q)").unwrap();
        let mut g = Graph::new(&ps, true);
        let mut em = Embedder::new(&ep, &store, EmbedConfig::default());
        assert_eq!(
            em.embed_term(&mut g, x, &mut Env::new()).unwrap_err(),
            EmbedError::UnboundVariable("x".into())
        );
        assert_eq!(
            em.embed_term(&mut g, q, &mut Env::new()).unwrap_err(),
            EmbedError::UnknownSymbol("q".into())
        );
    }

    #[test]
    fn env_scoping_restores_outer_binding() {
        let mut store = toy_store();
        let x = store.name("x");
        let mut env = Env::new();
        let mut ps = ParamStore::new();
        ps.add("d", Tensor::zeros((1, 1))).unwrap();
        let mut g = Graph::new(&ps, true);
        let (a, b) = (g.input(vec![1.0]), g.input(vec![2.0]));
        env.push(x, 1, Emb { h: a, c: None });
        env.push(x, 2, Emb { h: b, c: None });
        assert_eq!(env.lookup(x).unwrap().emb.h, b);
        env.pop();
        assert_eq!(env.lookup(x).unwrap().emb.h, a);
    }

    #[test]
    fn repeated_state_adds_no_nodes() {
        for cell in [CellKind::Gru, CellKind::TreeLstm, CellKind::Tanh] {
            let (mut store, ps, ep) = setup(cell, 6);
            let goal = store.parse_sexpr("(app eq (app f (v b) (c m)) (v b))").unwrap();
            let g_ty = store.parse_sexpr("(c G)").unwrap();
            let b = store.lookup_name("b").unwrap();
            let mut g = Graph::new(&ps, true);
            let mut em = Embedder::new(&ep, &store, EmbedConfig::default());
            let s1 = em.embed_state(&mut g, &[(b, g_ty)], goal).unwrap();
            let n = g.len();
            let before = em.stats.term_nodes;
            let s2 = em.embed_state(&mut g, &[(b, g_ty)], goal).unwrap();
            assert_eq!(s1, s2);
            assert_eq!(g.len(), n);
            assert_eq!(em.stats.term_nodes, before);
            g.forward(&ps, Exec::Naive).unwrap();
        }
    }

    #[test]
    fn mid_level_skips_implicit_arguments() {
        let mut store = toy_store();
        let t = store.parse_sexpr("(app pair (impl (c G)) (c e) (c m))").unwrap();
        let mut ps = ParamStore::new();
        let ep = EmbedParams::new(&mut ps, "emb", 4, CellKind::Gru, &store_symbols(&store), 7).unwrap();
        let mut g = Graph::new(&ps, true);
        let cfg = EmbedConfig {
            drop_implicit: true,
            ..EmbedConfig::default()
        };
        let mut em = Embedder::new(&ep, &store, cfg);
        em.embed_term(&mut g, t, &mut Env::new()).unwrap();
        assert_eq!(em.stats.implicit_reads, 0);
        let mut em = Embedder::new(&ep, &store, EmbedConfig::default());
        em.embed_term(&mut g, t, &mut Env::new()).unwrap();
        assert_eq!(em.stats.implicit_reads, 1);
    }
}
