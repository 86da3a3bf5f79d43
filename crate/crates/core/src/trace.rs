//! Line-oriented proof-trace datasets.
//!
//! ```text
//! #manifest {"version":1,"kind":"toy",...}
//! #term 0 (c G)
//! #term 1 (app eq (app f (v b) (c m)) (v b))
//! {"lemma":"train.0000","state_id":1,"parent_id":0,"ctx":[["b",0]],"goal":1,"tactic":{...},"children":[2]}
//! ```
//!
//! Term-table entries are the terms referenced by records, ordered so that a
//! term never precedes one of its subterms; reading re-interns them, which
//! restores full sharing in memory.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::proof::{ArgDescriptor, Edge, Law, ProofState, ProofTree, StateId, Tactic};
use crate::term::{Position, Term, TermId, TermKind, TermStore};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TacticRecord {
    pub class: String,
    pub raw: String,
    /// Rewrite position, for position-indexed tactics.
    pub pos: Option<usize>,
    pub args: Vec<ArgDescriptor>,
}

impl TacticRecord {
    pub fn from_tactic(t: &Tactic) -> Self {
        match t {
            Tactic::Rewrite { pos, law } => TacticRecord {
                class: "rewrite".into(),
                raw: "rewrite".into(),
                pos: Some(pos.get()),
                args: vec![ArgDescriptor::Global(law.lemma_name().into())],
            },
            Tactic::Reflexivity => TacticRecord {
                class: "reflexivity".into(),
                raw: "reflexivity".into(),
                pos: None,
                args: Vec::new(),
            },
            Tactic::Generic { name, args } => TacticRecord {
                class: name.clone(),
                raw: name.clone(),
                pos: None,
                args: args.clone(),
            },
        }
    }

    pub fn to_tactic(&self) -> Tactic {
        match (self.raw.as_str(), self.pos, self.args.as_slice()) {
            ("rewrite", Some(p), [ArgDescriptor::Global(l)]) => {
                if let (Some(pos), Some(law)) = (Position::new(p), Law::from_lemma_name(l)) {
                    return Tactic::Rewrite { pos, law };
                }
            }
            ("reflexivity", None, []) => return Tactic::Reflexivity,
            _ => {}
        }
        Tactic::Generic {
            name: self.raw.clone(),
            args: self.args.clone(),
        }
    }
}

/// One tactic application: the state it was applied to and its outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub lemma: String,
    pub state_id: u64,
    pub parent_id: Option<u64>,
    pub ctx: Vec<(String, TermId)>,
    pub goal: TermId,
    pub tactic: TacticRecord,
    pub children: Vec<u64>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: dangling term reference {id}")]
    DanglingRef { line: usize, id: usize },
    #[error("line {line}: duplicate state {state} in lemma `{lemma}`")]
    DuplicateState { line: usize, lemma: String, state: u64 },
    #[error("need at least {needed} lemmas, found {found}")]
    TooFewLemmas { needed: usize, found: usize },
    #[error("inconsistent proof tree for `{lemma}`: {msg}")]
    Tree { lemma: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub kind: String,
    /// Additional keys, kept in sorted order.
    pub extra: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(kind: &str) -> Self {
        Manifest {
            kind: kind.into(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.into(), value.into());
        self
    }

    fn to_line(&self) -> String {
        let mut s = format!("#manifest {{\"version\":{FORMAT_VERSION},\"kind\":{}", Value::from(self.kind.clone()));
        for (k, v) in &self.extra {
            s.push_str(&format!(",{}:{v}", Value::from(k.clone())));
        }
        s.push('}');
        s
    }
}

#[derive(Clone, Debug)]
pub struct DatasetFile {
    pub manifest: Manifest,
    pub store: TermStore,
    pub records: Vec<TraceRecord>,
}

#[derive(Serialize, Deserialize)]
struct ArgJson {
    kind: String,
    value: Value,
}

#[derive(Serialize, Deserialize)]
struct TacticJson {
    class: String,
    raw: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pos: Option<usize>,
    args: Vec<ArgJson>,
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    lemma: String,
    state_id: u64,
    parent_id: Option<u64>,
    ctx: Vec<(String, usize)>,
    goal: usize,
    tactic: TacticJson,
    children: Vec<u64>,
}

fn referenced_terms(records: &[TraceRecord]) -> Vec<TermId> {
    let mut ids = BTreeSet::new();
    for r in records {
        ids.insert(r.goal);
        ids.extend(r.ctx.iter().map(|(_, t)| *t));
        for a in &r.tactic.args {
            if let ArgDescriptor::Term(t) = a {
                ids.insert(*t);
            }
        }
    }
    // interning order puts subterms before their parents
    ids.into_iter().collect()
}

/// Serializes records against their store. Output is deterministic.
pub fn write_dataset(manifest: &Manifest, records: &[TraceRecord], store: &TermStore) -> String {
    let table = referenced_terms(records);
    let remap: HashMap<TermId, usize> = table.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut out = manifest.to_line();
    out.push('\n');
    for (i, t) in table.iter().enumerate() {
        out.push_str(&format!("#term {i} {}\n", store.print_sexpr(*t)));
    }
    for r in records {
        let rec = RecordJson {
            lemma: r.lemma.clone(),
            state_id: r.state_id,
            parent_id: r.parent_id,
            ctx: r.ctx.iter().map(|(n, t)| (n.clone(), remap[t])).collect(),
            goal: remap[&r.goal],
            tactic: TacticJson {
                class: r.tactic.class.clone(),
                raw: r.tactic.raw.clone(),
                pos: r.tactic.pos,
                args: r
                    .tactic
                    .args
                    .iter()
                    .map(|a| match a {
                        ArgDescriptor::Local(s) => ArgJson {
                            kind: "local".into(),
                            value: s.clone().into(),
                        },
                        ArgDescriptor::Global(s) => ArgJson {
                            kind: "global".into(),
                            value: s.clone().into(),
                        },
                        ArgDescriptor::Term(t) => ArgJson {
                            kind: "term".into(),
                            value: remap[t].into(),
                        },
                    })
                    .collect(),
            },
            children: r.children.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses a dataset into a fresh store.
pub fn read_dataset(text: &str) -> Result<DatasetFile, TraceError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (ln, first) = lines.next().ok_or(TraceError::Malformed {
        line: 1,
        msg: "empty file".into(),
    })?;
    let manifest = parse_manifest(ln, first)?;
    let mut store = TermStore::new();
    let mut table: Vec<TermId> = Vec::new();
    let mut records = Vec::new();
    let mut seen: BTreeSet<(String, u64)> = BTreeSet::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#term ") {
            let (id, sexpr) = rest.split_once(' ').ok_or(TraceError::Malformed {
                line: ln,
                msg: "term line needs an id and a term".into(),
            })?;
            let id: usize = id.parse().map_err(|_| TraceError::Malformed {
                line: ln,
                msg: format!("bad term id `{id}`"),
            })?;
            if id != table.len() {
                return Err(TraceError::Malformed {
                    line: ln,
                    msg: format!("term ids must be dense; expected {}, got {id}", table.len()),
                });
            }
            let t = store.parse_sexpr(sexpr).map_err(|e| TraceError::Malformed {
                line: ln,
                msg: e.to_string(),
            })?;
            table.push(t);
            continue;
        }
        if line.starts_with('#') {
            return Err(TraceError::Malformed {
                line: ln,
                msg: "unknown directive".into(),
            });
        }
        let rec: RecordJson = serde_json::from_str(line).map_err(|e| TraceError::Malformed {
            line: ln,
            msg: e.to_string(),
        })?;
        let term = |id: usize| table.get(id).copied().ok_or(TraceError::DanglingRef { line: ln, id });
        let ctx = rec
            .ctx
            .iter()
            .map(|(n, t)| Ok((n.clone(), term(*t)?)))
            .collect::<Result<Vec<_>, TraceError>>()?;
        let goal = term(rec.goal)?;
        let mut args = Vec::new();
        for a in rec.tactic.args {
            let d = match (a.kind.as_str(), a.value) {
                ("local", Value::String(s)) => ArgDescriptor::Local(s),
                ("global", Value::String(s)) => ArgDescriptor::Global(s),
                ("term", Value::Number(n)) => {
                    let id = n.as_u64().ok_or(TraceError::Malformed {
                        line: ln,
                        msg: "term argument must be a table id".into(),
                    })?;
                    ArgDescriptor::Term(term(id as usize)?)
                }
                (k, _) => {
                    return Err(TraceError::Malformed {
                        line: ln,
                        msg: format!("bad argument of kind `{k}`"),
                    })
                }
            };
            args.push(d);
        }
        if !seen.insert((rec.lemma.clone(), rec.state_id)) {
            return Err(TraceError::DuplicateState {
                line: ln,
                lemma: rec.lemma,
                state: rec.state_id,
            });
        }
        records.push(TraceRecord {
            lemma: rec.lemma,
            state_id: rec.state_id,
            parent_id: rec.parent_id,
            ctx,
            goal,
            tactic: TacticRecord {
                class: rec.tactic.class,
                raw: rec.tactic.raw,
                pos: rec.tactic.pos,
                args,
            },
            children: rec.children,
        });
    }
    Ok(DatasetFile {
        manifest,
        store,
        records,
    })
}

fn parse_manifest(ln: usize, line: &str) -> Result<Manifest, TraceError> {
    let bad = |msg: &str| TraceError::Malformed {
        line: ln,
        msg: msg.into(),
    };
    let json = line.strip_prefix("#manifest ").ok_or_else(|| bad("missing manifest"))?;
    let v: Value = serde_json::from_str(json).map_err(|e| bad(&e.to_string()))?;
    let mut obj = match v {
        Value::Object(o) => o,
        _ => return Err(bad("manifest must be an object")),
    };
    match obj.remove("version").and_then(|v| v.as_u64()) {
        Some(FORMAT_VERSION) => {}
        _ => return Err(bad("unsupported manifest version")),
    }
    let kind = match obj.remove("kind") {
        Some(Value::String(s)) => s,
        _ => return Err(bad("manifest needs a kind")),
    };
    Ok(Manifest {
        kind,
        extra: obj.into_iter().collect(),
    })
}

impl DatasetFile {
    pub fn read(path: &std::path::Path) -> Result<Self, TraceError> {
        read_dataset(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<(), TraceError> {
        std::fs::write(path, write_dataset(&self.manifest, &self.records, &self.store))?;
        Ok(())
    }

    /// Lemma names in first-appearance order.
    pub fn lemmas(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.lemma.as_str()))
            .map(|r| r.lemma.clone())
            .collect()
    }

    pub fn records_of<'a>(&'a self, lemma: &'a str) -> impl Iterator<Item = &'a TraceRecord> + 'a {
        self.records.iter().filter(move |r| r.lemma == lemma)
    }
}

/// Groups records by lemma, preserving order.
pub fn by_lemma(records: &[TraceRecord]) -> BTreeMap<&str, Vec<&TraceRecord>> {
    let mut m: BTreeMap<&str, Vec<&TraceRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.lemma.as_str()).or_default().push(r);
    }
    m
}

/// Rebuilds the proof tree of one lemma. Children without a record of their
/// own are leaves of a finished proof and are marked final.
pub fn tree_from_records(records: &[&TraceRecord], store: &mut TermStore) -> Result<ProofTree, TraceError> {
    let lemma = records.first().map(|r| r.lemma.clone()).unwrap_or_default();
    let err = |msg: String| TraceError::Tree {
        lemma: lemma.clone(),
        msg,
    };
    let by_state: HashMap<u64, &TraceRecord> = records.iter().map(|r| (r.state_id, *r)).collect();
    let roots: Vec<&&TraceRecord> = records.iter().filter(|r| r.parent_id.is_none()).collect();
    let root = match roots.as_slice() {
        [r] => *r,
        _ => return Err(err(format!("expected one root, found {}", roots.len()))),
    };
    let state_of = |r: &TraceRecord, id: u64, store: &mut TermStore| ProofState {
        id: StateId(id),
        ctx: r.ctx.iter().map(|(n, t)| (store.name(n), *t)).collect(),
        goal: r.goal,
    };
    let mut tree = ProofTree::with_root(state_of(root, root.state_id, store));
    let mut queue = std::collections::VecDeque::from([*root]);
    while let Some(r) = queue.pop_front() {
        let mut children = Vec::new();
        for &c in &r.children {
            match by_state.get(&c) {
                Some(cr) => {
                    if cr.parent_id != Some(r.state_id) {
                        return Err(err(format!("state {c} names a different parent")));
                    }
                    children.push(state_of(cr, c, store));
                    queue.push_back(*cr);
                }
                None => {
                    children.push(state_of(r, c, store));
                    tree.finals.insert(StateId(c));
                }
            }
        }
        tree.add_edge(StateId(r.state_id), r.tactic.to_tactic(), children)
            .map_err(|e| err(e.to_string()))?;
    }
    if tree.edges.len() != records.len() {
        return Err(err("records unreachable from the root".into()));
    }
    Ok(tree)
}

/// Edges as `(parent, tactic, children)` triples.
pub fn edge_shape(tree: &ProofTree) -> Vec<(u64, String, Vec<u64>)> {
    tree.edges
        .iter()
        .map(|Edge { parent, tactic, children }| {
            (parent.0, tactic.to_string(), children.iter().map(|c| c.0).collect())
        })
        .collect()
}

/// Lemma-level train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    /// Record counts of train, valid, test.
    pub counts: [usize; 3],
}

impl Split {
    pub fn parts(&self) -> [&[String]; 3] {
        [&self.train, &self.valid, &self.test]
    }

    pub fn shares(&self) -> [f64; 3] {
        let total: usize = self.counts.iter().sum();
        self.counts.map(|c| c as f64 / total.max(1) as f64)
    }

    pub fn which(&self, lemma: &str) -> Option<usize> {
        self.parts().iter().position(|p| p.iter().any(|l| l == lemma))
    }
}

fn split_cost(loads: &[usize; 3], targets: &[f64; 3]) -> f64 {
    loads.iter().zip(targets).map(|(l, t)| (*l as f64 - t).powi(2)).sum()
}

/// Partitions lemmas so that record counts follow `ratio`.
///
/// Lemmas are shuffled by `seed`, ordered by decreasing size, and each goes
/// to the split furthest below its target share; single moves and swaps then
/// refine the balance. Every split receives at least one lemma.
pub fn split_by_lemma(records: &[TraceRecord], ratio: [u32; 3], seed: u64) -> Result<Split, TraceError> {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *sizes.entry(r.lemma.as_str()).or_default() += 1;
    }
    let mut lemmas: Vec<(&str, usize)> = sizes.into_iter().collect();
    if lemmas.len() < 3 {
        return Err(TraceError::TooFewLemmas {
            needed: 3,
            found: lemmas.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lemmas.shuffle(&mut rng);
    lemmas.sort_by_key(|l| std::cmp::Reverse(l.1));

    let rsum: f64 = ratio.iter().map(|r| *r as f64).sum();
    let share = ratio.map(|r| r as f64 / rsum);
    let total: usize = lemmas.iter().map(|l| l.1).sum();
    let targets = share.map(|s| s * total as f64);

    let mut assign = vec![0usize; lemmas.len()];
    let mut loads = [0usize; 3];
    let mut assigned = 0usize;
    for (i, (_, size)) in lemmas.iter().enumerate() {
        let after = (assigned + size) as f64;
        let best = (0..3)
            .max_by(|&a, &b| {
                let da = share[a] * after - loads[a] as f64;
                let db = share[b] * after - loads[b] as f64;
                da.partial_cmp(&db).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        assign[i] = best;
        loads[best] += size;
        assigned += size;
    }

    let members = |assign: &[usize]| {
        let mut m = [0usize; 3];
        for a in assign {
            m[*a] += 1;
        }
        m
    };
    // every split gets a lemma: take the smallest lemma of the most populated split
    for s in 0..3 {
        if members(&assign)[s] == 0 {
            let counts = members(&assign);
            let donor = (0..3).max_by_key(|d| counts[*d]).unwrap();
            let idx = (0..lemmas.len())
                .filter(|i| assign[*i] == donor)
                .min_by_key(|i| (lemmas[*i].1, std::cmp::Reverse(*i)))
                .unwrap();
            loads[donor] -= lemmas[idx].1;
            loads[s] += lemmas[idx].1;
            assign[idx] = s;
        }
    }

    // local refinement
    for _ in 0..100 {
        let counts = members(&assign);
        let current = split_cost(&loads, &targets);
        let mut best: Option<(f64, usize, Option<usize>, usize)> = None;
        for i in 0..lemmas.len() {
            let from = assign[i];
            for to in 0..3 {
                if to == from || counts[from] <= 1 {
                    continue;
                }
                let mut l = loads;
                l[from] -= lemmas[i].1;
                l[to] += lemmas[i].1;
                let c = split_cost(&l, &targets);
                if c + 1e-9 < best.map_or(current, |b| b.0) {
                    best = Some((c, i, None, to));
                }
            }
        }
        if lemmas.len() <= 400 {
            for i in 0..lemmas.len() {
                for j in (i + 1)..lemmas.len() {
                    let (a, b) = (assign[i], assign[j]);
                    if a == b || lemmas[i].1 == lemmas[j].1 {
                        continue;
                    }
                    let mut l = loads;
                    l[a] = l[a] - lemmas[i].1 + lemmas[j].1;
                    l[b] = l[b] - lemmas[j].1 + lemmas[i].1;
                    let c = split_cost(&l, &targets);
                    if c + 1e-9 < best.map_or(current, |b| b.0) {
                        best = Some((c, i, Some(j), b));
                    }
                }
            }
        }
        match best {
            None => break,
            Some((_, i, None, to)) => {
                loads[assign[i]] -= lemmas[i].1;
                loads[to] += lemmas[i].1;
                assign[i] = to;
            }
            Some((_, i, Some(j), _)) => {
                let (a, b) = (assign[i], assign[j]);
                loads[a] = loads[a] - lemmas[i].1 + lemmas[j].1;
                loads[b] = loads[b] - lemmas[j].1 + lemmas[i].1;
                assign.swap(i, j);
            }
        }
    }

    let mut parts: [Vec<String>; 3] = Default::default();
    for (i, (name, _)) in lemmas.iter().enumerate() {
        parts[assign[i]].push((*name).to_owned());
    }
    for p in &mut parts {
        p.sort();
    }
    let [train, valid, test] = parts;
    Ok(Split {
        train,
        valid,
        test,
        counts: loads,
    })
}

/// Binning of remaining proof steps into distance classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthBin {
    /// Inclusive upper bound of every class but the last, increasing.
    pub upper: Vec<usize>,
}

impl Default for DepthBin {
    /// close: at most 5, medium: 6 to 19, far: 20 or more.
    fn default() -> Self {
        DepthBin { upper: vec![5, 19] }
    }
}

impl DepthBin {
    pub fn classes(&self) -> usize {
        self.upper.len() + 1
    }

    /// Zero-based class of a step count.
    pub fn bin(&self, steps: usize) -> usize {
        self.upper.iter().position(|u| steps <= *u).unwrap_or(self.upper.len())
    }

    pub fn class_name(&self, class: usize) -> String {
        if self.classes() == 3 {
            ["close", "medium", "far"][class].to_owned()
        } else {
            format!("bin{class}")
        }
    }
}

pub fn bin_depth(steps: usize, bins: &DepthBin) -> usize {
    bins.bin(steps)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Histograms {
    pub ast_nodes: BTreeMap<String, usize>,
    pub tactics: BTreeMap<String, usize>,
}

/// AST-node counts over the expanded goal and context types of every record,
/// plus tactic-class counts per edge.
pub fn histograms(records: &[TraceRecord], store: &TermStore) -> Histograms {
    fn count(store: &TermStore, t: TermId, memo: &mut HashMap<TermId, [usize; 4]>) -> [usize; 4] {
        if let Some(c) = memo.get(&t) {
            return *c;
        }
        let mut c = [0usize; 4];
        c[store.get(t).kind() as usize] += 1;
        for ch in store.children(t) {
            let sub = count(store, ch, memo);
            for k in 0..4 {
                c[k] += sub[k];
            }
        }
        memo.insert(t, c);
        c
    }
    let mut memo = HashMap::new();
    let mut totals = [0usize; 4];
    let mut h = Histograms::default();
    for r in records {
        for t in std::iter::once(r.goal).chain(r.ctx.iter().map(|(_, t)| *t)) {
            let c = count(store, t, &mut memo);
            for k in 0..4 {
                totals[k] += c[k];
            }
        }
        *h.tactics.entry(r.tactic.class.clone()).or_default() += 1;
    }
    for k in TermKind::ALL {
        if totals[k as usize] > 0 {
            h.ast_nodes.insert(k.as_str().to_owned(), totals[k as usize]);
        }
    }
    h
}

impl Histograms {
    /// Two text tables sorted by descending count, then name.
    pub fn render(&self) -> String {
        fn table(title: &str, m: &BTreeMap<String, usize>) -> String {
            let mut rows: Vec<(&String, &usize)> = m.iter().collect();
            rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            let mut s = format!("# {title}\n");
            for (k, v) in rows {
                s.push_str(&format!("{k}\t{v}\n"));
            }
            s
        }
        format!("{}{}", table("ast_nodes", &self.ast_nodes), table("tactics", &self.tactics))
    }
}

/// Expanded-tree node count of a state (goal plus context types).
pub fn state_size(store: &TermStore, ctx: &[(String, TermId)], goal: TermId) -> usize {
    store.tree_size(goal) + ctx.iter().map(|(_, t)| store.tree_size(*t)).sum::<usize>()
}

/// Convenience for terms appearing as an application head.
pub fn head_symbol(store: &TermStore, t: TermId) -> Option<&str> {
    match store.get(t) {
        Term::App { head, .. } => match store.get(*head) {
            Term::Const(c) => Some(store.name_str(*c)),
            _ => None,
        },
        _ => None,
    }
}
