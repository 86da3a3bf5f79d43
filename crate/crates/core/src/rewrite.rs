//! Random provable identity-elimination theorems `forall b : G, X = b` and
//! their deterministic reference proofs.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::proof::{rewrite_term, toy_store, EngineError, Law, ProofSession, Tactic, CARRIER, EQ, LEFT_UNIT, RIGHT_UNIT};
use crate::term::{Position, Term, TermId, TermStore};
use crate::trace::{DatasetFile, Manifest, Split, TraceRecord};

/// Name of the universally quantified variable.
pub const VAR: &str = "b";

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("no proof found for {0}")]
    NoProof(String),
    #[error("cannot draw {needed} distinct expressions of length {length}: only {available} exist")]
    Infeasible {
        needed: usize,
        length: usize,
        available: usize,
    },
    #[error("invalid dataset spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Value an expression must reduce to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Target {
    Var,
    Left,
    Right,
}

fn leaf(store: &mut TermStore, target: Target) -> TermId {
    match target {
        Target::Var => store.var(VAR),
        Target::Left => store.constant(LEFT_UNIT).expect("signature declared"),
        Target::Right => store.constant(RIGHT_UNIT).expect("signature declared"),
    }
}

fn op(store: &mut TermStore, l: TermId, r: TermId) -> TermId {
    store
        .app_sym(crate::term::DEFAULT_OPERATOR, &[l, r])
        .expect("signature declared")
}

fn expand<R: Rng + ?Sized>(store: &mut TermStore, rng: &mut R, length: usize, target: Target) -> TermId {
    if length == 1 {
        return leaf(store, target);
    }
    let left_budget = rng.random_range(1..length);
    let carrier_on_left = rng.random_bool(0.5);
    let (lt, rt) = if carrier_on_left {
        (target, Target::Right)
    } else {
        (Target::Left, target)
    };
    let l = expand(store, rng, left_budget, lt);
    let r = expand(store, rng, length - left_budget, rt);
    op(store, l, r)
}

/// Random expression with `length` leaves that reduces to `b`.
///
/// Each operator node sends the required value down one side (picked by a
/// fair coin) and the matching identity down the other; the leaf budget is
/// split uniformly.
pub fn gen_expression<R: Rng + ?Sized>(store: &mut TermStore, rng: &mut R, length: usize) -> TermId {
    assert!(length >= 1, "expressions have at least one leaf");
    expand(store, rng, length, Target::Var)
}

/// `forall b : G, expr = b`.
pub fn statement(store: &mut TermStore, expr: TermId) -> TermId {
    let b = store.var(VAR);
    let eq = store.app_sym(EQ, &[expr, b]).expect("signature declared");
    let g = store.constant(CARRIER).expect("signature declared");
    store.prod(VAR, g, eq).expect("well formed")
}

fn search(store: &mut TermStore, lhs: TermId, goal: TermId, dead: &mut HashSet<TermId>) -> Option<Vec<Tactic>> {
    if lhs == goal {
        return Some(Vec::new());
    }
    if dead.contains(&lhs) {
        return None;
    }
    for p in 1..=store.op_count(lhs) {
        let pos = Position::new(p).expect("1-based");
        for law in Law::ALL {
            if let Ok(next) = rewrite_term(store, lhs, pos, law) {
                if let Some(mut rest) = search(store, next, goal, dead) {
                    rest.insert(0, Tactic::Rewrite { pos, law });
                    return Some(rest);
                }
            }
        }
    }
    dead.insert(lhs);
    None
}

/// Rewrites turning `lhs` into `rhs`, found by depth-first search trying
/// smaller positions first and the left law before the right law.
pub fn reduce(store: &mut TermStore, lhs: TermId, rhs: TermId) -> Option<Vec<Tactic>> {
    search(store, lhs, rhs, &mut HashSet::new())
}

fn equation(store: &TermStore, goal: TermId) -> Option<(TermId, TermId)> {
    let eq = store.lookup_name(EQ)?;
    match store.explicit_args_of(goal, eq)?.as_slice() {
        [l, r] => Some((*l, *r)),
        _ => None,
    }
}

/// Reference proof from an equation goal: the rewrites followed by
/// reflexivity.
pub fn oracle_from_goal(store: &mut TermStore, goal: TermId) -> Result<Vec<Tactic>, DomainError> {
    let (lhs, rhs) = equation(store, goal).ok_or(EngineError::NotAnEquation)?;
    let mut steps = reduce(store, lhs, rhs).ok_or_else(|| DomainError::NoProof(store.print_sexpr(goal)))?;
    steps.push(Tactic::Reflexivity);
    Ok(steps)
}

/// Whether an equation goal can still be closed by identity rewrites.
pub fn provable(store: &mut TermStore, goal: TermId) -> bool {
    equation(store, goal).is_some_and(|(l, r)| reduce(store, l, r).is_some())
}

/// Reference proof of a theorem `forall b : G, X = b` (binders are skipped).
pub fn oracle_proof(store: &mut TermStore, theorem: TermId) -> Result<Vec<Tactic>, DomainError> {
    let mut goal = theorem;
    while let Term::Prod { body, .. } = store.get(goal) {
        goal = *body;
    }
    oracle_from_goal(store, goal)
}

#[derive(Clone, Debug)]
pub struct TheoremSpec {
    pub name: String,
    pub expr: TermId,
    pub statement: TermId,
    pub oracle_proof: Vec<Tactic>,
}

impl TheoremSpec {
    pub fn rewrites(&self) -> usize {
        self.oracle_proof.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_train: 400,
            n_test: 50,
            length: 10,
            seed: 0,
        }
    }
}

/// Every expression the generator can produce at a given length.
fn enumerate(store: &mut TermStore, length: usize, target: Target, out: &mut HashSet<TermId>) {
    if length == 1 {
        out.insert(leaf(store, target));
        return;
    }
    for k in 1..length {
        for carrier_on_left in [true, false] {
            let (lt, rt) = if carrier_on_left {
                (target, Target::Right)
            } else {
                (Target::Left, target)
            };
            let mut ls = HashSet::new();
            let mut rs = HashSet::new();
            enumerate(store, k, lt, &mut ls);
            enumerate(store, length - k, rt, &mut rs);
            for l in &ls {
                for r in &rs {
                    let t = op(store, *l, *r);
                    out.insert(t);
                }
            }
        }
    }
}

/// Number of distinct expressions of `length` leaves reducing to `b`, for
/// small lengths.
pub fn count_expressions(length: usize) -> usize {
    let mut store = toy_store();
    let mut out = HashSet::new();
    enumerate(&mut store, length, Target::Var, &mut out);
    out.len()
}

/// Draws structurally distinct train and test theorems with their proofs.
pub fn gen_dataset(store: &mut TermStore, spec: &DatasetSpec) -> Result<(Vec<TheoremSpec>, Vec<TheoremSpec>), DomainError> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(DomainError::BadSpec("train and test sizes must be positive".into()));
    }
    if spec.length < 2 {
        return Err(DomainError::BadSpec("length must be at least 2".into()));
    }
    let needed = spec.n_train + spec.n_test;
    if spec.length <= 6 {
        let available = count_expressions(spec.length);
        if available < needed {
            return Err(DomainError::Infeasible {
                needed,
                length: spec.length,
                available,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::new();
    let mut train = Vec::with_capacity(spec.n_train);
    let mut test = Vec::with_capacity(spec.n_test);
    while train.len() + test.len() < needed {
        let expr = gen_expression(store, &mut rng, spec.length);
        if !seen.insert(expr) {
            continue;
        }
        let stmt = statement(store, expr);
        let proof = oracle_proof(store, stmt)?;
        let (list, prefix) = if train.len() < spec.n_train {
            (&mut train, "train")
        } else {
            (&mut test, "test")
        };
        let name = format!("{prefix}.{:04}", list.len());
        list.push(TheoremSpec {
            name,
            expr,
            statement: stmt,
            oracle_proof: proof,
        });
    }
    Ok((train, test))
}

/// Executes a theorem's reference proof, returning the trace.
pub fn proof_records(store: TermStore, thm: &TheoremSpec) -> Result<(TermStore, Vec<TraceRecord>), DomainError> {
    let mut session = ProofSession::start(store, thm.statement, &thm.name)?;
    for t in &thm.oracle_proof {
        session.apply_current(t.clone())?;
    }
    debug_assert!(session.is_complete());
    let recs = session.export_tree();
    Ok((session.into_store(), recs))
}

/// Generates the benchmark and its traces as one dataset file. Lemma names
/// carry a `train.` or `test.` prefix.
pub fn toy_dataset(spec: &DatasetSpec) -> Result<DatasetFile, DomainError> {
    let mut store = toy_store();
    let (train, test) = gen_dataset(&mut store, spec)?;
    let mut records = Vec::new();
    for thm in train.iter().chain(&test) {
        let (s, recs) = proof_records(store, thm)?;
        store = s;
        records.extend(recs);
    }
    let manifest = Manifest::new("toy")
        .with("n_train", spec.n_train)
        .with("n_test", spec.n_test)
        .with("length", spec.length)
        .with("seed", spec.seed);
    Ok(DatasetFile {
        manifest,
        store,
        records,
    })
}

/// Train/validation/test lemmas of a generated benchmark: `test.` lemmas
/// are the test split and the last tenth of the `train.` lemmas validates.
pub fn benchmark_split(ds: &DatasetFile) -> Split {
    let lemmas = ds.lemmas();
    let train: Vec<String> = lemmas.iter().filter(|l| l.starts_with("train.")).cloned().collect();
    let test: Vec<String> = lemmas.iter().filter(|l| l.starts_with("test.")).cloned().collect();
    let cut = train.len() - train.len() / 10;
    let (train, valid) = (train[..cut].to_vec(), train[cut..].to_vec());
    let mut counts = [0; 3];
    let mut split = Split {
        train,
        valid,
        test,
        counts,
    };
    for r in &ds.records {
        if let Some(i) = split.which(&r.lemma) {
            counts[i] += 1;
        }
    }
    split.counts = counts;
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(store: &mut TermStore, s: &str) -> TermId {
        store.parse_sexpr(s).unwrap()
    }

    #[test]
    fn length_one_is_the_variable() {
        let mut s = toy_store();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = gen_expression(&mut s, &mut rng, 1);
        assert_eq!(s.print_sexpr(t), "(v b)");
    }

    #[test]
    fn length_two_shapes() {
        let mut s = toy_store();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = HashSet::new();
        for _ in 0..100 {
            let t = gen_expression(&mut s, &mut rng, 2);
            seen.insert(s.print_sexpr(t));
        }
        let want: HashSet<String> = ["(app f (v b) (c m))", "(app f (c e) (v b))"]
            .iter()
            .map(|x| x.to_string())
            .collect();
        assert_eq!(seen, want);
        assert_eq!(count_expressions(2), 2);
    }

    #[test]
    fn oracle_examples() {
        let mut s = toy_store();
        let t = parse(&mut s, "(prod b (c G) (app eq (app f (v b) (c m)) (v b)))");
        assert_eq!(oracle_proof(&mut s, t).unwrap(), vec![Tactic::rewrite(1, Law::RightId), Tactic::Reflexivity]);
        let t = parse(&mut s, "(prod b (c G) (app eq (app f (v b) (app f (c e) (c m))) (v b)))");
        assert_eq!(
            oracle_proof(&mut s, t).unwrap(),
            vec![
                Tactic::rewrite(2, Law::LeftId),
                Tactic::rewrite(1, Law::RightId),
                Tactic::Reflexivity
            ]
        );
    }

    #[test]
    fn oracle_backtracks_past_dead_ends() {
        // the left law at position 2 leaves m + b, which is stuck
        let mut s = toy_store();
        let t = parse(&mut s, "(prod b (c G) (app eq (app f (app f (c e) (c m)) (v b)) (v b)))");
        let proof = oracle_proof(&mut s, t).unwrap();
        assert_eq!(
            proof,
            vec![
                Tactic::rewrite(2, Law::RightId),
                Tactic::rewrite(1, Law::LeftId),
                Tactic::Reflexivity
            ]
        );
        let mut sess = ProofSession::start(s, t, "x").unwrap();
        for tac in proof {
            sess.apply_current(tac).unwrap();
        }
        assert!(sess.is_complete());
    }

    #[test]
    fn unprovable_goal() {
        let mut s = toy_store();
        let g = parse(&mut s, "(app eq (app f (v b) (c e)) (v b))");
        assert!(!provable(&mut s, g));
        assert!(matches!(oracle_from_goal(&mut s, g), Err(DomainError::NoProof(_))));
    }

    #[test]
    fn tiny_dataset() {
        let spec = DatasetSpec {
            n_train: 1,
            n_test: 1,
            length: 2,
            seed: 5,
        };
        let mut s = toy_store();
        let (train, test) = gen_dataset(&mut s, &spec).unwrap();
        let mut got = vec![s.print_sexpr(train[0].expr), s.print_sexpr(test[0].expr)];
        got.sort();
        assert_eq!(got, ["(app f (c e) (v b))", "(app f (v b) (c m))"]);
        let too_many = DatasetSpec { n_train: 2, ..spec };
        assert!(matches!(gen_dataset(&mut s, &too_many), Err(DomainError::Infeasible { .. })));
    }

    #[test]
    fn dataset_is_reproducible() {
        let spec = DatasetSpec {
            n_train: 20,
            n_test: 5,
            length: 6,
            seed: 11,
        };
        let a = toy_dataset(&spec).unwrap();
        let b = toy_dataset(&spec).unwrap();
        let wa = crate::trace::write_dataset(&a.manifest, &a.records, &a.store);
        let wb = crate::trace::write_dataset(&b.manifest, &b.records, &b.store);
        assert_eq!(wa, wb);
        assert_eq!(a.lemmas().len(), 25);
        // intro + 5 rewrites + reflexivity per theorem
        assert_eq!(a.records.len(), 25 * 7);
    }
}
