//! Synthetic traces in the generic format, for exercising the generic
//! tactic and argument tasks without a real corpus.
//!
//! Each lemma is a chain of states. A state's goal is headed by a predicate
//! tied to the tactic class applied to it (up to `head_noise`), carries an
//! implicit type argument, and, when the tactic takes a local argument, the
//! argument is the context entry whose type equals the goal's first explicit
//! argument. States whose tactic takes no argument have no such entry.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::TacticMap;
use crate::proof::ArgDescriptor;
use crate::term::{Arg, TermError, TermId, TermStore};
use crate::trace::{DatasetFile, Manifest, TacticRecord, TraceRecord};

/// Classes whose tactics name one hypothesis.
pub const ARG_CLASSES: &[&str] = &["apply", "exact", "rewrite", "elim", "case", "have", "congr", "clear", "induction"];
/// Classes that close a goal.
pub const CLOSING_CLASSES: &[&str] = &["reflexivity", "assumption", "exact"];
/// Classes that add a hypothesis.
const INTRO_CLASSES: &[&str] = &["intro", "move", "have", "pose", "suff"];

const TYPES: usize = 4;
const ATOMS: usize = 6;

#[derive(Clone, Debug)]
pub struct GenericSpec {
    pub n_lemmas: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Probability that a goal's head is unrelated to its tactic.
    pub head_noise: f64,
    /// Largest depth of generated argument terms.
    pub term_depth: usize,
    pub seed: u64,
}

impl Default for GenericSpec {
    fn default() -> Self {
        GenericSpec {
            n_lemmas: 200,
            min_steps: 3,
            max_steps: 8,
            head_noise: 0.2,
            term_depth: 2,
            seed: 0,
        }
    }
}

fn pred(class: &str) -> String {
    format!("P_{class}")
}

/// Term store with the generator's signature.
pub fn generic_store(map: &TacticMap) -> TermStore {
    let mut s = TermStore::new();
    for i in 0..TYPES {
        s.declare(&format!("T{i}"), Some(0));
    }
    for i in 0..ATOMS {
        s.declare(&format!("a{i}"), Some(0));
    }
    // type, then two operands
    s.declare("g", Some(3));
    s.declare("k", Some(2));
    for c in &map.classes {
        s.declare(&pred(c), Some(3));
    }
    s
}

struct Gen<'a> {
    store: &'a mut TermStore,
    rng: ChaCha8Rng,
    depth: usize,
}

impl Gen<'_> {
    fn ty(&mut self) -> Result<TermId, TermError> {
        let i = self.rng.random_range(0..TYPES);
        self.store.constant(&format!("T{i}"))
    }

    fn term(&mut self, depth: usize) -> Result<TermId, TermError> {
        if depth == 0 || self.rng.random_bool(0.4) {
            let i = self.rng.random_range(0..ATOMS);
            return self.store.constant(&format!("a{i}"));
        }
        if self.rng.random_bool(0.3) {
            let x = self.term(depth - 1)?;
            let head = self.store.constant("k")?;
            let ty = self.ty()?;
            return self.store.app(head, vec![Arg::implicit(ty), Arg::explicit(x)]);
        }
        let ty = self.ty()?;
        let x = self.term(depth - 1)?;
        let y = self.term(depth - 1)?;
        let head = self.store.constant("g")?;
        self.store.app(head, vec![Arg::implicit(ty), Arg::explicit(x), Arg::explicit(y)])
    }

    /// A type not already in `ctx`, so the argument entry is unique.
    fn fresh_hypothesis(&mut self, ctx: &[(String, TermId)]) -> Result<TermId, TermError> {
        let mut depth = self.depth;
        loop {
            let t = self.term(depth)?;
            if ctx.iter().all(|(_, ty)| *ty != t) {
                return Ok(t);
            }
            depth += 1;
        }
    }

    fn goal(&mut self, head: &str, first: TermId) -> Result<TermId, TermError> {
        let ty = self.ty()?;
        let second = self.term(self.depth)?;
        let h = self.store.constant(&pred(head))?;
        self.store.app(h, vec![Arg::implicit(ty), Arg::explicit(first), Arg::explicit(second)])
    }
}

/// Generates `spec.n_lemmas` lemmas named `lemma.<i>`.
pub fn generic_dataset(spec: &GenericSpec, map: &TacticMap) -> Result<DatasetFile, TermError> {
    let mut store = generic_store(map);
    let mut raws: Vec<Vec<&str>> = vec![Vec::new(); map.classes.len()];
    for (r, c) in &map.raw {
        raws[*c].push(r.as_str());
    }
    let in_map = |names: &[&str]| -> Vec<usize> { names.iter().filter_map(|n| map.classes.iter().position(|c| c == n)).collect() };
    let closing = in_map(CLOSING_CLASSES);
    let takes_arg = in_map(ARG_CLASSES);
    let intro = in_map(INTRO_CLASSES);
    let open: Vec<usize> = (0..map.classes.len()).filter(|c| !closing.contains(c) || takes_arg.contains(c)).collect();
    let mut g = Gen {
        store: &mut store,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        depth: spec.term_depth,
    };
    let mut records = Vec::new();
    for li in 0..spec.n_lemmas {
        let lemma = format!("lemma.{li}");
        let steps = g.rng.random_range(spec.min_steps.max(1)..=spec.max_steps.max(spec.min_steps.max(1)));
        let mut ctx: Vec<(String, TermId)> = Vec::new();
        for _ in 0..g.rng.random_range(0..3) {
            let t = g.fresh_hypothesis(&ctx)?;
            ctx.push((format!("h{}", ctx.len()), t));
        }
        for step in 0..steps {
            let last = step + 1 == steps;
            let class = if last {
                *closing.choose(&mut g.rng).unwrap_or(&0)
            } else {
                *open.choose(&mut g.rng).unwrap_or(&0)
            };
            let class_name = map.classes[class].clone();
            let head = if g.rng.random_bool(spec.head_noise) {
                map.classes.choose(&mut g.rng).cloned().unwrap_or_default()
            } else {
                class_name.clone()
            };
            let with_arg = takes_arg.contains(&class);
            if with_arg && ctx.is_empty() {
                let t = g.fresh_hypothesis(&ctx)?;
                ctx.push(("h0".into(), t));
            }
            let (first, args) = if with_arg {
                let i = g.rng.random_range(0..ctx.len());
                (ctx[i].1, vec![ArgDescriptor::Local(ctx[i].0.clone())])
            } else {
                (g.fresh_hypothesis(&ctx)?, Vec::new())
            };
            let goal = g.goal(&head, first)?;
            let raw = raws[class].choose(&mut g.rng).copied().unwrap_or(class_name.as_str()).to_owned();
            let id = step as u64;
            records.push(TraceRecord {
                lemma: lemma.clone(),
                state_id: id,
                parent_id: id.checked_sub(1),
                ctx: ctx.clone(),
                goal,
                tactic: TacticRecord {
                    class: class_name,
                    raw,
                    pos: None,
                    args,
                },
                children: if last { Vec::new() } else { vec![id + 1] },
            });
            if intro.contains(&class) {
                let t = g.fresh_hypothesis(&ctx)?;
                ctx.push((format!("h{}", ctx.len()), t));
            }
        }
    }
    let manifest = Manifest::new("generic")
        .with("n_lemmas", spec.n_lemmas)
        .with("head_noise", spec.head_noise)
        .with("seed", spec.seed);
    Ok(DatasetFile {
        manifest,
        store,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{extract, Task};

    #[test]
    fn argument_rule_holds() {
        let map = TacticMap::default();
        let mut ds = generic_dataset(&GenericSpec { n_lemmas: 30, ..GenericSpec::default() }, &map).unwrap();
        let eq_first = |s: &TermStore, goal: TermId, ty: TermId| match s.get(goal) {
            crate::term::Term::App { args, .. } => args.iter().find(|a| !a.implicit).map(|a| a.term) == Some(ty),
            _ => false,
        };
        for r in &ds.records {
            let hits: Vec<bool> = r.ctx.iter().map(|(_, t)| eq_first(&ds.store, r.goal, *t)).collect();
            let named: Vec<bool> = r
                .ctx
                .iter()
                .map(|(n, _)| r.tactic.args.contains(&ArgDescriptor::Local(n.clone())))
                .collect();
            if r.tactic.args.is_empty() {
                assert!(!hits.iter().any(|h| *h));
            } else {
                assert_eq!(named, hits);
            }
        }
        let st = extract(&Task::GenericTactic(map), &ds.records, &mut ds.store).unwrap();
        assert_eq!(st.len(), ds.records.len());
    }

    #[test]
    fn traces_form_valid_trees() {
        let ds = generic_dataset(&GenericSpec { n_lemmas: 10, ..GenericSpec::default() }, &TacticMap::default()).unwrap();
        let mut store = ds.store.clone();
        for (_, recs) in crate::trace::by_lemma(&ds.records) {
            let tree = crate::trace::tree_from_records(&recs, &mut store).unwrap();
            tree.validate().unwrap();
        }
    }
}
