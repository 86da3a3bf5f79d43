#![allow(dead_code)]

use std::collections::HashSet;

use proofgym::autodiff::{Exec, Graph, NodeId, ParamId, ParamStore, Tensor};
use proofgym::embed::{mix, store_symbols, CellKind, EmbedConfig, EmbedParams, Embedder};
use proofgym::proof::toy_store;
use proofgym::term::{Name, TermId, TermStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a tiny floor so that two vanishing gradients agree.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest relative error between reverse-mode gradients (both execution
/// modes) and central differences of the scalar built by `build`.
pub fn fd_check(params: &ParamStore, build: &dyn Fn(&mut Graph) -> NodeId) -> f64 {
    let mut worst: f64 = 0.0;
    for exec in [Exec::Naive, Exec::Batched] {
        let mut g = Graph::new(params, true);
        let loss = build(&mut g);
        let ev = g.forward(params, exec).unwrap();
        let grads = ev.backward(loss, exec).unwrap();
        for p in params.ids() {
            for i in 0..params.get(p).len() {
                let mut ps = params.clone();
                let at = |ps: &mut ParamStore, v: f64| {
                    ps.get_mut(p).values[i] = v;
                    let mut g = Graph::new(ps, true);
                    let l = build(&mut g);
                    g.forward(ps, Exec::Naive).unwrap().scalar(l)
                };
                let x = params.get(p).values[i];
                let up = at(&mut ps, x + FD_STEP);
                let down = at(&mut ps, x - FD_STEP);
                let numeric = (up - down) / (2.0 * FD_STEP);
                worst = worst.max(rel_err(grads.get(p)[i], numeric));
            }
        }
    }
    worst
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Tensor {
    Tensor::from_values(shape, (0..shape.0 * shape.1).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Fixed weights for reducing a vector to a scalar, so that every element
/// gets its own gradient.
fn probe(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * 0.731).sin()).collect()
}

fn reduce(g: &mut Graph, x: NodeId) -> NodeId {
    let n = g.shape(x).0 * g.shape(x).1;
    let p = g.input(probe(n));
    let m = g.mul(x, p);
    g.sum(m)
}

type Build = Box<dyn Fn(&mut Graph) -> NodeId>;

/// One small graph per op kind, each reduced to a scalar.
pub fn op_cases() -> (ParamStore, Vec<(&'static str, Build)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParamStore::new();
    let a = ps.add("a", random_tensor(&mut rng, (4, 1))).unwrap();
    let b = ps.add("b", random_tensor(&mut rng, (4, 1))).unwrap();
    let w = ps.add("w", random_tensor(&mut rng, (3, 4))).unwrap();
    let t = ps.add("t", random_tensor(&mut rng, (5, 4))).unwrap();
    let cases: Vec<(&'static str, Build)> = vec![
        ("param", Box::new(move |g| {
            let x = g.param(a);
            reduce(g, x)
        })),
        ("input", Box::new(move |g| {
            let x = g.param(a);
            let c = g.input(vec![0.5, -1.0, 2.0, 0.25]);
            let y = g.add(x, c);
            let y = g.mul(y, y);
            reduce(g, y)
        })),
        ("row", Box::new(move |g| {
            let r = g.row(t, 3);
            let s = g.row(t, 1);
            let y = g.mul(r, s);
            reduce(g, y)
        })),
        ("matvec", Box::new(move |g| {
            let m = g.param(w);
            let x = g.param(a);
            let y = g.matvec(m, x);
            reduce(g, y)
        })),
        ("add", Box::new(move |g| {
            let (x, y) = (g.param(a), g.param(b));
            let z = g.add(x, y);
            let z = g.mul(z, z);
            reduce(g, z)
        })),
        ("sub", Box::new(move |g| {
            let (x, y) = (g.param(a), g.param(b));
            let z = g.sub(x, y);
            let z = g.mul(z, z);
            reduce(g, z)
        })),
        ("mul", Box::new(move |g| {
            let (x, y) = (g.param(a), g.param(b));
            let z = g.mul(x, y);
            reduce(g, z)
        })),
        ("tanh", Box::new(move |g| {
            let x = g.param(a);
            let z = g.tanh(x);
            reduce(g, z)
        })),
        ("sigmoid", Box::new(move |g| {
            let x = g.param(b);
            let z = g.sigmoid(x);
            reduce(g, z)
        })),
        ("scale", Box::new(move |g| {
            let x = g.param(a);
            let z = g.scale(x, -2.5);
            let z = g.tanh(z);
            reduce(g, z)
        })),
        ("concat", Box::new(move |g| {
            let (x, y) = (g.param(a), g.param(b));
            let z = g.concat(&[x, y]);
            let z = g.tanh(z);
            reduce(g, z)
        })),
        ("sum_n", Box::new(move |g| {
            let (x, y) = (g.param(a), g.param(b));
            let r = g.row(t, 0);
            let z = g.sum_n(&[x, y, r, x]);
            let z = g.mul(z, z);
            reduce(g, z)
        })),
        ("sum", Box::new(move |g| {
            let x = g.param(a);
            let z = g.tanh(x);
            g.sum(z)
        })),
        ("dropout", Box::new(move |g| {
            let x = g.param(a);
            let z = g.dropout(x, vec![0.0, 1.25, 1.25, 0.0]);
            let z = g.mul(z, z);
            reduce(g, z)
        })),
        ("softmax_ce", Box::new(move |g| {
            let m = g.param(w);
            let x = g.param(b);
            let z = g.matvec(m, x);
            g.softmax_ce(z, 2, 1.7)
        })),
    ];
    (ps, cases)
}

/// A two-entry proof state in the toy signature.
pub fn toy_state(store: &mut TermStore) -> (Vec<(Name, TermId)>, TermId) {
    let g = store.parse_sexpr("(c G)").unwrap();
    let hb = store.parse_sexpr("(app eq (v b) (app f (v b) (c m)))").unwrap();
    let goal = store
        .parse_sexpr("(app eq (app f (app f (c e) (v b)) (app f (v b) (c m))) (v b))")
        .unwrap();
    let (b, h) = (store.name("b"), store.name("h"));
    (vec![(b, g), (h, hb)], goal)
}

/// Parameters of a small model over the toy signature: embedding plus a
/// linear head of `classes` rows.
pub fn small_model(store: &TermStore, cell: CellKind, dim: usize, classes: usize) -> (ParamStore, EmbedParams, ParamId, ParamId) {
    let mut ps = ParamStore::new();
    let ep = EmbedParams::new(&mut ps, "emb", dim, cell, &store_symbols(store), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hw = ps.add("head.w", random_tensor(&mut rng, (classes, dim))).unwrap();
    let hb = ps.add("head.b", random_tensor(&mut rng, (classes, 1))).unwrap();
    (ps, ep, hw, hb)
}

/// Cross-entropy of a state through embedding and head, built in `g`.
#[allow(clippy::too_many_arguments)]
pub fn state_loss(
    g: &mut Graph,
    ep: &EmbedParams,
    store: &TermStore,
    cfg: EmbedConfig,
    hw: ParamId,
    hb: ParamId,
    ctx: &[(Name, TermId)],
    goal: TermId,
    target: usize,
) -> NodeId {
    let mut em = Embedder::new(ep, store, cfg);
    let st = em.embed_state(g, ctx, goal).unwrap();
    let w = g.param(hw);
    let b = g.param(hb);
    let z = g.matvec(w, st.h);
    let z = g.add(z, b);
    g.softmax_ce(z, target, 1.0)
}

pub fn training_config(dropout: f64) -> EmbedConfig {
    EmbedConfig {
        drop_implicit: false,
        pass_seed: 77,
        dropout,
        dropout_seed: mix(77, 4),
    }
}

/// Number of distinct subterms reachable from `t`.
pub fn dag_size(store: &TermStore, t: TermId) -> usize {
    let mut seen = HashSet::new();
    let mut stack = vec![t];
    while let Some(x) = stack.pop() {
        if seen.insert(x) {
            stack.extend(store.children(x));
        }
    }
    seen.len()
}

/// A state whose goal repeats subterms heavily: `s_{k+1} = s_k + s_k` over a
/// few small seeds, with hypotheses mentioning the same subterms.
pub fn duplicated_state(store: &mut TermStore, doublings: usize) -> (Vec<(Name, TermId)>, TermId) {
    let mut a = store.parse_sexpr("(app f (v b) (app f (c e) (c m)))").unwrap();
    let mut c = store.parse_sexpr("(app f (c e) (v b))").unwrap();
    let mut pieces = Vec::new();
    for _ in 0..doublings {
        let next_a = store.app_sym("f", &[a, c]).unwrap();
        let next_c = store.app_sym("f", &[c, a]).unwrap();
        pieces.push(next_a);
        a = store.app_sym("f", &[next_a, next_a]).unwrap();
        c = next_c;
    }
    let b = store.var("b");
    let goal = store.app_sym("eq", &[a, b]).unwrap();
    let g = store.parse_sexpr("(c G)").unwrap();
    let mut ctx = vec![(store.name("b"), g)];
    for (i, p) in pieces.iter().enumerate().rev().take(3) {
        let h = store.app_sym("eq", &[*p, b]).unwrap();
        ctx.push((store.name(&format!("h{i}")), h));
    }
    (ctx, goal)
}

pub fn toy() -> TermStore {
    toy_store()
}
