mod common;

use std::time::Instant;

use common::*;
use proofgym::autodiff::{Exec, Graph};
use proofgym::embed::{CellKind, EmbedConfig, Embedder};
use proofgym::term::TermStore;
use proptest::prelude::*;

#[test]
fn every_op_matches_finite_differences() {
    let (ps, cases) = op_cases();
    for (name, build) in &cases {
        let err = fd_check(&ps, build.as_ref());
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn state_loss_matches_finite_differences() {
    for cell in [CellKind::Tanh, CellKind::Gru, CellKind::TreeLstm] {
        let mut store = toy();
        let (ctx, goal) = toy_state(&mut store);
        let (ps, ep, hw, hb) = small_model(&store, cell, 4, 3);
        assert!(ps.size() <= 500, "{} params", ps.size());
        // dropout masks are fixed by the seed, so the loss is deterministic
        let cfg = training_config(0.25);
        let build = |g: &mut Graph| state_loss(g, &ep, &store, cfg, hw, hb, &ctx, goal, 1);
        let err = fd_check(&ps, &build);
        assert!(err < 1e-4, "{}: relative error {err:e}", cell.as_str());
    }
}

fn embed_value(store: &TermStore, cell: CellKind, share: bool, exec: Exec, seed: u64) -> Vec<f64> {
    let (ps, ep, _, _) = small_model(store, cell, 8, 2);
    let mut s = store.clone();
    let (ctx, goal) = toy_state(&mut s);
    let mut g = Graph::new(&ps, share);
    let cfg = EmbedConfig {
        pass_seed: seed,
        ..EmbedConfig::default()
    };
    let mut em = Embedder::new(&ep, &s, cfg);
    let st = em.embed_state(&mut g, &ctx, goal).unwrap();
    g.forward(&ps, exec).unwrap().value(st.h).to_vec()
}

#[test]
fn memoized_forward_is_bitwise_naive() {
    let mut store = toy();
    toy_state(&mut store);
    for cell in [CellKind::Tanh, CellKind::Gru, CellKind::TreeLstm] {
        let a = embed_value(&store, cell, true, Exec::Naive, 5);
        let b = embed_value(&store, cell, false, Exec::Naive, 5);
        assert_eq!(a, b, "{}", cell.as_str());
    }
}

#[test]
fn batch_of_32_states_agrees_across_execution_modes() {
    let ds = proofgym::rewrite::toy_dataset(&proofgym::rewrite::DatasetSpec {
        n_train: 8,
        n_test: 2,
        length: 6,
        seed: 3,
    })
    .unwrap();
    let mut store = ds.store.clone();
    let states: Vec<_> = ds.records.iter().take(32).map(|r| (r.ctx.clone(), r.goal)).collect();
    let states: Vec<_> = states
        .into_iter()
        .map(|(ctx, g)| (ctx.into_iter().map(|(n, t)| (store.name(&n), t)).collect::<Vec<_>>(), g))
        .collect();
    assert_eq!(states.len(), 32);
    let (ps, ep, hw, hb) = small_model(&store, CellKind::Gru, 16, 3);
    let mut g = Graph::new(&ps, true);
    let losses: Vec<_> = states
        .iter()
        .enumerate()
        .map(|(i, (ctx, goal))| state_loss(&mut g, &ep, &store, training_config(0.1), hw, hb, ctx, *goal, i % 3))
        .collect();
    let total = g.sum_n(&losses);
    let naive = g.forward(&ps, Exec::Naive).unwrap();
    let batched = g.forward(&ps, Exec::Batched).unwrap();
    for l in losses.iter().chain([&total]) {
        assert!((naive.scalar(*l) - batched.scalar(*l)).abs() <= 1e-9);
    }
    let gn = naive.backward(total, Exec::Naive).unwrap();
    let gb = batched.backward(total, Exec::Batched).unwrap();
    assert!(gn.max_abs_diff(&gb) <= 1e-7);
    // batching actually merged work
    assert!(g.buckets().iter().any(|(_, _, _, n)| *n >= 32));
}

#[test]
fn bound_variables_are_alpha_invariant() {
    let mut store = toy();
    let x = store.parse_sexpr("(prod x (c G) (v x))").unwrap();
    let y = store.parse_sexpr("(prod y (c G) (v y))").unwrap();
    assert_ne!(x, y);
    let (ps, ep, _, _) = small_model(&store, CellKind::Gru, 8, 2);
    let run = |seed: u64, t| {
        let mut g = Graph::new(&ps, true);
        let cfg = EmbedConfig {
            pass_seed: seed,
            ..EmbedConfig::default()
        };
        let mut em = Embedder::new(&ep, &store, cfg);
        let e = em.embed_term(&mut g, t, &mut Default::default()).unwrap();
        g.forward(&ps, Exec::Naive).unwrap().value(e.h).to_vec()
    };
    assert_eq!(run(1, x), run(1, y));
    assert_ne!(run(1, x), run(2, x));
}

#[test]
fn duplicated_state_speedup() {
    let mut store = toy();
    let (ctx, goal) = duplicated_state(&mut store, 8);
    let expanded: usize = store.tree_size(goal) + ctx.iter().map(|(_, t)| store.tree_size(*t)).sum::<usize>();
    let distinct = dag_size(&store, goal);
    assert!(expanded >= 2000);
    assert!(store.tree_size(goal) >= 4 * distinct);
    let (ps, ep, hw, hb) = small_model(&store, CellKind::Gru, 32, 4);
    let time = |share: bool, exec: Exec| {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let t = Instant::now();
            let mut g = Graph::new(&ps, share);
            let l = state_loss(&mut g, &ep, &store, training_config(0.0), hw, hb, &ctx, goal, 0);
            let ev = g.forward(&ps, exec).unwrap();
            ev.backward(l, exec).unwrap();
            best = best.min(t.elapsed().as_secs_f64());
        }
        best
    };
    let slow = time(false, Exec::Naive);
    let fast = time(true, Exec::Batched);
    assert!(slow >= 2.0 * fast, "naive {slow:.4}s, shared+batched {fast:.4}s");
}

fn random_term(store: &mut TermStore, seed: &[u8]) -> proofgym::term::TermId {
    // preorder construction from a byte string: 0..2 leaves, 3 operator
    fn go(store: &mut TermStore, bytes: &mut std::slice::Iter<u8>, depth: usize) -> proofgym::term::TermId {
        let b = bytes.next().copied().unwrap_or(0);
        if depth > 6 || b % 4 != 3 {
            return match b % 3 {
                0 => store.var("b"),
                1 => store.constant("e").unwrap(),
                _ => store.constant("m").unwrap(),
            };
        }
        let l = go(store, bytes, depth + 1);
        let r = go(store, bytes, depth + 1);
        store.app_sym("f", &[l, r]).unwrap()
    }
    go(store, &mut seed.iter(), 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn memo_equals_naive_on_random_terms(bytes in proptest::collection::vec(any::<u8>(), 1..40), seed in any::<u64>()) {
        let mut store = toy();
        let t = random_term(&mut store, &bytes);
        let b = store.var("b");
        let goal = store.app_sym("eq", &[t, b]).unwrap();
        let g_ty = store.parse_sexpr("(c G)").unwrap();
        let ctx = vec![(store.name("b"), g_ty)];
        let (ps, ep, _, _) = small_model(&store, CellKind::Gru, 6, 2);
        let run = |share: bool, exec: Exec| {
            let mut g = Graph::new(&ps, share);
            let cfg = EmbedConfig { pass_seed: seed, ..EmbedConfig::default() };
            let mut em = Embedder::new(&ep, &store, cfg);
            let st = em.embed_state(&mut g, &ctx, goal).unwrap();
            g.forward(&ps, exec).unwrap().value(st.h).to_vec()
        };
        let memo = run(true, Exec::Naive);
        prop_assert_eq!(&memo, &run(false, Exec::Naive));
        let batched = run(true, Exec::Batched);
        for (a, b) in memo.iter().zip(&batched) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }
}
