use proofgym::autodiff::Graph;
use proofgym::embed::{EmbedConfig, Embedder};
use proofgym::models::argument::{eval_argument, train_argument_model, ArgumentModel};
use proofgym::models::features::{constant_baseline, extract_features, train_linear_baseline, LinearHyper};
use proofgym::models::{evaluate, extract, partition, predict, train_classifier, Hyper, LabeledState, Model, TacticMap, Task};
use proofgym::rewrite::{benchmark_split, toy_dataset, DatasetSpec};
use proofgym::synth::{generic_dataset, GenericSpec};
use proofgym::trace::{split_by_lemma, DatasetFile, DepthBin};

fn small_toy() -> DatasetFile {
    toy_dataset(&DatasetSpec {
        n_train: 60,
        n_test: 10,
        length: 6,
        seed: 1,
    })
    .unwrap()
}

fn tiny_hyper(epochs: usize) -> Hyper {
    Hyper {
        dim: 16,
        max_epochs: epochs,
        ..Hyper::default()
    }
}

#[test]
fn constant_baseline_picks_majority_lowest_on_ties() {
    assert_eq!(constant_baseline(&[2, 1, 2, 1, 0]), Some(1));
    assert_eq!(constant_baseline(&[3, 3, 0]), Some(3));
    assert_eq!(constant_baseline(&[]), None);
}

#[test]
fn linear_baseline_separates_a_threshold() {
    let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 1.0, 0.0, (i % 3) as f64]).collect();
    let labels: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
    let m = train_linear_baseline(&xs, &labels, 2, &LinearHyper::default()).unwrap();
    let correct = xs.iter().zip(&labels).filter(|(x, l)| m.predict(x) == **l).count();
    assert!(correct >= 38, "{correct}/40");
    assert!(train_linear_baseline(&xs, &vec![1; 40], 2, &LinearHyper::default()).is_err());
}

#[test]
fn heuristic_features_are_finite() {
    let mut ds = small_toy();
    let states = extract(&Task::ToyTactic, &ds.records, &mut ds.store).unwrap();
    for s in &states {
        assert!(extract_features(&ds.store, &s.ctx, s.goal).as_vec().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let mut ds = small_toy();
    let states = extract(&Task::ToyTactic, &ds.records, &mut ds.store).unwrap();
    let [train, valid, _] = partition(&states, benchmark_split(&ds).parts()).unwrap();
    let h = tiny_hyper(0);
    let trained = train_classifier(Task::ToyTactic, &ds.store, &train, &valid, &h).unwrap();
    let fresh = Model::new(Task::ToyTactic, &ds.store, &h).unwrap();
    assert_eq!(trained.params, fresh.params);
    assert!(trained.history.is_empty());
}

#[test]
fn predictions_are_distributions_and_deterministic() {
    let mut ds = small_toy();
    let task = Task::PosEval(DepthBin::default());
    let states = extract(&task, &ds.records, &mut ds.store).unwrap();
    let [train, valid, test] = partition(&states, benchmark_split(&ds).parts()).unwrap();
    let m = train_classifier(task, &ds.store, &train, &valid, &tiny_hyper(2)).unwrap();
    for s in test.iter().take(20) {
        let p = predict(&m, &ds.store, s).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|x| *x >= 0.0));
    }
    assert_eq!(evaluate(&m, &ds.store, &test).unwrap(), evaluate(&m, &ds.store, &test).unwrap());
}

#[test]
fn training_is_reproducible_and_round_trips_through_checkpoints() {
    let mut ds = small_toy();
    let states = extract(&Task::ToyTactic, &ds.records, &mut ds.store).unwrap();
    let [train, valid, test] = partition(&states, benchmark_split(&ds).parts()).unwrap();
    let a = train_classifier(Task::ToyTactic, &ds.store, &train, &valid, &tiny_hyper(2)).unwrap();
    let b = train_classifier(Task::ToyTactic, &ds.store, &train, &valid, &tiny_hyper(2)).unwrap();
    assert_eq!(a.params, b.params);
    let back = Model::load(&a.save()).unwrap();
    assert_eq!(back.save(), a.save());
    assert_eq!(evaluate(&back, &ds.store, &test).unwrap(), evaluate(&a, &ds.store, &test).unwrap());
}

#[test]
fn leaky_partitions_are_rejected() {
    let mut ds = small_toy();
    let states = extract(&Task::ToyTactic, &ds.records, &mut ds.store).unwrap();
    let l = vec!["train.0".to_owned()];
    assert!(partition(&states, [&l, &l, &[]]).is_err());
}

#[test]
fn mid_level_embedding_never_reads_implicit_arguments() {
    let map = TacticMap::default();
    let mut ds = generic_dataset(&GenericSpec { n_lemmas: 20, ..GenericSpec::default() }, &map).unwrap();
    let states = extract(&Task::GenericTactic(map.clone()), &ds.records, &mut ds.store).unwrap();
    let h = tiny_hyper(1);
    let m = Model::new(Task::GenericTactic(map), &ds.store, &h).unwrap();
    let reads = |drop_implicit: bool| {
        let mut g = Graph::new(&m.params, true);
        let cfg = EmbedConfig {
            drop_implicit,
            ..EmbedConfig::default()
        };
        let mut em = Embedder::new(&m.embed, &ds.store, cfg);
        for s in &states {
            em.embed_state(&mut g, &s.ctx, s.goal).unwrap();
        }
        em.stats.implicit_reads
    };
    assert!(reads(false) > 0);
    assert_eq!(reads(true), 0);
}

#[test]
fn argument_rule_is_learned() {
    let map = TacticMap::default();
    let mut ds = generic_dataset(&GenericSpec { n_lemmas: 600, ..GenericSpec::default() }, &map).unwrap();
    let split = split_by_lemma(&ds.records, [8, 1, 1], 0).unwrap();
    let states = extract(&Task::Argument, &ds.records, &mut ds.store).unwrap();
    let [train, valid, test] = partition(&states, split.parts()).unwrap();
    let h = Hyper {
        dim: 64,
        max_epochs: 60,
        ..Hyper::default()
    };
    let m = train_argument_model(&ds.store, &train, &valid, &h).unwrap();
    let curve = eval_argument(&m, &ds.store, &test).unwrap();
    let r = curve.recall_at_precision(0.9).unwrap_or(0.0);
    assert!(r >= 0.9, "recall at precision 0.9: {r}");
    let back = ArgumentModel::load(&m.save()).unwrap();
    assert_eq!(eval_argument(&back, &ds.store, &test).unwrap(), curve);
}

#[test]
fn argument_labels_mark_context_entries() {
    let map = TacticMap::default();
    let mut ds = generic_dataset(&GenericSpec { n_lemmas: 30, ..GenericSpec::default() }, &map).unwrap();
    let states: Vec<LabeledState> = extract(&Task::Argument, &ds.records, &mut ds.store).unwrap();
    assert!(!states.is_empty());
    for s in &states {
        assert_eq!(s.args.len(), s.ctx.len());
        assert!(s.args.iter().filter(|a| **a).count() <= 1);
    }
    assert!(states.iter().any(|s| s.args.contains(&true)));
}
