use std::fs;
use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use proofgym::agent::{run_benchmark, synthesize_greedy, synthesize_with_fallback, theorems_of, ModelPolicy, Policy};
use proofgym::embed::CellKind;
use proofgym::models::features::{constant_baseline, extract_features, train_linear_baseline, LinearHyper};
use proofgym::models::{
    eval_argument, evaluate, extract, partition, toy_decode, train_argument_model, train_classifier, ArgumentModel, Hyper,
    LabeledState, Model, TacticMap, Task,
};
use proofgym::autodiff::ParamStore;
use proofgym::proof::{toy_store, ProofState, StateId};
use proofgym::protocol::{serve_protocol, Reply, Server};
use proofgym::rewrite::{benchmark_split, toy_dataset, DatasetSpec};
use proofgym::synth::{generic_dataset, GenericSpec};
use proofgym::trace::{histograms, split_by_lemma, DatasetFile, DepthBin, Split};

#[derive(Parser)]
#[command(name = "proofgym", version, about = "Rewrite-proof benchmark, trace tools and proof-state models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Toy,
    Generic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Pos,
    Tac,
    Arg,
    Generic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Level {
    Kernel,
    Mid,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset
    Gen {
        #[arg(long, value_enum, default_value = "toy")]
        kind: Kind,
        #[arg(long, default_value_t = 400)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
        #[arg(long, default_value_t = 10)]
        length: usize,
        /// Lemma count for generic datasets
        #[arg(long, default_value_t = 200)]
        lemmas: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// AST-node and tactic histograms
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Lemma-level train/valid/test split
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "8:1:1")]
        ratio: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "tac")]
        task: TaskArg,
        #[arg(long, value_enum, default_value = "kernel")]
        level: Level,
        #[arg(long, default_value = "gru")]
        cell: String,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Input dropout and weight dropout rate (defaults per cell)
        #[arg(long)]
        dropout: Option<f64>,
        /// Split file from `split`; defaults to the dataset's natural split
        #[arg(long)]
        split: Option<PathBuf>,
        /// Tactic equivalence map for the generic task
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Precision-recall CSV for argument models
        #[arg(long)]
        pr: Option<PathBuf>,
    },
    /// Prove one theorem with a toy tactic model
    Prove {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        theorem: String,
        #[arg(long)]
        fallback: bool,
        #[arg(long)]
        interactive: bool,
    },
    /// Strict and fallback synthesis over the test theorems
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Line protocol on stdin/stdout
    Serve,
}

fn read_dataset(path: &Path) -> Result<DatasetFile> {
    DatasetFile::read(path).with_context(|| format!("reading {}", path.display()))
}

fn parse_ratio(s: &str) -> Result<[u32; 3]> {
    let parts: Vec<u32> = s.split(':').map(|p| p.trim().parse()).collect::<Result<_, _>>().context("ratio")?;
    match parts.as_slice() {
        [a, b, c] if a + b + c > 0 => Ok([*a, *b, *c]),
        _ => bail!("ratio must look like 8:1:1"),
    }
}

fn split_json(s: &Split) -> serde_json::Value {
    json!({
        "train": s.train,
        "valid": s.valid,
        "test": s.test,
        "counts": s.counts,
        "shares": s.shares(),
    })
}

fn load_split(ds: &DatasetFile, path: Option<&Path>) -> Result<Split> {
    if let Some(p) = path {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p)?).context("split file")?;
        let list = |k: &str| -> Result<Vec<String>> {
            serde_json::from_value(v.get(k).cloned().unwrap_or_default()).with_context(|| format!("split file: `{k}`"))
        };
        let mut s = Split {
            train: list("train")?,
            valid: list("valid")?,
            test: list("test")?,
            counts: [0; 3],
        };
        for r in &ds.records {
            if let Some(i) = s.which(&r.lemma) {
                s.counts[i] += 1;
            }
        }
        return Ok(s);
    }
    if ds.manifest.kind == "toy" {
        Ok(benchmark_split(ds))
    } else {
        Ok(split_by_lemma(&ds.records, [8, 1, 1], 0)?)
    }
}

/// Reads the task name stored in a checkpoint.
fn checkpoint_task(text: &str) -> Result<String> {
    let (_, meta) = ParamStore::load(text)?;
    meta.get("task").cloned().context("checkpoint has no task")
}

fn accuracy_of(pred: impl Fn(&LabeledState) -> usize, states: &[&LabeledState]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    states.iter().filter(|s| pred(s) == s.label).count() as f64 / states.len() as f64
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Gen {
            kind,
            train,
            test,
            length,
            lemmas,
            seed,
            out,
        } => {
            let ds = match kind {
                Kind::Toy => toy_dataset(&DatasetSpec {
                    n_train: train,
                    n_test: test,
                    length,
                    seed,
                })?,
                Kind::Generic => generic_dataset(
                    &GenericSpec {
                        n_lemmas: lemmas,
                        seed,
                        ..GenericSpec::default()
                    },
                    &TacticMap::default(),
                )?,
            };
            ds.write(&out)?;
            println!("wrote {} records of {} lemmas to {}", ds.records.len(), ds.lemmas().len(), out.display());
        }
        Cmd::Stats { input } => {
            let ds = read_dataset(&input)?;
            println!("# lemmas {} records {} terms {}", ds.lemmas().len(), ds.records.len(), ds.store.len());
            print!("{}", histograms(&ds.records, &ds.store).render());
        }
        Cmd::Split { input, ratio, seed, out } => {
            let ds = read_dataset(&input)?;
            let s = split_by_lemma(&ds.records, parse_ratio(&ratio)?, seed)?;
            let text = serde_json::to_string_pretty(&split_json(&s))?;
            match out {
                Some(p) => fs::write(&p, text + "\n")?,
                None => println!("{text}"),
            }
        }
        Cmd::Train {
            input,
            task,
            level,
            cell,
            dim,
            batch,
            lr,
            seed,
            epochs,
            dropout,
            split,
            map,
            quiet,
            out,
        } => {
            let mut ds = read_dataset(&input)?;
            let cell = CellKind::parse(&cell)?;
            let hyper = Hyper {
                dim,
                cell,
                batch,
                lr,
                max_epochs: epochs,
                dropout: dropout.unwrap_or(cell.default_dropout()),
                drop_implicit: level == Level::Mid,
                seed,
                verbose: !quiet,
                ..Hyper::default()
            };
            let task = match task {
                TaskArg::Pos => Task::PosEval(DepthBin::default()),
                TaskArg::Tac => Task::ToyTactic,
                TaskArg::Arg => Task::Argument,
                TaskArg::Generic => Task::GenericTactic(match map {
                    Some(p) => TacticMap::parse(&fs::read_to_string(p)?)?,
                    None => TacticMap::default(),
                }),
            };
            let sp = load_split(&ds, split.as_deref())?;
            let states = extract(&task, &ds.records, &mut ds.store)?;
            let [train, valid, test] = partition(&states, sp.parts())?;
            let report = if task == Task::Argument {
                let m = train_argument_model(&ds.store, &train, &valid, &hyper)?;
                fs::write(&out, m.save())?;
                let curve = eval_argument(&m, &ds.store, &test)?;
                json!({"task": "arg", "test_recall_at_p0.1": curve.recall_at_precision(0.1)})
            } else {
                let m = train_classifier(task, &ds.store, &train, &valid, &hyper)?;
                fs::write(&out, m.save())?;
                let metrics = evaluate(&m, &ds.store, &test)?;
                json!({"task": m.task.name(), "epochs": m.history.len(), "test_accuracy": metrics.accuracy})
            };
            println!("{report}");
        }
        Cmd::Eval { ckpt, input, split, pr } => {
            let text = fs::read_to_string(&ckpt)?;
            let mut ds = read_dataset(&input)?;
            let sp = load_split(&ds, split.as_deref())?;
            if checkpoint_task(&text)? == "arg" {
                let m = ArgumentModel::load(&text)?;
                let states = extract(&Task::Argument, &ds.records, &mut ds.store)?;
                let [_, _, test] = partition(&states, sp.parts())?;
                let curve = eval_argument(&m, &ds.store, &test)?;
                if let Some(p) = pr {
                    fs::write(p, curve.to_csv())?;
                }
                println!(
                    "{}",
                    json!({
                        "task": "arg",
                        "n": test.len(),
                        "positives": curve.positives,
                        "entries": curve.total,
                        "recall_at_p0.1": curve.recall_at_precision(0.1),
                        "average_precision": curve.average_precision(),
                    })
                );
            } else {
                let m = Model::load(&text)?;
                let states = extract(&m.task, &ds.records, &mut ds.store)?;
                let [train, _, test] = partition(&states, sp.parts())?;
                let metrics = evaluate(&m, &ds.store, &test)?;
                let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
                let constant = constant_baseline(&labels).map(|c| accuracy_of(|_| c, &test));
                let feats = |s: &LabeledState| extract_features(&ds.store, &s.ctx, s.goal).as_vec().to_vec();
                let xs: Vec<Vec<f64>> = train.iter().map(|s| feats(s)).collect();
                let linear = train_linear_baseline(&xs, &labels, m.task.classes(), &LinearHyper::default())
                    .ok()
                    .map(|lm| accuracy_of(|s| lm.predict(&feats(s)), &test));
                let mut v = serde_json::to_value(&metrics)?;
                v["task"] = json!(m.task.name());
                v["classes"] = json!(m.task.class_names());
                v["constant_baseline"] = json!(constant);
                v["linear_baseline"] = json!(linear);
                println!("{v}");
            }
        }
        Cmd::Prove {
            ckpt,
            theorem,
            fallback,
            interactive,
        } => {
            let m = Model::load(&fs::read_to_string(&ckpt)?)?;
            let mut policy = ModelPolicy::new(&m)?;
            if interactive {
                return repl(&mut policy, &theorem);
            }
            let mut store = toy_store();
            let t = store.parse_sexpr(&theorem)?;
            let r = if fallback {
                synthesize_with_fallback(&mut policy, &store, t, "theorem")?
            } else {
                synthesize_greedy(&mut policy, &store, t, "theorem")?
            };
            for s in &r.steps {
                let note = match (s.accepted, s.fallback) {
                    (true, true) => "fallback",
                    (true, false) => "ok",
                    (false, _) => "rejected",
                };
                println!("state {}: {} [{note}]", s.state, s.tactic);
            }
            println!(
                "{:?} rewrites={} fallback_uses={} rejections={}",
                r.outcome,
                r.rewrites(),
                r.fallback_uses,
                r.rejections
            );
            if !r.completed() {
                std::process::exit(1);
            }
        }
        Cmd::Bench {
            ckpt,
            input,
            split,
            report,
        } => {
            let m = Model::load(&fs::read_to_string(&ckpt)?)?;
            let mut ds = read_dataset(&input)?;
            let sp = load_split(&ds, split.as_deref())?;
            let states = extract(&Task::ToyTactic, &ds.records, &mut ds.store)?;
            let [_, _, test] = partition(&states, sp.parts())?;
            let theorems = theorems_of(&ds.records, &sp.test);
            let rep = run_benchmark(&mut ModelPolicy::new(&m)?, &ds.store, &theorems, &test)?;
            fs::write(&report, serde_json::to_string_pretty(&rep)? + "\n")?;
            println!(
                "{}",
                json!({
                    "n": rep.n,
                    "tactic_accuracy": rep.tactic_accuracy,
                    "strict_completed": rep.strict_completed,
                    "fallback_completed": rep.fallback_completed,
                    "mean_fallback_uses": rep.mean_fallback_uses,
                    "mean_rejections": rep.mean_rejections,
                })
            );
        }
        Cmd::Serve => serve_protocol(io::stdin().lock(), io::stdout().lock())?,
    }
    Ok(())
}

/// Protocol commands plus `SUGGEST` (the model's top classes) and `STEP`
/// (apply the model's choice).
fn repl(policy: &mut ModelPolicy, theorem: &str) -> Result<()> {
    let mut server = Server::default();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let prompt = stdin.is_terminal();
    let mut first = Some(format!("THEOREM {theorem}"));
    loop {
        let line = match first.take() {
            Some(l) => l,
            None => {
                if prompt {
                    write!(out, "> ")?;
                    out.flush()?;
                }
                let mut l = String::new();
                if stdin.lock().read_line(&mut l)? == 0 {
                    return Ok(());
                }
                l
            }
        };
        let word = line.split_whitespace().next().unwrap_or("").to_ascii_uppercase();
        let reply = match word.as_str() {
            "SUGGEST" | "STEP" => {
                let Some((store, state)) = current_state(&server) else {
                    writeln!(out, "ERR NoSession no open goal")?;
                    continue;
                };
                let mut store = store;
                if word == "SUGGEST" {
                    let ls = LabeledState {
                        lemma: String::new(),
                        ctx: state.ctx.clone(),
                        goal: state.goal,
                        label: 0,
                        args: Vec::new(),
                    };
                    let p = proofgym::models::predict(policy.model, &store, &ls)?;
                    let mut ranked: Vec<(usize, f64)> = p.into_iter().enumerate().collect();
                    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                    let top: Vec<String> = ranked
                        .iter()
                        .take(3)
                        .filter_map(|(c, p)| toy_decode(*c).map(|(pos, law)| format!("rewrite {pos} {} ({p:.3})", law.keyword())))
                        .collect();
                    writeln!(out, "OK {}", top.join(", "))?;
                    continue;
                }
                let (pos, law) = toy_decode(policy.choose(&mut store, &state)?).context("class out of range")?;
                server.handle(&format!("TACTIC rewrite {pos} {}", law.keyword()))
            }
            _ => server.handle(&line),
        };
        match reply {
            None => {}
            Some(Reply::Line(r)) => writeln!(out, "{r}")?,
            Some(Reply::Quit(r)) => {
                writeln!(out, "{r}")?;
                return Ok(());
            }
        }
    }
}

fn current_state(server: &Server) -> Option<(proofgym::term::TermStore, ProofState)> {
    let s = server.session()?;
    let id: StateId = s.current()?;
    Some((s.store().clone(), s.state(id).ok()?.clone()))
}
