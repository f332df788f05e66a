//! The fourteen acceptance criteria. Each test prints one PASS/FAIL line to
//! stderr (bypassing the harness capture) and then asserts.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use symbreak::groupcatalog::{parse_group, GroupExpr};
use symbreak::nn::{finite_difference_check, jitter_params, Aggregator, LossKind, Model, ModelConfig, TaskConfig};
use symbreak::orbitclosure::{brute_force_edge_orbits, edge_orbits};
use symbreak::par;
use symbreak::permgroup::StrongGenChain;
use symbreak::taskgen::{apply_group_action, generate, label, LabelMode, Record, TaskName, TaskSpec};
use symbreak::trainer::{
    initial_model, pretrain_finetune, train_multitask, train_single, PretrainConfig, RunReport, TrainConfig,
};
use symbreak::verify::{analyze_discovery, check_equivariance};

const SEEDS: [u64; 3] = [1, 2, 3];

fn verdict(id: &str, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{tag} {id} {name}: {detail}");
    assert!(pass, "{id} {name}: {detail}");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.5}")).collect();
    format!("[{}]", parts.join(", "))
}

fn eq_spec(name: TaskName) -> TaskSpec {
    TaskSpec::new(name, 10, 7, LabelMode::EquivariantBinary).unwrap()
}

fn final_loss(r: &RunReport, key: &str) -> f64 {
    r.task(key).expect("task in report").final_test_loss()
}

/// Final test losses of `task` trained alone, one per seed.
fn single_losses(task: &TaskConfig, base: &TrainConfig) -> Vec<f64> {
    par::map_slice(&SEEDS, |&seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        let (_, r) = train_single(task, &cfg, &ModelConfig::default()).unwrap();
        final_loss(&r, &task.key)
    })
}

#[test]
fn c01_orbit_oracle_equivalence() {
    let start = Instant::now();
    let mut exprs = Vec::new();
    for n in 1..=8 {
        exprs.extend([
            GroupExpr::Sym(n),
            GroupExpr::Cyclic(n),
            GroupExpr::Alt(n),
            GroupExpr::Rev(n),
            GroupExpr::Trivial(n),
            GroupExpr::FixFirst(n),
        ]);
        if n % 2 == 0 {
            exprs.push(GroupExpr::Intersect(n));
        }
    }
    for text in [
        "Involutions(4; (0 1)(2 3))",
        "Involutions(6; (0 1)(2 3); (4 5))",
        "Involutions(7; (0 6)(1 5)(2 4); (0 1))",
        "Involutions(8; (0 1)(2 3)(4 5)(6 7); (0 2)(1 3); (4 6)(5 7))",
        "Patch(2, 4, 2)",
    ] {
        exprs.push(parse_group(text).unwrap());
    }
    let mut mismatched = Vec::new();
    for e in &exprs {
        let gens = e.to_generators().unwrap();
        if edge_orbits(&gens).unwrap() != brute_force_edge_orbits(&gens).unwrap() {
            mismatched.push(e.to_string());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C1",
        "orbit oracle equivalence",
        mismatched.is_empty() && secs < 10.0,
        &format!("{} groups, mismatches {mismatched:?}, {secs:.2}s", exprs.len()),
    );
}

#[test]
fn c02_group_orders() {
    let cases = [
        ("S(5)", "120"),
        ("C(7)", "7"),
        ("A(7)", "2520"),
        ("Rev(10)", "2"),
        ("Intersect(10)", "28800"),
        ("FixFirst(10)", "362880"),
    ];
    let mut got = Vec::new();
    let mut pass = true;
    for (g, want) in cases {
        let chain = StrongGenChain::new(&parse_group(g).unwrap().to_generators().unwrap());
        let order = chain.order().to_string();
        pass &= order == want;
        got.push(format!("|{g}|={order}"));
    }
    verdict("C2", "group orders", pass, &got.join(" "));
}

#[test]
fn c03_two_closure_of_alternating_group() {
    let a7 = edge_orbits(&GroupExpr::Alt(7).to_generators().unwrap()).unwrap();
    let s7 = edge_orbits(&GroupExpr::Sym(7).to_generators().unwrap()).unwrap();
    verdict(
        "C3",
        "A(7) and S(7) share edge orbits",
        a7 == s7 && a7.num_orbits() == 2,
        &format!("A(7) {} orbits, S(7) {} orbits", a7.num_orbits(), s7.num_orbits()),
    );
}

#[test]
fn c04_table_labels() {
    // a=0, b=1, c=2, d=3; for DetectCapital uppercase A..D = 4..7
    let rows: [(TaskName, usize, &[u32], Option<&[u8]>, f64); 8] = [
        (TaskName::Intersect, 4, &[0, 1, 2, 1, 2, 3], Some(&[0, 1, 1, 1, 1, 0]), 2.0),
        (TaskName::SymmetricDifference, 4, &[0, 1, 2, 1, 2, 3], Some(&[1, 0, 0, 0, 0, 1]), 1.0),
        (TaskName::Palindrome, 4, &[0, 1, 2, 1, 3], Some(&[0, 1, 1, 1, 0]), 1.0),
        (TaskName::MonotoneRun, 5, &[3, 1, 2, 4, 1], Some(&[0, 1, 1, 1, 0]), 1.0),
        (TaskName::CyclicSum, 10, &[7, 1, 2, 9, 8], Some(&[1, 0, 0, 1, 1]), 24.0),
        (TaskName::CyclicProduct, 6, &[1, 2, 4, 0, 5], Some(&[1, 1, 0, 0, 1]), 10.0),
        (TaskName::DetectCapital, 8, &[4, 1, 1, 1], None, 1.0),
        (TaskName::LongestPalindrome, 4, &[0, 1, 2, 2, 2, 2, 3, 3], None, 7.0),
    ];
    let mut wrong = Vec::new();
    for (name, vocab, input, eq, inv) in rows {
        let mode = if eq.is_some() { LabelMode::EquivariantBinary } else { LabelMode::InvariantScalar };
        let spec = TaskSpec::new(name, input.len(), vocab, mode).unwrap();
        let got = label(&spec, input).unwrap();
        if got != (eq.map(<[u8]>::to_vec), inv) {
            wrong.push(format!("{name}: {got:?}"));
        }
    }
    verdict("C4", "table labels", wrong.is_empty(), &format!("8 rows, wrong {wrong:?}"));
}

#[test]
fn c05_label_equivariance() {
    let start = Instant::now();
    let mut broken = Vec::new();
    for (k, name) in TaskName::ALL.into_iter().enumerate() {
        let vocab = match name {
            TaskName::SignOfPermutation => 8,
            _ => 6,
        };
        let mode = if name.has_equivariant_labels() {
            LabelMode::EquivariantBinary
        } else {
            LabelMode::InvariantScalar
        };
        let spec = TaskSpec::new(name, 8, vocab, mode).unwrap();
        let ds = generate(&spec, 1000, 100 + k as u64).unwrap();
        let chain = StrongGenChain::new(&spec.group.to_generators().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let bad = ds
            .records
            .iter()
            .filter(|r| {
                let g = chain.random_element(&mut rng);
                let moved: Record = apply_group_action(&spec, &g, r).unwrap();
                label(&spec, &moved.input).unwrap() != (moved.eq_labels.clone(), moved.inv_label)
            })
            .count();
        if bad > 0 {
            broken.push(format!("{name}: {bad}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C5",
        "label equivariance",
        broken.is_empty() && secs < 5.0,
        &format!("{} tasks x 1000 pairs, failures {broken:?}, {secs:.2}s", TaskName::ALL.len()),
    );
}

#[test]
fn c06_gradient_correctness() {
    let start = Instant::now();
    let mut errs = Vec::new();
    for (agg, mode, seed) in [
        (Aggregator::Attention, LabelMode::EquivariantBinary, 11),
        (Aggregator::Attention, LabelMode::InvariantScalar, 12),
        (Aggregator::MeanMlp, LabelMode::EquivariantBinary, 13),
    ] {
        let spec = TaskSpec::new(TaskName::Intersect, 8, 5, mode).unwrap();
        let cfg = ModelConfig {
            hidden: 16,
            layers: 2,
            edge_dim: 8,
            heads: 2,
            aggregator: agg,
            ..ModelConfig::default()
        };
        let mut t = TaskConfig::new(spec.clone(), GroupExpr::Intersect(8));
        t.node_orbits = true;
        let mut m: Model<f64> = Model::new(cfg, vec![t], seed).unwrap();
        let ds = generate(&spec, 6, seed).unwrap();
        let recs: Vec<&Record> = ds.records.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        jitter_params(&mut m, 0.1, &mut rng);
        let r = finite_difference_check(&m, 0, &recs, LossKind::default_for(&spec), 50, 1e-3, 1e-4, &mut rng)
            .unwrap();
        errs.push(r.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    verdict(
        "C6",
        "gradient correctness",
        worst < 1e-4 && secs < 30.0,
        &format!("max rel errors {:.2e} {:.2e} {:.2e}, {secs:.2}s", errs[0], errs[1], errs[2]),
    );
}

#[test]
fn c07_structural_equivariance() {
    let start = Instant::now();
    let g = GroupExpr::Intersect(10);
    let task = TaskConfig::new(eq_spec(TaskName::Intersect), g.clone());
    let model_cfg = ModelConfig::default();
    let init = initial_model(&task, &model_cfg, 7).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        units: 0.2,
        seed: 7,
        ..TrainConfig::for_mode(LabelMode::EquivariantBinary)
    };
    let (trained, _) = train_single(&task, &cfg, &model_cfg).unwrap();
    let a = check_equivariance(&init, 0, &g, 100, 1e-4, 1).unwrap();
    let b = check_equivariance(&trained, 0, &g, 100, 1e-4, 2).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "C7",
        "structural equivariance",
        a.pass && b.pass && secs < 10.0,
        &format!(
            "max residual random-init {:.2e}, trained {:.2e}, {secs:.2}s",
            a.max_residual, b.max_residual
        ),
    );
}

#[test]
fn c08_equivariant_beats_baseline() {
    let base = TrainConfig::for_mode(LabelMode::EquivariantBinary);
    let eq = single_losses(&TaskConfig::new(eq_spec(TaskName::Intersect), GroupExpr::Intersect(10)), &base);
    let no = single_losses(&TaskConfig::new(eq_spec(TaskName::Intersect), GroupExpr::Trivial(10)), &base);
    let (me, mn) = (mean(&eq), mean(&no));
    let margin = (mn - me) / mn;
    verdict(
        "C8",
        "Intersect(10) below I(10) by >= 10%",
        me < mn && margin >= 0.10,
        &format!("equivariant {} mean {me:.5}, baseline {} mean {mn:.5}, margin {margin:.3}", fmt(&eq), fmt(&no)),
    );
}

#[test]
fn c09_sign_of_permutation() {
    let spec = TaskSpec::new(TaskName::SignOfPermutation, 7, 7, LabelMode::InvariantScalar).unwrap();
    let base = TrainConfig::for_mode(LabelMode::InvariantScalar);
    let sym = single_losses(&TaskConfig::new(spec.clone(), GroupExpr::Sym(7)), &base);
    let triv = single_losses(&TaskConfig::new(spec, GroupExpr::Trivial(7)), &base);
    let (ms, mt) = (mean(&sym), mean(&triv));
    verdict(
        "C9",
        "sign of permutation",
        (0.67..=0.71).contains(&ms) && mt <= 0.5,
        &format!("S(7) {} mean {ms:.4}, I(7) {} mean {mt:.4}", fmt(&sym), fmt(&triv)),
    );
}

#[test]
fn c10_invariant_ordering() {
    let spec = TaskSpec::new(TaskName::Intersect, 10, 7, LabelMode::InvariantScalar).unwrap();
    let base = TrainConfig::for_mode(LabelMode::InvariantScalar);
    let inv = single_losses(&TaskConfig::new(spec.clone(), GroupExpr::Intersect(10)), &base);
    let no = single_losses(&TaskConfig::new(spec, GroupExpr::Trivial(10)), &base);
    let (mi, mn) = (mean(&inv), mean(&no));
    verdict(
        "C10",
        "invariant model below non-invariant",
        mi < mn,
        &format!("invariant {} mean {mi:.4}, non-invariant {} mean {mn:.4}", fmt(&inv), fmt(&no)),
    );
}

#[test]
fn c11_multitask_low_data() {
    let tasks: Vec<TaskConfig> = [TaskName::Intersect, TaskName::CyclicSum, TaskName::Palindrome]
        .into_iter()
        .map(|n| TaskConfig::new(eq_spec(n), n.default_group(10)))
        .collect();
    let base = TrainConfig {
        units: 0.2,
        ..TrainConfig::for_mode(LabelMode::EquivariantBinary)
    };
    let key = tasks[0].key.clone();
    let multi = par::map_slice(&SEEDS, |&seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        let (_, r) = train_multitask(&tasks, &cfg, &ModelConfig::default()).unwrap();
        final_loss(&r, &key)
    });
    let single = single_losses(&tasks[0], &base);
    let (mm, ms) = (mean(&multi), mean(&single));
    verdict(
        "C11",
        "multitask beats single-task at 0.2 units",
        mm < ms,
        &format!("multitask {} mean {mm:.4}, single {} mean {ms:.4}", fmt(&multi), fmt(&single)),
    );
}

#[test]
fn c12_transfer() {
    let target = TaskConfig::new(eq_spec(TaskName::Intersect), GroupExpr::Intersect(10));
    let pretrain: Vec<TaskConfig> = [TaskName::CyclicSum, TaskName::Palindrome]
        .into_iter()
        .map(|n| TaskConfig::new(eq_spec(n), n.default_group(10)))
        .collect();
    let base = TrainConfig {
        units: 0.15,
        ..TrainConfig::for_mode(LabelMode::EquivariantBinary)
    };
    let pre = PretrainConfig::default();
    let reps = par::map_slice(&SEEDS, |&seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        pretrain_finetune(&pretrain, &target, &pre, &cfg, &ModelConfig::default()).unwrap()
    });
    let scratch: Vec<f64> = reps.iter().map(|r| final_loss(&r.scratch, &target.key)).collect();
    let tuned: Vec<f64> = reps.iter().map(|r| final_loss(&r.pretrained, &target.key)).collect();
    let (mt, ms) = (mean(&tuned), mean(&scratch));
    verdict(
        "C12",
        "pretrained beats scratch at 0.15 units",
        mt < ms,
        &format!("pretrained {} mean {mt:.4}, scratch {} mean {ms:.4}", fmt(&tuned), fmt(&scratch)),
    );
}

#[test]
fn c13_symmetry_discovery() {
    let full = GroupExpr::Intersect(10);
    let mis = parse_group("S(5)xS(5)").unwrap();
    let task = TaskConfig::new(eq_spec(TaskName::Intersect), mis.clone());
    let model_cfg = ModelConfig::default();
    let base = TrainConfig::for_mode(LabelMode::EquivariantBinary);
    let ratios = par::map_slice(&SEEDS, |&seed| {
        let cfg = TrainConfig { seed, ..base.clone() };
        let init = initial_model(&task, &model_cfg, seed).unwrap();
        let (trained, _) = train_single(&task, &cfg, &model_cfg).unwrap();
        let d = analyze_discovery(&init, &trained, 0, &full, &mis).unwrap();
        (d.initial_merge_ratio.unwrap(), d.trained_merge_ratio.unwrap())
    });
    let down = ratios.iter().filter(|(a, b)| b < a).count();
    let shown: Vec<String> = ratios.iter().map(|(a, b)| format!("{a:.3}->{b:.3}")).collect();
    verdict(
        "C13",
        "merge ratio falls with training",
        down * 2 > ratios.len(),
        &format!("{down}/3 seeds decrease: {}", shown.join(", ")),
    );
}

fn symbreak(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_symbreak"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn strip_clock(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.remove("nondeterministic_wall_clock_secs");
            m.values_mut().for_each(strip_clock);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_clock),
        _ => {}
    }
}

/// Every file under `dir`, JSON with wall-clock fields removed.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&p).unwrap();
            if name.ends_with(".json") {
                let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                strip_clock(&mut v);
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn c14_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--n", "8", "--vocab", "5", "--hidden", "16", "--edge-dim", "8", "--layers", "2",
        "--epochs", "2", "--units", "0.1", "--seed", "5",
    ];
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--task", "intersect", "--n", "10", "--vocab", "7", "--count", "500", "--seed", "5"],
        [&["train", "--task", "intersect"][..], &small].concat(),
        [&["train", "--task", "palindrome", "--seeds", "1,2", "--parallel"][..], &small].concat(),
        [&["multitask", "--tasks", "intersect,cyclic_sum"][..], &small].concat(),
        [&["transfer", "--target", "intersect", "--pretrain", "palindrome", "--pretrain-units", "0.1"][..], &small]
            .concat(),
        [&["discover", "--mis", "S(4)xS(4)"][..], &small].concat(),
    ];
    let mut differing = Vec::new();
    for (k, cmd) in commands.iter().enumerate() {
        let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
            .map(|rep| {
                let out = dir.path().join(format!("{k}-{rep}"));
                if cmd[0] == "gen-data" {
                    fs::create_dir_all(&out).unwrap();
                    let file = out.join("data.txt");
                    symbreak(&[&cmd[..], &["--out", file.to_str().unwrap()]].concat());
                } else {
                    symbreak(&[&cmd[..], &["--out", out.to_str().unwrap()]].concat());
                }
                snapshot(&out)
            })
            .collect();
        if runs[0] != runs[1] || runs[0].is_empty() {
            differing.push(cmd[0].to_string());
        }
    }
    let ckpt = dir.path().join("1-0").join("model.ckpt");
    let verify = |_| symbreak(&["verify", "--checkpoint", ckpt.to_str().unwrap(), "--group", "Intersect(8)"]);
    if verify(0) != verify(1) {
        differing.push("verify".into());
    }
    verdict(
        "C14",
        "determinism",
        differing.is_empty(),
        &format!("{} commands repeated, differing {differing:?}", commands.len() + 1),
    );
}
