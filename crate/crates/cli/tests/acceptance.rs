//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use duallaws::analysis::{self, Reparam, Verdict};
use duallaws::bridge::BridgeFamily;
use duallaws::expr::{parse_sequence, ExprTree, IndexSequence};
use duallaws::feedback::{CompiledPairs, EquationPairList};
use duallaws::state::RecordEvent;
use duallaws::{run, Scenario, ScenarioConfig, SequenceError, Simulator, TrajectoryRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type ErrorShape = fn(&SequenceError) -> bool;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str) -> Scenario {
    let text = std::fs::read_to_string(scenario_path(name)).expect("scenario file");
    ScenarioConfig::from_json_str(&text)
        .unwrap()
        .validate()
        .unwrap()
}

fn from_json(doc: Value) -> Scenario {
    ScenarioConfig::from_value(doc).unwrap().validate().unwrap()
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lemma1_reduction() -> Outcome {
    let unary = [
        json!({"kind": "affine1"}),
        json!({"kind": "mlp1h", "hidden": 3}),
        json!({"kind": "affine1", "pad": 2}),
    ];
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let m = 2 + (seed % 2) as usize;
        let mut slots: Vec<Value> = (0..2)
            .map(|k| unary[(seed as usize + k) % unary.len()].clone())
            .collect();
        slots.push(json!({"kind": "affine2"}));
        for s in &mut slots {
            s["m"] = json!(m);
        }
        let resample = seed % 2 == 0;
        let probes: Vec<Vec<f64>> = if resample {
            Vec::new()
        } else {
            (0..m)
                .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect()
        };
        let sc = from_json(json!({
            "m": m, "slots": slots, "init_seed": seed, "eta": 0.01,
            "mu": if seed % 3 == 0 { 0.0 } else { 0.5 },
            "drift": if seed % 2 == 0 { 0.0 } else { 1e-3 },
            "probe_mode": if resample { "resample" } else { "fixed_set" },
            "probes": probes,
            "K": 1 + seed * 37,
            "law": {"kind": "identity", "pairs": [["[0,1]", "[1,0]"], ["[2,(0,1)]", "[2,(1,0)]"]]},
            "steps": 1000
        }));
        let report = analysis::lemma1_reduce(&sc).map_err(|e| e.to_string())?;
        worst = worst.max(report.deviation);
        if report.deviation != 0.0 {
            return Err(format!("seed {seed}: deviation {:e}", report.deviation));
        }
    }
    Ok(format!("10 configs, max deviation {worst:?}"))
}

fn witness() -> Outcome {
    let sc = load("flagship_witness.json");
    let mut alt = sc.law.initial_state();
    alt.w.pc = 1;
    let report = analysis::divergence_witness(&sc, alt, 1e-2).map_err(|e| e.to_string())?;
    let k = sc.config.k;
    check(
        report.first_divergence == Some(k + 1) && report.final_deviation > 1e-2,
        format!(
            "first divergence {:?} (K+1 = {}), final deviation {:.3e}",
            report.first_divergence,
            k + 1,
            report.final_deviation
        ),
    )
}

fn convergence() -> Outcome {
    let sc = load("flagship_commutativity.json");
    let start = Instant::now();
    let out = run(&sc).map_err(|f| f.error.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    let losses: Vec<(u64, f64)> = out.records.iter().map(|r| (r.t, r.loss)).collect();
    let reached = losses.iter().find(|(_, l)| *l < 1e-8).map(|(t, _)| *t);
    // Steps beyond the roundoff floor may wobble by a few ulps of ~1e-31.
    let rises: Vec<u64> = losses
        .windows(2)
        .filter(|w| w[1].0 > 10 && w[1].1 > w[0].1 + 1e-28)
        .map(|w| w[1].0)
        .collect();
    check(
        reached.is_some_and(|t| t <= 5000) && rises.is_empty() && elapsed < 5.0,
        format!(
            "loss < 1e-8 at step {reached:?}, final {:.2e}, rises after t=10: {}, {elapsed:.3}s",
            losses.last().unwrap().1,
            rises.len()
        ),
    )
}

fn goal_switch() -> Outcome {
    let sc = load("flagship_goal_switch.json");
    let out = run(&sc).map_err(|f| f.error.to_string())?;
    let records: &[TrajectoryRecord] = &out.records;
    let mut events = 0;
    let mut detail = Vec::new();
    for (k, r) in records.iter().enumerate() {
        if r.event != Some(RecordEvent::PostMacro) {
            continue;
        }
        let pre = &records[k - 1];
        assert_eq!(pre.event, Some(RecordEvent::PreMacro));
        let later = records
            .iter()
            .find(|x| x.t == r.t + 2000 && x.event.is_none())
            .map(|x| x.loss)
            .unwrap_or(f64::INFINITY);
        let ok = r.loss > pre.loss && later < 1e-6;
        detail.push(format!(
            "t={} {:.1e}->{:.1e}->{:.1e}",
            r.t, pre.loss, r.loss, later
        ));
        if !ok {
            return Err(format!("event {}", detail.join("; ")));
        }
        events += 1;
    }
    check(
        events >= 3,
        format!("{events} events: {}", detail.join("; ")),
    )
}

fn gradient_oracle() -> Outcome {
    let families = [
        (
            "affine1",
            json!([{"kind": "affine1", "m": 3}, {"kind": "affine1", "m": 3, "pad": 1}]),
            1e-7,
        ),
        (
            "affine2",
            json!([{"kind": "affine2", "m": 2}, {"kind": "affine1", "m": 2}]),
            1e-7,
        ),
        (
            "mlp1h",
            json!([{"kind": "mlp1h", "m": 2, "hidden": 4}, {"kind": "mlp1h", "m": 2, "hidden": 2}]),
            1e-5,
        ),
    ];
    let mut parts = Vec::new();
    for (name, slots, bound) in families {
        let m = slots[0]["m"].clone();
        let sc = from_json(json!({
            "m": m, "slots": slots, "init_seed": 0, "eta": 0.01, "probe_mode": "resample", "K": 1,
            "law": {"kind": "identity", "pairs": []}, "steps": 0
        }));
        let report = analysis::grad_check(&sc, 100, 1e-5, 17).map_err(|e| e.to_string())?;
        parts.push(format!("{name} {:.1e}", report.worst_relative_error));
        if report.verdict != Verdict::Pass || report.worst_relative_error >= bound {
            return Err(parts.join(", "));
        }
    }
    Ok(format!("worst relative error: {}", parts.join(", ")))
}

fn multiple_realizability() -> Outcome {
    let mlp = BridgeFamily::mlp1h(3, 5);
    let padded = BridgeFamily::affine2(3).with_pad(4);
    let mut worst_perm = 0.0f64;
    let mut worst_pad = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<f64> = (0..mlp.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let perm: Vec<usize> = (0..5).map(|j| (j + 1 + seed as usize % 4) % 5).collect();
        let r = analysis::mr_witness(&mlp, &params, &Reparam::Permutation(perm), seed)
            .map_err(|e| e.to_string())?;
        if r.verdict != Verdict::Pass {
            return Err(format!("permutation seed {seed}: {r:?}"));
        }
        worst_perm = worst_perm.max(r.max_deviation);

        let params: Vec<f64> = (0..padded.param_count())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let other: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let r = analysis::mr_witness(&padded, &params, &Reparam::Pad(other), seed)
            .map_err(|e| e.to_string())?;
        worst_pad = worst_pad.max(r.max_deviation);
    }
    check(
        worst_pad == 0.0 && worst_perm <= analysis::MR_TOLERANCE,
        format!("20 seeds x 100 probes: pad {worst_pad:?}, permutation {worst_perm:.1e}"),
    )
}

fn single_supervenient() -> Outcome {
    let families = [
        BridgeFamily::affine1(3).with_pad(1),
        BridgeFamily::mlp1h(3, 4),
    ];
    let list: EquationPairList = serde_json::from_str(r#"[["[0,0]","[0,0]"]]"#).unwrap();
    let pairs = CompiledPairs::new(&list, &[1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let family = families[k % 2];
        let x: Vec<f64> = (0..family.param_count())
            .map(|_| rng.gen_range(-3.0..3.0))
            .collect();
        let d: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let er = pairs
            .errors(&[family], &[x], &d)
            .map_err(|e| e.to_string())?;
        worst = er[0].iter().fold(worst, |a, e| a.max(e.abs()));
    }
    check(worst == 0.0, format!("1000 states, max |er| = {worst:?}"))
}

fn law_autonomy() -> Outcome {
    let config = |init_seed: u64, law_seed: u64| {
        from_json(json!({
            "m": 2,
            "slots": [{"kind": "affine1", "m": 2}, {"kind": "mlp1h", "m": 2, "hidden": 2},
                      {"kind": "affine2", "m": 2}],
            "init_seed": init_seed, "eta": 0.01, "drift": 0.01, "probe_mode": "resample", "K": 1,
            "law": {"kind": "grammar_walk", "law_seed": law_seed, "mutation_weights": [1, 1, 1, 1],
                    "pairs": [["[0,1]", "[1,0]"]], "max_len": 4},
            "steps": 10_001
        }))
    };
    for law_seed in 0..20u64 {
        let (a, b) = (
            config(law_seed, law_seed),
            config(law_seed + 1000, law_seed),
        );
        let (mut sa, mut sb) = (Simulator::new(&a), Simulator::new(&b));
        for _ in 0..=10_000 {
            sa.step().map_err(|e| e.to_string())?;
            sb.step().map_err(|e| e.to_string())?;
            if sa.state().law != sb.state().law {
                return Err(format!("law seed {law_seed} parted at t={}", sa.state().t));
            }
        }
        if sa.state().law.w.macro_step != 10_000 || sa.state().sub.slots == sb.state().sub.slots {
            return Err(format!("law seed {law_seed}: degenerate replay"));
        }
    }
    Ok("20 seeds x 10^4 macro-steps, identical law streams over distinct subvenient runs".into())
}

fn cli_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_duallaws");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut names: Vec<String> = std::fs::read_dir(scenario_path(""))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    let run_once = |name: &str, dir: &Path| -> Result<Vec<u8>, String> {
        let status = Command::new(bin)
            .arg("run")
            .arg("--config")
            .arg(scenario_path(name))
            .arg("--out")
            .arg(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "{name}: {}",
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        std::fs::read(dir.join("trajectory.jsonl")).map_err(|e| e.to_string())
    };
    for name in &names {
        let a = run_once(name, &tmp.path().join(format!("{name}-a")))?;
        let b = run_once(name, &tmp.path().join(format!("{name}-b")))?;
        if a != b {
            return Err(format!("{name}: trajectories differ"));
        }
    }
    let sweep_dir = tmp.path().join("sweep");
    let status = Command::new(bin)
        .args(["sweep", "--seeds", "5,6", "--config"])
        .arg(scenario_path("grammar_walk.json"))
        .arg("--out")
        .arg(&sweep_dir)
        .output()
        .map_err(|e| e.to_string())?;
    let single = tmp.path().join("seed6");
    Command::new(bin)
        .args(["run", "--seed", "6", "--config"])
        .arg(scenario_path("grammar_walk.json"))
        .arg("--out")
        .arg(&single)
        .output()
        .map_err(|e| e.to_string())?;
    let swept =
        std::fs::read(sweep_dir.join("seed-6/trajectory.jsonl")).map_err(|e| e.to_string())?;
    let alone = std::fs::read(single.join("trajectory.jsonl")).map_err(|e| e.to_string())?;
    check(
        status.status.success() && swept == alone,
        format!(
            "{} scenarios run twice byte-identical; sweep matches single run",
            names.len()
        ),
    )
}

fn grammar_suite() -> Outcome {
    let arities = [2, 1, 1];
    let parse = |text: &str| {
        text.parse::<IndexSequence>()
            .map_err(|e| e.to_string())
            .and_then(|s| parse_sequence(&s, &arities).map_err(|e| e.to_string()))
    };
    let chain = parse("[1,2]")?;
    if chain != ExprTree::compose(ExprTree::unary(1), ExprTree::unary(2)) {
        return Err(format!("[1,2] parsed to {chain:?}"));
    }
    let binary = parse("[0,(1,2)]")?;
    let expected = ExprTree::Apply {
        slot: 0,
        children: vec![ExprTree::unary(1), ExprTree::unary(2)],
    };
    if binary != expected {
        return Err(format!("[0,(1,2)] parsed to {binary:?}"));
    }
    if parse("[]")? != ExprTree::Identity {
        return Err("[] is not the identity".into());
    }

    let structural = |text: &str| -> Result<SequenceError, String> {
        let seq: IndexSequence = text.parse().map_err(|e: SequenceError| e.to_string())?;
        parse_sequence(&seq, &arities)
            .err()
            .ok_or(format!("{text} parsed"))
    };
    let cases: Vec<(&str, ErrorShape)> = vec![
        ("[0]", |e| matches!(e, SequenceError::Arity { .. })),
        ("[0,1]", |e| matches!(e, SequenceError::Arity { .. })),
        ("[0,(1,2,1)]", |e| matches!(e, SequenceError::Arity { .. })),
        ("[0,(1)]", |e| matches!(e, SequenceError::Arity { .. })),
        ("[(1,2)]", |e| matches!(e, SequenceError::Grammar { .. })),
        ("[1,(1,2)]", |e| {
            matches!(
                e,
                SequenceError::Grammar { .. } | SequenceError::Arity { .. }
            )
        }),
        ("[3]", |e| {
            matches!(e, SequenceError::IndexOutOfRange { .. })
        }),
    ];
    for (text, expect) in &cases {
        let err = structural(text)?;
        if !expect(&err) {
            return Err(format!("{text}: unexpected error {err}"));
        }
    }
    let syntax = ["[1,", "[1 2]", "(1,2)", "[a]", "[(1,2]", ""];
    for text in syntax {
        if text.parse::<IndexSequence>().is_ok() {
            return Err(format!("`{text}` should be a syntax error"));
        }
    }
    Ok(format!(
        "both forms parse as specified; {} malformed sequences rejected",
        cases.len() + syntax.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("lemma-1 reduction", lemma1_reduction),
        ("agent-determinism witness", witness),
        ("feedback convergence", convergence),
        ("goal-switch response", goal_switch),
        ("gradient oracle", gradient_oracle),
        ("multiple realizability", multiple_realizability),
        ("|SUP|=1 degeneration", single_supervenient),
        ("law autonomy", law_autonomy),
        ("determinism", cli_determinism),
        ("grammar suite", grammar_suite),
    ];
    let mut failed = 0;
    for (k, (name, criterion)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(criterion).unwrap_or_else(|payload| {
            let message = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {message}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", k + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
