//! `duallaws` command-line front end.
//!
//! Exit codes: 0 success, 1 analysis failure, 2 configuration or input
//! error, 3 numeric divergence.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use duallaws::analysis::{self, Reparam, Verdict};
use duallaws::config::set_path;
use duallaws::{ConfigError, EquationPairList, FamilyKind, LawMemory, Scenario, ScenarioConfig};

const EXIT_ANALYSIS_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "duallaws",
    version,
    about = "Dual-laws supervenient causation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trajectory.jsonl, summary.csv, resolved_config.json.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient check, epiphenomenal reduction and multiple-realizability witnesses.
    Check {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
    },
    /// First divergence between the trajectories of two run directories.
    Compare { run_a: PathBuf, run_b: PathBuf },
    /// Run the scenario against an alternative law state and report the divergence.
    Witness {
        #[command(flatten)]
        config: ConfigArgs,
        /// JSON object overriding law memory fields: pc, macro_step, rng_seed.
        #[arg(long, default_value = "{}")]
        alt_w: String,
        /// Optional replacement pair list, e.g. '[["[0,1]","[1,0]"]]'.
        #[arg(long)]
        alt_pairs: Option<String>,
        #[arg(long, default_value_t = 1e-2)]
        threshold: f64,
    },
    /// Run one scenario for several seeds in parallel, one output directory per seed.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Seeds as a list (`1,2,5`) or a half-open range (`0..8`).
        #[arg(long)]
        seeds: String,
    },
}

#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set eta=0.1` or `--set law.period=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log_every: Option<u64>,
}

/// A failure carrying its exit code and message.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => cmd_run(&config, &out, None),
        Command::Check {
            config,
            samples,
            fd_step,
        } => cmd_check(&config, samples, fd_step),
        Command::Compare { run_a, run_b } => cmd_compare(&run_a, &run_b),
        Command::Witness {
            config,
            alt_w,
            alt_pairs,
            threshold,
        } => cmd_witness(&config, &alt_w, alt_pairs.as_deref(), threshold),
        Command::Sweep { config, out, seeds } => cmd_sweep(&config, &out, &seeds),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(args: &ConfigArgs, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Failure::new(
            EXIT_CONFIG,
            format!("cannot read {}: {e}", args.config.display()),
        )
    })?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| ConfigError::new("<document>", e.to_string()))?;
    for entry in &args.overrides {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| ConfigError::new(entry.as_str(), "override must look like KEY=VALUE"))?;
        set_path(&mut doc, key.trim(), value.trim())?;
    }
    if let Some(seed) = seed.or(args.seed) {
        set_path(&mut doc, "init_seed", &seed.to_string())?;
    }
    if let Some(every) = args.log_every {
        set_path(&mut doc, "log_every", &every.to_string())?;
    }
    Ok(ScenarioConfig::from_value(doc)?)
}

fn load_scenario(args: &ConfigArgs) -> Result<Scenario, Failure> {
    Ok(load_config(args, None)?.validate()?)
}

fn print_json(value: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("reports serialize")
    );
}

fn cmd_run(args: &ConfigArgs, out: &Path, seed: Option<u64>) -> CmdResult {
    let scenario = load_config(args, seed)?.validate()?;
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot create {}: {e}", out.display())))?;
    let io_err =
        |e: std::io::Error| Failure::new(EXIT_CONFIG, format!("writing {}: {e}", out.display()));
    output::write_resolved_config(out, &scenario.config).map_err(io_err)?;
    match duallaws::run(&scenario) {
        Ok(result) => {
            output::write_trajectory(out, &result.records).map_err(io_err)?;
            let last = result.records.last().expect("runs log at least one record");
            eprintln!(
                "ran {} steps: final loss {:.3e}, {} records, {} law stalls",
                scenario.config.steps,
                last.loss,
                result.records.len(),
                result.stalls
            );
            Ok(0)
        }
        Err(failure) => {
            output::write_trajectory(out, &failure.records).map_err(io_err)?;
            let code = if failure.error.is_divergence() {
                EXIT_DIVERGENCE
            } else {
                EXIT_CONFIG
            };
            Err(Failure::new(code, failure.error.to_string()))
        }
    }
}

fn cmd_check(args: &ConfigArgs, samples: usize, fd_step: f64) -> CmdResult {
    let scenario = load_scenario(args)?;
    let analysis_err = |e: analysis::AnalysisError| match e {
        analysis::AnalysisError::Sim(ref s) if s.is_divergence() => {
            Failure::new(EXIT_DIVERGENCE, e.to_string())
        }
        other => Failure::new(EXIT_CONFIG, other.to_string()),
    };
    let mut verdicts = Vec::new();

    let grad = analysis::grad_check(&scenario, samples, fd_step, scenario.config.init_seed)
        .map_err(analysis_err)?;
    verdicts.push(grad.verdict);

    let lemma1 = if scenario.is_epiphenomenal() {
        let report = analysis::lemma1_reduce(&scenario).map_err(analysis_err)?;
        verdicts.push(report.verdict);
        Some(report)
    } else {
        None
    };

    let initial = duallaws::init_state::<f64>(&scenario);
    let mut mr = Vec::new();
    for (slot, family) in scenario.families.iter().enumerate() {
        let params = &initial.slots[slot];
        let mut witnesses = Vec::new();
        if family.kind == FamilyKind::Mlp1h {
            let perm: Vec<usize> = (0..family.hidden)
                .map(|j| (j + 1) % family.hidden)
                .collect();
            witnesses.push(("hidden_permutation", Reparam::Permutation(perm)));
        }
        if family.pad > 0 {
            let shifted = params[family.active_count()..]
                .iter()
                .map(|x| x + 1.0)
                .collect();
            witnesses.push(("pad", Reparam::Pad(shifted)));
        }
        for (name, reparam) in witnesses {
            let report = analysis::mr_witness(family, params, &reparam, scenario.config.init_seed)
                .map_err(analysis_err)?;
            verdicts.push(report.verdict);
            mr.push(json!({ "slot": slot, "witness": name, "report": report }));
        }
    }

    let verdict = if verdicts.contains(&Verdict::Fail) {
        Verdict::Fail
    } else if verdicts.contains(&Verdict::Warning) {
        Verdict::Warning
    } else {
        Verdict::Pass
    };
    print_json(&json!({
        "verdict": verdict,
        "epiphenomenal": scenario.is_epiphenomenal(),
        "grad_check": grad,
        "lemma1": lemma1,
        "multiple_realizability": mr,
    }));
    Ok(if verdict == Verdict::Fail {
        EXIT_ANALYSIS_FAIL
    } else {
        0
    })
}

fn cmd_compare(run_a: &Path, run_b: &Path) -> CmdResult {
    let read = |dir: &Path| output::read_trajectory(dir).map_err(|e| Failure::new(EXIT_CONFIG, e));
    let report = output::compare_trajectories(&read(run_a)?, &read(run_b)?);
    if report.first_divergence.is_none() {
        eprintln!("no divergence");
    }
    print_json(&serde_json::to_value(&report).expect("reports serialize"));
    Ok(0)
}

fn cmd_witness(
    args: &ConfigArgs,
    alt_w: &str,
    alt_pairs: Option<&str>,
    threshold: f64,
) -> CmdResult {
    let scenario = load_scenario(args)?;
    let patch: Value =
        serde_json::from_str(alt_w).map_err(|e| ConfigError::new("alt_w", e.to_string()))?;
    let base = scenario.law.initial_state();
    let mut alt = base.clone();
    let field = |name: &str| -> Result<Option<u64>, Failure> {
        match patch.get(name) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| {
                ConfigError::new(format!("alt_w.{name}"), "expected an unsigned integer").into()
            }),
        }
    };
    if let Some(obj) = patch.as_object() {
        if let Some(bad) = obj
            .keys()
            .find(|k| !["pc", "macro_step", "rng_seed"].contains(&k.as_str()))
        {
            return Err(
                ConfigError::new(format!("alt_w.{bad}"), "unknown law-memory field").into(),
            );
        }
    } else {
        return Err(ConfigError::new("alt_w", "expected a JSON object").into());
    }
    let seed_changed = field("rng_seed")?;
    alt.w = LawMemory {
        pc: field("pc")?.map(|p| p as usize).unwrap_or(base.w.pc),
        macro_step: field("macro_step")?.unwrap_or(base.w.macro_step),
        rng: match seed_changed {
            Some(seed) => LawMemory::new(0, 0, seed).rng,
            None => base.w.rng.clone(),
        },
    };
    if let Some(text) = alt_pairs {
        alt.cpair = serde_json::from_str::<EquationPairList>(text)
            .map_err(|e| ConfigError::new("alt_pairs", e.to_string()))?;
    }
    if let duallaws::LawSpec::Schedule { program, .. } = &scenario.config.law {
        if alt.w.pc >= program.len() {
            return Err(ConfigError::new(
                "alt_w.pc",
                format!("program has {} entries", program.len()),
            )
            .into());
        }
    }
    let report = analysis::divergence_witness(&scenario, alt, threshold).map_err(|e| match e {
        analysis::AnalysisError::Sim(ref s) if s.is_divergence() => {
            Failure::new(EXIT_DIVERGENCE, e.to_string())
        }
        other => Failure::new(EXIT_CONFIG, other.to_string()),
    })?;
    if report.first_divergence.is_none() {
        eprintln!(
            "witness failure: no divergence within {} steps",
            report.steps
        );
    }
    print_json(&serde_json::to_value(&report).expect("reports serialize"));
    Ok(if report.verdict == Verdict::Pass {
        0
    } else {
        EXIT_ANALYSIS_FAIL
    })
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::from(ConfigError::new("seeds", format!("cannot parse `{text}`")));
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        return Ok((lo..hi).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

fn cmd_sweep(args: &ConfigArgs, out: &Path, seeds: &str) -> CmdResult {
    let seeds = parse_seeds(seeds)?;
    // Validate once up front so config errors are reported a single time.
    load_scenario(args)?;
    let results: Vec<(u64, CmdResult)> = seeds
        .par_iter()
        .map(|&seed| {
            let dir = out.join(format!("seed-{seed}"));
            (seed, cmd_run(args, &dir, Some(seed)))
        })
        .collect();
    let mut worst = 0;
    for (seed, result) in results {
        let code = match result {
            Ok(code) => code,
            Err(f) => {
                eprintln!("seed {seed}: {}", f.message);
                f.code
            }
        };
        println!("seed {seed}: exit {code}");
        worst = worst.max(code);
    }
    Ok(worst)
}
