//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on configuration or usage errors, 3 when a
//! single-run estimator refuses (sweeps record refusals as rows instead).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use unimean::estimators::EstimatorReport;
use unimean::families::{Family, FamilyConfig, FamilySpecToml, MemberSpec};
use unimean::harness::{
    child_seed, demo_empirical_failure, fmt_f64, run_risk, sup_deviation, EstimatorSpec,
    ExperimentConfig, TruthMode,
};
use unimean::meanvec::MeanVector;
use unimean::union::{union_learn, LearnerConfig, LearnerRegistry};

#[derive(Parser)]
#[command(
    name = "unimean",
    about = "Uniform mean estimation experiments over product distributions on infinite binary sequences",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args, Clone)]
struct GlobalArgs {
    /// Base seed for all randomness.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Number of Monte Carlo trials.
    #[arg(long, global = true, default_value_t = 20)]
    trials: u32,
    /// Sample horizon override (coordinates drawn per sample).
    #[arg(long, global = true)]
    horizon: Option<u64>,
    /// Output directory (default: $UNIMEAN_OUT_DIR, then the working dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// TOML config file; subcommand-specific flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

impl GlobalArgs {
    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("UNIMEAN_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one estimator on one family and print the estimate.
    Learn {
        #[arg(long)]
        family: String,
        #[arg(long)]
        estimator: String,
        /// Sample size.
        #[arg(long, default_value_t = 256)]
        n: usize,
        /// Seed for the drawn ground truth (defaults to the base seed).
        #[arg(long)]
        truth_seed: Option<u64>,
        /// Coordinates of the estimate to print.
        #[arg(long, default_value_t = 16)]
        prefix: u64,
    },
    /// Monte Carlo risk sweep over a sample-size grid; writes CSV + JSON.
    Sweep {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        estimator: Option<String>,
        /// Comma-separated sample sizes, strictly increasing.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Sup-norm evaluation horizon.
        #[arg(long)]
        j_eval: Option<u64>,
        /// Fix the truth across trials with this seed (default: fresh truth
        /// per trial).
        #[arg(long)]
        truth_seed: Option<u64>,
    },
    /// The empirical mean's failure on the all-1/2 product measure.
    DemoFailure {
        #[arg(long, default_value_t = 10)]
        n: usize,
        /// Number of coordinates to watch.
        #[arg(long = "J", default_value_t = 100_000)]
        j: u64,
    },
    /// Aggregate a registry of base learners with the survival tournament.
    Union {
        /// Registry TOML (see `docs` in the guide): [[learner]] entries plus
        /// optional truth settings.
        #[arg(long)]
        registry: PathBuf,
        /// Total rows drawn is 2n (half train, half validate).
        #[arg(long, default_value_t = 256)]
        n: usize,
        /// Chaining cap (default: the observable schedule, floored at 1).
        #[arg(long)]
        k_cap: Option<u32>,
        /// Which learner's family the truth is drawn from (1-based).
        #[arg(long, default_value_t = 1)]
        truth_position: usize,
        #[arg(long)]
        truth_seed: Option<u64>,
    },
    /// Branch recovery on the tree family across seeded trials.
    Tree {
        #[arg(long, default_value_t = 12)]
        depth: u32,
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Estimator(msg)) => {
            eprintln!("estimator error: {msg}");
            ExitCode::from(3)
        }
    }
}

enum CliError {
    Config(String),
    Estimator(String),
}

impl CliError {
    fn config<E: std::fmt::Display>(e: E) -> Self {
        CliError::Config(e.to_string())
    }
}

type CliResult = Result<ExitCode, CliError>;

fn dispatch(cli: Cli) -> CliResult {
    let g = cli.global.clone();
    match cli.command {
        Command::Learn {
            family,
            estimator,
            n,
            truth_seed,
            prefix,
        } => learn(&g, &family, &estimator, n, truth_seed, prefix),
        Command::Sweep {
            family,
            estimator,
            n,
            j_eval,
            truth_seed,
        } => sweep(&g, family, estimator, n, j_eval, truth_seed),
        Command::DemoFailure { n, j } => demo(&g, n, j),
        Command::Union {
            registry,
            n,
            k_cap,
            truth_position,
            truth_seed,
        } => union_cmd(&g, &registry, n, k_cap, truth_position, truth_seed),
        Command::Tree { depth, n } => tree_cmd(&g, depth, n),
    }
}

/// Compact family descriptions: `qprop:c=1`, `qbin`, `qtert`,
/// `qtree[:depth=32]`, `qround`, `countable:file=members.toml`.
fn parse_family(spec: &str) -> Result<FamilyConfig, CliError> {
    let (head, args) = split_spec(spec);
    let kv = parse_kv(&args)?;
    let spec = match head.as_str() {
        "qprop" => FamilySpecToml::Qprop {
            c: kv_f64(&kv, "c")?.ok_or_else(|| CliError::Config("qprop needs c=<f64>".into()))?,
        },
        "qbin" => FamilySpecToml::Qbin {},
        "qtert" => FamilySpecToml::Qtert {},
        "qtree" => FamilySpecToml::Qtree {
            truth_depth: kv_f64(&kv, "depth")?.map_or(32, |d| d as u32),
        },
        "qround" => FamilySpecToml::Qround {},
        "countable" => {
            let path = kv
                .iter()
                .find(|(k, _)| k == "file")
                .map(|(_, v)| v.clone())
                .ok_or_else(|| CliError::Config("countable needs file=<members.toml>".into()))?;
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("reading {path}: {e}")))?;
            #[derive(Deserialize)]
            struct Members {
                members: Vec<MemberSpec>,
            }
            let parsed: Members = toml::from_str(&text).map_err(CliError::config)?;
            FamilySpecToml::Countable {
                members: parsed.members,
            }
        }
        other => return Err(CliError::Config(format!("unknown family {other:?}"))),
    };
    Ok(FamilyConfig::new(spec, None))
}

/// Compact estimator descriptions: `empirical`, `eps[:epsilon=0.25]`,
/// `separable[:kmax=8]`, `bin`, `round`, `tree:depth=12`, `oracle`.
fn parse_estimator(spec: &str) -> Result<EstimatorSpec, CliError> {
    let (head, args) = split_spec(spec);
    let kv = parse_kv(&args)?;
    Ok(match head.as_str() {
        "empirical" => EstimatorSpec::Empirical,
        "eps" | "eps-approximate" => EstimatorSpec::EpsApproximate {
            epsilon: kv_f64(&kv, "epsilon")?.unwrap_or(0.0),
            max_candidates: kv_f64(&kv, "max")?.map_or(1_000_000, |m| m as u64),
        },
        "separable" => EstimatorSpec::Separable {
            k_max: kv_f64(&kv, "kmax")?.map(|k| k as u32),
            max_candidates: kv_f64(&kv, "max")?.map_or(1_000_000, |m| m as u64),
        },
        "bin" => EstimatorSpec::Bin,
        "round" => EstimatorSpec::Round,
        "tree" => EstimatorSpec::Tree {
            depth: kv_f64(&kv, "depth")?
                .ok_or_else(|| CliError::Config("tree needs depth=<u32>".into()))?
                as u32,
        },
        "oracle" => EstimatorSpec::Oracle,
        other => return Err(CliError::Config(format!("unknown estimator {other:?}"))),
    })
}

fn split_spec(spec: &str) -> (String, String) {
    match spec.split_once(':') {
        Some((h, rest)) => (h.to_string(), rest.to_string()),
        None => (spec.to_string(), String::new()),
    }
}

fn parse_kv(args: &str) -> Result<Vec<(String, String)>, CliError> {
    if args.is_empty() {
        return Ok(Vec::new());
    }
    args.split(',')
        .map(|pair| {
            pair.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Config(format!("expected key=value, got {pair:?}")))
        })
        .collect()
}

fn kv_f64(kv: &[(String, String)], key: &str) -> Result<Option<f64>, CliError> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| {
            v.parse::<f64>()
                .map_err(|e| CliError::Config(format!("{key}={v}: {e}")))
        })
        .transpose()
}

fn estimate_json(report: &EstimatorReport, truth: Option<&MeanVector>, prefix: u64) -> serde_json::Value {
    let coords: Vec<f64> = (1..=prefix)
        .map(|j| report.estimate.coord(j).unwrap_or(f64::NAN))
        .collect();
    let d = &report.diagnostics;
    serde_json::json!({
        "estimate_prefix": coords,
        "diagnostics": {
            "candidate_index_accepted": d.candidate_index_accepted.map(|i| i.to_string()),
            "candidates_scanned": d.candidates_scanned,
            "k_reached": d.k_reached,
            "branch_bits": d.branch_bits,
            "phi": d.phi,
            "valid_to": d.valid_to,
            "notes": d.notes,
        },
        "constraints": report.constraints.iter().map(|c| c.radius).collect::<Vec<_>>(),
        "sup_dev_vs_truth": truth.map(|t| {
            sup_deviation(report, t, prefix.max(1024)).ok().map(fmt_f64)
        }),
    })
}

fn learn(
    g: &GlobalArgs,
    family: &str,
    estimator: &str,
    n: usize,
    truth_seed: Option<u64>,
    prefix: u64,
) -> CliResult {
    let fam_cfg = parse_family(family)?;
    let est = parse_estimator(estimator)?;
    let cfg = ExperimentConfig {
        family: fam_cfg,
        estimator: est.clone(),
        n_grid: vec![n],
        trials: 1,
        base_seed: g.seed,
        j_eval: g.horizon.unwrap_or((n as u64).max(1024)),
        sample_horizon: g.horizon,
        truth: TruthMode::Fixed {
            seed: truth_seed.unwrap_or(g.seed),
        },
    };
    let (fam, truth) = cfg.validate().map_err(CliError::config)?;
    let seed = child_seed(cfg.base_seed, n as u64, 0);
    let sample = fam
        .sample(&truth, n, cfg.horizon_for(n), seed)
        .map_err(CliError::config)?;
    let report = run_single(&est, &fam, &sample, &truth)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&estimate_json(&report, Some(&truth), prefix)).unwrap()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_single(
    est: &EstimatorSpec,
    fam: &Family,
    sample: &unimean::families::SampleSet,
    truth: &MeanVector,
) -> Result<EstimatorReport, CliError> {
    // The same dispatch the sweep uses.
    est.run(fam, sample, truth)
        .map_err(|e| CliError::Estimator(e.to_string()))
}

fn sweep(
    g: &GlobalArgs,
    family: Option<String>,
    estimator: Option<String>,
    n: Vec<usize>,
    j_eval: Option<u64>,
    truth_seed: Option<u64>,
) -> CliResult {
    let cfg: ExperimentConfig = if let Some(path) = &g.config {
        let text = fs::read_to_string(path).map_err(CliError::config)?;
        toml::from_str(&text).map_err(CliError::config)?
    } else {
        let family = family.ok_or_else(|| CliError::Config("sweep needs --family".into()))?;
        let estimator =
            estimator.ok_or_else(|| CliError::Config("sweep needs --estimator".into()))?;
        if n.is_empty() {
            return Err(CliError::Config("sweep needs --n <grid>".into()));
        }
        let max_n = *n.iter().max().unwrap() as u64;
        ExperimentConfig {
            family: parse_family(&family)?,
            estimator: parse_estimator(&estimator)?,
            j_eval: j_eval.unwrap_or(max_n.max(256)),
            n_grid: n,
            trials: g.trials,
            base_seed: g.seed,
            sample_horizon: g.horizon,
            truth: match truth_seed {
                Some(seed) => TruthMode::Fixed { seed },
                None => TruthMode::PerTrial,
            },
        }
    };
    let report = run_risk(&cfg).map_err(CliError::config)?;
    let dir = g.out_dir();
    fs::create_dir_all(&dir).map_err(CliError::config)?;
    let csv_path = dir.join("sweep.csv");
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(CliError::config)?;
    fs::write(&csv_path, csv).map_err(CliError::config)?;
    let json_path = dir.join("summary.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&report.summary_json()).unwrap(),
    )
    .map_err(CliError::config)?;
    println!(
        "wrote {} rows to {} and aggregates to {}",
        report.rows.len(),
        csv_path.display(),
        json_path.display()
    );
    for agg in &report.aggregates {
        println!(
            "n = {:>6}: mean sup_dev {}, p95 {}, failures {}/{}",
            agg.n,
            agg.mean_sup_dev.map_or("-".into(), fmt_f64),
            agg.p95_sup_dev.map_or("-".into(), fmt_f64),
            agg.failures,
            agg.trials
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn demo(g: &GlobalArgs, n: usize, j: u64) -> CliResult {
    let report = demo_empirical_failure(n, j, g.trials, g.seed).map_err(CliError::config)?;
    let half = report
        .sup_devs
        .iter()
        .filter(|&&s| s == 0.5)
        .count();
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "n": n,
            "J": j,
            "trials": g.trials,
            "sup_dev_equal_half": half,
            "constant_column_rate": report.constant_column_rate,
            "analytic_constant_column_probability": report.analytic_constant_column_probability,
            "sup_devs_first_10": &report.sup_devs[..report.sup_devs.len().min(10)],
        }))
        .unwrap()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Deserialize)]
struct RegistryFile {
    learner: Vec<LearnerConfig>,
    #[serde(default)]
    truth_position: Option<usize>,
    #[serde(default)]
    truth_seed: Option<u64>,
}

fn union_cmd(
    g: &GlobalArgs,
    registry_path: &Path,
    n: usize,
    k_cap: Option<u32>,
    truth_position: usize,
    truth_seed: Option<u64>,
) -> CliResult {
    let text = fs::read_to_string(registry_path).map_err(CliError::config)?;
    let file: RegistryFile = toml::from_str(&text).map_err(CliError::config)?;
    if file.learner.is_empty() {
        return Err(CliError::Config("registry lists no learners".into()));
    }
    let entries = file
        .learner
        .iter()
        .enumerate()
        .map(|(i, c)| c.to_entry(i))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::config)?;
    let registry = LearnerRegistry::new(entries);
    let union_family = registry.union_family().map_err(CliError::config)?;

    let position = file.truth_position.unwrap_or(truth_position);
    if position == 0 || position > registry.entries.len() {
        return Err(CliError::Config(format!(
            "truth position {position} out of range 1..={}",
            registry.entries.len()
        )));
    }
    let horizon = g.horizon.unwrap_or((n as u64).max(256));
    let horizon = horizon + horizon % 2;
    let truth_seed = file.truth_seed.or(truth_seed).unwrap_or(g.seed);
    let truth = registry.entries[position - 1]
        .family
        .random_truth(truth_seed, horizon);
    let sample = union_family
        .sample(&truth, 2 * n, horizon, child_seed(g.seed, n as u64, 0))
        .map_err(CliError::config)?;

    let outcome =
        union_learn(&registry, &union_family, &sample, k_cap).map_err(|e| CliError::Estimator(e.to_string()))?;

    let dir = g.out_dir();
    fs::create_dir_all(&dir).map_err(CliError::config)?;
    let log_path = dir.join("survival.jsonl");
    let mut log = String::new();
    for v in &outcome.verdicts {
        log.push_str(&serde_json::to_string(v).unwrap());
        log.push('\n');
    }
    fs::write(&log_path, log).map_err(CliError::config)?;

    println!(
        "{}",
        serde_json::to_string_pretty(&estimate_json(&outcome.report, Some(&truth), 16)).unwrap()
    );
    println!(
        "k reached {} over {} tournament records; log at {}",
        outcome.report.diagnostics.k_reached.unwrap_or(0),
        outcome.verdicts.len(),
        log_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn tree_cmd(g: &GlobalArgs, depth: u32, n: usize) -> CliResult {
    let fam = Family::Tree { truth_depth: 32 };
    let horizon = (1u64 << (depth + 1)) - 1;
    let mut recovered = 0u32;
    let mut accepted = 0u32;
    for trial in 0..g.trials {
        let seed = child_seed(g.seed, n as u64, u64::from(trial));
        let truth = fam.random_truth(mix_for_truth(seed), horizon);
        let sample = fam
            .sample(&truth, n, horizon, seed)
            .map_err(CliError::config)?;
        match unimean::estimators::tree_learn(&sample, depth) {
            Ok(rep) => {
                accepted += 1;
                let want: String = match &truth {
                    MeanVector::TreeBranch(b) => b
                        .bits()
                        .iter()
                        .take(depth as usize)
                        .map(|&x| if x { '1' } else { '0' })
                        .collect(),
                    _ => unreachable!(),
                };
                if rep.diagnostics.branch_bits.as_deref() == Some(want.as_str()) {
                    recovered += 1;
                }
            }
            Err(unimean::estimators::EstimatorError::InvalidParams(msg)) => {
                return Err(CliError::Config(msg))
            }
            Err(_) => {}
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "depth": depth,
            "n": n,
            "trials": g.trials,
            "accepted": accepted,
            "recovered": recovered,
        }))
        .unwrap()
    );
    Ok(ExitCode::SUCCESS)
}

fn mix_for_truth(seed: u64) -> u64 {
    seed ^ 0x7472_7574_6800_0000
}
