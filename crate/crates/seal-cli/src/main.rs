//! `seal` — the experiment pipeline: generate expert demonstrations, label
//! them with sub-goals, train any of the six methods, evaluate, sweep K, and
//! reproduce the paper-style tables.
//!
//! Exit codes: 0 success, 2 usage, 3 input error, 4 labeling-backend error.

mod manifest;
mod reproduce;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use seal_core::baselines::MethodKind;
use seal_core::checkpoint::{load_bundle, save_bundle};
use seal_core::data::DemoDataset;
use seal_core::env::{Env, EnvKind, PickupOrder};
use seal_core::eval::{evaluate_seeds, sweep_k, trace_episode};
use seal_core::expert::generate_demos;
use seal_core::labeler::{
    canonical_instruction, decompose_task, label_dataset, make_backend, LabelerBackend,
};
use seal_core::trainer::{train, TrainConfig};
use seal_core::{Result, SealError};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "seal", version, about = "Hierarchical imitation learning pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate expert demonstrations as a JSONL dataset.
    GenData(GenDataArgs),
    /// Attach reference sub-goal labels to a dataset.
    Label(LabelArgs),
    /// Train one method on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint over seeds and episodes.
    Eval(EvalArgs),
    /// Codebook-size sweep for the unsupervised baselines.
    Sweep(SweepArgs),
    /// Record a per-step sub-goal trace of one episode.
    Trace(TraceArgs),
    /// Run a named experiment bundle end to end.
    Reproduce(reproduce::ReproduceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EnvArg {
    Keydoor,
    Grid3,
    Grid4,
    Grid5,
}

impl From<EnvArg> for EnvKind {
    fn from(a: EnvArg) -> EnvKind {
        match a {
            EnvArg::Keydoor => EnvKind::KeyDoor,
            EnvArg::Grid3 => EnvKind::GridWorld { n_objects: 3 },
            EnvArg::Grid4 => EnvKind::GridWorld { n_objects: 4 },
            EnvArg::Grid5 => EnvKind::GridWorld { n_objects: 5 },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Bc,
    Lisa,
    Sdil,
    Tc,
    SealL,
    Seal,
}

impl From<MethodArg> for MethodKind {
    fn from(a: MethodArg) -> MethodKind {
        match a {
            MethodArg::Bc => MethodKind::Bc,
            MethodArg::Lisa => MethodKind::Lisa,
            MethodArg::Sdil => MethodKind::Sdil,
            MethodArg::Tc => MethodKind::Tc,
            MethodArg::SealL => MethodKind::SealL,
            MethodArg::Seal => MethodKind::Seal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Oracle,
    Replay,
    Remote,
}

#[derive(Args)]
struct GenDataArgs {
    /// Environment to demonstrate.
    #[arg(long)]
    env: EnvArg,
    /// Number of trajectories.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid-World pick-up order, e.g. ABC or BCA.
    #[arg(long)]
    order: Option<String>,
    /// Output dataset path (JSONL).
    #[arg(long, default_value = "demos.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// Input dataset (JSONL).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendArg::Oracle)]
    backend: BackendArg,
    /// Judgment cache; reused and extended across runs.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Replay fixture path (for --backend replay).
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Completion endpoint URL (for --backend remote).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, default_value = "gpt-4o")]
    model: String,
    /// Environment variable holding the API credential. The credential is
    /// only ever read from the environment, never from files.
    #[arg(long, default_value = "SEAL_API_KEY")]
    credential_env: String,
    /// Task instruction to decompose (defaults to the canonical one).
    #[arg(long)]
    instruction: Option<String>,
    /// Output labeled dataset path.
    #[arg(long, default_value = "labeled.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    method: MethodArg,
    /// Training dataset (JSONL; labeled for seal/seal-l/tc).
    #[arg(long)]
    data: PathBuf,
    /// Extra datasets mixed into training (few-shot task variants).
    #[arg(long)]
    extra_data: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start from the desk-scale tuned preset instead of paper defaults.
    #[arg(long)]
    tuned: bool,
    /// JSON config file layered under the flags (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Hidden layer widths, comma-separated (e.g. 64,64).
    #[arg(long)]
    hidden: Option<String>,
    /// Codebook-size override (unsupervised baselines only).
    #[arg(long)]
    k: Option<usize>,
    /// Pick-up order the trained task targets (defaults to the dataset's).
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    val_cadence: Option<usize>,
    #[arg(long)]
    val_episodes: Option<usize>,
    /// Output directory for checkpoint, trace, and manifest.
    #[arg(long, default_value = "runs/train/0")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Episodes per seed.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    /// Comma-separated evaluation seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    /// Demonstration budget recorded in the report (metadata only).
    #[arg(long, default_value_t = 0)]
    demos: usize,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Also emit a flat CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    method: MethodArg,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated codebook sizes.
    #[arg(long, default_value = "2,4,6,8,10")]
    k: String,
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "trace.jsonl")]
    out: PathBuf,
}

/// Optional config document layered under the command-line flags.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    beta: Option<f64>,
    hidden: Option<Vec<usize>>,
    k: Option<usize>,
    val_cadence: Option<usize>,
    val_episodes: Option<usize>,
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| SealError::Config(format!("bad number {p:?} in list")))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    Ok(parse_u64_list(s)?.into_iter().map(|v| v as usize).collect())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for bad inputs/config, 4 for labeling-backend failures.
fn exit_code(e: &SealError) -> u8 {
    match e {
        SealError::Backend(_)
        | SealError::MissingCredential(_)
        | SealError::Labeling { .. }
        | SealError::DecompositionParse { .. } => 4,
        _ => 3,
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData(a) => cmd_gen_data(&a),
        Cmd::Label(a) => cmd_label(&a),
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Eval(a) => cmd_eval(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
        Cmd::Trace(a) => cmd_trace(&a),
        Cmd::Reproduce(a) => reproduce::run(&a),
    }
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let kind: EnvKind = a.env.into();
    let order = a.order.as_deref().map(PickupOrder::parse).transpose()?;
    let ds = generate_demos(kind, a.n as usize, a.seed, order)?;
    ds.save_jsonl(&a.out)?;
    let mut m = RunManifest::new(
        "gen-data",
        serde_json::json!({ "env": kind.to_string(), "n": a.n, "order": ds.order }),
        a.seed,
    );
    m.add_output(&a.out)?;
    m.save(&manifest_path(&a.out))?;
    println!(
        "wrote {} trajectories ({} steps) to {}",
        ds.trajectories.len(),
        ds.n_steps(),
        a.out.display()
    );
    Ok(())
}

fn cmd_label(a: &LabelArgs) -> Result<()> {
    let ds = DemoDataset::load_jsonl(&a.data)?;
    let selector = match a.backend {
        BackendArg::Oracle => LabelerBackend::Oracle,
        BackendArg::Replay => LabelerBackend::Replay(
            a.fixture
                .clone()
                .ok_or_else(|| SealError::Config("--backend replay needs --fixture".into()))?,
        ),
        BackendArg::Remote => LabelerBackend::Remote {
            endpoint: a
                .endpoint
                .clone()
                .ok_or_else(|| SealError::Config("--backend remote needs --endpoint".into()))?,
            model: a.model.clone(),
            credential_env: a.credential_env.clone(),
        },
    };
    let mut backend = make_backend(&selector, &ds.order)?;
    let instruction = a
        .instruction
        .clone()
        .unwrap_or_else(|| canonical_instruction(ds.kind, &ds.order));
    let space = decompose_task(&instruction, backend.as_mut())?;
    let labeled = label_dataset(&ds, &space, backend.as_mut(), a.cache.as_deref())?;
    labeled.save_jsonl(&a.out)?;
    let mut m = RunManifest::new(
        "label",
        serde_json::json!({
            "backend": format!("{selector:?}"),
            "instruction": instruction,
            "space_hash": space.hash(),
        }),
        0,
    );
    m.add_input(&a.data)?;
    if let Some(c) = &a.cache {
        m.add_input(c)?;
    }
    m.add_output(&a.out)?;
    m.save(&manifest_path(&a.out))?;
    println!(
        "labeled {} steps with {} backend calls -> {}",
        labeled.n_steps(),
        backend.calls(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut ds = DemoDataset::load_jsonl(&a.data)?;
    for extra in &a.extra_data {
        let more = DemoDataset::load_jsonl(extra)?;
        if more.kind != ds.kind {
            return Err(SealError::KindMismatch(format!(
                "extra dataset {} is {}, base is {}",
                extra.display(),
                more.kind,
                ds.kind
            )));
        }
        ds.trajectories.extend(more.trajectories);
    }
    let method: MethodKind = a.method.into();
    let mut cfg = if a.tuned {
        TrainConfig::tuned(method, ds.kind)
    } else {
        TrainConfig::new(method, ds.kind)
    };
    cfg.seed = a.seed;
    cfg.order = match &a.order {
        Some(s) => PickupOrder::parse(s)?,
        None => ds.order.clone(),
    };
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)?;
        let file: ConfigFile = serde_json::from_str(&text)?;
        apply_config_file(&mut cfg, &file);
    }
    apply_flags(&mut cfg, a)?;

    let (bundle, trace) = train(&cfg, &ds)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let ckpt = a.out_dir.join("model.ckpt");
    let trace_path = a.out_dir.join("trace.csv");
    save_bundle(&ckpt, &bundle)?;
    trace.save_csv(&trace_path)?;
    let mut m = RunManifest::new("train", serde_json::to_value(&cfg)?, a.seed);
    m.add_input(&a.data)?;
    for extra in &a.extra_data {
        m.add_input(extra)?;
    }
    m.add_output(&ckpt)?;
    m.add_output(&trace_path)?;
    m.save(&a.out_dir.join("manifest.json"))?;
    let last = trace.rows.last().map_or(f64::NAN, |r| r.total);
    println!(
        "trained {method} for {} iterations (final loss {last:.4}) -> {}",
        trace.rows.len(),
        ckpt.display()
    );
    Ok(())
}

fn apply_config_file(cfg: &mut TrainConfig, file: &ConfigFile) {
    if let Some(v) = file.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = file.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = file.lr {
        cfg.lr = v;
    }
    if let Some(v) = file.beta {
        cfg.beta = v;
    }
    if let Some(v) = &file.hidden {
        cfg.hidden = v.clone();
    }
    if let Some(v) = file.k {
        cfg.k_override = Some(v);
    }
    if let Some(v) = file.val_cadence {
        cfg.val_cadence = v;
    }
    if let Some(v) = file.val_episodes {
        cfg.val_episodes = v;
    }
}

fn apply_flags(cfg: &mut TrainConfig, a: &TrainArgs) -> Result<()> {
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if let Some(s) = &a.hidden {
        cfg.hidden = parse_usize_list(s)?;
    }
    if let Some(v) = a.k {
        cfg.k_override = Some(v);
    }
    if let Some(v) = a.val_cadence {
        cfg.val_cadence = v;
    }
    if let Some(v) = a.val_episodes {
        cfg.val_episodes = v;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let bundle = load_bundle(&a.checkpoint)?;
    let env = Env::with_order(bundle.meta.kind, bundle.meta.order.clone())?;
    let seeds = parse_u64_list(&a.seeds)?;
    if seeds.is_empty() {
        return Err(SealError::Config("need at least one seed".into()));
    }
    let report = evaluate_seeds(&bundle, &env, a.episodes as usize, &seeds, a.demos)?;
    report.save_json(&a.out)?;
    if let Some(csv) = &a.csv {
        report.save_csv(csv)?;
    }
    println!(
        "{} on {}: success {:.3} ± {:.3} over {} seeds x {} episodes",
        report.method, report.kind, report.mean, report.std, seeds.len(), a.episodes
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let ds = DemoDataset::load_jsonl(&a.data)?;
    let method: MethodKind = a.method.into();
    let k_values = parse_usize_list(&a.k)?;
    let seeds = parse_u64_list(&a.seeds)?;
    let base = TrainConfig::tuned(method, ds.kind);
    let rows = sweep_k(method, &ds, &k_values, &seeds, &base, a.episodes as usize)?;
    reproduce::write_sweep_csv(&a.out, &rows)?;
    println!("wrote {} sweep cells to {}", rows.len(), a.out.display());
    Ok(())
}

fn cmd_trace(a: &TraceArgs) -> Result<()> {
    let bundle = load_bundle(&a.checkpoint)?;
    let env = Env::with_order(bundle.meta.kind, bundle.meta.order.clone())?;
    let trace = trace_episode(&bundle, &env, a.seed)?;
    trace.save_jsonl(&a.out)?;
    match trace.oracle_accuracy() {
        Some(acc) => println!(
            "episode seed {}: {} steps, success {}, sub-goal accuracy {:.3} -> {}",
            a.seed,
            trace.steps.len(),
            trace.success,
            acc,
            a.out.display()
        ),
        None => println!(
            "episode seed {}: {} steps, success {} -> {}",
            a.seed,
            trace.steps.len(),
            trace.success,
            a.out.display()
        ),
    }
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map_or_else(
        || std::ffi::OsString::from("out"),
        std::ffi::OsStr::to_os_string,
    );
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsers() {
        assert_eq!(parse_u64_list("0, 1,2").unwrap(), vec![0, 1, 2]);
        assert!(parse_u64_list("1,x").is_err());
        assert_eq!(parse_usize_list("64,64").unwrap(), vec![64, 64]);
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            manifest_path(Path::new("a/b.jsonl")),
            PathBuf::from("a/b.jsonl.manifest.json")
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
