//! Named experiment bundles: train/evaluate grids that mirror the paper's
//! tables, seed-sharded under runs/<name>/<seed>/.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use seal_core::baselines::MethodKind;
use seal_core::checkpoint::save_bundle;
use seal_core::data::DemoDataset;
use seal_core::env::{Env, EnvKind, PickupOrder};
use seal_core::eval::{derive_seed, evaluate, sweep_k, EvalOutcome, EvalReport, SweepRow};
use seal_core::expert::generate_demos;
use seal_core::labeler::label_with_oracle;
use seal_core::trainer::{train, TrainConfig};
use seal_core::{Result, SealError};

use crate::manifest::RunManifest;
use crate::parse_u64_list;

/// Seed used for dataset generation, kept apart from training seeds.
const DATA_SEED: u64 = 1000;

#[derive(Clone, Copy, ValueEnum)]
pub enum BundleName {
    /// KeyDoor, all six methods at one demo budget.
    Table1Keydoor,
    /// Grid-World (3 objects), all six methods at one demo budget.
    Table3Grid3,
    /// SEAL under pick-up-order variations with few-shot mixing.
    Table4Variations,
    /// LISA/SDIL codebook-size sweep on Grid-World (3 objects).
    Fig3Ksweep,
}

impl BundleName {
    fn dir_name(self) -> &'static str {
        match self {
            BundleName::Table1Keydoor => "table1-keydoor",
            BundleName::Table3Grid3 => "table3-grid3",
            BundleName::Table4Variations => "table4-variations",
            BundleName::Fig3Ksweep => "fig3-ksweep",
        }
    }
}

#[derive(Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    name: BundleName,
    /// Demonstration budget (default: 200 KeyDoor, 400 Grid-World).
    #[arg(long)]
    demos: Option<usize>,
    /// Comma-separated training seeds.
    #[arg(long, default_value = "0,1,2,3,4")]
    seeds: String,
    /// Evaluation episodes per seed.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    /// Output directory (default runs/<name>).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Restrict to a comma-separated method subset, e.g. bc,seal.
    #[arg(long)]
    methods: Option<String>,
}

pub fn run(a: &ReproduceArgs) -> Result<()> {
    let seeds = parse_u64_list(&a.seeds)?;
    if seeds.is_empty() {
        return Err(SealError::Config("need at least one seed".into()));
    }
    let out_dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(a.name.dir_name()));
    std::fs::create_dir_all(&out_dir)?;
    let episodes = a.episodes as usize;
    match a.name {
        BundleName::Table1Keydoor => {
            let demos = a.demos.unwrap_or(200);
            method_table(EnvKind::KeyDoor, demos, &seeds, episodes, &out_dir, a)
        }
        BundleName::Table3Grid3 => {
            let demos = a.demos.unwrap_or(400);
            method_table(EnvKind::GridWorld { n_objects: 3 }, demos, &seeds, episodes, &out_dir, a)
        }
        BundleName::Table4Variations => {
            let demos = a.demos.unwrap_or(400);
            variations_table(demos, &seeds, episodes, &out_dir)
        }
        BundleName::Fig3Ksweep => {
            let demos = a.demos.unwrap_or(400);
            ksweep(demos, &seeds, episodes, &out_dir)
        }
    }
}

fn selected_methods(a: &ReproduceArgs) -> Result<Vec<MethodKind>> {
    match &a.methods {
        None => Ok(MethodKind::ALL.to_vec()),
        Some(s) => s.split(',').map(|p| MethodKind::parse(p.trim())).collect(),
    }
}

/// Train one seed and evaluate the resulting checkpoint; artifacts land in
/// `<out_dir>/<seed>/<method>/`.
fn train_and_eval(
    cfg: &TrainConfig,
    dataset: &DemoDataset,
    eval_env: &Env,
    episodes: usize,
    out_dir: &Path,
) -> Result<EvalOutcome> {
    let dir = out_dir
        .join(cfg.seed.to_string())
        .join(cfg.method.to_string());
    std::fs::create_dir_all(&dir)?;
    let (bundle, trace) = train(cfg, dataset)?;
    let ckpt = dir.join("model.ckpt");
    save_bundle(&ckpt, &bundle)?;
    trace.save_csv(&dir.join("trace.csv"))?;
    let mut outcome = evaluate(&bundle, eval_env, episodes, derive_seed(cfg.seed, 0xE7A1))?;
    // Report rows are keyed by training seed.
    outcome.seed = cfg.seed;
    let mut m = RunManifest::new("reproduce", serde_json::to_value(cfg)?, cfg.seed);
    m.add_output(&ckpt)?;
    m.save(&dir.join("manifest.json"))?;
    Ok(outcome)
}

fn method_table(
    kind: EnvKind,
    demos: usize,
    seeds: &[u64],
    episodes: usize,
    out_dir: &Path,
    a: &ReproduceArgs,
) -> Result<()> {
    let ds = label_with_oracle(&generate_demos(kind, demos, DATA_SEED, None)?)?;
    let env = Env::with_order(kind, ds.order.clone())?;
    let mut reports = Vec::new();
    for method in selected_methods(a)? {
        let mut outcomes = Vec::new();
        for &seed in seeds {
            let mut cfg = TrainConfig::tuned(method, kind);
            cfg.seed = seed;
            outcomes.push(train_and_eval(&cfg, &ds, &env, episodes, out_dir)?);
        }
        let report = EvalReport::from_outcomes(method, kind, demos, outcomes, 0.0);
        report.save_json(&out_dir.join(format!("{method}.json")))?;
        println!("{method}: {:.3} ± {:.3}", report.mean, report.std);
        reports.push(report);
    }
    write_summary_csv(&out_dir.join("summary.csv"), &reports, None)
}

fn variations_table(
    demos: usize,
    seeds: &[u64],
    episodes: usize,
    out_dir: &Path,
) -> Result<()> {
    let kind = EnvKind::GridWorld { n_objects: 3 };
    let base = label_with_oracle(&generate_demos(kind, demos, DATA_SEED, None)?)?;
    let mut reports = Vec::new();
    let mut labels = Vec::new();
    for order_s in ["ABC", "ACB", "BAC", "BCA"] {
        let order = PickupOrder::parse(order_s)?;
        // The few-shot variant demonstrations are mixed into the base set;
        // the base order's own row trains on the base set alone.
        let mut ds = base.clone();
        if order != base.order {
            let few = label_with_oracle(&generate_demos(
                kind,
                10,
                derive_seed(DATA_SEED, 7),
                Some(order.clone()),
            )?)?;
            ds.trajectories.extend(few.trajectories);
        }
        let env = Env::with_order(kind, order.clone())?;
        let mut outcomes = Vec::new();
        for &seed in seeds {
            let mut cfg = TrainConfig::tuned(MethodKind::Seal, kind);
            cfg.seed = seed;
            cfg.order = order.clone();
            outcomes.push(train_and_eval(
                &cfg,
                &ds,
                &env,
                episodes,
                &out_dir.join(order_s),
            )?);
        }
        let report = EvalReport::from_outcomes(MethodKind::Seal, kind, demos, outcomes, 0.0);
        report.save_json(&out_dir.join(format!("seal-{order_s}.json")))?;
        println!("seal {order_s}: {:.3} ± {:.3}", report.mean, report.std);
        reports.push(report);
        labels.push(order_s.to_string());
    }
    write_summary_csv(&out_dir.join("summary.csv"), &reports, Some(&labels))
}

fn ksweep(demos: usize, seeds: &[u64], episodes: usize, out_dir: &Path) -> Result<()> {
    let kind = EnvKind::GridWorld { n_objects: 3 };
    let ds = generate_demos(kind, demos, DATA_SEED, None)?;
    let k_values = [2, 4, 6, 8, 10];
    let mut rows = Vec::new();
    for method in [MethodKind::Lisa, MethodKind::Sdil] {
        let base = TrainConfig::tuned(method, kind);
        rows.extend(sweep_k(method, &ds, &k_values, seeds, &base, episodes)?);
    }
    write_sweep_csv(&out_dir.join("sweep.csv"), &rows)?;
    println!("wrote {} sweep cells", rows.len());
    Ok(())
}

fn write_summary_csv(
    path: &Path,
    reports: &[EvalReport],
    labels: Option<&[String]>,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "label,method,env,n_demos,mean,std,per_seed")?;
    for (i, r) in reports.iter().enumerate() {
        let label = labels.map_or_else(|| r.method.to_string(), |l| l[i].clone());
        let per_seed: Vec<String> = r
            .per_seed
            .iter()
            .map(|o| format!("{}", o.success_rate))
            .collect();
        writeln!(
            f,
            "{label},{},{},{},{},{},{}",
            r.method,
            r.kind,
            r.n_demos,
            r.mean,
            r.std,
            per_seed.join(";")
        )?;
    }
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "method,k,n_demos,seed,success_rate")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.method, r.k, r.n_demos, r.seed, r.success_rate
        )?;
    }
    Ok(())
}
