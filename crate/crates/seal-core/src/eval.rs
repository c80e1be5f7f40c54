//! Post-training measurement: full-task success, per-sub-goal completion,
//! K-sweeps, and per-step sub-goal traces.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::MethodKind;
use crate::env::{encode, is_success, Action, Env, EnvKind, EnvState, HORIZON};
use crate::error::{Result, SealError};
use crate::expert::oracle_subgoal;
use crate::model::{combine, Actor, Branch, ModelBundle};
use crate::nn::argmax;

/// Mix a base seed with a stream index (splitmix64 finalizer) so derived
/// episode seeds are decorrelated but reproducible.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One finished episode: outcome plus which status bits were ever attained.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub success: bool,
    pub attained: Vec<u8>,
    pub steps: usize,
}

/// Roll an arbitrary deterministic policy for one episode.
pub fn rollout<F>(env: &Env, seed: u64, mut policy: F) -> Result<EpisodeResult>
where
    F: FnMut(&EnvState) -> Result<Action>,
{
    let mut state = env.reset(seed);
    let mut attained = state.statuses.clone();
    while !is_success(&state) && state.step_count < HORIZON {
        let action = policy(&state)?;
        let outcome = env.step(&state, action)?;
        state = outcome.next_state;
        for (a, &b) in attained.iter_mut().zip(&state.statuses) {
            *a |= b;
        }
        if outcome.done {
            break;
        }
    }
    Ok(EpisodeResult {
        success: is_success(&state),
        attained,
        steps: state.step_count,
    })
}

/// Roll a model's policy for one episode.
pub fn run_episode(
    bundle: &ModelBundle,
    branch: Branch,
    env: &Env,
    seed: u64,
) -> Result<EpisodeResult> {
    check_kind(bundle, env)?;
    let mut actor = Actor::new(bundle, branch);
    rollout(env, seed, move |state| {
        let a = actor.act(&encode(state))?;
        Action::from_index(a).ok_or_else(|| SealError::Config(format!("bad action index {a}")))
    })
}

fn check_kind(bundle: &ModelBundle, env: &Env) -> Result<()> {
    if bundle.meta.kind != env.kind {
        return Err(SealError::KindMismatch(format!(
            "checkpoint is for {}, environment is {}",
            bundle.meta.kind, env.kind
        )));
    }
    Ok(())
}

/// One seed's evaluation: success fraction plus per-status-bit completion
/// rates (environment progress, independent of encoder output).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub seed: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub subgoal_rates: Vec<f64>,
}

pub fn evaluate(
    bundle: &ModelBundle,
    env: &Env,
    episodes: usize,
    seed: u64,
) -> Result<EvalOutcome> {
    check_kind(bundle, env)?;
    if episodes == 0 {
        return Err(SealError::Config("evaluation needs at least one episode".into()));
    }
    let mut successes = 0usize;
    let mut bits = vec![0usize; bundle.meta.kind.n_statuses()];
    for i in 0..episodes {
        let r = run_episode(bundle, Branch::Default, env, derive_seed(seed, i as u64))?;
        successes += usize::from(r.success);
        for (acc, &b) in bits.iter_mut().zip(&r.attained) {
            *acc += usize::from(b == 1);
        }
    }
    let n = episodes as f64;
    Ok(EvalOutcome {
        seed,
        episodes,
        success_rate: successes as f64 / n,
        subgoal_rates: bits.iter().map(|&c| c as f64 / n).collect(),
    })
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregated report across seeds, in the shape of the paper tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: MethodKind,
    pub kind: EnvKind,
    pub n_demos: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<EvalOutcome>,
    pub mean: f64,
    pub std: f64,
    pub subgoal_mean: Vec<f64>,
    pub subgoal_std: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl EvalReport {
    pub fn from_outcomes(
        method: MethodKind,
        kind: EnvKind,
        n_demos: usize,
        per_seed: Vec<EvalOutcome>,
        wall_clock_secs: f64,
    ) -> Self {
        assert!(!per_seed.is_empty());
        let seeds = per_seed.iter().map(|o| o.seed).collect();
        let rates: Vec<f64> = per_seed.iter().map(|o| o.success_rate).collect();
        let (mean, std) = mean_std(&rates);
        let n_bits = per_seed[0].subgoal_rates.len();
        let mut subgoal_mean = Vec::with_capacity(n_bits);
        let mut subgoal_std = Vec::with_capacity(n_bits);
        for b in 0..n_bits {
            let col: Vec<f64> = per_seed.iter().map(|o| o.subgoal_rates[b]).collect();
            let (m, s) = mean_std(&col);
            subgoal_mean.push(m);
            subgoal_std.push(s);
        }
        EvalReport {
            method,
            kind,
            n_demos,
            seeds,
            per_seed,
            mean,
            std,
            subgoal_mean,
            subgoal_std,
            wall_clock_secs,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    /// Flat CSV: one row per seed plus an aggregate row.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "method,env,n_demos,seed,success_rate,subgoal_rates")?;
        for o in &self.per_seed {
            let bits: Vec<String> = o.subgoal_rates.iter().map(|r| format!("{r}")).collect();
            writeln!(
                f,
                "{},{},{},{},{},{}",
                self.method,
                self.kind,
                self.n_demos,
                o.seed,
                o.success_rate,
                bits.join(";")
            )?;
        }
        writeln!(
            f,
            "{},{},{},mean±std,{}±{},",
            self.method, self.kind, self.n_demos, self.mean, self.std
        )?;
        Ok(())
    }
}

/// One K-sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: MethodKind,
    pub k: usize,
    pub n_demos: usize,
    pub seed: u64,
    pub success_rate: f64,
}

/// Train the unsupervised baselines over a grid of codebook sizes and
/// evaluate each cell.
pub fn sweep_k(
    method: MethodKind,
    dataset: &crate::data::DemoDataset,
    k_values: &[usize],
    seeds: &[u64],
    base: &crate::trainer::TrainConfig,
    episodes: usize,
) -> Result<Vec<SweepRow>> {
    if !matches!(method, MethodKind::Lisa | MethodKind::Sdil) {
        return Err(SealError::Config(format!(
            "K-sweep applies to the unsupervised baselines, not {method}"
        )));
    }
    if let Some(&k) = k_values.iter().find(|&&k| !(2..=12).contains(&k)) {
        return Err(SealError::Config(format!("K={k} outside the [2, 12] sweep range")));
    }
    let env = Env::with_order(dataset.kind, dataset.order.clone())?;
    let mut rows = Vec::new();
    for &k in k_values {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.method = method;
            cfg.seed = seed;
            cfg.k_override = Some(k);
            let (bundle, _) = crate::trainer::train(&cfg, dataset)?;
            let outcome = evaluate(&bundle, &env, episodes, derive_seed(seed, 0xE7A1))?;
            rows.push(SweepRow {
                method,
                k,
                n_demos: dataset.trajectories.len(),
                seed,
                success_rate: outcome.success_rate,
            });
        }
    }
    Ok(rows)
}

/// One traced step: branch sub-goal choices next to the oracle ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub state: EnvState,
    pub action: usize,
    pub z_vq: Option<usize>,
    pub z_llm: Option<usize>,
    pub combined: Vec<f64>,
    pub oracle: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgoalTrace {
    pub seed: u64,
    pub success: bool,
    pub steps: Vec<TraceStep>,
}

impl SubgoalTrace {
    /// Fraction of steps whose combined sub-goal matches the oracle.
    pub fn oracle_accuracy(&self) -> Option<f64> {
        if self.steps.is_empty() || self.steps.iter().any(|s| s.combined.is_empty()) {
            return None;
        }
        let hits = self
            .steps
            .iter()
            .filter(|s| argmax(&s.combined) == s.oracle)
            .count();
        Some(hits as f64 / self.steps.len() as f64)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for step in &self.steps {
            writeln!(f, "{}", serde_json::to_string(step)?)?;
        }
        Ok(())
    }
}

/// Roll one episode recording per-step branch and combined sub-goal choices.
pub fn trace_episode(bundle: &ModelBundle, env: &Env, seed: u64) -> Result<SubgoalTrace> {
    check_kind(bundle, env)?;
    let k = bundle.meta.k;
    let mut actor = Actor::new(bundle, Branch::Default);
    let mut state = env.reset(seed);
    let mut steps = Vec::new();
    while !is_success(&state) && state.step_count < HORIZON {
        let obs = encode(&state);
        let z_vq = match bundle.meta.enc_vq {
            Some(_) => Some(bundle.encode_vq(&obs)?.1),
            None => None,
        };
        let z_llm = match bundle.meta.enc_llm {
            Some(_) => Some(bundle.encode_llm(&obs)?.1),
            None => None,
        };
        let combined = match (z_vq, z_llm) {
            (Some(v), Some(l)) => combine(
                &crate::expert::onehot(v, k),
                &crate::expert::onehot(l, k),
                bundle.meta.weights,
            ),
            (Some(v), None) => crate::expert::onehot(v, k),
            (None, Some(l)) => crate::expert::onehot(l, k),
            (None, None) => Vec::new(),
        };
        let a = actor.act(&obs)?;
        let action = Action::from_index(a)
            .ok_or_else(|| SealError::Config(format!("bad action index {a}")))?;
        steps.push(TraceStep {
            t: state.step_count,
            state: state.clone(),
            action: a,
            z_vq,
            z_llm,
            combined,
            oracle: oracle_subgoal(env, &state),
        });
        let outcome = env.step(&state, action)?;
        state = outcome.next_state;
        if outcome.done {
            break;
        }
    }
    Ok(SubgoalTrace {
        seed,
        success: is_success(&state),
        steps,
    })
}

/// Convenience: evaluate one trained bundle over several seeds.
pub fn evaluate_seeds(
    bundle: &ModelBundle,
    env: &Env,
    episodes: usize,
    seeds: &[u64],
    n_demos: usize,
) -> Result<EvalReport> {
    let start = Instant::now();
    let per_seed = seeds
        .iter()
        .map(|&s| evaluate(bundle, env, episodes, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_outcomes(
        bundle.meta.method,
        bundle.meta.kind,
        n_demos,
        per_seed,
        start.elapsed().as_secs_f64(),
    ))
}
