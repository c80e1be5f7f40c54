//! The dual-encoder architecture and its losses.
//!
//! A supervised encoder trained on reference labels and an unsupervised
//! vector-quantized encoder over the fixed one-hot codebook jointly predict
//! the sub-goal; their hard outputs are blended by confidence weights. The
//! low-level policy consumes state plus sub-goal vector, with transitions
//! between sub-goals up-weighted by a factor e in its imitation loss.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::MethodKind;
use crate::data::DemoDataset;
use crate::env::{encode, EnvKind, PickupOrder};
use crate::error::{Result, SealError};
use crate::expert::onehot;
use crate::labeler::Codebook;
use crate::nn::{argmax, Mlp, NodeId, ParamSet, Tape};

/// Normalized per-branch confidences (w_vq + w_llm = 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceWeights {
    pub w_vq: f64,
    pub w_llm: f64,
}

impl ConfidenceWeights {
    pub fn new(w_vq: f64, w_llm: f64) -> Result<Self> {
        if w_vq < 0.0 || w_llm < 0.0 || (w_vq + w_llm - 1.0).abs() > 1e-12 {
            return Err(SealError::Config(format!(
                "invalid confidence weights ({w_vq}, {w_llm})"
            )));
        }
        Ok(ConfidenceWeights { w_vq, w_llm })
    }

    pub fn balanced() -> Self {
        ConfidenceWeights {
            w_vq: 0.5,
            w_llm: 0.5,
        }
    }

    pub fn llm_only() -> Self {
        ConfidenceWeights {
            w_vq: 0.0,
            w_llm: 1.0,
        }
    }

    pub fn vq_only() -> Self {
        ConfidenceWeights {
            w_vq: 1.0,
            w_llm: 0.0,
        }
    }
}

/// Nearest-codebook index. For the fixed one-hot codebook the squared
/// Euclidean argmin reduces to the largest component (ties to lowest index).
pub fn quantize(z_con: &[f64]) -> usize {
    argmax(z_con)
}

/// Adaptive transition weight: e when the hard labels differ, 1 when they
/// agree. Distinct one-hot vectors sit at squared distance 2, so half of it
/// in the exponent lands exactly on {1, e}.
pub fn transition_weight(z_t: &[f64], z_next: &[f64]) -> f64 {
    let d2: f64 = z_t
        .iter()
        .zip(z_next)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (d2 / 2.0).exp()
}

fn transition_weight_idx(current: usize, next: Option<usize>) -> f64 {
    match next {
        // Trajectory-final step has no successor: neutral weight.
        None => 1.0,
        Some(n) if n == current => 1.0,
        Some(_) => std::f64::consts::E,
    }
}

/// Weighted combination of the two branch outputs; stays on the K-simplex
/// when both inputs are one-hot.
pub fn combine(z_vq: &[f64], z_llm: &[f64], w: ConfidenceWeights) -> Vec<f64> {
    z_vq.iter()
        .zip(z_llm)
        .map(|(a, b)| w.w_vq * a + w.w_llm * b)
        .collect()
}

/// One training sample: a demonstration step with its annotations.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub obs: Vec<f64>,
    pub action: usize,
    /// Reference sub-goal label (present on labeled datasets).
    pub ref_label: Option<usize>,
    /// Previous step's reference label within the trajectory (thought input).
    pub prev_ref: Option<usize>,
    /// Next step's observation; None at trajectory end.
    pub next_obs: Option<Vec<f64>>,
    /// Next step's reference label.
    pub next_ref: Option<usize>,
}

/// Flatten a dataset into per-step training samples.
pub fn samples_from_dataset(dataset: &DemoDataset) -> Vec<TrainSample> {
    let mut out = Vec::with_capacity(dataset.n_steps());
    for traj in &dataset.trajectories {
        let labels = traj.labels.as_deref();
        for (t, step) in traj.steps.iter().enumerate() {
            let at = |i: usize| labels.and_then(|l| l.get(i).copied());
            out.push(TrainSample {
                obs: encode(&step.state),
                action: step.action.index(),
                ref_label: at(t),
                prev_ref: if t > 0 { at(t - 1) } else { None },
                next_obs: traj.steps.get(t + 1).map(|s| encode(&s.state)),
                next_ref: at(t + 1),
            });
        }
    }
    out
}

/// Serializable description of a model: method, environment binding, network
/// layouts and confidence weights. Parameters live in the companion
/// [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub method: MethodKind,
    pub kind: EnvKind,
    pub order: PickupOrder,
    pub k: usize,
    pub enc_vq: Option<Mlp>,
    pub enc_llm: Option<Mlp>,
    pub thought: Option<Mlp>,
    pub policy: Mlp,
    pub weights: ConfidenceWeights,
    pub space_hash: String,
    pub seed: u64,
    pub step: u64,
}

/// A full model: meta plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub meta: BundleMeta,
    pub params: ParamSet,
}

impl ModelBundle {
    /// Allocate the networks a method needs, seeded.
    pub fn new(
        method: MethodKind,
        kind: EnvKind,
        order: PickupOrder,
        k: usize,
        hidden: &[usize],
        space_hash: String,
        seed: u64,
    ) -> Self {
        let mut params = ParamSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = kind.obs_len();
        let acts = kind.n_actions();
        let mk = |p: &mut ParamSet, rng: &mut ChaCha8Rng, i: usize, o: usize| {
            Mlp::new(i, hidden, o, p, rng)
        };
        let (enc_vq, enc_llm, thought, policy, weights) = match method {
            MethodKind::Bc => (
                None,
                None,
                None,
                mk(&mut params, &mut rng, obs, acts),
                ConfidenceWeights::balanced(),
            ),
            MethodKind::Lisa | MethodKind::Sdil => (
                Some(mk(&mut params, &mut rng, obs, k)),
                None,
                None,
                mk(&mut params, &mut rng, obs + k, acts),
                ConfidenceWeights::vq_only(),
            ),
            MethodKind::Tc => (
                None,
                None,
                Some(mk(&mut params, &mut rng, obs + k, k)),
                mk(&mut params, &mut rng, obs + k, acts),
                ConfidenceWeights::llm_only(),
            ),
            MethodKind::SealL => (
                None,
                Some(mk(&mut params, &mut rng, obs, k)),
                None,
                mk(&mut params, &mut rng, obs + k, acts),
                ConfidenceWeights::llm_only(),
            ),
            MethodKind::Seal => (
                Some(mk(&mut params, &mut rng, obs, k)),
                Some(mk(&mut params, &mut rng, obs, k)),
                None,
                mk(&mut params, &mut rng, obs + k, acts),
                ConfidenceWeights::balanced(),
            ),
        };
        ModelBundle {
            meta: BundleMeta {
                method,
                kind,
                order,
                k,
                enc_vq,
                enc_llm,
                thought,
                policy,
                weights,
                space_hash,
                seed,
                step: 0,
            },
            params,
        }
    }

    pub fn codebook(&self) -> Codebook {
        Codebook::new(self.meta.k)
    }

    /// Supervised-encoder prediction: (logits, hard index at argmax).
    pub fn encode_llm(&self, obs: &[f64]) -> Result<(Vec<f64>, usize)> {
        let enc = self
            .meta
            .enc_llm
            .as_ref()
            .ok_or_else(|| SealError::Config("model has no supervised encoder".into()))?;
        let logits = enc.infer(&self.params, obs)?;
        let idx = argmax(&logits);
        Ok((logits, idx))
    }

    /// VQ-encoder prediction: (continuous output, quantized index).
    pub fn encode_vq(&self, obs: &[f64]) -> Result<(Vec<f64>, usize)> {
        let enc = self
            .meta
            .enc_vq
            .as_ref()
            .ok_or_else(|| SealError::Config("model has no VQ encoder".into()))?;
        let z_con = enc.infer(&self.params, obs)?;
        let idx = quantize(&z_con);
        Ok((z_con, idx))
    }
}

/// Which sub-goal source drives action selection during a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Method-default inference (combined z for SEAL).
    Default,
    /// Condition only on the quantized branch (a^(vq)).
    Vq,
    /// Condition only on the supervised branch (a^(llm)).
    Llm,
}

/// Deterministic policy actor for rollouts. TC threads its previous
/// predicted thought between steps, so the actor is stateful; call
/// [`Actor::reset`] between episodes.
pub struct Actor<'a> {
    bundle: &'a ModelBundle,
    branch: Branch,
    prev_thought: Option<usize>,
}

impl<'a> Actor<'a> {
    pub fn new(bundle: &'a ModelBundle, branch: Branch) -> Self {
        Actor {
            bundle,
            branch,
            prev_thought: None,
        }
    }

    pub fn reset(&mut self) {
        self.prev_thought = None;
    }

    /// Argmax action for an observation.
    pub fn act(&mut self, obs: &[f64]) -> Result<usize> {
        let m = &self.bundle.meta;
        let k = m.k;
        let z: Option<Vec<f64>> = match (m.method, self.branch) {
            (MethodKind::Bc, _) => None,
            (_, Branch::Vq) => Some(onehot(self.bundle.encode_vq(obs)?.1, k)),
            (_, Branch::Llm) => Some(onehot(self.bundle.encode_llm(obs)?.1, k)),
            (MethodKind::Lisa, Branch::Default) => {
                Some(onehot(self.bundle.encode_vq(obs)?.1, k))
            }
            (MethodKind::Sdil, Branch::Default) => {
                // Inference: plain argmax of the inverse-distance selection,
                // which coincides with the nearest entry.
                let (z_con, _) = self.bundle.encode_vq(obs)?;
                let probs = crate::nn::inv_dist_probs_rows(
                    &Array2::from_shape_vec((1, k), z_con).expect("row"),
                    SDIL_DIST_EPS,
                );
                Some(onehot(argmax(&probs.row(0).to_vec()), k))
            }
            (MethodKind::Tc, Branch::Default) => {
                let thought = m.thought.as_ref().expect("tc has a thought generator");
                let prev = match self.prev_thought {
                    Some(i) => onehot(i, k),
                    None => vec![0.0; k],
                };
                let mut input = obs.to_vec();
                input.extend_from_slice(&prev);
                let logits = thought.infer(&self.bundle.params, &input)?;
                let idx = argmax(&logits);
                self.prev_thought = Some(idx);
                Some(onehot(idx, k))
            }
            (MethodKind::SealL, Branch::Default) => {
                Some(onehot(self.bundle.encode_llm(obs)?.1, k))
            }
            (MethodKind::Seal, Branch::Default) => {
                let z_vq = onehot(self.bundle.encode_vq(obs)?.1, k);
                let z_llm = onehot(self.bundle.encode_llm(obs)?.1, k);
                Some(combine(&z_vq, &z_llm, m.weights))
            }
        };
        let input = match z {
            Some(z) => {
                let mut v = obs.to_vec();
                v.extend_from_slice(&z);
                v
            }
            None => obs.to_vec(),
        };
        let logits = m.policy.infer(&self.bundle.params, &input)?;
        Ok(argmax(&logits))
    }
}

/// Distance guard for the inverse-distance selection.
pub const SDIL_DIST_EPS: f64 = 1e-8;

/// Per-branch loss values of one optimization step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_h_llm: Option<f64>,
    pub l_h_vq: Option<f64>,
    pub l_l_llm: Option<f64>,
    pub l_l_vq: Option<f64>,
}

pub(crate) fn batch_matrix(samples: &[&TrainSample]) -> Array2<f64> {
    let cols = samples[0].obs.len();
    let mut m = Array2::zeros((samples.len(), cols));
    for (r, s) in samples.iter().enumerate() {
        for (c, &v) in s.obs.iter().enumerate() {
            m[[r, c]] = v;
        }
    }
    m
}

fn onehot_matrix(indices: &[usize], k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((indices.len(), k));
    for (r, &i) in indices.iter().enumerate() {
        m[[r, i]] = 1.0;
    }
    m
}

/// Hard branch labels at t and t+1 under the current encoder, for the
/// transition weights. Computed detached: the weight is a constant factor.
pub(crate) fn branch_transition_weights(
    enc: &Mlp,
    params: &ParamSet,
    samples: &[&TrainSample],
    current: &[usize],
) -> Vec<f64> {
    samples
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let next = s.next_obs.as_ref().map(|nobs| {
                let logits = enc.infer(params, nobs).expect("encoder accepts obs");
                argmax(&logits)
            });
            transition_weight_idx(current[r], next)
        })
        .collect()
}

/// One SEAL branch on the tape: high-level loss plus transition-weighted
/// low-level loss. Returns (l_h, l_l) nodes.
struct BranchNodes {
    l_h: NodeId,
    l_l: NodeId,
}

fn vq_branch(
    tape: &mut Tape,
    bundle: &ModelBundle,
    x: NodeId,
    samples: &[&TrainSample],
    actions: Vec<usize>,
) -> BranchNodes {
    let enc = bundle.meta.enc_vq.as_ref().expect("vq branch needs enc_vq");
    let z_con = enc.forward(tape, &bundle.params, x);
    let hard: Vec<usize> = (0..samples.len())
        .map(|r| quantize(&tape.value(z_con).row(r).to_vec()))
        .collect();
    let hard_m = onehot_matrix(&hard, bundle.meta.k);

    // Commitment: ||sq(z_vq) - z_con||^2; the codebook entry is frozen.
    let z_vq = tape.straight_through(z_con, hard_m.clone());
    let sq = tape.stop_grad(z_vq);
    let l_h = tape.sq_dist_mean(sq, z_con);

    // Policy on straight-through quantized input.
    let st = tape.straight_through(z_con, hard_m);
    let input = tape.concat(x, st);
    let logits = bundle.meta.policy.forward(tape, &bundle.params, input);
    let weights = branch_transition_weights(enc, &bundle.params, samples, &hard);
    let l_l = tape.cross_entropy_mean(logits, actions, weights);
    BranchNodes { l_h, l_l }
}

fn llm_branch(
    tape: &mut Tape,
    bundle: &ModelBundle,
    x: NodeId,
    samples: &[&TrainSample],
    actions: Vec<usize>,
    refs: &[usize],
) -> BranchNodes {
    let enc = bundle
        .meta
        .enc_llm
        .as_ref()
        .expect("llm branch needs enc_llm");
    let logits_h = enc.forward(tape, &bundle.params, x);
    let ones = vec![1.0; samples.len()];
    let l_h = tape.cross_entropy_mean(logits_h, refs.to_vec(), ones);

    let hard: Vec<usize> = (0..samples.len())
        .map(|r| argmax(&tape.value(logits_h).row(r).to_vec()))
        .collect();
    let st = tape.straight_through(logits_h, onehot_matrix(&hard, bundle.meta.k));
    let input = tape.concat(x, st);
    let logits_l = bundle.meta.policy.forward(tape, &bundle.params, input);
    let weights = branch_transition_weights(enc, &bundle.params, samples, &hard);
    let l_l = tape.cross_entropy_mean(logits_l, actions, weights);
    BranchNodes { l_h, l_l }
}

/// The combined loss with per-branch breakdown and parameter gradients.
/// SEAL runs both branches weighted by the confidences; SEAL-L is the
/// supervised branch alone.
pub fn seal_loss_and_grads(
    bundle: &ModelBundle,
    samples: &[&TrainSample],
    beta: f64,
) -> Result<(LossBreakdown, Vec<Array2<f64>>)> {
    let refs: Vec<usize> = samples
        .iter()
        .map(|s| {
            s.ref_label
                .ok_or_else(|| SealError::Config("method requires a labeled dataset".into()))
        })
        .collect::<Result<_>>()?;
    let actions: Vec<usize> = samples.iter().map(|s| s.action).collect();
    let w = bundle.meta.weights;

    let mut tape = Tape::new();
    let x = tape.input(batch_matrix(samples));

    let mut breakdown = LossBreakdown::default();
    let mut branch_totals: Vec<(NodeId, f64)> = Vec::new();

    if bundle.meta.enc_vq.is_some() && w.w_vq > 0.0 {
        let b = vq_branch(&mut tape, bundle, x, samples, actions.clone());
        let scaled = tape.scale(b.l_h, beta);
        let total = tape.add(scaled, b.l_l);
        breakdown.l_h_vq = Some(tape.scalar(b.l_h));
        breakdown.l_l_vq = Some(tape.scalar(b.l_l));
        branch_totals.push((total, w.w_vq));
    }
    if bundle.meta.enc_llm.is_some() && w.w_llm > 0.0 {
        let b = llm_branch(&mut tape, bundle, x, samples, actions, &refs);
        let scaled = tape.scale(b.l_h, beta);
        let total = tape.add(scaled, b.l_l);
        breakdown.l_h_llm = Some(tape.scalar(b.l_h));
        breakdown.l_l_llm = Some(tape.scalar(b.l_l));
        branch_totals.push((total, w.w_llm));
    }
    let loss = match branch_totals.len() {
        1 => {
            let (node, weight) = branch_totals[0];
            tape.scale(node, weight)
        }
        2 => {
            let a = tape.scale(branch_totals[0].0, branch_totals[0].1);
            let b = tape.scale(branch_totals[1].0, branch_totals[1].1);
            tape.add(a, b)
        }
        _ => return Err(SealError::Config("model has no active branch".into())),
    };
    breakdown.total = tape.scalar(loss);
    let grads = tape.backward(loss, &bundle.params);
    Ok((breakdown, grads))
}
