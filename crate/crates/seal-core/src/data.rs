//! Expert demonstration datasets and their JSONL serialization.
//!
//! One trajectory per line: `{kind, order, steps:[{state, action}], labels,
//! success}`. States store raw integer coordinates so that label backends see
//! human-readable values; the 1/9 scaling only happens in [`crate::env::encode`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvKind, EnvState, PickupOrder};
use crate::error::{Result, SealError};

/// One (state, action) pair of an expert trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajStep {
    pub state: EnvState,
    pub action: Action,
}

/// An expert trajectory, optionally annotated with reference sub-goal label
/// indices (the one-hot vector z_ref is the index's basis vector).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A set of demonstrations sharing one environment kind and pick-up order.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub kind: EnvKind,
    pub order: PickupOrder,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    kind: EnvKind,
    order: PickupOrder,
    steps: Vec<TrajStep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
    success: bool,
}

impl DemoDataset {
    pub fn is_labeled(&self) -> bool {
        self.trajectories.iter().all(|t| t.labels.is_some())
    }

    /// Total number of (state, action) samples.
    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for traj in &self.trajectories {
            let rec = TrajectoryRecord {
                kind: self.kind,
                order: self.order.clone(),
                steps: traj.steps.clone(),
                labels: traj.labels.clone(),
                success: traj.success,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut kind: Option<EnvKind> = None;
        let mut order: Option<PickupOrder> = None;
        let mut trajectories = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrajectoryRecord = serde_json::from_str(&line)?;
            match kind {
                None => {
                    kind = Some(rec.kind);
                    order = Some(rec.order.clone());
                }
                Some(k) => {
                    if k != rec.kind || order.as_ref() != Some(&rec.order) {
                        return Err(SealError::Config(
                            "dataset mixes environment kinds or pick-up orders".into(),
                        ));
                    }
                }
            }
            trajectories.push(Trajectory {
                steps: rec.steps,
                labels: rec.labels,
                success: rec.success,
            });
        }
        let kind = kind.ok_or_else(|| SealError::Config("empty dataset file".into()))?;
        Ok(DemoDataset {
            kind,
            order: order.unwrap(),
            trajectories,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::generate_demos;

    #[test]
    fn jsonl_round_trip() {
        let ds = generate_demos(EnvKind::KeyDoor, 5, 11, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        ds.save_jsonl(&path).unwrap();
        let back = DemoDataset::load_jsonl(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn load_rejects_mixed_kinds() {
        let a = generate_demos(EnvKind::KeyDoor, 1, 0, None).unwrap();
        let b = generate_demos(EnvKind::GridWorld { n_objects: 3 }, 1, 0, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.jsonl");
        let pb = dir.path().join("b.jsonl");
        a.save_jsonl(&pa).unwrap();
        b.save_jsonl(&pb).unwrap();
        let mixed = dir.path().join("mixed.jsonl");
        let text = std::fs::read_to_string(&pa).unwrap() + &std::fs::read_to_string(&pb).unwrap();
        std::fs::write(&mixed, text).unwrap();
        assert!(DemoDataset::load_jsonl(&mixed).is_err());
    }
}
