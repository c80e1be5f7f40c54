//! Checkpoint format: one JSON header line describing the model (method,
//! environment binding, network layouts, confidence weights, sub-goal space
//! hash, tensor shapes), followed by every parameter tensor's f64 values in
//! little-endian row-major order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SealError};
use crate::model::{BundleMeta, ModelBundle};
use crate::nn::ParamSet;

const MAGIC: &str = "seal-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    meta: BundleMeta,
    shapes: Vec<(usize, usize)>,
}

pub fn save_bundle(path: &Path, bundle: &ModelBundle) -> Result<()> {
    let header = Header {
        magic: MAGIC.to_string(),
        meta: bundle.meta.clone(),
        shapes: bundle
            .params
            .tensors
            .iter()
            .map(|t| (t.nrows(), t.ncols()))
            .collect(),
    };
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n")?;
    let mut buf = Vec::new();
    for t in &bundle.params.tensors {
        for &v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let f = std::fs::File::open(path)?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| SealError::Checkpoint(format!("bad header: {e}")))?;
    if header.magic != MAGIC {
        return Err(SealError::Checkpoint(format!(
            "unrecognized magic {:?}",
            header.magic
        )));
    }
    let mut params = ParamSet::default();
    for &(rows, cols) in &header.shapes {
        let mut bytes = vec![0u8; rows * cols * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| SealError::Checkpoint("truncated parameter block".into()))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| SealError::Checkpoint(format!("bad tensor shape: {e}")))?;
        params.add(t);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(SealError::Checkpoint("trailing bytes after parameters".into()));
    }
    let bundle = ModelBundle {
        meta: header.meta,
        params,
    };
    let expected: Vec<(usize, usize)> = header.shapes;
    let n_params = bundle.params.len();
    if expected.len() != n_params {
        return Err(SealError::Checkpoint("shape table mismatch".into()));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::MethodKind;
    use crate::env::{EnvKind, PickupOrder};

    fn bundle() -> ModelBundle {
        ModelBundle::new(
            MethodKind::Seal,
            EnvKind::KeyDoor,
            PickupOrder::identity(2),
            4,
            &[8, 8],
            "abc123".into(),
            99,
        )
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let b = bundle();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_bundle(&path, &b).unwrap();
        let loaded = load_bundle(&path).unwrap();
        assert_eq!(loaded, b);

        // Saving the loaded bundle reproduces the file byte for byte.
        let path2 = dir.path().join("model2.ckpt");
        save_bundle(&path2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn truncated_file_is_rejected() {
        let b = bundle();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_bundle(&path, &b).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 17]).unwrap();
        assert!(matches!(
            load_bundle(&path),
            Err(SealError::Checkpoint(_))
        ));
    }

    #[test]
    fn garbage_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"not json\n").unwrap();
        assert!(load_bundle(&path).is_err());
    }
}
