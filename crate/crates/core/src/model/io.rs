//! Model artifact format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  "HWKM"                           4 bytes
//! u32    format version (currently 1)
//! u32    metadata length in bytes
//! bytes  metadata: JSON {n_classes, n_features, config, thresholds, n_rounds}
//! trees  n_rounds × n_classes blobs, round-major, class-minor:
//!          u32 node_count
//!          node_count × {u32 feature; f64 threshold; u32 left; u32 right; f64 value}
//! ```
//!
//! `feature == 0xFFFF_FFFF` marks a leaf. The file is strict: short reads,
//! unknown versions, and trailing bytes are all format errors, so a loaded
//! model reproduces the saved model's predictions bit-for-bit or fails.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, param, Result};
use crate::model::gbdt::{Tree, TreeNode, LEAF_FEATURE};
use crate::model::{EventClassifier, TrainConfig};

pub const MODEL_MAGIC: [u8; 4] = *b"HWKM";
pub const MODEL_VERSION: u32 = 1;

const MAX_NODES_PER_TREE: u32 = 1 << 22;

#[derive(Serialize, Deserialize)]
struct Metadata {
    n_classes: u16,
    n_features: usize,
    config: TrainConfig,
    thresholds: Vec<u32>,
    n_rounds: u32,
}

/// Serialize a trained model plus its calibrated thresholds.
pub fn write_model<W: Write>(
    mut w: W,
    model: &EventClassifier,
    thresholds: &[u32],
) -> Result<()> {
    if thresholds.len() != model.n_classes() as usize {
        return Err(param(format!(
            "{} thresholds for {} classes",
            thresholds.len(),
            model.n_classes()
        )));
    }
    let meta = Metadata {
        n_classes: model.n_classes(),
        n_features: model.n_features(),
        config: model.config().clone(),
        thresholds: thresholds.to_vec(),
        n_rounds: model.rounds.len() as u32,
    };
    let meta_bytes =
        serde_json::to_vec(&meta).map_err(|e| format_err(format!("metadata encode: {e}")))?;
    w.write_all(&MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    for round in &model.rounds {
        for tree in round {
            w.write_all(&(tree.nodes.len() as u32).to_le_bytes())?;
            for node in &tree.nodes {
                w.write_all(&node.feature.to_le_bytes())?;
                w.write_all(&node.threshold.to_le_bytes())?;
                w.write_all(&node.left.to_le_bytes())?;
                w.write_all(&node.right.to_le_bytes())?;
                w.write_all(&node.value.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &EventClassifier, thresholds: &[u32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model, thresholds)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| format_err("model file truncated"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact_or_format(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Deserialize a model written by [`write_model`].
pub fn read_model<R: Read>(mut r: R) -> Result<(EventClassifier, Vec<u32>)> {
    let mut magic = [0u8; 4];
    read_exact_or_format(&mut r, &mut magic)?;
    if magic != MODEL_MAGIC {
        return Err(format_err("not a model file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(format_err(format!(
            "unsupported model format version {version} (this build reads {MODEL_VERSION})"
        )));
    }
    let meta_len = read_u32(&mut r)? as usize;
    if meta_len > (1 << 20) {
        return Err(format_err("implausible metadata length"));
    }
    let mut meta_bytes = vec![0u8; meta_len];
    read_exact_or_format(&mut r, &mut meta_bytes)?;
    let meta: Metadata = serde_json::from_slice(&meta_bytes)
        .map_err(|e| format_err(format!("metadata decode: {e}")))?;
    if meta.thresholds.len() != meta.n_classes as usize {
        return Err(format_err("threshold count disagrees with class count"));
    }

    let mut rounds = Vec::with_capacity(meta.n_rounds as usize);
    for _ in 0..meta.n_rounds {
        let mut trees = Vec::with_capacity(meta.n_classes as usize);
        for _ in 0..meta.n_classes {
            let node_count = read_u32(&mut r)?;
            if node_count == 0 || node_count > MAX_NODES_PER_TREE {
                return Err(format_err("implausible tree node count"));
            }
            let mut nodes = Vec::with_capacity(node_count as usize);
            for _ in 0..node_count {
                let feature = read_u32(&mut r)?;
                let threshold = read_f64(&mut r)?;
                let left = read_u32(&mut r)?;
                let right = read_u32(&mut r)?;
                let value = read_f64(&mut r)?;
                if feature != LEAF_FEATURE
                    && (feature as usize >= meta.n_features
                        || left >= node_count
                        || right >= node_count)
                {
                    return Err(format_err("tree node references out of range"));
                }
                nodes.push(TreeNode {
                    feature,
                    threshold,
                    left,
                    right,
                    value,
                });
            }
            trees.push(Tree { nodes });
        }
        rounds.push(trees);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err("trailing bytes after model payload"));
    }

    let model = EventClassifier::from_parts(meta.n_classes, meta.n_features, meta.config, rounds);
    Ok((model, meta.thresholds))
}

pub fn load_model(path: &Path) -> Result<(EventClassifier, Vec<u32>)> {
    read_model(BufReader::new(File::open(path)?))
}
