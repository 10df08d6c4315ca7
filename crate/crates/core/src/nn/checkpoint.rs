//! Parameter checkpoints: a JSON array of `{name, shape, values}` records,
//! values row-major. Floats round-trip bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Layer;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Records for every parameter of `layer`, names prefixed with `prefix`.
pub fn records(layer: &Layer, prefix: &str) -> Vec<ParamRecord> {
    layer
        .parameters()
        .into_iter()
        .map(|(name, t)| ParamRecord {
            name: format!("{prefix}{name}"),
            shape: t.shape().to_vec(),
            values: t.data().to_vec(),
        })
        .collect()
}

/// Copies matching records into `layer`.
///
/// Every parameter must be present with the right shape; nothing is written
/// unless all of them validate.
pub fn load_into(layer: &mut Layer, prefix: &str, recs: &[ParamRecord]) -> Result<()> {
    let mut staged = Vec::new();
    for (name, t) in layer.parameters() {
        let full = format!("{prefix}{name}");
        let rec = recs
            .iter()
            .find(|r| r.name == full)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{full}`")))?;
        if rec.shape != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{full}` has shape {:?}, model expects {:?}",
                rec.shape,
                t.shape()
            )));
        }
        if rec.values.len() != t.numel() {
            return Err(Error::Checkpoint(format!(
                "parameter `{full}` declares shape {:?} but holds {} values",
                rec.shape,
                rec.values.len()
            )));
        }
        staged.push(rec.values.clone());
    }
    for (p, values) in layer.parameters_mut().into_iter().zip(staged) {
        p.data_mut().copy_from_slice(&values);
    }
    Ok(())
}

pub fn to_json(recs: &[ParamRecord]) -> Result<String> {
    if let Some(r) = recs.iter().find(|r| r.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::Checkpoint(format!(
            "parameter `{}` holds non-finite values",
            r.name
        )));
    }
    Ok(serde_json::to_string_pretty(recs)?)
}

pub fn from_json(text: &str) -> Result<Vec<ParamRecord>> {
    let recs: Vec<ParamRecord> =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    for r in &recs {
        if r.shape.iter().product::<usize>() != r.values.len() {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` declares shape {:?} but holds {} values",
                r.name,
                r.shape,
                r.values.len()
            )));
        }
    }
    Ok(recs)
}

pub fn save(path: impl AsRef<Path>, recs: &[ParamRecord]) -> Result<()> {
    fs::write(path, to_json(recs)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<ParamRecord>> {
    from_json(&fs::read_to_string(path)?)
}
