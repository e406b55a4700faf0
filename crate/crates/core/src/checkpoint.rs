//! Parameter checkpoints.
//!
//! A checkpoint is a single JSON document:
//!
//! ```text
//! {
//!   "format": "defpinn-checkpoint",
//!   "version": 1,
//!   "config": { "hidden_width": H, "feature_count": p, "solution_count": K,
//!               "init_seed": s, "init_scheme": "glorot-uniform" },
//!   "arrays": [
//!     { "name": "W",    "shape": [H, 2],  "data": [...] },
//!     { "name": "zeta", "shape": [H],     "data": [...] },
//!     { "name": "V",    "shape": [p, H],  "data": [...] },
//!     { "name": "U",    "shape": [p, 2],  "data": [...] },
//!     { "name": "c",    "shape": [p],     "data": [...] },
//!     { "name": "B",    "shape": [K, 2p], "data": [...] }
//!   ]
//! }
//! ```
//!
//! Arrays are row-major. Numbers are written in shortest round-trip form, so
//! loading a checkpoint reproduces the parameters bitwise.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layout, ModelConfig, ModelParams};

pub const FORMAT: &str = "defpinn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    config: ModelConfig,
    arrays: Vec<NamedArray>,
}

fn shapes(layout: &Layout) -> [(&'static str, Vec<usize>, std::ops::Range<usize>); 6] {
    let (h, p, k) = (layout.hidden, layout.features, layout.solutions);
    [
        ("W", vec![h, 2], layout.w()),
        ("zeta", vec![h], layout.zeta()),
        ("V", vec![p, h], layout.v()),
        ("U", vec![p, 2], layout.u()),
        ("c", vec![p], layout.c()),
        ("B", vec![k, 2 * p], layout.b()),
    ]
}

pub fn to_json(config: &ModelConfig, params: &ModelParams) -> Result<String> {
    let arrays = shapes(&params.layout)
        .into_iter()
        .map(|(name, shape, range)| NamedArray {
            name: name.to_string(),
            shape,
            data: params.data[range].to_vec(),
        })
        .collect();
    let doc = Document {
        format: FORMAT.to_string(),
        version: VERSION,
        config: config.clone(),
        arrays,
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn from_json(text: &str) -> Result<(ModelConfig, ModelParams)> {
    let doc: Document = serde_json::from_str(text)?;
    let bad = |detail: String| Error::Format {
        what: "checkpoint",
        detail,
    };
    if doc.format != FORMAT || doc.version != VERSION {
        return Err(bad(format!(
            "unsupported format {:?} version {}",
            doc.format, doc.version
        )));
    }
    doc.config.validate()?;
    let layout = Layout {
        hidden: doc.config.hidden_width,
        features: doc.config.feature_count,
        solutions: doc.config.solution_count,
    };
    let mut params = ModelParams::zeros(layout);
    let expected = shapes(&layout);
    if doc.arrays.len() != expected.len() {
        return Err(bad(format!("expected {} arrays", expected.len())));
    }
    for (array, (name, shape, range)) in doc.arrays.iter().zip(expected) {
        if array.name != name || array.shape != shape || array.data.len() != range.len() {
            return Err(bad(format!(
                "array {:?} with shape {:?} does not match {name} {shape:?}",
                array.name, array.shape
            )));
        }
        params.data[range].copy_from_slice(&array.data);
    }
    Ok((doc.config, params))
}

pub fn save(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    fs::write(path, to_json(config, params)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
