//! Versioned JSON model document with base64 parameter blobs.
//!
//! Every array is stored as little-endian `f64` bytes, base64 encoded, so a
//! round trip is bit exact. Blob lengths are checked against the declared
//! architecture on load.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Param};
use super::mlp::{Architecture, Layer, MlpModel};
use crate::error::{Error, Result};

pub const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub name: String,
    pub len: usize,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDocument {
    pub format_version: u32,
    pub architecture: Architecture,
    pub feature_names: Vec<String>,
    pub blobs: Vec<Blob>,
}

fn encode(name: String, v: &[f64]) -> Blob {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    Blob {
        name,
        len: v.len(),
        data: STANDARD.encode(bytes),
    }
}

fn decode(blob: &Blob, expected_name: &str, expected_len: usize) -> Result<Vec<f64>> {
    if blob.name != expected_name {
        return Err(Error::ModelFormat(format!(
            "expected blob '{expected_name}', found '{}'",
            blob.name
        )));
    }
    let bytes = STANDARD
        .decode(&blob.data)
        .map_err(|e| Error::ModelFormat(format!("blob '{}': {e}", blob.name)))?;
    if blob.len != expected_len || bytes.len() != expected_len * 8 {
        return Err(Error::ModelFormat(format!(
            "blob '{}' holds {} values, architecture needs {expected_len}",
            blob.name,
            bytes.len() / 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Blob names and arrays in a fixed order: parameters, then batch-norm
/// running statistics.
fn arrays(m: &MlpModel) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>)> = m
        .param_names()
        .into_iter()
        .zip(m.params())
        .map(|(n, p)| (n, p.value.clone()))
        .collect();
    for (i, l) in m.layers.iter().enumerate() {
        if let Layer::BatchNorm(bn) = l {
            out.push((format!("layer{i}.running_mean"), bn.running_mean.clone()));
            out.push((format!("layer{i}.running_var"), bn.running_var.clone()));
        }
    }
    out
}

impl MlpDocument {
    pub fn from_model(m: &MlpModel) -> Self {
        MlpDocument {
            format_version: MLP_FORMAT_VERSION,
            architecture: m.architecture.clone(),
            feature_names: m.feature_names.clone(),
            blobs: arrays(m).into_iter().map(|(n, v)| encode(n, &v)).collect(),
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        if self.format_version != MLP_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported MLP format version {} (expected {MLP_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.feature_names.len() != self.architecture.d_in {
            return Err(Error::ModelFormat(format!(
                "{} feature names for an input width of {}",
                self.feature_names.len(),
                self.architecture.d_in
            )));
        }
        let mut m = MlpModel::new(self.architecture, 0).map_err(|e| Error::ModelFormat(e.to_string()))?;
        m.feature_names = self.feature_names;
        let template = arrays(&m);
        if template.len() != self.blobs.len() {
            return Err(Error::ModelFormat(format!(
                "architecture needs {} blobs, file has {}",
                template.len(),
                self.blobs.len()
            )));
        }
        let mut values = template
            .iter()
            .zip(&self.blobs)
            .map(|((name, v), blob)| decode(blob, name, v.len()))
            .collect::<Result<Vec<_>>>()?
            .into_iter();
        for p in m.params_mut() {
            *p = Param::new(values.next().expect("counted"));
        }
        for l in m.layers.iter_mut() {
            if let Layer::BatchNorm(bn) = l {
                let mean = values.next().expect("counted");
                let var = values.next().expect("counted");
                if var.iter().any(|v| *v < 0.0) {
                    return Err(Error::ModelFormat("negative running variance".into()));
                }
                set_running(bn, mean, var);
            }
        }
        Ok(m)
    }
}

fn set_running(bn: &mut BatchNorm, mean: Vec<f64>, var: Vec<f64>) {
    bn.running_mean = mean;
    bn.running_var = var;
    bn.initialized = true;
}

pub fn mlp_to_json(m: &MlpModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&MlpDocument::from_model(m))?)
}

pub fn mlp_from_json(s: &str) -> Result<MlpModel> {
    let doc: MlpDocument = serde_json::from_str(s).map_err(|e| Error::ModelFormat(e.to_string()))?;
    doc.into_model()
}
