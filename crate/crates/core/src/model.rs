//! Any trained model behind one scoring interface and one file format.
//!
//! Files are JSON objects `{"format_version": 1, "kind": ..., ...}`. The
//! MLP body uses base64 parameter blobs; tree and linear bodies are plain
//! JSON (numbers are written with round-trip precision).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{GbtModel, LassoModel, LogisticModel, RfModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neural::{MlpDocument, MlpModel};
use crate::Scorer;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Logistic(LogisticModel),
    Lasso(LassoModel),
    Gbt(GbtModel),
    RandomForest(RfModel),
    Mlp(MlpModel),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Body {
    Logistic(LogisticModel),
    Lasso(LassoModel),
    Gbt(GbtModel),
    RandomForest(RfModel),
    Mlp(MlpDocument),
}


impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Logistic(_) => "logistic",
            AnyModel::Lasso(_) => "lasso",
            AnyModel::Gbt(_) => "gbt",
            AnyModel::RandomForest(_) => "random_forest",
            AnyModel::Mlp(_) => "mlp",
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            AnyModel::Logistic(m) => &m.feature_names,
            AnyModel::Lasso(m) => &m.feature_names,
            AnyModel::Gbt(m) => &m.feature_names,
            AnyModel::RandomForest(m) => &m.feature_names,
            AnyModel::Mlp(m) => &m.feature_names,
        }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        let p = match self {
            AnyModel::Logistic(m) => m.predict_proba(x),
            AnyModel::Lasso(m) => m.predict_proba(x),
            AnyModel::Gbt(m) => m.predict_proba(x),
            AnyModel::RandomForest(m) => m.predict_proba(x),
            AnyModel::Mlp(m) => m.predict(x),
        }?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("{} produced a non-finite score", self.kind())));
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        let body = match self {
            AnyModel::Logistic(m) => Body::Logistic(m.clone()),
            AnyModel::Lasso(m) => Body::Lasso(m.clone()),
            AnyModel::Gbt(m) => Body::Gbt(m.clone()),
            AnyModel::RandomForest(m) => Body::RandomForest(m.clone()),
            AnyModel::Mlp(m) => Body::Mlp(MlpDocument::from_model(m)),
        };
        let mut value = serde_json::to_value(&body)?;
        if let Some(obj) = value.as_object_mut() {
            obj.insert("format_version".into(), MODEL_FORMAT_VERSION.into());
        }
        Ok(serde_json::to_string_pretty(&value)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let probe: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::ModelFormat(e.to_string()))?;
        match probe.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::ModelFormat(format!(
                    "unsupported model format version {v} (expected {MODEL_FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::ModelFormat("missing format_version".into())),
        }
        let body: Body = serde_json::from_value(probe).map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(match body {
            Body::Logistic(m) => AnyModel::Logistic(m),
            Body::Lasso(m) => AnyModel::Lasso(m),
            Body::Gbt(m) => AnyModel::Gbt(m),
            Body::RandomForest(m) => AnyModel::RandomForest(m),
            Body::Mlp(doc) => AnyModel::Mlp(doc.into_model()?),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        AnyModel::from_json(&s)
    }
}

impl Scorer for AnyModel {
    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.predict_proba(x)
    }
}

impl Scorer for MlpModel {
    fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.predict(x)
    }
}
