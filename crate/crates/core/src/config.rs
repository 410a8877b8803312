//! JSON system configuration document.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Domain, Mode, ModeId, ModelError, SwitchedSystem};
use crate::numerics::{Matrix, NumericsError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("subspace '{name}': {msg}")]
    Subspace { name: String, msg: String },
    #[error("certificate for '{subspace}': {msg}")]
    Certificate { subspace: String, msg: String },
    #[error("matrix: {0}")]
    Matrix(#[from] NumericsError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeConfig {
    pub id: ModeId,
    pub field: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceConfig {
    pub name: String,
    pub span: Vec<Vec<f64>>,
    /// A projector as printed in some external source; only compared against
    /// the span-derived projector and flagged when they disagree.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub printed_projector: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateConfig {
    pub subspace: String,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<BTreeMap<String, Vec<Vec<f64>>>>,
    #[serde(rename = "beta_S", default, skip_serializing_if = "Option::is_none")]
    pub beta_s: Option<f64>,
    #[serde(rename = "beta_U", default, skip_serializing_if = "Option::is_none")]
    pub beta_u: Option<f64>,
    #[serde(rename = "eta_S", default, skip_serializing_if = "Option::is_none")]
    pub eta_s: Option<f64>,
    #[serde(rename = "eta_U", default, skip_serializing_if = "Option::is_none")]
    pub eta_u: Option<f64>,
}

impl CertificateConfig {
    pub fn weight_matrices(&self) -> Result<Option<BTreeMap<ModeId, Matrix>>, ConfigError> {
        let Some(map) = &self.weights else {
            return Ok(None);
        };
        let mut out = BTreeMap::new();
        for (key, rows) in map {
            let id: ModeId = key.trim().parse().map_err(|_| ConfigError::Certificate {
                subspace: self.subspace.clone(),
                msg: format!("mode key '{key}' is not an integer"),
            })?;
            out.insert(id, Matrix::try_from_rows(rows)?);
        }
        Ok(Some(out))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<serde_json::Value>,
    pub dimension: usize,
    pub domain: Vec<[f64; 2]>,
    pub modes: Vec<ModeConfig>,
    #[serde(default)]
    pub subspaces: Vec<SubspaceConfig>,
    #[serde(default)]
    pub certificates: Vec<CertificateConfig>,
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SystemConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let n = self.dimension;
        for s in &self.subspaces {
            if s.span.is_empty() || s.span.iter().any(|v| v.len() != n) {
                return Err(ConfigError::Subspace {
                    name: s.name.clone(),
                    msg: format!("span must be a nonempty list of {n}-vectors"),
                });
            }
        }
        for c in &self.certificates {
            if !self.subspaces.iter().any(|s| s.name == c.subspace) {
                return Err(ConfigError::Certificate {
                    subspace: c.subspace.clone(),
                    msg: "unknown subspace".into(),
                });
            }
            if let Some(ws) = c.weight_matrices()? {
                if ws.values().any(|m| m.rows() != n || m.cols() != n) {
                    return Err(ConfigError::Certificate {
                        subspace: c.subspace.clone(),
                        msg: format!("weights must be {n}x{n}"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SwitchedSystem, ConfigError> {
        let n = self.dimension;
        let modes = self
            .modes
            .iter()
            .map(|m| Mode::parse(m.id, &m.field, n))
            .collect::<Result<Vec<_>, _>>()?;
        let domain = Domain::new(self.domain.iter().map(|[lo, hi]| (*lo, *hi)).collect());
        Ok(SwitchedSystem::new(n, modes, domain)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Hex SHA-256 of the raw configuration bytes, recorded in report provenance.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn bundled_configs_parse() {
        let cfg = SystemConfig::from_json(bundled::TWO_MODE_JSON).unwrap();
        assert_eq!(cfg.dimension, 2);
        assert_eq!(cfg.subspaces.len(), 2);
        let ws = cfg.certificates[0].weight_matrices().unwrap().unwrap();
        assert_eq!(ws[&1].get(0, 1), 0.7081);
        let sys = cfg.system().unwrap();
        assert_eq!(sys.mode_ids(), vec![1, 2]);

        let unweighted = SystemConfig::from_json(bundled::TWO_MODE_UNWEIGHTED_JSON).unwrap();
        assert!(unweighted.certificates.iter().all(|c| c.weights.is_none()));
        assert_eq!(unweighted.certificates[0].beta_u, Some(0.6217));
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(SystemConfig::from_json("{"), Err(ConfigError::Json(_))));
        let bad_span = r#"{"dimension":2,"domain":[[0,1],[0,1]],"modes":[{"id":1,"field":["x1","x2"]}],
            "subspaces":[{"name":"a","span":[[1,0,0]]}]}"#;
        assert!(matches!(SystemConfig::from_json(bad_span), Err(ConfigError::Subspace { .. })));
        let bad_cert = r#"{"dimension":1,"domain":[[0,1]],"modes":[{"id":1,"field":["x1"]}],
            "subspaces":[{"name":"a","span":[[1]]}],"certificates":[{"subspace":"b"}]}"#;
        assert!(matches!(SystemConfig::from_json(bad_cert), Err(ConfigError::Certificate { .. })));
        let bad_expr = r#"{"dimension":1,"domain":[[0,1]],"modes":[{"id":1,"field":["x1 +"]}]}"#;
        let cfg = SystemConfig::from_json(bad_expr).unwrap();
        assert!(matches!(cfg.system(), Err(ConfigError::Model(ModelError::Parse { .. }))));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            content_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
