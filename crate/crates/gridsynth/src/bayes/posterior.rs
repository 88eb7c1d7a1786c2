//! Self-describing posterior persistence. Files are JSON with a `kind`
//! discriminant so loading the wrong model fails loudly instead of
//! producing garbage draws.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::defaults;
use super::duration::DurationPosterior;
use super::frequency::FrequencyPosterior;
use super::impedance::ImpedancePosterior;
use super::power::PowerPosterior;
use super::BayesError;

pub const POSTERIOR_SCHEMA_VERSION: u32 = 1;

/// Sentinel path selecting the shipped default posterior.
pub const DEFAULT_POSTERIOR: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Power,
    Impedance,
    Frequency,
    Duration,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Power => "power",
            ModelKind::Impedance => "impedance",
            ModelKind::Frequency => "frequency",
            ModelKind::Duration => "duration",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Posterior {
    Power(PowerPosterior),
    Impedance(ImpedancePosterior),
    Frequency(FrequencyPosterior),
    Duration(DurationPosterior),
}

impl Posterior {
    pub fn kind(&self) -> ModelKind {
        match self {
            Posterior::Power(_) => ModelKind::Power,
            Posterior::Impedance(_) => ModelKind::Impedance,
            Posterior::Frequency(_) => ModelKind::Frequency,
            Posterior::Duration(_) => ModelKind::Duration,
        }
    }

    pub fn z_count(&self) -> u32 {
        match self {
            Posterior::Power(p) => p.z_count,
            Posterior::Impedance(p) => p.z_count,
            Posterior::Frequency(p) => p.z_count,
            Posterior::Duration(p) => p.z_count,
        }
    }

    pub fn draw_count(&self) -> usize {
        match self {
            Posterior::Power(p) => p.draws.len(),
            Posterior::Impedance(p) => p.draws.len(),
            Posterior::Frequency(p) => p.draws.len(),
            Posterior::Duration(p) => p.draws.len(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PosteriorFile {
    schema_version: u32,
    z_count: u32,
    draw_count: usize,
    #[serde(flatten)]
    posterior: Posterior,
}

pub fn posterior_to_bytes(posterior: &Posterior) -> Result<Vec<u8>, BayesError> {
    if posterior.draw_count() == 0 {
        return Err(BayesError::SchemaMismatch("refusing to save a posterior with zero draws".into()));
    }
    let file = PosteriorFile {
        schema_version: POSTERIOR_SCHEMA_VERSION,
        z_count: posterior.z_count(),
        draw_count: posterior.draw_count(),
        posterior: posterior.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)
        .map_err(|e| BayesError::SchemaMismatch(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_posterior(posterior: &Posterior, path: &Path) -> Result<(), BayesError> {
    let bytes = posterior_to_bytes(posterior)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_posterior(path: &str, kind: ModelKind) -> Result<Posterior, BayesError> {
    if path == DEFAULT_POSTERIOR {
        return Ok(defaults::default_posterior(kind));
    }
    let p = Path::new(path);
    if !p.is_file() {
        return Err(BayesError::MissingFile(path.to_string()));
    }
    let bytes = std::fs::read(p)?;
    let file: PosteriorFile = serde_json::from_slice(&bytes)
        .map_err(|e| BayesError::SchemaMismatch(format!("{path}: {e}")))?;
    if file.schema_version != POSTERIOR_SCHEMA_VERSION {
        return Err(BayesError::SchemaMismatch(format!(
            "{path}: schema version {} (supported: {POSTERIOR_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    if file.posterior.kind() != kind {
        return Err(BayesError::ModelKindMismatch {
            expected: kind.to_string(),
            found: file.posterior.kind().to_string(),
        });
    }
    if file.draw_count != file.posterior.draw_count() || file.draw_count == 0 {
        return Err(BayesError::SchemaMismatch(format!(
            "{path}: draw_count header {} does not match payload {}",
            file.draw_count,
            file.posterior.draw_count()
        )));
    }
    Ok(file.posterior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::duration::DurationDraw;

    fn tiny_duration() -> Posterior {
        Posterior::Duration(DurationPosterior {
            z_count: 2,
            beta_params: vec![(1.0, 1.0), (2.0, 3.0)],
            draws: vec![DurationDraw { p: vec![0.5, 0.4], weib: vec![(1.2, 3.0), (1.1, 2.5)] }],
        })
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dur.json");
        let post = tiny_duration();
        save_posterior(&post, &path).unwrap();
        let loaded = load_posterior(path.to_str().unwrap(), ModelKind::Duration).unwrap();
        assert_eq!(loaded, post);
    }

    #[test]
    fn byte_stable() {
        let a = posterior_to_bytes(&tiny_duration()).unwrap();
        let b = posterior_to_bytes(&tiny_duration()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kind_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dur.json");
        save_posterior(&tiny_duration(), &path).unwrap();
        match load_posterior(path.to_str().unwrap(), ModelKind::Power) {
            Err(BayesError::ModelKindMismatch { expected, found }) => {
                assert_eq!(expected, "power");
                assert_eq!(found, "duration");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        match load_posterior("/nonexistent/p.json", ModelKind::Power) {
            Err(BayesError::MissingFile(_)) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn refuse_empty_draws() {
        let post = Posterior::Duration(DurationPosterior {
            z_count: 1,
            beta_params: vec![(1.0, 1.0)],
            draws: vec![],
        });
        assert!(matches!(posterior_to_bytes(&post), Err(BayesError::SchemaMismatch(_))));
    }

    #[test]
    fn default_sentinel_loads() {
        for kind in [ModelKind::Power, ModelKind::Impedance, ModelKind::Frequency, ModelKind::Duration] {
            let p = load_posterior(DEFAULT_POSTERIOR, kind).unwrap();
            assert_eq!(p.kind(), kind);
            assert!(p.draw_count() > 0);
        }
    }
}
