//! JSON input formats shared by the command-line tool and the browser demo.
//!
//! Model: `{"beta": {"2": 0.5, "3": 0.2}, "h": 0.0}`; measure:
//! `{"atoms": [{"q": 0.0, "w": 1.0}]}`. Unknown keys are rejected.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{Atom, AtomicMeasure, MixtureSpec};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub beta: BTreeMap<String, f64>,
    #[serde(default)]
    pub h: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureFile {
    pub atoms: Vec<Atom>,
}

/// Parses a model file; errors name the offending key.
pub fn parse_model(text: &str) -> Result<MixtureSpec> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("model: {e}")))?;
    let mut coefficients = BTreeMap::new();
    for (key, beta) in file.beta {
        let p: u32 = key
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("beta key \"{key}\" is not an integer degree")))?;
        coefficients.insert(p, beta);
    }
    MixtureSpec::new(coefficients, file.h)
}

pub fn parse_measure(text: &str) -> Result<AtomicMeasure> {
    let file: MeasureFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("measure: {e}")))?;
    AtomicMeasure::new(file.atoms)
}
