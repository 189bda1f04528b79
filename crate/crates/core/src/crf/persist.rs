//! Model files: a JSON object `{"format": "nerloop-crf/1", "model": {...}}`
//! holding the scheme, encoder templates and feature list (in index order),
//! the flat emission and transition weights, the constraint flag and the
//! parameter version. Floats are written in shortest round-trip form, so
//! save/load is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CrfError, CrfModel};

pub const MODEL_FORMAT: &str = "nerloop-crf/1";

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    model: &'a CrfModel,
}

#[derive(Deserialize)]
struct ModelFile {
    format: String,
    model: CrfModel,
}

impl CrfModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFileRef {
            format: MODEL_FORMAT,
            model: self,
        })
        .expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, CrfError> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(CrfError::Format(file.format));
        }
        let m = file.model;
        let k = m.num_tags();
        if m.emissions.len() != m.encoder.num_features() * k || m.transitions.len() != (k + 2) * (k + 2) {
            return Err(CrfError::Format("weight shapes do not match scheme and vocabulary".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CrfError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CrfError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelScheme, Tag};
    use crate::crf::FeatureEncoder;

    #[test]
    fn round_trip_is_exact() {
        let mut m = CrfModel::new(LabelScheme::joint(), FeatureEncoder::default(), true);
        m.set_feature_weight("w=aspirin", &Tag::Begin("Drug".into()), 0.1 + 0.2).unwrap();
        m.set_feature_weight("sh=Xx", &Tag::Outside, -1.0 / 3.0).unwrap();
        m.set_transition_weight(3, 4, std::f64::consts::PI);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = CrfModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), m.to_json());
    }

    #[test]
    fn wrong_format_is_rejected() {
        let m = CrfModel::new(LabelScheme::joint(), FeatureEncoder::default(), true);
        let text = m.to_json().replace(MODEL_FORMAT, "other/9");
        assert!(matches!(CrfModel::from_json(&text), Err(CrfError::Format(_))));
    }
}
