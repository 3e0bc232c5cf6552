use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::design_space::{DesignPoint, DesignSchema, PointKey};
use crate::objectives::ObjectiveValues;
use crate::scalar::Scalar;

use super::OptimizerConfig;

pub const ARCHIVE_SCHEMA_VERSION: &str = "mcd-archive/1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArchiveError {
    #[error("malformed archive: {0}")]
    Json(String),
    #[error("unsupported archive schema version `{0}`")]
    Version(String),
    #[error("archive stores {found} values but {expected} was requested")]
    Scalar { expected: &'static str, found: String },
    #[error("archive belongs to problem {found}, expected {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("archive entry {index}: {message}")]
    Entry { index: usize, message: String },
}

/// One feasible, query-distinct design with its cached evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry<S> {
    pub point: DesignPoint<S>,
    pub objectives: ObjectiveValues<S>,
    /// Predictor outputs, aligned with the archive's channel names.
    pub channels: Vec<S>,
}

/// Every valid counterfactual the optimizer produced, in discovery order and
/// deduplicated by exact value tuple.
#[derive(Debug, Clone)]
pub struct CandidateArchive<S: Scalar> {
    problem_hash: String,
    config: OptimizerConfig,
    channel_names: Vec<String>,
    auxiliary_names: Vec<String>,
    entries: Vec<ArchiveEntry<S>>,
    keys: HashSet<PointKey>,
}

impl<S: Scalar> PartialEq for CandidateArchive<S> {
    fn eq(&self, other: &Self) -> bool {
        self.problem_hash == other.problem_hash
            && self.config == other.config
            && self.channel_names == other.channel_names
            && self.auxiliary_names == other.auxiliary_names
            && self.entries == other.entries
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveDoc<S> {
    schema_version: String,
    problem_hash: String,
    scalar: String,
    config: OptimizerConfig,
    channels: Vec<String>,
    auxiliary: Vec<String>,
    entries: Vec<EntryDoc<S>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc<S> {
    values: Vec<Json>,
    objectives: ObjectiveValues<S>,
    channels: BTreeMap<String, S>,
}

impl<S: Scalar> CandidateArchive<S> {
    pub fn new(
        problem_hash: impl Into<String>,
        config: OptimizerConfig,
        channel_names: Vec<String>,
        auxiliary_names: Vec<String>,
    ) -> Self {
        CandidateArchive {
            problem_hash: problem_hash.into(),
            config,
            channel_names,
            auxiliary_names,
            entries: Vec::new(),
            keys: HashSet::new(),
        }
    }

    /// Adds the entry unless an identical design is already stored.
    pub fn insert(&mut self, entry: ArchiveEntry<S>) -> bool {
        if self.keys.insert(entry.point.key()) {
            self.entries.push(entry);
            true
        } else {
            false
        }
    }

    pub fn contains(&self, p: &DesignPoint<S>) -> bool {
        self.keys.contains(&p.key())
    }

    pub fn entries(&self) -> &[ArchiveEntry<S>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn problem_hash(&self) -> &str {
        &self.problem_hash
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn auxiliary_names(&self) -> &[String] {
        &self.auxiliary_names
    }

    /// Keeps only the first `n` entries.
    pub fn truncate(&mut self, n: usize) {
        for e in self.entries.drain(n.min(self.entries.len())..) {
            self.keys.remove(&e.point.key());
        }
    }

    fn entry_doc(&self, schema: &DesignSchema<S>, e: &ArchiveEntry<S>) -> EntryDoc<S> {
        EntryDoc {
            values: schema.point_to_json(&e.point),
            objectives: e.objectives.clone(),
            channels: self.channel_names.iter().cloned().zip(e.channels.iter().copied()).collect(),
        }
    }

    /// Entries `offset..offset+limit` in the same form as the archive file.
    pub fn page_json(&self, schema: &DesignSchema<S>, offset: usize, limit: usize) -> Vec<Json> {
        self.entries
            .iter()
            .skip(offset)
            .take(limit)
            .map(|e| {
                // through text so f32 values carry their shortest decimal form, as in the file
                let text = serde_json::to_string(&self.entry_doc(schema, e)).expect("entry serializes");
                serde_json::from_str(&text).expect("entry reparses")
            })
            .collect()
    }

    pub fn to_json(&self, schema: &DesignSchema<S>) -> String {
        let doc = ArchiveDoc {
            schema_version: ARCHIVE_SCHEMA_VERSION.into(),
            problem_hash: self.problem_hash.clone(),
            scalar: S::NAME.into(),
            config: self.config.clone(),
            channels: self.channel_names.clone(),
            auxiliary: self.auxiliary_names.clone(),
            entries: self.entries.iter().map(|e| self.entry_doc(schema, e)).collect(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("archive serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str, schema: &DesignSchema<S>) -> Result<Self, ArchiveError> {
        let doc: ArchiveDoc<S> = serde_json::from_str(text).map_err(|e| ArchiveError::Json(e.to_string()))?;
        if doc.schema_version != ARCHIVE_SCHEMA_VERSION {
            return Err(ArchiveError::Version(doc.schema_version));
        }
        if doc.scalar != S::NAME {
            return Err(ArchiveError::Scalar {
                expected: S::NAME,
                found: doc.scalar,
            });
        }
        let mut archive = CandidateArchive::new(doc.problem_hash, doc.config, doc.channels, doc.auxiliary);
        for (index, e) in doc.entries.into_iter().enumerate() {
            let bad = |message: String| ArchiveError::Entry { index, message };
            let point = schema.point_from_json(&Json::Array(e.values)).map_err(bad)?;
            schema.validate_point(&point).map_err(|v| bad(v.to_string()))?;
            if e.objectives.auxiliary.len() != archive.auxiliary_names.len() {
                return Err(bad("auxiliary objective count does not match header".into()));
            }
            let channels = archive
                .channel_names
                .iter()
                .map(|c| e.channels.get(c).copied().ok_or_else(|| bad(format!("missing channel `{c}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if !archive.insert(ArchiveEntry {
                point,
                objectives: e.objectives,
                channels,
            }) {
                return Err(bad("duplicate design".into()));
            }
        }
        Ok(archive)
    }

    /// Parses and checks that the archive was produced for `expected_hash`.
    pub fn load_verified(text: &str, schema: &DesignSchema<S>, expected_hash: &str) -> Result<Self, ArchiveError> {
        let archive = Self::from_json(text, schema)?;
        archive.verify_hash(expected_hash)?;
        Ok(archive)
    }

    pub fn verify_hash(&self, expected: &str) -> Result<(), ArchiveError> {
        if self.problem_hash != expected {
            return Err(ArchiveError::HashMismatch {
                expected: expected.into(),
                found: self.problem_hash.clone(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::{FeatureSpec, Value};

    fn schema() -> DesignSchema<f64> {
        DesignSchema::new(vec![
            FeatureSpec::continuous("a", 0.0, 1.0),
            FeatureSpec::categorical("m", ["steel", "aluminum"]),
        ])
        .unwrap()
    }

    fn entry(a: f64, m: u32) -> ArchiveEntry<f64> {
        ArchiveEntry {
            point: DesignPoint::new(vec![Value::Real(a), Value::Category(m)]),
            objectives: ObjectiveValues {
                proximity: a / 3.0,
                sparsity: 0.5,
                manifold: 0.1,
                auxiliary: vec![-1.25],
            },
            channels: vec![a * 0.1, 7.0],
        }
    }

    fn archive() -> CandidateArchive<f64> {
        let mut a = CandidateArchive::new("abc", OptimizerConfig::default(), vec!["y".into(), "z".into()], vec!["mass".into()]);
        assert!(a.insert(entry(0.3, 1)));
        assert!(a.insert(entry(0.1 + 0.2, 0)));
        assert!(!a.insert(entry(0.3, 1)));
        a
    }

    #[test]
    fn dedup_by_exact_tuple() {
        let a = archive();
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let a = archive();
        let text = a.to_json(&schema());
        assert!(text.contains("\"aluminum\""));
        let b = CandidateArchive::from_json(&text, &schema()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_json(&schema()), text);
    }

    #[test]
    fn hash_is_checked() {
        let text = archive().to_json(&schema());
        assert!(CandidateArchive::load_verified(&text, &schema(), "abc").is_ok());
        assert!(matches!(
            CandidateArchive::load_verified(&text, &schema(), "other"),
            Err(ArchiveError::HashMismatch { .. })
        ));
    }

    #[test]
    fn scalar_mismatch_rejected() {
        let text = archive().to_json(&schema());
        let s32 = DesignSchema::<f32>::new(vec![
            FeatureSpec::continuous("a", 0.0, 1.0),
            FeatureSpec::categorical("m", ["steel", "aluminum"]),
        ])
        .unwrap();
        assert!(matches!(CandidateArchive::from_json(&text, &s32), Err(ArchiveError::Scalar { .. })));
    }

    #[test]
    fn truncate_keeps_prefix() {
        let mut a = archive();
        a.truncate(1);
        assert_eq!(a.len(), 1);
        assert!(!a.contains(&entry(0.1 + 0.2, 0).point));
        assert!(a.insert(entry(0.1 + 0.2, 0)));
    }
}
