//! The problem configuration document consumed by the CLI and the service.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};

use crate::bench2d;
use crate::design_space::{load_dataset, Dataset, DesignPoint, DesignSchema};
use crate::objectives::{AuxiliaryObjectiveSpec, DEFAULT_KNN};
use crate::optimizer::OptimizerConfig;
use crate::predictors::{build_predictor, PredictorSpec};
use crate::problem::{DomainConstraint, OutputConstraint, ProblemError, ProblemSpec};
use crate::sampler::SamplingRequest;
use crate::scalar::Scalar;

/// One validation failure, located by a dotted path into the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() || self.field == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
}

impl ConfigError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid(vec![FieldError::new(field, message)])
    }

    pub fn fields(&self) -> Vec<FieldError> {
        match self {
            ConfigError::Io { path, message } => vec![FieldError::new("dataset", format!("{path}: {message}"))],
            ConfigError::Invalid(f) => f.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    #[default]
    F64,
    F32,
}

fn default_seed() -> u64 {
    bench2d::DATASET_SEED
}

fn default_size() -> usize {
    bench2d::DATASET_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// CSV file; relative paths resolve against the config file's directory.
    Csv { path: PathBuf },
    /// Rows given directly, each an array or a name-to-value object.
    Inline { rows: Vec<Json> },
    /// The uniform benchmark sample.
    Bench2d {
        #[serde(default = "default_seed")]
        seed: u64,
        #[serde(default = "default_size")]
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConstraintConfig {
    pub name: String,
    /// Predictor channel whose value must be ≥ 0.
    pub channel: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintsConfig {
    pub outputs: Vec<OutputConstraint>,
    pub domain: Vec<DomainConstraintConfig>,
}

fn default_knn() -> usize {
    DEFAULT_KNN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectivesConfig {
    #[serde(default)]
    pub auxiliary: Vec<AuxiliaryObjectiveSpec>,
    #[serde(default = "default_knn")]
    pub knn: usize,
}

impl Default for ObjectivesConfig {
    fn default() -> Self {
        ObjectivesConfig {
            auxiliary: Vec::new(),
            knn: DEFAULT_KNN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub scalar: ScalarKind,
    /// Feature definitions; kept as raw JSON until the scalar type is known.
    pub schema: Json,
    pub dataset: DatasetSource,
    /// Array in schema order or a name-to-value object.
    pub query: Json,
    pub predictors: Vec<PredictorSpec>,
    #[serde(default)]
    pub constraints: ConstraintsConfig,
    #[serde(default)]
    pub objectives: ObjectivesConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Defaults for resampling when no weights are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling: Option<SamplingRequest>,
}

fn parse_at<T: DeserializeOwned>(text: &str, prefix: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = match (prefix.is_empty(), path.as_str()) {
            (true, p) => p.to_string(),
            (false, ".") => prefix.to_string(),
            (false, p) => format!("{prefix}.{p}"),
        };
        ConfigError::field(field, e.into_inner().to_string())
    })
}

fn value_at<T: DeserializeOwned>(v: &Json, prefix: &str) -> Result<T, ConfigError> {
    parse_at(&v.to_string(), prefix)
}

/// A built problem plus where its data came from.
pub struct BuiltProblem<S: Scalar> {
    pub spec: ProblemSpec<S>,
    /// Resolved CSV path, when the dataset is file-backed.
    pub dataset_path: Option<PathBuf>,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ProblemConfig = parse_at(text, "")?;
        config.check_static()?;
        Ok(config)
    }

    pub fn from_value(v: &Json) -> Result<Self, ConfigError> {
        Self::from_json(&v.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    fn check_static(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if let Err(e) = self.optimizer.validate() {
            errors.push(FieldError::new("optimizer", e));
        }
        if self.predictors.is_empty() {
            errors.push(FieldError::new("predictors", "at least one predictor is required"));
        }
        if let Some(s) = &self.sampling {
            if let Err(e) = s.validate() {
                errors.push(FieldError::new("sampling", e.to_string()));
            }
        }
        if self.objectives.knn == 0 {
            errors.push(FieldError::new("objectives.knn", "must be at least 1"));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// Compact JSON with sorted keys and defaults filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_value(self).expect("config serializes").to_string()
    }

    /// Content hash of the canonical form; stable across key order and defaults.
    pub fn problem_id(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Copy whose CSV dataset path (or `dataset_override`) is absolute, so the
    /// document can be stored elsewhere and still build the same problem.
    pub fn with_resolved_dataset(&self, base_dir: &Path, dataset_override: Option<&Path>) -> ProblemConfig {
        let absolute = |p: &Path| {
            let joined = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
            fs::canonicalize(&joined).unwrap_or(joined)
        };
        let mut out = self.clone();
        match (dataset_override, &self.dataset) {
            // overrides come from the command line, relative to the working directory
            (Some(p), _) => {
                out.dataset = DatasetSource::Csv {
                    path: fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()),
                }
            }
            (None, DatasetSource::Csv { path }) => out.dataset = DatasetSource::Csv { path: absolute(path) },
            _ => {}
        }
        out
    }

    pub fn schema<S: Scalar>(&self) -> Result<DesignSchema<S>, ConfigError> {
        value_at(&self.schema, "schema")
    }

    /// Loads or generates the dataset. `dataset_override` replaces a CSV path.
    pub fn dataset<S: Scalar>(
        &self,
        schema: DesignSchema<S>,
        base_dir: &Path,
        dataset_override: Option<&Path>,
    ) -> Result<(Dataset<S>, Option<PathBuf>), ConfigError> {
        let bad = |m: String| ConfigError::field("dataset", m);
        if let Some(path) = dataset_override {
            return Ok((read_csv(path, schema)?, Some(path.to_path_buf())));
        }
        match &self.dataset {
            DatasetSource::Csv { path } => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                Ok((read_csv(&full, schema)?, Some(full)))
            }
            DatasetSource::Inline { rows } => {
                let points = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        schema
                            .point_from_json(r)
                            .map_err(|m| ConfigError::field(format!("dataset.rows[{i}]"), m))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if points.is_empty() {
                    return Err(bad("dataset has no rows".into()));
                }
                Ok((Dataset::new(schema, points).map_err(|e| bad(e.to_string()))?, None))
            }
            DatasetSource::Bench2d { seed, size } => {
                if schema != bench2d::schema::<S>() {
                    return Err(bad("the bench2d generator requires the two-feature benchmark schema".into()));
                }
                if *size == 0 {
                    return Err(ConfigError::field("dataset.size", "must be at least 1"));
                }
                Ok((bench2d::dataset(*seed, *size), None))
            }
        }
    }

    /// Validates everything and assembles the problem. Subprocess predictors are
    /// not started until first use.
    pub fn build<S: Scalar>(&self, base_dir: &Path, dataset_override: Option<&Path>) -> Result<BuiltProblem<S>, ConfigError> {
        let schema = self.schema::<S>()?;
        let query: DesignPoint<S> = schema
            .point_from_json(&self.query)
            .map_err(|m| ConfigError::field("query", m))?;
        if let Err(v) = schema.validate_point(&query) {
            return Err(ConfigError::field("query", v.to_string()));
        }
        let (dataset, dataset_path) = self.dataset(schema, base_dir, dataset_override)?;
        let mut builder = ProblemSpec::builder(dataset, query).knn(self.objectives.knn);
        for (i, p) in self.predictors.iter().enumerate() {
            let predictor =
                build_predictor::<S>(p).map_err(|e| ConfigError::field(format!("predictors[{i}]"), e.to_string()))?;
            builder = builder.predictor(predictor);
        }
        for c in &self.constraints.outputs {
            builder = builder.output_constraint(c.clone());
        }
        for d in &self.constraints.domain {
            builder = builder.domain_constraint(DomainConstraint::Channel {
                name: d.name.clone(),
                channel: d.channel.clone(),
            });
        }
        for o in &self.objectives.auxiliary {
            builder = builder.objective(o.clone());
        }
        let spec = builder.build().map_err(|e| {
            let field = match &e {
                ProblemError::Query(_) => "query",
                ProblemError::BadKnn { .. } => "objectives.knn",
                ProblemError::UnresolvedObjective(_) => "objectives.auxiliary",
                ProblemError::Predictor(_) => "predictors",
                _ => "constraints",
            };
            ConfigError::field(field, e.to_string())
        })?;
        Ok(BuiltProblem { spec, dataset_path })
    }
}

fn read_csv<S: Scalar>(path: &Path, schema: DesignSchema<S>) -> Result<Dataset<S>, ConfigError> {
    let file = fs::File::open(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_dataset(file, schema).map_err(|e| ConfigError::field("dataset", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bench() -> ProblemConfig {
        bench2d::config("D2").unwrap()
    }

    #[test]
    fn bench_config_round_trips_and_builds() {
        let c = bench();
        let text = c.to_pretty_json();
        let back = ProblemConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        let built = back.build::<f64>(Path::new("."), None).unwrap();
        assert_eq!(built.spec.dataset().len(), 1000);
        assert_eq!(built.spec.channels(), ["Y1", "Y2"]);
        assert!(back.build::<f32>(Path::new("."), None).is_ok());
    }

    #[test]
    fn id_ignores_key_order_and_explicit_defaults() {
        let c = bench();
        let mut v = serde_json::to_value(&c).unwrap();
        v.as_object_mut().unwrap().remove("optimizer");
        v.as_object_mut().unwrap().remove("scalar");
        let mut again = ProblemConfig::from_value(&v).unwrap();
        again.optimizer = c.optimizer.clone();
        assert_eq!(again.problem_id(), c.problem_id());
        let mut other = c.clone();
        other.objectives.knn = 7;
        assert_ne!(other.problem_id(), c.problem_id());
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let mut v = serde_json::to_value(bench()).unwrap();
        v["optimizer"]["popsize"] = 3.into();
        let err = ProblemConfig::from_value(&v).unwrap_err();
        let fields = err.fields();
        assert_eq!(fields[0].field, "optimizer.popsize");
        assert!(fields[0].message.contains("popsize"), "{err}");

        let mut v = serde_json::to_value(bench()).unwrap();
        v["bogus"] = 1.into();
        assert!(ProblemConfig::from_value(&v).is_err());
    }

    #[test]
    fn semantic_errors_name_their_field() {
        let mut c = bench();
        c.optimizer.population_size = 5;
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(ProblemConfig::from_value(&v).unwrap_err().fields()[0].field, "optimizer");

        let mut c = bench();
        c.query = serde_json::json!([0.5]);
        assert_eq!(c.build::<f64>(Path::new("."), None).err().unwrap().fields()[0].field, "query");

        let mut c = bench();
        c.constraints.outputs.push(OutputConstraint::at_least("Y9", 0.0));
        assert_eq!(c.build::<f64>(Path::new("."), None).err().unwrap().fields()[0].field, "constraints");

        let mut c = bench();
        c.schema["features"][0]["lower"] = 3.0.into();
        let e = c.build::<f64>(Path::new("."), None).err().unwrap();
        assert!(e.fields()[0].field.starts_with("schema"), "{e}");
    }

    #[test]
    fn csv_dataset_resolves_relative_to_base() {
        let dir = tempfile::tempdir().unwrap();
        let data: Dataset<f64> = bench2d::dataset(1, 50);
        fs::write(dir.path().join("d.csv"), data.to_csv()).unwrap();
        let mut c = bench();
        c.dataset = DatasetSource::Csv { path: "d.csv".into() };
        let built = c.build::<f64>(dir.path(), None).unwrap();
        assert_eq!(built.spec.dataset().rows(), data.rows());
        assert_eq!(built.dataset_path.unwrap(), dir.path().join("d.csv"));
        let missing = c.build::<f64>(Path::new("/nonexistent"), None).err().unwrap();
        assert!(matches!(missing, ConfigError::Io { .. }));
    }

    #[test]
    fn resolved_copy_builds_from_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let data: Dataset<f64> = bench2d::dataset(2, 30);
        fs::write(dir.path().join("d.csv"), data.to_csv()).unwrap();
        let mut c = bench();
        c.dataset = DatasetSource::Csv { path: "d.csv".into() };
        let resolved = c.with_resolved_dataset(dir.path(), None);
        let a = c.build::<f64>(dir.path(), None).unwrap();
        let b = resolved.build::<f64>(Path::new("/"), None).unwrap();
        assert_eq!(a.spec.problem_hash(), b.spec.problem_hash());
        assert_eq!(bench().with_resolved_dataset(dir.path(), None), bench());
    }

    #[test]
    fn inline_rows() {
        let mut c = bench();
        c.dataset = DatasetSource::Inline {
            rows: vec![serde_json::json!([0.1, 0.2]), serde_json::json!({"x1": 0.3, "x2": 0.4})],
        };
        c.objectives.knn = 2;
        let built = c.build::<f64>(Path::new("."), None).unwrap();
        assert_eq!(built.spec.dataset().len(), 2);
    }
}
