//! Mixed-variable design spaces: feature schemas, design points and datasets.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema has no features")]
    Empty,
    #[error("duplicate feature name `{0}`")]
    DuplicateName(String),
    #[error("feature `{name}`: {reason}")]
    InvalidFeature { name: String, reason: String },
    #[error("no feature is actionable")]
    NothingActionable,
    #[error("malformed schema document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset is missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: {message}")]
    Row {
        row: usize,
        column: String,
        message: String,
    },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("dataset has no rows")]
    Empty,
}

/// Kind-specific part of a feature definition.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind<S> {
    Continuous { lower: S, upper: S },
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "FeatureDoc<S>",
    into = "FeatureDoc<S>",
    bound = "S: Scalar"
)]
pub struct FeatureSpec<S: Scalar> {
    pub name: String,
    pub kind: FeatureKind<S>,
    pub actionable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Continuous,
    Categorical,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
struct FeatureDoc<S> {
    name: String,
    kind: KindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<S>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    #[serde(default = "default_true")]
    actionable: bool,
}

impl<S: Scalar> TryFrom<FeatureDoc<S>> for FeatureSpec<S> {
    type Error = SchemaError;

    fn try_from(doc: FeatureDoc<S>) -> Result<Self, SchemaError> {
        let invalid = |reason: &str| SchemaError::InvalidFeature {
            name: doc.name.clone(),
            reason: reason.to_string(),
        };
        let kind = match doc.kind {
            KindTag::Continuous => {
                if doc.categories.is_some() {
                    return Err(invalid("continuous feature cannot list categories"));
                }
                match (doc.lower, doc.upper) {
                    (Some(lower), Some(upper)) => FeatureKind::Continuous { lower, upper },
                    _ => return Err(invalid("continuous feature needs `lower` and `upper`")),
                }
            }
            KindTag::Categorical => {
                if doc.lower.is_some() || doc.upper.is_some() {
                    return Err(invalid("categorical feature cannot have bounds"));
                }
                match &doc.categories {
                    Some(c) => FeatureKind::Categorical {
                        categories: c.clone(),
                    },
                    None => return Err(invalid("categorical feature needs `categories`")),
                }
            }
        };
        let spec = FeatureSpec {
            name: doc.name,
            kind,
            actionable: doc.actionable,
        };
        spec.check()?;
        Ok(spec)
    }
}

impl<S: Scalar> From<FeatureSpec<S>> for FeatureDoc<S> {
    fn from(spec: FeatureSpec<S>) -> Self {
        match spec.kind {
            FeatureKind::Continuous { lower, upper } => FeatureDoc {
                name: spec.name,
                kind: KindTag::Continuous,
                lower: Some(lower),
                upper: Some(upper),
                categories: None,
                actionable: spec.actionable,
            },
            FeatureKind::Categorical { categories } => FeatureDoc {
                name: spec.name,
                kind: KindTag::Categorical,
                lower: None,
                upper: None,
                categories: Some(categories),
                actionable: spec.actionable,
            },
        }
    }
}

impl<S: Scalar> FeatureSpec<S> {
    pub fn continuous(name: impl Into<String>, lower: S, upper: S) -> Self {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Continuous { lower, upper },
            actionable: true,
        }
    }

    pub fn categorical<I, T>(name: impl Into<String>, categories: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        FeatureSpec {
            name: name.into(),
            kind: FeatureKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
            actionable: true,
        }
    }

    pub fn fixed(mut self) -> Self {
        self.actionable = false;
        self
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous { .. })
    }

    pub fn categories(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { categories } => Some(categories),
            FeatureKind::Continuous { .. } => None,
        }
    }

    pub fn bounds(&self) -> Option<(S, S)> {
        match self.kind {
            FeatureKind::Continuous { lower, upper } => Some((lower, upper)),
            FeatureKind::Categorical { .. } => None,
        }
    }

    fn check(&self) -> Result<(), SchemaError> {
        let invalid = |reason: &str| SchemaError::InvalidFeature {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.name.is_empty() {
            return Err(invalid("empty feature name"));
        }
        match &self.kind {
            FeatureKind::Continuous { lower, upper } => {
                if !lower.is_finite() || !upper.is_finite() {
                    return Err(invalid("bounds must be finite"));
                }
                if lower >= upper {
                    return Err(invalid("lower bound must be below upper bound"));
                }
            }
            FeatureKind::Categorical { categories } => {
                let distinct: HashSet<&String> = categories.iter().collect();
                if distinct.len() != categories.len() {
                    return Err(invalid("duplicate category"));
                }
                if categories.len() < 2 {
                    return Err(invalid("needs at least two categories"));
                }
            }
        }
        Ok(())
    }

    /// Index of a category token, if this feature is categorical and knows it.
    pub fn category_index(&self, token: &str) -> Option<u32> {
        self.categories()?
            .iter()
            .position(|c| c == token)
            .map(|i| i as u32)
    }
}

/// Ordered feature definitions. The dimension `d` is the feature count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDoc<S>", into = "SchemaDoc<S>", bound = "S: Scalar")]
pub struct DesignSchema<S: Scalar> {
    features: Vec<FeatureSpec<S>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
struct SchemaDoc<S: Scalar> {
    features: Vec<FeatureSpec<S>>,
}

impl<S: Scalar> TryFrom<SchemaDoc<S>> for DesignSchema<S> {
    type Error = SchemaError;
    fn try_from(doc: SchemaDoc<S>) -> Result<Self, SchemaError> {
        DesignSchema::new(doc.features)
    }
}

impl<S: Scalar> From<DesignSchema<S>> for SchemaDoc<S> {
    fn from(schema: DesignSchema<S>) -> Self {
        SchemaDoc {
            features: schema.features,
        }
    }
}

impl<S: Scalar> DesignSchema<S> {
    pub fn new(features: Vec<FeatureSpec<S>>) -> Result<Self, SchemaError> {
        if features.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut names = HashSet::new();
        for f in &features {
            f.check()?;
            if !names.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateName(f.name.clone()));
            }
        }
        if !features.iter().any(|f| f.actionable) {
            return Err(SchemaError::NothingActionable);
        }
        Ok(DesignSchema { features })
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| SchemaError::Parse(e.to_string()))
    }

    pub fn features(&self) -> &[FeatureSpec<S>] {
        &self.features
    }

    pub fn dimension(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn actionable_count(&self) -> usize {
        self.features.iter().filter(|f| f.actionable).count()
    }

    /// Accepts `p` iff it has the right arity, finite continuous values and
    /// known category indices. Reports the first violating feature.
    pub fn validate_point(&self, p: &DesignPoint<S>) -> Result<(), PointViolation> {
        if p.len() != self.dimension() {
            return Err(PointViolation {
                feature: None,
                reason: format!("expected {} values, got {}", self.dimension(), p.len()),
            });
        }
        for (i, (f, v)) in self.features.iter().zip(p.values()).enumerate() {
            let bad = |reason: String| PointViolation {
                feature: Some((i, f.name.clone())),
                reason,
            };
            match (&f.kind, v) {
                (FeatureKind::Continuous { .. }, Value::Real(x)) => {
                    if !x.is_finite() {
                        return Err(bad(format!("non-finite value {x}")));
                    }
                }
                (FeatureKind::Categorical { categories }, Value::Category(c)) => {
                    if (*c as usize) >= categories.len() {
                        return Err(bad(format!("category index {c} out of range")));
                    }
                }
                (FeatureKind::Continuous { .. }, Value::Category(_)) => {
                    return Err(bad("expected a real value".into()));
                }
                (FeatureKind::Categorical { .. }, Value::Real(_)) => {
                    return Err(bad("expected a category".into()));
                }
            }
        }
        Ok(())
    }

    /// Parses one textual cell for feature `i`.
    pub fn parse_cell(&self, i: usize, text: &str) -> Result<Value<S>, String> {
        let f = &self.features[i];
        let text = text.trim();
        if text.is_empty() {
            return Err("missing value".into());
        }
        match &f.kind {
            FeatureKind::Continuous { .. } => {
                let x: f64 = text
                    .parse()
                    .map_err(|_| format!("cannot parse `{text}` as a number"))?;
                if !x.is_finite() {
                    return Err(format!("non-finite value `{text}`"));
                }
                Ok(Value::Real(S::lit(x)))
            }
            FeatureKind::Categorical { categories } => f
                .category_index(text)
                .map(Value::Category)
                .ok_or_else(|| format!("`{text}` is not one of {categories:?}")),
        }
    }

    /// Renders one value as text (category token or shortest round-trip real).
    pub fn format_value(&self, i: usize, v: Value<S>) -> String {
        match v {
            Value::Real(x) => format!("{x}"),
            Value::Category(c) => self.features[i]
                .categories()
                .and_then(|cats| cats.get(c as usize))
                .cloned()
                .unwrap_or_else(|| format!("#{c}")),
        }
    }

    pub fn value_to_json(&self, i: usize, v: Value<S>) -> Json {
        match v {
            Value::Real(x) => serde_json::to_value(x).unwrap_or(Json::Null),
            Value::Category(_) => Json::String(self.format_value(i, v)),
        }
    }

    pub fn value_from_json(&self, i: usize, v: &Json) -> Result<Value<S>, String> {
        let f = &self.features[i];
        match (&f.kind, v) {
            (FeatureKind::Continuous { .. }, Json::Number(n)) => {
                let x = n.as_f64().ok_or("number out of range")?;
                Ok(Value::Real(S::lit(x)))
            }
            (FeatureKind::Categorical { .. }, Json::String(s)) => f
                .category_index(s)
                .map(Value::Category)
                .ok_or_else(|| format!("unknown category `{s}`")),
            (FeatureKind::Continuous { .. }, _) => Err("expected a number".into()),
            (FeatureKind::Categorical { .. }, _) => Err("expected a category token".into()),
        }
    }

    pub fn point_to_json(&self, p: &DesignPoint<S>) -> Vec<Json> {
        p.values()
            .iter()
            .enumerate()
            .map(|(i, v)| self.value_to_json(i, *v))
            .collect()
    }

    /// Reads a point from either an ordered array or a `{name: value}` object.
    pub fn point_from_json(&self, v: &Json) -> Result<DesignPoint<S>, String> {
        let values = match v {
            Json::Array(items) => {
                if items.len() != self.dimension() {
                    return Err(format!(
                        "expected {} values, got {}",
                        self.dimension(),
                        items.len()
                    ));
                }
                items
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        self.value_from_json(i, x)
                            .map_err(|e| format!("{}: {e}", self.features[i].name))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            Json::Object(map) => {
                if let Some(unknown) = map.keys().find(|k| self.feature_index(k).is_none()) {
                    return Err(format!("unknown feature `{unknown}`"));
                }
                self.features
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let x = map
                            .get(&f.name)
                            .ok_or_else(|| format!("missing feature `{}`", f.name))?;
                        self.value_from_json(i, x)
                            .map_err(|e| format!("{}: {e}", f.name))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            _ => return Err("expected an array or an object".into()),
        };
        let p = DesignPoint::new(values);
        self.validate_point(&p).map_err(|e| e.to_string())?;
        Ok(p)
    }
}

/// One feature value. Categories are stored as indices into the feature's category list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value<S> {
    Real(S),
    Category(u32),
}

impl<S: Scalar> Value<S> {
    pub fn as_real(self) -> Option<S> {
        match self {
            Value::Real(x) => Some(x),
            Value::Category(_) => None,
        }
    }

    #[inline]
    fn key(self) -> u64 {
        match self {
            Value::Real(x) => x.key_bits(),
            Value::Category(c) => u64::from(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint<S>(Vec<Value<S>>);

impl<S: Scalar> DesignPoint<S> {
    pub fn new(values: Vec<Value<S>>) -> Self {
        DesignPoint(values)
    }

    pub fn reals(values: &[S]) -> Self {
        DesignPoint(values.iter().map(|&x| Value::Real(x)).collect())
    }

    pub fn values(&self) -> &[Value<S>] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [Value<S>] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Exact memoization key: the full value tuple, bit for bit.
    pub fn key(&self) -> PointKey {
        PointKey(self.0.iter().map(|v| v.key()).collect())
    }
}

impl<S> std::ops::Index<usize> for DesignPoint<S> {
    type Output = Value<S>;
    fn index(&self, i: usize) -> &Value<S> {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointKey(Vec<u64>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointViolation {
    /// Index and name of the offending feature; `None` for arity errors.
    pub feature: Option<(usize, String)>,
    pub reason: String,
}

impl fmt::Display for PointViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.feature {
            Some((_, name)) => write!(f, "feature `{name}`: {}", self.reason),
            None => f.write_str(&self.reason),
        }
    }
}

impl std::error::Error for PointViolation {}

/// Observed designs plus the per-feature ranges used to normalize Gower terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S: Scalar> {
    schema: Arc<DesignSchema<S>>,
    rows: Vec<DesignPoint<S>>,
    ranges: Vec<S>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        schema: impl Into<Arc<DesignSchema<S>>>,
        rows: Vec<DesignPoint<S>>,
    ) -> Result<Self, DatasetError> {
        let schema = schema.into();
        for (r, row) in rows.iter().enumerate() {
            schema.validate_point(row).map_err(|v| DatasetError::Row {
                row: r + 1,
                column: v.feature.map(|(_, n)| n).unwrap_or_default(),
                message: v.reason,
            })?;
        }
        let ranges = compute_ranges(&schema, &rows);
        Ok(Dataset {
            schema,
            rows,
            ranges,
        })
    }

    pub fn schema(&self) -> &DesignSchema<S> {
        &self.schema
    }

    pub fn shared_schema(&self) -> Arc<DesignSchema<S>> {
        Arc::clone(&self.schema)
    }

    pub fn rows(&self) -> &[DesignPoint<S>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `max - min` per continuous feature; zero for categorical features.
    pub fn ranges(&self) -> &[S] {
        &self.ranges
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self
            .schema
            .features()
            .iter()
            .map(|f| f.name.as_str())
            .collect();
        out.push_str(&names.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| self.schema.format_value(i, *v))
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn compute_ranges<S: Scalar>(schema: &DesignSchema<S>, rows: &[DesignPoint<S>]) -> Vec<S> {
    (0..schema.dimension())
        .map(|i| {
            let mut lo = S::infinity();
            let mut hi = S::neg_infinity();
            for row in rows {
                if let Value::Real(x) = row[i] {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            if hi >= lo {
                hi - lo
            } else {
                S::zero()
            }
        })
        .collect()
}

/// Reads a header-bearing comma-separated table. Extra columns are ignored and
/// row order is preserved.
pub fn load_dataset<S: Scalar, R: Read>(
    source: R,
    schema: impl Into<Arc<DesignSchema<S>>>,
) -> Result<Dataset<S>, DatasetError> {
    let schema = schema.into();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Csv(e.to_string()))?
        .clone();
    let columns = schema
        .features()
        .iter()
        .map(|f| {
            headers
                .iter()
                .position(|h| h == f.name)
                .ok_or_else(|| DatasetError::MissingColumn(f.name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DatasetError::Csv(e.to_string()))?;
        let values = columns
            .iter()
            .enumerate()
            .map(|(i, &col)| {
                let cell = record.get(col).unwrap_or("");
                schema
                    .parse_cell(i, cell)
                    .map_err(|message| DatasetError::Row {
                        row: r + 1,
                        column: schema.features()[i].name.clone(),
                        message,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(DesignPoint::new(values));
    }
    Dataset::new(schema, rows)
}

/// Copies the query's value into every non-actionable feature of `p`.
pub fn pin_fixed_features<S: Scalar>(
    schema: &DesignSchema<S>,
    query: &DesignPoint<S>,
    p: &mut DesignPoint<S>,
) {
    for (i, f) in schema.features().iter().enumerate() {
        if !f.actionable {
            p.0[i] = query.0[i];
        }
    }
}

/// A uniformly drawn dataset row with non-actionable features taken from the query.
pub fn random_point<S: Scalar, R: Rng + ?Sized>(
    dataset: &Dataset<S>,
    query: &DesignPoint<S>,
    rng: &mut R,
) -> Result<DesignPoint<S>, DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut p = dataset.rows[rng.gen_range(0..dataset.len())].clone();
    pin_fixed_features(&dataset.schema, query, &mut p);
    Ok(p)
}

/// Uniform over continuous bounds and over categories, for problems without data.
pub fn random_point_in_bounds<S: Scalar, R: Rng + ?Sized>(
    schema: &DesignSchema<S>,
    query: &DesignPoint<S>,
    rng: &mut R,
) -> DesignPoint<S> {
    let values = schema
        .features()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if !f.actionable {
                return query[i];
            }
            match &f.kind {
                FeatureKind::Continuous { lower, upper } => {
                    let u = S::lit(rng.gen::<f64>());
                    Value::Real((*lower + u * (*upper - *lower)).min(*upper))
                }
                FeatureKind::Categorical { categories } => {
                    Value::Category(rng.gen_range(0..categories.len()) as u32)
                }
            }
        })
        .collect();
    DesignPoint(values)
}
