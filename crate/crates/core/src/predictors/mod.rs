//! Black-box predictors. The optimizer only ever calls `predict`-style batch
//! functions; every backend (analytic builtins, closures, external processes)
//! sits behind the same trait and the same memoizing handle.

mod builtin;
mod subprocess;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::design_space::{DesignPoint, DesignSchema, PointKey};
use crate::scalar::Scalar;

pub use builtin::{builtin_channels, BuiltinPredictor, BUILTIN_IDS};
pub use subprocess::{
    decode_request, encode_response, serve_worker, timeout_from_env, SubprocessPredictor,
    DEFAULT_BATCH_SIZE, DEFAULT_TIMEOUT_MS, TIMEOUT_ENV,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PredictorError {
    #[error("cannot start predictor process: {0}")]
    Spawn(String),
    #[error("predictor i/o failure: {0}")]
    Io(String),
    #[error("predictor protocol violation: {0}")]
    Protocol(String),
    #[error("predictor did not answer within {0} ms")]
    Timeout(u64),
    #[error("predictor process exited: {0}")]
    Exited(String),
    #[error("unknown builtin predictor `{0}`")]
    UnknownBuiltin(String),
    #[error("predictor `{name}`: {reason}")]
    Config { name: String, reason: String },
}

/// A failed batch, with the records that completed before the failure.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{source} ({} designs completed)", partial.len())]
pub struct BatchError<S> {
    pub partial: Vec<PredictionRecord<S>>,
    #[source]
    pub source: PredictorError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Backend {
    Builtin(String),
    Subprocess {
        command: Vec<String>,
        deterministic: bool,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
    /// An in-process closure registered through the library API.
    #[serde(skip_deserializing)]
    InProcess(String),
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSpec {
    pub name: String,
    #[serde(default)]
    pub channels: Vec<String>,
    pub backend: Backend,
}

/// Outputs of one predictor for one design, aligned with the predictor's channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord<S> {
    pub design: DesignPoint<S>,
    pub values: Vec<S>,
    /// Set when a channel is missing or non-finite.
    pub failed: bool,
    /// 1 if this record required a predictor call, 0 if served from cache.
    pub evaluations: u64,
}

pub trait Predictor<S: Scalar>: Send + Sync {
    fn spec(&self) -> &PredictorSpec;

    /// Caching is only sound for deterministic backends.
    fn deterministic(&self) -> bool {
        true
    }

    fn batch_size(&self) -> usize {
        usize::MAX
    }

    /// One raw output row per design, in order. Non-finite values are allowed
    /// here and turn into failed records upstream.
    fn evaluate(
        &self,
        schema: &DesignSchema<S>,
        designs: &[DesignPoint<S>],
    ) -> Result<Vec<Vec<S>>, PredictorError>;
}

/// Wraps a closure as a deterministic in-process predictor.
pub struct FnPredictor<S, F> {
    spec: PredictorSpec,
    f: F,
    _scalar: std::marker::PhantomData<fn() -> S>,
}

impl<S, F> FnPredictor<S, F>
where
    S: Scalar,
    F: Fn(&DesignPoint<S>) -> Vec<S> + Send + Sync,
{
    pub fn new(name: impl Into<String>, channels: &[&str], f: F) -> Self {
        let name = name.into();
        FnPredictor {
            spec: PredictorSpec {
                backend: Backend::InProcess(name.clone()),
                name,
                channels: channels.iter().map(|c| c.to_string()).collect(),
            },
            f,
            _scalar: std::marker::PhantomData,
        }
    }
}

impl<S, F> Predictor<S> for FnPredictor<S, F>
where
    S: Scalar,
    F: Fn(&DesignPoint<S>) -> Vec<S> + Send + Sync,
{
    fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    fn evaluate(
        &self,
        _schema: &DesignSchema<S>,
        designs: &[DesignPoint<S>],
    ) -> Result<Vec<Vec<S>>, PredictorError> {
        Ok(designs.iter().map(&self.f).collect())
    }
}

/// A predictor plus its exact-key memo table and evaluation counter.
pub struct PredictorHandle<S: Scalar> {
    inner: Box<dyn Predictor<S>>,
    cache: RwLock<HashMap<PointKey, Arc<[S]>>>,
    evaluations: AtomicU64,
}

impl<S: Scalar> PredictorHandle<S> {
    pub fn new(inner: Box<dyn Predictor<S>>) -> Self {
        PredictorHandle {
            inner,
            cache: RwLock::new(HashMap::new()),
            evaluations: AtomicU64::new(0),
        }
    }

    pub fn spec(&self) -> &PredictorSpec {
        self.inner.spec()
    }

    pub fn channels(&self) -> &[String] {
        &self.inner.spec().channels
    }

    /// Total designs sent to the backend so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.load(Ordering::SeqCst)
    }

    fn caching(&self) -> bool {
        self.inner.deterministic()
    }

    fn record(&self, design: DesignPoint<S>, values: &[S], evaluations: u64) -> PredictionRecord<S> {
        let failed =
            values.len() != self.channels().len() || values.iter().any(|v| !v.is_finite());
        PredictionRecord {
            design,
            values: values.to_vec(),
            failed,
            evaluations,
        }
    }

    /// Stored record for an identical value tuple, without calling the backend.
    pub fn cache_lookup(&self, design: &DesignPoint<S>) -> Option<PredictionRecord<S>> {
        let cache = self.cache.read().unwrap_or_else(|e| e.into_inner());
        cache
            .get(&design.key())
            .map(|v| self.record(design.clone(), v, 0))
    }

    /// Evaluates `designs` in order. Cached and repeated designs cost nothing;
    /// the counter grows by the number of designs actually sent.
    pub fn predict_batch(
        &self,
        schema: &DesignSchema<S>,
        designs: &[DesignPoint<S>],
    ) -> Result<Vec<PredictionRecord<S>>, BatchError<S>> {
        if designs.is_empty() {
            return Ok(Vec::new());
        }
        if !self.caching() {
            return self.predict_uncached(schema, designs);
        }

        let keys: Vec<PointKey> = designs.iter().map(DesignPoint::key).collect();
        let mut pending: Vec<usize> = Vec::new();
        {
            let cache = self.cache.read().unwrap_or_else(|e| e.into_inner());
            let mut seen = std::collections::HashSet::new();
            for (i, key) in keys.iter().enumerate() {
                if !cache.contains_key(key) && seen.insert(key) {
                    pending.push(i);
                }
            }
        }

        let chunk = self.inner.batch_size().max(1);
        let mut fresh: HashMap<&PointKey, Arc<[S]>> = HashMap::new();
        let mut failure = None;
        for idx in pending.chunks(chunk) {
            let batch: Vec<DesignPoint<S>> = idx.iter().map(|&i| designs[i].clone()).collect();
            match self.inner.evaluate(schema, &batch) {
                Ok(rows) if rows.len() == batch.len() => {
                    self.evaluations
                        .fetch_add(batch.len() as u64, Ordering::SeqCst);
                    let mut cache = self.cache.write().unwrap_or_else(|e| e.into_inner());
                    for (&i, row) in idx.iter().zip(rows) {
                        let row: Arc<[S]> = row.into();
                        cache.insert(keys[i].clone(), Arc::clone(&row));
                        fresh.insert(&keys[i], row);
                    }
                }
                Ok(rows) => {
                    failure = Some(PredictorError::Protocol(format!(
                        "expected {} output rows, got {}",
                        batch.len(),
                        rows.len()
                    )));
                    break;
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }

        let cache = self.cache.read().unwrap_or_else(|e| e.into_inner());
        let mut records = Vec::with_capacity(designs.len());
        for (design, key) in designs.iter().zip(&keys) {
            let cost = match fresh.remove(key) {
                Some(_) => 1,
                None => 0,
            };
            match cache.get(key) {
                Some(v) => records.push(self.record(design.clone(), v, cost)),
                None => {
                    // only reachable after a failed chunk; keep the prefix
                    return Err(BatchError {
                        partial: records,
                        source: failure.unwrap_or_else(|| {
                            PredictorError::Protocol("missing output".into())
                        }),
                    });
                }
            }
        }
        match failure {
            Some(source) => Err(BatchError {
                partial: records,
                source,
            }),
            None => Ok(records),
        }
    }

    fn predict_uncached(
        &self,
        schema: &DesignSchema<S>,
        designs: &[DesignPoint<S>],
    ) -> Result<Vec<PredictionRecord<S>>, BatchError<S>> {
        let chunk = self.inner.batch_size().max(1);
        let mut records = Vec::with_capacity(designs.len());
        for batch in designs.chunks(chunk) {
            let rows = self
                .inner
                .evaluate(schema, batch)
                .and_then(|rows| {
                    if rows.len() == batch.len() {
                        Ok(rows)
                    } else {
                        Err(PredictorError::Protocol(format!(
                            "expected {} output rows, got {}",
                            batch.len(),
                            rows.len()
                        )))
                    }
                })
                .map_err(|source| BatchError {
                    partial: records.clone(),
                    source,
                })?;
            self.evaluations
                .fetch_add(batch.len() as u64, Ordering::SeqCst);
            records.extend(
                batch
                    .iter()
                    .zip(rows)
                    .map(|(d, row)| self.record(d.clone(), &row, 1)),
            );
        }
        Ok(records)
    }
}

/// Combined outputs of all registered predictors for one design.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs<S> {
    pub values: Vec<S>,
    pub failed: bool,
}

/// The immutable set of predictors for one problem, with a flat channel list.
pub struct PredictorSet<S: Scalar> {
    handles: Vec<PredictorHandle<S>>,
    channels: Vec<String>,
}

impl<S: Scalar> PredictorSet<S> {
    pub fn new(predictors: Vec<Box<dyn Predictor<S>>>) -> Result<Self, PredictorError> {
        let mut channels: Vec<String> = Vec::new();
        for p in &predictors {
            for c in &p.spec().channels {
                if channels.contains(c) {
                    return Err(PredictorError::Config {
                        name: p.spec().name.clone(),
                        reason: format!("channel `{c}` is already produced by another predictor"),
                    });
                }
                channels.push(c.clone());
            }
        }
        Ok(PredictorSet {
            handles: predictors.into_iter().map(PredictorHandle::new).collect(),
            channels,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn handles(&self) -> &[PredictorHandle<S>] {
        &self.handles
    }

    pub fn specs(&self) -> Vec<PredictorSpec> {
        self.handles.iter().map(|h| h.spec().clone()).collect()
    }

    pub fn evaluations(&self) -> u64 {
        self.handles.iter().map(PredictorHandle::evaluations).sum()
    }

    /// Runs every predictor over `designs` and stitches channel outputs together.
    pub fn evaluate(
        &self,
        schema: &DesignSchema<S>,
        designs: &[DesignPoint<S>],
    ) -> Result<Vec<Outputs<S>>, PredictorError> {
        let mut out: Vec<Outputs<S>> = designs
            .iter()
            .map(|_| Outputs {
                values: Vec::with_capacity(self.channels.len()),
                failed: false,
            })
            .collect();
        for handle in &self.handles {
            let records = handle.predict_batch(schema, designs).map_err(|e| e.source)?;
            for (o, r) in out.iter_mut().zip(records) {
                o.failed |= r.failed;
                let width = handle.channels().len();
                if r.values.len() == width {
                    o.values.extend(r.values);
                } else {
                    o.values.extend(std::iter::repeat(S::nan()).take(width));
                }
            }
        }
        Ok(out)
    }
}

/// Instantiates a predictor from its declarative spec.
pub fn build_predictor<S: Scalar>(spec: &PredictorSpec) -> Result<Box<dyn Predictor<S>>, PredictorError> {
    match &spec.backend {
        Backend::Builtin(id) => Ok(Box::new(BuiltinPredictor::new(spec.clone(), id)?)),
        Backend::Subprocess {
            command,
            deterministic,
            batch_size,
        } => {
            if command.is_empty() {
                return Err(PredictorError::Config {
                    name: spec.name.clone(),
                    reason: "empty command".into(),
                });
            }
            if spec.channels.is_empty() {
                return Err(PredictorError::Config {
                    name: spec.name.clone(),
                    reason: "subprocess predictors must declare their channels".into(),
                });
            }
            Ok(Box::new(SubprocessPredictor::new(
                spec.clone(),
                command.clone(),
                *deterministic,
                *batch_size,
                timeout_from_env(),
            )))
        }
        Backend::InProcess(name) => Err(PredictorError::Config {
            name: name.clone(),
            reason: "in-process predictors cannot be built from a spec".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::FeatureSpec;
    use std::sync::atomic::AtomicUsize;

    fn schema() -> DesignSchema<f64> {
        DesignSchema::new(vec![
            FeatureSpec::continuous("x1", 0.0, 1.0),
            FeatureSpec::continuous("x2", 0.0, 1.0),
        ])
        .unwrap()
    }

    fn bench_handle() -> PredictorHandle<f64> {
        let spec = PredictorSpec {
            name: "bench".into(),
            channels: vec![],
            backend: Backend::Builtin("bench2d".into()),
        };
        PredictorHandle::new(build_predictor(&spec).unwrap())
    }

    #[test]
    fn builtin_peak() {
        let h = bench_handle();
        let r = h
            .predict_batch(&schema(), &[DesignPoint::reals(&[1.0 / 6.0, 0.77])])
            .unwrap();
        assert_eq!(r[0].values[0], 1.0);
        assert!(!r[0].failed);
        assert_eq!(h.evaluations(), 1);
    }

    #[test]
    fn empty_batch_costs_nothing() {
        let h = bench_handle();
        assert!(h.predict_batch(&schema(), &[]).unwrap().is_empty());
        assert_eq!(h.evaluations(), 0);
    }

    #[test]
    fn duplicates_in_batch_share_one_call() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = Arc::clone(&calls);
        let h = PredictorHandle::new(Box::new(FnPredictor::new("f", &["y"], move |p: &DesignPoint<f64>| {
            c.fetch_add(1, Ordering::SeqCst);
            vec![p[0].as_real().unwrap() * 2.0]
        })));
        let d = DesignPoint::reals(&[0.3, 0.4]);
        let r = h.predict_batch(&schema(), &[d.clone(), d.clone()]).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].values, r[1].values);
        assert_eq!(r[0].evaluations + r[1].evaluations, 1);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(h.evaluations(), 1);
    }

    #[test]
    fn cache_lookup_semantics() {
        let h = bench_handle();
        let d = DesignPoint::reals(&[0.2, 0.3]);
        assert!(h.cache_lookup(&d).is_none());
        h.predict_batch(&schema(), &[d.clone()]).unwrap();
        let before = h.evaluations();
        let hit = h.cache_lookup(&d).unwrap();
        assert_eq!(hit.evaluations, 0);
        assert_eq!(h.evaluations(), before);
        let nudged = DesignPoint::reals(&[0.2 + 1e-15, 0.3]);
        assert!(h.cache_lookup(&nudged).is_none());
        // a second batch is served from the cache
        h.predict_batch(&schema(), &[d]).unwrap();
        assert_eq!(h.evaluations(), before);
    }

    #[test]
    fn non_finite_outputs_fail_records() {
        let h = PredictorHandle::new(Box::new(FnPredictor::new("f", &["y"], |p: &DesignPoint<f64>| {
            let x = p[0].as_real().unwrap();
            vec![if x > 0.5 { f64::NAN } else { x }]
        })));
        let r = h
            .predict_batch(&schema(), &[DesignPoint::reals(&[0.1, 0.0]), DesignPoint::reals(&[0.9, 0.0])])
            .unwrap();
        assert!(!r[0].failed);
        assert!(r[1].failed);
    }

    struct Flaky {
        spec: PredictorSpec,
        calls: AtomicUsize,
    }

    impl Predictor<f64> for Flaky {
        fn spec(&self) -> &PredictorSpec {
            &self.spec
        }
        fn batch_size(&self) -> usize {
            2
        }
        fn evaluate(
            &self,
            _schema: &DesignSchema<f64>,
            designs: &[DesignPoint<f64>],
        ) -> Result<Vec<Vec<f64>>, PredictorError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) >= 1 {
                return Err(PredictorError::Exited("boom".into()));
            }
            Ok(designs.iter().map(|_| vec![1.0]).collect())
        }
    }

    #[test]
    fn failing_chunk_keeps_partial_results() {
        let h = PredictorHandle::new(Box::new(Flaky {
            spec: PredictorSpec {
                name: "flaky".into(),
                channels: vec!["y".into()],
                backend: Backend::InProcess("flaky".into()),
            },
            calls: AtomicUsize::new(0),
        }));
        let designs: Vec<_> = (0..5).map(|i| DesignPoint::reals(&[i as f64 / 10.0, 0.0])).collect();
        let err = h.predict_batch(&schema(), &designs).unwrap_err();
        assert_eq!(err.partial.len(), 2);
        assert_eq!(err.source, PredictorError::Exited("boom".into()));
        assert_eq!(h.evaluations(), 2);
    }

    #[test]
    fn duplicate_channels_rejected() {
        let a = FnPredictor::new("a", &["y"], |_: &DesignPoint<f64>| vec![0.0]);
        let b = FnPredictor::new("b", &["y"], |_: &DesignPoint<f64>| vec![0.0]);
        assert!(PredictorSet::new(vec![Box::new(a), Box::new(b)]).is_err());
    }

    #[test]
    fn set_concatenates_channels() {
        let a = FnPredictor::new("a", &["u"], |_: &DesignPoint<f64>| vec![1.0]);
        let b = FnPredictor::new("b", &["v", "w"], |_: &DesignPoint<f64>| vec![2.0, 3.0]);
        let set = PredictorSet::new(vec![Box::new(a), Box::new(b)]).unwrap();
        assert_eq!(set.channels(), &["u", "v", "w"]);
        let out = set.evaluate(&schema(), &[DesignPoint::reals(&[0.0, 0.0])]).unwrap();
        assert_eq!(out[0].values, vec![1.0, 2.0, 3.0]);
        assert_eq!(set.evaluations(), 2);
    }
}
