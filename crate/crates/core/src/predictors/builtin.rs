use crate::bench2d;
use crate::design_space::{DesignPoint, DesignSchema, Value};
use crate::scalar::Scalar;

use super::{Predictor, PredictorError, PredictorSpec};

/// Function ids accepted by `Backend::Builtin`.
pub const BUILTIN_IDS: &[&str] = &["bench2d", "bench2d.y1", "bench2d.y2"];

pub fn builtin_channels(id: &str) -> Option<&'static [&'static str]> {
    match id {
        "bench2d" => Some(&["Y1", "Y2"]),
        "bench2d.y1" => Some(&["Y1"]),
        "bench2d.y2" => Some(&["Y2"]),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
enum Function {
    Both,
    Y1,
    Y2,
}

/// Analytic predictors evaluated in-process.
#[derive(Debug, Clone)]
pub struct BuiltinPredictor {
    spec: PredictorSpec,
    function: Function,
}

impl BuiltinPredictor {
    /// Fills in the default channel names when the spec leaves them empty.
    pub fn new(mut spec: PredictorSpec, id: &str) -> Result<Self, PredictorError> {
        let defaults = builtin_channels(id).ok_or_else(|| PredictorError::UnknownBuiltin(id.into()))?;
        if spec.channels.is_empty() {
            spec.channels = defaults.iter().map(|c| c.to_string()).collect();
        } else if spec.channels.len() != defaults.len() {
            return Err(PredictorError::Config {
                name: spec.name.clone(),
                reason: format!("builtin `{id}` produces {} channels", defaults.len()),
            });
        }
        let function = match id {
            "bench2d" => Function::Both,
            "bench2d.y1" => Function::Y1,
            _ => Function::Y2,
        };
        Ok(BuiltinPredictor { spec, function })
    }

    fn eval_one<S: Scalar>(&self, p: &DesignPoint<S>) -> Vec<S> {
        let coords = match (p.values().first(), p.values().get(1)) {
            (Some(Value::Real(a)), Some(Value::Real(b))) => Some((*a, *b)),
            _ => None,
        };
        let Some((x1, x2)) = coords else {
            return vec![S::nan(); self.spec.channels.len()];
        };
        match self.function {
            Function::Both => vec![bench2d::y1(x1, x2), bench2d::y2(x1, x2)],
            Function::Y1 => vec![bench2d::y1(x1, x2)],
            Function::Y2 => vec![bench2d::y2(x1, x2)],
        }
    }
}

impl<S: Scalar> Predictor<S> for BuiltinPredictor {
    fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    fn evaluate(
        &self,
        _schema: &DesignSchema<S>,
        designs: &[DesignPoint<S>],
    ) -> Result<Vec<Vec<S>>, PredictorError> {
        Ok(designs.iter().map(|p| self.eval_one(p)).collect())
    }
}
