//! Design Target Achievement Index: per-target ratios scored linearly up to
//! the target and with exponentially saturating credit beyond it.

use serde::{Deserialize, Serialize};

use crate::objectives::Direction;

/// Floor on the denominator of minimization ratios.
pub const RATIO_FLOOR: f64 = 1e-12;

fn one() -> f64 {
    1.0
}

/// A target on one auxiliary objective or predictor channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    /// Auxiliary objective name, or a channel name when no objective matches.
    pub objective: String,
    pub target: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Required for channel targets; objective targets inherit their direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
}

impl Target {
    pub fn new(objective: impl Into<String>, target: f64, alpha: f64, beta: f64) -> Self {
        Target {
            objective: objective.into(),
            target,
            alpha,
            beta,
            direction: None,
        }
    }

    pub fn with_direction(mut self, d: Direction) -> Self {
        self.direction = Some(d);
        self
    }

    /// Largest score this target can contribute.
    pub fn max_score(&self) -> f64 {
        self.alpha + self.alpha * self.alpha / self.beta
    }
}

/// `t / max(y, ε)` when minimizing, `y / t` when maximizing.
pub fn achievement_ratio(value: f64, target: f64, direction: Direction) -> f64 {
    match direction {
        Direction::Minimize => target / value.max(RATIO_FLOOR),
        Direction::Maximize => value / target,
    }
}

/// Piecewise score: `α·r` up to the target, then `α + (α²/β)(1 − e^{−(β/α)(r−1)})`.
pub fn target_score(ratio: f64, alpha: f64, beta: f64) -> f64 {
    if ratio <= 1.0 {
        alpha * ratio
    } else {
        alpha + (alpha * alpha / beta) * (1.0 - (-(beta / alpha) * (ratio - 1.0)).exp())
    }
}

/// Normalized DTAI over aligned ratios and targets.
pub fn dtai_from_ratios(ratios: &[f64], targets: &[Target]) -> f64 {
    debug_assert_eq!(ratios.len(), targets.len());
    let (mut num, mut den) = (0.0, 0.0);
    for (r, t) in ratios.iter().zip(targets) {
        num += target_score(*r, t.alpha, t.beta);
        den += t.max_score();
    }
    num / den
}

/// Checks finiteness and positivity; `directions` is aligned with `targets`.
pub fn validate_targets(targets: &[Target], directions: &[Direction]) -> Result<(), String> {
    for (t, d) in targets.iter().zip(directions) {
        if !t.target.is_finite() {
            return Err(format!("target for `{}` must be finite", t.objective));
        }
        for (name, v) in [("alpha", t.alpha), ("beta", t.beta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} for `{}` must be positive and finite", t.objective));
            }
        }
        if *d == Direction::Minimize && t.target <= 0.0 {
            return Err(format!("minimization target for `{}` must be positive", t.objective));
        }
    }
    Ok(())
}
