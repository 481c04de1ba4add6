//! Rollout scoring: fidelity, accuracy, their mix, and overlong shaping.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::executor::{ExecOutcome, Executor, Variant};
use crate::rational::{to_f64, Rational};
use crate::response::{count_tokens, extract_code, parse_tagged_response, TaggedResponse};
use crate::solver::{is_equivalent, MatchedVariant, Tolerance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub tolerance: Tolerance,
    pub max_response_tokens: usize,
    pub overlong_buffer: usize,
    pub overlong_factor: f64,
    /// Also accept the objective of the integrality-relaxed model.
    pub substitution: bool,
    /// Training applies the overlong penalty; evaluation does not.
    pub apply_length_penalty: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 0.2,
            tolerance: Tolerance::default(),
            max_response_tokens: 8192,
            overlong_buffer: 4096,
            overlong_factor: 1.0,
            substitution: true,
            apply_length_penalty: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
    #[error("overlong buffer {buffer} exceeds max response tokens {max}")]
    Buffer { buffer: usize, max: usize },
    #[error("overlong factor must be finite and non-negative, got {0}")]
    Factor(f64),
    #[error(transparent)]
    Tolerance(#[from] crate::solver::InvalidTolerance),
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if self.overlong_buffer > self.max_response_tokens {
            return Err(ConfigError::Buffer { buffer: self.overlong_buffer, max: self.max_response_tokens });
        }
        if !self.overlong_factor.is_finite() || self.overlong_factor < 0.0 {
            return Err(ConfigError::Factor(self.overlong_factor));
        }
        self.tolerance.exact()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    ParseError,
    ExecError,
    Infeasible,
    Unbounded,
    Timeout,
}

impl Failure {
    pub fn as_str(self) -> &'static str {
        match self {
            Failure::ParseError => "parse_error",
            Failure::ExecError => "exec_error",
            Failure::Infeasible => "infeasible",
            Failure::Unbounded => "unbounded",
            Failure::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub fidelity: f64,
    pub accuracy: u8,
    pub length_penalty: f64,
    pub combined: f64,
    pub matched_variant: MatchedVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    /// Objective the response produced, if it produced one.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::rational::serde_exact_opt"
    )]
    pub objective: Option<Rational>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// `1 − |p − g| / max(|p|, |g|)` clamped to `[0, 1]`; two zeros score 1.
pub fn fidelity_reward(pred: &Rational, gt: &Rational) -> f64 {
    let scale = pred.abs().max(gt.abs());
    if scale.is_zero() {
        return 1.0;
    }
    let raw = Rational::from_integer(1.into()) - (pred - gt).abs() / scale;
    to_f64(&raw).clamp(0.0, 1.0)
}

pub fn accuracy_reward(equivalent: bool) -> u8 {
    u8::from(equivalent)
}

/// Zero up to `max − buffer`, then a linear ramp reaching `−factor` at `max`.
pub fn overlong_penalty(len: usize, cfg: &RewardConfig) -> f64 {
    let max = cfg.max_response_tokens;
    let start = max.saturating_sub(cfg.overlong_buffer);
    if len <= start {
        0.0
    } else if len >= max || cfg.overlong_buffer == 0 {
        -cfg.overlong_factor
    } else {
        -cfg.overlong_factor * (len - start) as f64 / cfg.overlong_buffer as f64
    }
}

pub fn combine(alpha: f64, fidelity: f64, accuracy: u8, length_penalty: f64) -> f64 {
    alpha * fidelity + (1.0 - alpha) * f64::from(accuracy) + length_penalty
}

fn failed(failure: Failure, penalty: f64, detail: Option<String>) -> RewardBreakdown {
    RewardBreakdown {
        fidelity: 0.0,
        accuracy: 0,
        length_penalty: penalty,
        combined: penalty,
        matched_variant: MatchedVariant::None,
        failure: Some(failure),
        objective: None,
        detail,
    }
}

fn failure_of(outcome: &ExecOutcome) -> (Failure, Option<String>) {
    match outcome {
        ExecOutcome::Optimal(_) => unreachable!("optimal is not a failure"),
        ExecOutcome::Infeasible => (Failure::Infeasible, None),
        ExecOutcome::Unbounded => (Failure::Unbounded, None),
        ExecOutcome::Timeout => (Failure::Timeout, None),
        ExecOutcome::NoObjective => (Failure::ExecError, Some("no objective reported".into())),
        ExecOutcome::Oom => (Failure::ExecError, Some("out of memory".into())),
        ExecOutcome::Error(e) | ExecOutcome::Unavailable(e) => (Failure::ExecError, Some(e.clone())),
    }
}

/// Scores a parsed rollout against the ground-truth objective.
pub fn score_rollout(
    resp: &TaggedResponse,
    gt_objective: &Rational,
    cfg: &RewardConfig,
    executor: &dyn Executor,
) -> RewardBreakdown {
    let penalty = if cfg.apply_length_penalty { overlong_penalty(resp.token_count, cfg) } else { 0.0 };
    let code = match extract_code(resp) {
        Ok(c) => c,
        Err(e) => return failed(Failure::ParseError, penalty, Some(e.to_string())),
    };

    let declared = executor.run(&code, Variant::AsDeclared);
    let mut matched = MatchedVariant::None;
    let mut objective = None;
    if let ExecOutcome::Optimal(v) = &declared {
        objective = Some(v.clone());
        if is_equivalent(v, gt_objective, &cfg.tolerance) {
            matched = MatchedVariant::AsDeclared;
        }
    }
    if matched == MatchedVariant::None && cfg.substitution {
        if let ExecOutcome::Optimal(v) = executor.run(&code, Variant::Relaxed) {
            if is_equivalent(&v, gt_objective, &cfg.tolerance) {
                matched = MatchedVariant::Relaxed;
                objective = Some(v);
            }
        }
    }
    let Some(objective) = objective else {
        let (failure, detail) = failure_of(&declared);
        return failed(failure, penalty, detail);
    };

    let accuracy = accuracy_reward(matched != MatchedVariant::None);
    let mut fidelity = fidelity_reward(&objective, gt_objective);
    // A match decided by the absolute branch near zero can have a tiny raw
    // fidelity; an accepted answer is treated as a perfect one.
    if accuracy == 1 && fidelity < 1.0 - cfg.tolerance.rel {
        fidelity = 1.0;
    }
    RewardBreakdown {
        fidelity,
        accuracy,
        length_penalty: penalty,
        combined: combine(cfg.alpha, fidelity, accuracy, penalty),
        matched_variant: matched,
        failure: None,
        objective: Some(objective),
        detail: None,
    }
}

/// Parses then scores raw response text; parse failures score as failures
/// with the length penalty measured on the raw text.
pub fn score_text(text: &str, gt_objective: &Rational, cfg: &RewardConfig, executor: &dyn Executor) -> RewardBreakdown {
    match parse_tagged_response(text) {
        Ok(resp) => score_rollout(&resp, gt_objective, cfg, executor),
        Err(e) => {
            let penalty = if cfg.apply_length_penalty { overlong_penalty(count_tokens(text), cfg) } else { 0.0 };
            failed(Failure::ParseError, penalty, Some(e.to_string()))
        }
    }
}

/// Re-mixes already computed breakdowns under each alpha and returns the mean
/// combined reward per alpha.
pub fn alpha_sweep(breakdowns: &[RewardBreakdown], alphas: &[f64]) -> Vec<(f64, f64)> {
    alphas
        .iter()
        .map(|&a| {
            let total: f64 = breakdowns
                .iter()
                .map(|b| combine(a, b.fidelity, b.accuracy, b.length_penalty))
                .sum();
            (a, if breakdowns.is_empty() { 0.0 } else { total / breakdowns.len() as f64 })
        })
        .collect()
}
