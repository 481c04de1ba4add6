//! Loss math for training with dynamic filtering and teacher corrections.
//!
//! Groups of rollouts are split by how many of them are correct: groups with
//! some but not too many correct rollouts feed a token-level clipped policy
//! loss; groups with none become candidates for teacher-corrected supervised
//! targets; the rest are dropped. The two losses are coupled by
//! `β·√(n_sft / n_rl)`. Only scalar losses and per-token gradient
//! coefficients (∂total/∂logp_new) are produced; parameter updates belong to
//! whatever trainer consumes them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::rational::{from_f64, Rational};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DfpoError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("prompt `{prompt}`: {message}")]
    Invalid { prompt: String, message: String },
    #[error("batch has neither RL rollouts nor SFT targets")]
    EmptyBatch,
}

fn invalid(prompt: &str, message: impl Into<String>) -> DfpoError {
    DfpoError::Invalid { prompt: prompt.to_string(), message: message.into() }
}

/// Log-probabilities travel as decimal strings so no trainer-side float
/// formatting quirk changes their value.
pub mod decimal_vec {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};
    use serde_json::Value;

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(values.iter().map(|v| format!("{v:?}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::String(s) => s.trim().parse::<f64>().map_err(D::Error::custom),
                Value::Number(n) => n.as_f64().ok_or_else(|| D::Error::custom("bad number")),
                _ => Err(D::Error::custom("expected a decimal string or number")),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<u32>,
    #[serde(with = "decimal_vec")]
    pub logp_old: Vec<f64>,
    #[serde(with = "decimal_vec")]
    pub logp_new: Vec<f64>,
    pub reward: f64,
    pub correct: bool,
}

impl Rollout {
    fn validate(&self, prompt: &str) -> Result<(), DfpoError> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(invalid(prompt, "empty rollout"));
        }
        if self.logp_old.len() != n || self.logp_new.len() != n {
            return Err(invalid(
                prompt,
                format!(
                    "sequence length mismatch: {} tokens, {} old log-probs, {} new log-probs",
                    n,
                    self.logp_old.len(),
                    self.logp_new.len()
                ),
            ));
        }
        check_logps(prompt, &self.logp_old)?;
        check_logps(prompt, &self.logp_new)?;
        if !self.reward.is_finite() {
            return Err(invalid(prompt, "non-finite reward"));
        }
        Ok(())
    }
}

fn check_logps(prompt: &str, values: &[f64]) -> Result<(), DfpoError> {
    match values.iter().find(|v| !v.is_finite() || **v > 0.0) {
        Some(v) => Err(invalid(prompt, format!("log-probability {v} is not finite and ≤ 0"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub rollouts: Vec<Rollout>,
    #[serde(with = "crate::rational::serde_exact")]
    pub ground_truth: Rational,
}

impl RolloutGroup {
    pub fn correct_count(&self) -> usize {
        self.rollouts.iter().filter(|r| r.correct).count()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftSource {
    TeacherCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftTarget {
    pub prompt_id: String,
    pub tokens: Vec<u32>,
    #[serde(with = "decimal_vec")]
    pub logp_new: Vec<f64>,
    pub source: SftSource,
    pub verified: bool,
}

impl SftTarget {
    fn validate(&self) -> Result<(), DfpoError> {
        if !self.verified {
            return Err(invalid(&self.prompt_id, "unverified SFT target"));
        }
        if self.tokens.is_empty() {
            return Err(invalid(&self.prompt_id, "empty SFT target"));
        }
        if self.tokens.len() != self.logp_new.len() {
            return Err(invalid(&self.prompt_id, "sequence length mismatch in SFT target"));
        }
        check_logps(&self.prompt_id, &self.logp_new)
    }
}

/// A teacher correction for an all-wrong prompt, tokenized by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionRecord {
    pub prompt_id: String,
    pub tokens: Vec<u32>,
    #[serde(with = "decimal_vec")]
    pub logp_new: Vec<f64>,
    /// Set only when the corrected code reproduced the ground truth.
    pub verified: bool,
    /// Index of the wrong rollout this correction rewrites, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_rollout: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DfpoConfig {
    pub eps_low: f64,
    pub eps_high: f64,
    pub gamma: f64,
    pub beta: f64,
    pub group_size: usize,
    pub std_epsilon: f64,
}

impl Default for DfpoConfig {
    fn default() -> Self {
        DfpoConfig { eps_low: 0.20, eps_high: 0.28, gamma: 0.8, beta: 0.05, group_size: 8, std_epsilon: 1e-8 }
    }
}

impl DfpoConfig {
    pub fn validate(&self) -> Result<(), DfpoError> {
        let bad = |m: &str| Err(DfpoError::Config(m.to_string()));
        if !(self.eps_low > 0.0 && self.eps_low <= self.eps_high && self.eps_high < 1.0) {
            return bad("clip ratios must satisfy 0 < eps_low <= eps_high < 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be finite and non-negative");
        }
        if self.group_size < 2 {
            return bad("group size must be at least 2");
        }
        if !(self.std_epsilon > 0.0 && self.std_epsilon.is_finite()) {
            return bad("std epsilon must be positive");
        }
        Ok(())
    }
}

/// `(R_i − mean) / max(std, ε)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], std_epsilon: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_epsilon {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Rl,
    Sft,
    Discarded,
}

/// Where a group with `correct` of `group_size` correct rollouts goes.
pub fn classify(correct: usize, group_size: usize, gamma: f64) -> Bucket {
    if correct == 0 {
        return Bucket::Sft;
    }
    // Exact comparison against γ·G so that e.g. γ = 0.5, G = 4 excludes 2.
    let gamma = from_f64(gamma).unwrap_or_else(|| Rational::from_integer(1.into()));
    let threshold = gamma * Rational::from_integer(group_size.into());
    if Rational::from_integer(correct.into()) < threshold {
        Bucket::Rl
    } else {
        Bucket::Discarded
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub rl: Vec<usize>,
    pub sft_candidates: Vec<usize>,
    pub discarded: Vec<usize>,
}

/// Splits groups by correct count; indices refer to the input order.
pub fn dynamic_filter(groups: &[RolloutGroup], cfg: &DfpoConfig) -> Partition {
    let mut p = Partition::default();
    for (i, g) in groups.iter().enumerate() {
        match classify(g.correct_count(), g.rollouts.len(), cfg.gamma) {
            Bucket::Rl => p.rl.push(i),
            Bucket::Sft => p.sft_candidates.push(i),
            Bucket::Discarded => p.discarded.push(i),
        }
    }
    p
}

/// Scalar loss plus ∂loss/∂logp_new, indexed group → rollout → token.
#[derive(Debug, Clone, PartialEq)]
pub struct RlLoss {
    pub loss: f64,
    pub grad_coef: Vec<Vec<Vec<f64>>>,
}

/// Token-level clipped surrogate with explicit per-rollout advantages.
pub fn rl_loss_with_advantages(
    groups: &[RolloutGroup],
    advantages: &[Vec<f64>],
    cfg: &DfpoConfig,
) -> Result<RlLoss, DfpoError> {
    if groups.len() != advantages.len() {
        return Err(DfpoError::Config("one advantage vector per group is required".into()));
    }
    let mut total_tokens = 0usize;
    for (g, adv) in groups.iter().zip(advantages) {
        if g.rollouts.len() != adv.len() {
            return Err(invalid(&g.prompt_id, "advantage count differs from rollout count"));
        }
        for r in &g.rollouts {
            r.validate(&g.prompt_id)?;
            total_tokens += r.tokens.len();
        }
    }
    if total_tokens == 0 {
        return Ok(RlLoss { loss: 0.0, grad_coef: vec![Vec::new(); groups.len()] });
    }
    let t = total_tokens as f64;
    let (lo, hi) = (1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(groups.len());
    for (g, adv) in groups.iter().zip(advantages) {
        let mut group_grads = Vec::with_capacity(g.rollouts.len());
        for (r, &a) in g.rollouts.iter().zip(adv) {
            let mut row = Vec::with_capacity(r.tokens.len());
            for (new, old) in r.logp_new.iter().zip(&r.logp_old) {
                let ratio = (new - old).exp();
                let unclipped = ratio * a;
                let clipped = ratio.clamp(lo, hi) * a;
                if unclipped <= clipped {
                    sum += unclipped;
                    row.push(-ratio * a / t);
                } else {
                    sum += clipped;
                    row.push(0.0);
                }
            }
            group_grads.push(row);
        }
        grads.push(group_grads);
    }
    Ok(RlLoss { loss: -sum / t, grad_coef: grads })
}

/// Clipped surrogate with advantages normalized from each group's rewards.
pub fn rl_loss(groups: &[RolloutGroup], cfg: &DfpoConfig) -> Result<RlLoss, DfpoError> {
    let advantages: Vec<Vec<f64>> = groups.iter().map(|g| group_advantages(&g.rewards(), cfg.std_epsilon)).collect();
    rl_loss_with_advantages(groups, &advantages, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllLoss {
    pub loss: f64,
    pub grad_coef: Vec<Vec<f64>>,
}

/// Summed over tokens, averaged over targets.
pub fn nll_loss(targets: &[SftTarget]) -> Result<NllLoss, DfpoError> {
    for t in targets {
        t.validate()?;
    }
    if targets.is_empty() {
        return Ok(NllLoss { loss: 0.0, grad_coef: Vec::new() });
    }
    let n = targets.len() as f64;
    let sum: f64 = targets.iter().flat_map(|t| &t.logp_new).sum();
    let grads = targets.iter().map(|t| vec![-1.0 / n; t.tokens.len()]).collect();
    Ok(NllLoss { loss: -sum / n, grad_coef: grads })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub rl_loss: f64,
    pub nll_loss: f64,
    pub coupling: f64,
    pub total: f64,
}

/// `total = rl + β·√(n_sft / n_rl)·nll`; with no RL rollouts the total is the
/// NLL loss alone and the coupling is reported as 1.
pub fn combine_losses(rl: f64, nll: f64, n_sft: usize, n_rl: usize, beta: f64) -> Result<Combined, DfpoError> {
    let coupling = match (n_sft, n_rl) {
        (0, 0) => return Err(DfpoError::EmptyBatch),
        (_, 0) => {
            return Ok(Combined { rl_loss: 0.0, nll_loss: nll, coupling: 1.0, total: nll });
        }
        (0, _) => 0.0,
        (s, r) => beta * (s as f64 / r as f64).sqrt(),
    };
    Ok(Combined { rl_loss: rl, nll_loss: nll, coupling, total: rl + coupling * nll })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub prompt_id: String,
    pub reason: String,
}

/// Token overlap between a correction and the rollout it rewrites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub prompt_id: String,
    pub token_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingBatch {
    pub rl_groups: Vec<RolloutGroup>,
    pub sft_targets: Vec<SftTarget>,
    pub discarded: Vec<Discard>,
    pub config: DfpoConfig,
    pub n_sft: usize,
    pub n_rl: usize,
    #[serde(default)]
    pub consistency: Vec<Consistency>,
}

/// Multiset overlap of token ids, relative to the corrected sequence length.
pub fn token_overlap(corrected: &[u32], original: &[u32]) -> f64 {
    if corrected.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for t in original {
        *counts.entry(*t).or_default() += 1;
    }
    let mut shared = 0usize;
    for t in corrected {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                shared += 1;
            }
        }
    }
    shared as f64 / corrected.len() as f64
}

/// Filters groups, attaches one verified correction per all-wrong prompt and
/// counts `n_sft` (targets) and `n_rl` (rollouts across RL groups).
pub fn compose_training_batch(
    groups: Vec<RolloutGroup>,
    corrections: Vec<CorrectionRecord>,
    cfg: &DfpoConfig,
) -> Result<TrainingBatch, DfpoError> {
    cfg.validate()?;
    let mut seen = BTreeSet::new();
    for g in &groups {
        if !seen.insert(g.prompt_id.as_str()) {
            return Err(invalid(&g.prompt_id, "duplicate prompt id"));
        }
        if g.rollouts.len() != cfg.group_size {
            return Err(invalid(
                &g.prompt_id,
                format!("group has {} rollouts, expected {}", g.rollouts.len(), cfg.group_size),
            ));
        }
        for r in &g.rollouts {
            r.validate(&g.prompt_id)?;
        }
    }
    let partition = dynamic_filter(&groups, cfg);
    let candidates: BTreeSet<&str> = partition.sft_candidates.iter().map(|&i| groups[i].prompt_id.as_str()).collect();

    let mut chosen: BTreeMap<String, CorrectionRecord> = BTreeMap::new();
    for c in corrections {
        if !candidates.contains(c.prompt_id.as_str()) {
            return Err(invalid(&c.prompt_id, "correction supplied for a prompt that is not all-wrong"));
        }
        if !c.verified {
            log::info!("dropping unverified correction for `{}`", c.prompt_id);
            continue;
        }
        if c.tokens.is_empty() || c.tokens.len() != c.logp_new.len() {
            return Err(invalid(&c.prompt_id, "correction token/log-prob length mismatch"));
        }
        check_logps(&c.prompt_id, &c.logp_new)?;
        chosen.entry(c.prompt_id.clone()).or_insert(c);
    }

    let mut discarded = Vec::new();
    let mut sft_targets = Vec::new();
    let mut consistency = Vec::new();
    for &i in &partition.sft_candidates {
        let g = &groups[i];
        match chosen.remove(&g.prompt_id) {
            Some(c) => {
                let overlap = match c.source_rollout.and_then(|k| g.rollouts.get(k)) {
                    Some(r) => token_overlap(&c.tokens, &r.tokens),
                    None => g.rollouts.iter().map(|r| token_overlap(&c.tokens, &r.tokens)).fold(0.0, f64::max),
                };
                log::debug!("correction for `{}` shares {:.3} of its tokens", g.prompt_id, overlap);
                consistency.push(Consistency { prompt_id: g.prompt_id.clone(), token_overlap: overlap });
                sft_targets.push(SftTarget {
                    prompt_id: c.prompt_id,
                    tokens: c.tokens,
                    logp_new: c.logp_new,
                    source: SftSource::TeacherCorrected,
                    verified: true,
                });
            }
            None => {
                log::info!("all-wrong prompt `{}` has no verified correction", g.prompt_id);
                discarded.push(Discard { prompt_id: g.prompt_id.clone(), reason: "no verified correction".into() });
            }
        }
    }
    for &i in &partition.discarded {
        discarded.push(Discard {
            prompt_id: groups[i].prompt_id.clone(),
            reason: format!("{} of {} rollouts correct", groups[i].correct_count(), groups[i].rollouts.len()),
        });
    }
    let rl_groups: Vec<RolloutGroup> = partition.rl.iter().map(|&i| groups[i].clone()).collect();
    let n_rl = rl_groups.iter().map(|g| g.rollouts.len()).sum();
    Ok(TrainingBatch {
        n_sft: sft_targets.len(),
        n_rl,
        rl_groups,
        sft_targets,
        discarded,
        config: cfg.clone(),
        consistency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupGrad {
    pub prompt_id: String,
    pub rollouts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGrad {
    pub prompt_id: String,
    pub tokens: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rl_loss: f64,
    pub nll_loss: f64,
    pub coupling: f64,
    pub total: f64,
    pub n_sft: usize,
    pub n_rl: usize,
    /// ∂total/∂logp_new for every RL token.
    pub rl_grad: Vec<GroupGrad>,
    /// ∂total/∂logp_new for every SFT token.
    pub sft_grad: Vec<TargetGrad>,
}

/// Full objective and its gradient coefficients for a composed batch.
pub fn dfpo_loss(batch: &TrainingBatch) -> Result<LossReport, DfpoError> {
    let cfg = &batch.config;
    let rl = rl_loss(&batch.rl_groups, cfg)?;
    let nll = nll_loss(&batch.sft_targets)?;
    let n_rl = batch.rl_groups.iter().map(|g| g.rollouts.len()).sum();
    let n_sft = batch.sft_targets.len();
    let c = combine_losses(rl.loss, nll.loss, n_sft, n_rl, cfg.beta)?;
    let rl_scale = if n_rl == 0 { 0.0 } else { 1.0 };
    Ok(LossReport {
        rl_loss: c.rl_loss,
        nll_loss: c.nll_loss,
        coupling: c.coupling,
        total: c.total,
        n_sft,
        n_rl,
        rl_grad: batch
            .rl_groups
            .iter()
            .zip(rl.grad_coef)
            .map(|(g, rows)| GroupGrad {
                prompt_id: g.prompt_id.clone(),
                rollouts: rows.into_iter().map(|r| r.into_iter().map(|v| v * rl_scale).collect()).collect(),
            })
            .collect(),
        sft_grad: batch
            .sft_targets
            .iter()
            .zip(nll.grad_coef)
            .map(|(t, row)| TargetGrad {
                prompt_id: t.prompt_id.clone(),
                tokens: row.into_iter().map(|v| v * c.coupling).collect(),
            })
            .collect(),
    })
}
