//! Error-driven reverse synthesis of training problems.
//!
//! Wrong rollouts on seed problems are diffed (or judged) into error
//! patterns; a synthesizer model writes new problems that embed the same
//! traps; each candidate must then run to a non-zero optimum and be solved
//! to the same objective by an independent model before it is kept.
//!
//! Progress is journaled as JSON lines so an interrupted run resumes where it
//! stopped. Each line is either a record snapshot after a stage transition or
//! a marker that a unit of work (one seed rollout, or one seed pair) is done.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diff::{diff, ErrorCategory, Mismatch};
use crate::executor::{as_ir, ExecOutcome, Executor, Variant};
use crate::formulation::{serialize_formulation, Formulation};
use crate::rational::{from_f64, Rational};
use crate::response::{extract_code, parse_tagged_response, TaggedResponse};
use crate::reward::{score_rollout, RewardConfig};
use crate::solver::{is_equivalent, solve, Tolerance};
use crate::teacher::Teacher;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("record `{id}` is at stage {stage}, expected {expected}")]
    Stage { id: String, stage: Stage, expected: Stage },
    #[error("executor unavailable: {0}")]
    ExecutorUnavailable(String),
    #[error("{path}:{line}: {message}")]
    Load { path: String, line: usize, message: String },
    #[error("journal: {0}")]
    Journal(#[from] io::Error),
}

fn default_source() -> String {
    "seed".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInstance {
    pub id: String,
    pub question: String,
    #[serde(with = "crate::formulation::serde_doc")]
    pub gold_formulation: Formulation,
    pub gold_code: String,
    #[serde(with = "crate::rational::serde_exact")]
    pub gold_objective: Rational,
    /// Name of the dataset the seed came from; stats are grouped by it.
    #[serde(default = "default_source")]
    pub source: String,
    /// Incorrect policy responses to this seed, as raw text.
    #[serde(default)]
    pub wrong_responses: Vec<String>,
}

impl SeedInstance {
    /// Checks that the gold formulation solves to the recorded objective.
    pub fn check(&self) -> Result<(), String> {
        let r = solve(&self.gold_formulation);
        match &r.objective {
            Some(v) if *v == self.gold_objective => Ok(()),
            Some(v) => Err(format!(
                "gold formulation solves to {} but gold objective is {}",
                crate::rational::format_rational(v),
                crate::rational::format_rational(&self.gold_objective)
            )),
            None => Err(format!("gold formulation is {}", r.status.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPattern {
    pub seed_id: String,
    pub category: ErrorCategory,
    pub description: String,
    pub corrected_pattern: String,
    /// Code of the wrong attempt the pattern was found in.
    #[serde(default)]
    pub wrong_code: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SingleError,
    MultiError,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::SingleError => "single_error",
            Strategy::MultiError => "multi_error",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::SingleError => "Single-Error",
            Strategy::MultiError => "Multi-Error",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generated,
    CodeValid,
    BidirValid,
    Rejected,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Generated => "generated",
            Stage::CodeValid => "code_valid",
            Stage::BidirValid => "bidir_valid",
            Stage::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    Parse,
    ExecError,
    Infeasible,
    Unbounded,
    ZeroObjective,
    Timeout,
    BidirMismatch,
    BidirUnverifiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub id: String,
    pub strategy: Strategy,
    pub source_seed_ids: Vec<String>,
    /// Seed dataset label, or `ALL` for pairs spanning datasets.
    pub source: String,
    pub question: String,
    #[serde(default, with = "crate::formulation::serde_doc_opt", skip_serializing_if = "Option::is_none")]
    pub candidate_formulation: Option<Formulation>,
    pub candidate_code: String,
    #[serde(default, with = "crate::rational::serde_exact_opt", skip_serializing_if = "Option::is_none")]
    pub candidate_objective: Option<Rational>,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection_reason: Option<RejectionReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default)]
    pub trap_categories: Vec<ErrorCategory>,
}

impl SynthesisRecord {
    fn advance(&mut self, to: Stage) {
        assert!(self.stage != Stage::Rejected && to > self.stage, "stage transitions only move forward");
        self.stage = to;
    }

    fn reject(&mut self, reason: RejectionReason, detail: Option<String>) {
        assert!(self.stage != Stage::Rejected, "rejected is terminal");
        self.stage = Stage::Rejected;
        self.rejection_reason = Some(reason);
        self.detail = detail;
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.stage, Stage::Rejected | Stage::BidirValid)
    }
}

// ---------------------------------------------------------------------------
// Error patterns

fn corrected_text(m: &Mismatch, gold: &Formulation) -> String {
    use crate::diff::Component;
    match (m.category.component(), &m.gold) {
        (Component::Variables, Some(name)) => match gold.variable(name) {
            Some(v) => format!("declare {v}"),
            None => m.detail.clone(),
        },
        (Component::Constraints, Some(name)) => match gold.constraints.iter().find(|c| &c.name == name) {
            Some(c) => format!("require {c}"),
            None => m.detail.clone(),
        },
        (Component::Objective, _) => format!("{} {}", gold.direction.as_str(), gold.objective),
        (_, None) => match &m.pred {
            Some(p) => format!("remove `{p}`"),
            None => m.detail.clone(),
        },
        _ => m.detail.clone(),
    }
}

/// Structured patterns straight from the deterministic diff.
pub fn patterns_from_diff(seed: &SeedInstance, pred: &Formulation, wrong_code: &str) -> Vec<ErrorPattern> {
    diff(pred, &seed.gold_formulation)
        .mismatches
        .iter()
        .map(|m| ErrorPattern {
            seed_id: seed.id.clone(),
            category: m.category,
            description: m.detail.clone(),
            corrected_pattern: corrected_text(m, &seed.gold_formulation),
            wrong_code: wrong_code.to_string(),
        })
        .collect()
}

/// Finds the outermost JSON array in model output, tolerating fences and prose.
pub fn extract_json_list(text: &str) -> Option<Vec<Value>> {
    let start = text.find('[')?;
    let end = text.rfind(']')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

fn category_list() -> String {
    ErrorCategory::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
}

/// Parses a judge reply into patterns; items that do not fit are skipped.
pub fn parse_judge_patterns(seed_id: &str, wrong_code: &str, text: &str) -> Vec<ErrorPattern> {
    let Some(items) = extract_json_list(text) else {
        log::warn!("judge output for `{seed_id}` is not a JSON list");
        return Vec::new();
    };
    items
        .into_iter()
        .filter_map(|item| {
            let category = item.get("category").and_then(Value::as_str).and_then(ErrorCategory::parse);
            let description = item.get("description").and_then(Value::as_str).map(str::trim).unwrap_or("");
            let corrected = item.get("corrected_pattern").and_then(Value::as_str).unwrap_or("").trim();
            match category {
                Some(category) if !description.is_empty() => Some(ErrorPattern {
                    seed_id: seed_id.to_string(),
                    category,
                    description: description.to_string(),
                    corrected_pattern: corrected.to_string(),
                    wrong_code: wrong_code.to_string(),
                }),
                _ => {
                    log::warn!("skipping unusable judge item for `{seed_id}`: {item}");
                    None
                }
            }
        })
        .collect()
}

/// Error patterns of an incorrect rollout. IR code is diffed against the gold
/// formulation; other code is sent to the judge, whose failures yield an
/// empty list.
pub fn identify_error_patterns(
    seed: &SeedInstance,
    rollout: &TaggedResponse,
    executor: &dyn Executor,
    reward: &RewardConfig,
    judge: Option<&Teacher>,
) -> Result<Vec<ErrorPattern>, SynthesisError> {
    let scored = score_rollout(rollout, &seed.gold_objective, reward, executor);
    if scored.accuracy == 1 {
        return Err(SynthesisError::Precondition(format!(
            "rollout for `{}` is correct; patterns come from wrong attempts only",
            seed.id
        )));
    }
    let code = match extract_code(rollout) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("rollout for `{}` has no usable code: {e}", seed.id);
            return Ok(Vec::new());
        }
    };
    if let Some(pred) = as_ir(&code) {
        return Ok(patterns_from_diff(seed, &pred, &code));
    }
    let Some(judge) = judge else {
        log::warn!("no judge configured for script rollout on `{}`", seed.id);
        return Ok(Vec::new());
    };
    let formulation = seed.gold_formulation.to_string();
    let categories = category_list();
    match judge.ask(
        "error_pattern_judge",
        &[
            ("question", &seed.question),
            ("mathematical formulation", &formulation),
            ("python", &code),
            ("categories", &categories),
        ],
        0,
    ) {
        Ok(text) => Ok(parse_judge_patterns(&seed.id, &code, &text)),
        Err(e) => {
            log::warn!("judge call for `{}` failed: {e}", seed.id);
            Ok(Vec::new())
        }
    }
}

// ---------------------------------------------------------------------------
// Synthesis

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Instances requested per synthesizer call.
    pub per_call: usize,
    /// Worker threads for the pipeline.
    pub workers: usize,
    pub tolerance: Tolerance,
    /// `|objective| ≤ zero_epsilon` counts as zero for script candidates;
    /// IR candidates always use exact zero.
    pub zero_epsilon: f64,
    /// Code stub bound to the validator prompt's code slot.
    pub code_skeleton: String,
    /// Validator prompt template.
    pub validator_template: String,
    /// Wrong responses used per seed.
    pub rollouts_per_seed: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            per_call: 3,
            workers: 4,
            tolerance: Tolerance::default(),
            zero_epsilon: 0.0,
            code_skeleton: "from pyscipopt import Model\n\nmodel = Model()\n".into(),
            validator_template: "chain_of_thought_think".into(),
            rollouts_per_seed: 1,
        }
    }
}

fn request_suffix(n: usize) -> String {
    format!("\n\nGenerate {n} instances.")
}

fn ask_with_suffix(teacher: &Teacher, template: &str, bindings: &[(&str, &str)], n: usize) -> Result<String, String> {
    let mut prompt = crate::teacher::PromptTemplate::builtin(template)
        .and_then(|t| t.render(bindings))
        .map_err(|e| e.to_string())?;
    prompt.user.push_str(&request_suffix(n));
    teacher.gateway.chat(&teacher.request(prompt)).map_err(|e| e.to_string())
}

struct Origin<'a> {
    strategy: Strategy,
    seed_ids: Vec<String>,
    source: String,
    unit: &'a str,
    traps: Vec<ErrorCategory>,
}

fn records_from_output(origin: &Origin<'_>, text: &str) -> Vec<SynthesisRecord> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    let Some(items) = extract_json_list(text) else {
        log::warn!("synthesizer output for {} is not a JSON list", origin.unit);
        return Vec::new();
    };
    items
        .into_iter()
        .enumerate()
        .map(|(k, item)| {
            let question = item.get("question").and_then(Value::as_str).map(str::to_string);
            let code = match item.get("code_solution") {
                Some(Value::String(s)) => Some(s.clone()),
                Some(v @ Value::Object(_)) => Some(serde_json::to_string_pretty(v).expect("value serializes")),
                _ => None,
            };
            let mut rec = SynthesisRecord {
                id: format!("{}-{:03}", origin.unit, k),
                strategy: origin.strategy,
                source_seed_ids: origin.seed_ids.clone(),
                source: origin.source.clone(),
                question: question.clone().unwrap_or_default(),
                candidate_formulation: None,
                candidate_code: code.clone().unwrap_or_default(),
                candidate_objective: None,
                stage: Stage::Generated,
                rejection_reason: None,
                detail: None,
                trap_categories: origin.traps.clone(),
            };
            match (question, code) {
                (Some(q), Some(c)) if !q.trim().is_empty() && !c.trim().is_empty() => {
                    rec.candidate_formulation = as_ir(&c);
                }
                _ => rec.reject(RejectionReason::Parse, Some("item lacks question or code_solution".into())),
            }
            rec
        })
        .collect()
}

fn unique_traps(patterns: &[&ErrorPattern]) -> Vec<ErrorCategory> {
    patterns.iter().map(|p| p.category).collect::<BTreeSet<_>>().into_iter().collect()
}

/// One synthesizer call for a seed and one of its patterns.
pub fn synthesize_single_error(
    seed: &SeedInstance,
    pattern: &ErrorPattern,
    teacher: &Teacher,
    cfg: &SynthesisConfig,
) -> Result<Vec<SynthesisRecord>, SynthesisError> {
    synthesize_single_error_unit(seed, &[pattern], teacher, cfg, &format!("single-{}", seed.id))
}

fn synthesize_single_error_unit(
    seed: &SeedInstance,
    patterns: &[&ErrorPattern],
    teacher: &Teacher,
    cfg: &SynthesisConfig,
    unit: &str,
) -> Result<Vec<SynthesisRecord>, SynthesisError> {
    let Some(first) = patterns.first() else {
        return Err(SynthesisError::Precondition(format!("seed `{}` has no error pattern", seed.id)));
    };
    if patterns.iter().any(|p| p.seed_id != seed.id) {
        return Err(SynthesisError::Precondition("pattern belongs to a different seed".into()));
    }
    let formulation = seed.gold_formulation.to_string();
    let text = ask_with_suffix(
        teacher,
        "single_error_synthesis",
        &[("question", &seed.question), ("mathematical formulation", &formulation), ("python", &first.wrong_code)],
        cfg.per_call,
    );
    let origin = Origin {
        strategy: Strategy::SingleError,
        seed_ids: vec![seed.id.clone()],
        source: seed.source.clone(),
        unit,
        traps: unique_traps(patterns),
    };
    match text {
        Ok(t) => Ok(records_from_output(&origin, &t)),
        Err(e) => {
            log::warn!("synthesizer call for {unit} failed: {e}");
            Ok(Vec::new())
        }
    }
}

/// One synthesizer call combining the traps of two seeds.
pub fn synthesize_multi_error(
    a: (&SeedInstance, &[ErrorPattern]),
    b: (&SeedInstance, &[ErrorPattern]),
    teacher: &Teacher,
    cfg: &SynthesisConfig,
) -> Result<Vec<SynthesisRecord>, SynthesisError> {
    let unit = format!("multi-{}+{}", a.0.id, b.0.id);
    synthesize_multi_error_unit(a, b, teacher, cfg, &unit)
}

fn synthesize_multi_error_unit(
    a: (&SeedInstance, &[ErrorPattern]),
    b: (&SeedInstance, &[ErrorPattern]),
    teacher: &Teacher,
    cfg: &SynthesisConfig,
    unit: &str,
) -> Result<Vec<SynthesisRecord>, SynthesisError> {
    if a.0.id == b.0.id {
        return Err(SynthesisError::Invalid(format!("multi-error synthesis needs two distinct seeds, got `{}` twice", a.0.id)));
    }
    for (seed, patterns) in [a, b] {
        if patterns.is_empty() {
            return Err(SynthesisError::Precondition(format!("seed `{}` has no error pattern", seed.id)));
        }
    }
    let (fa, fb) = (a.0.gold_formulation.to_string(), b.0.gold_formulation.to_string());
    let text = ask_with_suffix(
        teacher,
        "multi_error_synthesis",
        &[
            ("question1", &a.0.question),
            ("model1", &fa),
            ("python1", &a.1[0].wrong_code),
            ("question2", &b.0.question),
            ("model2", &fb),
            ("python2", &b.1[0].wrong_code),
        ],
        cfg.per_call,
    );
    let all: Vec<&ErrorPattern> = a.1.iter().chain(b.1).collect();
    let origin = Origin {
        strategy: Strategy::MultiError,
        seed_ids: vec![a.0.id.clone(), b.0.id.clone()],
        source: if a.0.source == b.0.source { a.0.source.clone() } else { "ALL".into() },
        unit,
        traps: unique_traps(&all),
    };
    match text {
        Ok(t) => Ok(records_from_output(&origin, &t)),
        Err(e) => {
            log::warn!("synthesizer call for {unit} failed: {e}");
            Ok(Vec::new())
        }
    }
}

// ---------------------------------------------------------------------------
// Quality control

fn expect_stage(rec: &SynthesisRecord, expected: Stage) -> Result<(), SynthesisError> {
    if rec.stage != expected {
        return Err(SynthesisError::Stage { id: rec.id.clone(), stage: rec.stage, expected });
    }
    Ok(())
}

/// Runs the candidate; keeps it only if it is optimal with a non-zero objective.
pub fn code_validate(
    mut rec: SynthesisRecord,
    executor: &dyn Executor,
    cfg: &SynthesisConfig,
) -> Result<SynthesisRecord, SynthesisError> {
    expect_stage(&rec, Stage::Generated)?;
    let outcome = match &rec.candidate_formulation {
        Some(f) => executor.run(&serialize_formulation(f), Variant::AsDeclared),
        None => executor.run(&rec.candidate_code, Variant::AsDeclared),
    };
    match outcome {
        ExecOutcome::Optimal(v) => {
            let zero = if rec.candidate_formulation.is_some() {
                v.is_zero()
            } else {
                let eps = from_f64(cfg.zero_epsilon).unwrap_or_else(Rational::zero);
                v.abs() <= eps
            };
            if zero {
                rec.reject(RejectionReason::ZeroObjective, None);
            } else {
                rec.candidate_objective = Some(v);
                rec.advance(Stage::CodeValid);
            }
        }
        ExecOutcome::Unavailable(e) => return Err(SynthesisError::ExecutorUnavailable(e)),
        ExecOutcome::Infeasible => rec.reject(RejectionReason::Infeasible, None),
        ExecOutcome::Unbounded => rec.reject(RejectionReason::Unbounded, None),
        ExecOutcome::Timeout => rec.reject(RejectionReason::Timeout, None),
        ExecOutcome::NoObjective => rec.reject(RejectionReason::ExecError, Some("no objective reported".into())),
        ExecOutcome::Oom => rec.reject(RejectionReason::ExecError, Some("out of memory".into())),
        ExecOutcome::Error(e) => rec.reject(RejectionReason::ExecError, Some(e)),
    }
    Ok(rec)
}

/// An independent model solves the question from scratch; the record is kept
/// only when its objective agrees. Any failure to get an answer rejects.
pub fn bidirectional_validate(
    mut rec: SynthesisRecord,
    validator: &Teacher,
    executor: &dyn Executor,
    cfg: &SynthesisConfig,
) -> Result<SynthesisRecord, SynthesisError> {
    expect_stage(&rec, Stage::CodeValid)?;
    let target = rec.candidate_objective.clone().expect("code_valid records carry an objective");
    let reply = validator.ask(
        &cfg.validator_template,
        &[("question", &rec.question), ("python", &cfg.code_skeleton)],
        0,
    );
    let unverifiable = |rec: &mut SynthesisRecord, why: String| rec.reject(RejectionReason::BidirUnverifiable, Some(why));
    let text = match reply {
        Ok(t) => t,
        Err(e) => {
            unverifiable(&mut rec, e.to_string());
            return Ok(rec);
        }
    };
    let code = match parse_tagged_response(&text).and_then(|r| extract_code(&r)) {
        Ok(c) => c,
        Err(e) => {
            unverifiable(&mut rec, e.to_string());
            return Ok(rec);
        }
    };
    match executor.run(&code, Variant::AsDeclared) {
        ExecOutcome::Optimal(v) if is_equivalent(&v, &target, &cfg.tolerance) => rec.advance(Stage::BidirValid),
        ExecOutcome::Optimal(v) => rec.reject(
            RejectionReason::BidirMismatch,
            Some(format!("validator objective {}", crate::rational::format_rational(&v))),
        ),
        ExecOutcome::Unavailable(e) => return Err(SynthesisError::ExecutorUnavailable(e)),
        other => unverifiable(&mut rec, format!("validator code did not solve: {other:?}")),
    }
    Ok(rec)
}

// ---------------------------------------------------------------------------
// Journal

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent {
    Record { record: Box<SynthesisRecord> },
    UnitDone { unit: String },
}

/// Append-only store of stage transitions.
pub struct Journal {
    file: Option<Mutex<File>>,
    records: BTreeMap<String, SynthesisRecord>,
    done: BTreeSet<String>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Journal { file: None, records: BTreeMap::new(), done: BTreeSet::new() }
    }

    /// Opens or creates the journal and replays what is already there. A torn
    /// final line (from an interrupted write) is ignored.
    pub fn open(path: &Path) -> Result<Self, SynthesisError> {
        let mut journal = Journal::in_memory();
        if path.exists() {
            let (records, done) = replay(path)?;
            journal.records = records;
            journal.done = done;
            repair_tail(path)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        journal.file = Some(Mutex::new(file));
        Ok(journal)
    }

    fn append(&self, event: &JournalEvent) -> Result<(), SynthesisError> {
        if let Some(file) = &self.file {
            let mut line = serde_json::to_string(event).map_err(io::Error::other)?;
            line.push('\n');
            let mut f = file.lock().unwrap();
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }

    fn record(&self, rec: &SynthesisRecord) -> Result<(), SynthesisError> {
        self.append(&JournalEvent::Record { record: Box::new(rec.clone()) })
    }
}

fn replay(path: &Path) -> Result<(BTreeMap<String, SynthesisRecord>, BTreeSet<String>), SynthesisError> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let mut records = BTreeMap::new();
    let mut done = BTreeSet::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JournalEvent>(line) {
            Ok(JournalEvent::Record { record }) => {
                records.insert(record.id.clone(), *record);
            }
            Ok(JournalEvent::UnitDone { unit }) => {
                done.insert(unit);
            }
            Err(_) if i + 1 == lines.len() => log::warn!("ignoring torn final journal line"),
            Err(e) => {
                return Err(SynthesisError::Load {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((records, done))
}

/// Drops a trailing partial line so later appends start on a fresh line.
fn repair_tail(path: &Path) -> io::Result<()> {
    let text = fs::read_to_string(path)?;
    if text.is_empty() || text.ends_with('\n') {
        return Ok(());
    }
    let keep = text.rfind('\n').map_or(0, |i| i + 1);
    fs::write(path, &text[..keep])
}

/// Last snapshot of every record in a journal file.
pub fn read_journal(path: &Path) -> Result<Vec<SynthesisRecord>, SynthesisError> {
    Ok(replay(path)?.0.into_values().collect())
}

// ---------------------------------------------------------------------------
// Stats

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub strategy: String,
    pub source: String,
    pub initial: u64,
    pub code_valid: u64,
    pub bidir_valid: u64,
}

/// Hundredths of a percent of `num / den`, rounded half up; zero if `den = 0`.
pub fn percent_hundredths(num: u64, den: u64) -> u64 {
    if den == 0 {
        return 0;
    }
    let num = num as u128 * 20_000;
    ((num + den as u128) / (2 * den as u128)) as u64
}

pub fn format_percent(num: u64, den: u64) -> String {
    let h = percent_hundredths(num, den);
    format!("{}.{:02}%", h / 100, h % 100)
}

pub fn exact_rate(num: u64, den: u64) -> Rational {
    if den == 0 {
        return Rational::zero();
    }
    Rational::new(BigInt::from(num), BigInt::from(den))
}

impl StatsRow {
    pub fn code_rate(&self) -> Rational {
        exact_rate(self.code_valid, self.initial)
    }

    pub fn bidir_rate(&self) -> Rational {
        exact_rate(self.bidir_valid, self.code_valid)
    }

    pub fn passed_rate(&self) -> Rational {
        exact_rate(self.bidir_valid, self.initial)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PipelineStats {
    pub rows: Vec<StatsRow>,
}

impl PipelineStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SynthesisRecord>) -> Self {
        let mut rows: BTreeMap<(Strategy, String), StatsRow> = BTreeMap::new();
        for r in records {
            let row = rows.entry((r.strategy, r.source.clone())).or_insert_with(|| StatsRow {
                strategy: r.strategy.label().to_string(),
                source: r.source.clone(),
                initial: 0,
                code_valid: 0,
                bidir_valid: 0,
            });
            row.initial += 1;
            let passed_code = match r.stage {
                Stage::CodeValid | Stage::BidirValid => true,
                Stage::Rejected => r.candidate_objective.is_some(),
                Stage::Generated => false,
            };
            if passed_code {
                row.code_valid += 1;
            }
            if r.stage == Stage::BidirValid {
                row.bidir_valid += 1;
            }
        }
        PipelineStats { rows: rows.into_values().collect() }
    }

    pub fn total(&self) -> StatsRow {
        StatsRow {
            strategy: "Total".into(),
            source: "-".into(),
            initial: self.rows.iter().map(|r| r.initial).sum(),
            code_valid: self.rows.iter().map(|r| r.code_valid).sum(),
            bidir_valid: self.rows.iter().map(|r| r.bidir_valid).sum(),
        }
    }

    /// Structured form with rates as percent strings.
    pub fn to_value(&self) -> Value {
        let row = |r: &StatsRow| {
            serde_json::json!({
                "strategy": r.strategy,
                "source": r.source,
                "initial": r.initial,
                "code_valid": r.code_valid,
                "code_rate": format_percent(r.code_valid, r.initial),
                "bidir_valid": r.bidir_valid,
                "bidir_rate": format_percent(r.bidir_valid, r.code_valid),
                "passed_rate": format_percent(r.bidir_valid, r.initial),
            })
        };
        let mut doc = serde_json::json!({ "rows": self.rows.iter().map(row).collect::<Vec<_>>() });
        if !self.rows.is_empty() {
            doc["total"] = row(&self.total());
        }
        doc
    }

    pub fn render_table(&self) -> String {
        let header = ["Strategy", "Seed Data", "Initial", "Code Count", "Code Rate", "Bidir Count", "Bidir Rate", "Passed Rate"];
        let mut lines: Vec<[String; 8]> = Vec::new();
        let cells = |r: &StatsRow| {
            [
                r.strategy.clone(),
                r.source.clone(),
                r.initial.to_string(),
                r.code_valid.to_string(),
                format_percent(r.code_valid, r.initial),
                r.bidir_valid.to_string(),
                format_percent(r.bidir_valid, r.code_valid),
                format_percent(r.bidir_valid, r.initial),
            ]
        };
        for r in &self.rows {
            lines.push(cells(r));
        }
        if !self.rows.is_empty() {
            lines.push(cells(&self.total()));
        }
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.len());
            }
        }
        let fmt_row = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = fmt_row(header.to_vec());
        out.push('\n');
        for l in &lines {
            out.push_str(&fmt_row(l.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Orchestration

pub struct Teachers<'a> {
    pub synthesizer: &'a Teacher,
    pub validator: &'a Teacher,
    pub judge: Option<&'a Teacher>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Records that passed both checks, sorted by id.
    pub dataset: Vec<SynthesisRecord>,
    /// Every record in its final state, sorted by id.
    pub records: Vec<SynthesisRecord>,
    pub stats: PipelineStats,
}

/// Work items: one per (seed, wrong response) for single-error, one per seed
/// pair for multi-error.
enum Unit<'a> {
    Single { key: String, seed: &'a SeedInstance, response: usize },
    Multi { key: String, a: &'a SeedInstance, b: &'a SeedInstance },
}

impl Unit<'_> {
    fn key(&self) -> &str {
        match self {
            Unit::Single { key, .. } | Unit::Multi { key, .. } => key,
        }
    }
}

/// Pairs consecutive seeds within each source; leftovers from different
/// sources are then paired across sources in id order.
pub fn pair_seeds(seeds: &[&SeedInstance]) -> Vec<(usize, usize)> {
    let mut by_source: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in seeds.iter().enumerate() {
        by_source.entry(s.source.as_str()).or_default().push(i);
    }
    let mut pairs = Vec::new();
    let mut leftovers = Vec::new();
    for idx in by_source.values() {
        for chunk in idx.chunks(2) {
            match chunk {
                [a, b] => pairs.push((*a, *b)),
                [a] => leftovers.push(*a),
                _ => unreachable!(),
            }
        }
    }
    leftovers.sort_by(|a, b| seeds[*a].id.cmp(&seeds[*b].id));
    for chunk in leftovers.chunks(2) {
        if let [a, b] = chunk {
            pairs.push((*a, *b));
        }
    }
    pairs
}

fn seed_patterns(
    seed: &SeedInstance,
    response: usize,
    executor: &dyn Executor,
    reward: &RewardConfig,
    judge: Option<&Teacher>,
) -> Vec<ErrorPattern> {
    let Some(text) = seed.wrong_responses.get(response) else { return Vec::new() };
    let parsed = match parse_tagged_response(text) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("wrong response {response} of `{}` does not parse: {e}", seed.id);
            return Vec::new();
        }
    };
    match identify_error_patterns(seed, &parsed, executor, reward, judge) {
        Ok(p) => p,
        Err(e) => {
            log::warn!("{e}");
            Vec::new()
        }
    }
}

/// Runs identification, synthesis and both validation stages.
pub fn run_pipeline(
    seeds: &[SeedInstance],
    strategy: Strategy,
    teachers: &Teachers<'_>,
    executor: &dyn Executor,
    cfg: &SynthesisConfig,
    journal: &Journal,
) -> Result<PipelineOutput, SynthesisError> {
    let mut ids = BTreeSet::new();
    for s in seeds {
        if !ids.insert(s.id.as_str()) {
            return Err(SynthesisError::Invalid(format!("duplicate seed id `{}`", s.id)));
        }
    }
    let mut ordered: Vec<&SeedInstance> = seeds.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let reward = RewardConfig { tolerance: cfg.tolerance, apply_length_penalty: false, ..RewardConfig::default() };

    let units: Vec<Unit> = match strategy {
        Strategy::SingleError => ordered
            .iter()
            .flat_map(|s| {
                (0..s.wrong_responses.len().min(cfg.rollouts_per_seed)).map(move |r| Unit::Single {
                    key: format!("single-{}-r{r:02}", s.id),
                    seed: s,
                    response: r,
                })
            })
            .collect(),
        Strategy::MultiError => pair_seeds(&ordered)
            .into_iter()
            .map(|(a, b)| Unit::Multi {
                key: format!("multi-{}+{}", ordered[a].id, ordered[b].id),
                a: ordered[a],
                b: ordered[b],
            })
            .collect(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| SynthesisError::Invalid(e.to_string()))?;

    let results: Vec<Result<Vec<SynthesisRecord>, SynthesisError>> = pool.install(|| {
        units
            .par_iter()
            .map(|unit| {
                if journal.done.contains(unit.key()) {
                    let prefix = format!("{}-", unit.key());
                    return Ok(journal
                        .records
                        .range(prefix.clone()..)
                        .take_while(|(k, _)| k.starts_with(&prefix))
                        .map(|(_, r)| r.clone())
                        .collect());
                }
                let generated = match unit {
                    Unit::Single { key, seed, response } => {
                        let patterns = seed_patterns(seed, *response, executor, &reward, teachers.judge);
                        if patterns.is_empty() {
                            Vec::new()
                        } else {
                            let refs: Vec<&ErrorPattern> = patterns.iter().collect();
                            synthesize_single_error_unit(seed, &refs, teachers.synthesizer, cfg, key)?
                        }
                    }
                    Unit::Multi { key, a, b } => {
                        let pa = seed_patterns(a, 0, executor, &reward, teachers.judge);
                        let pb = seed_patterns(b, 0, executor, &reward, teachers.judge);
                        if pa.is_empty() || pb.is_empty() {
                            log::warn!("{key}: a seed has no error pattern, skipping");
                            Vec::new()
                        } else {
                            synthesize_multi_error_unit((a, &pa), (b, &pb), teachers.synthesizer, cfg, key)?
                        }
                    }
                };
                let mut finished = Vec::with_capacity(generated.len());
                for fresh in generated {
                    // Resume from the journaled snapshot when there is one.
                    let mut rec = journal.records.get(&fresh.id).cloned().unwrap_or_else(|| fresh.clone());
                    if !journal.records.contains_key(&rec.id) {
                        journal.record(&rec)?;
                    }
                    if rec.stage == Stage::Generated {
                        rec = code_validate(rec, executor, cfg)?;
                        journal.record(&rec)?;
                    }
                    if rec.stage == Stage::CodeValid {
                        rec = bidirectional_validate(rec, teachers.validator, executor, cfg)?;
                        journal.record(&rec)?;
                    }
                    finished.push(rec);
                }
                journal.append(&JournalEvent::UnitDone { unit: unit.key().to_string() })?;
                Ok(finished)
            })
            .collect()
    });

    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let stats = PipelineStats::from_records(&records);
    let dataset = export_dataset(&records, executor, &cfg.tolerance);
    Ok(PipelineOutput { dataset, records, stats })
}

/// Passed records whose candidates still solve to the recorded objective.
pub fn export_dataset(records: &[SynthesisRecord], executor: &dyn Executor, tol: &Tolerance) -> Vec<SynthesisRecord> {
    records
        .iter()
        .filter(|r| r.stage == Stage::BidirValid)
        .filter(|r| {
            let outcome = match &r.candidate_formulation {
                Some(f) => executor.run(&serialize_formulation(f), Variant::AsDeclared),
                None => executor.run(&r.candidate_code, Variant::AsDeclared),
            };
            let ok = matches!((&outcome, &r.candidate_objective), (ExecOutcome::Optimal(v), Some(o)) if is_equivalent(v, o, tol));
            if !ok {
                log::warn!("record `{}` no longer reproduces its objective; dropped from export", r.id);
            }
            ok
        })
        .cloned()
        .collect()
}

// ---------------------------------------------------------------------------
// Files

fn load_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SynthesisError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| SynthesisError::Load {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Loads seeds from a `.jsonl` file or every `.jsonl` file in a directory
/// (in name order) and checks each gold formulation against its objective.
pub fn load_seeds(path: &Path) -> Result<Vec<SeedInstance>, SynthesisError> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut seeds = Vec::new();
    for f in files {
        for (i, seed) in load_jsonl::<SeedInstance>(&f)?.into_iter().enumerate() {
            seed.check().map_err(|message| SynthesisError::Load {
                path: f.display().to_string(),
                line: i + 1,
                message: format!("seed `{}`: {message}", seed.id),
            })?;
            seeds.push(seed);
        }
    }
    Ok(seeds)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}

pub fn load_records(path: &Path) -> Result<Vec<SynthesisRecord>, SynthesisError> {
    load_jsonl(path)
}

/// Draws `quotas[source]` items from each pool without replacement using a
/// seeded generator; output keeps pool order (source name, then draw order).
pub fn sample_quota<T: Clone>(
    pools: &BTreeMap<String, Vec<T>>,
    quotas: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<Vec<(String, T)>, SynthesisError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (source, &quota) in quotas {
        let pool = pools
            .get(source)
            .ok_or_else(|| SynthesisError::Invalid(format!("no pool named `{source}`")))?;
        if quota > pool.len() {
            return Err(SynthesisError::Invalid(format!(
                "quota {quota} for `{source}` exceeds its {} items",
                pool.len()
            )));
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(&mut rng);
        out.extend(idx[..quota].iter().map(|&i| (source.clone(), pool[i].clone())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_rounding_matches_published_rows() {
        assert_eq!(format_percent(5016, 5033), "99.66%");
        assert_eq!(format_percent(2007, 5016), "40.01%");
        assert_eq!(format_percent(2007, 5033), "39.88%");
        assert_eq!(format_percent(17821, 23009), "77.45%");
        assert_eq!(format_percent(9663, 17821), "54.22%");
        assert_eq!(format_percent(9663, 23009), "42.00%");
        assert_eq!(format_percent(1, 0), "0.00%");
    }

    #[test]
    fn json_lists_are_found_in_prose() {
        let v = extract_json_list("Here you go:\n```json\n[{\"a\": 1}]\n```").unwrap();
        assert_eq!(v.len(), 1);
        assert!(extract_json_list("nothing").is_none());
    }

    #[test]
    fn judge_items_need_category_and_description() {
        let text = r#"[{"category":"wrong variable type","description":"x must be integer","corrected_pattern":"x integer"},
                      {"category":"made up","description":"?"},
                      {"category":"omitted_constraint","description":""}]"#;
        let p = parse_judge_patterns("s", "code", text);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].category, ErrorCategory::WrongVariableType);
    }

    #[test]
    fn malformed_items_become_parse_rejections() {
        let origin = Origin {
            strategy: Strategy::SingleError,
            seed_ids: vec!["s".into()],
            source: "src".into(),
            unit: "single-s-r00",
            traps: vec![],
        };
        let text = r#"[{"question":"q1","code_solution":"c"},{"question":"q2","code_solution":"c"},
                      {"question":"q3","code_solution":"c"},{"question":"q4"}]"#;
        let recs = records_from_output(&origin, text);
        assert_eq!(recs.len(), 4);
        assert_eq!(recs.iter().filter(|r| r.stage == Stage::Generated).count(), 3);
        assert_eq!(recs[3].rejection_reason, Some(RejectionReason::Parse));
        assert!(records_from_output(&origin, "").is_empty());
    }

    #[test]
    fn pairing_prefers_same_source() {
        let mk = |id: &str, src: &str| SeedInstance {
            id: id.into(),
            question: String::new(),
            gold_formulation: Formulation::new(crate::formulation::Direction::Maximize),
            gold_code: String::new(),
            gold_objective: Rational::zero(),
            source: src.into(),
            wrong_responses: vec![],
        };
        let seeds = [mk("a", "x"), mk("b", "x"), mk("c", "x"), mk("d", "y")];
        let refs: Vec<&SeedInstance> = seeds.iter().collect();
        assert_eq!(pair_seeds(&refs), vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn quota_sampling_is_seeded() {
        let pools: BTreeMap<String, Vec<u32>> =
            [("a".to_string(), (0..10).collect()), ("b".to_string(), (100..105).collect())].into();
        let quotas: BTreeMap<String, usize> = [("a".to_string(), 3), ("b".to_string(), 5)].into();
        let one = sample_quota(&pools, &quotas, 7).unwrap();
        assert_eq!(one, sample_quota(&pools, &quotas, 7).unwrap());
        assert_eq!(one.len(), 8);
        let too_many: BTreeMap<String, usize> = [("b".to_string(), 6)].into();
        assert!(sample_quota(&pools, &too_many, 7).is_err());
    }
}
