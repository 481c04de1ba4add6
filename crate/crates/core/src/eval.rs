//! Pass@1 benchmark scoring and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::executor::Executor;
use crate::rational::{format_rational, to_f64, Rational};
use crate::response::parse_tagged_response;
use crate::reward::{score_rollout, RewardConfig};
use crate::teacher::Teacher;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}:{line}: {message}")]
    Line { path: String, line: usize, message: String },
    #[error("{path}: duplicate id `{id}`")]
    DuplicateId { path: String, id: String },
    #[error("{0}")]
    Merge(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Benchmarks whose statements fix every variable type; all others accept
/// the integrality-relaxed objective as well.
const STRICT_TYPE_BENCHMARKS: &[&str] = &["mindbench"];

fn normalize_benchmark(name: &str) -> String {
    name.chars().filter(|c| c.is_ascii_alphanumeric()).flat_map(char::to_lowercase).collect()
}

pub fn default_substitution(benchmark: &str) -> bool {
    !STRICT_TYPE_BENCHMARKS.contains(&normalize_benchmark(benchmark).as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkInstance {
    pub id: String,
    pub benchmark: String,
    pub question: String,
    #[serde(with = "crate::rational::serde_exact")]
    pub gt_objective: Rational,
    pub allow_substitution: bool,
}

#[derive(Deserialize)]
struct InstanceLine {
    id: String,
    benchmark: String,
    question: String,
    #[serde(with = "crate::rational::serde_exact")]
    gt_objective: Rational,
    allow_substitution: Option<bool>,
}

fn line_error(path: &Path, line: usize, message: impl ToString) -> EvalError {
    EvalError::Line { path: path.display().to_string(), line, message: message.to_string() }
}

/// Reads the canonical line-delimited benchmark format.
pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkInstance>, EvalError> {
    let text = fs::read_to_string(path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: InstanceLine = serde_json::from_str(line).map_err(|e| line_error(path, i + 1, e))?;
        if raw.id.is_empty() {
            return Err(line_error(path, i + 1, "empty id"));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(EvalError::DuplicateId { path: path.display().to_string(), id: raw.id });
        }
        let allow_substitution = raw.allow_substitution.unwrap_or_else(|| default_substitution(&raw.benchmark));
        out.push(BenchmarkInstance {
            id: raw.id,
            benchmark: raw.benchmark,
            question: raw.question,
            gt_objective: raw.gt_objective,
            allow_substitution,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ResponseLine {
    id: String,
    response: String,
}

/// Reads `{"id", "response"}` lines. One response per id.
pub fn load_responses(path: &Path) -> Result<BTreeMap<String, String>, EvalError> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ResponseLine = serde_json::from_str(line).map_err(|e| line_error(path, i + 1, e))?;
        if out.insert(r.id.clone(), r.response).is_some() {
            return Err(EvalError::DuplicateId { path: path.display().to_string(), id: r.id });
        }
    }
    Ok(out)
}

pub fn write_responses(path: &Path, responses: &BTreeMap<String, String>) -> std::io::Result<()> {
    let mut out = String::new();
    for (id, response) in responses {
        let line = ResponseLine { id: id.clone(), response: response.clone() };
        out.push_str(&serde_json::to_string(&line).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    fs::write(path, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingSettings {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingSettings {
    fn default() -> Self {
        DecodingSettings { temperature: 0.0, max_tokens: 8192 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub reward: RewardConfig,
    pub decoding: DecodingSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScore {
    pub n: u64,
    pub passed: u64,
    pub accuracy: f64,
}

impl BenchmarkScore {
    fn new(n: u64, passed: u64) -> Self {
        let accuracy = if n == 0 { 0.0 } else { to_f64(&exact(passed, n)) };
        BenchmarkScore { n, passed, accuracy }
    }

    pub fn exact_accuracy(&self) -> Rational {
        if self.n == 0 {
            Rational::zero()
        } else {
            exact(self.passed, self.n)
        }
    }
}

fn exact(num: u64, den: u64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub id: String,
    pub benchmark: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_benchmark: BTreeMap<String, BenchmarkScore>,
    pub macro_avg: f64,
    pub config_echo: ConfigEcho,
    #[serde(default)]
    pub instances: Vec<InstanceOutcome>,
}

/// Unweighted mean, exact.
pub fn macro_average(values: &[Rational]) -> Rational {
    if values.is_empty() {
        return Rational::zero();
    }
    values.iter().cloned().sum::<Rational>() / Rational::from_integer(BigInt::from(values.len()))
}

/// Decimal rendering rounded half away from zero.
pub fn format_half_up(value: &Rational, places: u32) -> String {
    let scale = BigInt::from(10u32).pow(places);
    let scaled = value.abs() * Rational::from_integer(scale.clone());
    let two = BigInt::from(2);
    let rounded: BigInt = (scaled.numer() * &two + scaled.denom()).div_floor(&(scaled.denom() * &two));
    let (whole, frac) = rounded.div_rem(&scale);
    let sign = if value.is_negative() && !rounded.is_zero() { "-" } else { "" };
    if places == 0 {
        format!("{sign}{whole}")
    } else {
        format!("{sign}{whole}.{:0>width$}", frac.to_string(), width = places as usize)
    }
}

impl EvalReport {
    fn from_parts(per_benchmark: BTreeMap<String, BenchmarkScore>, config_echo: ConfigEcho, instances: Vec<InstanceOutcome>) -> Self {
        let mut report = EvalReport { per_benchmark, macro_avg: 0.0, config_echo, instances };
        report.macro_avg = to_f64(&report.exact_macro());
        report
    }

    pub fn exact_macro(&self) -> Rational {
        let accs: Vec<Rational> = self.per_benchmark.values().map(BenchmarkScore::exact_accuracy).collect();
        macro_average(&accs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Accuracies as percentages with one decimal, then the macro average.
    pub fn render_text(&self) -> String {
        let hundred = Rational::from_integer(BigInt::from(100));
        let pct = |r: Rational| format!("{}%", format_half_up(&(r * hundred.clone()), 1));
        let mut rows: Vec<[String; 4]> = self
            .per_benchmark
            .iter()
            .map(|(name, s)| [name.clone(), s.n.to_string(), s.passed.to_string(), pct(s.exact_accuracy())])
            .collect();
        rows.push(["Macro AVG".into(), String::new(), String::new(), pct(self.exact_macro())]);
        let header = ["Benchmark", "N", "Passed", "Accuracy"];
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[&str]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i == 0 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "  {c:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let mut out = line(&header);
        out.push('\n');
        for r in &rows {
            out.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
            out.push('\n');
        }
        let echo = &self.config_echo;
        let _ = writeln!(
            out,
            "decoding: temperature {:?}, max_tokens {}; length penalty {}",
            echo.decoding.temperature,
            echo.decoding.max_tokens,
            if echo.reward.apply_length_penalty { "on" } else { "off" }
        );
        out
    }
}

/// Scores one response per instance. Missing or unparseable responses fail.
pub fn evaluate(
    instances: &[BenchmarkInstance],
    responses: &BTreeMap<String, String>,
    cfg: &RewardConfig,
    decoding: &DecodingSettings,
    executor: &dyn Executor,
) -> EvalReport {
    let known: BTreeSet<&str> = instances.iter().map(|i| i.id.as_str()).collect();
    for id in responses.keys().filter(|id| !known.contains(id.as_str())) {
        log::warn!("response `{id}` has no benchmark instance; ignored");
    }
    let base = RewardConfig { apply_length_penalty: false, ..cfg.clone() };
    let mut outcomes: Vec<InstanceOutcome> = instances
        .par_iter()
        .map(|inst| {
            let mut outcome = InstanceOutcome {
                id: inst.id.clone(),
                benchmark: inst.benchmark.clone(),
                passed: false,
                objective: None,
                failure: None,
            };
            let Some(text) = responses.get(&inst.id) else {
                outcome.failure = Some("missing response".into());
                return outcome;
            };
            let parsed = match parse_tagged_response(text) {
                Ok(p) => p,
                Err(e) => {
                    outcome.failure = Some(format!("parse_error: {e}"));
                    return outcome;
                }
            };
            let cfg = RewardConfig { substitution: inst.allow_substitution, ..base.clone() };
            let scored = score_rollout(&parsed, &inst.gt_objective, &cfg, executor);
            outcome.passed = scored.accuracy == 1;
            outcome.objective = scored.objective.as_ref().map(format_rational);
            if let Some(f) = scored.failure {
                outcome.failure = Some(match scored.detail {
                    Some(d) => format!("{}: {d}", f.as_str()),
                    None => f.as_str().to_string(),
                });
            }
            outcome
        })
        .collect();
    outcomes.sort_by(|a, b| (&a.benchmark, &a.id).cmp(&(&b.benchmark, &b.id)));

    let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for o in &outcomes {
        let c = counts.entry(o.benchmark.clone()).or_default();
        c.0 += 1;
        c.1 += o.passed as u64;
    }
    let per_benchmark = counts.into_iter().map(|(k, (n, p))| (k, BenchmarkScore::new(n, p))).collect();
    EvalReport::from_parts(per_benchmark, ConfigEcho { reward: base, decoding: decoding.clone() }, outcomes)
}

/// Combines reports over disjoint benchmarks (e.g. one file per benchmark).
pub fn merge(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let Some(first) = reports.first() else {
        return Err(EvalError::Merge("nothing to merge".into()));
    };
    let mut per_benchmark = BTreeMap::new();
    let mut instances = Vec::new();
    for r in reports {
        if r.config_echo != first.config_echo {
            return Err(EvalError::Merge("reports were produced with different settings".into()));
        }
        for (name, score) in &r.per_benchmark {
            if per_benchmark.insert(name.clone(), BenchmarkScore::new(score.n, score.passed)).is_some() {
                return Err(EvalError::Merge(format!("benchmark `{name}` appears in more than one report")));
            }
        }
        instances.extend(r.instances.iter().cloned());
    }
    Ok(EvalReport::from_parts(per_benchmark, first.config_echo.clone(), instances))
}

/// Asks a model for one response per instance. Failed calls are left out and
/// so count as failures when scored.
pub fn collect_responses(
    instances: &[BenchmarkInstance],
    model: &Teacher,
    template: &str,
    code_skeleton: &str,
) -> BTreeMap<String, String> {
    instances
        .par_iter()
        .filter_map(|inst| match model.ask(template, &[("question", &inst.question), ("python", code_skeleton)], 0) {
            Ok(text) => Some((inst.id.clone(), text)),
            Err(e) => {
                log::warn!("no response for `{}`: {e}", inst.id);
                None
            }
        })
        .collect()
}
