//! Shared fixture plumbing for the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use orfit_core::formulation::{serialize_formulation, Constraint, Formulation, LinearExpr, Sense};
use orfit_core::rational::{int, Rational};
use orfit_core::response::render_sections;
use orfit_core::synthesis::{load_seeds, SeedInstance};
use orfit_core::teacher::{
    request_key, ChatRequest, Gateway, MockTransport, RoleConfig, Teacher, Transport, TransportError, TransportPolicy,
};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn seeds() -> Vec<SeedInstance> {
    load_seeds(&fixtures().join("seeds")).expect("fixture seeds load")
}

pub fn role(name: &str) -> RoleConfig {
    RoleConfig { model_name: name.into(), temperature: 0.0, max_tokens: 8192 }
}

pub fn policy() -> TransportPolicy {
    TransportPolicy { max_retries: 0, backoff_base: Duration::ZERO, rate_limit: None, timeout: Duration::from_secs(5) }
}

pub fn teacher(transport: Arc<dyn Transport>, name: &str) -> Teacher {
    Teacher::new(Arc::new(Gateway::new(transport, policy())), role(name))
}

pub fn mock_teachers() -> (Teacher, Teacher) {
    let t: Arc<dyn Transport> = Arc::new(MockTransport::new(fixtures().join("mock")));
    (teacher(t.clone(), "synthesizer"), teacher(t, "validator"))
}

/// Compares `actual` with a golden file, or rewrites it when UPDATE_GOLDEN is set.
pub fn check_golden(name: &str, actual: &str) {
    let path = fixtures().join("golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {name}; rerun with UPDATE_GOLDEN=1 after checking the change");
}

fn scale_rhs(f: &Formulation, k: i64) -> Formulation {
    let mut g = f.clone();
    for c in &mut g.constraints {
        c.rhs = c.rhs.clone() * int(k);
    }
    g
}

/// Candidate formulation the canned synthesizer emits for item `k`.
pub fn candidate(seed: &SeedInstance, index: usize, k: usize) -> Option<Formulation> {
    let gold = &seed.gold_formulation;
    match k {
        0 => Some(scale_rhs(gold, 2)),
        1 => Some(scale_rhs(gold, 3)),
        _ => match index % 3 {
            0 => {
                let mut g = scale_rhs(gold, 2);
                let first = g.variables[0].name.clone();
                g.constraints.push(Constraint::new("impossible", LinearExpr::from_terms([(first, int(1))]), Sense::Le, int(-1)));
                Some(g)
            }
            1 => {
                let mut g = scale_rhs(gold, 2);
                g.objective = LinearExpr::new();
                Some(g)
            }
            _ => None,
        },
    }
}

/// Formulation the canned validator answers with for item `k`.
pub fn validator_answer(seed: &SeedInstance, index: usize, k: usize) -> Option<Formulation> {
    match k {
        0 => candidate(seed, index, 0),
        1 if index.is_multiple_of(2) => Some(scale_rhs(&seed.gold_formulation, 2)),
        _ => None,
    }
}

fn tag(ids: &[&str], k: usize) -> String {
    format!("[cand:{}:{k}]", ids.join("+"))
}

/// Deterministic stand-in for the synthesizer and validator models.
pub struct CannedModels {
    pub seeds: Vec<SeedInstance>,
}

impl CannedModels {
    fn reply(&self, req: &ChatRequest) -> String {
        let text = &req.user;
        if let Some(start) = text.find("[cand:") {
            let end = start + text[start..].find(']').unwrap();
            let body = &text[start + 6..end];
            let (ids, k) = body.rsplit_once(':').unwrap();
            let k: usize = k.parse().unwrap();
            let first = ids.split('+').next().unwrap();
            let index = self.seeds.iter().position(|s| s.id == first).unwrap();
            return match validator_answer(&self.seeds[index], index, k) {
                Some(f) => render_sections(Some("Set up the model."), "see code", serialize_formulation(&f).trim_end()),
                None => "I could not determine a model for this problem.".into(),
            };
        }
        let found: Vec<(usize, &SeedInstance)> =
            self.seeds.iter().enumerate().filter(|(_, s)| text.contains(&s.question)).collect();
        assert!(!found.is_empty(), "canned models got an unexpected prompt");
        let ids: Vec<&str> = found.iter().map(|(_, s)| s.id.as_str()).collect();
        let (index, seed) = found[0];
        let items: Vec<serde_json::Value> = (0..3)
            .map(|k| {
                let question = format!("{} Variant {k} of this scenario. {}", seed.question, tag(&ids, k));
                match candidate(seed, index, k) {
                    Some(f) => serde_json::json!({
                        "question": question,
                        "code_solution": serde_json::from_str::<serde_json::Value>(&serialize_formulation(&f)).unwrap(),
                    }),
                    None => serde_json::json!({ "question": question }),
                }
            })
            .collect();
        format!("Here are the new problems.\n```json\n{}\n```\n", serde_json::to_string_pretty(&items).unwrap())
    }
}

/// Serves canned replies and writes each one as a mock fixture.
pub struct Recorder {
    pub models: CannedModels,
    pub dir: PathBuf,
}

impl Transport for Recorder {
    fn complete(&self, req: &ChatRequest, _timeout: Duration) -> Result<String, TransportError> {
        let reply = self.models.reply(req);
        fs::write(self.dir.join(format!("{}.txt", request_key(req))), &reply).unwrap();
        Ok(reply)
    }
}

pub fn objective(v: &str) -> Rational {
    orfit_core::rational::parse_rational(v).unwrap()
}
