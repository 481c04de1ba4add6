//! Structural comparison of a predicted formulation against a gold one.
//!
//! Variables are matched by normalized name. Constraints are matched in two
//! rounds: first on exact direction-normalized signatures (those are correct),
//! then by a maximum-cardinality matching over the leftovers that share a
//! name or a variable (those are "present but wrong"). Gold components left
//! over after both rounds are omissions. The error ratio counts gold
//! components only; superfluous predicted components show up as categories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::formulation::{Constraint, Formulation, Sense, VarType, Variable};
use crate::rational::{format_rational, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    IncorrectVariable,
    OmittedVariable,
    SuperfluousVariable,
    WrongVariableType,
    WrongObjectiveDirection,
    IncorrectObjectiveTerm,
    OmittedObjectiveTerm,
    SuperfluousObjectiveTerm,
    IncorrectConstraint,
    OmittedConstraint,
    SuperfluousConstraint,
    EqIneqConfusion,
    ParameterDefinitionError,
    ParameterMisuse,
    AdvancedTechniqueError,
}

/// Which part of a formulation a category belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Variables,
    Objective,
    Constraints,
    Parameters,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 15] = [
        ErrorCategory::IncorrectVariable,
        ErrorCategory::OmittedVariable,
        ErrorCategory::SuperfluousVariable,
        ErrorCategory::WrongVariableType,
        ErrorCategory::WrongObjectiveDirection,
        ErrorCategory::IncorrectObjectiveTerm,
        ErrorCategory::OmittedObjectiveTerm,
        ErrorCategory::SuperfluousObjectiveTerm,
        ErrorCategory::IncorrectConstraint,
        ErrorCategory::OmittedConstraint,
        ErrorCategory::SuperfluousConstraint,
        ErrorCategory::EqIneqConfusion,
        ErrorCategory::ParameterDefinitionError,
        ErrorCategory::ParameterMisuse,
        ErrorCategory::AdvancedTechniqueError,
    ];

    pub fn component(self) -> Component {
        use ErrorCategory::*;
        match self {
            IncorrectVariable | OmittedVariable | SuperfluousVariable | WrongVariableType => {
                Component::Variables
            }
            WrongObjectiveDirection | IncorrectObjectiveTerm | OmittedObjectiveTerm
            | SuperfluousObjectiveTerm => Component::Objective,
            IncorrectConstraint | OmittedConstraint | SuperfluousConstraint | EqIneqConfusion
            | AdvancedTechniqueError => Component::Constraints,
            ParameterDefinitionError | ParameterMisuse => Component::Parameters,
        }
    }

    pub fn as_str(self) -> &'static str {
        use ErrorCategory::*;
        match self {
            IncorrectVariable => "incorrect_variable",
            OmittedVariable => "omitted_variable",
            SuperfluousVariable => "superfluous_variable",
            WrongVariableType => "wrong_variable_type",
            WrongObjectiveDirection => "wrong_objective_direction",
            IncorrectObjectiveTerm => "incorrect_objective_term",
            OmittedObjectiveTerm => "omitted_objective_term",
            SuperfluousObjectiveTerm => "superfluous_objective_term",
            IncorrectConstraint => "incorrect_constraint",
            OmittedConstraint => "omitted_constraint",
            SuperfluousConstraint => "superfluous_constraint",
            EqIneqConfusion => "eq_ineq_confusion",
            ParameterDefinitionError => "parameter_definition_error",
            ParameterMisuse => "parameter_misuse",
            AdvancedTechniqueError => "advanced_technique_error",
        }
    }

    pub fn parse(text: &str) -> Option<ErrorCategory> {
        let key: String = text
            .trim()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
            .collect();
        Self::ALL.into_iter().find(|c| c.as_str() == key)
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One mismatch between the prediction and the gold model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub category: ErrorCategory,
    /// Name of the gold component involved, if any.
    pub gold: Option<String>,
    /// Name of the predicted component involved, if any.
    pub pred: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub n_var: usize,
    pub n_con: usize,
    pub n_obj: usize,
    pub err_var: usize,
    pub err_con: usize,
    pub err_obj: usize,
    pub mismatches: Vec<Mismatch>,
}

impl DiffReport {
    /// The category multiset, sorted.
    pub fn categories(&self) -> Vec<ErrorCategory> {
        let mut cats: Vec<_> = self.mismatches.iter().map(|m| m.category).collect();
        cats.sort();
        cats
    }

    pub fn is_identical(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn error_count(&self) -> usize {
        self.err_var + self.err_con + self.err_obj
    }
}

/// `(err_var + err_con + err_obj) / (n_var + n_con + n_obj)`, exactly.
pub fn error_ratio(report: &DiffReport) -> Rational {
    let denom = report.n_var + report.n_con + report.n_obj;
    Rational::new(report.error_count().into(), denom.max(1).into())
}

/// Case-folded, whitespace- and underscore-insensitive name key.
pub fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace() && *c != '_')
        .flat_map(char::to_lowercase)
        .collect()
}

// Keys for predicted variables that have no gold counterpart; the leading
// control character cannot collide with a gold name that matched.
fn unmatched_key(name: &str) -> String {
    format!("\u{1}{name}")
}

struct VariableMap {
    pred_to_gold: BTreeMap<String, String>,
}

impl VariableMap {
    fn key(&self, pred_name: &str) -> String {
        self.pred_to_gold
            .get(pred_name)
            .cloned()
            .unwrap_or_else(|| unmatched_key(pred_name))
    }

    fn map_terms(&self, terms: &BTreeMap<String, Rational>) -> BTreeMap<String, Rational> {
        terms
            .iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(n, c)| (self.key(n), c.clone()))
            .collect()
    }
}

fn integral_bounds(v: &Variable) -> (bool, Option<Rational>, Option<Rational>) {
    let (lo, hi) = v.effective_bounds();
    (v.vtype != VarType::Continuous, lo, hi)
}

fn fmt_bound(b: &Option<Rational>, neg: bool) -> String {
    match b {
        Some(v) => format_rational(v),
        None if neg => "-inf".into(),
        None => "inf".into(),
    }
}

fn diff_variables(pred: &Formulation, gold: &Formulation, out: &mut Vec<Mismatch>) -> (usize, VariableMap) {
    let mut pred_by_key: BTreeMap<String, Vec<&Variable>> = BTreeMap::new();
    let mut pred_sorted: Vec<&Variable> = pred.variables.iter().collect();
    pred_sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for v in pred_sorted {
        pred_by_key.entry(normalize_name(&v.name)).or_default().push(v);
    }

    let mut gold_sorted: Vec<&Variable> = gold.variables.iter().collect();
    gold_sorted.sort_by(|a, b| a.name.cmp(&b.name));

    let mut pred_to_gold = BTreeMap::new();
    let mut err = 0;
    for g in gold_sorted {
        let candidates = pred_by_key.get_mut(&normalize_name(&g.name));
        let Some(p) = candidates.and_then(|c| (!c.is_empty()).then(|| c.remove(0))) else {
            err += 1;
            out.push(Mismatch {
                category: ErrorCategory::OmittedVariable,
                gold: Some(g.name.clone()),
                pred: None,
                detail: format!("variable `{}` is missing", g.name),
            });
            continue;
        };
        pred_to_gold.insert(p.name.clone(), g.name.clone());
        let (g_int, g_lo, g_hi) = integral_bounds(g);
        let (p_int, p_lo, p_hi) = integral_bounds(p);
        if g_int != p_int {
            err += 1;
            out.push(Mismatch {
                category: ErrorCategory::WrongVariableType,
                gold: Some(g.name.clone()),
                pred: Some(p.name.clone()),
                detail: format!(
                    "`{}` declared {} but should be {}",
                    p.name,
                    p.vtype.as_str(),
                    g.vtype.as_str()
                ),
            });
        } else if g_lo != p_lo || g_hi != p_hi {
            err += 1;
            out.push(Mismatch {
                category: ErrorCategory::IncorrectVariable,
                gold: Some(g.name.clone()),
                pred: Some(p.name.clone()),
                detail: format!(
                    "`{}` has bounds [{}, {}] but should have [{}, {}]",
                    p.name,
                    fmt_bound(&p_lo, true),
                    fmt_bound(&p_hi, false),
                    fmt_bound(&g_lo, true),
                    fmt_bound(&g_hi, false)
                ),
            });
        }
    }
    for list in pred_by_key.values() {
        for p in list {
            out.push(Mismatch {
                category: ErrorCategory::SuperfluousVariable,
                gold: None,
                pred: Some(p.name.clone()),
                detail: format!("variable `{}` has no counterpart", p.name),
            });
        }
    }
    (err, VariableMap { pred_to_gold })
}

/// Constraint body over gold variable keys, brought to a normal form.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Signature {
    terms: BTreeMap<String, Rational>,
    sense: Sense,
    rhs: Rational,
}

fn scaled(terms: &BTreeMap<String, Rational>, rhs: &Rational, by: &Rational) -> (BTreeMap<String, Rational>, Rational) {
    (
        terms.iter().map(|(k, c)| (k.clone(), c / by)).collect(),
        rhs / by,
    )
}

/// Direction-normalized signature: `ge` becomes `le` by negation and the row
/// is scaled so its first coefficient has magnitude one (sign fixed for `eq`).
fn signature(terms: BTreeMap<String, Rational>, sense: Sense, rhs: Rational) -> Signature {
    let (mut terms, mut rhs, sense) = match sense {
        Sense::Ge => (terms.into_iter().map(|(k, c)| (k, -c)).collect(), -rhs, Sense::Le),
        s => (terms, rhs, s),
    };
    if let Some(first) = terms.values().next().cloned() {
        let by = match sense {
            Sense::Eq => first,
            _ => first.abs(),
        };
        (terms, rhs) = scaled(&terms, &rhs, &by);
    }
    Signature { terms, sense, rhs }
}

/// Sense-free shape: first coefficient scaled to exactly one.
fn shape(terms: &BTreeMap<String, Rational>, rhs: &Rational) -> (BTreeMap<String, Rational>, Rational) {
    match terms.values().next() {
        Some(first) => scaled(terms, rhs, first),
        None => (BTreeMap::new(), rhs.clone()),
    }
}

struct PreparedConstraint<'a> {
    source: &'a Constraint,
    index: usize,
    name_key: String,
    signature: Signature,
    shape: (BTreeMap<String, Rational>, Rational),
    support: BTreeSet<String>,
    content_key: String,
}

fn prepare<'a>(c: &'a Constraint, index: usize, map: Option<&VariableMap>) -> PreparedConstraint<'a> {
    let terms = match map {
        Some(m) => m.map_terms(&c.body.terms),
        None => c.body.terms.iter().filter(|(_, v)| !v.is_zero()).map(|(k, v)| (k.clone(), v.clone())).collect(),
    };
    let rhs = &c.rhs - &c.body.constant;
    let sig = signature(terms.clone(), c.sense, rhs.clone());
    let content_key = format!(
        "{}|{}|{}",
        sig.terms.iter().map(|(k, v)| format!("{k}:{}", format_rational(v))).collect::<Vec<_>>().join(","),
        sig.sense.as_str(),
        format_rational(&sig.rhs)
    );
    PreparedConstraint {
        source: c,
        index,
        name_key: normalize_name(&c.name),
        shape: shape(&terms, &rhs),
        support: terms.keys().cloned().collect(),
        signature: sig,
        content_key,
    }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> (usize, usize) {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    (inter, union.max(1))
}

fn diff_constraints(pred: &Formulation, gold: &Formulation, map: &VariableMap, out: &mut Vec<Mismatch>) -> usize {
    let golds: Vec<_> = gold.constraints.iter().enumerate().map(|(i, c)| prepare(c, i, None)).collect();
    let preds: Vec<_> = pred.constraints.iter().enumerate().map(|(i, c)| prepare(c, i, Some(map))).collect();

    // Round 1: identical signatures. Equality is an equivalence relation, so a
    // greedy pass is already a maximum matching.
    let mut pred_used = vec![false; preds.len()];
    let mut gold_open = Vec::new();
    for g in &golds {
        let mut best: Option<usize> = None;
        for (j, p) in preds.iter().enumerate() {
            if pred_used[j] || p.signature != g.signature {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    let cur = &preds[b];
                    let key = |q: &PreparedConstraint| (q.name_key != g.name_key, q.index);
                    key(p) < key(cur)
                }
            };
            if better {
                best = Some(j);
            }
        }
        match best {
            Some(j) => pred_used[j] = true,
            None => gold_open.push(g),
        }
    }
    let err = gold_open.len();

    // Round 2: pair leftovers that plausibly model the same thing.
    let pred_open: Vec<usize> = (0..preds.len()).filter(|j| !pred_used[*j]).collect();
    let mut adjacency: Vec<Vec<usize>> = Vec::with_capacity(gold_open.len());
    for g in &gold_open {
        let mut cands: Vec<usize> = pred_open
            .iter()
            .copied()
            .filter(|&j| {
                let p = &preds[j];
                p.name_key == g.name_key || !p.support.is_disjoint(&g.support)
            })
            .collect();
        cands.sort_by(|&a, &b| {
            let (pa, pb) = (&preds[a], &preds[b]);
            let (ia, ua) = jaccard(&pa.support, &g.support);
            let (ib, ub) = jaccard(&pb.support, &g.support);
            (pb.name_key == g.name_key)
                .cmp(&(pa.name_key == g.name_key))
                .then((pb.shape == g.shape).cmp(&(pa.shape == g.shape)))
                .then((ib * ua).cmp(&(ia * ub)))
                .then(pa.content_key.cmp(&pb.content_key))
                .then(pa.index.cmp(&pb.index))
        });
        adjacency.push(cands);
    }
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for gi in 0..gold_open.len() {
        let mut seen = BTreeSet::new();
        augment(gi, &adjacency, &mut owner, &mut seen);
    }
    let gold_partner: BTreeMap<usize, usize> = owner.iter().map(|(&p, &g)| (g, p)).collect();

    for (gi, g) in gold_open.iter().enumerate() {
        match gold_partner.get(&gi) {
            Some(&j) => {
                let p = &preds[j];
                let category = if p.shape == g.shape {
                    ErrorCategory::EqIneqConfusion
                } else {
                    ErrorCategory::IncorrectConstraint
                };
                out.push(Mismatch {
                    category,
                    gold: Some(g.source.name.clone()),
                    pred: Some(p.source.name.clone()),
                    detail: format!("`{}` should read `{}`", p.source, g.source),
                });
            }
            None => out.push(Mismatch {
                category: ErrorCategory::OmittedConstraint,
                gold: Some(g.source.name.clone()),
                pred: None,
                detail: format!("constraint `{}` is missing", g.source),
            }),
        }
    }
    for &j in &pred_open {
        if owner.contains_key(&j) {
            continue;
        }
        let p = &preds[j];
        out.push(Mismatch {
            category: ErrorCategory::SuperfluousConstraint,
            gold: None,
            pred: Some(p.source.name.clone()),
            detail: format!("constraint `{}` has no counterpart", p.source),
        });
    }
    err
}

// Kuhn's augmenting path step; `owner` maps predicted index to gold index.
fn augment(
    gold: usize,
    adjacency: &[Vec<usize>],
    owner: &mut BTreeMap<usize, usize>,
    seen: &mut BTreeSet<usize>,
) -> bool {
    for &p in &adjacency[gold] {
        if !seen.insert(p) {
            continue;
        }
        let free = match owner.get(&p).copied() {
            None => true,
            Some(other) => augment(other, adjacency, owner, seen),
        };
        if free {
            owner.insert(p, gold);
            return true;
        }
    }
    false
}

fn diff_objective(pred: &Formulation, gold: &Formulation, map: &VariableMap, out: &mut Vec<Mismatch>) -> usize {
    let before = out.len();
    if pred.direction != gold.direction {
        out.push(Mismatch {
            category: ErrorCategory::WrongObjectiveDirection,
            gold: Some("objective".into()),
            pred: Some("objective".into()),
            detail: format!(
                "objective should {} but the prediction {}s",
                gold.direction.as_str(),
                pred.direction.as_str()
            ),
        });
    }
    let pred_terms = map.map_terms(&pred.objective.terms);
    let gold_terms: BTreeMap<_, _> = gold.objective.terms.iter().filter(|(_, c)| !c.is_zero()).collect();
    for (name, coef) in &gold_terms {
        match pred_terms.get(*name) {
            None => out.push(Mismatch {
                category: ErrorCategory::OmittedObjectiveTerm,
                gold: Some((*name).clone()),
                pred: None,
                detail: format!("objective term {} {name} is missing", format_rational(coef)),
            }),
            Some(p) if p != *coef => out.push(Mismatch {
                category: ErrorCategory::IncorrectObjectiveTerm,
                gold: Some((*name).clone()),
                pred: Some((*name).clone()),
                detail: format!(
                    "objective coefficient of {name} is {} but should be {}",
                    format_rational(p),
                    format_rational(coef)
                ),
            }),
            _ => {}
        }
    }
    for (key, coef) in &pred_terms {
        if !gold_terms.contains_key(key) {
            let name = key.trim_start_matches('\u{1}').to_string();
            out.push(Mismatch {
                category: ErrorCategory::SuperfluousObjectiveTerm,
                gold: None,
                pred: Some(name.clone()),
                detail: format!("objective term {} {name} has no counterpart", format_rational(coef)),
            });
        }
    }
    if pred.objective.constant != gold.objective.constant {
        out.push(Mismatch {
            category: ErrorCategory::IncorrectObjectiveTerm,
            gold: Some("objective".into()),
            pred: Some("objective".into()),
            detail: format!(
                "objective constant is {} but should be {}",
                format_rational(&pred.objective.constant),
                format_rational(&gold.objective.constant)
            ),
        });
    }
    usize::from(out.len() > before)
}

/// Compares two canonical formulations. Total on valid inputs.
pub fn diff(pred: &Formulation, gold: &Formulation) -> DiffReport {
    let mut var_m = Vec::new();
    let mut con_m = Vec::new();
    let mut obj_m = Vec::new();
    let (err_var, map) = diff_variables(pred, gold, &mut var_m);
    let err_con = diff_constraints(pred, gold, &map, &mut con_m);
    let err_obj = diff_objective(pred, gold, &map, &mut obj_m);
    let mut mismatches = var_m;
    mismatches.extend(obj_m);
    mismatches.extend(con_m);
    DiffReport {
        n_var: gold.variables.len(),
        n_con: gold.constraints.len(),
        n_obj: 1,
        err_var,
        err_con,
        err_obj,
        mismatches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{canonicalize, Direction, LinearExpr};
    use crate::rational::{int, ratio};

    /// 3 variables, 4 constraints.
    fn gold() -> Formulation {
        let mut f = Formulation::new(Direction::Maximize);
        f.variables = vec![
            Variable::continuous("x"),
            Variable::continuous("y"),
            Variable::continuous("z"),
        ];
        let c = |n: &str, t: &[(&str, i64)], s, r| {
            Constraint::new(n, LinearExpr::from_terms(t.iter().map(|(k, v)| (*k, int(*v)))), s, int(r))
        };
        f.constraints = vec![
            c("labor", &[("x", 1), ("y", 2)], Sense::Le, 10),
            c("wood", &[("x", 3), ("z", 1)], Sense::Le, 12),
            c("demand", &[("y", 1), ("z", 1)], Sense::Ge, 2),
            c("balance", &[("x", 1), ("y", -1)], Sense::Eq, 0),
        ];
        f.objective = LinearExpr::from_terms([("x", int(5)), ("y", int(4)), ("z", int(3))]);
        canonicalize(&f).unwrap()
    }

    #[test]
    fn identical_formulations_have_no_errors() {
        let r = diff(&gold(), &gold());
        assert_eq!(r.error_count(), 0);
        assert!(r.categories().is_empty());
        assert!(error_ratio(&r).is_zero());
    }

    #[test]
    fn flipped_sense_is_one_confused_constraint() {
        let mut pred = gold();
        pred.constraints[0].sense = Sense::Eq;
        let r = diff(&pred, &gold());
        assert_eq!((r.err_var, r.err_con, r.err_obj), (0, 1, 0));
        assert_eq!(r.categories(), vec![ErrorCategory::EqIneqConfusion]);
        assert_eq!(error_ratio(&r), ratio(1, 8));

        let mut pred = gold();
        pred.constraints[1].sense = Sense::Ge;
        let r = diff(&pred, &gold());
        assert_eq!(r.categories(), vec![ErrorCategory::EqIneqConfusion]);
    }

    #[test]
    fn integer_where_continuous_is_a_type_error() {
        let mut pred = gold();
        pred.variables[0].vtype = VarType::Integer;
        let r = diff(&pred, &gold());
        assert_eq!((r.err_var, r.err_con, r.err_obj), (1, 0, 0));
        assert_eq!(r.categories(), vec![ErrorCategory::WrongVariableType]);
    }

    #[test]
    fn equivalent_rewrites_do_not_diff() {
        let mut pred = gold();
        // 2·labor written as ge with negated coefficients, names case-folded.
        pred.constraints[0] = Constraint::new(
            "Labor",
            LinearExpr::from_terms([("X", int(-2)), ("y", int(-4))]),
            Sense::Ge,
            int(-20),
        );
        pred.variables[0].name = "X".into();
        pred.objective = LinearExpr::from_terms([("X", int(5)), ("y", int(4)), ("z", int(3))]);
        for c in &mut pred.constraints[1..] {
            if let Some(v) = c.body.terms.remove("x") {
                c.body.terms.insert("X".into(), v);
            }
        }
        let pred = canonicalize(&pred).unwrap();
        let r = diff(&pred, &gold());
        assert!(r.is_identical(), "{:?}", r.mismatches);
    }

    #[test]
    fn omissions_and_extras_are_classified() {
        let mut pred = gold();
        pred.constraints.remove(2);
        pred.variables.push(Variable::continuous("w"));
        pred.constraints.push(Constraint::new(
            "extra",
            LinearExpr::from_terms([("w", int(1))]),
            Sense::Le,
            int(3),
        ));
        let r = diff(&canonicalize(&pred).unwrap(), &gold());
        assert_eq!((r.err_var, r.err_con, r.err_obj), (0, 1, 0));
        assert_eq!(
            r.categories(),
            vec![
                ErrorCategory::SuperfluousVariable,
                ErrorCategory::OmittedConstraint,
                ErrorCategory::SuperfluousConstraint
            ]
        );
    }

    #[test]
    fn wrong_coefficient_is_an_incorrect_constraint() {
        let mut pred = gold();
        pred.constraints[1].body.terms.insert("x".into(), int(4));
        let r = diff(&pred, &gold());
        assert_eq!(r.categories(), vec![ErrorCategory::IncorrectConstraint]);
        assert_eq!(r.err_con, 1);
    }

    #[test]
    fn objective_errors_count_once() {
        let mut pred = gold();
        pred.direction = Direction::Minimize;
        pred.objective.terms.insert("x".into(), int(6));
        pred.objective.terms.remove("z");
        let r = diff(&pred, &gold());
        assert_eq!(r.err_obj, 1);
        assert_eq!(
            r.categories(),
            vec![
                ErrorCategory::WrongObjectiveDirection,
                ErrorCategory::IncorrectObjectiveTerm,
                ErrorCategory::OmittedObjectiveTerm
            ]
        );
        assert_eq!(error_ratio(&r), ratio(1, 8));
    }

    #[test]
    fn everything_wrong_gives_ratio_one() {
        let mut pred = Formulation::new(Direction::Minimize);
        pred.variables.push(Variable::integer("q"));
        let r = diff(&pred, &gold());
        assert_eq!(error_ratio(&r), int(1));
    }

    #[test]
    fn binary_equals_unit_integer() {
        let mut g = Formulation::new(Direction::Maximize);
        g.variables.push(Variable::binary("b"));
        let mut p = g.clone();
        p.variables[0] = Variable::integer("b").with_bounds(Some(int(0)), Some(int(1)));
        assert!(diff(&p, &g).is_identical());
    }

    #[test]
    fn categories_parse_from_text() {
        assert_eq!(ErrorCategory::parse("Wrong Variable Type"), Some(ErrorCategory::WrongVariableType));
        assert_eq!(ErrorCategory::parse("eq-ineq-confusion"), Some(ErrorCategory::EqIneqConfusion));
        assert_eq!(ErrorCategory::parse("nonsense"), None);
    }
}
