//! Canonical intermediate representation of a linear / mixed-integer model.
//!
//! A [`Formulation`] is the triple of variables, linear constraints and a
//! single linear objective. Every other module exchanges models in this form,
//! serialized with [`serialize_formulation`] as a JSON document:
//!
//! ```text
//! {
//!   "constraints": [{"name": "c1", "rhs": "4", "sense": "le", "terms": {"x": "1", "y": "1"}}],
//!   "direction": "maximize",
//!   "objective": {"constant": "0", "terms": {"x": "3", "y": "2"}},
//!   "variables": [{"lower": "0", "name": "x", "upper": "inf", "vtype": "continuous"}]
//! }
//! ```
//!
//! Coefficients are exact decimal strings or `"p/q"`; infinite bounds are
//! `"-inf"` / `"inf"`. Keys are emitted sorted so output is byte-stable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::rational::{format_rational, parse_rational, Rational};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarType {
    Continuous,
    Integer,
    Binary,
}

impl VarType {
    pub fn is_integral(self) -> bool {
        !matches!(self, VarType::Continuous)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VarType::Continuous => "continuous",
            VarType::Integer => "integer",
            VarType::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    pub fn as_str(self) -> &'static str {
        match self {
            Sense::Le => "le",
            Sense::Ge => "ge",
            Sense::Eq => "eq",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }

    fn parse(s: &str) -> Option<Sense> {
        match s {
            "le" | "<=" => Some(Sense::Le),
            "ge" | ">=" => Some(Sense::Ge),
            "eq" | "=" | "==" => Some(Sense::Eq),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Minimize => "minimize",
            Direction::Maximize => "maximize",
        }
    }
}

/// A decision variable. `None` bounds are infinite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub vtype: VarType,
    pub lower: Option<Rational>,
    pub upper: Option<Rational>,
}

impl Variable {
    /// Continuous, non-negative, unbounded above.
    pub fn continuous(name: impl Into<String>) -> Self {
        Variable {
            name: name.into(),
            vtype: VarType::Continuous,
            lower: Some(Rational::zero()),
            upper: None,
        }
    }

    pub fn integer(name: impl Into<String>) -> Self {
        Variable { vtype: VarType::Integer, ..Variable::continuous(name) }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Variable {
            name: name.into(),
            vtype: VarType::Binary,
            lower: Some(Rational::zero()),
            upper: Some(Rational::one()),
        }
    }

    pub fn with_bounds(mut self, lower: Option<Rational>, upper: Option<Rational>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    /// Bounds as seen by the solver: binaries are clipped to `[0, 1]`.
    pub fn effective_bounds(&self) -> (Option<Rational>, Option<Rational>) {
        if self.vtype != VarType::Binary {
            return (self.lower.clone(), self.upper.clone());
        }
        let lo = match &self.lower {
            Some(l) if *l > Rational::zero() => l.clone(),
            _ => Rational::zero(),
        };
        let hi = match &self.upper {
            Some(u) if *u < Rational::one() => u.clone(),
            _ => Rational::one(),
        };
        (Some(lo), Some(hi))
    }
}

/// Linear expression `Σ coef·var + constant`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LinearExpr {
    pub terms: BTreeMap<String, Rational>,
    pub constant: Rational,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = (S, Rational)>,
        S: Into<String>,
    {
        let mut expr = LinearExpr::new();
        for (name, coef) in terms {
            expr.add_term(name, coef);
        }
        expr
    }

    pub fn with_constant(mut self, constant: Rational) -> Self {
        self.constant = constant;
        self
    }

    /// Adds to an existing coefficient rather than replacing it.
    pub fn add_term(&mut self, name: impl Into<String>, coef: Rational) {
        let entry = self.terms.entry(name.into()).or_insert_with(Rational::zero);
        *entry += coef;
    }

    pub fn coef(&self, name: &str) -> Rational {
        self.terms.get(name).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn drop_zeros(&mut self) {
        self.terms.retain(|_, c| !c.is_zero());
    }

    pub fn evaluate(&self, assignment: &BTreeMap<String, Rational>) -> Rational {
        let mut total = self.constant.clone();
        for (name, coef) in &self.terms {
            if let Some(v) = assignment.get(name) {
                total += coef * v;
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub name: String,
    pub body: LinearExpr,
    pub sense: Sense,
    pub rhs: Rational,
}

impl Constraint {
    pub fn new(name: impl Into<String>, body: LinearExpr, sense: Sense, rhs: Rational) -> Self {
        Constraint { name: name.into(), body, sense, rhs }
    }

    pub fn is_satisfied(&self, assignment: &BTreeMap<String, Rational>) -> bool {
        let lhs = self.body.evaluate(assignment);
        match self.sense {
            Sense::Le => lhs <= self.rhs,
            Sense::Ge => lhs >= self.rhs,
            Sense::Eq => lhs == self.rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formulation {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: LinearExpr,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormulationError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("{context} references undeclared variable `{name}`")]
    DanglingReference { context: String, name: String },
    #[error("variable `{0}` has lower bound above upper bound")]
    InvalidBounds(String),
    #[error("binary variable `{0}` has bounds outside [0, 1]")]
    BinaryBounds(String),
}

impl FormulationError {
    fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        FormulationError::Parse { path: path.into(), message: message.into() }
    }
}

impl Formulation {
    pub fn new(direction: Direction) -> Self {
        Formulation {
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: LinearExpr::new(),
            direction,
        }
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn has_integers(&self) -> bool {
        self.variables.iter().any(|v| v.vtype.is_integral())
    }

    /// Checks names, bounds and references.
    pub fn validate(&self) -> Result<(), FormulationError> {
        let mut names = BTreeSet::new();
        for v in &self.variables {
            if !names.insert(v.name.as_str()) {
                return Err(FormulationError::DuplicateVariable(v.name.clone()));
            }
            if let (Some(lo), Some(hi)) = (&v.lower, &v.upper) {
                if lo > hi {
                    return Err(FormulationError::InvalidBounds(v.name.clone()));
                }
            }
            if v.vtype == VarType::Binary {
                let lo_ok = v.lower.as_ref().is_some_and(|l| !l.is_negative());
                let hi_ok = v.upper.as_ref().is_some_and(|u| *u <= Rational::one());
                if !lo_ok || !hi_ok {
                    return Err(FormulationError::BinaryBounds(v.name.clone()));
                }
            }
        }
        for name in self.objective.terms.keys() {
            if !names.contains(name.as_str()) {
                return Err(FormulationError::DanglingReference {
                    context: "objective".into(),
                    name: name.clone(),
                });
            }
        }
        for c in &self.constraints {
            for name in c.body.terms.keys() {
                if !names.contains(name.as_str()) {
                    return Err(FormulationError::DanglingReference {
                        context: format!("constraint `{}`", c.name),
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Sorting and folding without validation; used by the serializer.
    fn normalized(&self) -> Formulation {
        let mut out = self.clone();
        out.variables.sort_by(|a, b| a.name.cmp(&b.name));
        for c in &mut out.constraints {
            c.rhs -= &c.body.constant;
            c.body.constant = Rational::zero();
            c.body.drop_zeros();
        }
        out.objective.drop_zeros();
        out
    }
}

/// Validated canonical form: variables sorted by name, constraint constants
/// folded into the right-hand side, zero coefficients dropped.
pub fn canonicalize(f: &Formulation) -> Result<Formulation, FormulationError> {
    f.validate()?;
    Ok(f.normalized())
}

/// `S(f) = N_var + N_obj + N_con`, with exactly one objective.
pub fn formulation_size(f: &Formulation) -> usize {
    f.variables.len() + 1 + f.constraints.len()
}

fn bound_to_value(b: &Option<Rational>, negative_inf: bool) -> Value {
    match b {
        Some(v) => Value::String(format_rational(v)),
        None if negative_inf => Value::String("-inf".into()),
        None => Value::String("inf".into()),
    }
}

fn terms_to_value(terms: &BTreeMap<String, Rational>) -> Value {
    Value::Object(
        terms
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(format_rational(v))))
            .collect(),
    )
}

/// Document form of a formulation as a JSON value (keys sorted).
pub fn formulation_to_value(f: &Formulation) -> Value {
    let f = f.normalized();
    let variables = f
        .variables
        .iter()
        .map(|v| {
            let mut m = Map::new();
            m.insert("name".into(), Value::String(v.name.clone()));
            m.insert("vtype".into(), Value::String(v.vtype.as_str().into()));
            m.insert("lower".into(), bound_to_value(&v.lower, true));
            m.insert("upper".into(), bound_to_value(&v.upper, false));
            Value::Object(m)
        })
        .collect();
    let constraints = f
        .constraints
        .iter()
        .map(|c| {
            let mut m = Map::new();
            m.insert("name".into(), Value::String(c.name.clone()));
            m.insert("terms".into(), terms_to_value(&c.body.terms));
            m.insert("sense".into(), Value::String(c.sense.as_str().into()));
            m.insert("rhs".into(), Value::String(format_rational(&c.rhs)));
            Value::Object(m)
        })
        .collect();
    let mut objective = Map::new();
    objective.insert("terms".into(), terms_to_value(&f.objective.terms));
    objective.insert("constant".into(), Value::String(format_rational(&f.objective.constant)));

    let mut doc = Map::new();
    doc.insert("variables".into(), Value::Array(variables));
    doc.insert("constraints".into(), Value::Array(constraints));
    doc.insert("objective".into(), Value::Object(objective));
    doc.insert("direction".into(), Value::String(f.direction.as_str().into()));
    Value::Object(doc)
}

/// Byte-stable canonical document text.
pub fn serialize_formulation(f: &Formulation) -> String {
    let mut text = serde_json::to_string_pretty(&formulation_to_value(f))
        .expect("formulation documents contain only strings, arrays and objects");
    text.push('\n');
    text
}

fn number_or_string(v: &Value, path: &str) -> Result<Rational, FormulationError> {
    match v {
        Value::String(s) => {
            parse_rational(s).map_err(|e| FormulationError::parse(path, e.to_string()))
        }
        Value::Number(n) => parse_rational(&n.to_string())
            .map_err(|e| FormulationError::parse(path, e.to_string())),
        _ => Err(FormulationError::parse(path, "expected a number or numeric string")),
    }
}

fn parse_bound(
    v: Option<&Value>,
    path: &str,
    default: Option<Rational>,
    infinite: &str,
) -> Result<Option<Rational>, FormulationError> {
    match v {
        None => Ok(default),
        Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if s == infinite || s == &infinite.replace("inf", "infinity") => {
            Ok(None)
        }
        Some(other) => number_or_string(other, path).map(Some),
    }
}

fn parse_terms(v: &Value, path: &str) -> Result<BTreeMap<String, Rational>, FormulationError> {
    let obj = v
        .as_object()
        .ok_or_else(|| FormulationError::parse(path, "expected an object of coefficients"))?;
    let mut terms = BTreeMap::new();
    for (name, coef) in obj {
        terms.insert(name.clone(), number_or_string(coef, &format!("{path}.{name}"))?);
    }
    Ok(terms)
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, FormulationError> {
    obj.get(key).ok_or_else(|| {
        let full = if path.is_empty() { key.to_string() } else { format!("{path}.{key}") };
        FormulationError::parse(full, "missing field")
    })
}

fn required_str<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a str, FormulationError> {
    let full = if path.is_empty() { key.to_string() } else { format!("{path}.{key}") };
    required(obj, key, path)?
        .as_str()
        .ok_or_else(|| FormulationError::parse(full, "expected a string"))
}

/// Reads a formulation from its document value and validates it.
pub fn formulation_from_value(doc: &Value) -> Result<Formulation, FormulationError> {
    let root = doc
        .as_object()
        .ok_or_else(|| FormulationError::parse("", "expected a JSON object"))?;

    let direction = match required_str(root, "direction", "")? {
        "minimize" | "min" => Direction::Minimize,
        "maximize" | "max" => Direction::Maximize,
        other => {
            return Err(FormulationError::parse(
                "direction",
                format!("unknown direction `{other}`"),
            ))
        }
    };

    let vars = required(root, "variables", "")?
        .as_array()
        .ok_or_else(|| FormulationError::parse("variables", "expected an array"))?;
    let mut variables = Vec::with_capacity(vars.len());
    for (i, v) in vars.iter().enumerate() {
        let path = format!("variables[{i}]");
        let obj = v
            .as_object()
            .ok_or_else(|| FormulationError::parse(&path, "expected an object"))?;
        let name = required_str(obj, "name", &path)?.to_string();
        let vtype = match obj.get("vtype").map(|t| t.as_str()) {
            None => VarType::Continuous,
            Some(Some("continuous")) | Some(Some("C")) => VarType::Continuous,
            Some(Some("integer")) | Some(Some("I")) => VarType::Integer,
            Some(Some("binary")) | Some(Some("B")) => VarType::Binary,
            _ => return Err(FormulationError::parse(format!("{path}.vtype"), "unknown vtype")),
        };
        let (default_lo, default_hi) = match vtype {
            VarType::Binary => (Some(Rational::zero()), Some(Rational::one())),
            _ => (Some(Rational::zero()), None),
        };
        let lower = parse_bound(obj.get("lower"), &format!("{path}.lower"), default_lo, "-inf")?;
        let upper = parse_bound(obj.get("upper"), &format!("{path}.upper"), default_hi, "inf")?;
        variables.push(Variable { name, vtype, lower, upper });
    }

    let cons = match root.get("constraints") {
        None => &[][..],
        Some(c) => c
            .as_array()
            .ok_or_else(|| FormulationError::parse("constraints", "expected an array"))?
            .as_slice(),
    };
    let mut constraints = Vec::with_capacity(cons.len());
    for (i, c) in cons.iter().enumerate() {
        let path = format!("constraints[{i}]");
        let obj = c
            .as_object()
            .ok_or_else(|| FormulationError::parse(&path, "expected an object"))?;
        let name = match obj.get("name") {
            Some(Value::String(s)) => s.clone(),
            None => format!("c{}", i + 1),
            Some(_) => return Err(FormulationError::parse(format!("{path}.name"), "expected a string")),
        };
        let terms = parse_terms(required(obj, "terms", &path)?, &format!("{path}.terms"))?;
        let sense_text = required_str(obj, "sense", &path)?;
        let sense = Sense::parse(sense_text).ok_or_else(|| {
            FormulationError::parse(format!("{path}.sense"), format!("unknown sense `{sense_text}`"))
        })?;
        let rhs = number_or_string(required(obj, "rhs", &path)?, &format!("{path}.rhs"))?;
        let constant = match obj.get("constant") {
            Some(v) => number_or_string(v, &format!("{path}.constant"))?,
            None => Rational::zero(),
        };
        constraints.push(Constraint {
            name,
            body: LinearExpr { terms, constant },
            sense,
            rhs,
        });
    }

    let obj_value = required(root, "objective", "")?;
    let obj = obj_value
        .as_object()
        .ok_or_else(|| FormulationError::parse("objective", "expected an object"))?;
    let terms = parse_terms(required(obj, "terms", "objective")?, "objective.terms")?;
    let constant = match obj.get("constant") {
        Some(v) => number_or_string(v, "objective.constant")?,
        None => Rational::zero(),
    };

    let f = Formulation {
        variables,
        constraints,
        objective: LinearExpr { terms, constant },
        direction,
    };
    canonicalize(&f)
}

pub fn parse_formulation(text: &str) -> Result<Formulation, FormulationError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| {
        FormulationError::parse("", format!("invalid JSON at line {} column {}: {e}", e.line(), e.column()))
    })?;
    formulation_from_value(&doc)
}

fn write_expr(f: &mut fmt::Formatter<'_>, terms: &BTreeMap<String, Rational>) -> fmt::Result {
    if terms.is_empty() {
        return f.write_str("0");
    }
    for (i, (name, coef)) in terms.iter().enumerate() {
        let negative = coef.is_negative();
        let mag = coef.abs();
        match (i, negative) {
            (0, true) => f.write_str("-")?,
            (0, false) => {}
            (_, true) => f.write_str(" - ")?,
            (_, false) => f.write_str(" + ")?,
        }
        if mag.is_one() {
            write!(f, "{name}")?;
        } else {
            write!(f, "{} {name}", format_rational(&mag))?;
        }
    }
    Ok(())
}

/// Human-readable algebraic rendering, used in prompts and error patterns.
impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ", self.direction.as_str())?;
        write_expr(f, &self.objective.terms)?;
        if !self.objective.constant.is_zero() {
            write!(f, " + {}", format_rational(&self.objective.constant))?;
        }
        writeln!(f)?;
        writeln!(f, "subject to")?;
        for c in &self.constraints {
            write!(f, "  {}: ", c.name)?;
            write_expr(f, &c.body.terms)?;
            writeln!(f, " {} {}", c.sense.symbol(), format_rational(&(&c.rhs - &c.body.constant)))?;
        }
        for v in &self.variables {
            let lo = v.lower.as_ref().map_or("-inf".to_string(), format_rational);
            let hi = v.upper.as_ref().map_or("inf".to_string(), format_rational);
            writeln!(f, "  {} in [{lo}, {hi}] ({})", v.name, v.vtype.as_str())?;
        }
        Ok(())
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.name)?;
        write_expr(f, &self.body.terms)?;
        write!(f, " {} {}", self.sense.symbol(), format_rational(&(&self.rhs - &self.body.constant)))
    }
}

impl fmt::Display for LinearExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, &self.terms)?;
        if !self.constant.is_zero() {
            write!(f, " + {}", format_rational(&self.constant))?;
        }
        Ok(())
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.effective_bounds();
        let lo = lo.as_ref().map_or("-inf".to_string(), format_rational);
        let hi = hi.as_ref().map_or("inf".to_string(), format_rational);
        write!(f, "{} in [{lo}, {hi}] ({})", self.name, self.vtype.as_str())
    }
}

/// `#[serde(with = "crate::formulation::serde_doc")]` for embedding a
/// formulation document inside other records.
pub mod serde_doc {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &Formulation, s: S) -> Result<S::Ok, S::Error> {
        formulation_to_value(f).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Formulation, D::Error> {
        let v = Value::deserialize(d)?;
        formulation_from_value(&v).map_err(serde::de::Error::custom)
    }
}

/// Same as [`serde_doc`] for `Option<Formulation>`.
pub mod serde_doc_opt {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &Option<Formulation>, s: S) -> Result<S::Ok, S::Error> {
        f.as_ref().map(formulation_to_value).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Formulation>, D::Error> {
        match Option::<Value>::deserialize(d)? {
            None | Some(Value::Null) => Ok(None),
            Some(v) => formulation_from_value(&v).map(Some).map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn two_var_lp() -> Formulation {
        let mut f = Formulation::new(Direction::Maximize);
        f.variables = vec![Variable::continuous("y"), Variable::continuous("x")];
        f.constraints.push(Constraint::new(
            "cap",
            LinearExpr::from_terms([("x", int(1)), ("y", int(1))]),
            Sense::Le,
            int(4),
        ));
        f.objective = LinearExpr::from_terms([("x", int(3)), ("y", int(2))]);
        f
    }

    #[test]
    fn constant_folding_drops_zero_terms() {
        let mut f = Formulation::new(Direction::Minimize);
        f.variables = vec![Variable::continuous("x"), Variable::continuous("y")];
        f.constraints.push(Constraint::new(
            "c",
            LinearExpr::from_terms([("x", int(1)), ("y", int(0))]).with_constant(int(3)),
            Sense::Le,
            int(7),
        ));
        let c = canonicalize(&f).unwrap();
        let con = &c.constraints[0];
        assert_eq!(con.rhs, int(4));
        assert!(con.body.constant.is_zero());
        assert_eq!(con.body.terms.len(), 1);
        assert_eq!(con.body.terms["x"], int(1));
    }

    #[test]
    fn canonical_input_is_unchanged() {
        let once = canonicalize(&two_var_lp()).unwrap();
        assert_eq!(canonicalize(&once).unwrap(), once);
        assert_eq!(once.variables[0].name, "x");
    }

    #[test]
    fn dangling_objective_reference_is_rejected() {
        let mut f = two_var_lp();
        f.objective.add_term("z", int(1));
        match canonicalize(&f) {
            Err(FormulationError::DanglingReference { context, name }) => {
                assert_eq!(context, "objective");
                assert_eq!(name, "z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn size_counts_one_objective() {
        assert_eq!(formulation_size(&two_var_lp()), 4);
        let mut f = Formulation::new(Direction::Minimize);
        f.variables.push(Variable::continuous("x"));
        assert_eq!(formulation_size(&f), 2);
    }

    #[test]
    fn serialized_document_round_trips() {
        let text = serialize_formulation(&two_var_lp());
        let parsed = parse_formulation(&text).unwrap();
        assert_eq!(parsed.variables.len(), 2);
        assert_eq!(parsed, canonicalize(&two_var_lp()).unwrap());
        assert_eq!(serialize_formulation(&parsed), text);
    }

    #[test]
    fn serialization_is_byte_identical() {
        let f = two_var_lp();
        assert_eq!(serialize_formulation(&f), serialize_formulation(&f));
    }

    #[test]
    fn thirds_are_written_as_fractions() {
        let mut f = two_var_lp();
        f.objective = LinearExpr::from_terms([("x", ratio(1, 3))]);
        let text = serialize_formulation(&f);
        assert!(text.contains("\"1/3\""), "{text}");
    }

    #[test]
    fn empty_constraint_list_serializes_as_empty_array() {
        let mut f = two_var_lp();
        f.constraints.clear();
        let value = formulation_to_value(&f);
        assert_eq!(value["constraints"], Value::Array(vec![]));
    }

    #[test]
    fn missing_objective_reports_path() {
        let text = r#"{"variables": [], "constraints": [], "direction": "minimize"}"#;
        match parse_formulation(text) {
            Err(FormulationError::Parse { path, .. }) => assert_eq!(path, "objective"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_paths_are_reported() {
        let text = r#"{"variables": [{"name": "x", "vtype": "continuous", "lower": "0", "upper": "inf"}],
            "constraints": [{"name": "c", "terms": {"x": "abc"}, "sense": "le", "rhs": "1"}],
            "objective": {"terms": {}, "constant": "0"}, "direction": "minimize"}"#;
        match parse_formulation(text) {
            Err(FormulationError::Parse { path, .. }) => assert_eq!(path, "constraints[0].terms.x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_variable_is_rejected() {
        let text = r#"{"variables": [{"name": "x", "vtype": "continuous", "lower": "0", "upper": "inf"},
                                     {"name": "x", "vtype": "integer", "lower": "0", "upper": "inf"}],
            "constraints": [], "objective": {"terms": {}, "constant": "0"}, "direction": "minimize"}"#;
        assert_eq!(
            parse_formulation(text),
            Err(FormulationError::DuplicateVariable("x".into()))
        );
    }

    #[test]
    fn bounds_are_validated() {
        let mut f = two_var_lp();
        f.variables[0].lower = Some(int(5));
        f.variables[0].upper = Some(int(1));
        assert!(matches!(canonicalize(&f), Err(FormulationError::InvalidBounds(_))));

        let mut g = two_var_lp();
        g.variables[0] = Variable::binary("y").with_bounds(Some(int(0)), Some(int(2)));
        assert!(matches!(canonicalize(&g), Err(FormulationError::BinaryBounds(_))));
    }

    #[test]
    fn numeric_literals_and_infinite_bounds_parse() {
        let text = r#"{"variables": [{"name": "x", "vtype": "integer", "lower": "-inf", "upper": 2.5}],
            "constraints": [{"name": "c", "terms": {"x": 0.1}, "sense": ">=", "rhs": -1}],
            "objective": {"terms": {"x": "1"}}, "direction": "max"}"#;
        let f = parse_formulation(text).unwrap();
        assert_eq!(f.variables[0].lower, None);
        assert_eq!(f.variables[0].upper, Some(ratio(5, 2)));
        assert_eq!(f.constraints[0].body.terms["x"], ratio(1, 10));
        assert_eq!(f.constraints[0].sense, Sense::Ge);
    }
}
