//! Exact rational LP/MILP solving and objective-equivalence checks.
//!
//! The LP side is a dense two-phase tableau simplex with Bland's rule. Integer
//! models go through best-bound branch-and-bound on top of it. Everything is
//! exact, so results can be compared against brute-force oracles with zero
//! tolerance.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::formulation::{Direction, Formulation, Sense, VarType};
use crate::rational::{format_rational, from_f64, Rational};

pub const DEFAULT_NODE_BUDGET: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Error,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes_explored: u64,
    pub pivots: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::rational::serde_exact_opt"
    )]
    pub objective: Option<Rational>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::rational::serde_exact_map_opt"
    )]
    pub assignment: Option<BTreeMap<String, Rational>>,
    pub stats: SolveStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl SolveResult {
    fn without_solution(status: SolveStatus, stats: SolveStats, diagnostic: Option<String>) -> Self {
        SolveResult { status, objective: None, assignment: None, stats, diagnostic }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("solve result serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverOptions {
    pub node_budget: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { node_budget: DEFAULT_NODE_BUDGET }
    }
}

// ---------------------------------------------------------------------------
// Standard-form LP: minimize c·x subject to rows, x >= 0.

struct Row {
    coefs: Vec<Rational>,
    sense: Sense,
    rhs: Rational,
}

enum LpOutcome {
    Optimal(Vec<Rational>),
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<Rational>>,
    rhs: Vec<Rational>,
    basis: Vec<usize>,
    reduced: Vec<Rational>,
    pivots: u64,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col].clone();
        if !p.is_one() {
            for v in self.rows[r].iter_mut() {
                if !v.is_zero() {
                    *v /= &p;
                }
            }
            self.rhs[r] /= &p;
        }
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r].clone();
        for i in 0..self.rows.len() {
            if i == r || self.rows[i][col].is_zero() {
                continue;
            }
            let factor = self.rows[i][col].clone();
            for (v, p) in self.rows[i].iter_mut().zip(&pivot_row) {
                if !p.is_zero() {
                    *v -= &factor * p;
                }
            }
            self.rhs[i] -= &factor * &pivot_rhs;
        }
        if !self.reduced[col].is_zero() {
            let factor = self.reduced[col].clone();
            for (v, p) in self.reduced.iter_mut().zip(&pivot_row) {
                if !p.is_zero() {
                    *v -= &factor * p;
                }
            }
        }
        self.basis[r] = col;
        self.pivots += 1;
    }

    fn price(&mut self, cost: &[Rational]) {
        let mut reduced = cost.to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = &cost[b];
            if cb.is_zero() {
                continue;
            }
            for (d, a) in reduced.iter_mut().zip(&self.rows[i]) {
                if !a.is_zero() {
                    *d -= cb * a;
                }
            }
        }
        self.reduced = reduced;
    }

    /// Runs Bland's rule over columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        loop {
            let Some(col) = (0..allowed).find(|&j| self.reduced[j].is_negative()) else {
                return true;
            };
            let mut leave: Option<(usize, Rational)> = None;
            for i in 0..self.rows.len() {
                let a = &self.rows[i][col];
                if !a.is_positive() {
                    continue;
                }
                let ratio = &self.rhs[i] / a;
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => match ratio.cmp(lr) {
                        Ordering::Less => true,
                        Ordering::Equal => self.basis[i] < self.basis[*li],
                        Ordering::Greater => false,
                    },
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, col),
                None => return false,
            }
        }
    }
}

fn solve_standard(n: usize, rows: &[Row], cost: &[Rational], pivots: &mut u64) -> LpOutcome {
    let n_slack = rows.iter().filter(|r| r.sense != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.sense != Sense::Le || r.rhs.is_negative()).count();
    let width = n + n_slack + n_art;
    let art_start = n + n_slack;

    let mut tab = Tableau {
        rows: Vec::with_capacity(rows.len()),
        rhs: Vec::with_capacity(rows.len()),
        basis: Vec::with_capacity(rows.len()),
        reduced: Vec::new(),
        pivots: 0,
    };
    let (mut next_slack, mut next_art) = (n, art_start);
    for row in rows {
        let mut coefs = row.coefs.clone();
        coefs.resize(width, Rational::zero());
        let mut rhs = row.rhs.clone();
        let mut slack_sign = match row.sense {
            Sense::Le => Some(Rational::one()),
            Sense::Ge => Some(-Rational::one()),
            Sense::Eq => None,
        };
        if rhs.is_negative() {
            for c in coefs.iter_mut() {
                *c = -c.clone();
            }
            rhs = -rhs;
            slack_sign = slack_sign.map(|s| -s);
        }
        let mut basic = None;
        if let Some(s) = slack_sign {
            let positive = s.is_positive();
            coefs[next_slack] = s;
            if positive {
                basic = Some(next_slack);
            }
            next_slack += 1;
        }
        let basic = match basic {
            Some(b) => b,
            None => {
                coefs[next_art] = Rational::one();
                next_art += 1;
                next_art - 1
            }
        };
        tab.rows.push(coefs);
        tab.rhs.push(rhs);
        tab.basis.push(basic);
    }

    if next_art > art_start {
        let mut phase1 = vec![Rational::zero(); width];
        for c in &mut phase1[art_start..next_art] {
            *c = Rational::one();
        }
        tab.price(&phase1);
        tab.optimize(width);
        let infeasibility: Rational = tab
            .basis
            .iter()
            .zip(&tab.rhs)
            .filter(|(b, _)| **b >= art_start)
            .map(|(_, v)| v.clone())
            .sum();
        if infeasibility.is_positive() {
            *pivots += tab.pivots;
            return LpOutcome::Infeasible;
        }
        // Drive zero-level artificials out; rows with no other support are redundant.
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= art_start {
                match (0..art_start).find(|&j| !tab.rows[r][j].is_zero()) {
                    Some(j) => tab.pivot(r, j),
                    None => {
                        tab.rows.remove(r);
                        tab.rhs.remove(r);
                        tab.basis.remove(r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }

    let mut phase2 = cost.to_vec();
    phase2.resize(width, Rational::zero());
    tab.price(&phase2);
    let bounded = tab.optimize(art_start);
    *pivots += tab.pivots;
    if !bounded {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![Rational::zero(); n];
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rhs[i].clone();
        }
    }
    LpOutcome::Optimal(x)
}

// ---------------------------------------------------------------------------
// Mapping a formulation with arbitrary bounds onto the standard form.

type Bounds = Vec<(Option<Rational>, Option<Rational>)>;

/// `x = offset + Σ sign·col` over standard-form columns.
struct Substitution {
    offset: Rational,
    parts: Vec<(usize, Rational)>,
}

struct LpModel<'a> {
    f: &'a Formulation,
    index: BTreeMap<&'a str, usize>,
}

impl<'a> LpModel<'a> {
    fn new(f: &'a Formulation) -> Result<Self, String> {
        let index: BTreeMap<&str, usize> =
            f.variables.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        let known = |name: &String| index.contains_key(name.as_str());
        if let Some(name) = f.objective.terms.keys().find(|n| !known(n)) {
            return Err(format!("objective references undeclared variable `{name}`"));
        }
        for c in &f.constraints {
            if let Some(name) = c.body.terms.keys().find(|n| !known(n)) {
                return Err(format!("constraint `{}` references undeclared variable `{name}`", c.name));
            }
        }
        Ok(LpModel { f, index })
    }

    fn initial_bounds(&self, relax: bool) -> Bounds {
        self.f
            .variables
            .iter()
            .map(|v| {
                let (lo, hi) = v.effective_bounds();
                if relax || !v.vtype.is_integral() {
                    (lo, hi)
                } else {
                    (lo.map(|l| l.ceil()), hi.map(|h| h.floor()))
                }
            })
            .collect()
    }

    /// Solves the LP over `bounds`; returns the assignment in declaration order.
    fn solve(&self, bounds: &Bounds, pivots: &mut u64) -> LpOutcome {
        let mut subs = Vec::with_capacity(bounds.len());
        let mut rows = Vec::new();
        let mut n = 0usize;
        let mut bound_rows = Vec::new();
        for (lo, hi) in bounds {
            if let (Some(l), Some(h)) = (lo, hi) {
                if l > h {
                    return LpOutcome::Infeasible;
                }
            }
            let sub = match (lo, hi) {
                (Some(l), hi) => {
                    if let Some(h) = hi {
                        bound_rows.push((n, h - l));
                    }
                    Substitution { offset: l.clone(), parts: vec![(n, Rational::one())] }
                }
                (None, Some(h)) => Substitution { offset: h.clone(), parts: vec![(n, -Rational::one())] },
                (None, None) => {
                    n += 1;
                    Substitution {
                        offset: Rational::zero(),
                        parts: vec![(n - 1, Rational::one()), (n, -Rational::one())],
                    }
                }
            };
            n += 1;
            subs.push(sub);
        }

        let expand = |terms: &BTreeMap<String, Rational>| -> (Vec<Rational>, Rational) {
            let mut coefs = vec![Rational::zero(); n];
            let mut shift = Rational::zero();
            for (name, a) in terms {
                let s = &subs[self.index[name.as_str()]];
                shift += a * &s.offset;
                for (col, sign) in &s.parts {
                    coefs[*col] += a * sign;
                }
            }
            (coefs, shift)
        };

        for c in &self.f.constraints {
            let (coefs, shift) = expand(&c.body.terms);
            rows.push(Row { coefs, sense: c.sense, rhs: &c.rhs - &c.body.constant - shift });
        }
        for (col, width) in bound_rows {
            let mut coefs = vec![Rational::zero(); n];
            coefs[col] = Rational::one();
            rows.push(Row { coefs, sense: Sense::Le, rhs: width });
        }
        let (mut cost, _) = expand(&self.f.objective.terms);
        if self.f.direction == Direction::Maximize {
            for c in cost.iter_mut() {
                *c = -c.clone();
            }
        }

        match solve_standard(n, &rows, &cost, pivots) {
            LpOutcome::Optimal(x) => LpOutcome::Optimal(
                subs.iter()
                    .map(|s| {
                        let mut v = s.offset.clone();
                        for (col, sign) in &s.parts {
                            v += sign * &x[*col];
                        }
                        v
                    })
                    .collect(),
            ),
            other => other,
        }
    }

    fn result(&self, values: &[Rational], stats: SolveStats) -> SolveResult {
        let assignment: BTreeMap<String, Rational> = self
            .f
            .variables
            .iter()
            .zip(values)
            .map(|(v, x)| (v.name.clone(), x.clone()))
            .collect();
        SolveResult {
            status: SolveStatus::Optimal,
            objective: Some(self.f.objective.evaluate(&assignment)),
            assignment: Some(assignment),
            stats,
            diagnostic: None,
        }
    }

    fn objective_of(&self, values: &[Rational]) -> Rational {
        let mut total = self.f.objective.constant.clone();
        for (name, a) in &self.f.objective.terms {
            total += a * &values[self.index[name.as_str()]];
        }
        total
    }
}

/// Solves the continuous relaxation of `f` (integrality is ignored).
pub fn solve_lp(f: &Formulation) -> SolveResult {
    let mut stats = SolveStats { nodes_explored: 1, pivots: 0 };
    let model = match LpModel::new(f) {
        Ok(m) => m,
        Err(e) => return SolveResult::without_solution(SolveStatus::Error, stats, Some(e)),
    };
    let bounds = model.initial_bounds(true);
    match model.solve(&bounds, &mut stats.pivots) {
        LpOutcome::Optimal(x) => model.result(&x, stats),
        LpOutcome::Infeasible => SolveResult::without_solution(SolveStatus::Infeasible, stats, None),
        LpOutcome::Unbounded => SolveResult::without_solution(SolveStatus::Unbounded, stats, None),
    }
}

pub fn solve_milp(f: &Formulation) -> SolveResult {
    solve_milp_with(f, &SolverOptions::default())
}

struct Node {
    // Bound in minimization sense (lower is better).
    bound: Rational,
    seq: u64,
    bounds: Bounds,
    values: Vec<Rational>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap: smallest bound first, then oldest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

/// Picks the integer variable whose value is farthest from integral; ties
/// go to the first name in declaration (sorted) order.
fn branching_variable(f: &Formulation, values: &[Rational]) -> Option<usize> {
    let half = Rational::new(1.into(), 2.into());
    let mut best: Option<(usize, Rational)> = None;
    let mut order: Vec<usize> = (0..f.variables.len()).collect();
    order.sort_by(|&a, &b| f.variables[a].name.cmp(&f.variables[b].name));
    for i in order {
        if !f.variables[i].vtype.is_integral() || values[i].is_integer() {
            continue;
        }
        let frac = &values[i] - values[i].floor();
        let distance = (&frac - &half).abs();
        if best.as_ref().is_none_or(|(_, d)| distance < *d) {
            best = Some((i, distance));
        }
    }
    best.map(|(i, _)| i)
}

pub fn solve_milp_with(f: &Formulation, options: &SolverOptions) -> SolveResult {
    let mut stats = SolveStats::default();
    let model = match LpModel::new(f) {
        Ok(m) => m,
        Err(e) => return SolveResult::without_solution(SolveStatus::Error, stats, Some(e)),
    };
    let sign = match f.direction {
        Direction::Minimize => Rational::one(),
        Direction::Maximize => -Rational::one(),
    };

    let root_bounds = model.initial_bounds(false);
    stats.nodes_explored = 1;
    let root = match model.solve(&root_bounds, &mut stats.pivots) {
        LpOutcome::Optimal(x) => x,
        LpOutcome::Infeasible => return SolveResult::without_solution(SolveStatus::Infeasible, stats, None),
        LpOutcome::Unbounded => {
            return SolveResult::without_solution(
                SolveStatus::Unbounded,
                stats,
                Some("root relaxation is unbounded".into()),
            )
        }
    };

    let mut seq = 0u64;
    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: &sign * model.objective_of(&root), seq, bounds: root_bounds, values: root });
    let mut incumbent: Option<(Rational, Vec<Rational>)> = None;

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if node.bound >= *best {
                break;
            }
        }
        let Some(var) = branching_variable(f, &node.values) else {
            incumbent = Some((node.bound, node.values));
            continue;
        };
        let v = &node.values[var];
        let children = [
            (node.bounds[var].0.clone(), Some(v.floor())),
            (Some(v.ceil()), node.bounds[var].1.clone()),
        ];
        for (lo, hi) in children {
            if stats.nodes_explored >= options.node_budget {
                return SolveResult::without_solution(
                    SolveStatus::Error,
                    stats,
                    Some(format!("node budget of {} exhausted", options.node_budget)),
                );
            }
            stats.nodes_explored += 1;
            let mut bounds = node.bounds.clone();
            bounds[var] = (lo, hi);
            if let LpOutcome::Optimal(x) = model.solve(&bounds, &mut stats.pivots) {
                let bound = &sign * model.objective_of(&x);
                if incumbent.as_ref().is_some_and(|(best, _)| bound >= *best) {
                    continue;
                }
                seq += 1;
                heap.push(Node { bound, seq, bounds, values: x });
            }
        }
    }

    match incumbent {
        Some((_, x)) => model.result(&x, stats),
        None => SolveResult::without_solution(SolveStatus::Infeasible, stats, None),
    }
}

/// Integer models go through branch-and-bound, the rest through the simplex.
pub fn solve(f: &Formulation) -> SolveResult {
    solve_with(f, &SolverOptions::default())
}

pub fn solve_with(f: &Formulation, options: &SolverOptions) -> SolveResult {
    if f.has_integers() {
        solve_milp_with(f, options)
    } else {
        solve_lp(f)
    }
}

/// Every integer or binary variable becomes continuous with the same bounds.
pub fn relax_integrality(f: &Formulation) -> Formulation {
    let mut out = f.clone();
    for v in &mut out.variables {
        if v.vtype == VarType::Binary {
            let (lo, hi) = v.effective_bounds();
            v.lower = lo;
            v.upper = hi;
        }
        v.vtype = VarType::Continuous;
    }
    out
}

// ---------------------------------------------------------------------------
// Equivalence

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-6, abs: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("tolerances must be finite and strictly positive")]
pub struct InvalidTolerance;

impl Tolerance {
    pub fn new(rel: f64, abs: f64) -> Result<Self, InvalidTolerance> {
        let t = Tolerance { rel, abs };
        t.exact().map(|_| t)
    }

    /// `(rel, abs)` as exact rationals via their shortest decimal text.
    pub fn exact(&self) -> Result<(Rational, Rational), InvalidTolerance> {
        let rel = from_f64(self.rel).filter(|v| v.is_positive()).ok_or(InvalidTolerance)?;
        let abs = from_f64(self.abs).filter(|v| v.is_positive()).ok_or(InvalidTolerance)?;
        Ok((rel, abs))
    }
}

/// `|a − b| ≤ max(abs, rel·max(|a|, |b|))`, evaluated exactly.
pub fn is_equivalent(a: &Rational, b: &Rational, tol: &Tolerance) -> bool {
    let (rel, abs) = tol.exact().unwrap_or_else(|_| {
        let d = Tolerance::default();
        (from_f64(d.rel).unwrap(), from_f64(d.abs).unwrap())
    });
    is_equivalent_exact(a, b, &rel, &abs)
}

pub fn is_equivalent_exact(a: &Rational, b: &Rational, rel: &Rational, abs: &Rational) -> bool {
    let diff = (a - b).abs();
    let scale = a.abs().max(b.abs());
    let allowed = (rel * scale).max(abs.clone());
    diff <= allowed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchedVariant {
    AsDeclared,
    Relaxed,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutionCheck {
    pub passed: bool,
    pub matched_variant: MatchedVariant,
    /// Objective of the variant that matched, else of the declared solve.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::rational::serde_exact_opt"
    )]
    pub objective: Option<Rational>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

fn describe(label: &str, r: &SolveResult) -> String {
    match (&r.objective, &r.diagnostic) {
        (Some(o), _) => format!("{label}: {} {}", r.status.as_str(), format_rational(o)),
        (None, Some(d)) => format!("{label}: {} ({d})", r.status.as_str()),
        (None, None) => format!("{label}: {}", r.status.as_str()),
    }
}

/// Accepts `pred` if its objective matches `target` either as declared or with
/// integrality relaxed.
pub fn check_with_substitution(pred: &Formulation, target: &Rational, tol: &Tolerance) -> SubstitutionCheck {
    check_with_substitution_opts(pred, target, tol, &SolverOptions::default())
}

pub fn check_with_substitution_opts(
    pred: &Formulation,
    target: &Rational,
    tol: &Tolerance,
    options: &SolverOptions,
) -> SubstitutionCheck {
    let declared = solve_with(pred, options);
    let mut diagnostics = vec![describe("as declared", &declared)];
    if let Some(obj) = &declared.objective {
        if is_equivalent(obj, target, tol) {
            return SubstitutionCheck {
                passed: true,
                matched_variant: MatchedVariant::AsDeclared,
                objective: Some(obj.clone()),
                diagnostics: Vec::new(),
            };
        }
    }
    if pred.has_integers() {
        let relaxed = solve_lp(&relax_integrality(pred));
        diagnostics.push(describe("relaxed", &relaxed));
        if let Some(obj) = &relaxed.objective {
            if is_equivalent(obj, target, tol) {
                return SubstitutionCheck {
                    passed: true,
                    matched_variant: MatchedVariant::Relaxed,
                    objective: Some(obj.clone()),
                    diagnostics: Vec::new(),
                };
            }
        }
    }
    SubstitutionCheck {
        passed: false,
        matched_variant: MatchedVariant::None,
        objective: declared.objective,
        diagnostics,
    }
}
