//! Acceptance checks. Runs as a plain binary (`harness = false`) and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_traits::{Signed, Zero};
use orfit_core::dfpo::{
    classify, combine_losses, dfpo_loss, dynamic_filter, nll_loss, rl_loss, Bucket, DfpoConfig, Rollout, RolloutGroup,
    SftSource, SftTarget, TrainingBatch,
};
use orfit_core::diff::{diff, error_ratio};
use orfit_core::eval::{evaluate, format_half_up, load_benchmark, load_responses, macro_average, DecodingSettings};
use orfit_core::executor::IrExecutor;
use orfit_core::formulation::{formulation_size, Constraint, Direction, Formulation, LinearExpr, Sense, VarType, Variable};
use orfit_core::rational::{int, parse_rational, ratio, to_f64, Rational};
use orfit_core::reward::{combine, fidelity_reward, RewardConfig};
use orfit_core::solver::{is_equivalent, relax_integrality, solve, SolveStatus, Tolerance};
use orfit_core::synthesis::{format_percent, run_pipeline, Journal, Strategy, SynthesisConfig, Teachers};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<(), String>;

fn main() {
    let criteria: [(&str, Duration, Check); 9] = [
        ("reward formula table", Duration::from_secs(1), reward_formula),
        ("policy-loss gradient oracle", Duration::from_secs(10), gradient_oracle),
        ("dynamic sampling table", Duration::from_secs(1), sampling_table),
        ("loss coupling", Duration::from_secs(1), coupling),
        ("solver oracle", Duration::from_secs(60), solver_oracle),
        ("error ratio suite", Duration::from_secs(5), error_ratio_suite),
        ("pipeline determinism", Duration::from_secs(30), pipeline_determinism),
        ("eval arithmetic", Duration::from_secs(1), eval_arithmetic),
        ("tolerance rule", Duration::from_secs(1), tolerance_rule),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let took = start.elapsed();
        let outcome = outcome.and_then(|_| {
            if took > budget {
                Err(format!("took {took:.2?}, budget {budget:?}"))
            } else {
                Ok(())
            }
        });
        match outcome {
            Ok(()) => println!("PASS  {name}  ({took:.2?})"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}  ({took:.2?}): {e}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------

fn reward_formula() -> Result<(), String> {
    // (pred, gt) in decimal text; the oracle is the formula evaluated in f64.
    let cases = [
        ("100", "100"),
        ("90", "100"),
        ("110", "100"),
        ("-5", "5"),
        ("5", "-5"),
        ("0", "0"),
        ("0", "7"),
        ("7", "0"),
        ("12", "12"),
        ("-3", "-4"),
        ("-4", "-3"),
        ("1e6", "999999"),
        ("0.5", "0.25"),
        ("2.5", "2"),
        ("1000", "1"),
        ("1", "1000"),
        ("-0.001", "0.001"),
        ("33.3", "33.4"),
        ("123456.789", "123456.788"),
        ("250", "200"),
    ];
    let oracle = |p: f64, g: f64| {
        let m = p.abs().max(g.abs());
        if m == 0.0 {
            1.0
        } else {
            (1.0 - (p - g).abs() / m).clamp(0.0, 1.0)
        }
    };
    for (p, g) in cases {
        let (pr, gr) = (parse_rational(p).unwrap(), parse_rational(g).unwrap());
        let got = fidelity_reward(&pr, &gr);
        let want = oracle(p.parse().unwrap(), g.parse().unwrap());
        ensure((got - want).abs() <= 1e-12, || format!("fidelity({p}, {g}) = {got}, formula gives {want}"))?;
        for acc in [0u8, 1] {
            let combined = combine(0.2, got, acc, 0.0);
            let direct = 0.2 * got + (1.0 - 0.2) * f64::from(acc);
            ensure(combined == direct, || format!("combine mismatch at ({p}, {g}, {acc})"))?;
        }
    }
    ensure(fidelity_reward(&int(90), &int(100)) == 0.9, || "(90, 100) is not 0.9".into())?;
    ensure(fidelity_reward(&int(-5), &int(5)) == 0.0, || "sign mismatch does not clamp to 0".into())?;
    ensure(fidelity_reward(&int(0), &int(0)) == 1.0, || "(0, 0) is not 1".into())
}

// ---------------------------------------------------------------------------

fn random_rollout(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Rollout {
    let n = rng.gen_range(1..=6);
    let logp_old: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..-0.5)).collect();
    // Keep ratios away from the clip edges so central differences are smooth.
    let logp_new = logp_old
        .iter()
        .map(|o| loop {
            let r: f64 = rng.gen_range(0.5..1.5);
            if (r - lo).abs() > 1e-3 && (r - hi).abs() > 1e-3 {
                break o + r.ln();
            }
        })
        .collect();
    let reward = if rng.gen_bool(0.5) { 1.0 } else { rng.gen_range(-0.5..0.5) };
    Rollout { tokens: (0..n as u32).collect(), logp_old, logp_new, reward, correct: reward == 1.0 }
}

fn random_batch(rng: &mut ChaCha8Rng) -> TrainingBatch {
    let eps_low = rng.gen_range(0.05..0.3);
    let eps_high = rng.gen_range(eps_low..0.4);
    let config = DfpoConfig { eps_low, eps_high, beta: rng.gen_range(0.0..0.2), group_size: 4, ..DfpoConfig::default() };
    let (lo, hi) = (1.0 - eps_low, 1.0 + eps_high);
    let groups = rng.gen_range(0..=2);
    let targets = rng.gen_range(if groups == 0 { 1 } else { 0 }..=2);
    let rl_groups = (0..groups)
        .map(|g| RolloutGroup {
            prompt_id: format!("g{g}"),
            rollouts: (0..rng.gen_range(2..=4)).map(|_| random_rollout(rng, lo, hi)).collect(),
            ground_truth: int(1),
        })
        .collect::<Vec<_>>();
    let sft_targets = (0..targets)
        .map(|t| {
            let n = rng.gen_range(1..=6);
            SftTarget {
                prompt_id: format!("t{t}"),
                tokens: (0..n as u32).collect(),
                logp_new: (0..n).map(|_| rng.gen_range(-3.0..-0.5)).collect(),
                source: SftSource::TeacherCorrected,
                verified: true,
            }
        })
        .collect::<Vec<_>>();
    TrainingBatch {
        n_rl: rl_groups.iter().map(|g| g.rollouts.len()).sum(),
        n_sft: sft_targets.len(),
        rl_groups,
        sft_targets,
        discarded: vec![],
        config,
        consistency: vec![],
    }
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-6 * analytic.abs().max(numeric.abs()) + 1e-9
}

fn gradient_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    for b in 0..100 {
        let batch = random_batch(&mut rng);
        let report = dfpo_loss(&batch).map_err(|e| e.to_string())?;
        let rl = rl_loss(&batch.rl_groups, &batch.config).map_err(|e| e.to_string())?;
        let nll = nll_loss(&batch.sft_targets).map_err(|e| e.to_string())?;

        for gi in 0..batch.rl_groups.len() {
            for ri in 0..batch.rl_groups[gi].rollouts.len() {
                for ti in 0..batch.rl_groups[gi].rollouts[ri].logp_new.len() {
                    let at = |d: f64| {
                        let mut b2 = batch.clone();
                        b2.rl_groups[gi].rollouts[ri].logp_new[ti] += d;
                        (rl_loss(&b2.rl_groups, &b2.config).unwrap().loss, dfpo_loss(&b2).unwrap().total)
                    };
                    let (p, m) = (at(h), at(-h));
                    let fd_rl = (p.0 - m.0) / (2.0 * h);
                    let fd_total = (p.1 - m.1) / (2.0 * h);
                    let a_rl = rl.grad_coef[gi][ri][ti];
                    let a_total = report.rl_grad[gi].rollouts[ri][ti];
                    ensure(close(a_rl, fd_rl), || format!("batch {b}: RL grad {a_rl} vs {fd_rl}"))?;
                    ensure(close(a_total, fd_total), || format!("batch {b}: total grad {a_total} vs {fd_total}"))?;
                }
            }
        }
        for si in 0..batch.sft_targets.len() {
            for ti in 0..batch.sft_targets[si].logp_new.len() {
                let at = |d: f64| {
                    let mut b2 = batch.clone();
                    b2.sft_targets[si].logp_new[ti] += d;
                    (nll_loss(&b2.sft_targets).unwrap().loss, dfpo_loss(&b2).unwrap().total)
                };
                let (p, m) = (at(h), at(-h));
                let fd_nll = (p.0 - m.0) / (2.0 * h);
                let fd_total = (p.1 - m.1) / (2.0 * h);
                let a_nll = nll.grad_coef[si][ti];
                let a_total = report.sft_grad[si].tokens[ti];
                ensure(close(a_nll, fd_nll), || format!("batch {b}: NLL grad {a_nll} vs {fd_nll}"))?;
                ensure(close(a_total, fd_total), || format!("batch {b}: total grad {a_total} vs {fd_total}"))?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn sampling_table() -> Result<(), String> {
    for g in [2usize, 4, 8] {
        for gamma_tenths in [5usize, 8, 10] {
            let gamma = gamma_tenths as f64 / 10.0;
            let mut row = Vec::new();
            for c in 0..=g {
                // Integer form of the rule: none correct → SFT; 0 < c < γG → RL.
                let want = if c == 0 {
                    Bucket::Sft
                } else if c * 10 < gamma_tenths * g {
                    Bucket::Rl
                } else {
                    Bucket::Discarded
                };
                let got = classify(c, g, gamma);
                ensure(got == want, || format!("G={g}, γ={gamma}, c={c}: {got:?}, expected {want:?}"))?;
                row.push(got);
            }
            // The same through the group filter.
            let groups: Vec<RolloutGroup> = (0..=g)
                .map(|c| RolloutGroup {
                    prompt_id: c.to_string(),
                    rollouts: (0..g)
                        .map(|i| Rollout {
                            tokens: vec![0],
                            logp_old: vec![-1.0],
                            logp_new: vec![-1.0],
                            reward: 0.0,
                            correct: i < c,
                        })
                        .collect(),
                    ground_truth: int(0),
                })
                .collect();
            let cfg = DfpoConfig { gamma, group_size: g, ..DfpoConfig::default() };
            let p = dynamic_filter(&groups, &cfg);
            for (c, b) in row.iter().enumerate() {
                let list = match b {
                    Bucket::Rl => &p.rl,
                    Bucket::Sft => &p.sft_candidates,
                    Bucket::Discarded => &p.discarded,
                };
                ensure(list.contains(&c), || format!("filter disagrees at G={g}, γ={gamma}, c={c}"))?;
            }
        }
    }
    let g8: Vec<Bucket> = (0..=8).map(|c| classify(c, 8, 0.8)).collect();
    ensure(
        g8[0] == Bucket::Sft && g8[1..=6].iter().all(|b| *b == Bucket::Rl) && g8[7..].iter().all(|b| *b == Bucket::Discarded),
        || format!("G=8, γ=0.8 row is {g8:?}"),
    )
}

fn coupling() -> Result<(), String> {
    let c = combine_losses(0.8, 10.0, 1, 4, 0.05).map_err(|e| e.to_string())?;
    ensure(c.total == 1.05, || format!("total {} instead of 1.05", c.total))?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    while checked < 100 {
        let mut batch = random_batch(&mut rng);
        if batch.n_rl == 0 {
            continue;
        }
        batch.config.beta = 0.0;
        let r = dfpo_loss(&batch).map_err(|e| e.to_string())?;
        let rl = rl_loss(&batch.rl_groups, &batch.config).map_err(|e| e.to_string())?;
        ensure(r.total == rl.loss, || format!("β=0 total {} differs from RL loss {}", r.total, rl.loss))?;
        ensure(r.sft_grad.iter().all(|t| t.tokens.iter().all(|g| *g == 0.0)), || "β=0 leaves SFT gradient".into())?;
        checked += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Brute-force references for the solver.

#[derive(Clone)]
struct Problem {
    maximize: bool,
    obj: Vec<i64>,
    integer: Vec<bool>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    rows: Vec<(Vec<i64>, Sense, i64)>,
}

fn name(i: usize) -> String {
    format!("x{i}")
}

impl Problem {
    fn random(rng: &mut ChaCha8Rng, mixed: bool) -> Self {
        let n = rng.gen_range(2..=3);
        let m = rng.gen_range(1..=4);
        let senses = [Sense::Le, Sense::Le, Sense::Ge, Sense::Eq];
        Problem {
            maximize: rng.gen_bool(0.5),
            obj: (0..n).map(|_| rng.gen_range(-5..=5)).collect(),
            integer: (0..n).map(|_| mixed && rng.gen_bool(0.7)).collect(),
            lo: (0..n).map(|_| if rng.gen_bool(0.7) { 0 } else { -2 }).collect(),
            hi: (0..n).map(|_| rng.gen_range(2..=6)).collect(),
            rows: (0..m)
                .map(|_| {
                    let top = if rng.gen_bool(0.9) { 3 } else { 4 };
                    let sense = senses[rng.gen_range(0..top)];
                    ((0..n).map(|_| rng.gen_range(-4..=4)).collect(), sense, rng.gen_range(-4..=12))
                })
                .collect(),
        }
    }

    fn formulation(&self) -> Formulation {
        let mut f = Formulation::new(if self.maximize { Direction::Maximize } else { Direction::Minimize });
        for i in 0..self.obj.len() {
            let v = if self.integer[i] { Variable::integer(name(i)) } else { Variable::continuous(name(i)) };
            f.variables.push(Variable { vtype: if self.integer[i] { VarType::Integer } else { VarType::Continuous }, ..v }
                .with_bounds(Some(int(self.lo[i])), Some(int(self.hi[i]))));
        }
        f.objective = LinearExpr::from_terms(self.obj.iter().enumerate().map(|(i, c)| (name(i), int(*c))));
        for (k, (a, s, b)) in self.rows.iter().enumerate() {
            let body = LinearExpr::from_terms(a.iter().enumerate().map(|(i, c)| (name(i), int(*c))));
            f.constraints.push(Constraint::new(format!("r{k}"), body, *s, int(*b)));
        }
        f
    }

    fn value(&self, x: &[Rational]) -> Rational {
        self.obj.iter().zip(x).map(|(c, v)| int(*c) * v).sum()
    }

    fn feasible(&self, x: &[Rational]) -> bool {
        let bounds = x.iter().enumerate().all(|(i, v)| *v >= int(self.lo[i]) && *v <= int(self.hi[i]));
        bounds
            && self.rows.iter().all(|(a, s, b)| {
                let lhs: Rational = a.iter().zip(x).map(|(c, v)| int(*c) * v).sum();
                match s {
                    Sense::Le => lhs <= int(*b),
                    Sense::Ge => lhs >= int(*b),
                    Sense::Eq => lhs == int(*b),
                }
            })
    }

    fn better(&self, a: &Rational, b: &Rational) -> bool {
        if self.maximize {
            a > b
        } else {
            a < b
        }
    }

    /// Best vertex with the variables in `fixed` pinned; `None` if infeasible.
    fn vertex_best(&self, fixed: &[Option<Rational>]) -> Option<Rational> {
        let n = self.obj.len();
        let free: Vec<usize> = (0..n).filter(|i| fixed[*i].is_none()).collect();
        let base = |i: usize| fixed[i].clone();
        if free.is_empty() {
            let x: Vec<Rational> = (0..n).map(|i| base(i).unwrap()).collect();
            return self.feasible(&x).then(|| self.value(&x));
        }
        // Candidate hyperplanes over the free variables: rows and bounds.
        let mut planes: Vec<(Vec<Rational>, Rational)> = Vec::new();
        for (a, _, b) in &self.rows {
            let mut rhs = int(*b);
            for i in 0..n {
                if let Some(v) = &fixed[i] {
                    rhs -= int(a[i]) * v;
                }
            }
            planes.push((free.iter().map(|&i| int(a[i])).collect(), rhs));
        }
        for (k, &i) in free.iter().enumerate() {
            for bound in [self.lo[i], self.hi[i]] {
                let mut row = vec![Rational::zero(); free.len()];
                row[k] = int(1);
                planes.push((row, int(bound)));
            }
        }
        let mut best: Option<Rational> = None;
        for subset in combinations(planes.len(), free.len()) {
            let Some(sol) = solve_square(subset.iter().map(|&p| planes[p].clone()).collect()) else { continue };
            let mut x: Vec<Rational> = (0..n).map(|i| base(i).unwrap_or_else(Rational::zero)).collect();
            for (k, &i) in free.iter().enumerate() {
                x[i] = sol[k].clone();
            }
            if self.feasible(&x) {
                let v = self.value(&x);
                if best.as_ref().is_none_or(|b| self.better(&v, b)) {
                    best = Some(v);
                }
            }
        }
        best
    }

    /// Enumerates every integer point of the integer variables.
    fn lattice_best(&self) -> Option<Rational> {
        let n = self.obj.len();
        let ints: Vec<usize> = (0..n).filter(|i| self.integer[*i]).collect();
        let mut best: Option<Rational> = None;
        let mut fixed: Vec<Option<Rational>> = vec![None; n];
        fn rec(p: &Problem, ints: &[usize], k: usize, fixed: &mut Vec<Option<Rational>>, best: &mut Option<Rational>) {
            if k == ints.len() {
                if let Some(v) = p.vertex_best(fixed) {
                    if best.as_ref().is_none_or(|b| p.better(&v, b)) {
                        *best = Some(v);
                    }
                }
                return;
            }
            let i = ints[k];
            for val in p.lo[i]..=p.hi[i] {
                fixed[i] = Some(int(val));
                rec(p, ints, k + 1, fixed, best);
            }
            fixed[i] = None;
        }
        rec(self, &ints, 0, &mut fixed, &mut best);
        best
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    go(0, n, k, &mut cur, &mut out);
    out
}

/// Gauss-Jordan on a square system; `None` when singular.
fn solve_square(mut rows: Vec<(Vec<Rational>, Rational)>) -> Option<Vec<Rational>> {
    let n = rows.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !rows[r].0[col].is_zero())?;
        rows.swap(col, pivot);
        let p = rows[col].0[col].clone();
        for c in 0..n {
            rows[col].0[c] = rows[col].0[c].clone() / &p;
        }
        rows[col].1 = rows[col].1.clone() / &p;
        for r in 0..n {
            if r != col && !rows[r].0[col].is_zero() {
                let f = rows[r].0[col].clone();
                for c in 0..n {
                    let v = rows[col].0[c].clone() * &f;
                    rows[r].0[c] -= v;
                }
                let v = rows[col].1.clone() * &f;
                rows[r].1 -= v;
            }
        }
    }
    Some(rows.into_iter().map(|r| r.1).collect())
}

fn check_against(p: &Problem, expected: Option<Rational>, what: &str, k: usize) -> Result<Option<Rational>, String> {
    let r = solve(&p.formulation());
    match (&expected, r.status) {
        (Some(v), SolveStatus::Optimal) => {
            let got = r.objective.unwrap();
            ensure(&got == v, || format!("{what} {k}: objective {got}, brute force {v}"))?;
            Ok(Some(got))
        }
        (None, SolveStatus::Infeasible) => Ok(None),
        (e, s) => Err(format!("{what} {k}: status {s:?}, brute force {e:?}")),
    }
}

fn solver_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut optimal = 0;
    for k in 0..200 {
        let p = Problem::random(&mut rng, false);
        let expected = p.vertex_best(&vec![None; p.obj.len()]);
        optimal += check_against(&p, expected, "LP", k)?.is_some() as usize;
    }
    ensure(optimal >= 50, || format!("only {optimal} of 200 LPs were feasible; generator too tight"))?;
    for k in 0..100 {
        let p = Problem::random(&mut rng, true);
        let expected = p.lattice_best();
        let Some(v) = check_against(&p, expected, "MILP", k)? else { continue };
        let relaxed = solve(&relax_integrality(&p.formulation()));
        let bound = relaxed.objective.ok_or_else(|| format!("MILP {k}: relaxation not optimal"))?;
        ensure(if p.maximize { bound >= v } else { bound <= v }, || format!("MILP {k}: relaxation {bound} does not bound {v}"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn fixture_formulation() -> Formulation {
    let mut f = Formulation::new(Direction::Maximize);
    for v in ["x", "y", "z"] {
        f.variables.push(Variable::continuous(v).with_bounds(Some(int(0)), None));
    }
    f.objective = LinearExpr::from_terms([("x", int(3)), ("y", int(2)), ("z", int(4))]);
    let rows = [
        ("c1", [1, 1, 1], Sense::Le, 10),
        ("c2", [2, 1, 0], Sense::Le, 14),
        ("c3", [0, 1, 3], Sense::Le, 12),
        ("c4", [1, 0, 0], Sense::Ge, 1),
    ];
    for (n, a, s, b) in rows {
        let body = LinearExpr::from_terms([("x", int(a[0])), ("y", int(a[1])), ("z", int(a[2]))]);
        f.constraints.push(Constraint::new(n, body, s, int(b)));
    }
    f
}

fn perturb(f: &Formulation, rng: &mut ChaCha8Rng) -> Formulation {
    let mut g = f.clone();
    for _ in 0..rng.gen_range(1..=4) {
        match rng.gen_range(0..7) {
            0 if !g.constraints.is_empty() => {
                let i = rng.gen_range(0..g.constraints.len());
                g.constraints.remove(i);
            }
            1 if !g.constraints.is_empty() => {
                let i = rng.gen_range(0..g.constraints.len());
                g.constraints[i].rhs += int(rng.gen_range(1..5));
            }
            2 if !g.constraints.is_empty() => {
                let i = rng.gen_range(0..g.constraints.len());
                g.constraints[i].sense = [Sense::Le, Sense::Ge, Sense::Eq][rng.gen_range(0..3)];
            }
            3 => {
                let i = rng.gen_range(0..g.variables.len());
                g.variables[i].vtype = VarType::Integer;
            }
            4 => {
                let k = g.variables.len();
                g.variables.push(Variable::continuous(format!("extra{k}")));
            }
            5 => {
                let v = g.variables.choose(rng).unwrap().name.clone();
                g.objective.add_term(v, int(1));
            }
            _ => {
                let v = g.variables.choose(rng).unwrap().name.clone();
                let body = LinearExpr::from_terms([(v, int(rng.gen_range(1..4)))]);
                let k = g.constraints.len();
                g.constraints.push(Constraint::new(format!("new{k}"), body, Sense::Le, int(rng.gen_range(1..9))));
            }
        }
    }
    g
}

fn error_ratio_suite() -> Result<(), String> {
    let gold = fixture_formulation();
    ensure(formulation_size(&gold) == 8, || "fixture size is not 3 + 1 + 4".into())?;
    ensure(error_ratio(&diff(&gold, &gold)).is_zero(), || "identity has errors".into())?;
    let mut one = gold.clone();
    one.constraints[1].rhs = int(15);
    let e = error_ratio(&diff(&one, &gold));
    ensure(e == ratio(1, 8), || format!("single-constraint error ratio {e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..500 {
        let base = if k % 2 == 0 { gold.clone() } else { Problem::random(&mut rng, true).formulation() };
        let s = formulation_size(&base);
        ensure(s == base.variables.len() + 1 + base.constraints.len(), || "size identity".into())?;
        let pred = perturb(&base, &mut rng);
        let e = error_ratio(&diff(&pred, &base));
        ensure(!e.is_negative() && e <= int(1), || format!("perturbation {k}: error ratio {e} outside [0, 1]"))?;
        ensure(error_ratio(&diff(&base, &base)).is_zero(), || format!("perturbation {k}: identity has errors"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn pipeline_determinism() -> Result<(), String> {
    let (synth, validator) = common::mock_teachers();
    let teachers = Teachers { synthesizer: &synth, validator: &validator, judge: None };
    let seeds = common::seeds();
    for strategy in [Strategy::SingleError, Strategy::MultiError] {
        let mut outputs = Vec::new();
        for workers in [1, 4] {
            let cfg = SynthesisConfig { workers, ..SynthesisConfig::default() };
            let out = run_pipeline(&seeds, strategy, &teachers, &IrExecutor::default(), &cfg, &Journal::in_memory())
                .map_err(|e| e.to_string())?;
            outputs.push(out);
        }
        ensure(outputs[0] == outputs[1], || format!("{strategy:?} output depends on worker count"))?;
        let out = &outputs[0];
        let text: String = out.dataset.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        let golden = std::fs::read_to_string(common::fixtures().join(format!("golden/{}_dataset.jsonl", strategy.as_str())))
            .map_err(|e| e.to_string())?;
        ensure(text == golden, || format!("{strategy:?} dataset differs from golden"))?;
        let stats = std::fs::read_to_string(common::fixtures().join(format!("golden/{}_stats.txt", strategy.as_str())))
            .map_err(|e| e.to_string())?;
        ensure(out.stats.render_table() == stats, || format!("{strategy:?} stats differ from golden"))?;
        for row in out.stats.rows.iter().chain([&out.stats.total()]) {
            ensure(row.passed_rate() == row.code_rate() * row.bidir_rate(), || "rate identity".into())?;
        }
    }
    // The rate formulas on a published row and its total.
    let rows = [
        (5033, 5016, 2007, ["99.66%", "40.01%", "39.88%"]),
        (23009, 17821, 9663, ["77.45%", "54.22%", "42.00%"]),
    ];
    for (initial, code, bidir, want) in rows {
        let got = [format_percent(code, initial), format_percent(bidir, code), format_percent(bidir, initial)];
        ensure(got == want, || format!("rates for {initial}/{code}/{bidir}: {got:?}"))?;
    }
    Ok(())
}

fn eval_arithmetic() -> Result<(), String> {
    let row: Vec<Rational> =
        ["96.7", "34.0", "92.2", "60.1", "36.7", "56.7"].iter().map(|s| parse_rational(s).unwrap()).collect();
    let m = macro_average(&row);
    ensure((to_f64(&m) - 62.7).abs() <= 0.1, || format!("macro {m}"))?;
    ensure(format_half_up(&m, 1) == "62.7", || format!("macro renders as {}", format_half_up(&m, 1)))?;

    let dir = common::fixtures().join("eval");
    let mut instances = load_benchmark(&dir.join("benchmark.jsonl")).map_err(|e| e.to_string())?;
    let responses = load_responses(&dir.join("responses.jsonl")).map_err(|e| e.to_string())?;
    let exec = IrExecutor::default();
    let cfg = RewardConfig::default();
    let reference = evaluate(&instances, &responses, &cfg, &DecodingSettings::default(), &exec);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        instances.shuffle(&mut rng);
        let r = evaluate(&instances, &responses, &cfg, &DecodingSettings::default(), &exec);
        ensure(r == reference, || "report depends on instance order".into())?;
    }
    Ok(())
}

fn tolerance_rule() -> Result<(), String> {
    let tol = Tolerance::default();
    let cases = [
        ("1000000", "1000001"),
        ("1000000", "1000001.01"),
        ("0", "0.000001"),
        ("0", "0.0000010001"),
        ("1", "1.000001"),
        ("1", "1.0000011"),
        ("-1", "-1.000001"),
        ("-1", "-1.0000011"),
        ("0.5", "0.500001"),
        ("0.5", "0.5000011"),
        ("123456", "123456.123"),
        ("123456", "123456.124"),
        ("1e-9", "-1e-9"),
        ("10", "-10"),
    ];
    let eps = parse_rational("0.000001").unwrap();
    for (a, b) in cases {
        let (x, y) = (parse_rational(a).unwrap(), parse_rational(b).unwrap());
        let d = (&x - &y).abs();
        let absolute = d <= eps;
        let relative = d <= &eps * x.abs().max(y.abs());
        let want = absolute || relative;
        let got = is_equivalent(&x, &y, &tol);
        ensure(got == want, || format!("is_equivalent({a}, {b}) = {got}, expected {want}"))?;
        ensure(is_equivalent(&y, &x, &tol) == got, || format!("asymmetric at ({a}, {b})"))?;
    }
    // Each reading alone must be honoured.
    ensure(is_equivalent(&int(0), &parse_rational("0.000001").unwrap(), &tol), || "absolute reading".into())?;
    ensure(is_equivalent(&int(1_000_000), &int(1_000_001), &tol), || "relative reading".into())?;
    ensure(!is_equivalent(&int(0), &parse_rational("0.0000010001").unwrap(), &tol), || "outside both".into())
}
