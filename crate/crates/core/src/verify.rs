//! Randomized checks of the loss against independent oracles.
//!
//! Every suite is seeded and returns a [`SuiteReport`]; nothing here panics on
//! a mismatch, so the CLI and the tests can print and assert separately.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::closs::{assemble_prediction, closed_form_grad, cnf_loss, CnfTerms};
use crate::cnf::{
    brute_force, clause_satisfied, deduce_set, parse_dimacs, Assignment, ClauseMatrix, CnfTheory, FactVector, Lit,
    DEFAULT_CAP,
};
use crate::tensor::{Binarizer, GMode, Graph, SteMode, Tensor, TensorError, TgfConfig, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub max_dev: f64,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        SuiteReport { name: name.to_string(), trials: 0, failures: 0, max_dev: 0.0, first_failure: None }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn fail(&mut self, msg: impl FnOnce() -> String) {
        self.failures += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(msg());
        }
    }

    fn deviation(&mut self, d: f64) {
        if d > self.max_dev || d.is_nan() {
            self.max_dev = d;
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "OK" } else { "FAIL" };
        write!(f, "{}: {status} (max dev {:.1e}", self.name, self.max_dev)?;
        if self.trials > 1 {
            write!(f, ", {} trials, {} failures", self.trials, self.failures)?;
        }
        write!(f, ")")?;
        if let Some(msg) = &self.first_failure {
            write!(f, "\n  first failure: {msg}")?;
        }
        Ok(())
    }
}

/// Builds the loss terms from a clause matrix, an assignment vector and facts.
pub type LossFn<'a> = dyn Fn(&Graph, &ClauseMatrix, Var, &FactVector) -> Result<CnfTerms, TensorError> + 'a;

/// The loss under test in the default build.
pub fn standard_loss(g: &Graph, c: &ClauseMatrix, v: Var, f: &FactVector) -> Result<CnfTerms, TensorError> {
    Ok(cnf_loss(g, c, v, f)?.terms())
}

/// Per-term gradients with respect to `x` (deduce, unsat, sat, cnf) and the forward values.
pub fn term_gradients(
    loss: &LossFn<'_>,
    c: &ClauseMatrix,
    f: &FactVector,
    x: &[f64],
    binarizer: Binarizer,
) -> Result<([Vec<f64>; 4], [f64; 4]), TensorError> {
    let mut grads: [Vec<f64>; 4] = Default::default();
    let mut values = [0.0; 4];
    for (k, slot) in grads.iter_mut().enumerate() {
        let g = Graph::new();
        let xv = g.leaf(Tensor::vector(x.to_vec()));
        let v = assemble_prediction(&g, f, xv, binarizer, SteMode::Identity)?;
        let terms = loss(&g, c, v, f)?;
        values[k] = g.item(terms.get(k));
        *slot = g.backward(terms.get(k))?.get_or_zeros(xv).into_data();
    }
    Ok((grads, values))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The three-atom example with `F = {a}` and `x = [0.3, 0.1, 0.9]`.
pub fn golden_instance() -> (CnfTheory, FactVector, Vec<f64>) {
    let t = parse_dimacs("p cnf 3 2\n-1 -2 3 0\n-1 2 0\n").expect("valid example");
    (t, FactVector::from_bits(vec![true, false, false]), vec![0.3, 0.1, 0.9])
}

/// Checks the example's forward values and per-term gradients.
pub fn golden_suite(tol: f64) -> SuiteReport {
    let mut report = SuiteReport::new("golden");
    report.trials = 1;
    let (t, f, x) = golden_instance();
    let c = ClauseMatrix::from_theory(&t);
    let expected_grads = [
        vec![0.0, -1.0, 0.0],
        vec![0.0, -0.5, 0.0],
        vec![0.0, 0.5, -0.5],
        vec![0.0, -1.0, -0.5],
    ];
    let expected_values = [1.0, 0.5, 0.0, 1.5];
    match term_gradients(&standard_loss, &c, &f, &x, Binarizer::Prob) {
        Ok((grads, values)) => {
            for k in 0..4 {
                let d = max_abs_diff(&grads[k], &expected_grads[k]).max((values[k] - expected_values[k]).abs());
                report.deviation(d);
                if !(d <= tol) {
                    report.fail(|| format!("term {k}: grad {:?} value {}", grads[k], values[k]));
                }
            }
        }
        Err(e) => report.fail(|| e.to_string()),
    }
    report
}

/// A random theory with `1..=n_max` atoms and `0..=m_max` nonempty clauses of
/// up to five distinct atoms each.
pub fn random_theory(rng: &mut impl Rng, n_max: usize, m_max: usize) -> CnfTheory {
    let n = rng.random_range(1..=n_max);
    let m = rng.random_range(0..=m_max);
    let clauses = (0..m)
        .map(|_| {
            let len = rng.random_range(1..=n.min(5));
            let mut atoms: Vec<usize> = (0..n).collect();
            for k in 0..len {
                let pick = rng.random_range(k..n);
                atoms.swap(k, pick);
            }
            atoms[..len].iter().map(|&a| if rng.random_bool(0.5) { Lit::pos(a) } else { Lit::neg(a) }).collect()
        })
        .collect();
    CnfTheory::new(n, clauses).expect("generated clauses are well formed")
}

pub fn random_facts(rng: &mut impl Rng, n: usize, p: f64) -> FactVector {
    FactVector::from_bits((0..n).map(|_| rng.random_bool(p)).collect())
}

/// Network outputs for `binarizer`: probabilities for `b_p`, values in
/// `[-1, 1]` for `b`.
pub fn random_outputs(rng: &mut impl Rng, n: usize, binarizer: Binarizer) -> Vec<f64> {
    (0..n)
        .map(|_| match binarizer {
            Binarizer::Prob => rng.random::<f64>(),
            Binarizer::Sign => rng.random_range(-1.0..1.0),
        })
        .collect()
}

fn binarized_assignment(f: &FactVector, x: &[f64], binarizer: Binarizer) -> Assignment {
    let bits: Vec<bool> = x.iter().map(|&v| binarizer.apply(v) == 1.0).collect();
    Assignment::overlay(f, &bits).expect("lengths match")
}

/// Deduce-set membership recomputed literal by literal.
fn rescan_deduce(t: &CnfTheory, f: &FactVector) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, clause) in t.clauses().iter().enumerate() {
        let mut open = 0;
        for lit in clause {
            let falsified_by_fact = !lit.positive && f.contains(lit.atom);
            if !falsified_by_fact {
                open += 1;
            }
        }
        if open == 1 {
            out.push(i);
        }
    }
    out
}

/// Value properties of the loss terms on random theories.
pub fn prop2_suite(seed: u64, trials: usize, n_max: usize, m_max: usize) -> SuiteReport {
    let mut report = SuiteReport::new("prop2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        report.trials += 1;
        let t = random_theory(&mut rng, n_max, m_max);
        let f = random_facts(&mut rng, t.n(), 0.3);
        let x = random_outputs(&mut rng, t.n(), Binarizer::Prob);
        let v = binarized_assignment(&f, &x, Binarizer::Prob);
        let c = ClauseMatrix::from_theory(&t);

        let g = Graph::new();
        let xv = g.leaf(Tensor::vector(x.clone()));
        let result = assemble_prediction(&g, &f, xv, Binarizer::Prob, SteMode::Identity)
            .and_then(|vv| cnf_loss(&g, &c, vv, &f).map(|b| (vv, b)));
        let (vv, b) = match result {
            Ok(r) => r,
            Err(e) => {
                report.fail(|| format!("trial {trial}: {e}"));
                continue;
            }
        };
        let vals = b.terms().values(&g);

        let deduce = deduce_set(&t, &f);
        let rescan = rescan_deduce(&t, &f);
        let graph_deduce: Vec<usize> = if t.m() == 0 {
            vec![]
        } else {
            g.value(b.deduce).data().iter().enumerate().filter(|(_, &d)| d == 1.0).map(|(i, _)| i).collect()
        };
        let sat_all = t.is_satisfied_by(v.bits());
        let sat_deduce = deduce.iter().all(|&i| clause_satisfied(&t.clauses()[i], v.bits()));
        let v_graph = Assignment::from_f64(g.value(vv).data());

        let checks = [
            ("v assembly", v_graph == v),
            ("deduce set vs re-scan", deduce == rescan),
            ("deduce vector vs deduce set", graph_deduce == deduce),
            ("L_unsat = 0 iff v satisfies C", (vals.unsat == 0.0) == sat_all),
            ("L_deduce = 0 iff v satisfies C_deduce", (vals.deduce == 0.0) == sat_deduce),
            ("L_cnf = 0 iff v satisfies C", (vals.cnf == 0.0) == sat_all),
            ("L_sat = 0", vals.sat == 0.0),
            ("terms nonnegative", vals.deduce >= 0.0 && vals.unsat >= 0.0 && vals.sat >= 0.0),
        ];
        report.deviation(vals.sat.abs());
        if let Some((name, _)) = checks.iter().find(|(_, ok)| !ok) {
            report.fail(|| format!("trial {trial}: {name} ({} atoms, {} clauses)", t.n(), t.m()));
        }
    }
    report
}

/// Autodiff gradients of every term against the counting oracle, on random
/// theories whose union with the facts is satisfiable.
pub fn prop34_suite(
    seed: u64,
    trials: usize,
    n_max: usize,
    m_max: usize,
    binarizer: Binarizer,
    tol: f64,
    loss: &LossFn<'_>,
) -> SuiteReport {
    let name = match binarizer {
        Binarizer::Prob => "prop3 (b_p)",
        Binarizer::Sign => "prop4 (b)",
    };
    let mut report = SuiteReport::new(name);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while report.trials < trials {
        let t = random_theory(&mut rng, n_max, m_max);
        let f = random_facts(&mut rng, t.n(), 0.3);
        match brute_force(&t, &f, DEFAULT_CAP) {
            Ok(r) if r.satisfiable => {}
            _ => continue,
        }
        report.trials += 1;
        let trial = report.trials;
        let x = random_outputs(&mut rng, t.n(), binarizer);
        let v = binarized_assignment(&f, &x, binarizer);
        let oracle = closed_form_grad(&t, &f, &v, DEFAULT_CAP);
        let c = ClauseMatrix::from_theory(&t);
        let (grads, _) = match term_gradients(loss, &c, &f, &x, binarizer) {
            Ok(r) => r,
            Err(e) => {
                report.fail(|| format!("trial {trial}: {e}"));
                continue;
            }
        };
        let predicted = [&oracle.g_deduce, &oracle.g_unsat, &oracle.g_sat, &oracle.g_total];
        let mut bad = None;
        for k in 0..4 {
            let d = max_abs_diff(&grads[k], predicted[k]);
            report.deviation(d);
            if !(d <= tol) {
                bad.get_or_insert(format!("term {k}: autodiff {:?} oracle {:?}", grads[k], predicted[k]));
            }
            if f.atoms().iter().any(|&j| grads[k][j] != 0.0) {
                bad.get_or_insert(format!("term {k}: nonzero gradient at a fact"));
            }
        }
        for j in 0..t.n() {
            let gd = oracle.g_deduce[j];
            if gd != 0.0 && grads[3][j].signum() != gd.signum() {
                bad.get_or_insert(format!("atom {j}: total gradient sign differs from deduce gradient"));
            }
        }
        if let Some(msg) = bad {
            report.fail(|| format!("trial {trial} ({} atoms, {} clauses): {msg}", t.n(), t.m()));
        }
    }
    report
}

/// The trainable gate against the threshold and the straight-through surrogates.
pub fn prop1_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut report = SuiteReport::new("prop1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in [10.0, 1e3, 1e6] {
        for _ in 0..trials {
            let x = loop {
                let x: f64 = rng.random_range(-3.0..3.0);
                let frac = (k * x).fract().abs();
                if frac > 1e-9 && frac < 1.0 - 1e-9 {
                    break x;
                }
            };
            report.trials += 1;
            for (mode, ste) in [(GMode::One, SteMode::Identity), (GMode::Box, SteMode::Saturated)] {
                let cfg = TgfConfig::new(k, mode);
                let g = Graph::new();
                let xv = g.leaf(Tensor::vector(vec![x]));
                let y = g.tgf(xv, cfg);
                let gap = (g.value(y).data()[0] - Binarizer::Sign.apply(x)).abs();
                let loss = g.sum_last(y).expect("vector input");
                let grad = g.backward(loss).expect("scalar loss").get_or_zeros(xv).data()[0];
                let expected = ste.surrogate_grad(x);
                report.deviation(gap);
                if gap > 1.0 / k || grad != expected {
                    report.fail(|| format!("K={k} g={mode:?} x={x}: gap {gap}, grad {grad} vs {expected}"));
                }
            }
        }
    }
    report
}

/// Settings of the full verification run.
#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    pub seed: u64,
    pub trials: usize,
    pub n_max: usize,
    pub m_max: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { seed: 0, trials: 1000, n_max: 12, m_max: 30 }
    }
}

/// Golden example, value suite, both gradient suites and the gate suite.
pub fn run_all(cfg: VerifyConfig) -> Vec<SuiteReport> {
    vec![
        golden_suite(1e-12),
        prop2_suite(cfg.seed, (cfg.trials / 5).max(1), cfg.n_max.min(10), cfg.m_max.min(20)),
        prop34_suite(cfg.seed, cfg.trials, cfg.n_max, cfg.m_max, Binarizer::Prob, 1e-9, &standard_loss),
        prop34_suite(cfg.seed.wrapping_add(1), cfg.trials, cfg.n_max, cfg.m_max, Binarizer::Sign, 1e-9, &standard_loss),
        prop1_suite(cfg.seed, cfg.trials),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_passes() {
        let r = golden_suite(1e-12);
        assert!(r.passed(), "{r}");
        assert_eq!(r.to_string(), "golden: OK (max dev 0.0e0)");
    }

    #[test]
    fn small_suites_pass() {
        assert!(prop2_suite(3, 50, 8, 12).passed());
        assert!(prop34_suite(3, 50, 8, 12, Binarizer::Prob, 1e-9, &standard_loss).passed());
        assert!(prop34_suite(3, 50, 8, 12, Binarizer::Sign, 1e-9, &standard_loss).passed());
        assert!(prop1_suite(3, 50).passed());
    }
}
