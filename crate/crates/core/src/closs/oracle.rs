use crate::cnf::{brute_force, clause_satisfied, deduce_set, Assignment, CnfTheory, FactVector};

/// Gradients of the loss terms predicted by counting clauses, for the identity
/// surrogate. All vectors have one entry per atom and are zero at facts.
#[derive(Debug, Clone, PartialEq)]
pub struct GradOracleReport {
    /// Signed occurrences in deduce-set clauses: `+1` per `p_j`, `-1` per `¬p_j`.
    pub c: Vec<i64>,
    /// Unsatisfied clauses containing `p_j`.
    pub c1: Vec<usize>,
    /// Unsatisfied clauses containing `¬p_j`.
    pub c2: Vec<usize>,
    /// Satisfied clauses mentioning atom `j`.
    pub c3: Vec<usize>,
    pub g_deduce: Vec<f64>,
    pub g_unsat: Vec<f64>,
    pub g_sat: Vec<f64>,
    pub g_total: Vec<f64>,
    /// `None` when the theory had too many atoms to enumerate.
    pub satisfiable: Option<bool>,
}

/// Counts `c`, `c1`, `c2`, `c3` by direct clause evaluation and turns them into
/// predicted gradients. Satisfiability of theory ∪ facts is checked by
/// enumeration when `n <= cap`.
pub fn closed_form_grad(theory: &CnfTheory, f: &FactVector, v: &Assignment, cap: usize) -> GradOracleReport {
    let (m, n) = (theory.m(), theory.n());
    assert_eq!(f.len(), n, "fact vector length");
    assert_eq!(v.len(), n, "assignment length");
    let satisfiable = brute_force(theory, f, cap).ok().map(|r| r.satisfiable);

    let mut c = vec![0i64; n];
    let mut c1 = vec![0usize; n];
    let mut c2 = vec![0usize; n];
    let mut c3 = vec![0usize; n];
    for i in deduce_set(theory, f) {
        for lit in &theory.clauses()[i] {
            if !f.contains(lit.atom) {
                c[lit.atom] += i64::from(lit.sign());
            }
        }
    }
    for clause in theory.clauses() {
        let sat = clause_satisfied(clause, v.bits());
        for lit in clause {
            match (sat, lit.positive) {
                (true, _) => c3[lit.atom] += 1,
                (false, true) => c1[lit.atom] += 1,
                (false, false) => c2[lit.atom] += 1,
            }
        }
    }

    let inv_m = if m == 0 { 0.0 } else { 1.0 / m as f64 };
    let mut g_deduce = vec![0.0; n];
    let mut g_unsat = vec![0.0; n];
    let mut g_sat = vec![0.0; n];
    let mut g_total = vec![0.0; n];
    for j in (0..n).filter(|&j| !f.contains(j)) {
        g_deduce[j] = -(c[j] as f64);
        g_unsat[j] = (c2[j] as f64 - c1[j] as f64) * inv_m;
        let s = c3[j] as f64 * inv_m;
        g_sat[j] = if v.bits()[j] { -s } else { s };
        g_total[j] = g_deduce[j] + g_unsat[j] + g_sat[j];
    }
    GradOracleReport { c, c1, c2, c3, g_deduce, g_unsat, g_sat, g_total, satisfiable }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{parse_dimacs, DEFAULT_CAP};

    #[test]
    fn golden_counts() {
        let t = parse_dimacs("p cnf 3 2\n-1 -2 3 0\n-1 2 0\n").unwrap();
        let f = FactVector::from_bits(vec![true, false, false]);
        let v = Assignment::from_bits(vec![true, false, true]);
        let r = closed_form_grad(&t, &f, &v, DEFAULT_CAP);
        assert_eq!(r.satisfiable, Some(true));
        assert_eq!(r.g_deduce, vec![0.0, -1.0, 0.0]);
        assert_eq!(r.g_unsat, vec![0.0, -0.5, 0.0]);
        assert_eq!(r.g_sat, vec![0.0, 0.5, -0.5]);
        assert_eq!(r.g_total, vec![0.0, -1.0, -0.5]);
    }

    #[test]
    fn all_facts_give_zero() {
        let t = parse_dimacs("p cnf 3 2\n-1 -2 3 0\n-1 2 0\n").unwrap();
        let f = FactVector::from_bits(vec![true; 3]);
        let r = closed_form_grad(&t, &f, &Assignment::from_bits(vec![true; 3]), DEFAULT_CAP);
        assert!(r.g_total.iter().chain(&r.g_sat).chain(&r.g_unsat).chain(&r.g_deduce).all(|&g| g == 0.0));
    }
}
