use super::{Assignment, CnfError, CnfTheory, FactVector, Lit};

/// Default largest atom count the enumerator accepts.
pub const DEFAULT_CAP: usize = 24;
/// Models are listed individually only up to this many atoms.
pub const MODEL_LIST_CAP: usize = 12;

const HARD_CAP: usize = 62;

/// Result of exhaustively enumerating the assignments that extend a fact set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SatReport {
    pub satisfiable: bool,
    pub model_count: u64,
    /// Present when `n <= MODEL_LIST_CAP`, in increasing bit-pattern order.
    pub models: Option<Vec<Assignment>>,
    /// Literals true in every model, ordered by atom. Empty when unsatisfiable.
    pub entailed_literals: Vec<Lit>,
}

impl SatReport {
    pub fn entails(&self, lit: Lit) -> bool {
        self.entailed_literals.contains(&lit)
    }
}

/// Enumerates every assignment over `theory`'s atoms that makes all of `facts`
/// true and reports satisfiability, the model count and the entailed literals.
pub fn brute_force(theory: &CnfTheory, facts: &FactVector, cap: usize) -> Result<SatReport, CnfError> {
    let n = theory.n();
    let cap = cap.min(HARD_CAP);
    if n > cap {
        return Err(CnfError::CapExceeded { n, cap });
    }
    if facts.len() != n {
        return Err(CnfError::Length { expected: n, found: facts.len() });
    }

    let masks: Vec<(u64, u64)> = theory
        .clauses()
        .iter()
        .map(|clause| {
            clause.iter().fold((0u64, 0u64), |(pos, neg), l| {
                if l.positive {
                    (pos | 1 << l.atom, neg)
                } else {
                    (pos, neg | 1 << l.atom)
                }
            })
        })
        .collect();
    let fact_mask = facts.atoms().iter().fold(0u64, |acc, &a| acc | 1 << a);
    let free: Vec<usize> = (0..n).filter(|&j| !facts.contains(j)).collect();

    let list_models = n <= MODEL_LIST_CAP;
    let mut models = Vec::new();
    let mut count = 0u64;
    // atoms true (resp. false) in every model seen so far
    let mut always_true = u64::MAX;
    let mut always_false = u64::MAX;
    for pattern in 0u64..(1u64 << free.len()) {
        let mut bits = fact_mask;
        for (k, &atom) in free.iter().enumerate() {
            if pattern >> k & 1 == 1 {
                bits |= 1 << atom;
            }
        }
        let sat = masks.iter().all(|&(pos, neg)| bits & pos != 0 || !bits & neg != 0);
        if sat {
            count += 1;
            always_true &= bits;
            always_false &= !bits;
            if list_models {
                models.push(Assignment::from_bits((0..n).map(|j| bits >> j & 1 == 1).collect()));
            }
        }
    }

    let mut entailed = Vec::new();
    if count > 0 {
        for j in 0..n {
            if always_true >> j & 1 == 1 {
                entailed.push(Lit::pos(j));
            } else if always_false >> j & 1 == 1 {
                entailed.push(Lit::neg(j));
            }
        }
    }
    Ok(SatReport {
        satisfiable: count > 0,
        model_count: count,
        models: list_models.then_some(models),
        entailed_literals: entailed,
    })
}

/// Indices of clauses whose literals are all of the form `¬p` with `p ∈ F`,
/// except exactly one.
pub fn deduce_set(theory: &CnfTheory, facts: &FactVector) -> Vec<usize> {
    theory
        .clauses()
        .iter()
        .enumerate()
        .filter(|(_, clause)| {
            let false_under_facts =
                clause.iter().filter(|l| !l.positive && facts.contains(l.atom)).count();
            clause.len() - false_under_facts == 1
        })
        .map(|(i, _)| i)
        .collect()
}
