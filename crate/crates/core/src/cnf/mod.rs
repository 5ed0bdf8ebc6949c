//! Propositional CNF theories: representation, DIMACS I/O, the clause matrix
//! and brute-force reasoning used as an oracle by the loss tests.

mod dimacs;
mod matrix;
mod oracle;

pub use dimacs::{parse_dimacs, parse_facts, parse_names, serialize_dimacs, serialize_names};
pub use matrix::ClauseMatrix;
pub use oracle::{brute_force, deduce_set, SatReport, DEFAULT_CAP, MODEL_LIST_CAP};

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CnfError {
    #[error("malformed DIMACS header: {0}")]
    Header(String),
    #[error("line {line}: invalid token `{token}`")]
    Token { line: usize, token: String },
    #[error("clause {}: variable {var} out of range 1..={n}", .clause + 1)]
    VarOutOfRange { clause: usize, var: i64, n: usize },
    #[error("clause {} is missing its terminating 0", .clause + 1)]
    MissingTerminator { clause: usize },
    #[error("header declares {declared} clauses, found {found}")]
    ClauseCount { declared: usize, found: usize },
    #[error("clause {} mentions atom {atom} more than once", .clause + 1)]
    RepeatedAtom { clause: usize, atom: usize },
    #[error("fact {0} is not a positive variable index")]
    NonPositiveFact(i64),
    #[error("fact {fact} out of range 1..={n}")]
    FactOutOfRange { fact: i64, n: usize },
    #[error("name map has {found} names, theory has {n} atoms")]
    NameCount { found: usize, n: usize },
    #[error("length mismatch: expected {expected}, got {found}")]
    Length { expected: usize, found: usize },
    #[error("{n} atoms exceed the enumeration cap {cap}")]
    CapExceeded { n: usize, cap: usize },
}

/// A literal: an atom index with a polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit {
    pub atom: usize,
    pub positive: bool,
}

impl Lit {
    pub fn pos(atom: usize) -> Self {
        Lit { atom, positive: true }
    }

    pub fn neg(atom: usize) -> Self {
        Lit { atom, positive: false }
    }

    /// +1 for a positive literal, -1 for a negative one.
    pub fn sign(self) -> i8 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    pub fn negate(self) -> Self {
        Lit { atom: self.atom, positive: !self.positive }
    }

    /// Signed 1-based DIMACS form.
    pub fn to_dimacs(self) -> i64 {
        let v = self.atom as i64 + 1;
        if self.positive {
            v
        } else {
            -v
        }
    }

    pub fn is_true_under(self, bits: &[bool]) -> bool {
        bits[self.atom] == self.positive
    }
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_dimacs())
    }
}

pub type Clause = Vec<Lit>;

/// A set of clauses over atoms `0..n`. Each clause mentions an atom at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CnfTheory {
    atom_names: Vec<String>,
    clauses: Vec<Clause>,
}

impl CnfTheory {
    /// Builds a theory with DIMACS-style default names (`"1"`, `"2"`, ...).
    pub fn new(n: usize, clauses: Vec<Clause>) -> Result<Self, CnfError> {
        let names = (1..=n).map(|k| k.to_string()).collect();
        Self::with_names(names, clauses)
    }

    pub fn with_names(atom_names: Vec<String>, clauses: Vec<Clause>) -> Result<Self, CnfError> {
        let n = atom_names.len();
        for (i, clause) in clauses.iter().enumerate() {
            let mut seen = std::collections::HashSet::with_capacity(clause.len());
            for lit in clause {
                if lit.atom >= n {
                    return Err(CnfError::VarOutOfRange {
                        clause: i,
                        var: lit.atom as i64 + 1,
                        n,
                    });
                }
                if !seen.insert(lit.atom) {
                    return Err(CnfError::RepeatedAtom { clause: i, atom: lit.atom + 1 });
                }
            }
        }
        Ok(CnfTheory { atom_names, clauses })
    }

    pub fn empty() -> Self {
        CnfTheory { atom_names: Vec::new(), clauses: Vec::new() }
    }

    /// Number of clauses.
    pub fn m(&self) -> usize {
        self.clauses.len()
    }

    /// Number of atoms.
    pub fn n(&self) -> usize {
        self.atom_names.len()
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn atom_names(&self) -> &[String] {
        &self.atom_names
    }

    pub fn atom_name(&self, atom: usize) -> &str {
        &self.atom_names[atom]
    }

    /// Replaces the atom names; the count must match `n`.
    pub fn rename(&mut self, names: Vec<String>) -> Result<(), CnfError> {
        if names.len() != self.n() {
            return Err(CnfError::NameCount { found: names.len(), n: self.n() });
        }
        self.atom_names = names;
        Ok(())
    }

    pub fn atom_index(&self, name: &str) -> Option<usize> {
        self.atom_names.iter().position(|a| a == name)
    }

    /// True when every clause has a literal true under `bits`.
    pub fn is_satisfied_by(&self, bits: &[bool]) -> bool {
        self.clauses.iter().all(|c| clause_satisfied(c, bits))
    }

    /// Indices of clauses not satisfied by `bits`.
    pub fn unsatisfied_clauses(&self, bits: &[bool]) -> Vec<usize> {
        (0..self.m()).filter(|&i| !clause_satisfied(&self.clauses[i], bits)).collect()
    }
}

pub fn clause_satisfied(clause: &[Lit], bits: &[bool]) -> bool {
    clause.iter().any(|l| l.is_true_under(bits))
}

/// The known-true atoms `F` of an instance, as a 0/1 vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactVector {
    bits: Vec<bool>,
}

impl FactVector {
    pub fn zeros(n: usize) -> Self {
        FactVector { bits: vec![false; n] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        FactVector { bits }
    }

    pub fn from_atoms(n: usize, atoms: &[usize]) -> Result<Self, CnfError> {
        let mut bits = vec![false; n];
        for &a in atoms {
            if a >= n {
                return Err(CnfError::FactOutOfRange { fact: a as i64 + 1, n });
            }
            bits[a] = true;
        }
        Ok(FactVector { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, atom: usize) -> bool {
        self.bits[atom]
    }

    /// The atom-set view `F`.
    pub fn atoms(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&j| self.bits[j]).collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// A full 0/1 truth valuation of the atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    bits: Vec<bool>,
}

impl Assignment {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Assignment { bits }
    }

    /// Overlays binarized values on the facts: `v[j] = 1` wherever `f[j] = 1`.
    pub fn overlay(facts: &FactVector, binarized: &[bool]) -> Result<Self, CnfError> {
        if binarized.len() != facts.len() {
            return Err(CnfError::Length { expected: facts.len(), found: binarized.len() });
        }
        let bits = facts.bits().iter().zip(binarized).map(|(&f, &b)| f || b).collect();
        Ok(Assignment { bits })
    }

    /// Reads a 0/1 float vector (as produced by the loss graph); values >= 0.5 count as true.
    pub fn from_f64(values: &[f64]) -> Self {
        Assignment { bits: values.iter().map(|&v| v >= 0.5).collect() }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_repeated_and_tautological_atoms() {
        let dup = CnfTheory::new(2, vec![vec![Lit::pos(0), Lit::pos(0)]]);
        assert_eq!(dup, Err(CnfError::RepeatedAtom { clause: 0, atom: 1 }));
        let taut = CnfTheory::new(2, vec![vec![Lit::pos(1)], vec![Lit::pos(0), Lit::neg(0)]]);
        assert_eq!(taut, Err(CnfError::RepeatedAtom { clause: 1, atom: 1 }));
    }

    #[test]
    fn empty_clause_is_never_satisfied() {
        let t = CnfTheory::new(1, vec![vec![]]).unwrap();
        assert!(!t.is_satisfied_by(&[true]));
        assert!(!t.is_satisfied_by(&[false]));
    }

    #[test]
    fn overlay_keeps_facts_true() {
        let f = FactVector::from_atoms(3, &[0]).unwrap();
        let v = Assignment::overlay(&f, &[false, false, true]).unwrap();
        assert_eq!(v.bits(), &[true, false, true]);
    }
}
