use std::fmt::Write as _;

use super::{CnfError, CnfTheory, FactVector, Lit};

fn is_comment(line: &str) -> bool {
    line.starts_with('c')
}

/// Parses DIMACS CNF text. Variable `k` becomes atom `k - 1` named `"k"`.
pub fn parse_dimacs(text: &str) -> Result<CnfTheory, CnfError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (n, m) = loop {
        let Some((_, line)) = lines.next() else {
            return Err(CnfError::Header("missing `p cnf` line".into()));
        };
        if line.is_empty() || is_comment(line) {
            continue;
        }
        break parse_header(line)?;
    };

    let mut clauses = Vec::with_capacity(m);
    let mut current: Vec<Lit> = Vec::new();
    let mut open = false;
    for (lineno, line) in lines {
        if line.is_empty() || is_comment(line) {
            continue;
        }
        for token in line.split_whitespace() {
            let value: i64 = token.parse().map_err(|_| CnfError::Token {
                line: lineno,
                token: token.to_string(),
            })?;
            if value == 0 {
                clauses.push(std::mem::take(&mut current));
                open = false;
                continue;
            }
            open = true;
            let var = value.unsigned_abs() as usize;
            if var > n {
                return Err(CnfError::VarOutOfRange { clause: clauses.len(), var: value.abs(), n });
            }
            current.push(if value > 0 { Lit::pos(var - 1) } else { Lit::neg(var - 1) });
        }
    }
    if open {
        return Err(CnfError::MissingTerminator { clause: clauses.len() });
    }
    if clauses.len() != m {
        return Err(CnfError::ClauseCount { declared: m, found: clauses.len() });
    }
    CnfTheory::new(n, clauses)
}

fn parse_header(line: &str) -> Result<(usize, usize), CnfError> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "p" || parts[1] != "cnf" {
        return Err(CnfError::Header(line.to_string()));
    }
    let n = parts[2].parse().map_err(|_| CnfError::Header(line.to_string()))?;
    let m = parts[3].parse().map_err(|_| CnfError::Header(line.to_string()))?;
    Ok((n, m))
}

/// Canonical DIMACS: header then one clause per line, literal order preserved.
pub fn serialize_dimacs(theory: &CnfTheory) -> String {
    let mut out = String::new();
    writeln!(out, "p cnf {} {}", theory.n(), theory.m()).unwrap();
    for clause in theory.clauses() {
        for lit in clause {
            write!(out, "{} ", lit.to_dimacs()).unwrap();
        }
        out.push_str("0\n");
    }
    out
}

/// Parses a facts file: one positive variable index per line, `c` comments allowed.
pub fn parse_facts(text: &str, n: usize) -> Result<FactVector, CnfError> {
    let mut bits = vec![false; n];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || is_comment(line) {
            continue;
        }
        for token in line.split_whitespace() {
            let value: i64 = token.parse().map_err(|_| CnfError::Token {
                line: i + 1,
                token: token.to_string(),
            })?;
            if value <= 0 {
                return Err(CnfError::NonPositiveFact(value));
            }
            if value as usize > n {
                return Err(CnfError::FactOutOfRange { fact: value, n });
            }
            bits[value as usize - 1] = true;
        }
    }
    Ok(FactVector::from_bits(bits))
}

/// Atom-name sidecar: line `k` names variable `k`.
pub fn parse_names(text: &str, n: usize) -> Result<Vec<String>, CnfError> {
    let names: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    if names.len() != n {
        return Err(CnfError::NameCount { found: names.len(), n });
    }
    Ok(names)
}

pub fn serialize_names(theory: &CnfTheory) -> String {
    let mut out = String::new();
    for name in theory.atom_names() {
        out.push_str(name);
        out.push('\n');
    }
    out
}
