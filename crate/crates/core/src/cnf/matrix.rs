use super::CnfTheory;
use crate::tensor::Tensor;

/// The clause matrix `C ∈ {-1, 0, 1}^{m×n}` in compressed sparse row form.
///
/// Row `i` holds `+1` at column `j` when clause `i` contains `p_j`, `-1` when
/// it contains `¬p_j`. Columns within a row keep the clause's literal order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClauseMatrix {
    m: usize,
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    signs: Vec<i8>,
}

impl ClauseMatrix {
    pub fn from_theory(theory: &CnfTheory) -> Self {
        let mut row_ptr = Vec::with_capacity(theory.m() + 1);
        let mut cols = Vec::new();
        let mut signs = Vec::new();
        row_ptr.push(0);
        for clause in theory.clauses() {
            for lit in clause {
                cols.push(lit.atom);
                signs.push(lit.sign());
            }
            row_ptr.push(cols.len());
        }
        ClauseMatrix { m: theory.m(), n: theory.n(), row_ptr, cols, signs }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row_literal_count(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Nonzero `(column, sign)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, i8)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.signs[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.row(i).find(|&(c, _)| c == j).map_or(0, |(_, s)| s)
    }

    pub fn to_dense(&self) -> Vec<Vec<i8>> {
        let mut dense = vec![vec![0i8; self.n]; self.m];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, s) in self.row(i) {
                row[j] = s;
            }
        }
        dense
    }

    /// Dense `m×n` float tensor, for use as a constant in the loss graph.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = vec![0.0; self.m * self.n];
        for i in 0..self.m {
            for (j, s) in self.row(i) {
                data[i * self.n + j] = f64::from(s);
            }
        }
        Tensor::new(vec![self.m, self.n], data).expect("shape matches data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::parse_dimacs;

    #[test]
    fn two_clause_example_matrix() {
        let t = parse_dimacs("p cnf 3 2\n-1 -2 3 0\n-1 2 0\n").unwrap();
        let c = ClauseMatrix::from_theory(&t);
        assert_eq!(c.to_dense(), vec![vec![-1, -1, 1], vec![-1, 1, 0]]);
        assert_eq!(c.row_literal_count(0), 3);
        assert_eq!(c.row_literal_count(1), 2);
        assert_eq!(c.get(1, 2), 0);
        assert_eq!(c.to_tensor().data(), &[-1.0, -1.0, 1.0, -1.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_matrix() {
        let c = ClauseMatrix::from_theory(&CnfTheory::empty());
        assert_eq!(c.shape(), (0, 0));
        assert!(c.to_dense().is_empty());
        assert_eq!(c.to_tensor().shape(), &[0, 0]);
    }
}
