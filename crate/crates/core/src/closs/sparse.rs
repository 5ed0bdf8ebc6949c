use std::sync::Arc;

use crate::cnf::{ClauseMatrix, FactVector};
use crate::tensor::{CustomOp, Tensor, TensorError};

/// Batch-mean `[L_deduce, L_unsat, L_sat]` computed over the nonzeros of `C`.
///
/// Matches the dense equations value for value: columns outside a clause
/// contribute a factor of 1 to `unsat`, 0 to `keep`, and no gradient.
#[derive(Debug)]
pub(crate) struct SparseCnfLoss {
    c: Arc<ClauseMatrix>,
    /// per instance, `deduce[i]` as a 0/1 flag
    deduce: Vec<Vec<bool>>,
}

impl SparseCnfLoss {
    pub(crate) fn new(c: Arc<ClauseMatrix>, facts: &[FactVector]) -> Self {
        let deduce = facts
            .iter()
            .map(|f| {
                (0..c.m())
                    .map(|i| {
                        let false_by_facts = c.row(i).filter(|&(j, s)| s < 0 && f.contains(j)).count();
                        c.row_literal_count(i) - false_by_facts == 1
                    })
                    .collect()
            })
            .collect();
        SparseCnfLoss { c, deduce }
    }

    fn literal_values(&self, v: &[f64], i: usize, buf: &mut Vec<(usize, f64, f64)>) {
        buf.clear();
        for (j, s) in self.c.row(i) {
            let lv = if s > 0 { v[j] } else { 1.0 - v[j] };
            buf.push((j, f64::from(s), lv));
        }
    }
}

fn keep_term(lv: f64) -> f64 {
    if lv == 1.0 {
        1.0 - lv
    } else if lv == 0.0 {
        lv
    } else {
        0.0
    }
}

fn keep_slope(lv: f64) -> f64 {
    if lv == 1.0 {
        -1.0
    } else if lv == 0.0 {
        1.0
    } else {
        0.0
    }
}

impl CustomOp for SparseCnfLoss {
    fn name(&self) -> &'static str {
        "sparse_cnf_loss"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
        let v = inputs[0];
        let (m, n) = self.c.shape();
        if v.shape() != [self.deduce.len(), n] {
            return Err(TensorError::Shape { op: self.name(), lhs: vec![self.deduce.len(), n], rhs: v.shape().to_vec() });
        }
        let (mut d, mut u, mut s) = (0.0, 0.0, 0.0);
        let mut lits = Vec::new();
        for (b, deduce) in self.deduce.iter().enumerate() {
            let row = v.row(b);
            let (mut db, mut ub, mut sb) = (0.0, 0.0, 0.0);
            for (i, &ded) in deduce.iter().enumerate() {
                self.literal_values(row, i, &mut lits);
                let unsat: f64 = lits.iter().map(|&(_, _, lv)| 1.0 - lv).product();
                if ded {
                    db += unsat;
                }
                if unsat == 1.0 {
                    ub += unsat;
                } else if unsat == 0.0 {
                    sb += lits.iter().map(|&(_, _, lv)| keep_term(lv)).sum::<f64>();
                }
            }
            d += db;
            u += ub / m as f64;
            s += sb / m as f64;
        }
        let batch = self.deduce.len() as f64;
        Ok(Tensor::vector(vec![d / batch, u / batch, s / batch]))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let v = inputs[0];
        let (m, n) = self.c.shape();
        let batch = self.deduce.len() as f64;
        let (gd, gu, gs) = (grad[0] / batch, grad[1] / batch / m as f64, grad[2] / batch / m as f64);
        let mut out = vec![0.0; v.numel()];
        let mut lits = Vec::new();
        let mut others = Vec::new();
        for (b, deduce) in self.deduce.iter().enumerate() {
            let row = v.row(b);
            let dst = &mut out[b * n..(b + 1) * n];
            for (i, &ded) in deduce.iter().enumerate() {
                self.literal_values(row, i, &mut lits);
                let unsat: f64 = lits.iter().map(|&(_, _, lv)| 1.0 - lv).product();
                let mut cu = if ded { gd } else { 0.0 };
                if unsat == 1.0 {
                    cu += gu;
                }
                if cu != 0.0 {
                    // product of the other factors, via prefix and suffix products
                    others.clear();
                    let mut prefix = 1.0;
                    for &(_, _, lv) in &lits {
                        others.push(prefix);
                        prefix *= 1.0 - lv;
                    }
                    let mut suffix = 1.0;
                    for (k, &(j, s, lv)) in lits.iter().enumerate().rev() {
                        dst[j] += cu * -s * others[k] * suffix;
                        suffix *= 1.0 - lv;
                    }
                }
                if unsat == 0.0 && gs != 0.0 {
                    for &(j, s, lv) in &lits {
                        dst[j] += gs * s * keep_slope(lv);
                    }
                }
            }
        }
        vec![Some(out)]
    }
}
