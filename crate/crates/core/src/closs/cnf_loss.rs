use std::sync::Arc;

use crate::cnf::{ClauseMatrix, FactVector};
use crate::tensor::{Graph, Tensor, TensorError, Var};

use super::sparse::SparseCnfLoss;

/// Theories with at most this many matrix cells use the dense engine under
/// [`LossEngine::Auto`].
pub const DENSE_LIMIT: usize = 4096;

/// How [`cnf_loss_batch`] evaluates the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum LossEngine {
    /// The matrix equations, one graph node per intermediate.
    Dense,
    /// A fused kernel over the nonzeros of `C`.
    Sparse,
    #[default]
    Auto,
}

/// Every intermediate of the dense loss for one instance.
///
/// `l_f` and `l_v` are `m×n`; `deduce`, `unsat` and `keep` have length `m`; the
/// four loss terms are 0-dimensional. For `m = 0` every field is a zero constant.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub l_f: Var,
    pub l_v: Var,
    pub deduce: Var,
    pub unsat: Var,
    pub keep: Var,
    pub l_deduce: Var,
    pub l_unsat: Var,
    pub l_sat: Var,
    pub l_cnf: Var,
}

impl LossBreakdown {
    pub fn terms(&self) -> CnfTerms {
        CnfTerms { l_deduce: self.l_deduce, l_unsat: self.l_unsat, l_sat: self.l_sat, l_cnf: self.l_cnf }
    }
}

/// The three loss terms and their sum.
#[derive(Debug, Clone, Copy)]
pub struct CnfTerms {
    pub l_deduce: Var,
    pub l_unsat: Var,
    pub l_sat: Var,
    pub l_cnf: Var,
}

impl CnfTerms {
    pub fn values(&self, g: &Graph) -> TermValues {
        TermValues {
            deduce: g.item(self.l_deduce),
            unsat: g.item(self.l_unsat),
            sat: g.item(self.l_sat),
            cnf: g.item(self.l_cnf),
        }
    }

    /// The term selected by `which` (0 deduce, 1 unsat, 2 sat, 3 cnf).
    pub fn get(&self, which: usize) -> Var {
        [self.l_deduce, self.l_unsat, self.l_sat, self.l_cnf][which]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermValues {
    pub deduce: f64,
    pub unsat: f64,
    pub sat: f64,
    pub cnf: f64,
}

/// `L_cnf(C, v, f)` for one instance, every indicator a graph constant.
pub fn cnf_loss(g: &Graph, c: &ClauseMatrix, v: Var, f: &FactVector) -> Result<LossBreakdown, TensorError> {
    let (m, n) = c.shape();
    let vshape = g.shape(v);
    if vshape != [n] || f.len() != n {
        return Err(TensorError::Shape { op: "cnf_loss", lhs: vec![m, n], rhs: vshape });
    }
    if m == 0 {
        let zero = |shape: Vec<usize>| g.constant(Tensor::zeros(shape));
        let s = g.scalar(0.0);
        return Ok(LossBreakdown {
            l_f: zero(vec![0, n]),
            l_v: zero(vec![0, n]),
            deduce: zero(vec![0]),
            unsat: zero(vec![0]),
            keep: zero(vec![0]),
            l_deduce: s,
            l_unsat: s,
            l_sat: s,
            l_cnf: s,
        });
    }

    let cm = g.constant(c.to_tensor());
    let fv = g.constant(Tensor::vector(f.to_f64()));

    let l_f = g.mul(cm, fv)?;
    let pos = g.indicator(cm, 1.0);
    let neg = g.indicator(cm, -1.0);
    let l_v = g.add(g.mul(pos, v)?, g.mul(neg, g.one_minus(v))?)?;

    let lengths = g.sum_last(g.mul(cm, cm)?)?;
    let false_by_facts = g.sum_last(g.indicator(l_f, -1.0))?;
    let deduce = g.indicator(g.sub(lengths, false_by_facts)?, 1.0);

    let unsat = g.prod_last(g.one_minus(l_v))?;
    let keep_true = g.mul(g.indicator(l_v, 1.0), g.one_minus(l_v))?;
    let keep_false = g.mul(g.indicator(l_v, 0.0), l_v)?;
    let keep = g.sum_last(g.add(keep_true, keep_false)?)?;

    let l_deduce = g.sum_last(g.mul(deduce, unsat)?)?;
    let l_unsat = g.avg_last(g.mul(g.indicator(unsat, 1.0), unsat)?)?;
    let l_sat = g.avg_last(g.mul(g.indicator(unsat, 0.0), keep)?)?;
    let l_cnf = g.add(g.add(l_deduce, l_unsat)?, l_sat)?;

    Ok(LossBreakdown { l_f, l_v, deduce, unsat, keep, l_deduce, l_unsat, l_sat, l_cnf })
}

/// Mean over a batch of per-instance `L_cnf`; `v` has shape `(batch, n)`.
pub fn cnf_loss_batch(
    g: &Graph,
    c: &Arc<ClauseMatrix>,
    v: Var,
    facts: &[FactVector],
    engine: LossEngine,
) -> Result<CnfTerms, TensorError> {
    let (m, n) = c.shape();
    let vshape = g.shape(v);
    if vshape != [facts.len(), n] {
        return Err(TensorError::Shape { op: "cnf_loss", lhs: vec![facts.len(), n], rhs: vshape });
    }
    if let Some(bad) = facts.iter().find(|f| f.len() != n) {
        return Err(TensorError::Shape { op: "cnf_loss", lhs: vec![n], rhs: vec![bad.len()] });
    }
    if m == 0 || facts.is_empty() {
        let s = g.scalar(0.0);
        return Ok(CnfTerms { l_deduce: s, l_unsat: s, l_sat: s, l_cnf: s });
    }

    let dense = match engine {
        LossEngine::Dense => true,
        LossEngine::Sparse => false,
        LossEngine::Auto => m * n <= DENSE_LIMIT,
    };
    if !dense {
        let op = SparseCnfLoss::new(Arc::clone(c), facts);
        let out = g.custom(&[v], Box::new(op))?;
        let pick = |k: usize| g.gather(out, vec![k], vec![]);
        let (l_deduce, l_unsat, l_sat) = (pick(0)?, pick(1)?, pick(2)?);
        let l_cnf = g.add(g.add(l_deduce, l_unsat)?, l_sat)?;
        return Ok(CnfTerms { l_deduce, l_unsat, l_sat, l_cnf });
    }

    let mut acc: Option<[Var; 3]> = None;
    for (b, f) in facts.iter().enumerate() {
        let row = g.row(v, b)?;
        let t = cnf_loss(g, c, row, f)?;
        acc = Some(match acc {
            None => [t.l_deduce, t.l_unsat, t.l_sat],
            Some([d, u, s]) => [g.add(d, t.l_deduce)?, g.add(u, t.l_unsat)?, g.add(s, t.l_sat)?],
        });
    }
    let [d, u, s] = acc.expect("nonempty batch");
    let inv = 1.0 / facts.len() as f64;
    let (l_deduce, l_unsat, l_sat) = (g.scale(d, inv), g.scale(u, inv), g.scale(s, inv));
    let l_cnf = g.add(g.add(l_deduce, l_unsat)?, l_sat)?;
    Ok(CnfTerms { l_deduce, l_unsat, l_sat, l_cnf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closs::assemble_prediction;
    use crate::cnf::parse_dimacs;
    use crate::tensor::{Binarizer, SteMode};

    fn golden() -> (ClauseMatrix, FactVector) {
        let t = parse_dimacs("p cnf 3 2\n-1 -2 3 0\n-1 2 0\n").unwrap();
        (ClauseMatrix::from_theory(&t), FactVector::from_bits(vec![true, false, false]))
    }

    #[test]
    fn golden_forward_intermediates() {
        let (c, f) = golden();
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.3, 0.1, 0.9]));
        let v = assemble_prediction(&g, &f, x, Binarizer::Prob, SteMode::Identity).unwrap();
        let b = cnf_loss(&g, &c, v, &f).unwrap();
        assert_eq!(g.value(b.l_f).data(), &[-1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert_eq!(g.value(b.l_v).data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.value(b.deduce).data(), &[0.0, 1.0]);
        assert_eq!(g.value(b.unsat).data(), &[0.0, 1.0]);
        assert_eq!(g.value(b.keep).data(), &[0.0, 0.0]);
        let t = b.terms().values(&g);
        assert_eq!(t, TermValues { deduce: 1.0, unsat: 0.5, sat: 0.0, cnf: 1.5 });
        let grads = g.backward(b.l_cnf).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, -1.0, -0.5]);
    }

    #[test]
    fn empty_theory_is_zero() {
        let g = Graph::new();
        let c = ClauseMatrix::from_theory(&crate::cnf::CnfTheory::new(2, vec![]).unwrap());
        let v = g.leaf(Tensor::vector(vec![1.0, 0.0]));
        let b = cnf_loss(&g, &c, v, &FactVector::zeros(2)).unwrap();
        assert_eq!(b.terms().values(&g), TermValues::default());
    }

    #[test]
    fn batch_engines_agree_on_golden() {
        let (c, f) = golden();
        let c = Arc::new(c);
        let facts = vec![f.clone(), FactVector::zeros(3)];
        let x0 = Tensor::from_rows(&[vec![0.3, 0.1, 0.9], vec![0.7, 0.2, 0.6]]).unwrap();
        let mut results = Vec::new();
        for engine in [LossEngine::Dense, LossEngine::Sparse] {
            let g = Graph::new();
            let x = g.leaf(x0.clone());
            let v = crate::closs::assemble_batch(&g, &facts, x, Binarizer::Prob, SteMode::Identity).unwrap();
            let t = cnf_loss_batch(&g, &c, v, &facts, engine).unwrap();
            let vals = t.values(&g);
            let grad = g.backward(t.l_cnf).unwrap().get(x).unwrap();
            results.push((vals, grad));
        }
        assert_eq!(results[0].0, results[1].0);
        assert_eq!(results[0].1, results[1].1);
    }
}
