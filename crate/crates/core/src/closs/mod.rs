//! The constraint loss stack.
//!
//! [`cnf_loss`] builds the clause-matrix equations node by node on a [`Graph`],
//! with every indicator a constant. [`cnf_loss_batch`] averages the per-instance
//! loss over a batch and can switch to a fused sparse kernel for large theories.
//! [`closed_form_grad`] predicts the same gradients by counting clauses.

mod cnf_loss;
mod oracle;
mod sparse;

pub use cnf_loss::{cnf_loss, cnf_loss_batch, CnfTerms, LossBreakdown, LossEngine, TermValues, DENSE_LIMIT};
pub use oracle::{closed_form_grad, GradOracleReport};

use serde::{Deserialize, Serialize};

use crate::cnf::FactVector;
use crate::tensor::{Binarizer, Graph, SteMode, Tensor, TensorError, Var};

/// Multipliers of the auxiliary losses added to the base loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// `L_cnf`
    pub alpha: f64,
    /// `L_bound`
    pub beta: f64,
    /// `L_sum`
    pub gamma: f64,
    /// `L_hint`
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 0.1, gamma: 0.0, delta: 0.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(format!("loss weight {name} must be a nonnegative number, got {w}"));
            }
        }
        Ok(())
    }
}

/// Stacks fact vectors into a `(batch, n)` tensor.
pub fn facts_tensor(facts: &[FactVector]) -> Result<Tensor, TensorError> {
    let n = facts.first().map_or(0, FactVector::len);
    let mut data = Vec::with_capacity(facts.len() * n);
    for f in facts {
        if f.len() != n {
            return Err(TensorError::Shape { op: "facts", lhs: vec![n], rhs: vec![f.len()] });
        }
        data.extend(f.to_f64());
    }
    Tensor::new(vec![facts.len(), n], data)
}

/// `v = f + 1_{0}(f) ⊙ bin(x)` for one instance (`x` a length-n vector).
pub fn assemble_prediction(
    g: &Graph,
    f: &FactVector,
    x: Var,
    binarizer: Binarizer,
    ste: SteMode,
) -> Result<Var, TensorError> {
    let shape = g.shape(x);
    if shape != [f.len()] {
        return Err(TensorError::Shape { op: "assemble_prediction", lhs: vec![f.len()], rhs: shape });
    }
    overlay(g, Tensor::vector(f.to_f64()), x, binarizer, ste)
}

/// Row-wise [`assemble_prediction`] for `x` of shape `(batch, n)`.
pub fn assemble_batch(
    g: &Graph,
    facts: &[FactVector],
    x: Var,
    binarizer: Binarizer,
    ste: SteMode,
) -> Result<Var, TensorError> {
    let f = facts_tensor(facts)?;
    let shape = g.shape(x);
    if shape != f.shape() {
        return Err(TensorError::Shape { op: "assemble_prediction", lhs: f.shape().to_vec(), rhs: shape });
    }
    overlay(g, f, x, binarizer, ste)
}

fn overlay(g: &Graph, f: Tensor, x: Var, binarizer: Binarizer, ste: SteMode) -> Result<Var, TensorError> {
    let f = g.constant(f);
    let free = g.indicator(f, 0.0);
    let b = g.binarize(x, binarizer, ste)?;
    let masked = g.mul(free, b)?;
    g.add(f, masked)
}

/// `L_bound = avg(x^r ⊙ x^r)`, averaged over every element of a batch.
pub fn bound_loss(g: &Graph, x_raw: Var) -> Result<Var, TensorError> {
    let sq = g.square(x_raw);
    g.mean_all(sq)
}

/// `L_sum`: for each family of index groups, the average over groups of
/// `(sum of the group - 1)^2`; families are summed.
///
/// Indices address the last dimension of `x`. With a `(batch, n)` input the
/// group averages also run over the batch.
pub fn sum_loss(g: &Graph, x: Var, families: &[Vec<Vec<usize>>]) -> Result<Var, TensorError> {
    let shape = g.shape(x);
    let (rows, n) = match shape.as_slice() {
        [n] => (1, *n),
        [b, n] => (*b, *n),
        _ => return Err(TensorError::Rank { op: "sum_loss", expected: "1 or 2", shape }),
    };
    let mut total: Option<Var> = None;
    for family in families {
        let Some(size) = family.first().map(Vec::len) else { continue };
        let mut index = Vec::with_capacity(rows * family.len() * size);
        for r in 0..rows {
            for group in family {
                if group.len() != size {
                    return Err(TensorError::Invalid("sum_loss groups in one family must share a size".into()));
                }
                for &j in group {
                    if j >= n {
                        return Err(TensorError::Index { op: "sum_loss", index: j, len: n });
                    }
                    index.push(r * n + j);
                }
            }
        }
        let gathered = g.gather(x, index, vec![rows * family.len(), size])?;
        let sums = g.sum_last(gathered)?;
        let err = g.square(g.affine(sums, 1.0, -1.0));
        let avg = g.avg_last(err)?;
        total = Some(match total {
            Some(t) => g.add(t, avg)?,
            None => avg,
        });
    }
    Ok(total.unwrap_or_else(|| g.scalar(0.0)))
}

/// `L_hint = avg(f ⊙ (1 - b_p(x)))` with the identity surrogate.
pub fn hint_loss(g: &Graph, facts: &[FactVector], x: Var) -> Result<Var, TensorError> {
    let f = facts_tensor(facts)?;
    let shape = g.shape(x);
    let f = if shape.len() == 1 { f.reshaped(shape.clone())? } else { f };
    if shape != f.shape() {
        return Err(TensorError::Shape { op: "hint_loss", lhs: f.shape().to_vec(), rhs: shape });
    }
    let f = g.constant(f);
    let b = g.binarize(x, Binarizer::Prob, SteMode::Identity)?;
    let missed = g.mul(f, g.one_minus(b))?;
    g.mean_all(missed)
}
