//! Benchmark theories, datasets and training objectives.
//!
//! A [`TaskSpec`] pairs a CNF theory with the [`Layout`] that turns network
//! outputs into the atom-probability vector `x`. The generators in
//! [`theories`] fix every atom index; [`data`] synthesizes or loads instances;
//! [`objectives`] wires both into [`Objective`](crate::nn::Objective)s.

pub mod data;
pub mod objectives;
pub mod runner;
pub mod theories;

use std::sync::Arc;

use thiserror::Error;

use crate::cnf::{ClauseMatrix, CnfTheory};
use crate::tensor::{Graph, TensorError, Var};

pub use theories::*;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("unknown task '{0}'")]
    Unknown(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {msg}")]
    Data { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How the network outputs of one instance fill the atom slots of `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    /// Slot `j < classes^arity` holds `Π_t out_t[d_t]` where `d_1 ... d_arity`
    /// are the base-`classes` digits of `j`; the remaining slots are 0.
    Products { arity: usize, classes: usize },
    /// `pad_front` zeros, then the outputs concatenated, then zeros.
    Concat { pad_front: usize },
    /// Explicit `(output, class)` factors for every slot.
    Slots(Vec<Vec<(usize, usize)>>),
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub theory: CnfTheory,
    pub matrix: Arc<ClauseMatrix>,
    pub layout: Layout,
}

impl TaskSpec {
    pub fn new(name: String, theory: CnfTheory, layout: Layout) -> Self {
        let matrix = Arc::new(ClauseMatrix::from_theory(&theory));
        TaskSpec { name, theory, matrix, layout }
    }

    pub fn n(&self) -> usize {
        self.theory.n()
    }

    pub fn m(&self) -> usize {
        self.theory.m()
    }

    /// The product slots of this layout, given the per-output class counts.
    pub fn slots(&self, widths: &[usize]) -> Vec<Vec<(usize, usize)>> {
        let n = self.n();
        match &self.layout {
            Layout::Products { arity, classes } => {
                let filled = classes.pow(*arity as u32);
                let mut slots = Vec::with_capacity(n);
                for j in 0..filled {
                    let mut factors = vec![(0, 0); *arity];
                    let mut rest = j;
                    for t in (0..*arity).rev() {
                        factors[t] = (t, rest % classes);
                        rest /= classes;
                    }
                    slots.push(factors);
                }
                slots.resize_with(n.max(filled), Vec::new);
                slots
            }
            Layout::Concat { pad_front } => {
                let mut slots: Vec<Vec<(usize, usize)>> = vec![Vec::new(); *pad_front];
                for (t, &k) in widths.iter().enumerate() {
                    slots.extend((0..k).map(|i| vec![(t, i)]));
                }
                slots.resize_with(n.max(slots.len()), Vec::new);
                slots
            }
            Layout::Slots(s) => s.clone(),
        }
    }

    /// Assembles `x` from network outputs (vectors, or `(batch, k)` matrices).
    pub fn assemble(&self, g: &Graph, outputs: &[Var]) -> Result<Var, TensorError> {
        let widths: Vec<usize> = outputs.iter().map(|&v| *g.shape(v).last().unwrap_or(&0)).collect();
        let slots = self.slots(&widths);
        if slots.len() != self.n() {
            return Err(TensorError::Shape { op: "assemble", lhs: vec![self.n()], rhs: vec![slots.len()] });
        }
        g.product_gather(outputs, slots)
    }
}

/// Every task name accepted by [`task_by_name`].
pub const TASK_NAMES: &[&str] = &[
    "mnistadd",
    "mnistadd2",
    "mnistadd3",
    "mnistadd-b",
    "add2x2",
    "apply2x2",
    "member<k>",
    "sudoku4",
    "sudoku4-box",
    "sudoku9",
    "sudoku9-box",
    "shortest-path",
    "exactly-one<k>",
];

/// Resolves a task name. Hyphens and underscores are interchangeable and
/// `mnist-add` is accepted for `mnistadd`.
pub fn task_by_name(name: &str) -> Result<TaskSpec, TaskError> {
    let key = name.to_ascii_lowercase().replace('_', "-").replace("mnist-add", "mnistadd");
    let unknown = || TaskError::Unknown(name.to_string());
    let spec = match key.as_str() {
        "mnistadd" | "mnistadd1" => gen_mnist_add(1)?,
        "mnistadd2" => gen_mnist_add(2)?,
        "mnistadd3" => gen_mnist_add(3)?,
        "mnistadd-b" => gen_mnist_add_b(),
        "add2x2" => gen_add2x2(),
        "apply2x2" => gen_apply2x2(),
        "sudoku4" => gen_sudoku(4, false)?,
        "sudoku4-box" => gen_sudoku(4, true)?,
        "sudoku9" | "sudoku" => gen_sudoku(9, false)?,
        "sudoku9-box" => gen_sudoku(9, true)?,
        "shortest-path" | "shortestpath" | "sp" => gen_shortest_path(),
        other => {
            if let Some(k) = other.strip_prefix("member") {
                gen_member(k.parse().map_err(|_| unknown())?)?
            } else if let Some(k) = other.strip_prefix("exactly-one") {
                gen_exactly_one(k.trim_start_matches('-').parse().map_err(|_| unknown())?)?
            } else {
                return Err(unknown());
            }
        }
    };
    Ok(spec)
}
