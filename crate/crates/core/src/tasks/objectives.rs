use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{GridInstance, LabeledData, PathInstance};
use super::theories::{
    add2x2_sum_atom, apply_op, member_in_atom, mnist_add_sum_atom, sudoku_atom, sudoku_groups, ApplyIndex, ADD2X2_PAIRS,
    MNIST_ADD_B_SUM,
};
use super::{TaskError, TaskSpec};
use crate::closs::{assemble_batch, bound_loss, cnf_loss_batch, hint_loss, sum_loss, LossWeights};
use crate::cnf::{Assignment, FactVector};
use crate::nn::{argmax, fill_by_argmax, inference_trick, Head, LossParts, Mlp, Objective, Params, Reduction, TrainConfig};
use crate::tensor::{Binarizer, Graph, Tensor, TensorError, Var};

/// Network shape a task expects, given hidden layer sizes.
pub trait TaskObjective: Objective {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn head(&self) -> Head;

    fn new_net(&self, hidden: &[usize], seed: u64) -> Mlp {
        let mut dims = vec![self.input_dim()];
        dims.extend_from_slice(hidden);
        dims.push(self.output_dim());
        Mlp::new(&dims, self.head(), seed).expect("task dims are positive")
    }
}

/// Per-task loss weights and binarization settings.
pub fn default_config(task: &str) -> TrainConfig {
    let weights = |alpha, beta| LossWeights { alpha, beta, gamma: 0.0, delta: 0.0 };
    let mut cfg = TrainConfig::default();
    match task {
        "mnistadd2" | "mnistadd3" => cfg.weights = weights(1.0, 0.01),
        "shortest-path" => cfg.weights = weights(0.2, 1.0),
        t if t.starts_with("exactly-one") => {
            cfg.weights = weights(1.0, 0.5);
            cfg.binarizer = Binarizer::Sign;
            cfg.cnf_reduction = Reduction::Mean;
            cfg.batch_size = 32;
            cfg.epochs = 30;
        }
        "sudoku4" | "sudoku4-box" => {
            cfg.weights = weights(1.0, 0.1);
            cfg.epochs = 15;
        }
        _ => cfg.weights = weights(1.0, 0.1),
    }
    cfg
}

/// Runs `net` on the rows of `data` listed per position and returns the head
/// output of each position (each `(batch, classes)`) and the raw output of
/// every row.
fn forward_positions(
    g: &Graph,
    net: &Mlp,
    params: &Params,
    data: &LabeledData,
    positions: &[Vec<usize>],
) -> Result<(Vec<Var>, Var), TensorError> {
    let all: Vec<usize> = positions.iter().flatten().copied().collect();
    let x = g.constant(data.batch(&all));
    let (out, raw) = net.forward(g, params, x)?;
    let mut outputs = Vec::with_capacity(positions.len());
    let mut start = 0;
    for pos in positions {
        let rows: Vec<usize> = (start..start + pos.len()).collect();
        outputs.push(g.select_rows(out, &rows)?);
        start += pos.len();
    }
    Ok((outputs, raw))
}

fn digit_accuracy(net: &Mlp, test: &LabeledData) -> Result<f64, TensorError> {
    if test.is_empty() {
        return Ok(0.0);
    }
    let pred = net.classify(&test.all())?;
    Ok(pred.iter().zip(&test.labels).filter(|(p, l)| p == l).count() as f64 / test.len() as f64)
}

/// A weakly labeled group of images: the network classifies each image and
/// only `facts` (atoms of the task theory) are observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageInstance {
    pub images: Vec<usize>,
    pub facts: Vec<usize>,
}

/// Tasks whose `x` is assembled from per-image class distributions: the
/// mnistAdd family, add2x2 and member(k).
pub struct WeakDigitObjective {
    pub spec: TaskSpec,
    pub images: LabeledData,
    pub instances: Vec<ImageInstance>,
    pub test: LabeledData,
    pub classes: usize,
}

impl WeakDigitObjective {
    fn facts(&self, batch: &[usize]) -> Result<Vec<FactVector>, TensorError> {
        batch
            .iter()
            .map(|&i| FactVector::from_atoms(self.spec.n(), &self.instances[i].facts).map_err(|e| TensorError::Invalid(e.to_string())))
            .collect()
    }

    pub fn arity(&self) -> usize {
        self.instances.first().map_or(0, |i| i.images.len())
    }
}

impl Objective for WeakDigitObjective {
    fn train_len(&self) -> usize {
        self.instances.len()
    }

    fn batch_loss(&self, g: &Graph, net: &Mlp, params: &Params, batch: &[usize], cfg: &TrainConfig) -> Result<LossParts, TensorError> {
        let k = self.arity();
        let positions: Vec<Vec<usize>> = (0..k).map(|t| batch.iter().map(|&i| self.instances[i].images[t]).collect()).collect();
        let (outputs, raw) = forward_positions(g, net, params, &self.images, &positions)?;
        let x = self.spec.assemble(g, &outputs)?;
        let facts = self.facts(batch)?;
        let v = assemble_batch(g, &facts, x, cfg.binarizer, cfg.ste)?;
        let cnf = cnf_loss_batch(g, &self.spec.matrix, v, &facts, cfg.engine)?.l_cnf;
        let cnf = cfg.reduce_cnf(g, cnf, batch.len());
        let bound = g.scale(bound_loss(g, raw)?, k as f64);
        Ok(LossParts { cnf: Some(cnf), bound: Some(bound), ..Default::default() })
    }

    fn evaluate(&self, net: &Mlp) -> Result<f64, TensorError> {
        digit_accuracy(net, &self.test)
    }
}

impl TaskObjective for WeakDigitObjective {
    fn input_dim(&self) -> usize {
        self.images.dim
    }

    fn output_dim(&self) -> usize {
        self.classes
    }

    fn head(&self) -> Head {
        Head::Softmax
    }
}

fn number(labels: &[usize]) -> usize {
    labels.iter().fold(0, |acc, &d| 10 * acc + d)
}

/// Consecutive groups of `2·digits` images labeled with the sum of the two
/// numbers they spell. `explicit` selects the mnistadd-b atom layout.
pub fn mnist_add_instances(images: &LabeledData, digits: usize, explicit: bool) -> Vec<ImageInstance> {
    let k = 2 * digits;
    (0..images.len() / k)
        .map(|t| {
            let idx: Vec<usize> = (t * k..(t + 1) * k).collect();
            let ls: Vec<usize> = idx.iter().map(|&i| images.labels[i]).collect();
            let sum = number(&ls[..digits]) + number(&ls[digits..]);
            let atom = if explicit { MNIST_ADD_B_SUM + sum } else { mnist_add_sum_atom(digits, sum) };
            ImageInstance { images: idx, facts: vec![atom] }
        })
        .collect()
}

/// Consecutive groups of four images with their two row and two column sums.
pub fn add2x2_instances(images: &LabeledData) -> Vec<ImageInstance> {
    (0..images.len() / 4)
        .map(|t| {
            let idx: Vec<usize> = (4 * t..4 * t + 4).collect();
            let facts = ADD2X2_PAIRS
                .iter()
                .enumerate()
                .map(|(p, &(a, b))| add2x2_sum_atom(p, images.labels[idx[a]] + images.labels[idx[b]]))
                .collect();
            ImageInstance { images: idx, facts }
        })
        .collect()
}

/// Consecutive groups of `k` images with a queried digit: half the queries
/// pick a digit from the group, the rest are uniform.
pub fn member_instances(images: &LabeledData, k: usize, seed: u64) -> Vec<ImageInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..images.len() / k)
        .map(|t| {
            let idx: Vec<usize> = (t * k..(t + 1) * k).collect();
            let d = if rng.random_bool(0.5) { images.labels[idx[rng.random_range(0..k)]] } else { rng.random_range(0..10) };
            let present = idx.iter().any(|&i| images.labels[i] == d);
            ImageInstance { images: idx, facts: vec![member_in_atom(k, d, usize::from(present))] }
        })
        .collect()
}

/// One row or column of an apply2x2 grid: operands, result and the two
/// operator images applied in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApplyPair {
    pub operands: [i64; 3],
    pub result: i64,
    pub ops: (usize, usize),
}

/// Four operator images with the rows and columns they take part in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApplyInstance {
    pub images: [usize; 4],
    pub pairs: Vec<ApplyPair>,
}

pub fn apply2x2_instances(ops: &LabeledData, seed: u64) -> Vec<ApplyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..ops.len() / 4)
        .map(|t| {
            let images = [4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3];
            let pairs = ADD2X2_PAIRS
                .iter()
                .map(|&(a, b)| {
                    let operands = [rng.random_range(0..10), rng.random_range(0..10), rng.random_range(0..10)];
                    let (o1, o2) = (ops.labels[images[a]], ops.labels[images[b]]);
                    let result = apply_op(o2, apply_op(o1, operands[0], operands[1]), operands[2]);
                    ApplyPair { operands, result, ops: (images[a], images[b]) }
                })
                .collect();
            ApplyInstance { images, pairs }
        })
        .collect()
}

/// Operator classification from row and column results; `L_cnf` is summed
/// over the four pairs of an instance.
pub struct ApplyObjective {
    pub spec: TaskSpec,
    pub index: ApplyIndex,
    pub ops: LabeledData,
    pub instances: Vec<ApplyInstance>,
    pub test: LabeledData,
}

impl Objective for ApplyObjective {
    fn train_len(&self) -> usize {
        self.instances.len()
    }

    fn batch_loss(&self, g: &Graph, net: &Mlp, params: &Params, batch: &[usize], cfg: &TrainConfig) -> Result<LossParts, TensorError> {
        let pairs: Vec<&ApplyPair> = batch.iter().flat_map(|&i| &self.instances[i].pairs).collect();
        let positions = vec![pairs.iter().map(|p| p.ops.0).collect(), pairs.iter().map(|p| p.ops.1).collect()];
        let (outputs, _) = forward_positions(g, net, params, &self.ops, &positions)?;
        let images: Vec<usize> = batch.iter().flat_map(|&i| self.instances[i].images).collect();
        let (_, raw) = net.forward(g, params, g.constant(self.ops.batch(&images)))?;
        let x = self.spec.assemble(g, &outputs)?;
        let facts = pairs
            .iter()
            .map(|p| {
                let [d1, d2, d3] = p.operands;
                let atom = self.index.atom(d1, d2, d3, p.result).ok_or_else(|| TensorError::Invalid(format!("no apply atom for {p:?}")))?;
                FactVector::from_atoms(self.spec.n(), &[atom]).map_err(|e| TensorError::Invalid(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let v = assemble_batch(g, &facts, x, cfg.binarizer, cfg.ste)?;
        let per_pair = cnf_loss_batch(g, &self.spec.matrix, v, &facts, cfg.engine)?.l_cnf;
        let per_instance = g.scale(per_pair, pairs.len() as f64 / batch.len() as f64);
        let cnf = cfg.reduce_cnf(g, per_instance, batch.len());
        let bound = g.scale(bound_loss(g, raw)?, 4.0);
        Ok(LossParts { cnf: Some(cnf), bound: Some(bound), ..Default::default() })
    }

    fn evaluate(&self, net: &Mlp) -> Result<f64, TensorError> {
        digit_accuracy(net, &self.test)
    }
}

impl TaskObjective for ApplyObjective {
    fn input_dim(&self) -> usize {
        self.ops.dim
    }

    fn output_dim(&self) -> usize {
        3
    }

    fn head(&self) -> Head {
        Head::Softmax
    }
}

/// One-hot givens of a board, flattened over `(row, col, value)`.
pub fn board_one_hot(board: &[u8], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; side * side * side];
    for (cell, &v) in board.iter().enumerate() {
        if v != 0 {
            out[sudoku_atom(side, cell / side, cell % side, v as usize - 1)] = 1.0;
        }
    }
    out
}

pub fn board_facts(board: &[u8], side: usize) -> FactVector {
    FactVector::from_bits(board_one_hot(board, side).iter().map(|&b| b == 1.0).collect())
}

/// Sudoku from puzzles: the network maps one-hot givens to per-cell value
/// distributions. Labels are used only when `supervised` is set.
pub struct SudokuObjective {
    pub spec: TaskSpec,
    pub side: usize,
    pub train: Vec<GridInstance>,
    pub test: Vec<GridInstance>,
    pub supervised: bool,
    pub inference_trick: bool,
    families: Vec<Vec<Vec<usize>>>,
}

impl SudokuObjective {
    pub fn new(spec: TaskSpec, side: usize, train: Vec<GridInstance>, test: Vec<GridInstance>) -> Result<Self, TaskError> {
        if spec.n() != side * side * side {
            return Err(TaskError::Invalid(format!("task {} does not match side {side}", spec.name)));
        }
        let families = sudoku_groups(side, true)?;
        Ok(SudokuObjective { spec, side, train, test, supervised: false, inference_trick: true, families })
    }

    fn probs(&self, net: &Mlp, board: &[u8]) -> Result<Vec<f64>, TensorError> {
        let x = Tensor::matrix(1, self.spec.n(), board_one_hot(board, self.side))?;
        Ok(net.infer(&x)?.0.into_data())
    }

    /// Completes `board`, cell by cell with the inference trick or all at once.
    pub fn solve(&self, net: &Mlp, board: &[u8], trick: bool) -> Result<Vec<u8>, TensorError> {
        if trick {
            let mut err = None;
            let out = inference_trick(board, self.side, |b| {
                self.probs(net, b).unwrap_or_else(|e| {
                    err = Some(e);
                    vec![0.0; b.len() * self.side]
                })
            });
            match err {
                Some(e) => Err(e),
                None => Ok(out),
            }
        } else {
            Ok(fill_by_argmax(board, self.side, &self.probs(net, board)?))
        }
    }

    /// Whether `board` agrees with the givens of `q` and satisfies every clause.
    pub fn verify(&self, q: &[u8], board: &[u8]) -> bool {
        let consistent = q.iter().zip(board).all(|(&a, &b)| a == 0 || a == b);
        let bits = Assignment::from_f64(&board_one_hot(board, self.side));
        consistent && board.iter().all(|&v| v != 0) && self.spec.theory.is_satisfied_by(bits.bits())
    }

    /// Fraction of test boards completed into a valid solution, without and
    /// with the trick. For uniquely solvable puzzles this is exact match.
    pub fn board_accuracy(&self, net: &Mlp) -> Result<(f64, f64), TensorError> {
        let mut hits = [0usize; 2];
        for inst in &self.test {
            for (k, trick) in [false, true].into_iter().enumerate() {
                let board = self.solve(net, &inst.q, trick)?;
                hits[k] += usize::from(self.verify(&inst.q, &board));
            }
        }
        let n = self.test.len().max(1) as f64;
        Ok((hits[0] as f64 / n, hits[1] as f64 / n))
    }
}

impl Objective for SudokuObjective {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn batch_loss(&self, g: &Graph, net: &Mlp, params: &Params, batch: &[usize], cfg: &TrainConfig) -> Result<LossParts, TensorError> {
        let rows: Vec<Vec<f64>> = batch.iter().map(|&i| board_one_hot(&self.train[i].q, self.side)).collect();
        let input = g.constant(Tensor::from_rows(&rows)?);
        let (out, raw) = net.forward(g, params, input)?;
        let facts: Vec<FactVector> = batch.iter().map(|&i| board_facts(&self.train[i].q, self.side)).collect();
        let v = assemble_batch(g, &facts, out, cfg.binarizer, cfg.ste)?;
        let cnf = cnf_loss_batch(g, &self.spec.matrix, v, &facts, cfg.engine)?.l_cnf;
        let cnf = cfg.reduce_cnf(g, cnf, batch.len());
        let mut parts = LossParts { cnf: Some(cnf), bound: Some(bound_loss(g, raw)?), ..Default::default() };
        if cfg.weights.gamma > 0.0 {
            parts.sum = Some(sum_loss(g, out, &self.families)?);
        }
        if cfg.weights.delta > 0.0 {
            parts.hint = Some(hint_loss(g, &facts, out)?);
        }
        if self.supervised {
            let mut labels = Vec::with_capacity(batch.len() * self.side * self.side);
            for &i in batch {
                let l = self.train[i].l.as_ref().ok_or_else(|| TensorError::Invalid("supervised Sudoku needs solutions".into()))?;
                labels.extend(l.iter().map(|&v| v as usize - 1));
            }
            let cells = g.reshape(raw, vec![labels.len(), self.side])?;
            parts.base = Some(g.cross_entropy_labels(cells, &labels)?);
        }
        Ok(parts)
    }

    fn evaluate(&self, net: &Mlp) -> Result<f64, TensorError> {
        let (without, with) = self.board_accuracy(net)?;
        Ok(if self.inference_trick { with } else { without })
    }
}

impl TaskObjective for SudokuObjective {
    fn input_dim(&self) -> usize {
        self.spec.n()
    }

    fn output_dim(&self) -> usize {
        self.spec.n()
    }

    fn head(&self) -> Head {
        Head::GroupedSoftmax(self.side)
    }
}

/// Shortest paths on the 4×4 grid with edge labels.
pub struct ShortestPathObjective {
    pub spec: TaskSpec,
    pub train: Vec<PathInstance>,
    pub test: Vec<PathInstance>,
}

fn bits_tensor(rows: impl Iterator<Item = Vec<f64>>) -> Result<Tensor, TensorError> {
    Tensor::from_rows(&rows.collect::<Vec<_>>())
}

impl ShortestPathObjective {
    pub fn path_facts(inst: &PathInstance) -> FactVector {
        let mut bits: Vec<bool> = inst.input[super::EDGES..].iter().map(|&b| b == 1).collect();
        bits.extend(std::iter::repeat_n(false, super::EDGES));
        FactVector::from_bits(bits)
    }

    /// Predicted edge sets, thresholded at 0.5.
    pub fn predict(&self, net: &Mlp, instances: &[PathInstance]) -> Result<Vec<Vec<u8>>, TensorError> {
        let x = bits_tensor(instances.iter().map(|p| p.input.iter().map(|&b| f64::from(b)).collect()))?;
        let (out, _) = net.infer(&x)?;
        let k = out.last_dim();
        Ok((0..instances.len()).map(|r| out.data()[r * k..(r + 1) * k].iter().map(|&p| u8::from(p >= 0.5)).collect()).collect())
    }
}

impl Objective for ShortestPathObjective {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn batch_loss(&self, g: &Graph, net: &Mlp, params: &Params, batch: &[usize], cfg: &TrainConfig) -> Result<LossParts, TensorError> {
        let insts: Vec<&PathInstance> = batch.iter().map(|&i| &self.train[i]).collect();
        let input = g.constant(bits_tensor(insts.iter().map(|p| p.input.iter().map(|&b| f64::from(b)).collect()))?);
        let targets = bits_tensor(insts.iter().map(|p| p.label.iter().map(|&b| f64::from(b)).collect()))?;
        let (out, raw) = net.forward(g, params, input)?;
        let base = g.binary_cross_entropy(out, &targets)?;
        let x = self.spec.assemble(g, &[out])?;
        let facts: Vec<FactVector> = insts.iter().map(|p| Self::path_facts(p)).collect();
        let v = assemble_batch(g, &facts, x, cfg.binarizer, cfg.ste)?;
        let cnf = cnf_loss_batch(g, &self.spec.matrix, v, &facts, cfg.engine)?.l_cnf;
        let cnf = cfg.reduce_cnf(g, cnf, batch.len());
        Ok(LossParts { base: Some(base), cnf: Some(cnf), bound: Some(bound_loss(g, raw)?), ..Default::default() })
    }

    /// Fraction of test instances whose predicted edge set is the labeled path.
    fn evaluate(&self, net: &Mlp) -> Result<f64, TensorError> {
        let pred = self.predict(net, &self.test)?;
        let hits = pred.iter().zip(&self.test).filter(|(p, t)| **p == t.label).count();
        Ok(hits as f64 / self.test.len().max(1) as f64)
    }
}

impl TaskObjective for ShortestPathObjective {
    fn input_dim(&self) -> usize {
        40
    }

    fn output_dim(&self) -> usize {
        super::EDGES
    }

    fn head(&self) -> Head {
        Head::Sigmoid
    }
}

/// Classification from a few labels plus the exactly-one constraint on every
/// instance. Each batch of unlabeled rows is paired with labeled rows
/// `i mod |labeled|`; `L_cnf` and `L_bound` cover both.
pub struct ExactlyOneObjective {
    pub spec: TaskSpec,
    pub labeled: LabeledData,
    pub unlabeled: LabeledData,
    pub test: LabeledData,
}

impl ExactlyOneObjective {
    /// Fraction of test rows whose thresholded logits are not exactly one-hot.
    pub fn violation_rate(&self, net: &Mlp) -> Result<f64, TensorError> {
        let (_, raw) = net.infer(&self.test.all())?;
        let k = raw.last_dim();
        let bad = (0..self.test.len())
            .filter(|&r| raw.data()[r * k..(r + 1) * k].iter().filter(|&&v| v >= 0.0).count() != 1)
            .count();
        Ok(bad as f64 / self.test.len().max(1) as f64)
    }
}

impl Objective for ExactlyOneObjective {
    fn train_len(&self) -> usize {
        self.unlabeled.len()
    }

    fn batch_loss(&self, g: &Graph, net: &Mlp, params: &Params, batch: &[usize], cfg: &TrainConfig) -> Result<LossParts, TensorError> {
        let labeled: Vec<usize> = batch.iter().map(|&i| i % self.labeled.len()).collect();
        let mut rows = self.unlabeled.batch(batch).into_data();
        rows.extend(self.labeled.batch(&labeled).into_data());
        let total = batch.len() + labeled.len();
        let input = g.constant(Tensor::matrix(total, self.labeled.dim, rows)?);
        let (_, raw) = net.forward(g, params, input)?;
        let sup_rows: Vec<usize> = (batch.len()..total).collect();
        let labels: Vec<usize> = labeled.iter().map(|&i| self.labeled.labels[i]).collect();
        let base = g.cross_entropy_labels(g.select_rows(raw, &sup_rows)?, &labels)?;
        let mut parts = LossParts { base: Some(base), ..Default::default() };
        if cfg.weights.alpha > 0.0 || cfg.weights.beta > 0.0 {
            let facts = vec![FactVector::zeros(self.spec.n()); total];
            let v = assemble_batch(g, &facts, raw, cfg.binarizer, cfg.ste)?;
            let cnf = cnf_loss_batch(g, &self.spec.matrix, v, &facts, cfg.engine)?.l_cnf;
            parts.cnf = Some(cfg.reduce_cnf(g, cnf, total));
            parts.bound = Some(bound_loss(g, raw)?);
        }
        Ok(parts)
    }

    fn evaluate(&self, net: &Mlp) -> Result<f64, TensorError> {
        digit_accuracy(net, &self.test)
    }
}

impl TaskObjective for ExactlyOneObjective {
    fn input_dim(&self) -> usize {
        self.labeled.dim
    }

    fn output_dim(&self) -> usize {
        self.spec.n()
    }

    fn head(&self) -> Head {
        Head::None
    }
}

/// Predicted class of each `(batch, k)` row.
pub fn row_argmax(t: &Tensor) -> Vec<usize> {
    let k = t.last_dim();
    t.data().chunks(k).map(argmax).collect()
}
