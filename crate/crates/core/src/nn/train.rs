use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Mlp, NnError, Optimizer, OptimizerKind, Params};
use crate::closs::{LossEngine, LossWeights};
use crate::tensor::{Binarizer, Graph, SteMode, TensorError, Var};

/// How per-instance `L_cnf` values combine into the batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Reduction {
    Mean,
    #[default]
    Sum,
}

pub const METRICS_HEADER: &str = "epoch,loss_total,loss_base,loss_cnf,loss_bound,loss_sum,loss_hint,acc_test";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub weights: LossWeights,
    pub binarizer: Binarizer,
    pub ste: SteMode,
    pub engine: LossEngine,
    pub cnf_reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 16,
            epochs: 1,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            weights: LossWeights::default(),
            binarizer: Binarizer::Prob,
            ste: SteMode::Identity,
            engine: LossEngine::Auto,
            cnf_reduction: Reduction::Sum,
        }
    }
}

impl TrainConfig {
    /// Rescales a batch-mean `L_cnf` over `instances` rows to `cnf_reduction`.
    pub fn reduce_cnf(&self, g: &Graph, batch_mean: Var, instances: usize) -> Var {
        match self.cnf_reduction {
            Reduction::Mean => batch_mean,
            Reduction::Sum => g.scale(batch_mean, instances as f64),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.weights.validate().map_err(NnError::Config)
    }
}

/// Unweighted loss terms of one batch; absent terms count as 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub base: Option<Var>,
    pub cnf: Option<Var>,
    pub bound: Option<Var>,
    pub sum: Option<Var>,
    pub hint: Option<Var>,
}

/// A task as seen by the training loop.
pub trait Objective {
    fn train_len(&self) -> usize;

    /// Builds the loss terms for the training instances `batch` on `g`.
    fn batch_loss(
        &self,
        g: &Graph,
        net: &Mlp,
        params: &Params,
        batch: &[usize],
        cfg: &TrainConfig,
    ) -> Result<LossParts, TensorError>;

    /// Test-set accuracy in `[0, 1]`.
    fn evaluate(&self, net: &Mlp) -> Result<f64, TensorError>;
}

/// One line of the metrics file: batch-averaged loss terms and test accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_base: f64,
    pub loss_cnf: f64,
    pub loss_bound: f64,
    pub loss_sum: f64,
    pub loss_hint: f64,
    pub acc_test: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.6}",
            self.epoch,
            self.loss_total,
            self.loss_base,
            self.loss_cnf,
            self.loss_bound,
            self.loss_sum,
            self.loss_hint,
            self.acc_test
        )
    }
}

/// One pass over the training set in the order given by `rng`.
pub fn train_epoch(
    net: &mut Mlp,
    opt: &mut Optimizer,
    objective: &dyn Objective,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<MetricsRow, NnError> {
    let mut order: Vec<usize> = (0..objective.train_len()).collect();
    order.shuffle(rng);
    let w = cfg.weights;
    let mut sums = [0.0f64; 6];
    let mut batches = 0usize;
    for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
        let g = Graph::new();
        let params = net.attach(&g);
        let parts = objective.batch_loss(&g, net, &params, batch, cfg)?;
        let weighted = [
            ("base loss", parts.base, 1.0),
            ("L_cnf", parts.cnf, w.alpha),
            ("L_bound", parts.bound, w.beta),
            ("L_sum", parts.sum, w.gamma),
            ("L_hint", parts.hint, w.delta),
        ];
        let mut total: Option<Var> = None;
        for (k, (term, var, weight)) in weighted.iter().enumerate() {
            let Some(var) = *var else { continue };
            let value = g.item(var);
            if !value.is_finite() {
                return Err(NnError::NonFinite { term, epoch, batch: bi, value });
            }
            sums[k + 1] += value;
            if *weight == 0.0 {
                continue;
            }
            let scaled = g.scale(var, *weight);
            total = Some(match total {
                Some(t) => g.add(t, scaled)?,
                None => scaled,
            });
        }
        batches += 1;
        let Some(total) = total else { continue };
        sums[0] += g.item(total);
        if !g.requires_grad(total) {
            continue;
        }
        let grads = params.grads(&g.backward(total)?);
        if let Some(value) = grads.iter().flatten().copied().find(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { term: "gradient", epoch, batch: bi, value });
        }
        opt.step(net.params_mut(), &grads);
    }
    let n = batches.max(1) as f64;
    Ok(MetricsRow {
        epoch,
        loss_total: sums[0] / n,
        loss_base: sums[1] / n,
        loss_cnf: sums[2] / n,
        loss_bound: sums[3] / n,
        loss_sum: sums[4] / n,
        loss_hint: sums[5] / n,
        acc_test: objective.evaluate(net)?,
    })
}

/// Trains for `cfg.epochs` epochs, streaming rows to `metrics` (header first)
/// when given. Batch order is drawn from a generator seeded by `cfg.seed`.
pub fn fit(
    net: &mut Mlp,
    opt: &mut Optimizer,
    objective: &dyn Objective,
    cfg: &TrainConfig,
    mut metrics: Option<&mut dyn Write>,
) -> Result<Vec<MetricsRow>, NnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0ba7c4);
    if let Some(out) = metrics.as_deref_mut() {
        writeln!(out, "{METRICS_HEADER}")?;
    }
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let row = train_epoch(net, opt, objective, cfg, &mut rng, epoch)?;
        if let Some(out) = metrics.as_deref_mut() {
            writeln!(out, "{}", row.to_csv())?;
            out.flush()?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// The metrics file contents for `rows`.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Head;
    use crate::tensor::Tensor;

    /// Two separable points, labeled.
    struct Toy;

    impl Objective for Toy {
        fn train_len(&self) -> usize {
            4
        }

        fn batch_loss(&self, g: &Graph, net: &Mlp, params: &Params, batch: &[usize], _: &TrainConfig) -> Result<LossParts, TensorError> {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }, 0.5]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| i % 2).collect();
            let x = g.constant(Tensor::from_rows(&rows)?);
            let (_, raw) = net.forward(g, params, x)?;
            Ok(LossParts { base: Some(g.cross_entropy_labels(raw, &labels)?), ..Default::default() })
        }

        fn evaluate(&self, net: &Mlp) -> Result<f64, TensorError> {
            let pred = net.classify(&Tensor::from_rows(&[vec![1.0, 0.5], vec![-1.0, 0.5]])?)?;
            Ok(f64::from(u8::from(pred == [0, 1])))
        }
    }

    #[test]
    fn supervised_toy_learns_and_is_deterministic() {
        let cfg = TrainConfig { epochs: 30, batch_size: 2, lr: 0.05, ..Default::default() };
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let mut net = Mlp::new(&[2, 4, 2], Head::Softmax, 1).unwrap();
            let mut opt = Optimizer::adam(cfg.lr);
            let mut buf = Vec::new();
            let rows = fit(&mut net, &mut opt, &Toy, &cfg, Some(&mut buf)).unwrap();
            assert_eq!(rows.last().unwrap().acc_test, 1.0);
            assert_eq!(rows[0].loss_cnf, 0.0);
            outputs.push(String::from_utf8(buf).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0].lines().count(), 31);
        assert!(outputs[0].starts_with(METRICS_HEADER));
    }

    #[test]
    fn rejects_bad_config() {
        let mut net = Mlp::new(&[2, 2], Head::Softmax, 1).unwrap();
        let cfg = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(fit(&mut net, &mut Optimizer::adam(1e-3), &Toy, &cfg, None).is_err());
    }
}
