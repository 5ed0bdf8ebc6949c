use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::data::{gen_shortest_paths, gen_sudoku4, gen_synthetic, gen_synthetic_digits, load_idx, load_path_csv, LabeledData, Tier};
use super::objectives::{
    add2x2_instances, apply2x2_instances, default_config, member_instances, mnist_add_instances, ApplyObjective,
    ExactlyOneObjective, ShortestPathObjective, SudokuObjective, TaskObjective, WeakDigitObjective,
};
use super::{task_by_name, ApplyIndex, TaskError, TaskSpec};
use crate::nn::TrainConfig;

/// Where instances come from and how many.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataOptions {
    pub seed: u64,
    /// Training instances (pairs, grids, puzzles, paths, or unlabeled rows).
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    /// Standard deviation of the synthetic feature noise.
    pub noise: Option<f64>,
    /// Directory holding the four MNIST IDX files; synthetic digits otherwise.
    pub mnist_dir: Option<PathBuf>,
    /// Labeled rows for the semi-supervised task.
    pub labeled: usize,
    pub holes_min: usize,
    pub holes_max: usize,
    /// Shortest-path CSV; generated instances otherwise.
    pub path_csv: Option<PathBuf>,
    /// Ignore Sudoku solutions during training.
    pub unsupervised: bool,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            seed: 0,
            train_size: None,
            test_size: None,
            noise: None,
            mnist_dir: None,
            labeled: 100,
            holes_min: 4,
            holes_max: 10,
            path_csv: None,
            unsupervised: true,
        }
    }
}

pub const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

/// A task with its data, ready to train.
pub enum Built {
    Digits(WeakDigitObjective),
    Apply(ApplyObjective),
    Sudoku(SudokuObjective),
    Path(ShortestPathObjective),
    Semi(ExactlyOneObjective),
}

impl Built {
    pub fn objective(&self) -> &dyn TaskObjective {
        match self {
            Built::Digits(o) => o,
            Built::Apply(o) => o,
            Built::Sudoku(o) => o,
            Built::Path(o) => o,
            Built::Semi(o) => o,
        }
    }

    pub fn spec(&self) -> &TaskSpec {
        match self {
            Built::Digits(o) => &o.spec,
            Built::Apply(o) => &o.spec,
            Built::Sudoku(o) => &o.spec,
            Built::Path(o) => &o.spec,
            Built::Semi(o) => &o.spec,
        }
    }

    /// Hidden layer sizes used when none are given.
    pub fn default_hidden(&self) -> Vec<usize> {
        match self {
            Built::Digits(o) if o.images.dim > 100 => vec![128],
            Built::Digits(_) | Built::Apply(_) => vec![64],
            Built::Sudoku(_) => vec![128, 128],
            Built::Path(_) => vec![128, 128],
            Built::Semi(_) => vec![128, 128, 128],
        }
    }
}

/// The canonical name of a task plus its default training settings.
pub fn task_defaults(task: &str) -> Result<(String, TrainConfig), TaskError> {
    let name = task_by_name(task)?.name;
    let cfg = default_config(&name);
    Ok((name, cfg))
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(stream)
}

/// Digit images for training and testing: MNIST when a directory is given,
/// synthetic otherwise.
fn digit_data(opts: &DataOptions, train_rows: usize, test_rows: usize) -> Result<(LabeledData, LabeledData), TaskError> {
    match &opts.mnist_dir {
        Some(dir) => {
            let train = load_idx(&dir.join(MNIST_FILES[0]), &dir.join(MNIST_FILES[1]))?;
            let test = load_idx(&dir.join(MNIST_FILES[2]), &dir.join(MNIST_FILES[3]))?;
            Ok((train.split(train_rows).0, test.split(test_rows).0))
        }
        None => {
            let noise = opts.noise.unwrap_or(0.2);
            Ok((
                gen_synthetic_digits(train_rows, noise, stream_seed(opts.seed, 1))?,
                gen_synthetic_digits(test_rows, noise, stream_seed(opts.seed, 2))?,
            ))
        }
    }
}

/// Builds the theory, data and objective of `task`.
pub fn build(task: &str, opts: &DataOptions) -> Result<Built, TaskError> {
    let spec = task_by_name(task)?;
    let name = spec.name.clone();
    let test = opts.test_size;
    let built = match name.as_str() {
        "mnistadd" | "mnistadd2" | "mnistadd3" | "mnistadd-b" => {
            let digits = match name.as_str() {
                "mnistadd2" => 2,
                "mnistadd3" => 3,
                _ => 1,
            };
            if digits == 3 && opts.mnist_dir.is_none() && opts.train_size.is_none() {
                return Err(TaskError::Invalid("mnistadd3 has 10^6 atoms; pass --train-size to train it".into()));
            }
            let pairs = opts.train_size.unwrap_or(5000);
            let (images, test) = digit_data(opts, pairs * 2 * digits, test.unwrap_or(1000))?;
            let instances = mnist_add_instances(&images, digits, name == "mnistadd-b");
            Built::Digits(WeakDigitObjective { spec, images, instances, test, classes: 10 })
        }
        "add2x2" => {
            let (images, test) = digit_data(opts, opts.train_size.unwrap_or(2000) * 4, test.unwrap_or(1000))?;
            let instances = add2x2_instances(&images);
            Built::Digits(WeakDigitObjective { spec, images, instances, test, classes: 10 })
        }
        n if n.starts_with("member") => {
            let k: usize = n["member".len()..].parse().map_err(|_| TaskError::Unknown(n.to_string()))?;
            let (images, test) = digit_data(opts, opts.train_size.unwrap_or(3000) * k, test.unwrap_or(1000))?;
            let instances = member_instances(&images, k, stream_seed(opts.seed, 3));
            Built::Digits(WeakDigitObjective { spec, images, instances, test, classes: 10 })
        }
        "apply2x2" => {
            let noise = opts.noise.unwrap_or(0.2);
            let ops = gen_synthetic(opts.train_size.unwrap_or(2000) * 4, 3, 16, noise, stream_seed(opts.seed, 1))?;
            let test = gen_synthetic(test.unwrap_or(1000), 3, 16, noise, stream_seed(opts.seed, 2))?;
            let instances = apply2x2_instances(&ops, stream_seed(opts.seed, 3));
            Built::Apply(ApplyObjective { spec, index: ApplyIndex::new(), ops, instances, test })
        }
        "sudoku4" | "sudoku4-box" => {
            let holes = opts.holes_min..=opts.holes_max;
            let train = gen_sudoku4(opts.train_size.unwrap_or(2000), holes.clone(), Tier::Easy, stream_seed(opts.seed, 1))?;
            let test = gen_sudoku4(test.unwrap_or(200), holes, Tier::Easy, stream_seed(opts.seed, 2))?;
            let mut o = SudokuObjective::new(spec, 4, train, test)?;
            o.supervised = !opts.unsupervised;
            Built::Sudoku(o)
        }
        "shortest-path" => {
            let (train, test) = match &opts.path_csv {
                Some(path) => {
                    let all = load_path_csv(path)?;
                    let k = opts.train_size.unwrap_or(all.len() * 7 / 8).min(all.len());
                    (all[..k].to_vec(), all[k..].to_vec())
                }
                None => (
                    gen_shortest_paths(opts.train_size.unwrap_or(1400), 0.3, stream_seed(opts.seed, 1))?,
                    gen_shortest_paths(test.unwrap_or(210), 0.3, stream_seed(opts.seed, 2))?,
                ),
            };
            Built::Path(ShortestPathObjective { spec, train, test })
        }
        n if n.starts_with("exactly-one") => {
            let classes = spec.n();
            let noise = opts.noise.unwrap_or(0.25);
            let rows = opts.labeled + opts.train_size.unwrap_or(5000);
            let (all, test) = match &opts.mnist_dir {
                Some(_) if classes == 10 => digit_data(opts, rows, test.unwrap_or(2000))?,
                _ => (
                    gen_synthetic(rows, classes, classes.max(16), noise, stream_seed(opts.seed, 1))?,
                    gen_synthetic(test.unwrap_or(2000), classes, classes.max(16), noise, stream_seed(opts.seed, 2))?,
                ),
            };
            if opts.labeled == 0 {
                return Err(TaskError::Invalid("the semi-supervised task needs at least one labeled row".into()));
            }
            let (labeled, unlabeled) = all.split(opts.labeled);
            Built::Semi(ExactlyOneObjective { spec, labeled, unlabeled, test })
        }
        other => return Err(TaskError::Invalid(format!("task {other} has no training recipe"))),
    };
    Ok(built)
}
