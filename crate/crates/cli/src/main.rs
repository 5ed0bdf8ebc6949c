mod config;

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use clste::closs::LossEngine;
use clste::cnf::{brute_force, deduce_set, parse_dimacs, parse_facts, parse_names, serialize_dimacs, serialize_names, FactVector};
use clste::nn::{fit, Checkpoint, Optimizer, OptimizerKind, Reduction, TrainConfig};
use clste::tasks::data::{format_board, grid_consistent, parse_board};
use clste::tasks::objectives::SudokuObjective;
use clste::tasks::runner::{build, task_defaults, Built, DataOptions};
use clste::tasks::{task_by_name, TASK_NAMES};
use clste::tensor::{Binarizer, SteMode};
use clste::verify::{run_all, VerifyConfig};

use config::{parse_bool, parse_hidden, pick, pick_opt, ConfigFile};

/// Environment variable naming the default data directory.
const DATA_DIR_VAR: &str = "CLSTE_DATA_DIR";

#[derive(Parser)]
#[command(name = "clste", version, about = "Train neural networks against CNF constraints with straight-through estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a task theory as DIMACS plus an atom-name sidecar.
    GenCnf {
        task: String,
        /// Output file; the names go to `<out>.names`. Defaults to `<task>.cnf`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate the models of a DIMACS theory extended by a facts file.
    Check {
        cnf: PathBuf,
        facts: Option<PathBuf>,
        /// Largest atom count to enumerate.
        #[arg(long, default_value_t = clste::cnf::DEFAULT_CAP)]
        cap: usize,
    },
    /// Check loss values and gradients against the closed-form oracles.
    GradVerify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 12)]
        n_max: usize,
        #[arg(long, default_value_t = 30)]
        m_max: usize,
    },
    /// Train a network on a task; writes metrics.csv, checkpoint.json and run.json.
    Train {
        task: String,
        #[command(flatten)]
        run: RunArgs,
        /// Output directory. Defaults to `runs/<task>-seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split of its task.
    Eval {
        /// Defaults to the task stored in the checkpoint.
        task: Option<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Complete Sudoku boards with a trained checkpoint.
    Solve {
        /// Boards as 16 or 81 digits (`0` or `.` empty), or files of one board
        /// per line. Reads stdin when absent.
        boards: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fill the most confident cell first and re-run the network.
        #[arg(long)]
        inference_trick: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FnArg {
    B,
    Bp,
}

#[derive(Clone, Copy, ValueEnum)]
enum SteArg {
    I,
    S,
}

#[derive(Args, Default)]
struct RunArgs {
    /// `key = value` file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Binarizer: `b` thresholds raw outputs at 0, `bp` probabilities at 0.5.
    #[arg(long = "fn", value_enum)]
    binarizer: Option<FnArg>,
    /// Straight-through estimator: identity or saturated.
    #[arg(long, value_enum)]
    ste: Option<SteArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden layer sizes, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    /// Feature noise of synthetic data.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Labeled rows of the semi-supervised task.
    #[arg(long)]
    labeled: Option<usize>,
    #[arg(long)]
    holes_min: Option<usize>,
    #[arg(long)]
    holes_max: Option<usize>,
    /// Use synthetic digits (the default).
    #[arg(long, conflicts_with = "mnist")]
    synthetic: bool,
    /// Directory of MNIST IDX files; without a value, `$CLSTE_DATA_DIR/mnist`.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    mnist: Option<String>,
    /// Shortest-path CSV (64 values per line).
    #[arg(long)]
    path_csv: Option<PathBuf>,
    /// Train Sudoku from the constraints alone (the default).
    #[arg(long, conflicts_with = "supervised")]
    unsupervised: bool,
    /// Add cross-entropy against the Sudoku solutions.
    #[arg(long)]
    supervised: bool,
    /// Report board accuracy with the inference trick only.
    #[arg(long)]
    inference_trick: bool,
    /// Batch reduction of L_cnf: `sum` or `mean` over instances.
    #[arg(long)]
    reduction: Option<String>,
    /// `dense`, `sparse` or `auto`.
    #[arg(long)]
    engine: Option<String>,
    /// `adam` or `sgd`.
    #[arg(long)]
    optimizer: Option<String>,
}

/// Effective settings of a run, written as `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunRecord {
    task: String,
    hidden: Vec<usize>,
    train: TrainConfig,
    data: DataOptions,
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_VAR).map(PathBuf::from)
}

/// Relative data paths resolve against the data directory when set.
fn data_path(p: &str) -> Result<PathBuf> {
    if p.is_empty() {
        return match data_dir() {
            Some(d) => Ok(d.join("mnist")),
            None => bail!("--mnist without a directory needs ${DATA_DIR_VAR}"),
        };
    }
    let path = PathBuf::from(p);
    match data_dir() {
        Some(d) if path.is_relative() && !path.exists() => Ok(d.join(path)),
        _ => Ok(path),
    }
}

fn parse_fn(s: &str) -> Result<Binarizer> {
    match s {
        "b" => Ok(Binarizer::Sign),
        "bp" => Ok(Binarizer::Prob),
        o => bail!("fn must be b or bp, got '{o}'"),
    }
}

fn parse_ste(s: &str) -> Result<SteMode> {
    match s {
        "i" => Ok(SteMode::Identity),
        "s" => Ok(SteMode::Saturated),
        o => bail!("ste must be i or s, got '{o}'"),
    }
}

fn parse_reduction(s: &str) -> Result<Reduction> {
    match s {
        "sum" => Ok(Reduction::Sum),
        "mean" => Ok(Reduction::Mean),
        o => bail!("reduction must be sum or mean, got '{o}'"),
    }
}

fn parse_engine(s: &str) -> Result<LossEngine> {
    match s {
        "dense" => Ok(LossEngine::Dense),
        "sparse" => Ok(LossEngine::Sparse),
        "auto" => Ok(LossEngine::Auto),
        o => bail!("engine must be dense, sparse or auto, got '{o}'"),
    }
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind> {
    match s {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" => Ok(OptimizerKind::Sgd),
        o => bail!("optimizer must be adam or sgd, got '{o}'"),
    }
}

/// Merges flags over the config file over `base` (task defaults or a stored run).
/// The flag is false when no layer sizes were given anywhere.
fn resolve(task: &str, args: &RunArgs, base: Option<RunRecord>) -> Result<(RunRecord, bool)> {
    let has_base = base.is_some();
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let (name, defaults) = task_defaults(task)?;
    let base = base.unwrap_or(RunRecord { task: name.clone(), hidden: Vec::new(), train: defaults, data: DataOptions::default() });
    let mut train = base.train.clone();
    let mut data = base.data.clone();

    let text = |flag: Option<String>, key: &str| flag.or_else(|| file.get_str(key).map(str::to_string));
    let fn_flag = args.binarizer.map(|b| match b {
        FnArg::B => "b".to_string(),
        FnArg::Bp => "bp".to_string(),
    });
    if let Some(s) = text(fn_flag, "fn") {
        train.binarizer = parse_fn(&s)?;
    }
    let ste_flag = args.ste.map(|s| match s {
        SteArg::I => "i".to_string(),
        SteArg::S => "s".to_string(),
    });
    if let Some(s) = text(ste_flag, "ste") {
        train.ste = parse_ste(&s)?;
    }
    if let Some(s) = text(args.reduction.clone(), "reduction") {
        train.cnf_reduction = parse_reduction(&s)?;
    }
    if let Some(s) = text(args.engine.clone(), "engine") {
        train.engine = parse_engine(&s)?;
    }
    if let Some(s) = text(args.optimizer.clone(), "optimizer") {
        train.optimizer = parse_optimizer(&s)?;
    }
    train.weights.alpha = pick(args.alpha, &file, "alpha", train.weights.alpha)?;
    train.weights.beta = pick(args.beta, &file, "beta", train.weights.beta)?;
    train.weights.gamma = pick(args.gamma, &file, "gamma", train.weights.gamma)?;
    train.weights.delta = pick(args.delta, &file, "delta", train.weights.delta)?;
    train.batch_size = pick(args.batch, &file, "batch", train.batch_size)?;
    train.lr = pick(args.lr, &file, "lr", train.lr)?;
    train.epochs = pick(args.epochs, &file, "epochs", train.epochs)?;
    train.seed = pick(args.seed, &file, "seed", train.seed)?;
    data.seed = train.seed;

    data.noise = pick_opt(args.noise, &file, "noise")?.or(data.noise);
    data.train_size = pick_opt(args.train_size, &file, "train-size")?.or(data.train_size);
    data.test_size = pick_opt(args.test_size, &file, "test-size")?.or(data.test_size);
    data.labeled = pick(args.labeled, &file, "labeled", data.labeled)?;
    data.holes_min = pick(args.holes_min, &file, "holes-min", data.holes_min)?;
    data.holes_max = pick(args.holes_max, &file, "holes-max", data.holes_max)?;
    if args.synthetic {
        data.mnist_dir = None;
    } else if let Some(s) = text(args.mnist.clone(), "mnist") {
        data.mnist_dir = Some(data_path(&s)?);
    }
    if let Some(s) = text(args.path_csv.as_ref().map(|p| p.display().to_string()), "path-csv") {
        data.path_csv = Some(data_path(&s)?);
    }
    if args.supervised {
        data.unsupervised = false;
    } else if args.unsupervised {
        data.unsupervised = true;
    } else if let Some(s) = file.get_str("unsupervised") {
        data.unsupervised = parse_bool(s)?;
    }
    if data.holes_min > data.holes_max {
        bail!("holes-min {} exceeds holes-max {}", data.holes_min, data.holes_max);
    }

    let (hidden, given) = match text(args.hidden.clone(), "hidden") {
        Some(s) => (parse_hidden(&s)?, true),
        None => (base.hidden, has_base),
    };
    Ok((RunRecord { task: name, hidden, train, data }, given))
}

/// Copies everything written to the file onto stderr as progress.
struct Tee<W: Write>(W);

impl<W: Write> Write for Tee<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.0.write(buf)?;
        io::stderr().write_all(&buf[..n])?;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()
    }
}

fn cmd_gen_cnf(task: &str, out: Option<PathBuf>) -> Result<()> {
    let spec = task_by_name(task).map_err(|e| anyhow::anyhow!("{e} (known: {})", TASK_NAMES.join(", ")))?;
    let out = out.unwrap_or_else(|| PathBuf::from(format!("{}.cnf", spec.name)));
    let names = PathBuf::from(format!("{}.names", out.display()));
    fs::write(&out, serialize_dimacs(&spec.theory)).with_context(|| format!("writing {}", out.display()))?;
    fs::write(&names, serialize_names(&spec.theory)).with_context(|| format!("writing {}", names.display()))?;
    println!("m={} n={}", spec.m(), spec.n());
    eprintln!("wrote {} and {}", out.display(), names.display());
    Ok(())
}

fn cmd_check(cnf: &Path, facts: Option<&Path>, cap: usize) -> Result<()> {
    let text = fs::read_to_string(cnf).with_context(|| format!("reading {}", cnf.display()))?;
    let mut theory = parse_dimacs(&text).with_context(|| format!("parsing {}", cnf.display()))?;
    let names_path = PathBuf::from(format!("{}.names", cnf.display()));
    if names_path.exists() {
        let names = parse_names(&fs::read_to_string(&names_path)?, theory.n())
            .with_context(|| format!("parsing {}", names_path.display()))?;
        theory.rename(names)?;
    }
    let f = match facts {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_facts(&text, theory.n()).with_context(|| format!("parsing {}", p.display()))?
        }
        None => FactVector::zeros(theory.n()),
    };
    let report = brute_force(&theory, &f, cap).map_err(|e| {
        anyhow::anyhow!("{e}; enumeration visits 2^n assignments, raise --cap to allow it")
    })?;
    if !report.satisfiable {
        println!("UNSAT");
        eprintln!(
            "warning: the theory with these facts has no model, so the gradient-sign guarantees of the loss do not apply"
        );
        return Ok(());
    }
    let label = |l: clste::cnf::Lit| {
        let sign = if l.positive { "" } else { "-" };
        let name = theory.atom_name(l.atom);
        if name == (l.atom + 1).to_string() {
            format!("{sign}{}", l.atom + 1)
        } else {
            format!("{sign}{} ({sign}{name})", l.atom + 1)
        }
    };
    let entailed: Vec<String> =
        report.entailed_literals.iter().filter(|l| !(l.positive && f.contains(l.atom))).map(|&l| label(l)).collect();
    let deduce: Vec<String> = deduce_set(&theory, &f).iter().map(|i| (i + 1).to_string()).collect();
    println!("SAT");
    println!("models: {}", report.model_count);
    println!("entails: {}", if entailed.is_empty() { "none".to_string() } else { entailed.join(", ") });
    println!(
        "deduce-set: {}",
        match deduce.len() {
            0 => "none".to_string(),
            1 => format!("clause {}", deduce[0]),
            _ => format!("clauses {}", deduce.join(", ")),
        }
    );
    Ok(())
}

fn cmd_grad_verify(cfg: VerifyConfig) -> Result<bool> {
    let reports = run_all(cfg);
    for r in &reports {
        println!("{r}");
    }
    Ok(reports.iter().all(|r| r.passed()))
}

/// Prints the task-specific test metrics of `net`.
fn report(built: &Built, net: &clste::nn::Mlp, trick_only: bool) -> Result<()> {
    let obj = built.objective();
    match built {
        Built::Sudoku(s) => {
            let (wo, w) = s.board_accuracy(net)?;
            if trick_only {
                println!("acc_w={w:.4}");
            } else {
                println!("acc_wo={wo:.4} acc_w={w:.4}");
            }
        }
        Built::Semi(s) => {
            println!("acc_test={:.4} violations={:.4}", obj.evaluate(net)?, s.violation_rate(net)?);
        }
        _ => println!("acc_test={:.4}", obj.evaluate(net)?),
    }
    Ok(())
}

fn cmd_train(task: &str, args: &RunArgs, out: Option<PathBuf>) -> Result<()> {
    let (mut run, hidden_given) = resolve(task, args, None)?;
    let built = build(&run.task, &run.data)?;
    if !hidden_given {
        run.hidden = built.default_hidden();
    }
    let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", run.task, run.train.seed)));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&run)?)?;

    let obj = built.objective();
    let mut net = obj.new_net(&run.hidden, run.train.seed);
    let mut opt = Optimizer::new(run.train.optimizer, run.train.lr);
    let metrics = out.join("metrics.csv");
    let file = fs::File::create(&metrics).with_context(|| format!("creating {}", metrics.display()))?;
    let mut sink = Tee(io::BufWriter::new(file));
    fit(&mut net, &mut opt, obj, &run.train, Some(&mut sink))?;
    sink.flush()?;
    Checkpoint::new(&run.task, net.clone(), opt).save(&out.join("checkpoint.json"))?;
    report(&built, &net, false)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn cmd_eval(task: Option<&str>, checkpoint: &Path, args: &RunArgs) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let task = task.unwrap_or(&ck.task);
    let stored = checkpoint.parent().map(|d| d.join("run.json")).filter(|p| p.exists());
    let base = match stored {
        Some(p) => {
            let rec: RunRecord = serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?;
            (task_by_name(task)?.name == rec.task).then_some(rec)
        }
        None => None,
    };
    let (run, _) = resolve(task, args, base)?;
    let built = build(&run.task, &run.data)?;
    let obj = built.objective();
    if ck.net.input_dim() != obj.input_dim() || ck.net.output_dim() != obj.output_dim() {
        bail!(
            "checkpoint network is {}→{} but task {} needs {}→{}",
            ck.net.input_dim(),
            ck.net.output_dim(),
            run.task,
            obj.input_dim(),
            obj.output_dim()
        );
    }
    report(&built, &ck.net, args.inference_trick)
}

fn read_boards(inputs: &[String]) -> Result<Vec<String>> {
    let mut boards = Vec::new();
    let mut push_lines = |text: &str| {
        boards.extend(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_string))
    };
    if inputs.is_empty() {
        let mut text = String::new();
        for line in io::stdin().lock().lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        push_lines(&text);
    }
    for s in inputs {
        let path = Path::new(s);
        if path.is_file() {
            push_lines(&fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?);
        } else {
            push_lines(s);
        }
    }
    Ok(boards)
}

fn cmd_solve(inputs: &[String], checkpoint: &Path, trick: bool) -> Result<bool> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let spec = task_by_name(&ck.task)?;
    let side = match spec.n() {
        64 => 4,
        729 => 9,
        _ => bail!("checkpoint task {} is not a Sudoku task", ck.task),
    };
    let solver = SudokuObjective::new(spec, side, Vec::new(), Vec::new())?;
    let mut all_valid = true;
    for text in read_boards(inputs)? {
        let inst = parse_board(&text)?;
        if inst.side != side {
            bail!("board has side {} but the checkpoint solves side {side}", inst.side);
        }
        if !grid_consistent(&inst.q, side) {
            bail!("board {} repeats a value in a row, column or box", format_board(&inst.q));
        }
        let board = solver.solve(&ck.net, &inst.q, trick)?;
        let valid = solver.verify(&inst.q, &board);
        all_valid &= valid;
        println!("{} {}", format_board(&board), if valid { "valid" } else { "invalid" });
    }
    Ok(all_valid)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenCnf { task, out } => cmd_gen_cnf(&task, out)?,
        Command::Check { cnf, facts, cap } => cmd_check(&cnf, facts.as_deref(), cap)?,
        Command::GradVerify { seed, trials, n_max, m_max } => {
            if !cmd_grad_verify(VerifyConfig { seed, trials, n_max, m_max })? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Train { task, run, out } => cmd_train(&task, &run, out)?,
        Command::Eval { task, checkpoint, run } => cmd_eval(task.as_deref(), &checkpoint, &run)?,
        Command::Solve { boards, checkpoint, inference_trick } => {
            if !cmd_solve(&boards, &checkpoint, inference_trick)? {
                eprintln!("some completions violate the theory");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
