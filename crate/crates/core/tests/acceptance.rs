//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line to
//! stderr (uncaptured) before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clste::closs::{bound_loss, sum_loss, CnfTerms};
use clste::cnf::{parse_dimacs, ClauseMatrix, FactVector};
use clste::nn::{fit, metrics_csv, Mlp, Objective, Optimizer, TrainConfig};
use clste::tasks::objectives::default_config;
use clste::tasks::runner::{build, Built, DataOptions};
use clste::tasks::task_by_name;
use clste::tensor::{Binarizer, Graph, Tensor, TensorError, Var};
use clste::verify::{golden_suite, prop1_suite, prop2_suite, prop34_suite, standard_loss, term_gradients};

fn line(criterion: u32, title: &str, pass: bool, detail: &str, elapsed: Duration, limit: Duration) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {criterion:>2} {status} {title}: {detail} [{:.1}s, limit {}s]",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn c01_golden_example() {
    let t0 = Instant::now();
    let theory = parse_dimacs("p cnf 3 2\n-1 -2 3 0\n-1 2 0\n").unwrap();
    let c = ClauseMatrix::from_theory(&theory);
    let f = FactVector::from_atoms(3, &[0]).unwrap();
    let (grads, values) = term_gradients(&standard_loss, &c, &f, &[0.3, 0.1, 0.9], Binarizer::Prob).unwrap();
    let expected = [vec![0.0, -1.0, 0.0], vec![0.0, -0.5, 0.0], vec![0.0, 0.5, -0.5], vec![0.0, -1.0, -0.5]];
    let grads_ok = grads.iter().zip(&expected).all(|(g, e)| close(g, e, 1e-12));
    let values_ok = close(&values, &[1.0, 0.5, 0.0, 1.5], 1e-12);
    let suite = golden_suite(1e-12);
    let elapsed = t0.elapsed();
    let pass = grads_ok && values_ok && suite.passed() && elapsed < secs(1);
    line(1, "golden example", pass, &format!("gradients {grads:?}, values {values:?}"), elapsed, secs(1));
    assert!(pass, "{suite}");
}

#[test]
fn c02_value_suite() {
    let t0 = Instant::now();
    let r = prop2_suite(2, 200, 10, 20);
    let elapsed = t0.elapsed();
    let pass = r.passed() && r.trials == 200 && elapsed < secs(10);
    line(2, "value properties", pass, &r.to_string(), elapsed, secs(10));
    assert!(pass, "{r}");
}

#[test]
fn c03_gradient_suite() {
    let t0 = Instant::now();
    let prob = prop34_suite(3, 1000, 12, 30, Binarizer::Prob, 1e-9, &standard_loss);
    let sign = prop34_suite(4, 1000, 12, 30, Binarizer::Sign, 1e-9, &standard_loss);
    let elapsed = t0.elapsed();
    let pass = prob.passed() && sign.passed() && prob.trials == 1000 && sign.trials == 1000 && elapsed < secs(60);
    line(3, "gradient oracles", pass, &format!("{prob}; {sign}"), elapsed, secs(60));
    assert!(pass, "{prob}\n{sign}");
}

/// The suite must notice a loss whose `L_sat` has the wrong sign.
#[test]
fn gradient_suite_catches_sign_flip() {
    let flipped = |g: &Graph, c: &ClauseMatrix, v: Var, f: &FactVector| -> Result<CnfTerms, TensorError> {
        let t = standard_loss(g, c, v, f)?;
        let l_sat = g.scale(t.l_sat, -1.0);
        let l_cnf = g.add(g.add(t.l_deduce, t.l_unsat)?, l_sat)?;
        Ok(CnfTerms { l_sat, l_cnf, ..t })
    };
    let r = prop34_suite(3, 200, 12, 30, Binarizer::Prob, 1e-9, &flipped);
    assert!(!r.passed(), "{r}");
}

#[test]
fn c04_gate_suite() {
    let t0 = Instant::now();
    let r = prop1_suite(5, 1000);
    let elapsed = t0.elapsed();
    let pass = r.passed() && r.trials == 3000 && elapsed < secs(5);
    line(4, "trainable gate", pass, &r.to_string(), elapsed, secs(5));
    assert!(pass, "{r}");
}

#[test]
fn c05_theory_shapes() {
    let t0 = Instant::now();
    let expected = [
        ("mnistadd", 19, 119),
        ("mnistadd2", 199, 10199),
        ("add2x2", 76, 476),
        ("apply2x2", 10597, 10606),
        ("member3", 40, 50),
        ("sudoku9", 8991, 729),
        ("shortest-path", 120, 40),
        ("exactly-one10", 46, 10),
    ];
    let mut wrong = Vec::new();
    for (name, m, n) in expected {
        let t = task_by_name(name).unwrap();
        if (t.m(), t.n()) != (m, n) {
            wrong.push(format!("{name} is {}x{}, expected {m}x{n}", t.m(), t.n()));
        }
    }
    let pass = wrong.is_empty();
    let detail = if pass { "all 8 shapes exact".to_string() } else { wrong.join("; ") };
    line(5, "theory shapes", pass, &detail, t0.elapsed(), secs(10));
    assert!(pass, "{detail}");
}

fn train(built: &Built, cfg: &TrainConfig, hidden: &[usize]) -> (Mlp, Vec<clste::nn::MetricsRow>) {
    let obj = built.objective();
    let mut net = obj.new_net(hidden, cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let rows = fit(&mut net, &mut opt, obj, cfg, None).unwrap();
    (net, rows)
}

#[test]
fn c06_mnist_add() {
    let t0 = Instant::now();
    let opts = DataOptions { seed: 1, train_size: Some(5000), noise: Some(0.2), ..Default::default() };
    let built = build("mnistadd", &opts).unwrap();
    let mut cfg = default_config("mnistadd");
    assert_eq!((cfg.weights.alpha, cfg.weights.beta, cfg.binarizer), (1.0, 0.1, Binarizer::Prob));
    cfg.seed = 1;
    cfg.epochs = 5;
    cfg.batch_size = 16;
    let (_, rows) = train(&built, &cfg, &built.default_hidden());
    let elapsed = t0.elapsed();
    let best = rows.iter().map(|r| r.acc_test).fold(0.0, f64::max);
    let first = rows.iter().find(|r| r.acc_test >= 0.95).map(|r| r.epoch);
    let pass = first.is_some() && elapsed < secs(120);
    let accs: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.acc_test)).collect();
    line(6, "mnistAdd digits", pass, &format!("digit accuracy per epoch [{}], best {best:.4}", accs.join(", ")), elapsed, secs(120));
    assert!(pass);
}

#[test]
fn c07_sudoku4_unsupervised() {
    let t0 = Instant::now();
    let opts = DataOptions { seed: 1, train_size: Some(2000), test_size: Some(200), ..Default::default() };
    let built = build("sudoku4-box", &opts).unwrap();
    let Built::Sudoku(obj) = &built else { unreachable!() };
    assert!(!obj.supervised);
    assert!(obj.train.iter().chain(&obj.test).all(|p| clste::tasks::data::solve_by_singles(&p.q, 4).is_some()));
    let mut cfg = default_config("sudoku4-box");
    assert_eq!((cfg.weights.alpha, cfg.weights.beta, cfg.weights.gamma, cfg.weights.delta), (1.0, 0.1, 0.0, 0.0));
    cfg.seed = 1;
    let (net, _) = train(&built, &cfg, &built.default_hidden());
    let mut verified = 0;
    for inst in &obj.test {
        let board = obj.solve(&net, &inst.q, true).unwrap();
        verified += usize::from(obj.verify(&inst.q, &board));
    }
    let (acc_wo, acc_w) = obj.board_accuracy(&net).unwrap();
    let elapsed = t0.elapsed();
    let acc = verified as f64 / obj.test.len() as f64;
    let pass = acc >= 0.9 && (acc - acc_w).abs() < 1e-12 && elapsed < secs(600);
    line(
        7,
        "unsupervised 4x4 Sudoku",
        pass,
        &format!("{verified}/{} boards verified with the trick (acc_w {acc_w:.3}, acc_wo {acc_wo:.3})", obj.test.len()),
        elapsed,
        secs(600),
    );
    assert!(pass);
}

#[test]
fn c08_semi_supervised_exactly_one() {
    let t0 = Instant::now();
    let mut passed = 0;
    let mut details = Vec::new();
    for seed in 0..3u64 {
        let opts = DataOptions { seed, labeled: 100, train_size: Some(5000), ..Default::default() };
        let built = build("exactly-one10", &opts).unwrap();
        let Built::Semi(obj) = &built else { unreachable!() };
        assert_eq!((obj.labeled.len(), obj.unlabeled.len()), (100, 5000));
        let mut semi = default_config("exactly-one10");
        assert_eq!(semi.binarizer, Binarizer::Sign);
        semi.seed = seed;
        let mut base = semi.clone();
        base.weights.alpha = 0.0;
        base.weights.beta = 0.0;
        let hidden = built.default_hidden();
        let (base_net, _) = train(&built, &base, &hidden);
        let (semi_net, _) = train(&built, &semi, &hidden);
        let base_acc = obj.evaluate(&base_net).unwrap();
        let semi_acc = obj.evaluate(&semi_net).unwrap();
        let violations = obj.violation_rate(&semi_net).unwrap();
        let ok = semi_acc - base_acc >= 0.03 && violations < 0.05;
        passed += usize::from(ok);
        details.push(format!(
            "seed {seed}: {base_acc:.4} -> {semi_acc:.4} ({:+.2}pp), violations {:.2}% {}",
            100.0 * (semi_acc - base_acc),
            100.0 * violations,
            if ok { "ok" } else { "miss" }
        ));
    }
    let elapsed = t0.elapsed();
    let pass = passed >= 2 && elapsed < secs(180);
    line(8, "semi-supervised exactly-one", pass, &format!("{passed}/3 seeds pass; {}", details.join("; ")), elapsed, secs(180));
    assert!(pass, "{details:?}");
}

#[test]
fn c09_determinism() {
    let t0 = Instant::now();
    let mut mismatched = Vec::new();
    for task in ["mnistadd", "mnistadd-b", "add2x2", "member3", "apply2x2", "sudoku4-box", "shortest-path", "exactly-one10"] {
        let opts = DataOptions { seed: 7, train_size: Some(60), test_size: Some(30), ..Default::default() };
        let mut cfg = default_config(task);
        cfg.seed = 7;
        cfg.epochs = 2;
        let run = || {
            let built = build(task, &opts).unwrap();
            let (net, rows) = train(&built, &cfg, &[16]);
            (metrics_csv(&rows), net)
        };
        let (a, net_a) = run();
        let (b, net_b) = run();
        if a.as_bytes() != b.as_bytes() || net_a != net_b || a.lines().count() != 3 {
            mismatched.push(task);
        }
    }
    let pass = mismatched.is_empty();
    let detail = if pass { "8 tasks, byte-identical metrics and weights".to_string() } else { format!("differ: {mismatched:?}") };
    line(9, "determinism", pass, &detail, t0.elapsed(), secs(120));
    assert!(pass);
}

type Build = dyn Fn(&Graph, &[Var]) -> Result<Var, TensorError>;

/// Largest violation of `|analytic - central| <= 1e-6 * max(|analytic|, |central|) + 1e-9`
/// for the scalar `sum(op(inputs) * w)` with fixed random weights `w`.
fn fd_check(op: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> f64 {
    const H: f64 = 1e-5;
    let probe = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.leaf(t.clone())).collect();
    let out = op(&probe, &vars).unwrap();
    let shape = probe.shape(out);
    let numel: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

    let scalar = |g: &Graph, vars: &[Var]| -> Var {
        let out = op(g, vars).unwrap();
        g.sum_all(g.mul(out, g.constant(w.clone())).unwrap()).unwrap()
    };
    let loss = scalar(&probe, &vars);
    let grads = probe.backward(loss).unwrap();

    let eval = |inputs: &[Tensor]| -> f64 {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let l = scalar(&g, &vars);
        g.item(l)
    };
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[j];
            let excess = (a - numeric).abs() - (1e-6 * a.abs().max(numeric.abs()) + 1e-9);
            worst = worst.max(excess);
        }
    }
    worst
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values at least `margin` away from every point in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, shape: Vec<usize>, kinks: &[f64], margin: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.random_range(-2.0..2.0);
            if kinks.iter().all(|k| (v - k).abs() > margin) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn one_hot_rows(rng: &mut ChaCha8Rng, rows: usize, k: usize) -> (Tensor, Vec<usize>) {
    let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
    let mut data = vec![0.0; rows * k];
    for (r, &l) in labels.iter().enumerate() {
        data[r * k + l] = 1.0;
    }
    (Tensor::matrix(rows, k, data).unwrap(), labels)
}

#[test]
fn c10_finite_differences() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    type Case = Box<dyn Fn(&mut ChaCha8Rng) -> (Box<Build>, Vec<Tensor>)>;
    let dims = |rng: &mut ChaCha8Rng| (rng.random_range(1..5usize), rng.random_range(1..6usize));
    let cases: Vec<(&str, Case)> = vec![
        ("add", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.add(v[0], v[1])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0), rand_tensor(rng, vec![c], -2.0, 2.0)])
        })),
        ("sub", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.sub(v[1], v[0])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0), rand_tensor(rng, vec![c], -2.0, 2.0)])
        })),
        ("mul", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.mul(v[0], v[1])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0), rand_tensor(rng, vec![c], -2.0, 2.0)])
        })),
        ("mul same shape", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.mul(v[0], v[1])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0), rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("matmul", Box::new(move |rng| {
            let (r, c) = dims(rng);
            let k = rng.random_range(1..5);
            (Box::new(|g: &Graph, v: &[Var]| g.matmul(v[0], v[1])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0), rand_tensor(rng, vec![c, k], -2.0, 2.0)])
        })),
        ("clip", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| Ok(g.clip(v[0], -1.0, 1.0))), vec![away_from(rng, vec![r, c], &[-1.0, 1.0], 1e-3)])
        })),
        ("relu", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| Ok(g.relu(v[0]))), vec![away_from(rng, vec![r, c], &[0.0], 1e-3)])
        })),
        ("sigmoid", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| Ok(g.sigmoid(v[0]))), vec![rand_tensor(rng, vec![r, c], -4.0, 4.0)])
        })),
        ("square", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| Ok(g.square(v[0]))), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("affine", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| Ok(g.one_minus(g.affine(g.scale(v[0], 1.5), -0.5, 0.25)))), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("softmax", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.softmax(v[0])), vec![rand_tensor(rng, vec![r, c], -3.0, 3.0)])
        })),
        ("cross_entropy", Box::new(move |rng| {
            let (r, c) = dims(rng);
            let (onehot, _) = one_hot_rows(rng, r, c);
            (Box::new(move |g: &Graph, v: &[Var]| g.cross_entropy(v[0], &onehot)), vec![rand_tensor(rng, vec![r, c], -3.0, 3.0)])
        })),
        ("cross_entropy_labels", Box::new(move |rng| {
            let (r, c) = dims(rng);
            let (_, labels) = one_hot_rows(rng, r, c);
            (Box::new(move |g: &Graph, v: &[Var]| g.cross_entropy_labels(v[0], &labels)), vec![rand_tensor(rng, vec![r, c], -3.0, 3.0)])
        })),
        ("binary_cross_entropy", Box::new(move |rng| {
            let (r, c) = dims(rng);
            let targets = Tensor::matrix(r, c, (0..r * c).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect()).unwrap();
            (Box::new(move |g: &Graph, v: &[Var]| g.binary_cross_entropy(v[0], &targets)), vec![rand_tensor(rng, vec![r, c], 0.05, 0.95)])
        })),
        ("sum_last", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.sum_last(v[0])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("prod_last", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.prod_last(v[0])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("avg_last", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.avg_last(v[0])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("mean_all", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| g.mean_all(v[0])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("reshape", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(move |g: &Graph, v: &[Var]| g.reshape(v[0], vec![c, r])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("gather", Box::new(move |rng| {
            let (r, c) = dims(rng);
            let index: Vec<usize> = (0..6).map(|_| rng.random_range(0..r * c)).collect();
            (Box::new(move |g: &Graph, v: &[Var]| g.gather(v[0], index.clone(), vec![2, 3])), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("select_rows", Box::new(move |rng| {
            let (r, c) = dims(rng);
            let rows: Vec<usize> = (0..3).map(|_| rng.random_range(0..r)).collect();
            (Box::new(move |g: &Graph, v: &[Var]| g.select_rows(v[0], &rows)), vec![rand_tensor(rng, vec![r, c], -2.0, 2.0)])
        })),
        ("product_gather", Box::new(move |rng| {
            let (r, c) = dims(rng);
            let slots: Vec<Vec<(usize, usize)>> = (0..7)
                .map(|_| (0..rng.random_range(0..3)).map(|_| (rng.random_range(0..2), rng.random_range(0..c))).collect())
                .collect();
            (
                Box::new(move |g: &Graph, v: &[Var]| g.product_gather(v, slots.clone())),
                vec![rand_tensor(rng, vec![r, c], -2.0, 2.0), rand_tensor(rng, vec![r, c], -2.0, 2.0)],
            )
        })),
        ("concat_pad", Box::new(move |rng| {
            let c1 = rng.random_range(1..5);
            let c2 = rng.random_range(1..5);
            (
                Box::new(|g: &Graph, v: &[Var]| g.concat_pad(v, 2, 3)),
                vec![rand_tensor(rng, vec![c1], -2.0, 2.0), rand_tensor(rng, vec![c2], -2.0, 2.0)],
            )
        })),
        ("L_bound", Box::new(move |rng| {
            let (r, c) = dims(rng);
            (Box::new(|g: &Graph, v: &[Var]| bound_loss(g, v[0])), vec![rand_tensor(rng, vec![r, c], -3.0, 3.0)])
        })),
        ("L_sum", Box::new(move |rng| {
            let r = rng.random_range(1..4);
            let families = vec![vec![vec![0, 1], vec![2, 3]], vec![vec![0, 2, 4]]];
            (Box::new(move |g: &Graph, v: &[Var]| sum_loss(g, v[0], &families)), vec![rand_tensor(rng, vec![r, 5], 0.0, 1.0)])
        })),
    ];
    let mut failures = Vec::new();
    for (name, case) in &cases {
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let (op, inputs) = case(&mut rng);
            worst = worst.max(fd_check(op.as_ref(), &inputs, &mut rng));
        }
        if worst > 0.0 {
            failures.push(format!("{name} exceeds tolerance by {worst:.2e}"));
        }
    }
    let elapsed = t0.elapsed();
    let pass = failures.is_empty();
    let detail = if pass { format!("{} ops x 200 cases within 1e-6 relative", cases.len()) } else { failures.join("; ") };
    line(10, "finite differences", pass, &detail, elapsed, secs(60));
    assert!(pass, "{detail}");
}
