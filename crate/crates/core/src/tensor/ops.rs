use super::graph::{Bcast, CustomOp, Node, Op};
use super::ste::{Binarizer, SteMode, TgfConfig};
use super::{Graph, Tensor, TensorError, Var};

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Bcast, Vec<usize>), TensorError> {
    if a == b {
        return Ok((Bcast::Same, a.to_vec()));
    }
    if b.len() == 1 && a.len() >= 2 && a[a.len() - 1] == b[0] {
        return Ok((Bcast::RhsRows, a.to_vec()));
    }
    if a.len() == 1 && b.len() >= 2 && b[b.len() - 1] == a[0] {
        return Ok((Bcast::LhsRows, b.to_vec()));
    }
    Err(TensorError::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() })
}

fn zip_bcast(a: &Tensor, b: &Tensor, mode: Bcast, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match mode {
        Bcast::Same => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        Bcast::RhsRows => {
            let k = b.numel();
            a.data().iter().enumerate().map(|(i, &x)| f(x, b.data()[i % k])).collect()
        }
        Bcast::LhsRows => {
            let k = a.numel();
            b.data().iter().enumerate().map(|(i, &y)| f(a.data()[i % k], y)).collect()
        }
    }
}

fn reduce_rows(full: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (i, &g) in full.iter().enumerate() {
        out[i % k] += g;
    }
    out
}

fn squeeze_last(op: &'static str, shape: &[usize]) -> Result<(Vec<usize>, usize), TensorError> {
    match shape.split_last() {
        Some((&k, rest)) => Ok((rest.to_vec(), k)),
        None => Err(TensorError::Rank { op, expected: ">= 1", shape: vec![] }),
    }
}

impl Graph {
    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes()[x.0].value.map(f);
        self.push(out, op)
    }

    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, make: fn(Var, Var, Bcast) -> Op) -> Result<Var, TensorError> {
        let nodes = self.nodes();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        let (mode, shape) = broadcast(name, ta.shape(), tb.shape())?;
        let data = zip_bcast(ta, tb, mode, f);
        drop(nodes);
        Ok(self.push(Tensor::new(shape, data)?, make(a, b, mode)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise product (`⊙`).
    pub fn mul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    /// `1 - x`.
    pub fn one_minus(&self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn scale(&self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, TensorError> {
        let nodes = self.nodes();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape { op: "matmul", lhs: sa.to_vec(), rhs: sb.to_vec() });
        }
        let (p, q, r) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(ta.data(), tb.data(), p, q, r);
        drop(nodes);
        Ok(self.push(Tensor::new(vec![p, r], out)?, Op::MatMul(a, b)))
    }

    pub fn clip(&self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clip(x, lo, hi))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&self, x: Var) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes();
            let t = &nodes[x.0].value;
            squeeze_last("softmax", t.shape())?;
            let k = t.last_dim();
            let mut out = t.data().to_vec();
            for row in out.chunks_mut(k.max(1)) {
                softmax_in_place(row);
            }
            Tensor::new(t.shape().to_vec(), out)?
        };
        Ok(self.push(value, Op::Softmax(x)))
    }

    /// Mean over rows of `-log softmax(logits)[label]`; `onehot` has the logits' shape.
    pub fn cross_entropy(&self, logits: Var, onehot: &Tensor) -> Result<Var, TensorError> {
        let (loss, labels) = {
            let nodes = self.nodes();
            let t = &nodes[logits.0].value;
            if t.shape() != onehot.shape() || t.rank() != 2 {
                return Err(TensorError::Shape {
                    op: "cross_entropy",
                    lhs: t.shape().to_vec(),
                    rhs: onehot.shape().to_vec(),
                });
            }
            let (rows, k) = (t.shape()[0], t.shape()[1]);
            let mut labels = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = onehot.row(r);
                let ones = row.iter().filter(|&&v| v == 1.0).count();
                let zeros = row.iter().filter(|&&v| v == 0.0).count();
                if ones != 1 || zeros != k - 1 {
                    return Err(TensorError::NotOneHot { row: r });
                }
                labels.push(row.iter().position(|&v| v == 1.0).unwrap());
            }
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                total += logsumexp(t.row(r)) - t.row(r)[label];
            }
            (total / rows.max(1) as f64, labels)
        };
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, labels)))
    }

    /// Cross-entropy with integer class labels, one per row.
    pub fn cross_entropy_labels(&self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::Shape { op: "cross_entropy", lhs: shape, rhs: vec![labels.len()] });
        }
        let k = shape[1];
        let mut onehot = Tensor::zeros(shape.clone());
        for (r, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(TensorError::Index { op: "cross_entropy", index: l, len: k });
            }
            onehot.data_mut()[r * k + l] = 1.0;
        }
        self.cross_entropy(logits, &onehot)
    }

    /// Mean binary cross-entropy between probabilities and 0/1 targets of the same shape.
    pub fn binary_cross_entropy(&self, probs: Var, targets: &Tensor) -> Result<Var, TensorError> {
        let loss = {
            let nodes = self.nodes();
            let p = &nodes[probs.0].value;
            if p.shape() != targets.shape() {
                return Err(TensorError::Shape {
                    op: "binary_cross_entropy",
                    lhs: p.shape().to_vec(),
                    rhs: targets.shape().to_vec(),
                });
            }
            let total: f64 = p
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&p, &t)| {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum();
            total / p.numel().max(1) as f64
        };
        Ok(self.push(Tensor::scalar(loss), Op::Bce(probs, targets.data().to_vec())))
    }

    fn reduce_last(&self, name: &'static str, x: Var, f: impl Fn(&[f64]) -> f64, make: fn(Var) -> Op) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes();
            let t = &nodes[x.0].value;
            let (shape, k) = squeeze_last(name, t.shape())?;
            let rows: usize = shape.iter().product();
            let data = (0..rows).map(|r| f(&t.data()[r * k..(r + 1) * k])).collect();
            Tensor::new(shape, data)?
        };
        Ok(self.push(value, make(x)))
    }

    /// Sum over the last dimension, which is dropped.
    pub fn sum_last(&self, x: Var) -> Result<Var, TensorError> {
        self.reduce_last("sum_last", x, |r| r.iter().sum(), Op::SumLast)
    }

    /// Product over the last dimension, which is dropped. The empty product is 1.
    pub fn prod_last(&self, x: Var) -> Result<Var, TensorError> {
        self.reduce_last("prod_last", x, |r| r.iter().product(), Op::ProdLast)
    }

    /// Mean over the last dimension, which is dropped.
    pub fn avg_last(&self, x: Var) -> Result<Var, TensorError> {
        self.reduce_last("avg_last", x, |r| r.iter().sum::<f64>() / r.len() as f64, Op::AvgLast)
    }

    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Mean of every element, as a 0-dimensional tensor.
    pub fn mean_all(&self, x: Var) -> Result<Var, TensorError> {
        let n = self.nodes()[x.0].value.numel();
        let flat = self.reshape(x, vec![n])?;
        self.avg_last(flat)
    }

    pub fn sum_all(&self, x: Var) -> Result<Var, TensorError> {
        let n = self.nodes()[x.0].value.numel();
        let flat = self.reshape(x, vec![n])?;
        self.sum_last(flat)
    }

    /// `out.flat[t] = x.flat[index[t]]`, reshaped to `shape`.
    pub fn gather(&self, x: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes();
            let src = nodes[x.0].value.data();
            let mut data = Vec::with_capacity(index.len());
            for &i in &index {
                data.push(*src.get(i).ok_or(TensorError::Index { op: "gather", index: i, len: src.len() })?);
            }
            Tensor::new(shape, data)?
        };
        Ok(self.push(value, Op::Gather(x, index)))
    }

    /// Rows `rows` of a rank-2 tensor, in the given order.
    pub fn select_rows(&self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(x);
        if shape.len() != 2 {
            return Err(TensorError::Rank { op: "select_rows", expected: "2", shape });
        }
        let k = shape[1];
        let mut index = Vec::with_capacity(rows.len() * k);
        for &r in rows {
            if r >= shape[0] {
                return Err(TensorError::Index { op: "select_rows", index: r, len: shape[0] });
            }
            index.extend(r * k..(r + 1) * k);
        }
        self.gather(x, index, vec![rows.len(), k])
    }

    /// Row `r` of a rank-2 tensor as a vector.
    pub fn row(&self, x: Var, r: usize) -> Result<Var, TensorError> {
        let k = *self.shape(x).last().unwrap_or(&0);
        let sel = self.select_rows(x, &[r])?;
        self.reshape(sel, vec![k])
    }

    /// Builds `n` output slots per batch row, each the product of the listed
    /// `(input, index)` factors; an empty slot is the constant 0.
    ///
    /// Inputs are all vectors or all `(batch, k_t)` matrices with one batch size.
    /// This covers outer products, concatenation and zero padding.
    pub fn product_gather(&self, inputs: &[Var], slots: Vec<Vec<(usize, usize)>>) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes();
            let tensors: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            let batch = batch_layout("product_gather", &tensors)?;
            for slot in &slots {
                for &(t, idx) in slot {
                    let Some(src) = tensors.get(t) else {
                        return Err(TensorError::Index { op: "product_gather", index: t, len: tensors.len() });
                    };
                    if idx >= src.last_dim() {
                        return Err(TensorError::Index { op: "product_gather", index: idx, len: src.last_dim() });
                    }
                }
            }
            let n = slots.len();
            let rows = batch.unwrap_or(1);
            let mut data = vec![0.0; rows * n];
            for b in 0..rows {
                for (j, slot) in slots.iter().enumerate() {
                    if slot.is_empty() {
                        continue;
                    }
                    data[b * n + j] = slot
                        .iter()
                        .map(|&(t, idx)| tensors[t].data()[b * tensors[t].last_dim() + idx])
                        .product();
                }
            }
            let shape = match batch {
                Some(rows) => vec![rows, n],
                None => vec![n],
            };
            Tensor::new(shape, data)?
        };
        Ok(self.push(value, Op::ProductGather(inputs.to_vec(), slots)))
    }

    /// Concatenates vectors (or same-batch matrices) along the last dimension,
    /// then appends `pad` zeros.
    pub fn concat_pad(&self, inputs: &[Var], pad_front: usize, pad_back: usize) -> Result<Var, TensorError> {
        let mut slots: Vec<Vec<(usize, usize)>> = vec![vec![]; pad_front];
        for (t, v) in inputs.iter().enumerate() {
            let k = *self.shape(*v).last().unwrap_or(&0);
            slots.extend((0..k).map(|i| vec![(t, i)]));
        }
        slots.extend(std::iter::repeat_with(Vec::new).take(pad_back));
        self.product_gather(inputs, slots)
    }

    /// `1` where `x == k` and `0` elsewhere. The result is a constant: no
    /// gradient flows back to `x`.
    pub fn indicator(&self, x: Var, k: f64) -> Var {
        let out = self.nodes()[x.0].value.map(|v| if v == k { 1.0 } else { 0.0 });
        self.constant(out)
    }

    /// Hard threshold forward, straight-through surrogate backward.
    pub fn binarize(&self, x: Var, binarizer: Binarizer, ste: SteMode) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes();
            let t = &nodes[x.0].value;
            if binarizer == Binarizer::Prob {
                if let Some((index, &value)) =
                    t.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
                {
                    return Err(TensorError::ProbabilityRange { index, value });
                }
            }
            t.map(|v| binarizer.apply(v))
        };
        Ok(self.push(value, Op::Binarize(x, ste)))
    }

    /// Trainable gate function `b(x) + s^K(x) g(x)`.
    pub fn tgf(&self, x: Var, cfg: TgfConfig) -> Var {
        self.unary(x, |v| cfg.forward(v), Op::Tgf(x, cfg))
    }

    pub fn custom(&self, inputs: &[Var], op: Box<dyn CustomOp>) -> Result<Var, TensorError> {
        let value = {
            let nodes = self.nodes();
            let tensors: Vec<&Tensor> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            op.forward(&tensors)?
        };
        Ok(self.push(value, Op::Custom(inputs.to_vec(), op)))
    }
}

const BCE_EPS: f64 = 1e-12;

fn batch_layout(op: &'static str, tensors: &[&Tensor]) -> Result<Option<usize>, TensorError> {
    let Some(first) = tensors.first() else { return Ok(None) };
    let rank = first.rank();
    for t in tensors {
        let ok = match rank {
            1 => t.rank() == 1,
            2 => t.rank() == 2 && t.shape()[0] == first.shape()[0],
            _ => false,
        };
        if !ok {
            return Err(TensorError::Shape { op, lhs: first.shape().to_vec(), rhs: t.shape().to_vec() });
        }
    }
    Ok((rank == 2).then(|| first.shape()[0]))
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Gradient contributions of one node to its parents.
pub(crate) fn backward_op(nodes: &[Node], node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let val = |v: &Var| &nodes[v.0].value;
    let out = &node.value;
    match &node.op {
        Op::Leaf | Op::Constant => vec![],
        Op::Add(a, b, mode) => {
            let (ga, gb) = split_bcast(g, *mode, val(a), val(b), |g, _, _| g, |g, _, _| g);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Sub(a, b, mode) => {
            let (ga, gb) = split_bcast(g, *mode, val(a), val(b), |g, _, _| g, |g, _, _| -g);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Mul(a, b, mode) => {
            let (ga, gb) = split_bcast(g, *mode, val(a), val(b), |g, _, y| g * y, |g, x, _| g * x);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Affine(x, s) => vec![(*x, g.iter().map(|v| v * s).collect())],
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (p, q, r) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let ga = matmul_raw(g, &transpose(tb.data(), q, r), p, r, q);
            let gb = matmul_raw(&transpose(ta.data(), p, q), g, q, p, r);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Clip(x, lo, hi) => {
            let d = val(x).data().iter().zip(g).map(|(&v, &g)| if v >= *lo && v <= *hi { g } else { 0.0 });
            vec![(*x, d.collect())]
        }
        Op::Relu(x) => {
            let d = val(x).data().iter().zip(g).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 });
            vec![(*x, d.collect())]
        }
        Op::Sigmoid(x) => {
            let d = out.data().iter().zip(g).map(|(&y, &g)| g * y * (1.0 - y));
            vec![(*x, d.collect())]
        }
        Op::Square(x) => {
            let d = val(x).data().iter().zip(g).map(|(&v, &g)| 2.0 * v * g);
            vec![(*x, d.collect())]
        }
        Op::Softmax(x) => {
            let k = out.last_dim().max(1);
            let mut d = vec![0.0; g.len()];
            for ((y, gr), dr) in out.data().chunks(k).zip(g.chunks(k)).zip(d.chunks_mut(k)) {
                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((dv, &yv), &gv) in dr.iter_mut().zip(y).zip(gr) {
                    *dv = yv * (gv - dot);
                }
            }
            vec![(*x, d)]
        }
        Op::CrossEntropy(x, labels) => {
            let t = val(x);
            let k = t.last_dim();
            let rows = labels.len().max(1) as f64;
            let mut d = t.data().to_vec();
            for (r, row) in d.chunks_mut(k).enumerate() {
                softmax_in_place(row);
                row[labels[r]] -= 1.0;
                row.iter_mut().for_each(|v| *v *= g[0] / rows);
            }
            vec![(*x, d)]
        }
        Op::Bce(x, targets) => {
            let p = val(x);
            let count = p.numel().max(1) as f64;
            let d = p.data().iter().zip(targets).map(|(&p, &t)| {
                if p < BCE_EPS || p > 1.0 - BCE_EPS {
                    return 0.0;
                }
                g[0] * (p - t) / (p * (1.0 - p)) / count
            });
            vec![(*x, d.collect())]
        }
        Op::SumLast(x) => {
            let k = val(x).last_dim();
            vec![(*x, expand_last(g, k, |_, gv| gv))]
        }
        Op::AvgLast(x) => {
            let k = val(x).last_dim();
            vec![(*x, expand_last(g, k, |_, gv| gv / k as f64))]
        }
        Op::ProdLast(x) => {
            let t = val(x);
            let k = t.last_dim();
            let mut d = vec![0.0; t.numel()];
            if k > 0 {
                for ((row, dr), &gv) in t.data().chunks(k).zip(d.chunks_mut(k)).zip(g) {
                    // product of all other entries, without division
                    let mut prefix = 1.0;
                    for (i, dv) in dr.iter_mut().enumerate() {
                        *dv = prefix;
                        prefix *= row[i];
                    }
                    let mut suffix = 1.0;
                    for i in (0..k).rev() {
                        dr[i] *= suffix * gv;
                        suffix *= row[i];
                    }
                }
            }
            vec![(*x, d)]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Gather(x, index) => {
            let mut d = vec![0.0; val(x).numel()];
            for (&i, &gv) in index.iter().zip(g) {
                d[i] += gv;
            }
            vec![(*x, d)]
        }
        Op::ProductGather(inputs, slots) => {
            let tensors: Vec<&Tensor> = inputs.iter().map(|v| val(v)).collect();
            let mut d: Vec<Vec<f64>> = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
            let n = slots.len();
            let rows = if n == 0 { 0 } else { g.len() / n };
            for b in 0..rows {
                for (j, slot) in slots.iter().enumerate() {
                    let gv = g[b * n + j];
                    if gv == 0.0 {
                        continue;
                    }
                    for (s, &(t, idx)) in slot.iter().enumerate() {
                        let others: f64 = slot
                            .iter()
                            .enumerate()
                            .filter(|&(u, _)| u != s)
                            .map(|(_, &(t2, i2))| tensors[t2].data()[b * tensors[t2].last_dim() + i2])
                            .product();
                        d[t][b * tensors[t].last_dim() + idx] += gv * others;
                    }
                }
            }
            inputs.iter().copied().zip(d).collect()
        }
        Op::Binarize(x, ste) => {
            let d = val(x).data().iter().zip(g).map(|(&v, &gv)| gv * ste.surrogate_grad(v));
            vec![(*x, d.collect())]
        }
        Op::Tgf(x, cfg) => {
            let d = val(x).data().iter().zip(g).map(|(&v, &gv)| gv * cfg.derivative(v));
            vec![(*x, d.collect())]
        }
        Op::Custom(inputs, op) => {
            let tensors: Vec<&Tensor> = inputs.iter().map(|v| val(v)).collect();
            inputs
                .iter()
                .copied()
                .zip(op.backward(&tensors, out, g))
                .filter_map(|(v, d)| d.map(|d| (v, d)))
                .collect()
        }
    }
}

fn expand_last(g: &[f64], k: usize, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    let mut d = Vec::with_capacity(g.len() * k);
    for (r, &gv) in g.iter().enumerate() {
        d.extend((0..k).map(|_| f(r, gv)));
    }
    d
}

/// Splits an upstream gradient between two broadcast operands. `da`/`db`
/// receive `(g, a_elem, b_elem)` at each output position.
fn split_bcast(
    g: &[f64],
    mode: Bcast,
    a: &Tensor,
    b: &Tensor,
    da: impl Fn(f64, f64, f64) -> f64,
    db: impl Fn(f64, f64, f64) -> f64,
) -> (Vec<f64>, Vec<f64>) {
    match mode {
        Bcast::Same => {
            let ga = g.iter().zip(a.data()).zip(b.data()).map(|((&g, &x), &y)| da(g, x, y)).collect();
            let gb = g.iter().zip(a.data()).zip(b.data()).map(|((&g, &x), &y)| db(g, x, y)).collect();
            (ga, gb)
        }
        Bcast::RhsRows => {
            let k = b.numel();
            let ga = g.iter().enumerate().map(|(i, &g)| da(g, a.data()[i], b.data()[i % k])).collect();
            let full: Vec<f64> = g.iter().enumerate().map(|(i, &g)| db(g, a.data()[i], b.data()[i % k])).collect();
            (ga, reduce_rows(&full, k))
        }
        Bcast::LhsRows => {
            let k = a.numel();
            let full: Vec<f64> = g.iter().enumerate().map(|(i, &g)| da(g, a.data()[i % k], b.data()[i])).collect();
            let gb = g.iter().enumerate().map(|(i, &g)| db(g, a.data()[i % k], b.data()[i])).collect();
            (reduce_rows(&full, k), gb)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GMode;

    fn vec_leaf(g: &Graph, v: &[f64]) -> Var {
        g.leaf(Tensor::vector(v.to_vec()))
    }

    #[test]
    fn quadratic_gradient() {
        let g = Graph::new();
        let x = vec_leaf(&g, &[1.0, 2.0]);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_last(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn reductions_squeeze_last_dim() {
        let g = Graph::new();
        let t = g.constant(Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]]).unwrap());
        let p = g.prod_last(t).unwrap();
        assert_eq!(g.value(p).data(), &[0.0, 1.0]);
        assert_eq!(g.shape(p), vec![2]);
        let a = g.avg_last(g.constant(Tensor::vector(vec![0.0, 1.0]))).unwrap();
        assert_eq!(g.shape(a), Vec::<usize>::new());
        assert_eq!(g.item(a), 0.5);
        let s = g.softmax(g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]))).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn prod_grad_with_zeros_is_exact() {
        let g = Graph::new();
        let x = vec_leaf(&g, &[0.0, 3.0, 0.5]);
        let p = g.prod_last(x).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.5, 0.0, 0.0]);
    }

    #[test]
    fn broadcast_rows_and_shape_errors() {
        let g = Graph::new();
        let m = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let v = vec_leaf(&g, &[10.0, 100.0]);
        let prod = g.mul(m, v).unwrap();
        assert_eq!(g.value(prod).data(), &[10.0, 200.0, 30.0, 400.0, 50.0, 600.0]);
        let loss = g.sum_all(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(v).unwrap().data(), &[9.0, 12.0]);
        assert_eq!(grads.get(m).unwrap().data(), &[10.0, 100.0, 10.0, 100.0, 10.0, 100.0]);

        let g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let b = g.constant(Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(
            g.add(a, b),
            Err(TensorError::Shape { op: "add", lhs: vec![3], rhs: vec![2] })
        );
    }

    #[test]
    fn indicator_is_constant() {
        let g = Graph::new();
        let x = vec_leaf(&g, &[1.0, 0.0, 0.0]);
        let ind = g.indicator(x, 0.0);
        assert_eq!(g.value(ind).data(), &[0.0, 1.0, 1.0]);
        let y = g.mul(ind, x).unwrap();
        let s = g.sum_last(ind).unwrap();
        let loss = g.add(g.sum_last(y).unwrap(), s).unwrap();
        let grads = g.backward(loss).unwrap();
        // only the direct path through `x` contributes
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 1.0]);
        assert!(grads.get(ind).is_none());

        let g = Graph::new();
        let c = g.constant(Tensor::from_rows(&[vec![-1.0, -1.0, 1.0], vec![-1.0, 1.0, 0.0]]).unwrap());
        assert_eq!(g.value(g.indicator(c, 1.0)).data(), &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn binarize_forward_and_surrogates() {
        let g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.3, 0.1, 0.9]));
        assert_eq!(g.value(g.binarize(x, Binarizer::Prob, SteMode::Identity).unwrap()).data(), &[0.0, 0.0, 1.0]);
        let x = g.constant(Tensor::vector(vec![-0.2, 0.0, 5.0]));
        assert_eq!(g.value(g.binarize(x, Binarizer::Sign, SteMode::Identity).unwrap()).data(), &[0.0, 1.0, 1.0]);
        let x = g.constant(Tensor::vector(vec![0.2, 1.5]));
        assert_eq!(
            g.binarize(x, Binarizer::Prob, SteMode::Identity),
            Err(TensorError::ProbabilityRange { index: 1, value: 1.5 })
        );

        for (ste, expected) in [(SteMode::Saturated, [0.0, 1.0]), (SteMode::Identity, [1.0, 1.0])] {
            let g = Graph::new();
            let x = vec_leaf(&g, &[-2.0, 0.5]);
            let b = g.binarize(x, Binarizer::Sign, ste).unwrap();
            let loss = g.sum_last(b).unwrap();
            assert_eq!(g.backward(loss).unwrap().get(x).unwrap().data(), &expected);
        }
    }

    #[test]
    fn tgf_gradients_match_surrogates() {
        let g = Graph::new();
        let x = vec_leaf(&g, &[0.37, 1.5]);
        let t = g.tgf(x, TgfConfig::new(10.0, GMode::One));
        let loss = g.sum_last(t).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(x).unwrap().data(), &[1.0, 1.0]);

        let g = Graph::new();
        let x = vec_leaf(&g, &[0.37, 1.5]);
        let t = g.tgf(x, TgfConfig::new(10.0, GMode::Box));
        let loss = g.sum_last(t).unwrap();
        assert_eq!(g.backward(loss).unwrap().get(x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn backward_errors() {
        let g = Graph::new();
        let x = vec_leaf(&g, &[1.0, 2.0]);
        assert_eq!(g.backward(x).err(), Some(TensorError::NotScalar(vec![2])));
        let s = g.sum_last(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.backward(s).err(), Some(TensorError::Consumed));
    }

    #[test]
    fn cross_entropy_requires_one_hot() {
        let g = Graph::new();
        let z = g.leaf(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let bad = Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert_eq!(g.cross_entropy(z, &bad), Err(TensorError::NotOneHot { row: 0 }));
        let ok = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let l = g.cross_entropy(z, &ok).unwrap();
        assert!((g.item(l) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn product_gather_outer_product_and_padding() {
        let g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![0.2, 0.8]]).unwrap());
        let b = g.leaf(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap());
        let slots = vec![vec![(0, 0), (1, 0)], vec![(0, 0), (1, 1)], vec![(0, 1), (1, 0)], vec![(0, 1), (1, 1)], vec![]];
        let x = g.product_gather(&[a, b], slots).unwrap();
        assert_eq!(g.value(x).data(), &[0.1, 0.1, 0.4, 0.4, 0.0]);
        let w = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]).unwrap());
        let loss = g.sum_all(g.mul(x, w).unwrap()).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.5, 3.5]);
        let gb = grads.get(b).unwrap();
        for (got, want) in gb.data().iter().zip([2.6, 3.6]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_pad_layout() {
        let g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![3.0]));
        let c = g.concat_pad(&[a, b], 1, 2).unwrap();
        assert_eq!(g.value(c).data(), &[0.0, 1.0, 2.0, 3.0, 0.0, 0.0]);
    }
}
