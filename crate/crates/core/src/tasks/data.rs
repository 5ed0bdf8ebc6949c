use std::collections::VecDeque;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::theories::{grid_edges, EDGES, GRID};
use super::TaskError;
use crate::tensor::Tensor;

/// Flat feature rows with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LabeledData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// The rows `indices` as a `(len, dim)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(indices.len(), self.dim, data).expect("rows have length dim")
    }

    pub fn all(&self) -> Tensor {
        Tensor::matrix(self.len(), self.dim, self.features.clone()).expect("rows have length dim")
    }

    /// The first `k` rows and the rest.
    pub fn split(&self, k: usize) -> (LabeledData, LabeledData) {
        let k = k.min(self.len());
        let head = LabeledData { dim: self.dim, features: self.features[..k * self.dim].to_vec(), labels: self.labels[..k].to_vec() };
        let tail = LabeledData { dim: self.dim, features: self.features[k * self.dim..].to_vec(), labels: self.labels[k..].to_vec() };
        (head, tail)
    }
}

/// Class `c` emits `one-hot(c)` in the first `classes` of `dim` features plus
/// Gaussian noise of standard deviation `noise` on every feature. Labels are
/// uniform.
pub fn gen_synthetic(n: usize, classes: usize, dim: usize, noise: f64, seed: u64) -> Result<LabeledData, TaskError> {
    if classes == 0 || dim < classes {
        return Err(TaskError::Invalid(format!("{classes} classes do not fit in {dim} features")));
    }
    let normal = Normal::new(0.0, noise).map_err(|e| TaskError::Invalid(format!("noise {noise}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..classes);
        for j in 0..dim {
            let base = if j == c { 1.0 } else { 0.0 };
            features.push(base + normal.sample(&mut rng));
        }
        labels.push(c);
    }
    Ok(LabeledData { dim, features, labels })
}

/// Feature width of [`gen_synthetic_digits`].
pub const SYNTHETIC_DIM: usize = 16;

/// Ten digit classes in 16 features.
pub fn gen_synthetic_digits(n: usize, noise: f64, seed: u64) -> Result<LabeledData, TaskError> {
    gen_synthetic(n, 10, SYNTHETIC_DIM, noise, seed)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, TaskError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_error(path, "truncated header".into()))
}

fn idx_error(path: &Path, msg: String) -> TaskError {
    TaskError::Data { path: path.display().to_string(), msg }
}

/// Reads an IDX image file and its label file. Pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledData, TaskError> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, images_path, &labels, labels_path)
}

pub fn parse_idx(images: &[u8], images_path: &Path, labels: &[u8], labels_path: &Path) -> Result<LabeledData, TaskError> {
    let magic = be_u32(images, 0, images_path)?;
    if magic != IDX_IMAGES {
        return Err(idx_error(images_path, format!("bad magic {magic:#010x}, expected {IDX_IMAGES:#010x}")));
    }
    let magic = be_u32(labels, 0, labels_path)?;
    if magic != IDX_LABELS {
        return Err(idx_error(labels_path, format!("bad magic {magic:#010x}, expected {IDX_LABELS:#010x}")));
    }
    let count = be_u32(images, 4, images_path)? as usize;
    let rows = be_u32(images, 8, images_path)? as usize;
    let cols = be_u32(images, 12, images_path)? as usize;
    let label_count = be_u32(labels, 4, labels_path)? as usize;
    if count != label_count {
        return Err(idx_error(images_path, format!("{count} images but {label_count} labels")));
    }
    let dim = rows * cols;
    let pixels = images.get(16..16 + count * dim).ok_or_else(|| {
        idx_error(images_path, format!("truncated: expected {} pixel bytes, found {}", count * dim, images.len().saturating_sub(16)))
    })?;
    let raw_labels = labels
        .get(8..8 + count)
        .ok_or_else(|| idx_error(labels_path, format!("truncated: expected {count} labels")))?;
    if let Some(bad) = raw_labels.iter().find(|&&l| l > 9) {
        return Err(idx_error(labels_path, format!("label {bad} outside 0..=9")));
    }
    Ok(LabeledData {
        dim,
        features: pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        labels: raw_labels.iter().map(|&l| usize::from(l)).collect(),
    })
}

/// A Sudoku puzzle `q` (0 = empty, values 1..=side) with an optional solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridInstance {
    pub side: usize,
    pub q: Vec<u8>,
    pub l: Option<Vec<u8>>,
}

impl GridInstance {
    pub fn empty_cells(&self) -> usize {
        self.q.iter().filter(|&&v| v == 0).count()
    }
}

fn box_side(side: usize) -> usize {
    if side == 9 {
        3
    } else {
        2
    }
}

/// Values still allowed in cell `k` of `board`.
pub fn candidates(board: &[u8], side: usize, k: usize) -> Vec<u8> {
    let b = box_side(side);
    let (r, c) = (k / side, k % side);
    let mut used = vec![false; side + 1];
    for t in 0..side {
        used[board[r * side + t] as usize] = true;
        used[board[t * side + c] as usize] = true;
        let (br, bc) = (r / b * b + t / b, c / b * b + t % b);
        used[board[br * side + bc] as usize] = true;
    }
    (1..=side as u8).filter(|&v| !used[v as usize]).collect()
}

/// Whether `board` (complete or not) breaks no row, column or box rule.
pub fn grid_consistent(board: &[u8], side: usize) -> bool {
    let b = box_side(side);
    for t in 0..side {
        let mut seen = [[false; 10]; 3];
        for s in 0..side {
            let cells = [t * side + s, s * side + t, (t / b * b + s / b) * side + t % b * b + s % b];
            for (kind, &cell) in cells.iter().enumerate() {
                let v = board[cell] as usize;
                if v == 0 {
                    continue;
                }
                if v > side || seen[kind][v] {
                    return false;
                }
                seen[kind][v] = true;
            }
        }
    }
    true
}

/// Fills cells that have a single candidate until none is left. Returns the
/// board when it is complete.
pub fn solve_by_singles(q: &[u8], side: usize) -> Option<Vec<u8>> {
    let mut board = q.to_vec();
    loop {
        let mut progress = false;
        for k in 0..board.len() {
            if board[k] != 0 {
                continue;
            }
            let cand = candidates(&board, side, k);
            match cand.len() {
                0 => return None,
                1 => {
                    board[k] = cand[0];
                    progress = true;
                }
                _ => {}
            }
        }
        if board.iter().all(|&v| v != 0) {
            return Some(board);
        }
        if !progress {
            return None;
        }
    }
}

/// Counts completions of `q`, stopping at `limit`.
pub fn count_solutions(q: &[u8], side: usize, limit: usize) -> usize {
    fn go(board: &mut Vec<u8>, side: usize, limit: usize, found: &mut usize) {
        let Some(k) = board.iter().position(|&v| v == 0) else {
            *found += 1;
            return;
        };
        for v in candidates(board, side, k) {
            board[k] = v;
            go(board, side, limit, found);
            if *found >= limit {
                break;
            }
        }
        board[k] = 0;
    }
    let mut found = 0;
    go(&mut q.to_vec(), side, limit, &mut found);
    found
}

/// Every solved 4×4 board in lexicographic order (288 of them).
pub fn solved_boards4() -> Vec<Vec<u8>> {
    fn go(board: &mut Vec<u8>, k: usize, out: &mut Vec<Vec<u8>>) {
        if k == board.len() {
            out.push(board.clone());
            return;
        }
        for v in candidates(board, 4, k) {
            board[k] = v;
            go(board, k + 1, out);
        }
        board[k] = 0;
    }
    let mut out = Vec::new();
    go(&mut vec![0; 16], 0, &mut out);
    out
}

/// Whether every removed cell is recoverable by repeated single-candidate
/// deduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Easy,
    Hard,
}

/// Random 4×4 puzzles with solutions: a uniform solved board with `holes`
/// cells removed uniformly, kept when it falls in `tier`. Every uniquely
/// solvable 4×4 puzzle yields to single-candidate deduction, so hard puzzles
/// have several solutions and `l` is one of them.
pub fn gen_sudoku4(count: usize, holes: std::ops::RangeInclusive<usize>, tier: Tier, seed: u64) -> Result<Vec<GridInstance>, TaskError> {
    if holes.is_empty() || *holes.end() > 16 {
        return Err(TaskError::Invalid(format!("hole range {holes:?} must lie within 0..=16")));
    }
    let boards = solved_boards4();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut cells: Vec<usize> = (0..16).collect();
    let budget = 1000 * count.max(1);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let solution = boards.choose(&mut rng).expect("288 boards").clone();
        let k = rng.random_range(holes.clone());
        cells.shuffle(&mut rng);
        let mut q = solution.clone();
        for &c in &cells[..k] {
            q[c] = 0;
        }
        let easy = solve_by_singles(&q, 4).is_some();
        let keep = match tier {
            Tier::Easy => easy,
            Tier::Hard => !easy,
        };
        if keep {
            out.push(GridInstance { side: 4, q, l: Some(solution) });
        }
    }
    if out.len() < count {
        return Err(TaskError::Invalid(format!("only {} of {count} {tier:?} puzzles found with holes {holes:?}", out.len())));
    }
    Ok(out)
}

/// Parses a board written as `side²` digits, with `0` or `.` for empty cells;
/// whitespace, `|` and `,` are ignored.
pub fn parse_board(text: &str) -> Result<GridInstance, TaskError> {
    let mut q = Vec::new();
    for ch in text.chars() {
        match ch {
            '.' => q.push(0),
            '0'..='9' => q.push(ch as u8 - b'0'),
            c if c.is_whitespace() || c == '|' || c == ',' => {}
            c => return Err(TaskError::Invalid(format!("unexpected character '{c}' in board"))),
        }
    }
    let side = match q.len() {
        16 => 4,
        81 => 9,
        len => return Err(TaskError::Invalid(format!("board has {len} cells, expected 16 or 81"))),
    };
    if q.iter().any(|&v| v as usize > side) {
        return Err(TaskError::Invalid(format!("board values must lie in 0..={side}")));
    }
    Ok(GridInstance { side, q, l: None })
}

pub fn format_board(board: &[u8]) -> String {
    board.iter().map(|v| char::from(b'0' + v)).collect()
}

/// A shortest-path instance: `input` is the 24 edge indicators followed by the
/// 16 node indicators with the two terminals set; `label` marks path edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathInstance {
    pub input: Vec<u8>,
    pub label: Vec<u8>,
}

impl PathInstance {
    pub fn terminals(&self) -> Vec<usize> {
        (0..GRID * GRID).filter(|&k| self.input[EDGES + k] == 1).collect()
    }
}

/// BFS distances from `src` over the present edges.
fn distances(present: &[bool], src: usize) -> Vec<Option<usize>> {
    let edges = grid_edges();
    let mut dist = vec![None; GRID * GRID];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for (e, &(a, b)) in edges.iter().enumerate() {
            if !present[e] || (a != u && b != u) {
                continue;
            }
            let w = if a == u { b } else { a };
            if dist[w].is_none() {
                dist[w] = Some(dist[u].unwrap() + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// The unique shortest path between `s` and `t` as an edge mask, or `None`
/// when `t` is unreachable or several shortest paths exist.
pub fn unique_shortest_path(present: &[bool], s: usize, t: usize) -> Option<Vec<u8>> {
    let from_s = distances(present, s);
    let from_t = distances(present, t);
    let d = from_s[t]?;
    let edges = grid_edges();
    let mut label = vec![0u8; EDGES];
    let mut used = 0;
    for (e, &(a, b)) in edges.iter().enumerate() {
        if !present[e] {
            continue;
        }
        let on = |x: usize, y: usize| matches!((from_s[x], from_t[y]), (Some(p), Some(q)) if p + 1 + q == d);
        if on(a, b) || on(b, a) {
            label[e] = 1;
            used += 1;
        }
    }
    (used == d).then_some(label)
}

/// Random instances: every edge is removed with probability `drop`, two
/// distinct terminals are drawn, and the draw is kept when exactly one
/// shortest path joins them.
pub fn gen_shortest_paths(count: usize, drop: f64, seed: u64) -> Result<Vec<PathInstance>, TaskError> {
    if !(0.0..1.0).contains(&drop) {
        return Err(TaskError::Invalid(format!("edge drop probability {drop} must lie in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let present: Vec<bool> = (0..EDGES).map(|_| !rng.random_bool(drop)).collect();
        let s = rng.random_range(0..GRID * GRID);
        let t = rng.random_range(0..GRID * GRID - 1);
        let t = if t >= s { t + 1 } else { t };
        if let Some(label) = unique_shortest_path(&present, s, t) {
            let mut input: Vec<u8> = present.iter().map(|&p| u8::from(p)).collect();
            input.extend((0..GRID * GRID).map(|k| u8::from(k == s || k == t)));
            out.push(PathInstance { input, label });
        }
    }
    Ok(out)
}

/// One instance per line: 40 input bits then 24 label bits, comma separated.
pub fn parse_path_csv(text: &str, path: &Path) -> Result<Vec<PathInstance>, TaskError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| TaskError::Data { path: path.display().to_string(), msg: format!("line {}: {msg}", lineno + 1) };
        let bits: Vec<u8> = line
            .split(',')
            .map(|s| match s.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(err(format!("expected 0 or 1, found '{other}'"))),
            })
            .collect::<Result<_, _>>()?;
        if bits.len() != 40 + EDGES {
            return Err(err(format!("expected {} values, found {}", 40 + EDGES, bits.len())));
        }
        out.push(PathInstance { input: bits[..40].to_vec(), label: bits[40..].to_vec() });
    }
    Ok(out)
}

pub fn load_path_csv(path: &Path) -> Result<Vec<PathInstance>, TaskError> {
    parse_path_csv(&std::fs::read_to_string(path)?, path)
}

pub fn path_csv(instances: &[PathInstance]) -> String {
    let mut s = String::new();
    for inst in instances {
        let cells: Vec<String> = inst.input.iter().chain(&inst.label).map(ToString::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
