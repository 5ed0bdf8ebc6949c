use std::collections::BTreeMap;

use crate::cnf::{Clause, CnfTheory, Lit};

use super::{Layout, TaskError, TaskSpec};

fn theory(names: Vec<String>, clauses: Vec<Clause>) -> CnfTheory {
    CnfTheory::with_names(names, clauses).expect("generated theories are well formed")
}

/// Base-10 digits of `value`, most significant first, padded to `width`.
fn digits_of(mut value: usize, width: usize) -> Vec<usize> {
    let mut out = vec![0; width];
    for slot in out.iter_mut().rev() {
        *slot = value % 10;
        value /= 10;
    }
    out
}

/// Atom index of `sum(l)` in the `digits`-per-operand addition theory.
pub fn mnist_add_sum_atom(digits: usize, label: usize) -> usize {
    10usize.pow(2 * digits as u32) + label
}

/// Addition of two `digits`-digit numbers read from `2·digits` images.
///
/// Atoms: `pred(n_1, ..., n_2d)` at the base-10 number `n_1 n_2 ... n_2d`, then
/// `sum(l)`. One clause `¬sum(l) ∨ ⋁ pred(..)` per reachable sum `l`.
pub fn gen_mnist_add(digits: usize) -> Result<TaskSpec, TaskError> {
    if !(1..=3).contains(&digits) {
        return Err(TaskError::Invalid(format!("mnistAdd supports 1 to 3 digits per operand, got {digits}")));
    }
    let arity = 2 * digits;
    let preds = 10usize.pow(arity as u32);
    let scale = 10usize.pow(digits as u32);
    let sums = 2 * (scale - 1) + 1;
    let mut by_sum: Vec<Vec<Lit>> = (0..sums).map(|l| vec![Lit::neg(preds + l)]).collect();
    let mut names = Vec::with_capacity(preds + sums);
    for p in 0..preds {
        let (a, b) = (p / scale, p % scale);
        by_sum[a + b].push(Lit::pos(p));
        let ds: Vec<String> = digits_of(p, arity).iter().map(ToString::to_string).collect();
        names.push(format!("pred({})", ds.join(",")));
    }
    names.extend((0..sums).map(|l| format!("sum({l})")));
    let name = match digits {
        1 => "mnistadd".to_string(),
        d => format!("mnistadd{d}"),
    };
    Ok(TaskSpec::new(name, theory(names, by_sum), Layout::Products { arity, classes: 10 }))
}

/// First atom of `sum(s)` in the existence/uniqueness variant.
pub const MNIST_ADD_B_SUM: usize = 100;
/// First atom of `digit(i, n)` in the existence/uniqueness variant.
pub const MNIST_ADD_B_DIGIT: usize = 119;

/// One-digit addition with explicit digit atoms and exactly-one clauses.
///
/// Atoms: `conj(n1, n2)` at `10·n1 + n2`, `sum(s)` at 100 + s, `digit(i, n)`
/// at 119 + 10·i + n. Clauses: 19 sum clauses, 2 existence, 90 uniqueness.
pub fn gen_mnist_add_b() -> TaskSpec {
    let mut names: Vec<String> = (0..100).map(|p| format!("conj({},{})", p / 10, p % 10)).collect();
    names.extend((0..19).map(|s| format!("sum({s})")));
    names.extend((0..20).map(|k| format!("digit(i{},{})", k / 10 + 1, k % 10)));
    let mut clauses: Vec<Clause> = (0..19).map(|s| vec![Lit::neg(MNIST_ADD_B_SUM + s)]).collect();
    for p in 0..100 {
        clauses[p / 10 + p % 10].push(Lit::pos(p));
    }
    for i in 0..2 {
        clauses.push((0..10).map(|n| Lit::pos(MNIST_ADD_B_DIGIT + 10 * i + n)).collect());
    }
    for i in 0..2 {
        for n1 in 0..10 {
            for n2 in n1 + 1..10 {
                clauses.push(vec![Lit::neg(MNIST_ADD_B_DIGIT + 10 * i + n1), Lit::neg(MNIST_ADD_B_DIGIT + 10 * i + n2)]);
            }
        }
    }
    let mut slots: Vec<Vec<(usize, usize)>> = (0..100).map(|p| vec![(0, p / 10), (1, p % 10)]).collect();
    slots.extend(std::iter::repeat_with(Vec::new).take(19));
    slots.extend((0..20).map(|k| vec![(k / 10, k % 10)]));
    TaskSpec::new("mnistadd-b".into(), theory(names, clauses), Layout::Slots(slots))
}

/// The image pairs summed by the add2x2 theory: both rows, then both columns.
pub const ADD2X2_PAIRS: [(usize, usize); 4] = [(0, 1), (2, 3), (0, 2), (1, 3)];

pub fn add2x2_sum_atom(pair: usize, r: usize) -> usize {
    400 + 19 * pair + r
}

/// Row and column sums over a 2×2 grid of digits.
///
/// Atoms: `conj(p, i, j)` at `100·p + 10·i + j` for the four pairs `p`, then
/// `sum(p, r)` at `400 + 19·p + r`.
pub fn gen_add2x2() -> TaskSpec {
    let mut names = Vec::with_capacity(476);
    let mut slots = Vec::with_capacity(476);
    for (p, &(a, b)) in ADD2X2_PAIRS.iter().enumerate() {
        for k in 0..100 {
            names.push(format!("conj(i{},{},i{},{})", a + 1, k / 10, b + 1, k % 10));
            slots.push(vec![(a, k / 10), (b, k % 10)]);
        }
        let _ = p;
    }
    let mut clauses = Vec::with_capacity(76);
    for (p, &(a, b)) in ADD2X2_PAIRS.iter().enumerate() {
        for r in 0..19 {
            names.push(format!("sum(i{},i{},{r})", a + 1, b + 1));
            let mut clause = vec![Lit::neg(add2x2_sum_atom(p, r))];
            clause.extend((0..100).filter(|k| k / 10 + k % 10 == r).map(|k| Lit::pos(100 * p + k)));
            clauses.push(clause);
        }
    }
    slots.extend(std::iter::repeat_with(Vec::new).take(76));
    TaskSpec::new("add2x2".into(), theory(names, clauses), Layout::Slots(slots))
}

/// `+`, `-`, `×` in operator-class order.
pub fn apply_op(op: usize, a: i64, b: i64) -> i64 {
    match op {
        0 => a + b,
        1 => a - b,
        _ => a * b,
    }
}

/// Largest digit operand in the apply2x2 theory.
pub const APPLY_MAX_DIGIT: i64 = 10;

/// Every `(d1, d2, d3, r)` reachable by `(d1 op1 d2) op2 d3`, sorted.
pub fn apply2x2_keys() -> Vec<(i64, i64, i64, i64)> {
    let mut keys = Vec::new();
    for d1 in 0..=APPLY_MAX_DIGIT {
        for d2 in 0..=APPLY_MAX_DIGIT {
            for d3 in 0..=APPLY_MAX_DIGIT {
                let mut rs: Vec<i64> =
                    (0..9).map(|k| apply_op(k % 3, apply_op(k / 3, d1, d2), d3)).collect();
                rs.sort_unstable();
                rs.dedup();
                keys.extend(rs.into_iter().map(|r| (d1, d2, d3, r)));
            }
        }
    }
    keys
}

/// Operator grid puzzles: the operator pair applied to three known digits.
///
/// Atoms: `operators(op1, op2)` at `3·op1 + op2`, then one `apply(d1,d2,d3,r)`
/// atom per reachable result in sorted order. One clause per `apply` atom.
pub fn gen_apply2x2() -> TaskSpec {
    let keys = apply2x2_keys();
    let sym = ['+', '-', '*'];
    let mut names: Vec<String> = (0..9).map(|k| format!("operators({},{})", sym[k / 3], sym[k % 3])).collect();
    let mut clauses = Vec::with_capacity(keys.len());
    for (idx, &(d1, d2, d3, r)) in keys.iter().enumerate() {
        names.push(format!("apply({d1},{d2},{d3},{r})"));
        let mut clause = vec![Lit::neg(9 + idx)];
        clause.extend((0..9).filter(|&k| apply_op(k % 3, apply_op(k / 3, d1, d2), d3) == r).map(Lit::pos));
        clauses.push(clause);
    }
    TaskSpec::new("apply2x2".into(), theory(names, clauses), Layout::Products { arity: 2, classes: 3 })
}

/// Looks up `apply(d1, d2, d3, r)` atoms.
#[derive(Debug, Clone)]
pub struct ApplyIndex {
    index: BTreeMap<(i64, i64, i64, i64), usize>,
}

impl ApplyIndex {
    pub fn new() -> Self {
        let index = apply2x2_keys().into_iter().enumerate().map(|(i, k)| (k, 9 + i)).collect();
        ApplyIndex { index }
    }

    pub fn atom(&self, d1: i64, d2: i64, d3: i64, r: i64) -> Option<usize> {
        self.index.get(&(d1, d2, d3, r)).copied()
    }
}

impl Default for ApplyIndex {
    fn default() -> Self {
        Self::new()
    }
}

pub fn member_in_atom(k: usize, d: usize, l: usize) -> usize {
    10 * k + 10 * l + d
}

/// Set membership of a digit among `k` images.
///
/// Atoms: `digit(t, d)` at `10·t + d`, then `in(d, l)` at `10·k + 10·l + d`.
pub fn gen_member(k: usize) -> Result<TaskSpec, TaskError> {
    if k == 0 {
        return Err(TaskError::Invalid("member needs at least one image".into()));
    }
    let mut names: Vec<String> = (0..10 * k).map(|a| format!("digit(i{},{})", a / 10 + 1, a % 10)).collect();
    names.extend((0..20).map(|a| format!("in({},{})", a % 10, a / 10)));
    let mut clauses: Vec<Clause> = Vec::with_capacity(10 + 10 * k);
    for d in 0..10 {
        let mut clause = vec![Lit::neg(member_in_atom(k, d, 1))];
        clause.extend((0..k).map(|t| Lit::pos(10 * t + d)));
        clauses.push(clause);
    }
    for d in 0..10 {
        for t in 0..k {
            clauses.push(vec![Lit::neg(member_in_atom(k, d, 0)), Lit::neg(10 * t + d)]);
        }
    }
    Ok(TaskSpec::new(format!("member{k}"), theory(names, clauses), Layout::Concat { pad_front: 0 }))
}

/// Atom of `a(r, c, v)` (all zero-based) in a grid of side `side`.
pub fn sudoku_atom(side: usize, r: usize, c: usize, v: usize) -> usize {
    (r * side + c) * side + v
}

fn box_dims(side: usize) -> Result<usize, TaskError> {
    match side {
        4 => Ok(2),
        9 => Ok(3),
        _ => Err(TaskError::Invalid(format!("sudoku side must be 4 or 9, got {side}"))),
    }
}

/// Exactly-one groups: row-index, column-index and cell-value families, then
/// the box family when requested. Each group lists `side` atoms.
pub fn sudoku_groups(side: usize, include_box: bool) -> Result<Vec<Vec<Vec<usize>>>, TaskError> {
    let b = box_dims(side)?;
    let a = |r, c, v| sudoku_atom(side, r, c, v);
    let mut families = Vec::with_capacity(4);
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut cells = Vec::new();
    for p in 0..side {
        for q in 0..side {
            rows.push((0..side).map(|r| a(r, p, q)).collect());
            cols.push((0..side).map(|c| a(p, c, q)).collect());
            cells.push((0..side).map(|v| a(p, q, v)).collect());
        }
    }
    families.push(rows);
    families.push(cols);
    families.push(cells);
    if include_box {
        let mut boxes = Vec::new();
        for bx in 0..side {
            for v in 0..side {
                let (r0, c0) = (bx / b * b, bx % b * b);
                boxes.push((0..side).map(|k| a(r0 + k / b, c0 + k % b, v)).collect());
            }
        }
        families.push(boxes);
    }
    Ok(families)
}

/// Existence and pairwise-uniqueness clauses over each group.
pub fn exactly_one_clauses(groups: impl IntoIterator<Item = Vec<usize>>) -> Vec<Clause> {
    let mut clauses = Vec::new();
    for group in groups {
        clauses.push(group.iter().map(|&p| Lit::pos(p)).collect());
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                clauses.push(vec![Lit::neg(group[i]), Lit::neg(group[j])]);
            }
        }
    }
    clauses
}

/// Sudoku of side 4 or 9 as exactly-one constraints over `a(r, c, v)`.
pub fn gen_sudoku(side: usize, include_box: bool) -> Result<TaskSpec, TaskError> {
    let families = sudoku_groups(side, include_box)?;
    let names = (0..side * side * side)
        .map(|k| format!("a({},{},{})", k / (side * side) + 1, k / side % side + 1, k % side + 1))
        .collect();
    let clauses = exactly_one_clauses(families.into_iter().flatten());
    let name = format!("sudoku{side}{}", if include_box { "-box" } else { "" });
    Ok(TaskSpec::new(name, theory(names, clauses), Layout::Concat { pad_front: 0 }))
}

/// Grid side of the shortest-path task.
pub const GRID: usize = 4;
/// Number of edges of the 4×4 grid.
pub const EDGES: usize = 24;

/// The grid's edges as node pairs: horizontal edges row by row, then vertical
/// edges row by row. Nodes are `4·i + j`.
pub fn grid_edges() -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(EDGES);
    for i in 0..GRID {
        for j in 0..GRID - 1 {
            edges.push((GRID * i + j, GRID * i + j + 1));
        }
    }
    for i in 0..GRID - 1 {
        for j in 0..GRID {
            edges.push((GRID * i + j, GRID * (i + 1) + j));
        }
    }
    edges
}

/// Edges incident to each node, in edge order.
pub fn incident_edges() -> Vec<Vec<usize>> {
    let mut inc = vec![Vec::new(); GRID * GRID];
    for (e, &(u, v)) in grid_edges().iter().enumerate() {
        inc[u].push(e);
        inc[v].push(e);
    }
    inc
}

/// Terminals touch exactly one path edge.
///
/// Atoms: `terminal(i, j)` at `4·i + j`, then `sp(e)` at `16 + e` in
/// [`grid_edges`] order. Pairwise clauses run over ordered pairs of distinct
/// incident edges.
pub fn gen_shortest_path() -> TaskSpec {
    let nodes = GRID * GRID;
    let mut names: Vec<String> = (0..nodes).map(|k| format!("terminal({},{})", k / GRID + 1, k % GRID + 1)).collect();
    for (u, v) in grid_edges() {
        names.push(format!("sp(({},{}),({},{}))", u / GRID + 1, u % GRID + 1, v / GRID + 1, v % GRID + 1));
    }
    let inc = incident_edges();
    let mut clauses: Vec<Clause> = Vec::new();
    for (node, edges) in inc.iter().enumerate() {
        let mut clause = vec![Lit::neg(node)];
        clause.extend(edges.iter().map(|&e| Lit::pos(nodes + e)));
        clauses.push(clause);
    }
    for (node, edges) in inc.iter().enumerate() {
        for &e1 in edges {
            for &e2 in edges.iter().filter(|&&e| e != e1) {
                clauses.push(vec![Lit::neg(node), Lit::neg(nodes + e1), Lit::neg(nodes + e2)]);
            }
        }
    }
    TaskSpec::new("shortest-path".into(), theory(names, clauses), Layout::Concat { pad_front: nodes })
}

/// Exactly one of `classes` labels.
pub fn gen_exactly_one(classes: usize) -> Result<TaskSpec, TaskError> {
    if classes == 0 {
        return Err(TaskError::Invalid("exactly-one needs at least one class".into()));
    }
    let names = (0..classes).map(|n| format!("pred({n})")).collect();
    let clauses = exactly_one_clauses([(0..classes).collect()]);
    Ok(TaskSpec::new(format!("exactly-one{classes}"), theory(names, clauses), Layout::Concat { pad_front: 0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::ClauseMatrix;

    #[test]
    fn mnist_add_sum_one_row() {
        let t = gen_mnist_add(1).unwrap();
        let c = ClauseMatrix::from_theory(&t.theory);
        let row: Vec<(usize, i8)> = c.row(1).collect();
        assert_eq!(row, vec![(101, -1), (1, 1), (10, 1)]);
        assert_eq!(t.theory.atom_name(101), "sum(1)");
        assert_eq!(t.theory.atom_name(10), "pred(1,0)");
    }

    #[test]
    fn member_rows() {
        let t = gen_member(3).unwrap();
        let c = ClauseMatrix::from_theory(&t.theory);
        let row: Vec<(usize, i8)> = c.row(5).collect();
        assert_eq!(row, vec![(45, -1), (5, 1), (15, 1), (25, 1)]);
        assert_eq!(t.theory.atom_name(45), "in(5,1)");
        assert_eq!(t.theory.atom_name(35), "in(5,0)");
    }

    #[test]
    fn sudoku_boxes_are_boxes() {
        let fam = sudoku_groups(4, true).unwrap();
        assert_eq!(fam.len(), 4);
        // box 3, value 0: cells (2,2) (2,3) (3,2) (3,3)
        assert_eq!(fam[3][12], vec![40, 44, 56, 60]);
    }

    #[test]
    fn shortest_path_degrees() {
        let inc = incident_edges();
        assert_eq!(inc.iter().map(Vec::len).sum::<usize>(), 48);
        assert_eq!(inc[0], vec![0, 12]);
        assert_eq!(inc[5].len(), 4);
    }

    #[test]
    fn apply_index_covers_keys() {
        let idx = ApplyIndex::new();
        assert_eq!(idx.atom(0, 0, 0, 0), Some(9));
        assert_eq!(idx.atom(4, 7, 9, 19), Some(idx.atom(4, 7, 9, 19).unwrap()));
        assert!(idx.atom(9, 9, 9, 10_000).is_none());
    }
}
