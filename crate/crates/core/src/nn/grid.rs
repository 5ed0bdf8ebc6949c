/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fills every empty cell (value 0) with its most probable value in one pass.
///
/// `probs` holds `cells × values` probabilities; value `k` is written as `k + 1`.
pub fn fill_by_argmax(board: &[u8], values: usize, probs: &[f64]) -> Vec<u8> {
    board
        .iter()
        .enumerate()
        .map(|(cell, &q)| if q != 0 { q } else { argmax(&probs[cell * values..(cell + 1) * values]) as u8 + 1 })
        .collect()
}

/// Fixes the single most confident empty cell, re-runs `probs` on the updated
/// board, and repeats until the board is full.
///
/// Confidence is the largest probability over a cell's values; ties go to the
/// lowest cell, then the lowest value.
pub fn inference_trick(board: &[u8], values: usize, mut probs: impl FnMut(&[u8]) -> Vec<f64>) -> Vec<u8> {
    let mut board = board.to_vec();
    while board.contains(&0) {
        let p = probs(&board);
        let mut best: Option<(usize, usize, f64)> = None;
        for (cell, _) in board.iter().enumerate().filter(|(_, &q)| q == 0) {
            let row = &p[cell * values..(cell + 1) * values];
            let k = argmax(row);
            if best.is_none_or(|(_, _, c)| row[k] > c) {
                best = Some((cell, k, row[k]));
            }
        }
        let (cell, k, _) = best.expect("board has an empty cell");
        board[cell] = k as u8 + 1;
    }
    board
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_lowest_index_wins() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0, 1.0]), 0);
    }

    #[test]
    fn full_board_is_unchanged() {
        let board = vec![1, 2, 3, 4];
        let out = inference_trick(&board, 4, |_| panic!("no forward pass needed"));
        assert_eq!(out, board);
    }

    #[test]
    fn single_empty_cell_takes_argmax() {
        let board = vec![1, 0];
        let out = inference_trick(&board, 2, |_| vec![0.9, 0.1, 0.3, 0.7]);
        assert_eq!(out, vec![1, 2]);
    }

    #[test]
    fn most_confident_cell_first_then_rerun() {
        // cell 1 is more confident; once it is fixed, cell 0 flips to value 2
        let mut calls = 0;
        let out = inference_trick(&[0, 0], 2, |b| {
            calls += 1;
            if b[1] == 0 {
                vec![0.6, 0.4, 0.1, 0.9]
            } else {
                vec![0.3, 0.7, 0.5, 0.5]
            }
        });
        assert_eq!(out, vec![2, 2]);
        assert_eq!(calls, 2);
        assert_eq!(fill_by_argmax(&[0, 0], 2, &[0.6, 0.4, 0.1, 0.9]), vec![1, 2]);
    }

    #[test]
    fn ties_pick_lowest_cell() {
        let out = inference_trick(&[0, 0], 2, |b| if b[0] == 0 { vec![0.8, 0.2, 0.8, 0.2] } else { vec![0.5, 0.5, 0.1, 0.9] });
        assert_eq!(out, vec![1, 2]);
    }
}
