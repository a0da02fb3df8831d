//! Dense linear assignment by shortest augmenting paths, O(n^3).
//!
//! Rows are inserted one at a time in index order and each augmentation
//! scans columns in ascending order with a strict comparison, so the
//! returned assignment is deterministic for a given cost matrix.

use crate::measure::CostMatrix;

/// Returns `assignment` with `assignment[row] = column` minimizing the total
/// cost. The matrix must be square.
pub fn solve_assignment(cost: &CostMatrix) -> Vec<usize> {
    let n = cost.rows();
    debug_assert_eq!(n, cost.cols());
    if n == 0 {
        return Vec::new();
    }
    // 1-based with index 0 as a virtual column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![f64::INFINITY; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        matched_row[0] = row;
        let mut col0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[col0] = true;
            let i0 = matched_row[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0usize;
            let cost_row = cost.row(i0 - 1);
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost_row[j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if matched_row[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            matched_row[col0] = matched_row[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    assignment
}

/// Average cost of an assignment, accumulated in row order.
///
/// Both the assignment solver and the brute-force oracle go through this
/// function so that their values compare bit for bit.
pub fn assignment_value(cost: &CostMatrix, assignment: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        total += cost.get(i, j);
    }
    total / assignment.len() as f64
}

/// Exhaustive minimum over all permutations, first minimizer in
/// lexicographic order.
pub(crate) fn brute_force_assignment(cost: &CostMatrix) -> Vec<usize> {
    let n = cost.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_value = assignment_value(cost, &perm);
    while next_permutation(&mut perm) {
        let value = assignment_value(cost, &perm);
        if value < best_value {
            best_value = value;
            best.copy_from_slice(&perm);
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_are_enumerated() {
        let mut p = vec![0, 1, 2, 3];
        let mut count = 1;
        while next_permutation(&mut p) {
            count += 1;
        }
        assert_eq!(count, 24);
        assert_eq!(p, vec![3, 2, 1, 0]);
    }

    #[test]
    fn classic_three_by_three() {
        let c = CostMatrix::from_rows(&[
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ])
        .unwrap();
        let a = solve_assignment(&c);
        assert_eq!(a, vec![1, 0, 2]);
        assert_eq!(assignment_value(&c, &a), 5.0 / 3.0);
    }

    #[test]
    fn all_ties_give_identity() {
        let c = CostMatrix::from_fn(5, 5, |_, _| 1.0);
        assert_eq!(solve_assignment(&c), vec![0, 1, 2, 3, 4]);
        assert_eq!(brute_force_assignment(&c), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn anti_diagonal() {
        let c = CostMatrix::from_fn(4, 4, |i, j| if i + j == 3 { 0.0 } else { 1.0 });
        assert_eq!(solve_assignment(&c), vec![3, 2, 1, 0]);
    }
}
