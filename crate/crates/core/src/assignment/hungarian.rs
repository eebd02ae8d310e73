//! Rectangular minimum-cost assignment (Kuhn–Munkres with potentials).
//!
//! Rows are inserted one at a time and matched along a shortest augmenting
//! path in reduced costs, giving `O(n²·m)` for `n ≤ m`. Among equal
//! reduced costs the lowest column index wins.

use super::{AssignmentError, CostMatrix};

/// Assigns every row to a distinct column minimizing total cost. Returns
/// `(row, col)` pairs sorted by row.
pub fn hungarian(d: &CostMatrix) -> Result<Vec<(usize, usize)>, AssignmentError> {
    let (n, m) = (d.rows, d.cols);
    if n > m {
        return Err(AssignmentError::Infeasible { rows: n, cols: m });
    }
    if let Some(i) = d.data.iter().position(|v| !v.is_finite()) {
        return Err(AssignmentError::NonFinite(i));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    // 1-based with a virtual column 0, which simplifies the augmenting loop.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut min_slack = vec![0.0f64; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        min_slack.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = d.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Total cost of an assignment, summed in row order.
pub fn assignment_cost(d: &CostMatrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| d.get(r, c)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle::oracle_hungarian;
    use proptest::prelude::*;

    fn matrix(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix {
            rows: rows.len(),
            cols: rows[0].len(),
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[test]
    fn two_by_two() {
        let d = matrix(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let a = hungarian(&d).unwrap();
        assert_eq!(a, [(0, 0), (1, 1)]);
        assert_eq!(assignment_cost(&d, &a), 2.0);
    }

    #[test]
    fn zero_diagonal() {
        let d = matrix(&[&[0.0, 1.0, 1.0], &[1.0, 0.0, 1.0], &[1.0, 1.0, 0.0]]);
        let a = hungarian(&d).unwrap();
        assert_eq!(a, [(0, 0), (1, 1), (2, 2)]);
        assert_eq!(assignment_cost(&d, &a), 0.0);
    }

    #[test]
    fn ties_prefer_low_columns() {
        let d = matrix(&[&[1.0, 1.0, 1.0]]);
        assert_eq!(hungarian(&d).unwrap(), [(0, 0)]);
    }

    #[test]
    fn infeasible_and_empty() {
        let d = matrix(&[&[1.0], &[2.0]]);
        assert!(matches!(
            hungarian(&d),
            Err(AssignmentError::Infeasible { rows: 2, cols: 1 })
        ));
        let empty = CostMatrix {
            rows: 0,
            cols: 3,
            data: vec![],
        };
        assert!(hungarian(&empty).unwrap().is_empty());
    }

    #[test]
    fn big_m_entries_are_avoided_when_possible() {
        let d = matrix(&[&[0.1, 1e6, 1e6], &[0.2, 0.3, 1e6]]);
        assert_eq!(hungarian(&d).unwrap(), [(0, 0), (1, 1)]);
    }

    proptest! {
        #[test]
        fn matches_enumeration(
            (rows, cols, data) in (1usize..=6).prop_flat_map(|r| (Just(r), r..=8))
                .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(0u32..20, r * c)))
        ) {
            let d = CostMatrix { rows, cols, data: data.into_iter().map(f64::from).collect() };
            let a = hungarian(&d).unwrap();
            let mut seen = std::collections::HashSet::new();
            prop_assert!(a.iter().all(|&(_, c)| seen.insert(c)));
            prop_assert_eq!(a.len(), rows);
            let best = oracle_hungarian(&d).unwrap();
            prop_assert_eq!(assignment_cost(&d, &a), assignment_cost(&d, &best));
        }
    }
}
