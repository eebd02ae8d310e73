//! Brute-force reference implementations for small inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::assignment::CostMatrix;
use crate::decode::{Edge, ExprGraph, GraphNode};
use crate::latex::ClassId;

pub const MAX_ASSIGN_ROWS: usize = 7;
pub const MAX_ASSIGN_MAPS: u64 = 50_000_000;
pub const MAX_PATH_NODES: usize = 10;
pub const MAX_EDIT_LEN: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("input too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("no feasible solution")]
    Infeasible,
}

/// Minimum-cost injective row→column map by enumeration. Returns
/// `(row, col)` pairs sorted by row.
pub fn oracle_hungarian(d: &CostMatrix) -> Result<Vec<(usize, usize)>, OracleError> {
    let (n, m) = (d.rows, d.cols);
    if n > m {
        return Err(OracleError::Infeasible);
    }
    let maps: u64 = (0..n as u64).map(|i| (m as u64) - i).product();
    if n > MAX_ASSIGN_ROWS || maps > MAX_ASSIGN_MAPS {
        return Err(OracleError::TooLarge(format!("{n}x{m}")));
    }

    fn go(
        d: &CostMatrix,
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        cost: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if row == d.rows {
            if cost < best.0 {
                *best = (cost, cur.clone());
            }
            return;
        }
        for c in 0..d.cols {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                go(d, row + 1, used, cur, cost + d.get(row, c), best);
                cur.pop();
                used[c] = false;
            }
        }
    }

    let mut best = (f64::INFINITY, Vec::new());
    go(d, 0, &mut vec![false; m], &mut Vec::new(), 0.0, &mut best);
    Ok(best.1.into_iter().enumerate().collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OraclePath {
    pub nodes: Vec<usize>,
    pub weight: f64,
}

/// Heaviest `<sos> → <eos>` path over all simple paths. Weights are summed
/// along the path in order.
pub fn oracle_longest_path(g: &ExprGraph) -> Result<OraclePath, OracleError> {
    let n = g.nodes.len();
    if n > MAX_PATH_NODES {
        return Err(OracleError::TooLarge(format!("{n} nodes")));
    }
    if n < 2 {
        return Err(OracleError::Infeasible);
    }
    let mut out = vec![Vec::new(); n];
    for e in &g.edges {
        out[e.src].push((e.dst, e.weight));
    }

    fn go(
        out: &[Vec<(usize, f64)>],
        target: usize,
        path: &mut Vec<usize>,
        on: &mut [bool],
        weight: f64,
        best: &mut Option<OraclePath>,
    ) {
        let u = *path.last().unwrap();
        if u == target {
            if best.as_ref().is_none_or(|b| weight > b.weight) {
                *best = Some(OraclePath {
                    nodes: path.clone(),
                    weight,
                });
            }
            return;
        }
        for &(v, w) in &out[u] {
            if !on[v] {
                on[v] = true;
                path.push(v);
                go(out, target, path, on, weight + w, best);
                path.pop();
                on[v] = false;
            }
        }
    }

    let mut on = vec![false; n];
    on[0] = true;
    let mut best = None;
    go(&out, n - 1, &mut vec![0], &mut on, 0.0, &mut best);
    best.ok_or(OracleError::Infeasible)
}

/// Levenshtein distance by plain recursion over (insert, delete,
/// substitute), memoized.
pub fn oracle_edit(a: &[ClassId], b: &[ClassId]) -> Result<usize, OracleError> {
    if a.len() > MAX_EDIT_LEN || b.len() > MAX_EDIT_LEN {
        return Err(OracleError::TooLarge(format!(
            "lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    fn go(
        a: &[ClassId],
        b: &[ClassId],
        i: usize,
        j: usize,
        memo: &mut [Vec<Option<usize>>],
    ) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == a.len() {
            b.len() - j
        } else if j == b.len() {
            a.len() - i
        } else {
            let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
            let del = go(a, b, i + 1, j, memo) + 1;
            let ins = go(a, b, i, j + 1, memo) + 1;
            sub.min(del).min(ins)
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    Ok(go(a, b, 0, 0, &mut memo))
}

/// Random DAG on `n` nodes: each forward pair `i < j` becomes an edge with
/// probability `p`, weight uniform in `[0, 2)`.
pub fn random_dag(n: usize, p: f64, seed: u64) -> ExprGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = (0..n)
        .map(|i| GraphNode {
            label: format!("v{i}"),
            class: Some(ClassId(i as u32)),
            cell: None,
        })
        .collect();
    let mut edges = Vec::new();
    for src in 0..n {
        for dst in src + 1..n {
            if rng.random_bool(p) {
                edges.push(Edge {
                    src,
                    dst,
                    weight: rng.random_range(0.0..2.0),
                });
            }
        }
    }
    ExprGraph { nodes, edges }
}
