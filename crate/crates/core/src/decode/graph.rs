//! Expression graph, pruning and longest-path selection.

use std::collections::VecDeque;

use serde::Serialize;

use super::DecodeError;
use crate::latex::{emit_latex_lenient, ClassId, TokenVocab};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphNode {
    pub label: String,
    pub class: Option<ClassId>,
    pub cell: Option<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Weighted digraph with `<sos>` at index 0 and `<eos>` at the last index.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExprGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
}

impl ExprGraph {
    pub fn sos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    /// Outgoing edge indices per node, restricted to `alive` edges.
    fn out_edges(&self, alive: &[bool]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, e) in self.edges.iter().enumerate() {
            if alive[i] {
                out[e.src].push(i);
            }
        }
        out
    }

    /// Edge indices of some `<sos> → <eos>` path over `alive` edges.
    fn witness_path(&self, alive: &[bool]) -> Option<Vec<usize>> {
        if self.nodes.len() < 2 {
            return None;
        }
        let out = self.out_edges(alive);
        let mut via: Vec<Option<usize>> = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([self.sos()]);
        seen[self.sos()] = true;
        while let Some(u) = queue.pop_front() {
            if u == self.eos() {
                let mut path = Vec::new();
                let mut v = u;
                while let Some(e) = via[v] {
                    path.push(e);
                    v = self.edges[e].src;
                }
                path.reverse();
                return Some(path);
            }
            for &e in &out[u] {
                let v = self.edges[e].dst;
                if !seen[v] {
                    seen[v] = true;
                    via[v] = Some(e);
                    queue.push_back(v);
                }
            }
        }
        None
    }

    pub fn eos_reachable(&self) -> bool {
        self.witness_path(&vec![true; self.edges.len()]).is_some()
    }

    /// Edge indices forming a directed cycle among `alive` edges.
    fn find_cycle(&self, alive: &[bool]) -> Option<Vec<usize>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let out = self.out_edges(alive);
        let mut mark = vec![Mark::New; self.nodes.len()];
        for root in 0..self.nodes.len() {
            if mark[root] != Mark::New {
                continue;
            }
            // (node, next out-edge cursor, edge used to enter)
            let mut stack: Vec<(usize, usize, Option<usize>)> = vec![(root, 0, None)];
            mark[root] = Mark::Open;
            while let Some(top) = stack.last_mut() {
                let (u, cursor) = (top.0, top.1);
                if cursor == out[u].len() {
                    mark[u] = Mark::Done;
                    stack.pop();
                    continue;
                }
                top.1 += 1;
                let e = out[u][cursor];
                let v = self.edges[e].dst;
                match mark[v] {
                    Mark::New => {
                        mark[v] = Mark::Open;
                        stack.push((v, 0, Some(e)));
                    }
                    Mark::Open => {
                        let start = stack.iter().position(|f| f.0 == v).unwrap();
                        let mut cycle: Vec<usize> =
                            stack[start + 1..].iter().filter_map(|f| f.2).collect();
                        cycle.push(e);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            }
        }
        None
    }

    fn keep(&self, alive: &[bool]) -> ExprGraph {
        ExprGraph {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .zip(alive)
                .filter(|(_, &a)| a)
                .map(|(e, _)| *e)
                .collect(),
        }
    }
}

/// Drops edges below `epsilon` (lightest first) unless the removal would
/// cut `<eos>` off from `<sos>`, then breaks every remaining directed
/// cycle by removing its lightest edge whose removal keeps `<eos>`
/// reachable.
pub fn prune_and_acyclify(g: &ExprGraph, epsilon: f64) -> Result<ExprGraph, DecodeError> {
    let mut alive = vec![true; g.edges.len()];
    let Some(mut witness) = g.witness_path(&alive) else {
        return Err(DecodeError::NoPath);
    };

    let strong: Vec<bool> = g.edges.iter().map(|e| e.weight >= epsilon).collect();
    let mut weak: Vec<usize> = (0..g.edges.len()).filter(|&i| !strong[i]).collect();
    if g.witness_path(&strong).is_some() {
        for i in weak {
            alive[i] = false;
        }
    } else {
        weak.sort_by(|&a, &b| edge_order(g, a, b));
        for i in weak {
            alive[i] = false;
            if witness.contains(&i) {
                match g.witness_path(&alive) {
                    Some(p) => witness = p,
                    None => alive[i] = true,
                }
            }
        }
    }

    while let Some(mut cycle) = g.find_cycle(&alive) {
        cycle.sort_by(|&a, &b| edge_order(g, a, b));
        let removed = cycle.into_iter().find(|&i| {
            alive[i] = false;
            if g.witness_path(&alive).is_some() {
                true
            } else {
                alive[i] = true;
                false
            }
        });
        if removed.is_none() {
            return Err(DecodeError::CycleDetected);
        }
    }
    Ok(g.keep(&alive))
}

fn edge_order(g: &ExprGraph, a: usize, b: usize) -> std::cmp::Ordering {
    let (ea, eb) = (&g.edges[a], &g.edges[b]);
    ea.weight
        .total_cmp(&eb.weight)
        .then(ea.src.cmp(&eb.src))
        .then(ea.dst.cmp(&eb.dst))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathResult {
    /// Graph node indices from `<sos>` to `<eos>`.
    pub nodes: Vec<usize>,
    pub weight: f64,
    /// Classes of the non-virtual nodes on the path.
    pub tokens: Vec<ClassId>,
}

impl PathResult {
    pub fn latex(&self, vocab: &TokenVocab) -> String {
        emit_latex_lenient(&self.tokens, vocab)
    }
}

/// Maximum-weight `<sos> → <eos>` path by dynamic programming over a
/// topological order, `O(V + E)`. Ties keep the smaller predecessor index.
pub fn longest_path(g: &ExprGraph) -> Result<PathResult, DecodeError> {
    let n = g.nodes.len();
    if n < 2 {
        return Err(DecodeError::NoPath);
    }
    // CSR adjacency
    let mut start = vec![0usize; n + 1];
    let mut indegree = vec![0usize; n];
    for e in &g.edges {
        start[e.src + 1] += 1;
        indegree[e.dst] += 1;
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut adj = vec![0usize; g.edges.len()];
    for (i, e) in g.edges.iter().enumerate() {
        adj[fill[e.src]] = i;
        fill[e.src] += 1;
    }

    let mut order = Vec::with_capacity(n);
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &e in &adj[start[u]..start[u + 1]] {
            let v = g.edges[e].dst;
            indegree[v] -= 1;
            if indegree[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    if order.len() != n {
        return Err(DecodeError::CycleDetected);
    }

    let mut best = vec![f64::NEG_INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    best[g.sos()] = 0.0;
    for &u in &order {
        if best[u] == f64::NEG_INFINITY {
            continue;
        }
        for &e in &adj[start[u]..start[u + 1]] {
            let Edge { dst: v, weight, .. } = g.edges[e];
            let cand = best[u] + weight;
            let better = cand > best[v] || (cand == best[v] && pred[v].is_some_and(|p| u < p));
            if better {
                best[v] = cand;
                pred[v] = Some(u);
            }
        }
    }

    let eos = g.eos();
    if pred[eos].is_none() {
        return Err(DecodeError::NoPath);
    }
    let mut nodes = vec![eos];
    let mut v = eos;
    while let Some(u) = pred[v] {
        nodes.push(u);
        v = u;
    }
    nodes.reverse();
    let tokens = nodes[1..nodes.len() - 1]
        .iter()
        .filter_map(|&i| g.nodes[i].class)
        .collect();
    Ok(PathResult {
        nodes,
        weight: best[eos],
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::oracle::{oracle_longest_path, random_dag};
    use proptest::prelude::*;

    pub(crate) fn graph(n: usize, edges: &[(usize, usize, f64)]) -> ExprGraph {
        ExprGraph {
            nodes: (0..n)
                .map(|i| GraphNode {
                    label: format!("v{i}"),
                    class: None,
                    cell: None,
                })
                .collect(),
            edges: edges
                .iter()
                .map(|&(src, dst, weight)| Edge { src, dst, weight })
                .collect(),
        }
    }

    #[test]
    fn chain_is_its_own_longest_path() {
        let g = graph(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]);
        let p = longest_path(&g).unwrap();
        assert_eq!(p.nodes, [0, 1, 2, 3]);
        assert_eq!(p.weight, 3.0);
    }

    #[test]
    fn diamond_takes_heavier_branch() {
        // 0 → 1 → 3 weighs 1.5, 0 → 2 → 3 weighs 1.2
        let g = graph(4, &[(0, 1, 0.75), (1, 3, 0.75), (0, 2, 0.6), (2, 3, 0.6)]);
        let p = longest_path(&g).unwrap();
        assert_eq!(p.nodes, [0, 1, 3]);
        assert_eq!(p.weight, 1.5);
    }

    #[test]
    fn ties_prefer_smaller_predecessor() {
        let g = graph(4, &[(0, 2, 1.0), (2, 3, 1.0), (0, 1, 1.0), (1, 3, 1.0)]);
        assert_eq!(longest_path(&g).unwrap().nodes, [0, 1, 3]);
    }

    #[test]
    fn path_errors() {
        let g = graph(3, &[(0, 1, 1.0)]);
        assert!(matches!(longest_path(&g), Err(DecodeError::NoPath)));
        let g = graph(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 1, 1.0)]);
        assert!(matches!(longest_path(&g), Err(DecodeError::CycleDetected)));
    }

    #[test]
    fn virtual_only_graph() {
        let g = graph(2, &[(0, 1, 0.3)]);
        let p = longest_path(&g).unwrap();
        assert_eq!(p.nodes, [0, 1]);
        assert!(p.tokens.is_empty());
    }

    #[test]
    fn strong_acyclic_graph_is_unchanged() {
        let g = graph(4, &[(0, 1, 0.9), (1, 2, 1.9), (2, 3, 0.5), (0, 2, 0.7)]);
        assert_eq!(prune_and_acyclify(&g, 0.5).unwrap(), g);
    }

    #[test]
    fn weak_edge_on_only_path_is_kept() {
        let g = graph(
            4,
            &[
                (0, 1, 1.0),
                (1, 2, 0.1),
                (2, 3, 1.0),
                (2, 1, 0.2),
                (0, 2, 0.3),
            ],
        );
        let pruned = prune_and_acyclify(&g, 0.5).unwrap();
        // 0→2 (0.3) is lighter than... no: 1→2 (0.1) goes first and cuts
        // nothing because 0→2 still leads on; then 2→1 (0.2) goes; then
        // 0→2 (0.3) is the last link and stays.
        let kept: Vec<(usize, usize)> = pruned.edges.iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(kept, [(0, 1), (2, 3), (0, 2)]);
        assert!(pruned.eos_reachable());

        let g = graph(3, &[(0, 1, 1.0), (1, 2, 0.01)]);
        assert_eq!(prune_and_acyclify(&g, 0.5).unwrap(), g);
    }

    #[test]
    fn two_cycle_loses_lighter_edge() {
        // a = 1, b = 2
        let g = graph(4, &[(0, 1, 1.0), (1, 2, 0.9), (2, 1, 0.6), (2, 3, 1.0)]);
        let out = prune_and_acyclify(&g, 0.5).unwrap();
        let kept: Vec<(usize, usize)> = out.edges.iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(kept, [(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn cycle_break_respects_reachability() {
        // the lighter cycle edge 1→2 is the only way on to <eos>
        let g = graph(4, &[(0, 1, 1.0), (1, 2, 0.6), (2, 1, 0.9), (2, 3, 1.0)]);
        let out = prune_and_acyclify(&g, 0.5).unwrap();
        let kept: Vec<(usize, usize)> = out.edges.iter().map(|e| (e.src, e.dst)).collect();
        assert_eq!(kept, [(0, 1), (1, 2), (2, 3)]);
    }

    #[test]
    fn unreachable_input_is_no_path() {
        let g = graph(3, &[(0, 1, 1.0)]);
        assert!(matches!(
            prune_and_acyclify(&g, 0.5),
            Err(DecodeError::NoPath)
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn dp_matches_enumeration(seed in any::<u64>(), n in 2usize..=10) {
            let g = random_dag(n, 0.4, seed);
            match (longest_path(&g), oracle_longest_path(&g)) {
                (Ok(p), Ok(o)) => {
                    prop_assert_eq!(p.weight, o.weight);
                    prop_assert_eq!(p.nodes, o.nodes);
                }
                (Err(DecodeError::NoPath), Err(_)) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn pruning_preserves_reachability_and_acyclicity(
            seed in any::<u64>(),
            n in 2usize..=9,
            eps in 0.0f64..2.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut edges = Vec::new();
            for s in 0..n - 1 {
                for d in 1..n {
                    if s != d && rng.random_bool(0.35) {
                        edges.push((s, d, rng.random_range(0.0..2.0)));
                    }
                }
            }
            let g = graph(n, &edges);
            let before = g.eos_reachable();
            match prune_and_acyclify(&g, eps) {
                Ok(out) => {
                    prop_assert!(before);
                    prop_assert!(out.eos_reachable());
                    prop_assert!(longest_path(&out).is_ok());
                }
                Err(DecodeError::NoPath) => prop_assert!(!before),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
