//! Inference: grid extraction, imaginary-end expansion, self-corrections,
//! graph construction, pruning and longest-path selection.

mod graph;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{longest_path, prune_and_acyclify, Edge, ExprGraph, GraphNode, PathResult};

use crate::latex::{ClassId, TokenVocab};
use crate::tensor_io::{Grid, ScoreMatrix};

/// Row sums of the connectivity matrices may drift this far from 1.
pub const ROW_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{matrix} row {row} is not a probability distribution")]
    NonStochasticRow { matrix: &'static str, row: usize },
    #[error("no <sos> to <eos> path")]
    NoPath,
    #[error("graph contains a directed cycle")]
    CycleDetected,
    #[error("{head} head has {actual} rows, expected {expected}")]
    NodeCountMismatch {
        head: &'static str,
        expected: usize,
        actual: usize,
    },
}

/// A detected or imaginary token at a grid cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub class: ClassId,
    pub row: usize,
    pub col: usize,
    pub vat_score: f32,
    /// Position in the expanded list; the node's connectivity index is
    /// `source + 1`.
    pub source: usize,
    /// For imaginary ends, `source` of the structural node they close.
    pub attached_to: Option<usize>,
}

/// Per-cell argmax over `p` (softmaxed first when `logits`), dropping
/// cells whose winner is the none class. Raster order.
pub fn vat_extract(p: &Grid, vocab: &TokenVocab, logits: bool) -> Result<Vec<Node>, DecodeError> {
    if p.channels != vocab.grid_channels() {
        return Err(DecodeError::ShapeMismatch(format!(
            "grid has {} channels, vocabulary needs {}",
            p.channels,
            vocab.grid_channels()
        )));
    }
    let none = vocab.none_class().index();
    let mut nodes = Vec::new();
    let mut cell = vec![0f32; p.channels];
    for row in 0..p.height {
        for col in 0..p.width {
            for (c, v) in cell.iter_mut().enumerate() {
                *v = p.get(c, row, col);
            }
            if logits {
                softmax_in_place(&mut cell);
            }
            let (best, score) = argmax(&cell);
            if best != none {
                nodes.push(Node {
                    class: ClassId::from(best),
                    row,
                    col,
                    vat_score: score,
                    source: nodes.len(),
                    attached_to: None,
                });
            }
        }
    }
    Ok(nodes)
}

pub(crate) fn softmax_in_place(v: &mut [f32]) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Index and value of the maximum; the lowest index wins ties.
pub(crate) fn argmax(v: &[f32]) -> (usize, f32) {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    (best, v[best])
}

/// Inserts each structural node's imaginary ends right after it, at the
/// same cell. `\sqrt` receives two; an unused one is expected to be
/// deleted by the self head.
pub fn expand_imaginary(nodes: &[Node], vocab: &TokenVocab) -> Vec<Node> {
    let end = vocab.end_class();
    let mut out = Vec::with_capacity(nodes.len());
    for n in nodes {
        let parent = out.len();
        out.push(Node {
            source: parent,
            attached_to: None,
            ..n.clone()
        });
        for _ in 0..vocab.attached_ends(n.class) {
            out.push(Node {
                class: end,
                row: n.row,
                col: n.col,
                vat_score: n.vat_score,
                source: out.len(),
                attached_to: Some(parent),
            });
        }
    }
    out
}

/// Relabels node `i` with the argmax of self row `i`; rows won by the
/// delete class remove the node together with its attached ends.
pub fn apply_corrections(
    nodes: &[Node],
    self_probs: &ScoreMatrix,
    vocab: &TokenVocab,
) -> Result<Vec<Node>, DecodeError> {
    if self_probs.rows != nodes.len() {
        return Err(DecodeError::ShapeMismatch(format!(
            "self head has {} rows for {} nodes",
            self_probs.rows,
            nodes.len()
        )));
    }
    if self_probs.cols != vocab.self_head_width() {
        return Err(DecodeError::ShapeMismatch(format!(
            "self head has {} columns, vocabulary needs {}",
            self_probs.cols,
            vocab.self_head_width()
        )));
    }
    let delete = vocab.none_class().index();
    let mut removed = Vec::new();
    let mut out = Vec::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        if n.attached_to.is_some_and(|p| removed.contains(&p)) {
            removed.push(n.source);
            continue;
        }
        let (best, _) = argmax(self_probs.row(i));
        if best == delete {
            removed.push(n.source);
            continue;
        }
        out.push(Node {
            class: ClassId::from(best),
            ..n.clone()
        });
    }
    Ok(out)
}

/// Weighted digraph over `nodes` plus `<sos>`/`<eos>`. Connectivity
/// matrices are indexed by `source + 1`, with `<sos>` at 0 and `<eos>` at
/// the last index.
pub fn build_graph(
    nodes: &[Node],
    left: &ScoreMatrix,
    right: &ScoreMatrix,
    alpha_l2r: f64,
    alpha_r2l: f64,
    vocab: &TokenVocab,
) -> Result<ExprGraph, DecodeError> {
    let d = left.rows;
    for (name, m) in [("left", left), ("right", right)] {
        if m.rows != d || m.cols != d {
            return Err(DecodeError::ShapeMismatch(format!(
                "{name} head is {}x{}, expected {d}x{d}",
                m.rows, m.cols
            )));
        }
    }
    if d < 2 {
        return Err(DecodeError::ShapeMismatch(
            "connectivity needs <sos> and <eos>".into(),
        ));
    }
    if let Some(n) = nodes.iter().find(|n| n.source + 2 >= d) {
        return Err(DecodeError::ShapeMismatch(format!(
            "node {} outside {d}x{d} connectivity",
            n.source
        )));
    }
    for (name, m) in [("left", left), ("right", right)] {
        if let Some(row) = m.non_stochastic_row(ROW_TOLERANCE) {
            return Err(DecodeError::NonStochasticRow { matrix: name, row });
        }
    }

    let virtual_node = |class: ClassId| GraphNode {
        label: vocab.symbol(class).to_string(),
        class: None,
        cell: None,
    };
    let mut gnodes = vec![virtual_node(vocab.sos_class())];
    let mut index = vec![0usize];
    for n in nodes {
        gnodes.push(GraphNode {
            label: vocab.symbol(n.class).to_string(),
            class: Some(n.class),
            cell: Some((n.row, n.col)),
        });
        index.push(n.source + 1);
    }
    gnodes.push(virtual_node(vocab.eos_class()));
    index.push(d - 1);

    let last = gnodes.len() - 1;
    let mut edges = Vec::new();
    for src in 0..last {
        for dst in 1..=last {
            if src == dst {
                continue;
            }
            let (i, j) = (index[src], index[dst]);
            let weight = alpha_l2r * right.get(i, j) as f64 + alpha_r2l * left.get(j, i) as f64;
            edges.push(Edge { src, dst, weight });
        }
    }
    Ok(ExprGraph {
        nodes: gnodes,
        edges,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub epsilon: f64,
    pub alpha_l2r: f64,
    pub alpha_r2l: f64,
    /// Treat the grid as raw logits and softmax each cell.
    pub logits: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            alpha_l2r: 1.0,
            alpha_r2l: 1.0,
            logits: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Decoded {
    pub nodes: Vec<Node>,
    pub graph: ExprGraph,
    pub path: PathResult,
    pub latex: String,
}

/// Wall-clock milliseconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub vat: f64,
    pub pgd: f64,
    pub path: f64,
}

impl StageTimes {
    pub fn total(&self) -> f64 {
        self.vat + self.pgd + self.path
    }
}

pub fn decode_pipeline(
    p: &Grid,
    self_probs: &ScoreMatrix,
    left: &ScoreMatrix,
    right: &ScoreMatrix,
    config: &DecodeConfig,
    vocab: &TokenVocab,
) -> Result<Decoded, DecodeError> {
    decode_timed(p, self_probs, left, right, config, vocab).map(|(d, _)| d)
}

pub fn decode_timed(
    p: &Grid,
    self_probs: &ScoreMatrix,
    left: &ScoreMatrix,
    right: &ScoreMatrix,
    config: &DecodeConfig,
    vocab: &TokenVocab,
) -> Result<(Decoded, StageTimes), DecodeError> {
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let detected = vat_extract(p, vocab, config.logits)?;
    if detected.is_empty() {
        return Err(DecodeError::NoPath);
    }
    let expanded = expand_imaginary(&detected, vocab);
    let vat = ms(t);

    let t = Instant::now();
    let n = expanded.len();
    if self_probs.rows != n {
        return Err(DecodeError::NodeCountMismatch {
            head: "self",
            expected: n,
            actual: self_probs.rows,
        });
    }
    for (head, m) in [("left", left), ("right", right)] {
        if m.rows != n + 2 || m.cols != n + 2 {
            return Err(DecodeError::NodeCountMismatch {
                head,
                expected: n + 2,
                actual: m.rows,
            });
        }
    }
    let nodes = apply_corrections(&expanded, self_probs, vocab)?;
    if nodes.is_empty() {
        return Err(DecodeError::NoPath);
    }
    let full = build_graph(
        &nodes,
        left,
        right,
        config.alpha_l2r,
        config.alpha_r2l,
        vocab,
    )?;
    let pgd = ms(t);

    let t = Instant::now();
    let graph = prune_and_acyclify(&full, config.epsilon)?;
    let path = longest_path(&graph)?;
    let latex = path.latex(vocab);
    let path_ms = ms(t);

    Ok((
        Decoded {
            nodes,
            graph,
            path,
            latex,
        },
        StageTimes {
            vat,
            pgd,
            path: path_ms,
        },
    ))
}
