//! Training-target generation by windowed bipartite matching.
//!
//! Teacher attention gives a rough position per label token; each token is
//! then matched to one grid cell inside a `km × km` window around that
//! position, preferring cells where the tokenizer already scores the
//! token's class highly. The matching result becomes the per-cell target
//! grid and, through the label chain, the node-level targets of the graph
//! heads.

mod hungarian;
mod loss;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hungarian::{assignment_cost, hungarian};
pub use loss::{loss_all, loss_pgd, loss_vat, PgdLoss};

use crate::latex::{
    end_parents, gt_targets, CanonicalTokenSeq, ClassId, LatexError, NodeTargets, TokenVocab,
};
use crate::tensor_io::{AttentionStack, Grid, Tensor, TensorError};

/// Cost given to cells outside a token's matching window.
pub const BIG_M: f64 = 1e6;

pub const DEFAULT_KERNEL: usize = 5;

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error("attention has {steps} steps; label needs {needed}")]
    StepMismatch { steps: usize, needed: usize },
    #[error("matching kernel must be odd, got {0}")]
    EvenKernel(usize),
    #[error("probability grid has {actual} channels, vocab expects {expected}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("{rows} tokens cannot be matched to {cols} cells")]
    Infeasible { rows: usize, cols: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("assignment does not cover the label's tokens: {0}")]
    Incomplete(String),
    #[error(transparent)]
    Latex(#[from] LatexError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Estimated `(row, col)` of each predictable label token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<(usize, usize)>,
}

/// `L × (H·W)` matching cost.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Per-cell class targets, `<none>` where nothing was matched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetGrid {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<ClassId>,
}

impl TargetGrid {
    pub fn get(&self, row: usize, col: usize) -> ClassId {
        self.classes[row * self.width + col]
    }

    /// One-hot probability grid reproducing these targets exactly.
    pub fn one_hot(&self, channels: usize) -> Grid {
        let mut g = Grid::zeros(channels, self.height, self.width);
        for (i, c) in self.classes.iter().enumerate() {
            g.set(c.index(), i / self.width, i % self.width, 1.0);
        }
        g
    }

    /// Class ids as an `H × W` f32 tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.classes.iter().map(|c| c.0 as f32).collect();
        Tensor::new(vec![self.height, self.width], data).expect("class ids are finite")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentTarget {
    pub grid: TargetGrid,
    /// Cell of every token of the full label; imaginary ends take their
    /// parent structure's cell.
    pub node_cells: Vec<(usize, usize)>,
    #[serde(flatten)]
    pub targets: NodeTargets,
}

fn argmax_first(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax cell of each predictable token's attention slice.
///
/// The stack may be aligned with the full label (one step per node token,
/// end steps skipped) or already restricted to the predictable tokens.
pub fn estimate_positions(
    attn: &AttentionStack,
    label: &CanonicalTokenSeq,
    vocab: &TokenVocab,
) -> Result<PositionEstimate, AssignmentError> {
    let predictable: Vec<usize> = label.predictable(vocab).map(|(i, _)| i).collect();
    let steps: Vec<usize> = if attn.steps >= label.len() {
        predictable
    } else if attn.steps == predictable.len() {
        (0..predictable.len()).collect()
    } else {
        return Err(AssignmentError::StepMismatch {
            steps: attn.steps,
            needed: label.len(),
        });
    };
    let cells = steps
        .into_iter()
        .map(|s| {
            let i = argmax_first(attn.step(s));
            (i / attn.width, i % attn.width)
        })
        .collect();
    Ok(PositionEstimate {
        height: attn.height,
        width: attn.width,
        cells,
    })
}

/// Windowed matching cost: `|P[class](cell) − 1|` inside the `km × km`
/// window around each estimated position, [`BIG_M`] outside.
pub fn build_cost(
    p: &Grid,
    positions: &PositionEstimate,
    label: &CanonicalTokenSeq,
    vocab: &TokenVocab,
    km: usize,
) -> Result<CostMatrix, AssignmentError> {
    if km.is_multiple_of(2) {
        return Err(AssignmentError::EvenKernel(km));
    }
    if p.channels != vocab.grid_channels() {
        return Err(AssignmentError::ChannelMismatch {
            expected: vocab.grid_channels(),
            actual: p.channels,
        });
    }
    if (p.height, p.width) != (positions.height, positions.width) {
        return Err(AssignmentError::ShapeMismatch(format!(
            "grid {}x{} vs positions on {}x{}",
            p.height, p.width, positions.height, positions.width
        )));
    }
    let classes: Vec<ClassId> = label.predictable(vocab).map(|(_, c)| c).collect();
    if classes.len() != positions.cells.len() {
        return Err(AssignmentError::ShapeMismatch(format!(
            "{} positions for {} predictable tokens",
            positions.cells.len(),
            classes.len()
        )));
    }
    let half = km / 2;
    let (h, w) = (p.height, p.width);
    let mut data = vec![BIG_M; classes.len() * h * w];
    for (l, (&class, &(tr, tc))) in classes.iter().zip(&positions.cells).enumerate() {
        if tr >= h || tc >= w {
            return Err(AssignmentError::ShapeMismatch(format!(
                "position ({tr},{tc}) outside {h}x{w} grid"
            )));
        }
        let plane = p.channel(class.index());
        for r in tr.saturating_sub(half)..=(tr + half).min(h - 1) {
            for c in tc.saturating_sub(half)..=(tc + half).min(w - 1) {
                data[l * h * w + r * w + c] = (plane[r * w + c] as f64 - 1.0).abs();
            }
        }
    }
    Ok(CostMatrix {
        rows: classes.len(),
        cols: h * w,
        data,
    })
}

/// Converts a matching into the target grid and node-level targets.
pub fn make_targets(
    assignment: &[(usize, usize)],
    label: &CanonicalTokenSeq,
    vocab: &TokenVocab,
    height: usize,
    width: usize,
) -> Result<AssignmentTarget, AssignmentError> {
    let predictable: Vec<(usize, ClassId)> = label.predictable(vocab).collect();
    if assignment.len() != predictable.len() {
        return Err(AssignmentError::Incomplete(format!(
            "{} pairs for {} tokens",
            assignment.len(),
            predictable.len()
        )));
    }
    let mut grid = vec![vocab.none_class(); height * width];
    let mut token_cell = vec![None; predictable.len()];
    for &(row, cell) in assignment {
        if row >= predictable.len() || cell >= grid.len() {
            return Err(AssignmentError::Incomplete(format!(
                "pair ({row},{cell}) out of range"
            )));
        }
        if token_cell[row].is_some() || grid[cell] != vocab.none_class() {
            return Err(AssignmentError::Incomplete(format!(
                "pair ({row},{cell}) is not one-to-one"
            )));
        }
        grid[cell] = predictable[row].1;
        token_cell[row] = Some((cell / width, cell % width));
    }

    let parents = end_parents(label, vocab)?;
    let mut node_cells: Vec<(usize, usize)> = Vec::with_capacity(label.len());
    let mut next = 0;
    for (i, parent) in parents.iter().enumerate() {
        let cell = match parent {
            Some(p) => node_cells[*p],
            None if vocab.role(label.tokens[i]).is_predictable() => {
                next += 1;
                token_cell[next - 1].expect("every row is assigned")
            }
            None => {
                return Err(AssignmentError::Incomplete(format!(
                    "token {i} is neither predictable nor a group end"
                )))
            }
        };
        node_cells.push(cell);
    }

    Ok(AssignmentTarget {
        grid: TargetGrid {
            height,
            width,
            classes: grid,
        },
        node_cells,
        targets: gt_targets(label),
    })
}

/// Positions → cost → optimal matching → targets, for one sample.
pub fn match_sample(
    p: &Grid,
    attn: &AttentionStack,
    label: &CanonicalTokenSeq,
    vocab: &TokenVocab,
    km: usize,
) -> Result<AssignmentTarget, AssignmentError> {
    let positions = estimate_positions(attn, label, vocab)?;
    let cost = build_cost(p, &positions, label, vocab, km)?;
    let pairs = hungarian(&cost)?;
    make_targets(&pairs, label, vocab, p.height, p.width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latex::{build_vocab, parse_latex};
    use crate::synth::oracle::oracle_hungarian;
    use proptest::prelude::*;

    fn vocab() -> TokenVocab {
        build_vocab(&["\\frac { x } { y } + a ^ { b }"]).unwrap()
    }

    fn peaked(steps: &[(usize, usize)], h: usize, w: usize) -> AttentionStack {
        let mut data = vec![0.01f32; steps.len() * h * w];
        for (s, &(r, c)) in steps.iter().enumerate() {
            data[s * h * w + r * w + c] = 1.0;
        }
        AttentionStack::new(steps.len(), h, w, data).unwrap()
    }

    #[test]
    fn single_token_peak() {
        let v = vocab();
        let label = parse_latex("a", &v).unwrap();
        let est = estimate_positions(&peaked(&[(2, 3)], 4, 5), &label, &v).unwrap();
        assert_eq!(est.cells, [(2, 3)]);
    }

    #[test]
    fn uniform_slice_ties_to_origin() {
        let v = vocab();
        let label = parse_latex("a", &v).unwrap();
        let attn = AttentionStack::new(1, 3, 3, vec![0.5; 9]).unwrap();
        assert_eq!(
            estimate_positions(&attn, &label, &v).unwrap().cells,
            [(0, 0)]
        );
    }

    #[test]
    fn end_steps_are_skipped() {
        let v = vocab();
        let label = parse_latex("\\frac { x } { y }", &v).unwrap();
        // steps for \frac, x, }, y, }
        let attn = peaked(&[(1, 1), (0, 1), (3, 3), (2, 1), (3, 3)], 4, 4);
        let est = estimate_positions(&attn, &label, &v).unwrap();
        assert_eq!(est.cells, [(1, 1), (0, 1), (2, 1)]);
        // pre-filtered stacks are accepted as well
        let attn = peaked(&[(1, 1), (0, 1), (2, 1)], 4, 4);
        assert_eq!(
            estimate_positions(&attn, &label, &v).unwrap().cells.len(),
            3
        );
        let attn = peaked(&[(1, 1), (0, 1)], 4, 4);
        assert!(matches!(
            estimate_positions(&attn, &label, &v),
            Err(AssignmentError::StepMismatch { steps: 2, .. })
        ));
    }

    fn uniform_grid(v: &TokenVocab, h: usize, w: usize) -> Grid {
        let c = v.grid_channels();
        Grid::new(c, h, w, vec![1.0 / c as f32; c * h * w]).unwrap()
    }

    #[test]
    fn unit_kernel_single_entry() {
        let v = vocab();
        let label = parse_latex("a", &v).unwrap();
        let mut p = uniform_grid(&v, 3, 3);
        let a = v.lookup("a").unwrap().index();
        p.set(a, 1, 2, 0.9);
        let pos = PositionEstimate {
            height: 3,
            width: 3,
            cells: vec![(1, 2)],
        };
        let d = build_cost(&p, &pos, &label, &v, 1).unwrap();
        let cheap: Vec<(usize, f64)> = d
            .row(0)
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, x)| *x < BIG_M)
            .collect();
        assert_eq!(cheap.len(), 1);
        assert_eq!(cheap[0].0, 5);
        assert!((cheap[0].1 - 0.1).abs() < 1e-6);
        assert!(d.row(0).iter().filter(|&&x| x == BIG_M).count() == 8);
    }

    #[test]
    fn corner_window_is_clipped() {
        let v = vocab();
        let label = parse_latex("a", &v).unwrap();
        let p = uniform_grid(&v, 6, 6);
        let pos = PositionEstimate {
            height: 6,
            width: 6,
            cells: vec![(0, 0)],
        };
        let d = build_cost(&p, &pos, &label, &v, 5).unwrap();
        let inside: Vec<f64> = d.row(0).iter().copied().filter(|&x| x < BIG_M).collect();
        assert_eq!(inside.len(), 9);
        // uniform P: every in-window cost is the same
        assert!(inside.iter().all(|&x| x == inside[0]));
    }

    #[test]
    fn cost_errors() {
        let v = vocab();
        let label = parse_latex("a", &v).unwrap();
        let p = uniform_grid(&v, 3, 3);
        let pos = PositionEstimate {
            height: 3,
            width: 3,
            cells: vec![(0, 0)],
        };
        assert!(matches!(
            build_cost(&p, &pos, &label, &v, 4),
            Err(AssignmentError::EvenKernel(4))
        ));
        let bad = Grid::new(2, 3, 3, vec![0.5; 18]).unwrap();
        assert!(matches!(
            build_cost(&bad, &pos, &label, &v, 3),
            Err(AssignmentError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn single_token_target_grid() {
        let v = vocab();
        let label = parse_latex("a", &v).unwrap();
        let t = make_targets(&[(0, 4)], &label, &v, 3, 3).unwrap();
        assert_eq!(t.grid.get(1, 1), v.lookup("a").unwrap());
        assert_eq!(
            t.grid
                .classes
                .iter()
                .filter(|&&c| c == v.none_class())
                .count(),
            8
        );
    }

    #[test]
    fn script_end_inherits_parent_cell() {
        let v = vocab();
        let label = parse_latex("a ^ { b }", &v).unwrap();
        let t = make_targets(&[(0, 0), (1, 5), (2, 6)], &label, &v, 3, 4).unwrap();
        assert_eq!(
            t.grid
                .classes
                .iter()
                .filter(|&&c| c != v.none_class())
                .count(),
            3
        );
        assert_eq!(t.targets.self_targets.len(), 4);
        assert_eq!(t.node_cells, [(0, 0), (1, 1), (1, 2), (1, 1)]);
    }

    #[test]
    fn empty_label_is_all_none() {
        let v = vocab();
        let label = CanonicalTokenSeq::new(vec![]);
        let t = make_targets(&[], &label, &v, 2, 2).unwrap();
        assert!(t.grid.classes.iter().all(|&c| c == v.none_class()));
        assert!(t.node_cells.is_empty());
    }

    #[test]
    fn duplicate_cells_are_rejected() {
        let v = vocab();
        let label = parse_latex("a + b", &v).unwrap();
        assert!(matches!(
            make_targets(&[(0, 1), (1, 1), (2, 2)], &label, &v, 2, 2),
            Err(AssignmentError::Incomplete(_))
        ));
    }

    #[test]
    fn match_sample_on_peaked_inputs() {
        let v = vocab();
        let label = parse_latex("\\frac { x } { y }", &v).unwrap();
        let attn = peaked(&[(1, 1), (0, 1), (1, 1), (2, 1), (1, 1)], 3, 3);
        let mut p = uniform_grid(&v, 3, 3);
        for (sym, r, c) in [("\\frac", 1, 1), ("x", 0, 2), ("y", 2, 1)] {
            p.set(v.lookup(sym).unwrap().index(), r, c, 0.95);
        }
        let t = match_sample(&p, &attn, &label, &v, 3).unwrap();
        assert_eq!(t.grid.get(0, 2), v.lookup("x").unwrap());
        assert_eq!(t.node_cells, [(1, 1), (0, 2), (1, 1), (2, 1), (1, 1)]);
        assert_eq!(t.targets.right_targets, [2, 3, 4, 5, 6]);
    }

    proptest! {
        #[test]
        fn larger_window_never_costs_more(
            seed in any::<u64>(),
            n in 1usize..5,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let v = vocab();
            let syms = ["a", "b", "x", "y"];
            let text: Vec<&str> = (0..n).map(|_| syms[rng.random_range(0..4)]).collect();
            let label = parse_latex(&text.join(" "), &v).unwrap();
            let (h, w) = (4, 5);
            let c = v.grid_channels();
            let p = Grid::new(c, h, w, (0..c * h * w).map(|_| rng.random::<f32>()).collect()).unwrap();
            let pos = PositionEstimate {
                height: h,
                width: w,
                cells: (0..n).map(|_| (rng.random_range(0..h), rng.random_range(0..w))).collect(),
            };
            let mut last = f64::INFINITY;
            for km in [1, 3, 5, 7] {
                let d = build_cost(&p, &pos, &label, &v, km).unwrap();
                let cost = assignment_cost(&d, &hungarian(&d).unwrap());
                let oracle = assignment_cost(&d, &oracle_hungarian(&d).unwrap());
                prop_assert!((cost - oracle).abs() < 1e-9);
                prop_assert!(cost <= last + 1e-9);
                last = cost;
            }
        }
    }
}
