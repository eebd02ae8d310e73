//! Cross-entropy losses for the tokenizer grid and the three graph heads.

use serde::Serialize;

use super::{AssignmentError, TargetGrid};
use crate::latex::NodeTargets;
use crate::tensor_io::{Grid, ScoreMatrix};

/// Mean over all cells of `-ln P[target](cell)`; `p` must already be
/// softmax-normalized.
pub fn loss_vat(p: &Grid, target: &TargetGrid) -> Result<f64, AssignmentError> {
    if p.height != target.height || p.width != target.width {
        return Err(AssignmentError::ShapeMismatch(format!(
            "grid {}x{} vs target {}x{}",
            p.height, p.width, target.height, target.width
        )));
    }
    let cells = p.cells();
    if cells == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0f64;
    for (i, class) in target.classes.iter().enumerate() {
        let c = class.index();
        if c >= p.channels {
            return Err(AssignmentError::ShapeMismatch(format!(
                "target class {c} outside {} channels",
                p.channels
            )));
        }
        let term = -(p.get(c, i / p.width, i % p.width) as f64).ln();
        if !term.is_finite() {
            return Err(AssignmentError::NonFinite(i));
        }
        sum += term;
    }
    Ok(sum / cells as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PgdLoss {
    pub l_self: f64,
    pub l_left: f64,
    pub l_right: f64,
    pub total: f64,
}

fn mean_ce<I>(rows: I) -> Result<f64, AssignmentError>
where
    I: ExactSizeIterator<Item = (usize, f32)>,
{
    let n = rows.len();
    if n == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0f64;
    for (row, p) in rows {
        let term = -(p as f64).ln();
        if !term.is_finite() {
            return Err(AssignmentError::NonFinite(row));
        }
        sum += term;
    }
    Ok(sum / n as f64)
}

/// Self, left and right cross-entropies and their unweighted sum.
///
/// `self_probs` is `N × C` over self-head classes; `left`/`right` are
/// `(N+2) × (N+2)` with `<sos>` at index 0 and `<eos>` at `N+1`. Only the
/// `N` node rows carry targets.
pub fn loss_pgd(
    self_probs: &ScoreMatrix,
    left: &ScoreMatrix,
    right: &ScoreMatrix,
    targets: &NodeTargets,
) -> Result<PgdLoss, AssignmentError> {
    let n = targets.self_targets.len();
    if self_probs.rows != n {
        return Err(AssignmentError::ShapeMismatch(format!(
            "self head has {} rows for {n} nodes",
            self_probs.rows
        )));
    }
    if targets.left_targets.len() != n || targets.right_targets.len() != n {
        return Err(AssignmentError::ShapeMismatch(
            "target lists differ in length".into(),
        ));
    }
    for (name, m) in [("left", left), ("right", right)] {
        if m.rows != n + 2 || m.cols != n + 2 {
            return Err(AssignmentError::ShapeMismatch(format!(
                "{name} head is {}x{}, expected {}x{}",
                m.rows,
                m.cols,
                n + 2,
                n + 2
            )));
        }
    }
    if let Some(c) = targets
        .self_targets
        .iter()
        .find(|c| c.index() >= self_probs.cols)
    {
        return Err(AssignmentError::ShapeMismatch(format!(
            "self target {c} outside {} columns",
            self_probs.cols
        )));
    }
    if let Some(&t) = targets
        .left_targets
        .iter()
        .chain(&targets.right_targets)
        .find(|&&t| t >= n + 2)
    {
        return Err(AssignmentError::ShapeMismatch(format!(
            "connectivity target {t} out of range"
        )));
    }

    let l_self = mean_ce(
        targets
            .self_targets
            .iter()
            .enumerate()
            .map(|(i, c)| (i, self_probs.get(i, c.index()))),
    )?;
    let l_left = mean_ce(
        targets
            .left_targets
            .iter()
            .enumerate()
            .map(|(i, &t)| (i + 1, left.get(i + 1, t))),
    )?;
    let l_right = mean_ce(
        targets
            .right_targets
            .iter()
            .enumerate()
            .map(|(i, &t)| (i + 1, right.get(i + 1, t))),
    )?;
    Ok(PgdLoss {
        l_self,
        l_left,
        l_right,
        total: l_self + l_left + l_right,
    })
}

/// Overall training objective `L_VAT + λ·L_PGD`.
pub fn loss_all(vat: f64, pgd: &PgdLoss, lambda: f64) -> f64 {
    vat + lambda * pgd.total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latex::ClassId;

    fn target(h: usize, w: usize, classes: &[u32]) -> TargetGrid {
        TargetGrid {
            height: h,
            width: w,
            classes: classes.iter().map(|&c| ClassId(c)).collect(),
        }
    }

    #[test]
    fn vat_one_hot_correct_is_zero() {
        let t = target(2, 2, &[0, 1, 1, 0]);
        let p = t.one_hot(2);
        assert_eq!(loss_vat(&p, &t).unwrap(), 0.0);
    }

    #[test]
    fn vat_uniform_four_classes() {
        let t = target(3, 3, &[0, 1, 2, 3, 3, 3, 3, 3, 3]);
        let p = Grid::new(4, 3, 3, vec![0.25; 36]).unwrap();
        assert!((loss_vat(&p, &t).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((loss_vat(&p, &t).unwrap() - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn vat_hand_computed_two_by_two_by_two() {
        // channel-major: c0 = [.7 .2 / .4 .9], c1 = [.3 .8 / .6 .1]
        let p = Grid::new(2, 2, 2, vec![0.7, 0.2, 0.4, 0.9, 0.3, 0.8, 0.6, 0.1]).unwrap();
        let t = target(2, 2, &[0, 1, 0, 1]);
        // picks .7, .8, .4, .1
        let expected = -(0.7f64.ln() + 0.8f64.ln() + 0.4f64.ln() + 0.1f64.ln()) / 4.0;
        assert!((loss_vat(&p, &t).unwrap() - expected).abs() < 1e-6);
        assert!((expected - 0.949_673_58).abs() < 1e-8);
    }

    #[test]
    fn vat_errors() {
        let t = target(1, 2, &[0, 0]);
        let p = Grid::new(2, 2, 1, vec![0.5; 4]).unwrap();
        assert!(matches!(
            loss_vat(&p, &t),
            Err(AssignmentError::ShapeMismatch(_))
        ));
        let p = Grid::new(2, 1, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            loss_vat(&p, &t),
            Err(AssignmentError::NonFinite(0))
        ));
    }

    fn chain_targets(n: usize) -> NodeTargets {
        NodeTargets {
            self_targets: (0..n as u32).map(ClassId).collect(),
            left_targets: (0..n).collect(),
            right_targets: (2..n + 2).collect(),
        }
    }

    fn one_hot_rows(rows: usize, cols: usize, hot: impl Fn(usize) -> usize) -> ScoreMatrix {
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            data[r * cols + hot(r)] = 1.0;
        }
        ScoreMatrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn pgd_one_hot_correct_is_zero() {
        let t = chain_targets(3);
        let s = one_hot_rows(3, 5, |r| r);
        let l = one_hot_rows(5, 5, |r| r.saturating_sub(1));
        let r = one_hot_rows(5, 5, |r| (r + 1).min(4));
        let loss = loss_pgd(&s, &l, &r, &t).unwrap();
        assert_eq!(
            (loss.l_self, loss.l_left, loss.l_right, loss.total),
            (0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn pgd_uniform_five_candidates() {
        let t = chain_targets(3);
        let s = ScoreMatrix::new(3, 5, vec![0.2; 15]).unwrap();
        let m = ScoreMatrix::new(5, 5, vec![0.2; 25]).unwrap();
        let loss = loss_pgd(&s, &m, &m, &t).unwrap();
        let ln5 = 5f64.ln();
        for v in [loss.l_self, loss.l_left, loss.l_right] {
            assert!((v - ln5).abs() < 1e-6);
        }
        assert!((loss.total - 3.0 * ln5).abs() < 1e-6);
    }

    #[test]
    fn combined_objective_uses_lambda() {
        let t = chain_targets(3);
        let s = ScoreMatrix::new(3, 5, vec![0.2; 15]).unwrap();
        let m = ScoreMatrix::new(5, 5, vec![0.2; 25]).unwrap();
        let pgd = loss_pgd(&s, &m, &m, &t).unwrap();
        let vat = 4f64.ln();
        assert_eq!(loss_all(vat, &pgd, 0.5), vat + 0.5 * pgd.total);
    }

    #[test]
    fn pgd_shape_errors() {
        let t = chain_targets(3);
        let s = ScoreMatrix::new(2, 5, vec![0.2; 10]).unwrap();
        let m = ScoreMatrix::new(5, 5, vec![0.2; 25]).unwrap();
        assert!(matches!(
            loss_pgd(&s, &m, &m, &t),
            Err(AssignmentError::ShapeMismatch(_))
        ));
        let s = ScoreMatrix::new(3, 5, vec![0.2; 15]).unwrap();
        let small = ScoreMatrix::new(4, 4, vec![0.25; 16]).unwrap();
        assert!(matches!(
            loss_pgd(&s, &small, &m, &t),
            Err(AssignmentError::ShapeMismatch(_))
        ));
    }
}
