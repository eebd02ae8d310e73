//! Expression recognition rates and stage timing summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::StageTimes;
use crate::latex::{parse_latex, ClassId, LatexError, TokenVocab};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{preds} predictions for {refs} references")]
    LengthMismatch { preds: usize, refs: usize },
    #[error("no samples")]
    EmptyInput,
    #[error("reference {index}: {source}")]
    BadReference {
        index: usize,
        #[source]
        source: LatexError,
    },
}

/// Levenshtein distance over class ids, unit costs.
pub fn token_edit_distance(a: &[ClassId], b: &[ClassId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub exprate: f64,
    pub leq1: f64,
    pub leq2: f64,
    pub n: usize,
    /// `None` where the prediction could not be parsed.
    pub per_sample: Vec<Option<usize>>,
}

impl EvalReport {
    pub fn from_distances(per_sample: Vec<Option<usize>>) -> Self {
        let n = per_sample.len();
        let share = |k: usize| {
            if n == 0 {
                0.0
            } else {
                per_sample
                    .iter()
                    .filter(|d| d.is_some_and(|d| d <= k))
                    .count() as f64
                    / n as f64
            }
        };
        Self {
            exprate: share(0),
            leq1: share(1),
            leq2: share(2),
            n,
            per_sample,
        }
    }
}

/// Scores predictions against references on canonical token sequences.
pub fn evaluate<S: AsRef<str> + Sync>(
    preds: &[S],
    refs: &[S],
    vocab: &TokenVocab,
) -> Result<EvalReport, MetricsError> {
    if preds.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            refs: refs.len(),
        });
    }
    let distances = preds
        .par_iter()
        .zip(refs.par_iter())
        .enumerate()
        .map(|(index, (p, r))| {
            let r = parse_latex(r.as_ref(), vocab)
                .map_err(|source| MetricsError::BadReference { index, source })?;
            Ok(parse_latex(p.as_ref(), vocab)
                .ok()
                .map(|p| token_edit_distance(&p.tokens, &r.tokens)))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    Ok(EvalReport::from_distances(distances))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeSummary {
    pub n: usize,
    pub mean: StageTimes,
    pub median: StageTimes,
    pub mean_total_ms: f64,
    pub median_total_ms: f64,
    pub fps: f64,
}

pub fn time_stats(samples: &[StageTimes]) -> Result<TimeSummary, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mean =
        |f: fn(&StageTimes) -> f64| samples.iter().map(f).sum::<f64>() / samples.len() as f64;
    let median = |f: fn(&StageTimes) -> f64| {
        let mut v: Vec<f64> = samples.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 1 {
            v[m]
        } else {
            (v[m - 1] + v[m]) / 2.0
        }
    };
    let mean_total_ms = mean(StageTimes::total);
    Ok(TimeSummary {
        n: samples.len(),
        mean: StageTimes {
            vat: mean(|s| s.vat),
            pgd: mean(|s| s.pgd),
            path: mean(|s| s.path),
        },
        median: StageTimes {
            vat: median(|s| s.vat),
            pgd: median(|s| s.pgd),
            path: median(|s| s.path),
        },
        mean_total_ms,
        median_total_ms: median(StageTimes::total),
        fps: 1000.0 / mean_total_ms,
    })
}
