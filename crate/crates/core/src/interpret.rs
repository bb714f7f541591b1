//! Root-cause ranking for detected anomaly segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Maximal runs of `true` as inclusive `(start, end)` pairs.
pub fn segment_detected(flagged: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &f) in flagged.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flagged.len() - 1));
    }
    out
}

/// Pearson correlation; 0 when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
}

/// Explanation of one detected segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySegment {
    pub start: usize,
    pub end: usize,
    pub anchor: usize,
    /// `(feature, strength)` with the anchor first. Strength is `|r|` with
    /// the anchor, or the score itself for single-step segments.
    pub ranked: Vec<(usize, f64)>,
    pub by_score: bool,
}

impl AnomalySegment {
    pub fn features(&self) -> Vec<usize> {
        self.ranked.iter().map(|&(f, _)| f).collect()
    }
}

/// Ranks the features of `scores` (`T×N`) over `start..=end` by absolute
/// correlation with the feature that peaks highest in the segment.
pub fn rank_causes(scores: &Tensor, start: usize, end: usize) -> Result<AnomalySegment> {
    if start > end || end >= scores.rows() {
        return Err(Error::invalid(format!(
            "segment {start}..={end} outside {} timestamps",
            scores.rows()
        )));
    }
    let n = scores.cols();
    let traces: Vec<Vec<f64>> = (0..n).map(|i| (start..=end).map(|t| scores.get(t, i)).collect()).collect();
    let peak = |i: usize| traces[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let anchor = (1..n).fold(0, |best, i| if peak(i) > peak(best) { i } else { best });

    let by_score = start == end;
    let mut others: Vec<(usize, f64)> = (0..n)
        .filter(|&i| i != anchor)
        .map(|i| {
            let strength = if by_score {
                traces[i][0]
            } else {
                pearson(&traces[i], &traces[anchor]).abs()
            };
            (i, strength)
        })
        .collect();
    others.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let lead = if by_score { traces[anchor][0] } else { 1.0 };
    let mut ranked = vec![(anchor, lead)];
    ranked.extend(others);
    Ok(AnomalySegment {
        start,
        end,
        anchor,
        ranked,
        by_score,
    })
}

/// Explains every maximal flagged run.
pub fn interpret(scores: &Tensor, flagged: &[bool]) -> Result<Vec<AnomalySegment>> {
    if flagged.len() != scores.rows() {
        return Err(Error::shape(
            "interpret",
            format!("{} flags for {} timestamps", flagged.len(), scores.rows()),
        ));
    }
    segment_detected(flagged)
        .into_iter()
        .map(|(s, e)| rank_causes(scores, s, e))
        .collect()
}
