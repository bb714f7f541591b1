//! Attention-shift anomaly scores, seasonal removal and threshold search.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::eval::{point_adjust, prf1, Prf};
use crate::memory::AttentionSnapshot;
use crate::model::MixadModel;
use crate::numerics::{Tape, Tensor};
use crate::training::stack_windows;

/// Base-2 Jensen-Shannon divergence. Inputs are renormalized.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::shape("jsd", format!("{} vs {} entries", p.len(), q.len())));
    }
    if p.iter().chain(q).any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::invalid("jsd needs finite nonnegative entries"));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if sp <= 0.0 || sq <= 0.0 {
        return Err(Error::invalid("jsd needs distributions with positive mass"));
    }
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let mid = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / mid).log2();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / mid).log2();
        }
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// Encoder-final attention for every stride-1 window of a normalized
/// `N×T` series: entry `k` belongs to the window ending at `k + w − 1`.
pub fn attention_trace(model: &MixadModel, x: &Tensor, batch: usize) -> Result<Vec<AttentionSnapshot>> {
    let (n, w) = (model.config.nodes, model.config.window);
    let starts = crate::training::window_starts(x.cols(), w, 1)?;
    let mut trace = Vec::with_capacity(starts.len());
    for chunk in starts.chunks(batch.max(1)) {
        let stacked = stack_windows(x, chunk, w);
        let mut tape = Tape::new();
        let bound = model.params.bind_frozen(&mut tape);
        let graph = model.graph(&mut tape, &bound, None)?;
        let (_, read) = model.encode(&mut tape, &bound, &stacked, graph.normalized)?;
        let full = AttentionSnapshot::from_read(&tape, &read);
        for b in 0..chunk.len() {
            let rows = b * n..(b + 1) * n;
            let pick = |t: &Tensor| Tensor::from_fn(n, t.cols(), |i, j| t.get(rows.start + i, j));
            trace.push(AttentionSnapshot {
                attention: pick(&full.attention),
                query: pick(&full.query),
                pos: full.pos[rows.clone()].to_vec(),
                neg: full.neg[rows].to_vec(),
            });
        }
    }
    Ok(trace)
}

/// `T×N` raw scores: `s_t^i = jsd(att_{t−1}^i, att_t^i)`. Timestamps
/// without a predecessor snapshot score 0.
pub fn attention_scores(trace: &[Tensor], window: usize) -> Result<Tensor> {
    if trace.len() < 2 {
        return Err(Error::invalid(format!(
            "attention trace needs at least 2 snapshots, got {}",
            trace.len()
        )));
    }
    let n = trace[0].rows();
    let t_total = trace.len() + window - 1;
    let mut s = Tensor::zeros(&[t_total, n]);
    for k in 1..trace.len() {
        for i in 0..n {
            s.set(k + window - 1, i, jsd(trace[k - 1].row(i), trace[k].row(i))?);
        }
    }
    Ok(s)
}

/// Peak-to-median ratio a spectrum of `bins` moduli must reach to count as
/// periodic: at least 3, and high enough that the largest of `bins`
/// Rayleigh-distributed noise moduli passes it about 1% of the time.
pub fn flatness_factor(bins: usize) -> f64 {
    (100.0 * bins as f64).log2().sqrt().max(3.0)
}

/// Dominant period in samples, or `None` for a flat spectrum.
pub fn detect_period(series: &[f64]) -> Option<usize> {
    let t = series.len();
    if t < 4 {
        return None;
    }
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(t).process(&mut buf);
    let modulus: Vec<f64> = buf[1..=t / 2].iter().map(|c| c.norm()).collect();
    let (k_star, &peak) = modulus
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, (k, m)| if *m > *best.1 { (k, m) } else { best });
    let scale: f64 = series.iter().map(|x| x.abs()).sum();
    if peak <= 1e-9 * scale || peak == 0.0 {
        return None;
    }
    let mut sorted = modulus.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    if peak < flatness_factor(sorted.len()) * median {
        return None;
    }
    Some((t as f64 / (k_star + 1) as f64).round() as usize)
}

/// Per-phase seasonal component of `x` for period `p`, mean-centered.
pub fn seasonal_component(x: &[f64], p: usize) -> Vec<f64> {
    let t = x.len();
    let half = p / 2;
    // centered moving average of width p (a 2×p average when p is even)
    let trend = |c: usize| -> f64 {
        if p % 2 == 1 {
            x[c - half..=c + half].iter().sum::<f64>() / p as f64
        } else {
            let inner: f64 = x[c - half + 1..c + half].iter().sum();
            (inner + 0.5 * (x[c - half] + x[c + half])) / p as f64
        }
    };
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    for c in half..t.saturating_sub(half) {
        sums[c % p] += x[c] - trend(c);
        counts[c % p] += 1;
    }
    let phase: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let mean = phase.iter().sum::<f64>() / p as f64;
    (0..t).map(|c| phase[c % p] - mean).collect()
}

/// Removes the detected seasonal component from every column of `s`
/// (`T×N`). Returns the adjusted scores and each column's period.
pub fn deseasonalize(s: &Tensor) -> Result<(Tensor, Vec<Option<usize>>)> {
    if !s.is_finite() {
        return Err(Error::NonFinite("deseasonalize input".into()));
    }
    let (t, n) = (s.rows(), s.cols());
    let mut out = s.clone();
    let mut periods = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = (0..t).map(|r| s.get(r, i)).collect();
        let p = detect_period(&col).filter(|&p| p >= 2 && 2 * p < t);
        if let Some(p) = p {
            let seasonal = seasonal_component(&col, p);
            for (r, v) in seasonal.into_iter().enumerate() {
                out.set(r, i, col[r] - v);
            }
        }
        periods.push(p);
    }
    Ok((out, periods))
}

/// Row-wise maximum of a `T×N` matrix.
pub fn aggregate(s: &Tensor) -> Vec<f64> {
    (0..s.rows())
        .map(|r| s.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Raw, adjusted and aggregated scores of one test series.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub raw: Tensor,
    pub adjusted: Tensor,
    pub agg: Vec<f64>,
    pub periods: Vec<Option<usize>>,
}

pub fn score_series(trace: &[Tensor], window: usize) -> Result<ScoreSeries> {
    let raw = attention_scores(trace, window)?;
    let (adjusted, periods) = deseasonalize(&raw)?;
    let agg = aggregate(&adjusted);
    Ok(ScoreSeries {
        raw,
        adjusted,
        agg,
        periods,
    })
}

pub const THRESHOLD_CANDIDATES: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct Threshold {
    pub cut: f64,
    pub flagged: Vec<bool>,
    /// Point-adjusted metrics at `cut`.
    pub metrics: Prf,
    /// Labels were all equal, so the metrics carry no information.
    pub degenerate: bool,
}

pub fn flag(agg: &[f64], cut: f64) -> Vec<bool> {
    agg.iter().map(|&a| a > cut).collect()
}

/// Cut with the best point-adjusted F1 among evenly spaced order
/// statistics of `agg`; the lowest such cut wins ties.
pub fn best_f1_threshold(agg: &[f64], labels: &[bool]) -> Result<Threshold> {
    if agg.len() != labels.len() || agg.is_empty() {
        return Err(Error::shape(
            "best_f1_threshold",
            format!("{} scores, {} labels", agg.len(), labels.len()),
        ));
    }
    let degenerate = labels.iter().all(|&l| l) || labels.iter().all(|&l| !l);
    if degenerate {
        log::warn!("labels are all equal; precision/recall/F1 are degenerate");
    }
    let mut sorted = agg.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = sorted.len();
    let mut best: Option<(f64, Prf)> = None;
    for k in 0..THRESHOLD_CANDIDATES {
        let cut = sorted[k * (t - 1) / (THRESHOLD_CANDIDATES - 1)];
        let m = prf1(&point_adjust(&flag(agg, cut), labels), labels);
        let better = match &best {
            None => true,
            Some((c, b)) => m.f1 > b.f1 || (m.f1 == b.f1 && cut < *c),
        };
        if better {
            best = Some((cut, m));
        }
    }
    let (cut, metrics) = best.expect("at least one candidate");
    Ok(Threshold {
        cut,
        flagged: flag(agg, cut),
        metrics,
        degenerate,
    })
}
