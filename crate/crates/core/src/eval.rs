//! Point-adjusted detection metrics and root-cause HitRate.

use serde::{Deserialize, Serialize};

use crate::data::CausalSegment;
use crate::error::{Error, Result};
use crate::interpret::{rank_causes, segment_detected};
use crate::numerics::Tensor;

/// Marks a whole labeled run as detected when any of its steps is.
pub fn point_adjust(pred: &[bool], labels: &[bool]) -> Vec<bool> {
    let mut out = pred.to_vec();
    for (s, e) in segment_detected(labels) {
        if pred[s..=e].iter().any(|&p| p) {
            out[s..=e].iter_mut().for_each(|p| *p = true);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pointwise precision, recall and F1; each is 0 when undefined.
pub fn prf1(pred: &[bool], labels: &[bool]) -> Prf {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &l) in pred.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = ratio(2 * tp, 2 * tp + fp + fneg);
    Prf { precision, recall, f1 }
}

/// Fraction of `gt` found among the first `⌊pct/100 · |gt|⌋` ranked
/// features (capped at the ranking length).
pub fn hitrate(ranked: &[usize], gt: &[usize], pct: usize) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::invalid("hitrate needs a nonempty ground-truth set"));
    }
    let k = (pct * gt.len() / 100).min(ranked.len());
    let hits = ranked[..k].iter().filter(|f| gt.contains(f)).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Evaluation of one ground-truth segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub start: usize,
    pub end: usize,
    pub causes: Vec<usize>,
    pub detected: bool,
    /// Detected run with the largest overlap.
    pub matched: Option<(usize, usize)>,
    pub ranking: Vec<usize>,
    pub hitrate100: f64,
    pub hitrate150: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub hitrate100: f64,
    pub hitrate150: f64,
    pub missed: usize,
    pub per_segment: Vec<SegmentReport>,
}

/// Thresholds `agg`, scores detection with point adjustment and explains
/// each ground-truth segment from its best-overlapping detected run.
pub fn evaluate_run(scores: &Tensor, agg: &[f64], threshold: f64, labels: &[bool], truth: &[CausalSegment]) -> Result<Report> {
    if agg.len() != labels.len() || scores.rows() != agg.len() {
        return Err(Error::shape(
            "evaluate_run",
            format!("{} score rows, {} aggregates, {} labels", scores.rows(), agg.len(), labels.len()),
        ));
    }
    let flagged: Vec<bool> = agg.iter().map(|&a| a > threshold).collect();
    let metrics = prf1(&point_adjust(&flagged, labels), labels);
    let runs = segment_detected(&flagged);

    let mut per_segment = Vec::with_capacity(truth.len());
    for seg in truth {
        if seg.causes.is_empty() {
            log::warn!("skipping segment {}..={} without causal features", seg.start, seg.end);
            continue;
        }
        let overlap = |&(s, e): &(usize, usize)| (e.min(seg.end) + 1).saturating_sub(s.max(seg.start));
        let matched = runs
            .iter()
            .filter(|r| overlap(r) > 0)
            .fold(None, |best: Option<(usize, usize)>, r| match best {
                Some(b) if overlap(&b) >= overlap(r) => Some(b),
                _ => Some(*r),
            });
        let (ranking, h100, h150) = match matched {
            Some((s, e)) => {
                let ranking = rank_causes(scores, s, e)?.features();
                let (a, b) = (hitrate(&ranking, &seg.causes, 100)?, hitrate(&ranking, &seg.causes, 150)?);
                (ranking, a, b)
            }
            None => (Vec::new(), 0.0, 0.0),
        };
        per_segment.push(SegmentReport {
            start: seg.start,
            end: seg.end,
            causes: seg.causes.clone(),
            detected: matched.is_some(),
            matched,
            ranking,
            hitrate100: h100,
            hitrate150: h150,
        });
    }
    let mean = |f: fn(&SegmentReport) -> f64| {
        if per_segment.is_empty() {
            0.0
        } else {
            per_segment.iter().map(f).sum::<f64>() / per_segment.len() as f64
        }
    };
    Ok(Report {
        precision: metrics.precision,
        recall: metrics.recall,
        f1: metrics.f1,
        threshold,
        hitrate100: mean(|s| s.hitrate100),
        hitrate150: mean(|s| s.hitrate150),
        missed: per_segment.iter().filter(|s| !s.detected).count(),
        per_segment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adjusts_whole_runs() {
        let labels = [false, false, true, true, true, true, false];
        let pred = [false, false, false, true, false, false, false];
        assert_eq!(point_adjust(&pred, &labels), vec![false, false, true, true, true, true, false]);
        let none = [false; 7];
        assert_eq!(point_adjust(&none, &labels), none.to_vec());
    }

    #[test]
    fn metric_examples() {
        let labels = [true, false, true, false];
        assert_eq!(
            prf1(&labels, &labels),
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        let inv: Vec<bool> = labels.iter().map(|l| !l).collect();
        assert_eq!(prf1(&inv, &labels), Prf::default());
        let pred = vec![true; 10];
        let mut lab = vec![true; 8];
        lab.extend([false, false]);
        let m = prf1(&pred, &lab);
        assert!((m.precision - 0.8).abs() < 1e-15);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn hitrate_examples() {
        assert_eq!(hitrate(&[0, 9, 1, 8, 2, 7, 3], &[0, 1, 2, 3], 150).unwrap(), 0.75);
        assert_eq!(hitrate(&[4, 2, 0, 1, 3], &[2, 4], 100).unwrap(), 1.0);
        // k = ⌊1.5·3⌋ = 4
        assert_eq!(hitrate(&[5, 6, 7, 0, 1], &[0, 1, 2], 150).unwrap(), 1.0 / 3.0);
        assert!(hitrate(&[0, 1], &[], 100).is_err());
    }

    #[test]
    fn random_ranking_hitrate_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = [2, 5, 11, 13, 17];
        let mut ranking: Vec<usize> = (0..20).collect();
        let trials = 10_000;
        let mut total = 0.0;
        for _ in 0..trials {
            ranking.shuffle(&mut rng);
            total += hitrate(&ranking, &gt, 100).unwrap();
        }
        assert!((total / trials as f64 - 0.25).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn point_adjust_matches_per_run_oracle(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..50)) {
            let (pred, labels): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            let adj = point_adjust(&pred, &labels);
            for t in 0..labels.len() {
                if !labels[t] {
                    prop_assert_eq!(adj[t], pred[t]);
                    continue;
                }
                let (mut s, mut e) = (t, t);
                while s > 0 && labels[s - 1] { s -= 1; }
                while e + 1 < labels.len() && labels[e + 1] { e += 1; }
                prop_assert_eq!(adj[t], pred[s..=e].iter().any(|&p| p));
            }
            let before = prf1(&pred, &labels);
            let after = prf1(&adj, &labels);
            prop_assert!(after.recall >= before.recall);
            prop_assert!(after.f1 >= before.f1);
        }

        #[test]
        fn hitrate_bounded_and_monotone(seed in any::<u64>(), n in 2usize..15, g in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ranking: Vec<usize> = (0..n).collect();
            ranking.shuffle(&mut rng);
            let gt: Vec<usize> = ranking.iter().copied().filter(|x| x % 3 == 0).take(g).collect();
            prop_assume!(!gt.is_empty());
            let a = hitrate(&ranking, &gt, 100).unwrap();
            let b = hitrate(&ranking, &gt, 150).unwrap();
            prop_assert!((0.0..=1.0).contains(&a) && a <= b && b <= 1.0);
        }
    }

    #[test]
    fn perfect_run() {
        // feature 1 carries the anomaly, feature 0 is flat
        let scores = Tensor::from_fn(10, 3, |t, i| match (i, t) {
            (1, 4..=6) => 1.0 + t as f64,
            (2, 4..=6) => 0.5 + 0.1 * t as f64,
            _ => 0.0,
        });
        let labels: Vec<bool> = (0..10).map(|t| (4..=6).contains(&t)).collect();
        let agg = crate::scoring::aggregate(&scores);
        let truth = [CausalSegment {
            start: 4,
            end: 6,
            causes: vec![1, 2],
        }];
        let r = evaluate_run(&scores, &agg, 0.0, &labels, &truth).unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.hitrate100, 1.0);
        assert_eq!(r.per_segment[0].matched, Some((4, 6)));
    }

    #[test]
    fn nothing_detected() {
        let scores = Tensor::zeros(&[6, 2]);
        let labels = [false, true, true, false, false, false];
        let truth = [CausalSegment {
            start: 1,
            end: 2,
            causes: vec![0],
        }];
        let r = evaluate_run(&scores, &[0.0; 6], 0.5, &labels, &truth).unwrap();
        assert_eq!((r.f1, r.hitrate100, r.hitrate150, r.missed), (0.0, 0.0, 0.0, 1));
    }

    #[test]
    fn hand_computed_walkthrough() {
        // T = 12, three features. Truth: segment A = 2..=4 caused by {0},
        // segment B = 8..=10 caused by {1, 2}.
        #[rustfmt::skip]
        let rows = [
            [0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.2, 0.0, 0.0], [0.9, 0.1, 0.3], [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0], [0.6, 0.0, 0.0], [0.0, 0.0, 0.0], [0.1, 0.5, 0.4], [0.2, 0.8, 0.6],
            [0.0, 0.0, 0.0], [0.0, 0.0, 0.0],
        ];
        let scores = Tensor::from_fn(12, 3, |t, i| rows[t][i]);
        let agg = crate::scoring::aggregate(&scores);
        let labels: Vec<bool> = (0..12).map(|t| (2..=4).contains(&t) || (8..=10).contains(&t)).collect();
        let truth = [
            CausalSegment {
                start: 2,
                end: 4,
                causes: vec![0],
            },
            CausalSegment {
                start: 8,
                end: 10,
                causes: vec![1, 2],
            },
        ];
        let r = evaluate_run(&scores, &agg, 0.45, &labels, &truth).unwrap();
        // flagged: 3, 6, 8, 9 -> adjusted: 2..=4, 6, 8..=10 -> TP 6, FP 1
        assert!((r.precision - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        // A matches the single step 3: ranked by score, feature 0 first
        assert_eq!(r.per_segment[0].matched, Some((3, 3)));
        assert_eq!(r.per_segment[0].ranking, vec![0, 2, 1]);
        // B matches 8..=9: anchor 1 (peak 0.8), feature 2 moves with it
        assert_eq!(r.per_segment[1].ranking[..2], [1, 2]);
        assert_eq!((r.hitrate100, r.hitrate150), (1.0, 1.0));
    }
}
