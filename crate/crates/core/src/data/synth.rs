//! Synthetic coupled-sinusoid benchmark with labeled anomalies.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{CausalSegment, DatasetBundle};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    Spike,
    LevelShift,
    CorrelationBreak,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [AnomalyKind::Spike, AnomalyKind::LevelShift, AnomalyKind::CorrelationBreak];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Spike => "spike",
            AnomalyKind::LevelShift => "level-shift",
            AnomalyKind::CorrelationBreak => "correlation-break",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown anomaly type {s:?}")))
    }
}

/// One anomaly to inject: type, span length and number of causal features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub span: usize,
    pub causal: usize,
}

impl fmt::Display for AnomalySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.span, self.causal)
    }
}

impl FromStr for AnomalySpec {
    type Err = Error;

    /// `kind:span:causal`, e.g. `spike:40:2`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [kind, span, causal] = parts[..] else {
            return Err(Error::invalid(format!("anomaly spec {s:?} is not kind:span:causal")));
        };
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad number {v:?} in anomaly spec {s:?}")))
        };
        Ok(Self {
            kind: kind.parse()?,
            span: int(span)?,
            causal: int(causal)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub nodes: usize,
    pub t_train: usize,
    pub t_test: usize,
    /// Range of the per-node sinusoid periods, in samples.
    pub period_min: f64,
    pub period_max: f64,
    /// Probability of each extra undirected edge beyond the base ring.
    pub edge_density: f64,
    /// Scale of the lagged neighbor copies.
    pub coupling: f64,
    pub noise: f64,
    pub anomalies: Vec<AnomalySpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let spec = |kind| AnomalySpec { kind, span: 40, causal: 2 };
        Self {
            nodes: 8,
            t_train: 4000,
            t_test: 2000,
            period_min: 20.0,
            period_max: 120.0,
            edge_density: 0.2,
            coupling: 1.0,
            noise: 0.1,
            anomalies: [AnomalyKind::Spike, AnomalyKind::LevelShift, AnomalyKind::CorrelationBreak]
                .repeat(2)
                .into_iter()
                .map(spec)
                .collect(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::invalid("synthetic data needs at least 2 nodes"));
        }
        if self.t_train == 0 || self.t_test == 0 {
            return Err(Error::invalid("synthetic splits must be nonempty"));
        }
        if !(self.period_min >= 2.0 && self.period_max >= self.period_min) {
            return Err(Error::invalid(format!(
                "bad period range [{}, {}]",
                self.period_min, self.period_max
            )));
        }
        if !(0.0..=1.0).contains(&self.edge_density) {
            return Err(Error::invalid(format!("edge density {} outside [0, 1]", self.edge_density)));
        }
        if !(self.noise >= 0.0 && self.coupling >= 0.0) {
            return Err(Error::invalid("noise and coupling must be nonnegative"));
        }
        for a in &self.anomalies {
            if a.span == 0 || a.causal == 0 || a.causal > self.nodes {
                return Err(Error::invalid(format!(
                    "anomaly {a} needs span ≥ 1 and 1 ≤ causal ≤ {}",
                    self.nodes
                )));
            }
            if a.kind == AnomalyKind::CorrelationBreak && a.causal < 2 {
                return Err(Error::invalid(format!(
                    "anomaly {a}: a correlation break needs at least 2 causal nodes"
                )));
            }
        }
        Ok(())
    }
}

/// Directed coupling: `target` receives `weight · base_source(t − lag)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub target: usize,
    pub source: usize,
    pub weight: f64,
    pub lag: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InjectedAnomaly {
    pub kind: AnomalyKind,
    pub start: usize,
    pub end: usize,
    pub causes: Vec<usize>,
}

/// Generated dataset plus the generator's ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBundle {
    pub bundle: DatasetBundle,
    pub anomalies: Vec<InjectedAnomaly>,
    pub couplings: Vec<Coupling>,
}

struct Node {
    periods: [f64; 2],
    phases: [f64; 2],
}

impl Node {
    fn base(&self, t: f64) -> f64 {
        (TAU * t / self.periods[0] + self.phases[0]).sin() + 0.5 * (TAU * t / self.periods[1] + self.phases[1]).sin()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Deterministic in `cfg` (seed included).
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes;

    let nodes: Vec<Node> = (0..n)
        .map(|_| Node {
            periods: [0, 1].map(|_| rng.gen_range(cfg.period_min..=cfg.period_max)),
            phases: [0, 1].map(|_| rng.gen_range(0.0..TAU)),
        })
        .collect();

    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect();
    for i in 0..n {
        for j in i + 1..n {
            let ring = j == i + 1 || (i == 0 && j == n - 1);
            if !ring && rng.gen::<f64>() < cfg.edge_density {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let mut couplings = Vec::new();
    for &(i, j) in &edges {
        for (target, source) in [(i, j), (j, i)] {
            couplings.push(Coupling {
                target,
                source,
                weight: cfg.coupling * rng.gen_range(0.7..1.0),
                lag: rng.gen_range(1..=5),
            });
        }
    }

    let total = cfg.t_train + cfg.t_test;
    let base: Vec<Vec<f64>> = nodes.iter().map(|nd| (0..total).map(|t| nd.base(t as f64)).collect()).collect();
    let coupled = |i: usize, t: usize| -> f64 {
        couplings
            .iter()
            .filter(|c| c.target == i)
            .map(|c| c.weight * nodes[c.source].base(t as f64 - c.lag as f64))
            .sum()
    };
    let coupling_part: Vec<Vec<f64>> = (0..n).map(|i| (0..total).map(|t| coupled(i, t)).collect()).collect();
    let mut x = vec![vec![0.0; total]; n];
    for t in 0..total {
        for i in 0..n {
            x[i][t] = base[i][t] + coupling_part[i][t] + cfg.noise * normal(&mut rng);
        }
    }

    let train_std: Vec<f64> = x.iter().map(|row| std_dev(&row[..cfg.t_train])).collect();
    let coupling_std: Vec<f64> = coupling_part.iter().map(|row| std_dev(&row[..cfg.t_train])).collect();

    let spans = place_spans(cfg, &mut rng)?;
    let mut injected = Vec::with_capacity(spans.len());
    for (spec, start) in cfg.anomalies.iter().zip(spans) {
        let end = start + spec.span - 1;
        let causes = pick_causes(spec, n, &edges, &mut rng);
        for &i in &causes {
            for t in start..=end {
                let g = cfg.t_train + t;
                match spec.kind {
                    AnomalyKind::Spike if (t - start) % 5 == 0 => x[i][g] += 6.0 * train_std[i],
                    AnomalyKind::Spike => {}
                    AnomalyKind::LevelShift => x[i][g] += 4.0 * train_std[i],
                    AnomalyKind::CorrelationBreak => {
                        x[i][g] += coupling_std[i] * normal(&mut rng) - coupling_part[i][g];
                    }
                }
            }
        }
        injected.push(InjectedAnomaly {
            kind: spec.kind,
            start,
            end,
            causes,
        });
    }

    let mut labels = vec![false; cfg.t_test];
    for a in &injected {
        labels[a.start..=a.end].iter_mut().for_each(|l| *l = true);
    }
    let split = |range: std::ops::Range<usize>| {
        let len = range.len();
        Tensor::from_fn(n, len, |i, t| x[i][range.start + t])
    };
    let bundle = DatasetBundle {
        names: (0..n).map(|i| format!("x{i}")).collect(),
        train: split(0..cfg.t_train),
        test: split(cfg.t_train..total),
        labels,
        interpretation: injected
            .iter()
            .map(|a| CausalSegment {
                start: a.start,
                end: a.end,
                causes: a.causes.clone(),
            })
            .collect(),
        note: format!("synthetic coupled sinusoids, {n} nodes, seed {}", cfg.seed),
    };
    bundle.validate()?;
    Ok(SyntheticBundle {
        bundle,
        anomalies: injected,
        couplings,
    })
}

/// One span per equal-width slot of the test split, kept a quarter slot
/// away from the slot borders.
fn place_spans(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let k = cfg.anomalies.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let slot = cfg.t_test / k;
    let gap = slot / 4;
    let mut starts = Vec::with_capacity(k);
    for (s, spec) in cfg.anomalies.iter().enumerate() {
        if slot < spec.span + 2 * gap {
            return Err(Error::invalid(format!(
                "cannot fit {k} anomalies of span {} into {} test steps",
                spec.span, cfg.t_test
            )));
        }
        starts.push(s * slot + rng.gen_range(gap..=slot - gap - spec.span));
    }
    Ok(starts)
}

fn pick_causes(spec: &AnomalySpec, n: usize, edges: &[(usize, usize)], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut causes = match spec.kind {
        AnomalyKind::CorrelationBreak => {
            let &(i, j) = edges.choose(rng).expect("ring edges exist");
            let mut set = vec![i, j];
            while set.len() < spec.causal {
                let frontier: Vec<usize> = edges
                    .iter()
                    .flat_map(|&(a, b)| [(a, b), (b, a)])
                    .filter(|(a, b)| set.contains(a) && !set.contains(b))
                    .map(|(_, b)| b)
                    .collect();
                set.push(*frontier.choose(rng).expect("connected ring"));
            }
            set
        }
        _ => rand::seq::index::sample(rng, n, spec.causal).into_vec(),
    };
    causes.sort_unstable();
    causes
}

fn std_dev(x: &[f64]) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}
