//! Reconstruction, triplet, compactness and attention-uniformity losses.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Margin and term weights of the composite objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lambda1: 0.01,
            lambda2: 0.1,
            lambda3: 1e-4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return Err(Error::invalid(format!("triplet margin must be positive, got {}", self.margin)));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Tape handles of every loss term.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub mae: Var,
    pub triplet: Var,
    pub compact: Var,
    pub uniform: Var,
    pub total: Var,
}

/// Plain values of the loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub mae: f64,
    pub triplet: f64,
    pub compact: f64,
    pub uniform: f64,
    pub total: f64,
}

impl LossParts {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let v = |x: Var| tape.value(x).item();
        LossValues {
            mae: v(self.mae),
            triplet: v(self.triplet),
            compact: v(self.compact),
            uniform: v(self.uniform),
            total: v(self.total),
        }
    }
}

impl std::ops::AddAssign for LossValues {
    fn add_assign(&mut self, o: Self) {
        self.mae += o.mae;
        self.triplet += o.triplet;
        self.compact += o.compact;
        self.uniform += o.uniform;
        self.total += o.total;
    }
}

impl LossValues {
    pub fn scaled(self, c: f64) -> Self {
        Self {
            mae: self.mae * c,
            triplet: self.triplet * c,
            compact: self.compact * c,
            uniform: self.uniform * c,
            total: self.total * c,
        }
    }
}

fn squared_distance(tape: &mut Tape, query: Var, items: Var, idx: &[usize]) -> Result<Var> {
    let picked = tape.gather_rows(items, idx)?;
    let diff = tape.sub(query, picked)?;
    let sq = tape.mul(diff, diff)?;
    tape.sum_rows(sq)
}

fn check_indices(tape: &Tape, query: Var, items: Var, idx: &[usize]) -> Result<()> {
    let m = tape.shape(items)[0];
    if idx.len() != tape.shape(query)[0] {
        return Err(Error::shape(
            "loss",
            format!("{} indices for {} query rows", idx.len(), tape.shape(query)[0]),
        ));
    }
    if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
        return Err(Error::invalid(format!("memory index {bad} out of range for {m} items")));
    }
    Ok(())
}

/// `Σ max{‖Q−M[pos]‖² − ‖Q−M[neg]‖² + λ, 0} / batch`.
pub fn triplet_loss(tape: &mut Tape, query: Var, items: Var, pos: &[usize], neg: &[usize], margin: f64, batch: usize) -> Result<Var> {
    check_indices(tape, query, items, pos)?;
    check_indices(tape, query, items, neg)?;
    if pos.iter().zip(neg).any(|(p, n)| p == n) {
        return Err(Error::invalid("positive and negative memory items coincide"));
    }
    let dp = squared_distance(tape, query, items, pos)?;
    let dn = squared_distance(tape, query, items, neg)?;
    let gap = tape.sub(dp, dn)?;
    let shifted = tape.add_scalar(gap, margin)?;
    let hinge = tape.relu(shifted)?;
    let total = tape.sum(hinge)?;
    tape.scale(total, 1.0 / batch as f64)
}

/// `Σ ‖Q−M[pos]‖² / batch`.
pub fn compact_loss(tape: &mut Tape, query: Var, items: Var, pos: &[usize], batch: usize) -> Result<Var> {
    check_indices(tape, query, items, pos)?;
    let dp = squared_distance(tape, query, items, pos)?;
    let total = tape.sum(dp)?;
    tape.scale(total, 1.0 / batch as f64)
}

/// KL divergence from the uniform distribution to the softmax of the
/// attention mass summed over all rows.
pub fn kl_uniform_loss(tape: &mut Tape, attention: Var) -> Result<Var> {
    let m = tape.shape(attention)[1];
    let mass = tape.sum_cols(attention)?;
    let logp = tape.log_softmax(mass)?;
    let mean = tape.mean(logp)?;
    tape.rsub_scalar(-(m as f64).ln(), mean)
}

/// Mean absolute error over every entry.
pub fn reconstruction_loss(tape: &mut Tape, target: Var, recon: Var) -> Result<Var> {
    let diff = tape.sub(target, recon)?;
    let a = tape.abs(diff)?;
    tape.mean(a)
}

/// Weighted sum `L_MAE + λ1 L1 + λ2 L2 + λ3 L3`.
pub fn total_loss(tape: &mut Tape, mae: Var, triplet: Var, compact: Var, uniform: Var, cfg: &LossConfig) -> Result<Var> {
    let t1 = tape.scale(triplet, cfg.lambda1)?;
    let t2 = tape.scale(compact, cfg.lambda2)?;
    let t3 = tape.scale(uniform, cfg.lambda3)?;
    let a = tape.add(mae, t1)?;
    let b = tape.add(a, t2)?;
    tape.add(b, t3)
}

/// Builds every term for one batch.
#[allow(clippy::too_many_arguments)]
pub fn all_losses(
    tape: &mut Tape,
    target: &Tensor,
    recon: Var,
    query: Var,
    items: Var,
    attention: Var,
    pos: &[usize],
    neg: &[usize],
    batch: usize,
    cfg: &LossConfig,
) -> Result<LossParts> {
    let target = tape.constant(target.clone());
    let mae = reconstruction_loss(tape, target, recon)?;
    let triplet = triplet_loss(tape, query, items, pos, neg, cfg.margin, batch)?;
    let compact = compact_loss(tape, query, items, pos, batch)?;
    let uniform = kl_uniform_loss(tape, attention)?;
    let total = total_loss(tape, mae, triplet, compact, uniform, cfg)?;
    Ok(LossParts {
        mae,
        triplet,
        compact,
        uniform,
        total,
    })
}
