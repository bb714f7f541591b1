//! Windowing, min-max normalization and the training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{fmt_f64, write_atomic};
use crate::error::{Error, Result};
use crate::graph::sample_gumbel_difference;
use crate::losses::{all_losses, LossConfig, LossValues};
use crate::model::{MixadModel, ModelConfig};
use crate::numerics::{adam_step, clip_global_norm, AdamState, Tape, Tensor};

/// Per-feature minimum and maximum of the training split.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Features whose training range is a single value.
    pub degenerate: Vec<bool>,
}

impl NormalizationStats {
    /// `x` is `N×T`.
    pub fn fit(x: &Tensor) -> Self {
        let (min, max): (Vec<f64>, Vec<f64>) = (0..x.rows())
            .map(|i| {
                let row = x.row(i);
                (
                    row.iter().cloned().fold(f64::INFINITY, f64::min),
                    row.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                )
            })
            .unzip();
        let degenerate = min.iter().zip(&max).map(|(a, b)| a == b).collect();
        Self { min, max, degenerate }
    }

    /// Maps training values into `[0, 1]`. Other data may leave that range.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.min.len() {
            return Err(Error::shape(
                "normalize",
                format!("{} features, stats for {}", x.rows(), self.min.len()),
            ));
        }
        Ok(Tensor::from_fn(x.rows(), x.cols(), |i, t| {
            if self.degenerate[i] {
                0.5
            } else {
                (x.get(i, t) - self.min[i]) / (self.max[i] - self.min[i])
            }
        }))
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub window: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub stride: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub mem_items: usize,
    pub mem_dim: usize,
    pub hidden: usize,
    pub order: usize,
    pub tau: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 30,
            batch_size: 256,
            lr: 0.001,
            epochs: 30,
            patience: 10,
            val_fraction: 0.2,
            stride: 1,
            grad_clip: 5.0,
            seed: 0,
            mem_items: 5,
            mem_dim: 64,
            hidden: 64,
            order: 3,
            tau: 0.5,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::invalid(format!("window must be at least 2, got {}", self.window)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.patience > self.epochs {
            return Err(Error::invalid(format!("patience {} exceeds epochs {}", self.patience, self.epochs)));
        }
        if self.batch_size == 0 || self.stride == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size, stride and epochs must be positive"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 || self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::invalid("lr must be nonnegative and grad_clip positive"));
        }
        self.loss.validate()
    }

    pub fn model_config(&self, nodes: usize) -> ModelConfig {
        ModelConfig {
            nodes,
            window: self.window,
            mem_items: self.mem_items,
            mem_dim: self.mem_dim,
            hidden: self.hidden,
            order: self.order,
            tau: self.tau,
        }
    }
}

/// Start columns of every window of length `w` taken every `stride` steps.
pub fn window_starts(t: usize, w: usize, stride: usize) -> Result<Vec<usize>> {
    if w == 0 || t < w {
        return Err(Error::invalid(format!("series of length {t} is shorter than window {w}")));
    }
    Ok((0..=t - w).step_by(stride.max(1)).collect())
}

/// Every `N×w` window of `x` at the given stride.
pub fn make_windows(x: &Tensor, w: usize, stride: usize) -> Result<Vec<Tensor>> {
    let starts = window_starts(x.cols(), w, stride)?;
    Ok(starts
        .into_iter()
        .map(|s| Tensor::from_fn(x.rows(), w, |i, j| x.get(i, s + j)))
        .collect())
}

/// Stacks the windows starting at `starts` into a `(len·N)×w` matrix.
pub fn stack_windows(x: &Tensor, starts: &[usize], w: usize) -> Tensor {
    let n = x.rows();
    Tensor::from_fn(starts.len() * n, w, |r, j| x.get(r % n, starts[r / n] + j))
}

/// Per-epoch loss breakdown: training averages plus validation losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossValues,
    pub val_mae: f64,
    pub val_total: f64,
}

pub const LOG_HEADER: &str = "epoch,L_MAE,L1,L2,L3,total,val_L_MAE,val_total";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for e in log {
        let l = e.train;
        let cells = [l.mae, l.triplet, l.compact, l.uniform, l.total, e.val_mae, e.val_total].map(fmt_f64);
        out.push_str(&format!("{},{}\n", e.epoch, cells.join(",")));
    }
    out
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    write_atomic(path, log_csv(log).as_bytes())
}

/// Patience counter over a validation metric; lower is better.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records one epoch. Returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, val: f64) -> (bool, bool) {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: MixadModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Validation loss of the freshly initialized model.
    pub initial_val: f64,
}

/// Chronological split of `N×T` into training and validation parts.
pub fn split_series(x: &Tensor, val_fraction: f64, w: usize) -> Result<(Tensor, Tensor)> {
    let t = x.cols();
    let t_val = ((t as f64) * val_fraction).round() as usize;
    let t_fit = t - t_val;
    if t_fit < w || t_val < w {
        return Err(Error::invalid(format!(
            "a {t}-step series split {t_fit}/{t_val} leaves a part shorter than window {w}"
        )));
    }
    let part = |s: usize, len: usize| Tensor::from_fn(x.rows(), len, |i, j| x.get(i, s + j));
    Ok((part(0, t_fit), part(t_fit, t_val)))
}

/// Mean losses of `model` over every window of `x`, using the eval-mode graph.
pub fn evaluate_loss(model: &MixadModel, x: &Tensor, starts: &[usize], batch_size: usize, loss: &LossConfig) -> Result<LossValues> {
    let w = model.config.window;
    let mut acc = LossValues::default();
    for chunk in starts.chunks(batch_size) {
        let batch = stack_windows(x, chunk, w);
        let mut tape = Tape::new();
        let bound = model.params.bind_frozen(&mut tape);
        let graph = model.graph(&mut tape, &bound, None)?;
        let out = model.forward(&mut tape, &bound, &batch, graph)?;
        let parts = all_losses(
            &mut tape,
            &batch,
            out.reconstruction,
            out.read.query,
            bound[model.mem_items],
            out.read.attention,
            &out.read.pos,
            &out.read.neg,
            chunk.len(),
            loss,
        )?;
        acc += parts.values(&tape).scaled(chunk.len() as f64);
    }
    Ok(acc.scaled(1.0 / starts.len() as f64))
}

/// One optimizer step on a stacked batch. Returns the batch losses.
pub fn train_step(
    model: &mut MixadModel,
    adam: &mut AdamState,
    batch: &Tensor,
    windows: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let noise = sample_gumbel_difference(model.config.nodes, rng);
    let graph = model.graph(&mut tape, &bound, Some(&noise))?;
    let out = model.forward(&mut tape, &bound, batch, graph)?;
    let parts = all_losses(
        &mut tape,
        batch,
        out.reconstruction,
        out.read.query,
        bound[model.mem_items],
        out.read.attention,
        &out.read.pos,
        &out.read.neg,
        windows,
        &cfg.loss,
    )?;
    let values = parts.values(&tape);
    tape.backward(parts.total)?;
    let mut grads = model.params.collect_grads(&mut tape, &bound);
    for (g, t) in grads.iter_mut().zip(model.params.tensors()) {
        g.get_or_insert_with(|| Tensor::zeros(t.shape()));
    }
    let norm = clip_global_norm(&mut grads, cfg.grad_clip);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    adam_step(&mut model.params, &grads, adam)?;
    Ok(values)
}

/// Trains on a normalized `N×T` series with early stopping on the
/// chronologically last `val_fraction` of it.
pub fn train(mut model: MixadModel, x: &Tensor, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let w = cfg.window;
    if model.config.window != w || model.config.nodes != x.rows() {
        return Err(Error::invalid("model configuration does not match the training data"));
    }
    let (fit, val) = split_series(x, cfg.val_fraction, w)?;
    let mut fit_starts = window_starts(fit.cols(), w, cfg.stride)?;
    let val_starts = window_starts(val.cols(), w, cfg.stride)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = AdamState::new(&model.params, cfg.lr);

    let initial_val = evaluate_loss(&model, &val, &val_starts, cfg.batch_size, &cfg.loss)?.total;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params.clone();
    let mut log = Vec::new();
    log::info!(
        "training on {} windows, validating on {}, {} parameters",
        fit_starts.len(),
        val_starts.len(),
        model.params.num_scalars()
    );

    for epoch in 1..=cfg.epochs {
        fit_starts.shuffle(&mut rng);
        let mut acc = LossValues::default();
        for (step, chunk) in fit_starts.chunks(cfg.batch_size).enumerate() {
            let batch = stack_windows(&fit, chunk, w);
            let values = train_step(&mut model, &mut adam, &batch, chunk.len(), cfg, &mut rng).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} (epoch {epoch}, step {step})")),
                other => other,
            })?;
            acc += values.scaled(chunk.len() as f64);
        }
        let train_avg = acc.scaled(1.0 / fit_starts.len() as f64);
        let val_loss = evaluate_loss(&model, &val, &val_starts, cfg.batch_size, &cfg.loss).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("{what} (validation, epoch {epoch})")),
            other => other,
        })?;
        let val_total = val_loss.total;
        log.push(EpochLog {
            epoch,
            train: train_avg,
            val_mae: val_loss.mae,
            val_total,
        });
        let (improved, stop) = stopper.update(epoch, val_total);
        log::info!(
            "epoch {epoch}: mae {:.5} total {:.5} val {:.5}{}",
            train_avg.mae,
            train_avg.total,
            val_total,
            if improved { " *" } else { "" }
        );
        if improved {
            best = model.params.clone();
        }
        if stop {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    model.params = best;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: stopper.best_epoch(),
        best_val: stopper.best(),
        initial_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize, t: usize) -> Tensor {
        Tensor::from_fn(n, t, |i, j| {
            0.5 + 0.4 * (std::f64::consts::TAU * j as f64 / (8.0 + 3.0 * i as f64)).sin()
        })
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            window: 6,
            batch_size: 8,
            lr: 0.01,
            epochs: 2,
            patience: 2,
            mem_items: 3,
            mem_dim: 4,
            hidden: 4,
            order: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn window_counts_and_contents() {
        let x = Tensor::from_fn(2, 5, |i, t| (10 * i + t) as f64);
        let w = make_windows(&x, 3, 1).unwrap();
        assert_eq!(w.len(), 3);
        for (s, win) in w.iter().enumerate() {
            for i in 0..2 {
                assert_eq!(win.row(i), &x.row(i)[s..s + 3]);
            }
        }
        assert_eq!(make_windows(&x, 5, 1).unwrap().len(), 1);
        assert!(make_windows(&x, 6, 1).is_err());
        assert_eq!(window_starts(10, 3, 3).unwrap(), vec![0, 3, 6]);
    }

    #[test]
    fn stacked_windows_match_slices() {
        let x = Tensor::from_fn(3, 9, |i, t| (i * 100 + t) as f64);
        let st = stack_windows(&x, &[4, 1], 3);
        assert_eq!(st.shape(), &[6, 3]);
        assert_eq!(st.row(0), &[4.0, 5.0, 6.0]);
        assert_eq!(st.row(5), &[201.0, 202.0, 203.0]);
    }

    #[test]
    fn normalization_examples() {
        let x = Tensor::from_rows(&[vec![0.0, 5.0, 10.0], vec![3.0, 3.0, 3.0]]).unwrap();
        let stats = NormalizationStats::fit(&x);
        assert_eq!(stats.degenerate, vec![false, true]);
        let y = stats.apply(&x).unwrap();
        assert_eq!(y.row(0), &[0.0, 0.5, 1.0]);
        assert_eq!(y.row(1), &[0.5, 0.5, 0.5]);
        let test = Tensor::from_rows(&[vec![12.0], vec![-4.0]]).unwrap();
        let z = stats.apply(&test).unwrap();
        assert!((z.get(0, 0) - 1.2).abs() < 1e-15);
        assert_eq!(z.get(1, 0), 0.5);
    }

    #[test]
    fn split_is_chronological() {
        let x = Tensor::from_fn(1, 100, |_, t| t as f64);
        let (a, b) = split_series(&x, 0.2, 10).unwrap();
        assert_eq!(a.cols(), 80);
        assert_eq!(b.row(0)[0], 80.0);
        assert!(split_series(&x, 0.05, 10).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 1,
            patience: 1,
            ..tiny_cfg()
        };
        let x = series(3, 60);
        let model = MixadModel::new(cfg.model_config(3), 1).unwrap();
        let out = train(model.clone(), &x, &cfg).unwrap();
        assert_eq!(out.model.params, model.params);
        assert_eq!(out.log[0].val_total, out.initial_val);
    }

    #[test]
    fn non_improving_validation_stops_early() {
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 5,
            patience: 1,
            ..tiny_cfg()
        };
        let x = series(3, 60);
        let out = train(MixadModel::new(cfg.model_config(3), 2).unwrap(), &x, &cfg).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn early_stopping_counter() {
        let mut es = EarlyStopping::new(2);
        assert_eq!(es.update(1, 3.0), (true, false));
        assert_eq!(es.update(2, 3.0), (false, false));
        assert_eq!(es.update(3, 2.0), (true, false));
        assert_eq!(es.update(4, 2.5), (false, false));
        assert_eq!(es.update(5, 2.5), (false, true));
        assert_eq!(es.best_epoch(), 3);
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = tiny_cfg();
        let x = series(3, 60);
        let run = || {
            let out = train(MixadModel::new(cfg.model_config(3), 5).unwrap(), &x, &cfg).unwrap();
            log_csv(&out.log)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn best_checkpoint_is_not_worse_than_last_epoch() {
        let cfg = TrainConfig {
            epochs: 3,
            patience: 3,
            ..tiny_cfg()
        };
        let x = series(3, 60);
        let out = train(MixadModel::new(cfg.model_config(3), 6).unwrap(), &x, &cfg).unwrap();
        assert!(out.best_val <= out.log.last().unwrap().val_total);
        let (_, val) = split_series(&x, cfg.val_fraction, cfg.window).unwrap();
        let starts = window_starts(val.cols(), cfg.window, cfg.stride).unwrap();
        let again = evaluate_loss(&out.model, &val, &starts, cfg.batch_size, &cfg.loss).unwrap();
        assert_eq!(again.total, out.best_val);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            window: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            val_fraction: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            patience: 31,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
