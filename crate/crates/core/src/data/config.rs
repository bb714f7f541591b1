//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `seed` | seeds data generation, initialization and shuffling |
//! | `nodes`, `t_train`, `t_test` | synthetic layout |
//! | `period_min`, `period_max`, `edge_density`, `coupling`, `noise` | synthetic signal |
//! | `anomalies` | comma list of `kind:span:causal` |
//! | `window`, `batch_size`, `lr`, `epochs`, `patience`, `val_fraction`, `stride`, `grad_clip` | training |
//! | `mem_items`, `mem_dim`, `hidden`, `order`, `tau` | architecture |
//! | `margin`, `lambda1`, `lambda2`, `lambda3` | loss |
//! | `score_batch` | windows per inference batch |

use std::path::Path;
use std::str::FromStr;

use super::synth::{AnomalySpec, SynthConfig};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub score_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            score_batch: 64,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> std::result::Result<T, String> {
    raw.parse().map_err(|_| format!("invalid value {raw:?} for {key}"))
}

impl RunConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), String> {
        let (s, t) = (&mut self.synth, &mut self.train);
        match key {
            "seed" => self.seed = value(key, raw)?,
            "score_batch" => self.score_batch = value(key, raw)?,
            "nodes" => s.nodes = value(key, raw)?,
            "t_train" => s.t_train = value(key, raw)?,
            "t_test" => s.t_test = value(key, raw)?,
            "period_min" => s.period_min = value(key, raw)?,
            "period_max" => s.period_max = value(key, raw)?,
            "edge_density" => s.edge_density = value(key, raw)?,
            "coupling" => s.coupling = value(key, raw)?,
            "noise" => s.noise = value(key, raw)?,
            "anomalies" => {
                s.anomalies = raw
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| p.parse::<AnomalySpec>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "window" => t.window = value(key, raw)?,
            "batch_size" => t.batch_size = value(key, raw)?,
            "lr" => t.lr = value(key, raw)?,
            "epochs" => t.epochs = value(key, raw)?,
            "patience" => t.patience = value(key, raw)?,
            "val_fraction" => t.val_fraction = value(key, raw)?,
            "stride" => t.stride = value(key, raw)?,
            "grad_clip" => t.grad_clip = value(key, raw)?,
            "mem_items" => t.mem_items = value(key, raw)?,
            "mem_dim" => t.mem_dim = value(key, raw)?,
            "hidden" => t.hidden = value(key, raw)?,
            "order" => t.order = value(key, raw)?,
            "tau" => t.tau = value(key, raw)?,
            "margin" => t.loss.margin = value(key, raw)?,
            "lambda1" => t.loss.lambda1 = value(key, raw)?,
            "lambda2" => t.loss.lambda2 = value(key, raw)?,
            "lambda3" => t.loss.lambda3 = value(key, raw)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Applies every line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: k + 1,
                msg,
            };
            let (key, raw) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            self.set(key.trim(), raw.trim()).map_err(err)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    /// Replaces the seed and propagates it to the generator and trainer.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync_seed();
        self
    }

    pub fn sync_seed(&mut self) {
        self.synth.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.score_batch == 0 {
            return Err(Error::invalid("score_batch must be positive"));
        }
        self.synth.validate()?;
        self.train.validate()
    }

    /// Every key with its current value, in the file format.
    pub fn to_text(&self) -> String {
        let (s, t) = (&self.synth, &self.train);
        let anomalies: Vec<String> = s.anomalies.iter().map(ToString::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("score_batch", self.score_batch.to_string()),
            ("nodes", s.nodes.to_string()),
            ("t_train", s.t_train.to_string()),
            ("t_test", s.t_test.to_string()),
            ("period_min", format!("{:?}", s.period_min)),
            ("period_max", format!("{:?}", s.period_max)),
            ("edge_density", format!("{:?}", s.edge_density)),
            ("coupling", format!("{:?}", s.coupling)),
            ("noise", format!("{:?}", s.noise)),
            ("anomalies", anomalies.join(",")),
            ("window", t.window.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", format!("{:?}", t.lr)),
            ("epochs", t.epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("val_fraction", format!("{:?}", t.val_fraction)),
            ("stride", t.stride.to_string()),
            ("grad_clip", format!("{:?}", t.grad_clip)),
            ("mem_items", t.mem_items.to_string()),
            ("mem_dim", t.mem_dim.to_string()),
            ("hidden", t.hidden.to_string()),
            ("order", t.order.to_string()),
            ("tau", format!("{:?}", t.tau)),
            ("margin", format!("{:?}", t.loss.margin)),
            ("lambda1", format!("{:?}", t.loss.lambda1)),
            ("lambda2", format!("{:?}", t.loss.lambda2)),
            ("lambda3", format!("{:?}", t.loss.lambda3)),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::AnomalyKind;

    #[test]
    fn parses_keys_and_comments() {
        let mut cfg = RunConfig::default();
        let text = "# desk run\nhidden = 16\nlr=0.01  # faster\n\nanomalies = spike:30:1, correlation-break:20:2\n";
        cfg.apply_text(text, Path::new("run.cfg")).unwrap();
        assert_eq!(cfg.train.hidden, 16);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.synth.anomalies.len(), 2);
        assert_eq!(cfg.synth.anomalies[1].kind, AnomalyKind::CorrelationBreak);
    }

    #[test]
    fn errors_name_the_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("hidden = 4\nwidth = 3\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = cfg.apply_text("lr = fast\n", Path::new("x.cfg")).unwrap_err();
        assert!(err.to_string().contains("lr"));
        assert!(cfg.apply_text("no equals sign\n", Path::new("x.cfg")).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default().with_seed(42);
        cfg.train.lr = 0.1 + 0.2;
        cfg.synth.anomalies.truncate(3);
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("t")).unwrap();
        back.sync_seed();
        assert_eq!(back, cfg);
    }
}
