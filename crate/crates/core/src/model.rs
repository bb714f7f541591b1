//! Graph-convolutional GRU cell, encoder, reversed autoregressive decoder,
//! and the full reconstruction forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{conv_from_powers, generate_graph, graph_conv, graph_powers, GeneratedGraph};
use crate::memory::{concat_augment, query_memory, MemoryRead};
use crate::numerics::checkpoint::{self, Metadata};
use crate::numerics::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of series (graph nodes).
    pub nodes: usize,
    pub window: usize,
    pub mem_items: usize,
    pub mem_dim: usize,
    pub hidden: usize,
    /// Highest adjacency power in the graph convolution.
    pub order: usize,
    /// Relaxation temperature of the generated graph.
    pub tau: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("window", self.window),
            ("mem_dim", self.mem_dim),
            ("hidden", self.hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.mem_items < 2 {
            return Err(Error::invalid(format!("mem_items must be at least 2, got {}", self.mem_items)));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    fn to_metadata(&self) -> Metadata {
        vec![
            ("nodes".into(), self.nodes.to_string()),
            ("window".into(), self.window.to_string()),
            ("mem_items".into(), self.mem_items.to_string()),
            ("mem_dim".into(), self.mem_dim.to_string()),
            ("hidden".into(), self.hidden.to_string()),
            ("order".into(), self.order.to_string()),
            ("tau".into(), format!("{:?}", self.tau)),
        ]
    }

    fn from_metadata(meta: &Metadata) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key}")))
        };
        let int = |key: &str| -> Result<usize> { get(key)?.parse().map_err(|_| Error::Checkpoint(format!("bad value for {key}"))) };
        let cfg = Self {
            nodes: int("nodes")?,
            window: int("window")?,
            mem_items: int("mem_items")?,
            mem_dim: int("mem_dim")?,
            hidden: int("hidden")?,
            order: int("order")?,
            tau: get("tau")?.parse().map_err(|_| Error::Checkpoint("bad value for tau".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameter handles of one graph-convolutional GRU cell.
#[derive(Clone, Copy, Debug)]
pub struct StrgcCell {
    pub input_dim: usize,
    pub hidden: usize,
    pub w_r: ParamId,
    pub w_u: ParamId,
    pub w_c: ParamId,
    pub b_r: ParamId,
    pub b_u: ParamId,
    pub b_c: ParamId,
}

impl StrgcCell {
    fn register(params: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize, order: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (order + 1) * (input_dim + hidden);
        let mut kernel = |name: &str, rng: &mut ChaCha8Rng| {
            let shape = vec![order + 1, input_dim + hidden, hidden];
            params.add(format!("{prefix}.{name}"), uniform(shape, fan_in, rng))
        };
        let w_r = kernel("w_r", rng);
        let w_u = kernel("w_u", rng);
        let w_c = kernel("w_c", rng);
        Self {
            input_dim,
            hidden,
            w_r,
            w_u,
            w_c,
            b_r: params.add(format!("{prefix}.b_r"), Tensor::zeros(&[hidden])),
            b_u: params.add(format!("{prefix}.b_u"), Tensor::zeros(&[hidden])),
            b_c: params.add(format!("{prefix}.b_c"), Tensor::zeros(&[hidden])),
        }
    }
}

/// One recurrence of the cell:
///
/// ```text
/// r = σ(W_r ⋆ [X ‖ H] + b_r)
/// u = σ(W_u ⋆ [X ‖ H] + b_u)
/// C = tanh(W_C ⋆ [X ‖ r∘H] + b_C)
/// H' = u∘H + (1 − u)∘C
/// ```
pub fn strgc_step(tape: &mut Tape, bound: &Bound, cell: &StrgcCell, x: Var, h_prev: Var, adj: Var) -> Result<Var> {
    let joined = tape.concat(&[x, h_prev])?;
    let powers = graph_powers(tape, joined, adj, tape.shape(bound[cell.w_r])[0] - 1)?;

    let r_lin = conv_from_powers(tape, powers, bound[cell.w_r])?;
    let r_pre = tape.add_bias(r_lin, bound[cell.b_r])?;
    let r = tape.sigmoid(r_pre)?;

    let u_lin = conv_from_powers(tape, powers, bound[cell.w_u])?;
    let u_pre = tape.add_bias(u_lin, bound[cell.b_u])?;
    let u = tape.sigmoid(u_pre)?;

    let reset_h = tape.mul(r, h_prev)?;
    let cand_in = tape.concat(&[x, reset_h])?;
    let c_lin = graph_conv(tape, cand_in, adj, bound[cell.w_c])?;
    let c_pre = tape.add_bias(c_lin, bound[cell.b_c])?;
    let cand = tape.tanh(c_pre)?;

    let keep = tape.mul(u, h_prev)?;
    let one_minus_u = tape.rsub_scalar(1.0, u)?;
    let fresh = tape.mul(one_minus_u, cand)?;
    tape.add(keep, fresh)
}

/// Everything one forward pass leaves on the tape.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `(batch·N)×w`, forward time order.
    pub reconstruction: Var,
    /// Decoder outputs in emission order (last timestamp first).
    pub emitted: Vec<Var>,
    pub read: MemoryRead,
    pub graph: GeneratedGraph,
}

/// Learnable state of the full model.
#[derive(Clone, Debug)]
pub struct MixadModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: StrgcCell,
    pub decoder: StrgcCell,
    pub mem_items: ParamId,
    pub query_w: ParamId,
    pub query_b: ParamId,
    pub embed: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl MixadModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let ModelConfig {
            nodes: n,
            mem_items: m,
            mem_dim: d,
            hidden: h,
            order: k,
            ..
        } = config;

        let encoder = StrgcCell::register(&mut params, "encoder", 1, h, k, &mut rng);
        let decoder = StrgcCell::register(&mut params, "decoder", 1, h, k, &mut rng);
        let mem_items = params.add("memory.items", uniform(vec![m, d], d, &mut rng));
        let query_w = params.add("memory.query_w", uniform(vec![h, d], h, &mut rng));
        let query_b = params.add("memory.query_b", Tensor::zeros(&[d]));
        let embed = params.add("graph.embed", uniform(vec![n, m], m, &mut rng));
        let proj_w = params.add("decoder.init_w", uniform(vec![h + d, h], h + d, &mut rng));
        let proj_b = params.add("decoder.init_b", Tensor::zeros(&[h]));
        let out_w = params.add("decoder.out_w", uniform(vec![h, 1], h, &mut rng));
        let out_b = params.add("decoder.out_b", Tensor::zeros(&[1]));

        Ok(Self {
            config,
            params,
            encoder,
            decoder,
            mem_items,
            query_w,
            query_b,
            embed,
            proj_w,
            proj_b,
            out_w,
            out_b,
        })
    }

    /// Generates the graph from the current memory. `noise` holds pre-drawn
    /// `g1 − g2` samples (train mode); `None` is the eval-mode graph.
    pub fn graph(&self, tape: &mut Tape, bound: &Bound, noise: Option<&Tensor>) -> Result<GeneratedGraph> {
        generate_graph(tape, bound[self.mem_items], bound[self.embed], self.config.tau, noise)
    }

    /// Runs the encoder over a stacked batch of windows and reads the memory
    /// with the final hidden state.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, windows: &Tensor, adj: Var) -> Result<(Var, MemoryRead)> {
        let (rows, w) = self.check_windows(windows)?;
        let mut hidden = tape.constant(Tensor::zeros(&[rows, self.config.hidden]));
        for t in 0..w {
            let x = tape.constant(column(windows, t));
            hidden = strgc_step(tape, bound, &self.encoder, x, hidden, adj).map_err(|e| at_step(e, "encoder", t))?;
        }
        let read = query_memory(tape, hidden, bound[self.mem_items], bound[self.query_w], bound[self.query_b])?;
        Ok((hidden, read))
    }

    /// Full reconstruction pass over `windows`, a `(batch·N)×w` stack of
    /// normalized windows.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, windows: &Tensor, graph: GeneratedGraph) -> Result<ForwardOutput> {
        let adj = graph.normalized;
        let (hidden, read) = self.encode(tape, bound, windows, adj)?;
        let (rows, w) = (windows.rows(), windows.cols());

        let mut state = concat_augment(tape, hidden, read.augmented, bound[self.proj_w], bound[self.proj_b])?;
        let mut input = tape.constant(Tensor::zeros(&[rows, 1]));
        let mut emitted = Vec::with_capacity(w);
        for s in 0..w {
            state = strgc_step(tape, bound, &self.decoder, input, state, adj).map_err(|e| at_step(e, "decoder", s))?;
            let lin = tape.matmul(state, bound[self.out_w])?;
            let y = tape.add_bias(lin, bound[self.out_b])?;
            emitted.push(y);
            input = y;
        }
        let forward_order: Vec<Var> = emitted.iter().rev().copied().collect();
        let reconstruction = tape.concat(&forward_order)?;
        Ok(ForwardOutput {
            reconstruction,
            emitted,
            read,
            graph,
        })
    }

    fn check_windows(&self, windows: &Tensor) -> Result<(usize, usize)> {
        let s = windows.shape();
        if s.len() != 2 || !s[0].is_multiple_of(self.config.nodes) {
            return Err(Error::shape(
                "forward",
                format!("windows {s:?} are not a stack of {}-node windows", self.config.nodes),
            ));
        }
        Ok((s[0], s[1]))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.config.to_metadata(), &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (meta, stored) = checkpoint::load(path)?;
        Self::from_parts(&meta, &stored)
    }

    pub fn from_parts(meta: &Metadata, stored: &ParamStore) -> Result<Self> {
        let config = ModelConfig::from_metadata(meta)?;
        let mut model = Self::new(config, 0)?;
        if stored.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                stored.len()
            )));
        }
        model.params.copy_from(stored)?;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&self.config.to_metadata(), &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, stored) = checkpoint::decode(bytes)?;
        Self::from_parts(&meta, &stored)
    }
}

fn at_step(e: Error, stage: &str, step: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at {stage} step {step}")),
        other => other,
    }
}

/// Column `t` of a matrix as a `rows×1` tensor.
pub fn column(m: &Tensor, t: usize) -> Tensor {
    Tensor::from_fn(m.rows(), 1, |i, _| m.get(i, t))
}

fn uniform(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}
