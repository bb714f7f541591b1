//! Adjacency normalization, polynomial graph convolution, and the
//! memory-derived sparse graph generator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tape::sigmoid;
use crate::numerics::{Tape, Tensor, Var};

/// Symmetric normalization with self-loops: `D^-1/2 (A + I) D^-1/2`, where
/// `D` is the degree matrix of `A + I`.
pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let n = check_square("normalize_adjacency", a)?;
    if let Some(bad) = a.data().iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::invalid(format!(
            "adjacency entries must be finite and nonnegative, found {bad}"
        )));
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum::<f64>() + 1.0).collect();
    Ok(Tensor::from_fn(n, n, |i, j| {
        let self_loop = if i == j { 1.0 } else { 0.0 };
        (a.get(i, j) + self_loop) / (deg[i] * deg[j]).sqrt()
    }))
}

/// Differentiable counterpart of [`normalize_adjacency`]. The caller
/// guarantees nonnegative entries.
pub fn normalize_on_tape(tape: &mut Tape, a: Var) -> Result<Var> {
    let shape = tape.shape(a).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape("normalize_adjacency", format!("{shape:?} is not square")));
    }
    let eye = tape.constant(Tensor::eye(shape[0]));
    let with_loops = tape.add(a, eye)?;
    let deg = tape.sum_rows(with_loops)?;
    let log_deg = tape.log(deg)?;
    let half = tape.scale(log_deg, -0.5)?;
    let inv_sqrt = tape.exp(half)?;
    let inv_sqrt_t = tape.transpose(inv_sqrt)?;
    let outer = tape.matmul(inv_sqrt, inv_sqrt_t)?;
    tape.mul(with_loops, outer)
}

/// `[X, ÃX, Ã²X, …, Ã^K X]` stacked along the feature axis:
/// `(batch·N)×c → (batch·N)×((K+1)·c)`.
pub fn graph_powers(tape: &mut Tape, x: Var, adj: Var, order: usize) -> Result<Var> {
    let mut terms = Vec::with_capacity(order + 1);
    terms.push(x);
    for _ in 0..order {
        let prev = *terms.last().unwrap();
        terms.push(tape.propagate(adj, prev)?);
    }
    if terms.len() == 1 {
        return Ok(x);
    }
    tape.concat(&terms)
}

/// Contracts stacked powers with a `(K+1)×c_in×c_out` kernel.
pub fn conv_from_powers(tape: &mut Tape, powers: Var, kernel: Var) -> Result<Var> {
    let ks = tape.shape(kernel).to_vec();
    if ks.len() != 3 {
        return Err(Error::shape("graph_conv", format!("kernel must be (K+1)×c_in×c_out, got {ks:?}")));
    }
    let flat = ks[0] * ks[1];
    if tape.shape(powers)[1] != flat {
        return Err(Error::shape(
            "graph_conv",
            format!("kernel {ks:?} against stacked input {:?}", tape.shape(powers)),
        ));
    }
    let w = tape.reshape(kernel, &[flat, ks[2]])?;
    tape.matmul(powers, w)
}

/// `Σ_k Ã^k X W_k` with `Ã^0 = I`; `kernel` is `(K+1)×c_in×c_out`.
pub fn graph_conv(tape: &mut Tape, x: Var, adj: Var, kernel: Var) -> Result<Var> {
    let ks = tape.shape(kernel).to_vec();
    if ks.len() != 3 || ks[1] != tape.shape(x)[1] {
        return Err(Error::shape("graph_conv", format!("input {:?} with kernel {ks:?}", tape.shape(x))));
    }
    let powers = graph_powers(tape, x, adj, ks[0] - 1)?;
    conv_from_powers(tape, powers, kernel)
}

/// Draws `g1 − g2` for `g1, g2 ~ Gumbel(0, 1)` i.i.d., `n×n`.
pub fn sample_gumbel_difference<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let mut gumbel = || {
        // open interval (0, 1)
        let u: f64 = loop {
            let u = rng.gen::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        -(-u.ln()).ln()
    };
    Tensor::from_fn(n, n, |_, _| gumbel() - gumbel())
}

/// Output of [`generate_graph`].
#[derive(Clone, Copy, Debug)]
pub struct GeneratedGraph {
    /// Edge probabilities `θ = sigmoid(E Eᵀ)`.
    pub theta: Var,
    /// Relaxed adjacency with zero diagonal, before normalization.
    pub adjacency: Var,
    /// Normalized operator used by the graph convolutions.
    pub normalized: Var,
}

/// Builds the sparse relaxed adjacency from the memory bank.
///
/// `E = W_E·M`, `θ = sigmoid(E Eᵀ)`, and each edge is
/// `sigmoid((logit θ + g1 − g2) / τ)`. Passing `noise = None` gives the
/// deterministic eval-mode graph.
pub fn generate_graph(tape: &mut Tape, memory: Var, embed: Var, tau: f64, noise: Option<&Tensor>) -> Result<GeneratedGraph> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::invalid(format!("graph temperature must be positive, got {tau}")));
    }
    let emb = tape.matmul(embed, memory)?;
    let emb_t = tape.transpose(emb)?;
    let scores = tape.matmul(emb, emb_t)?;
    let n = tape.shape(scores)[0];
    let theta = tape.sigmoid(scores)?;
    // logit(sigmoid(s)) == s, so the raw scores are the logits of θ.
    let logits = match noise {
        Some(g) => {
            if g.shape() != [n, n] {
                return Err(Error::shape("generate_graph", format!("noise {:?} for {n} nodes", g.shape())));
            }
            let g = tape.constant(g.clone());
            tape.add(scores, g)?
        }
        None => scores,
    };
    let scaled = tape.scale(logits, 1.0 / tau)?;
    let soft = tape.sigmoid(scaled)?;
    let off_diag = tape.constant(Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
    let adjacency = tape.mul(soft, off_diag)?;
    let normalized = normalize_on_tape(tape, adjacency)?;
    Ok(GeneratedGraph {
        theta,
        adjacency,
        normalized,
    })
}

/// Eval-mode adjacency (zero diagonal, unnormalized) from plain tensors.
pub fn eval_adjacency(memory: &Tensor, embed: &Tensor, tau: f64) -> Result<Tensor> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid(format!("graph temperature must be positive, got {tau}")));
    }
    let emb = embed.matmul(memory)?;
    let scores = emb.matmul(&emb.transpose())?;
    if !scores.is_finite() {
        return Err(Error::NonFinite("edge scores".into()));
    }
    let n = scores.rows();
    Ok(Tensor::from_fn(
        n,
        n,
        |i, j| {
            if i == j {
                0.0
            } else {
                sigmoid(scores.get(i, j) / tau)
            }
        },
    ))
}

fn check_square(op: &'static str, a: &Tensor) -> Result<usize> {
    if a.shape().len() != 2 || a.rows() != a.cols() {
        return Err(Error::shape(op, format!("{:?} is not square", a.shape())));
    }
    Ok(a.rows())
}
