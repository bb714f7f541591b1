//! WebAssembly bindings for the browser demo.
//!
//! Three operations are exposed: JSD between two attention distributions,
//! period detection with seasonal removal on a generated score trace, and
//! sampling the learned-graph relaxation at a chosen temperature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use mixad::graph::{eval_adjacency, generate_graph, sample_gumbel_difference};
use mixad::numerics::{Tape, Tensor};
use mixad::scoring;

/// Base-2 JSD of two nonnegative weight vectors; `NaN` for invalid input.
#[wasm_bindgen]
pub fn jsd(p: Vec<f64>, q: Vec<f64>) -> f64 {
    scoring::jsd(&p, &q).unwrap_or(f64::NAN)
}

/// Sinusoidal score trace with approximately normal noise and one spike at the
/// midpoint.
#[wasm_bindgen]
pub fn score_trace(len: usize, period: f64, noise: f64, spike: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..len)
        .map(|t| {
            let n: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.5;
            (std::f64::consts::TAU * t as f64 / period.max(1.0)).sin() + noise * n
        })
        .collect();
    if let Some(mid) = x.get_mut(len / 2) {
        *mid += spike;
    }
    x
}

/// Detected period in samples, or 0 when the spectrum is flat.
#[wasm_bindgen]
pub fn detect_period(series: Vec<f64>) -> usize {
    scoring::detect_period(&series).unwrap_or(0)
}

/// The series with its detected seasonal component removed.
#[wasm_bindgen]
pub fn deseasonalize(series: Vec<f64>) -> Vec<f64> {
    if series.len() < 4 || series.iter().any(|v| !v.is_finite()) {
        return series;
    }
    let col = Tensor::from_fn(series.len(), 1, |t, _| series[t]);
    match scoring::deseasonalize(&col) {
        Ok((out, _)) => out.into_data(),
        Err(_) => series,
    }
}

/// Row-major `nodes×nodes` relaxed adjacency from a random memory bank and
/// embedding drawn from `structure_seed`. `sampled = false` gives the
/// noise-free graph; otherwise `noise_seed` draws the logistic noise.
#[wasm_bindgen]
pub fn sample_graph(nodes: usize, items: usize, tau: f64, structure_seed: u64, noise_seed: u64, sampled: bool) -> Vec<f64> {
    graph(nodes, items, tau, structure_seed, sampled.then_some(noise_seed)).unwrap_or_default()
}

fn graph(nodes: usize, items: usize, tau: f64, structure_seed: u64, noise_seed: Option<u64>) -> mixad::Result<Vec<f64>> {
    let (nodes, items) = (nodes.max(2), items.max(2));
    let mut structure = ChaCha8Rng::seed_from_u64(structure_seed);
    let memory = Tensor::from_fn(items, 4, |_, _| structure.gen_range(-1.0..1.0));
    let embed = Tensor::from_fn(nodes, items, |_, _| structure.gen_range(-1.0..1.0));
    let Some(noise_seed) = noise_seed else {
        return Ok(eval_adjacency(&memory, &embed, tau)?.into_data());
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = sample_gumbel_difference(nodes, &mut noise_rng);
    let mut tape = Tape::new();
    let (m, e) = (tape.constant(memory), tape.constant(embed));
    let g = generate_graph(&mut tape, m, e, tau, Some(&noise))?;
    Ok(tape.value(g.adjacency).data().to_vec())
}
