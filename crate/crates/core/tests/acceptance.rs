//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when an enforced criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mixad::data::{generate_synthetic, AnomalyKind, RunConfig, SyntheticBundle};
use mixad::eval::{hitrate, point_adjust, Report};
use mixad::graph::sample_gumbel_difference;
use mixad::losses::{all_losses, kl_uniform_loss, reconstruction_loss, triplet_loss, LossConfig};
use mixad::model::{MixadModel, ModelConfig};
use mixad::numerics::gradcheck::check_gradients;
use mixad::numerics::{Tape, Tensor};
use mixad::pipeline;
use mixad::scoring::{best_f1_threshold, deseasonalize, detect_period, flag, jsd};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scaled training configuration for the synthetic bar.
const DESK: &str = "\
window = 30
batch_size = 32
epochs = 10
patience = 10
stride = 2
mem_items = 4
mem_dim = 16
hidden = 16
order = 2
";

const BAR_SEED: u64 = 1;
const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = Result<Outcome, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_integrity() -> Check {
    let start = Instant::now();
    let cfg = ModelConfig {
        nodes: 3,
        window: 6,
        mem_items: 2,
        mem_dim: 3,
        hidden: 4,
        order: 1,
        tau: 0.5,
    };
    let model = MixadModel::new(cfg, 2).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = Tensor::from_fn(6, 6, |_, _| rng.gen_range(0.0..1.0));
    let noise = sample_gumbel_difference(3, &mut rng);
    let loss = LossConfig {
        margin: 1.0,
        lambda1: 0.5,
        lambda2: 0.5,
        lambda3: 0.5,
    };
    let total = |params: &mixad::numerics::ParamStore, backward: bool| -> mixad::Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let graph = model.graph(&mut tape, &bound, Some(&noise))?;
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
            2,
            &loss,
        )?;
        let value = tape.value(parts.total).data()[0];
        if !backward {
            return Ok((value, Vec::new()));
        }
        tape.backward(parts.total)?;
        Ok((value, params.collect_grads(&mut tape, &bound)))
    };
    let (_, grads) = total(&model.params, true).map_err(err)?;
    let report = check_gradients(&model.params, &grads, 1e-4, |p| total(p, false).map(|(v, _)| v)).map_err(err)?;
    let elapsed = start.elapsed();
    Ok(outcome(
        report.max_rel_error < 1e-4 && report.checked == model.params.num_scalars() && elapsed < Duration::from_secs(30),
        format!(
            "{} scalars, max rel error {:.2e} ({}), {:.2}s",
            report.checked,
            report.max_rel_error,
            report.worst,
            elapsed.as_secs_f64()
        ),
    ))
}

fn loss_identities() -> Check {
    let mut tape = Tape::new();
    let att = tape.constant(Tensor::new(vec![3, 3], vec![0.5, 0.3, 0.2, 0.2, 0.5, 0.3, 0.3, 0.2, 0.5]).map_err(err)?);
    let l3 = kl_uniform_loss(&mut tape, att).map_err(err)?;
    let l3 = tape.value(l3).data()[0];

    let margin = 1.0;
    let items = Tensor::new(vec![3, 2], vec![0.0, 0.0, 1.0, 0.0, 0.0, 3.0]).map_err(err)?;
    let pos = [0, 1];
    let neg = [2, 2];
    let q = Tensor::from_fn(2, 2, |r, c| items.get(pos[r], c));
    let (qv, mv) = (tape.constant(q), tape.constant(items));
    let l1 = triplet_loss(&mut tape, qv, mv, &pos, &neg, margin, 1).map_err(err)?;
    let l1 = tape.value(l1).data()[0];

    let w = Tensor::from_fn(4, 5, |r, c| (r * 5 + c) as f64 * 0.37 - 2.0);
    let (a, b) = (tape.constant(w.clone()), tape.constant(w));
    let mae = reconstruction_loss(&mut tape, a, b).map_err(err)?;
    let mae = tape.value(mae).data()[0];

    Ok(outcome(
        l3.abs() <= 1e-9 && l1 == 0.0 && mae == 0.0,
        format!("L3 {l3:.1e}, L1 {l1}, MAE {mae}"),
    ))
}

fn random_distribution(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..m)
        .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[rng.gen_range(0..m)] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn jsd_suite() -> Check {
    let self_zero = jsd(&[0.2, 0.5, 0.3], &[0.2, 0.5, 0.3]).map_err(err)? == 0.0;
    let disjoint = jsd(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).map_err(err)? == 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut max_asym, mut lo, mut hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let m = rng.gen_range(2..9);
        let (p, q) = (random_distribution(&mut rng, m), random_distribution(&mut rng, m));
        let (a, b) = (jsd(&p, &q).map_err(err)?, jsd(&q, &p).map_err(err)?);
        max_asym = max_asym.max((a - b).abs());
        lo = lo.min(a);
        hi = hi.max(a);
    }
    Ok(outcome(
        self_zero && disjoint && max_asym <= 1e-12 && lo >= 0.0 && hi <= 1.0,
        format!("max asymmetry {max_asym:.1e}, range [{lo:.3e}, {hi:.6}] over 10^4 pairs"),
    ))
}

fn period_and_seasonality() -> Check {
    let t = 240;
    let clean: Vec<f64> = (0..t).map(|i| (std::f64::consts::TAU * i as f64 / 24.0).sin()).collect();
    let period = detect_period(&clean);

    let column = |v: &[f64]| Tensor::from_fn(v.len(), 1, |r, _| v[r]);
    let (residual, _) = deseasonalize(&column(&clean)).map_err(err)?;
    let energy: f64 = clean.iter().map(|x| x * x).sum();
    let left: f64 = residual.data().iter().map(|x| x * x).sum();
    let ratio = left / energy;

    let sigma = (energy / t as f64).sqrt();
    let height = 5.0 * sigma;
    let at = 130;
    let mut spiky = clean.clone();
    spiky[at] += height;
    let (adjusted, _) = deseasonalize(&column(&spiky)).map_err(err)?;
    let survived = (adjusted.get(at, 0) - residual.get(at, 0)) / height;

    Ok(outcome(
        period == Some(24) && ratio < 0.01 && survived >= 0.8,
        format!(
            "period {period:?}, residual energy {:.2e} of signal, spike keeps {:.1}%",
            ratio,
            100.0 * survived
        ),
    ))
}

fn adjust_oracle(pred: &[bool], labels: &[bool]) -> Vec<bool> {
    (0..pred.len())
        .map(|t| {
            if pred[t] {
                return true;
            }
            if !labels[t] {
                return false;
            }
            let mut lo = t;
            while lo > 0 && labels[lo - 1] {
                lo -= 1;
            }
            let mut hi = t;
            while hi + 1 < labels.len() && labels[hi + 1] {
                hi += 1;
            }
            pred[lo..=hi].iter().any(|&p| p)
        })
        .collect()
}

/// F1 as the exact fraction `2tp / (2tp + fp + fn)`.
fn f1_fraction(pred: &[bool], labels: &[bool]) -> (usize, usize) {
    let tp = pred.iter().zip(labels).filter(|(&p, &l)| p && l).count();
    let fp = pred.iter().zip(labels).filter(|(&p, &l)| p && !l).count();
    let fneg = pred.iter().zip(labels).filter(|(&p, &l)| !p && l).count();
    (2 * tp, 2 * tp + fp + fneg)
}

fn greater(a: (usize, usize), b: (usize, usize)) -> bool {
    // a.0/a.1 > b.0/b.1 with 0/0 read as 0
    let (an, ad) = if a.1 == 0 { (0, 1) } else { a };
    let (bn, bd) = if b.1 == 0 { (0, 1) } else { b };
    an * bd > bn * ad
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut adjust_ok = 0;
    let mut threshold_ok = 0;
    for _ in 0..100 {
        let t = rng.gen_range(1..=50);
        let labels: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.3)).collect();
        let pred: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.2)).collect();
        if point_adjust(&pred, &labels) == adjust_oracle(&pred, &labels) {
            adjust_ok += 1;
        }

        // coarse grid so that ties between cuts are common
        let agg: Vec<f64> = (0..t).map(|_| rng.gen_range(0..12) as f64 / 4.0).collect();
        let mut best: Option<(f64, (usize, usize))> = None;
        for &cut in &agg {
            let f = f1_fraction(&adjust_oracle(&flag(&agg, cut), &labels), &labels);
            let better = match best {
                None => true,
                Some((c, b)) => greater(f, b) || (!greater(b, f) && cut < c),
            };
            if better {
                best = Some((cut, f));
            }
        }
        let (cut, frac) = best.expect("nonempty");
        let found = best_f1_threshold(&agg, &labels).map_err(err)?;
        let expected_f1 = if frac.1 == 0 { 0.0 } else { frac.0 as f64 / frac.1 as f64 };
        if found.cut == cut && found.metrics.f1 == expected_f1 {
            threshold_ok += 1;
        }
    }

    let ranked = [3, 1, 0, 2, 5, 4, 7, 6];
    let hand = [
        (hitrate(&ranked, &[0, 1, 2, 4], 100).map_err(err)?, 0.75),
        (hitrate(&ranked, &[0, 1, 2, 4], 150).map_err(err)?, 1.0),
        (hitrate(&ranked, &[2, 6, 7], 150).map_err(err)?, 1.0 / 3.0),
        (hitrate(&ranked, &[6], 150).map_err(err)?, 0.0),
    ];
    let hand_ok = hand.iter().all(|(got, want)| (got - want).abs() < 1e-15);
    Ok(outcome(
        adjust_ok == 100 && threshold_ok == 100 && hand_ok,
        format!(
            "point_adjust {adjust_ok}/100, threshold {threshold_ok}/100, hitrate hand cases {}",
            if hand_ok { "ok" } else { "wrong" }
        ),
    ))
}

fn desk_config(seed: u64, lambda3: f64) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    cfg.apply_text(DESK, Path::new("desk")).map_err(err)?;
    cfg.train.loss.lambda3 = lambda3;
    let cfg = cfg.with_seed(seed);
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

struct BarRun {
    synthetic: SyntheticBundle,
    report: Report,
    elapsed: Duration,
}

fn synthetic_run(seed: u64, lambda3: f64) -> Result<BarRun, String> {
    let start = Instant::now();
    let cfg = desk_config(seed, lambda3)?;
    let synthetic = generate_synthetic(&cfg.synth).map_err(err)?;
    let trained = pipeline::train_bundle(&synthetic.bundle, &cfg.train).map_err(err)?;
    let scored = pipeline::score_bundle(&trained.model, &synthetic.bundle, cfg.score_batch).map_err(err)?;
    let report =
        pipeline::evaluate_bundle(&scored.scores.adjusted, &scored.scores.agg, scored.threshold.cut, &synthetic.bundle).map_err(err)?;
    Ok(BarRun {
        synthetic,
        report,
        elapsed: start.elapsed(),
    })
}

fn synthetic_bar(run: &BarRun) -> Check {
    let n = run.synthetic.bundle.n_features() as f64;
    let segments = &run.report.per_segment;
    let random = segments.iter().map(|s| s.causes.len() as f64 / n).sum::<f64>() / segments.len() as f64;
    let kinds: Vec<AnomalyKind> = run.synthetic.anomalies.iter().map(|a| a.kind).collect();
    let all_kinds = [AnomalyKind::Spike, AnomalyKind::LevelShift, AnomalyKind::CorrelationBreak]
        .iter()
        .all(|k| kinds.contains(k));
    let breaks: Vec<bool> = run
        .synthetic
        .anomalies
        .iter()
        .filter(|a| a.kind == AnomalyKind::CorrelationBreak)
        .map(|a| segments.iter().any(|s| s.start == a.start && s.detected))
        .collect();
    let break_recall = breaks.iter().filter(|&&d| d).count() as f64 / breaks.len().max(1) as f64;
    let hr = run.report.hitrate100;
    Ok(outcome(
        segments.len() == 6
            && all_kinds
            && run.report.f1 >= 0.8
            && hr >= 0.5
            && hr >= 2.0 * random
            && !breaks.is_empty()
            && break_recall >= 0.5
            && run.elapsed < Duration::from_secs(600),
        format!(
            "F1 {:.4}, HitRate@100% {:.4} (random {:.4}), HitRate@150% {:.4}, correlation-break recall {:.2}, {:.0}s",
            run.report.f1,
            hr,
            random,
            run.report.hitrate150,
            break_recall,
            run.elapsed.as_secs_f64()
        ),
    ))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, format!("{DESK}epochs = 2\npatience = 2\n")).map_err(err)?;
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let argv = [
            "mixad",
            "--seed",
            "11",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "run-all",
        ];
        let code = mixad::cli::run(argv);
        if code != 0 {
            return Ok(outcome(false, format!("run-all exited with {code}")));
        }
        let read = |f: &str| std::fs::read(out.join(f)).map_err(err);
        outputs.push((read(pipeline::SCORES)?, read(pipeline::REPORT)?));
    }
    let same = outputs[0] == outputs[1];
    Ok(outcome(
        same,
        format!(
            "scores.csv {} bytes, report.json {} bytes, identical: {same}",
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
    ))
}

fn ablation(full_first: &Report) -> Result<(Outcome, bool), String> {
    let mut full = vec![full_first.hitrate100];
    let mut ablated = Vec::new();
    for (k, &seed) in ABLATION_SEEDS.iter().enumerate() {
        if k > 0 {
            full.push(synthetic_run(seed, LossConfig::default().lambda3)?.report.hitrate100);
        }
        ablated.push(synthetic_run(seed, 0.0)?.report.hitrate100);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mf, ma) = (mean(&full), mean(&ablated));
    let agree = full.iter().zip(&ablated).all(|(f, a)| *a <= f + 0.05);
    let per_seed: Vec<String> = ABLATION_SEEDS
        .iter()
        .zip(full.iter().zip(&ablated))
        .map(|(s, (f, a))| format!("seed {s}: {f:.3} vs {a:.3}"))
        .collect();
    Ok((
        outcome(
            ma <= mf + 0.05,
            format!(
                "mean HitRate@100% full {mf:.4}, without L3 {ma:.4} ({}){}",
                per_seed.join(", "),
                if agree { "" } else { "; seeds disagree" }
            ),
        ),
        agree,
    ))
}

fn report(id: usize, name: &str, enforced: bool, check: Check, failures: &mut usize) {
    let (pass, detail) = match check {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if !pass && enforced {
        *failures += 1;
    }
    let status = if pass { "PASS" } else { "FAIL" };
    let note = if !pass && !enforced { " [reported only]" } else { "" };
    println!("{status} {id} {name}: {detail}{note}");
}

fn main() -> ExitCode {
    let mut failures = 0;
    report(1, "gradient integrity", true, gradient_integrity(), &mut failures);
    report(2, "loss identities", true, loss_identities(), &mut failures);
    report(3, "JSD suite", true, jsd_suite(), &mut failures);
    report(4, "period and seasonal removal", true, period_and_seasonality(), &mut failures);
    report(5, "metric oracles", true, metric_oracles(), &mut failures);

    let bar = synthetic_run(BAR_SEED, LossConfig::default().lambda3);
    let bar_check = bar.as_ref().map_err(Clone::clone).and_then(synthetic_bar);
    report(6, "synthetic end-to-end bar", true, bar_check, &mut failures);
    report(7, "determinism", true, determinism(), &mut failures);

    let ablation_check = bar.and_then(|run| ablation(&run.report));
    let enforced = matches!(ablation_check, Ok((_, true)));
    report(8, "L3 ablation", enforced, ablation_check.map(|(o, _)| o), &mut failures);

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
