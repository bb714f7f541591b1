//! End-to-end steps and their artifact files.

use std::path::Path;

use crate::data::{fmt_f64, write_atomic, DatasetBundle};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, Report};
use crate::graph::eval_adjacency;
use crate::interpret::{interpret, AnomalySegment};
use crate::memory::AttentionSnapshot;
use crate::model::MixadModel;
use crate::numerics::Tensor;
use crate::scoring::{attention_trace, best_f1_threshold, score_series, ScoreSeries, Threshold};
use crate::training::{train, NormalizationStats, TrainConfig, TrainOutcome};

pub const CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRACE: &str = "attention_trace.csv";
pub const SCORES: &str = "scores.csv";
pub const THRESHOLD: &str = "threshold.txt";
pub const SEGMENTS: &str = "segments.json";
pub const REPORT: &str = "report.json";
pub const ADJACENCY: &str = "adjacency.csv";

/// Normalized train and test series of a bundle.
pub fn normalized(bundle: &DatasetBundle) -> Result<(Tensor, Tensor)> {
    let stats = NormalizationStats::fit(&bundle.train);
    Ok((stats.apply(&bundle.train)?, stats.apply(&bundle.test)?))
}

pub fn train_bundle(bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (train_x, _) = normalized(bundle)?;
    let model = MixadModel::new(cfg.model_config(bundle.n_features()), cfg.seed)?;
    train(model, &train_x, cfg)
}

#[derive(Clone, Debug)]
pub struct Scored {
    pub trace: Vec<AttentionSnapshot>,
    pub scores: ScoreSeries,
    pub threshold: Threshold,
}

pub fn score_bundle(model: &MixadModel, bundle: &DatasetBundle, batch: usize) -> Result<Scored> {
    let (_, test_x) = normalized(bundle)?;
    let trace = attention_trace(model, &test_x, batch)?;
    let att: Vec<Tensor> = trace.iter().map(|s| s.attention.clone()).collect();
    let scores = score_series(&att, model.config.window)?;
    let threshold = best_f1_threshold(&scores.agg, &bundle.labels)?;
    Ok(Scored { trace, scores, threshold })
}

pub fn evaluate_bundle(scores: &Tensor, agg: &[f64], cut: f64, bundle: &DatasetBundle) -> Result<Report> {
    evaluate_run(scores, agg, cut, &bundle.labels, &bundle.interpretation)
}

pub fn trace_csv(trace: &[AttentionSnapshot], window: usize) -> String {
    let m = trace.first().map_or(0, |s| s.attention.cols());
    let mut out = String::from("t,node");
    for j in 0..m {
        out.push_str(&format!(",att_{j}"));
    }
    out.push('\n');
    for (k, snap) in trace.iter().enumerate() {
        for i in 0..snap.attention.rows() {
            let cells: Vec<String> = snap.attention.row(i).iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&format!("{},{i},{}\n", k + window - 1, cells.join(",")));
        }
    }
    out
}

pub fn scores_csv(names: &[String], adjusted: &Tensor, agg: &[f64], flagged: &[bool]) -> String {
    let mut out = format!("t,{},agg,flagged\n", names.join(","));
    for t in 0..adjusted.rows() {
        let cells: Vec<String> = adjusted.row(t).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&format!("{t},{},{},{}\n", cells.join(","), fmt_f64(agg[t]), flagged[t] as u8));
    }
    out
}

/// Parses `scores.csv` back into names, adjusted scores and aggregates.
pub fn read_scores(path: &Path) -> Result<(Vec<String>, Tensor, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        msg,
    };
    let (_, header) = lines.next().ok_or_else(|| err(0, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "t" || cols[cols.len() - 2] != "agg" || cols[cols.len() - 1] != "flagged" {
        return Err(err(0, "expected header t,<features>,agg,flagged".into()));
    }
    let names: Vec<String> = cols[1..cols.len() - 2].iter().map(|s| s.to_string()).collect();
    let n = names.len();
    let (mut data, mut agg) = (Vec::new(), Vec::new());
    for (k, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n + 3 {
            return Err(err(k, format!("expected {} fields, found {}", n + 3, cells.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(k, format!("non-numeric value {s:?}")));
        for c in &cells[1..=n] {
            data.push(num(c)?);
        }
        agg.push(num(cells[n + 1])?);
    }
    if agg.is_empty() {
        return Err(err(1, "no rows".into()));
    }
    Ok((names, Tensor::new(vec![agg.len(), n], data)?, agg))
}

pub fn read_threshold(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("not a number: {:?}", text.trim()),
    })
}

pub fn adjacency_csv(names: &[String], model: &MixadModel) -> Result<String> {
    let adj = eval_adjacency(model.params.get(model.mem_items), model.params.get(model.embed), model.config.tau)?;
    let mut out = format!("{}\n", names.join(","));
    for i in 0..adj.rows() {
        let cells: Vec<String> = adj.row(i).iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&format!("{}\n", cells.join(",")));
    }
    Ok(out)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes the scoring artifacts into `run`.
pub fn write_scored(run: &Path, names: &[String], window: usize, scored: &Scored) -> Result<()> {
    write_atomic(&run.join(TRACE), trace_csv(&scored.trace, window).as_bytes())?;
    let s = &scored.scores;
    write_atomic(
        &run.join(SCORES),
        scores_csv(names, &s.adjusted, &s.agg, &scored.threshold.flagged).as_bytes(),
    )?;
    write_atomic(&run.join(THRESHOLD), format!("{}\n", fmt_f64(scored.threshold.cut)).as_bytes())
}

pub fn segments_from_files(run: &Path) -> Result<Vec<AnomalySegment>> {
    let (_, adjusted, agg) = read_scores(&run.join(SCORES))?;
    let cut = read_threshold(&run.join(THRESHOLD))?;
    let flagged: Vec<bool> = agg.iter().map(|&a| a > cut).collect();
    interpret(&adjusted, &flagged)
}

pub fn report_from_files(run: &Path, bundle: &DatasetBundle) -> Result<Report> {
    let (names, adjusted, agg) = read_scores(&run.join(SCORES))?;
    if names.len() != bundle.n_features() || agg.len() != bundle.labels.len() {
        return Err(Error::invalid(format!(
            "{} does not match the dataset ({} features, {} timestamps)",
            run.join(SCORES).display(),
            bundle.n_features(),
            bundle.labels.len()
        )));
    }
    let cut = read_threshold(&run.join(THRESHOLD))?;
    evaluate_bundle(&adjusted, &agg, cut, bundle)
}
