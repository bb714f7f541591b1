//! On-disk dataset layout.
//!
//! A dataset directory holds:
//!
//! * `train.csv`, `test.csv`: one row per timestamp, one column per feature,
//!   header row of feature names;
//! * `labels.csv`: one `0`/`1` per test timestamp, optional `label` header;
//! * `interpretation.csv`: `start,end,causes` rows with inclusive test
//!   timestamps and `;`-separated feature indices, optional header;
//! * `meta.json` (optional): `{"note": "..."}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{fmt_f64, write_atomic};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Labeled anomaly span with its ground-truth causal features.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalSegment {
    pub start: usize,
    pub end: usize,
    pub causes: Vec<usize>,
}

/// Train/test series, labels and interpretation ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub names: Vec<String>,
    /// `N×T_train`, one row per feature.
    pub train: Tensor,
    /// `N×T_test`.
    pub test: Tensor,
    pub labels: Vec<bool>,
    pub interpretation: Vec<CausalSegment>,
    pub note: String,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    note: String,
}

impl DatasetBundle {
    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::invalid("dataset has no features"));
        }
        if self.train.rows() != n || self.test.rows() != n {
            return Err(Error::invalid(format!(
                "train has {} features and test has {}, expected {n}",
                self.train.rows(),
                self.test.rows()
            )));
        }
        if self.labels.len() != self.test.cols() {
            return Err(Error::invalid(format!(
                "{} labels for {} test timestamps",
                self.labels.len(),
                self.test.cols()
            )));
        }
        for seg in &self.interpretation {
            check_segment(seg, self.test.cols(), n).map_err(Error::invalid)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (names, train) = read_series(&dir.join("train.csv"))?;
        let (test_names, test) = read_series(&dir.join("test.csv"))?;
        if test_names.len() != names.len() {
            return Err(Error::Parse {
                path: dir.join("test.csv"),
                line: 1,
                msg: format!("{} columns, train.csv has {}", test_names.len(), names.len()),
            });
        }
        let labels = read_labels(&dir.join("labels.csv"))?;
        let interp_path = dir.join("interpretation.csv");
        let interpretation = read_interpretation(&interp_path, test.cols(), names.len())?;
        let meta_path = dir.join("meta.json");
        let note = if meta_path.exists() {
            let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: meta_path.clone(),
                line: e.line(),
                msg: e.to_string(),
            })?;
            meta.note
        } else {
            String::new()
        };
        let bundle = Self {
            names,
            train,
            test,
            labels,
            interpretation,
            note,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("train.csv"), series_csv(&self.names, &self.train).as_bytes())?;
        write_atomic(&dir.join("test.csv"), series_csv(&self.names, &self.test).as_bytes())?;
        let mut labels = String::from("label\n");
        for &l in &self.labels {
            labels.push_str(if l { "1\n" } else { "0\n" });
        }
        write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;
        let mut interp = String::from("start,end,causes\n");
        for seg in &self.interpretation {
            let causes: Vec<String> = seg.causes.iter().map(usize::to_string).collect();
            interp.push_str(&format!("{},{},{}\n", seg.start, seg.end, causes.join(";")));
        }
        write_atomic(&dir.join("interpretation.csv"), interp.as_bytes())?;
        let meta = serde_json::to_string_pretty(&Meta { note: self.note.clone() }).expect("serializable");
        write_atomic(&dir.join("meta.json"), meta.as_bytes())
    }
}

fn check_segment(seg: &CausalSegment, t: usize, n: usize) -> std::result::Result<(), String> {
    if seg.start > seg.end {
        return Err(format!("segment start {} after end {}", seg.start, seg.end));
    }
    if seg.end >= t {
        return Err(format!("segment end {} outside {t} test timestamps", seg.end));
    }
    if seg.causes.is_empty() {
        return Err("segment has no causal features".into());
    }
    if let Some(&c) = seg.causes.iter().find(|&&c| c >= n) {
        return Err(format!("causal feature {c} out of range for {n} features"));
    }
    Ok(())
}

fn series_csv(names: &[String], x: &Tensor) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(names).expect("in-memory write");
    for t in 0..x.cols() {
        w.write_record((0..x.rows()).map(|i| fmt_f64(x.get(i, t))))
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file))
}

fn records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in reader(path)?.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        msg: msg.into(),
    }
}

fn read_series(path: &Path) -> Result<(Vec<String>, Tensor)> {
    let rows = records(path)?;
    let Some(((_, header), body)) = rows.split_first() else {
        return Err(parse_err(path, 1, "empty file"));
    };
    let names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let n = names.len();
    if body.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let t = body.len();
    let mut data = vec![0.0; n * t];
    for (col, (line, rec)) in body.iter().enumerate() {
        if rec.len() != n {
            return Err(parse_err(path, *line, format!("expected {n} fields, found {}", rec.len())));
        }
        for (i, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(path, *line, format!("non-numeric value {cell:?} in column {}", names[i])))?;
            if !v.is_finite() {
                return Err(parse_err(path, *line, format!("non-finite value in column {}", names[i])));
            }
            data[i * t + col] = v;
        }
    }
    Ok((names, Tensor::new(vec![n, t], data)?))
}

fn read_labels(path: &Path) -> Result<Vec<bool>> {
    let mut labels = Vec::new();
    for (k, (line, rec)) in records(path)?.into_iter().enumerate() {
        if rec.len() != 1 {
            return Err(parse_err(path, line, format!("expected 1 field, found {}", rec.len())));
        }
        match rec[0].trim() {
            "0" => labels.push(false),
            "1" => labels.push(true),
            _ if k == 0 => {}
            other => return Err(parse_err(path, line, format!("label must be 0 or 1, found {other:?}"))),
        }
    }
    Ok(labels)
}

fn read_interpretation(path: &Path, t: usize, n: usize) -> Result<Vec<CausalSegment>> {
    let mut out = Vec::new();
    for (k, (line, rec)) in records(path)?.into_iter().enumerate() {
        if k == 0 && rec.get(0).is_some_and(|s| s.trim().parse::<usize>().is_err()) {
            continue;
        }
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, found {}", rec.len())));
        }
        let int = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("not a nonnegative integer: {s:?}")))
        };
        let causes = rec[2].split(';').map(int).collect::<Result<Vec<_>>>()?;
        let seg = CausalSegment {
            start: int(&rec[0])?,
            end: int(&rec[1])?,
            causes,
        };
        check_segment(&seg, t, n).map_err(|m| parse_err(path, line, m))?;
        out.push(seg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, interp: &str) {
        std::fs::write(dir.join("train.csv"), "a,b\n1,2\n3,4\n5,6\n").unwrap();
        std::fs::write(dir.join("test.csv"), "a,b\n0.5,1\n1.5,2\n2.5,3\n3.5,4\n").unwrap();
        std::fs::write(dir.join("labels.csv"), "0\n1\n1\n0\n").unwrap();
        std::fs::write(dir.join("interpretation.csv"), interp).unwrap();
    }

    #[test]
    fn loads_small_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), "1,2,0;1\n");
        let b = DatasetBundle::load(dir.path()).unwrap();
        assert_eq!(b.n_features(), 2);
        assert_eq!(b.test.cols(), 4);
        assert_eq!(b.train.row(1), &[2.0, 4.0, 6.0]);
        assert_eq!(b.labels, vec![false, true, true, false]);
        assert_eq!(
            b.interpretation,
            vec![CausalSegment {
                start: 1,
                end: 2,
                causes: vec![0, 1]
            }]
        );
    }

    #[test]
    fn parses_semicolon_causes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("i.csv"), "start,end,causes\n3,5,0;2\n").unwrap();
        let segs = read_interpretation(&dir.path().join("i.csv"), 10, 3).unwrap();
        assert_eq!(
            segs,
            vec![CausalSegment {
                start: 3,
                end: 5,
                causes: vec![0, 2]
            }]
        );
    }

    #[test]
    fn reversed_span_names_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("i.csv"), "start,end,causes\n1,1,0\n5,3,0\n").unwrap();
        let err = read_interpretation(&dir.path().join("i.csv"), 10, 3).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn ragged_and_non_numeric_rows_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, "a,b\n1,2\n3\n").unwrap();
        assert!(matches!(read_series(&p).unwrap_err(), Error::Parse { line: 3, .. }));
        std::fs::write(&p, "a,b\n1,x\n").unwrap();
        let err = read_series(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(err.to_string().contains("s.csv"));
    }

    #[test]
    fn missing_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = DatasetBundle::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("train.csv"));
    }

    #[test]
    fn round_trip() {
        let b = DatasetBundle {
            names: vec!["x".into(), "y".into(), "z".into()],
            train: Tensor::from_fn(3, 5, |i, t| (i as f64 + 0.1) / (t as f64 + 3.0)),
            test: Tensor::from_fn(3, 4, |i, t| -(i as f64) * 1e-17 + t as f64 / 7.0),
            labels: vec![false, true, true, false],
            interpretation: vec![CausalSegment {
                start: 1,
                end: 2,
                causes: vec![2, 0],
            }],
            note: "unit".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        b.write(dir.path()).unwrap();
        assert_eq!(DatasetBundle::load(dir.path()).unwrap(), b);
    }
}
