//! JSON documents, ROC curves and stored predictions as CSV.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use brainstate_core::eval::{MetricsReport, Predictions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{read_all, write_all};
use crate::error::{Error, Result};

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_all(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_all(path)?).map_err(|e| Error::json(path, e))
}

/// One ROC point of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRow {
    pub class: usize,
    pub fpr: f64,
    pub tpr: f64,
    /// `inf` and `-inf` mark the end points.
    pub threshold: String,
}

fn threshold_text(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t}")
    }
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

/// Columns `class,fpr,tpr,threshold`, classes in order.
pub fn write_roc_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = create(path)?;
    for (class, roc) in report.roc.iter().enumerate() {
        for ((&fpr, &tpr), &t) in roc.fpr.iter().zip(&roc.tpr).zip(&roc.thresholds) {
            w.serialize(RocRow { class, fpr, tpr, threshold: threshold_text(t) }).map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns `truth,predicted,p0,…,p{C-1}`, one row per evaluated sample.
pub fn write_predictions(path: &Path, p: &Predictions) -> Result<()> {
    let mut w = create(path)?;
    let c = p.probabilities.first().map_or(0, Vec::len);
    let mut header = vec!["truth".to_string(), "predicted".to_string()];
    header.extend((0..c).map(|k| format!("p{k}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for ((t, y), probs) in p.truth.iter().zip(&p.predicted).zip(&p.probabilities) {
        let mut row = vec![t.to_string(), y.to_string()];
        // shortest representation that parses back to the same f64
        row.extend(probs.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let bytes = read_all(path)?;
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    let header = rd.headers().map_err(|e| Error::csv(path, e))?.clone();
    if header.len() < 2 || &header[0] != "truth" || &header[1] != "predicted" {
        return Err(Error::Format { path: path.into(), offset: 0, msg: "expected columns truth,predicted,p0,...".into() });
    }
    let mut out = Predictions { truth: Vec::new(), predicted: Vec::new(), probabilities: Vec::new() };
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let bad = |msg: String| Error::Format { path: path.into(), offset, msg };
        if rec.len() != header.len() {
            return Err(bad(format!("{} fields, header has {}", rec.len(), header.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("`{s}` is not a class index")));
        out.truth.push(int(&rec[0])?);
        out.predicted.push(int(&rec[1])?);
        let probs = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        out.probabilities.push(probs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictions_round_trip_and_recompute() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        let preds = Predictions {
            truth: vec![0, 1, 1, 0],
            predicted: vec![0, 1, 0, 0],
            probabilities: vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.6000000000000001, 0.4], vec![0.55, 0.45]],
        };
        write_predictions(&p, &preds).unwrap();
        let back = read_predictions(&p).unwrap();
        assert_eq!(back, preds);
        assert_eq!(back.metrics(2).unwrap(), preds.metrics(2).unwrap());
    }

    #[test]
    fn roc_csv_has_infinite_end_points() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roc.csv");
        let preds = Predictions { truth: vec![0, 1], predicted: vec![0, 1], probabilities: vec![vec![0.8, 0.2], vec![0.1, 0.9]] };
        write_roc_csv(&p, &preds.metrics(2).unwrap()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "class,fpr,tpr,threshold");
        assert_eq!(lines[1], "0,0.0,0.0,inf");
        assert!(lines.iter().any(|l| l.ends_with(",-inf")));
    }

    #[test]
    fn metrics_json_keeps_infinite_thresholds() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let preds = Predictions { truth: vec![0, 1], predicted: vec![0, 1], probabilities: vec![vec![0.8, 0.2], vec![0.1, 0.9]] };
        let m = preds.metrics(2).unwrap();
        write_json(&p, &m).unwrap();
        assert_eq!(read_json::<MetricsReport>(&p).unwrap(), m);
    }
}
