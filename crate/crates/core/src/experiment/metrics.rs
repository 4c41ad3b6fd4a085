use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::MetricsRecord;

/// Column names: `segment, step, lr, total`, then `loss_*` and `lambda_*`
/// per term, `alpha_*` per block, and `rel_l2`.
pub fn metrics_header(terms: &[String], blocks: usize) -> Vec<String> {
    let mut h: Vec<String> = ["segment", "step", "lr", "total"].iter().map(|s| s.to_string()).collect();
    h.extend(terms.iter().map(|t| format!("loss_{t}")));
    h.extend(terms.iter().map(|t| format!("lambda_{t}")));
    h.extend((0..blocks).map(|b| format!("alpha_{b}")));
    h.push("rel_l2".into());
    h
}

/// Floats are written in shortest round-trip form, so parsing the file
/// gives back the exact records.
pub fn metrics_to_csv(terms: &[String], records: &[MetricsRecord]) -> String {
    let blocks = records.first().map_or(0, |r| r.alphas.len());
    let mut s = metrics_header(terms, blocks).join(",");
    s.push('\n');
    for r in records {
        write!(s, "{},{},{:e},{:e}", r.segment, r.step, r.lr, r.total).unwrap();
        for v in r.terms.iter().chain(&r.lambdas).chain(&r.alphas) {
            write!(s, ",{v:e}").unwrap();
        }
        match r.rel_l2 {
            Some(e) => writeln!(s, ",{e:e}").unwrap(),
            None => s.push_str(",\n"),
        }
    }
    s
}

/// Inverse of [`metrics_to_csv`]: term names and records.
pub fn parse_metrics_csv(text: &str, path: &Path) -> Result<(Vec<String>, Vec<MetricsRecord>)> {
    let corrupt = |line: usize, r: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: format!("line {line}: {r}"),
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| corrupt(1, "empty file"))?.split(',').collect();
    if header.len() < 5 || header[..4] != ["segment", "step", "lr", "total"] || header.last() != Some(&"rel_l2") {
        return Err(corrupt(1, "unexpected header"));
    }
    let terms: Vec<String> = header
        .iter()
        .filter_map(|h| h.strip_prefix("loss_"))
        .map(String::from)
        .collect();
    let k = terms.len();
    let blocks = header.iter().filter(|h| h.starts_with("alpha_")).count();
    if header.len() != 5 + 2 * k + blocks {
        return Err(corrupt(1, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(corrupt(ln, "wrong field count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| corrupt(ln, &format!("bad number '{s}'")));
        let int = |s: &str| s.parse::<u64>().map_err(|_| corrupt(ln, &format!("bad integer '{s}'")));
        let floats = |a: usize, b: usize| f[a..b].iter().map(|s| num(s)).collect::<Result<Vec<f64>>>();
        let last = f[f.len() - 1];
        out.push(MetricsRecord {
            segment: int(f[0])? as usize,
            step: int(f[1])?,
            lr: num(f[2])?,
            total: num(f[3])?,
            terms: floats(4, 4 + k)?,
            lambdas: floats(4 + k, 4 + 2 * k)?,
            alphas: floats(4 + 2 * k, 4 + 2 * k + blocks)?,
            rel_l2: if last.is_empty() { None } else { Some(num(last)?) },
        });
    }
    Ok((terms, out))
}

pub fn write_metrics(path: &Path, terms: &[String], records: &[MetricsRecord]) -> Result<()> {
    std::fs::write(path, metrics_to_csv(terms, records)).map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<MetricsRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text, path)
}

/// `Σ λᵢ Lᵢ` in term order, as the trainer accumulates it.
pub fn resum(record: &MetricsRecord) -> f64 {
    record.terms.iter().zip(&record.lambdas).fold(0.0, |acc, (l, w)| acc + w * l)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Stopped early by a step budget; resumable.
    Partial,
    Diverged,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub benchmark: String,
    pub arch: String,
    pub seed: u64,
    pub config_hash: String,
    pub status: RunStatus,
    pub steps_done: u64,
    pub segments_done: usize,
    pub segments: usize,
    pub num_params: usize,
    pub terms: Vec<String>,
    pub final_loss: Option<f64>,
    pub final_terms: Vec<f64>,
    pub final_alphas: Vec<f64>,
    /// Error of the last logged row (current window).
    pub final_rel_l2: Option<f64>,
    /// Error over the whole trained horizon.
    pub eval_rel_l2: Option<f64>,
    pub diverged_at: Option<u64>,
}

impl RunSummary {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(step: u64, rel: Option<f64>) -> MetricsRecord {
        MetricsRecord {
            segment: 1,
            step,
            total: 0.1 * 3.0 + 1e-300,
            terms: vec![0.1, 1e-17],
            lambdas: vec![3.0, 7.25],
            alphas: vec![0.0, -1.5e-3],
            lr: 1e-3 / 3.0,
            rel_l2: rel,
        }
    }

    #[test]
    fn csv_round_trip() {
        let names = vec!["ic_u".to_string(), "res".to_string()];
        let recs = vec![record(0, None), record(100, Some(0.3))];
        let text = metrics_to_csv(&names, &recs);
        assert!(text.starts_with("segment,step,lr,total,loss_ic_u,loss_res,lambda_ic_u,lambda_res,alpha_0,alpha_1,rel_l2\n"));
        let (n2, r2) = parse_metrics_csv(&text, Path::new("m.csv")).unwrap();
        assert_eq!(n2, names);
        assert_eq!(r2, recs);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let p = Path::new("m.csv");
        assert!(parse_metrics_csv("", p).is_err());
        assert!(parse_metrics_csv("a,b\n", p).is_err());
        let good = metrics_to_csv(&["res".into()], &[]);
        assert!(parse_metrics_csv(&format!("{good}0,1,x,1,1,1,\n"), p).is_err());
        assert!(parse_metrics_csv(&format!("{good}0,1,1,1,1\n"), p).is_err());
    }

    proptest! {
        #[test]
        fn floats_survive_csv(vals in prop::collection::vec(any::<f64>(), 4), step in any::<u64>()) {
            let r = MetricsRecord {
                segment: 0,
                step,
                total: vals[0],
                terms: vec![vals[1]],
                lambdas: vec![vals[2]],
                alphas: vec![],
                lr: vals[3],
                rel_l2: None,
            };
            let (_, back) = parse_metrics_csv(&metrics_to_csv(&["res".into()], std::slice::from_ref(&r)), Path::new("m")).unwrap();
            for (a, b) in [(back[0].total, r.total), (back[0].terms[0], r.terms[0]), (back[0].lr, r.lr)] {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }
}
