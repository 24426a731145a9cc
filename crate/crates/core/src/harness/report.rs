//! Prediction reports and their CSV / JSON encodings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "experiment,n,x,y,v,oracle,predictor,ratio,envelope,envelope_ratio,regimes";

/// One oracle-versus-predictor comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub n: u64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub oracle: f64,
    pub predictor: f64,
    /// `oracle / predictor`, with `0/0 = 1`; absent when only the predictor
    /// vanishes.
    pub ratio: Option<f64>,
    pub envelope: Option<f64>,
    pub envelope_ratio: Option<f64>,
    /// `|`-separated tags.
    pub regimes: String,
}

impl ReportRow {
    /// Fills `ratio` and, when `envelope` is given, `envelope_ratio`.
    pub fn new(experiment: &str, n: u64, (x, y, v): (f64, f64, f64), oracle: f64, predictor: f64, envelope: Option<f64>) -> Self {
        let mut regimes = String::new();
        let ratio = if oracle == 0.0 && predictor == 0.0 {
            regimes.push_str("both-zero");
            Some(1.0)
        } else if predictor == 0.0 {
            None
        } else {
            Some(oracle / predictor)
        };
        let envelope_ratio = envelope.filter(|e| *e > 0.0).map(|e| (oracle - predictor).abs() / e);
        Self { experiment: experiment.into(), n, x, y, v, oracle, predictor, ratio, envelope, envelope_ratio, regimes }
    }

    pub fn tag(mut self, tag: &str) -> Self {
        if !tag.is_empty() {
            if !self.regimes.is_empty() {
                self.regimes.push('|');
            }
            self.regimes.push_str(tag);
        }
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub rows: Vec<ReportRow>,
    /// Failed exact checks (not part of the tabular output).
    #[serde(skip)]
    pub failures: Vec<String>,
}

impl PredictionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("write to string");
}

fn opt(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        num(out, v);
    }
}

pub fn to_csv(report: &PredictionReport) -> String {
    let mut out = String::with_capacity(64 * (report.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&r.experiment);
        write!(out, ",{},", r.n).expect("write to string");
        for v in [r.x, r.y, r.v, r.oracle, r.predictor] {
            num(&mut out, v);
            out.push(',');
        }
        for v in [r.ratio, r.envelope, r.envelope_ratio] {
            opt(&mut out, v);
            out.push(',');
        }
        out.push_str(&r.regimes);
        out.push('\n');
    }
    out
}

pub fn to_json(report: &PredictionReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(&report.rows)?)
}

pub fn from_json(text: &str) -> Result<PredictionReport> {
    Ok(PredictionReport { rows: serde_json::from_str(text)?, failures: Vec::new() })
}

pub fn from_csv(text: &str) -> Result<PredictionReport> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Config("CSV header mismatch".into()));
    }
    let bad = |i: usize, what: &str| Error::Config(format!("CSV row {}: bad {what}", i + 2));
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad(i, "field count"));
        }
        let real = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i, "number"));
        let optional = |j: usize| if f[j].is_empty() { Ok(None) } else { real(j).map(Some) };
        rows.push(ReportRow {
            experiment: f[0].to_string(),
            n: f[1].parse().map_err(|_| bad(i, "n"))?,
            x: real(2)?,
            y: real(3)?,
            v: real(4)?,
            oracle: real(5)?,
            predictor: real(6)?,
            ratio: optional(7)?,
            envelope: optional(8)?,
            envelope_ratio: optional(9)?,
            regimes: f[10].to_string(),
        });
    }
    Ok(PredictionReport { rows, failures: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PredictionReport {
        PredictionReport {
            rows: vec![
                ReportRow::new("local", 256, (0.0, 0.0, 0.0), 0.1 / 3.0, 0.0333, Some(1e-4)).tag("a1|a4"),
                ReportRow::new("exit", 257, (0.0, 0.0, 0.0), 0.0, 0.0, None),
                ReportRow::new("exit", 9, (1.0, 0.0, 0.0), 1e-300, 0.0, None),
            ],
            failures: Vec::new(),
        }
    }

    #[test]
    fn ratio_conventions() {
        let r = sample();
        assert_eq!(r.rows[1].ratio, Some(1.0));
        assert_eq!(r.rows[1].regimes, "both-zero");
        assert_eq!(r.rows[2].ratio, None);
    }

    #[test]
    fn csv_round_trip() {
        let r = sample();
        let text = to_csv(&r);
        assert!(text.starts_with(&format!("{CSV_HEADER}\n")));
        assert_eq!(from_csv(&text).unwrap(), r);
        assert_eq!(to_csv(&from_csv(&text).unwrap()), text);
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(from_json(&to_json(&r).unwrap()).unwrap(), r);
    }
}
