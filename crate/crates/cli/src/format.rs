//! Text formats: CSV tables and the JSON evaluation report.

use std::path::Path;

use serde::{Deserialize, Serialize};
use svsoftmax_core::eval::RocPoint;
use svsoftmax_core::{EpochRecord, EvalReport, TprPoint};

use crate::error::CliError;

/// `printf("%.17g")`: 17 significant digits, exponent form outside `[1e-4, 1e17)`.
pub fn g17(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp).max(0) as usize;
    strip_zeros(&format!("{v:.decimals$}")).to_owned()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const HISTORY_HEADER: [&str; 5] = ["epoch", "mean_loss", "train_accuracy", "sv_rate", "learning_rate"];

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTORY_HEADER).expect("in-memory write");
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            g17(r.mean_loss),
            g17(r.train_accuracy),
            g17(r.sv_rate),
            g17(r.learning_rate),
        ])
        .expect("in-memory write");
    }
    into_string(w)
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "far", "tpr"]).expect("in-memory write");
    for p in points {
        w.write_record([g17(p.threshold), g17(p.far), g17(p.tpr)]).expect("in-memory write");
    }
    into_string(w)
}

/// Column name of a FAR target, e.g. `tpr_far_1e-2`.
pub fn far_column(far: f64) -> String {
    let sci = format!("{far:e}");
    format!("tpr_far_{sci}")
}

/// One row per loss: name, rank-1, TPR at each target, intra and inter angles.
pub fn loss_table_csv(fars: &[f64], rows: &[(String, ReportFile)]) -> Result<String, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = ["loss".to_owned(), "rank1".to_owned()]
        .into_iter()
        .chain(fars.iter().map(|&f| far_column(f)))
        .chain(["intra_angle".to_owned(), "inter_angle".to_owned()])
        .collect();
    w.write_record(&header).expect("in-memory write");
    for (name, report) in rows {
        if report.tpr_at_far.len() != fars.len() {
            return Err(format!("report for {name} has {} FAR targets, expected {}", report.tpr_at_far.len(), fars.len()));
        }
        let row: Vec<String> = [name.clone(), g17(report.rank1)]
            .into_iter()
            .chain(report.tpr_at_far.iter().map(|p| g17(p.tpr)))
            .chain([g17(report.mean_intra_angle), g17(report.min_inter_center_angle)])
            .collect();
        w.write_record(&row).expect("in-memory write");
    }
    Ok(into_string(w))
}

fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

/// JSON form of an evaluation report. An infinite threshold (no score is
/// strict enough for the target) is written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub tpr_at_far: Vec<TprEntry>,
    pub rank1: f64,
    pub mean_intra_angle: f64,
    pub min_inter_center_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TprEntry {
    pub far: f64,
    pub threshold: Option<f64>,
    pub tpr: f64,
}

impl From<&EvalReport> for ReportFile {
    fn from(r: &EvalReport) -> Self {
        Self {
            tpr_at_far: r
                .tpr_at_far
                .iter()
                .map(|p: &TprPoint| TprEntry {
                    far: p.far,
                    threshold: p.threshold.is_finite().then_some(p.threshold),
                    tpr: p.tpr,
                })
                .collect(),
            rank1: r.rank1,
            mean_intra_angle: r.mean_intra_angle,
            min_inter_center_angle: r.min_inter_center_angle,
        }
    }
}

impl ReportFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("finite report serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf() {
        // reference strings from C printf("%.17g")
        let cases = [
            (0.1, "0.10000000000000001"),
            (1.0, "1"),
            (2.5, "2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (1e-4, "0.0001"),
            (123456.0, "123456"),
            (1e17, "1e+17"),
            (-0.35, "-0.34999999999999998"),
            (0.0, "0"),
            (std::f64::consts::PI, "3.1415926535897931"),
            (1e300, "1.0000000000000001e+300"),
        ];
        for (v, want) in cases {
            assert_eq!(g17(v), want, "{v}");
        }
    }

    #[test]
    fn g17_round_trips() {
        for v in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 6.02214076e23, 1e-310, -7.5e-8] {
            assert_eq!(g17(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn far_columns() {
        assert_eq!(far_column(0.1), "tpr_far_1e-1");
        assert_eq!(far_column(0.01), "tpr_far_1e-2");
        assert_eq!(far_column(0.005), "tpr_far_5e-3");
    }

    #[test]
    fn infinite_threshold_is_null() {
        let r = EvalReport {
            tpr_at_far: vec![TprPoint { far: 0.01, threshold: f64::INFINITY, tpr: 0.0 }],
            rank1: 1.0,
            mean_intra_angle: 0.5,
            min_inter_center_angle: 1.0,
        };
        let json = ReportFile::from(&r).to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["tpr_at_far"][0]["threshold"], serde_json::Value::Null);
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 4);
        let point: Vec<_> = v["tpr_at_far"][0].as_object().unwrap().keys().cloned().collect();
        assert_eq!(point, ["far", "threshold", "tpr"]);
    }

    #[test]
    fn history_layout() {
        let csv = history_csv(&[EpochRecord {
            epoch: 1,
            mean_loss: 0.1,
            train_accuracy: 0.5,
            sv_rate: 0.25,
            learning_rate: 0.1,
        }]);
        assert_eq!(
            csv,
            "epoch,mean_loss,train_accuracy,sv_rate,learning_rate\n\
             1,0.10000000000000001,0.5,0.25,0.10000000000000001\n"
        );
    }
}
