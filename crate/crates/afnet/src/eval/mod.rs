//! Test-split evaluation: per-SNR and per-class accuracy, confusion
//! matrices, and mean instance confidence, with CSV/SVG export.

mod export;

pub use export::{
    confusion_csv_name, export_report, ACC_BY_CLASS_SNR_CSV, ACC_BY_CLASS_SNR_SVG, ACC_BY_SNR_CSV,
    ACC_BY_SNR_SVG, CONFIDENCE_CSV, SUMMARY_CSV,
};

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, frame_to_input, ModelConfig, NetParams};
use crate::signal::{FrameRecord, ModulationScheme};
use crate::train::confidence_weight;

/// One classified instance: true class, channel condition, decision, and
/// the top-k confidence of the predicted distribution.
#[derive(Clone, Copy, Debug)]
pub struct InstanceOutcome {
    pub class: usize,
    pub snr_db: i8,
    pub pred: usize,
    pub confidence: f64,
}

/// Everything the analysis artifacts are derived from. Accuracies are
/// recomputed from the confusion matrices, so the two always agree
/// exactly; cells with no instances are `None`, never zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Class order; indexes every per-class field and confusion axis.
    pub schemes: Vec<ModulationScheme>,
    /// Ascending; indexes every per-SNR field.
    pub snrs: Vec<i8>,
    /// k used for the confidence statistics.
    pub topk: usize,
    pub overall_accuracy: f64,
    /// Unweighted mean of `acc_by_snr`.
    pub average_accuracy: f64,
    /// Best single entry of `acc_by_snr`.
    pub max_accuracy: f64,
    pub acc_by_snr: Vec<f64>,
    /// `[class][snr]`; `None` where the cell has no instances.
    pub acc_by_class_snr: Vec<Vec<Option<f64>>>,
    /// `[snr][true class][predicted class]` instance counts.
    pub confusion_by_snr: Vec<Vec<Vec<u64>>>,
    pub mean_conf_by_snr: Vec<f64>,
    /// `None` where the class has no instances at any SNR.
    pub mean_conf_by_class: Vec<Option<f64>>,
}

impl EvalReport {
    /// Checks internal consistency: field dimensions, value ranges, and
    /// that every accuracy equals the one recomputed from the confusion
    /// matrices. Run after deserializing from an untrusted file.
    pub fn validate(&self) -> Result<()> {
        let m = self.schemes.len();
        let s = self.snrs.len();
        if m == 0 || s == 0 {
            return Err(Error::invalid("report has no classes or no SNRs"));
        }
        if !self.snrs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("report SNRs must be strictly ascending"));
        }
        for (i, a) in self.schemes.iter().enumerate() {
            if self.schemes[i + 1..].contains(a) {
                return Err(Error::invalid(format!("duplicate scheme {}", a.name())));
            }
        }
        if self.topk < 2 || self.topk > m {
            return Err(Error::invalid(format!(
                "report top-k needs 2 <= k <= {m}, got {}",
                self.topk
            )));
        }
        let dims_ok = self.acc_by_snr.len() == s
            && self.mean_conf_by_snr.len() == s
            && self.mean_conf_by_class.len() == m
            && self.acc_by_class_snr.len() == m
            && self.acc_by_class_snr.iter().all(|r| r.len() == s)
            && self.confusion_by_snr.len() == s
            && self
                .confusion_by_snr
                .iter()
                .all(|c| c.len() == m && c.iter().all(|r| r.len() == m));
        if !dims_ok {
            return Err(Error::invalid("report field dimensions disagree"));
        }

        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        let ranges_ok = self.acc_by_snr.iter().all(|&x| in_unit(x))
            && self.mean_conf_by_snr.iter().all(|&x| in_unit(x))
            && self
                .mean_conf_by_class
                .iter()
                .flatten()
                .all(|&x| in_unit(x))
            && self
                .acc_by_class_snr
                .iter()
                .flatten()
                .flatten()
                .all(|&x| in_unit(x))
            && in_unit(self.overall_accuracy)
            && in_unit(self.average_accuracy)
            && in_unit(self.max_accuracy);
        if !ranges_ok {
            return Err(Error::invalid(
                "report accuracy or confidence outside [0, 1]",
            ));
        }

        let mut diag_total = 0u64;
        let mut count_total = 0u64;
        for (si, conf) in self.confusion_by_snr.iter().enumerate() {
            let mut diag = 0u64;
            let mut count = 0u64;
            for (ci, row) in conf.iter().enumerate() {
                let row_sum: u64 = row.iter().sum();
                let cell = if row_sum == 0 {
                    None
                } else {
                    Some(row[ci] as f64 / row_sum as f64)
                };
                if self.acc_by_class_snr[ci][si] != cell {
                    return Err(Error::invalid(format!(
                        "class {} at {} dB: accuracy disagrees with confusion matrix",
                        self.schemes[ci].name(),
                        self.snrs[si]
                    )));
                }
                diag += row[ci];
                count += row_sum;
            }
            if count == 0 {
                return Err(Error::invalid(format!(
                    "no instances at {} dB",
                    self.snrs[si]
                )));
            }
            if self.acc_by_snr[si] != diag as f64 / count as f64 {
                return Err(Error::invalid(format!(
                    "accuracy at {} dB disagrees with confusion matrix",
                    self.snrs[si]
                )));
            }
            diag_total += diag;
            count_total += count;
        }
        if self.overall_accuracy != diag_total as f64 / count_total as f64 {
            return Err(Error::invalid(
                "overall accuracy disagrees with confusion matrices",
            ));
        }
        if self.average_accuracy != self.acc_by_snr.iter().sum::<f64>() / s as f64 {
            return Err(Error::invalid(
                "average accuracy is not the mean of per-SNR accuracies",
            ));
        }
        if self.max_accuracy != self.acc_by_snr.iter().copied().fold(0.0, f64::max) {
            return Err(Error::invalid(
                "max accuracy is not the best per-SNR accuracy",
            ));
        }
        Ok(())
    }
}

/// Aggregates classified instances into a report. All accuracies are
/// derived from the assembled confusion matrices; confidences are
/// arithmetic means. Sequential, so the result is independent of how the
/// outcomes were produced.
pub fn build_report(
    schemes: &[ModulationScheme],
    topk: usize,
    outcomes: &[InstanceOutcome],
) -> Result<EvalReport> {
    let m = schemes.len();
    if outcomes.is_empty() {
        return Err(Error::invalid("no instances to aggregate"));
    }
    if topk < 2 || topk > m {
        return Err(Error::invalid(format!(
            "top-k needs 2 <= k <= {m}, got {topk}"
        )));
    }
    let mut snrs: Vec<i8> = outcomes.iter().map(|o| o.snr_db).collect();
    snrs.sort_unstable();
    snrs.dedup();
    let snr_index = |snr: i8| snrs.binary_search(&snr).expect("snr collected above");

    let mut confusion = vec![vec![vec![0u64; m]; m]; snrs.len()];
    let mut conf_sum_snr = vec![0.0f64; snrs.len()];
    let mut conf_n_snr = vec![0u64; snrs.len()];
    let mut conf_sum_class = vec![0.0f64; m];
    let mut conf_n_class = vec![0u64; m];
    for o in outcomes {
        if o.class >= m || o.pred >= m {
            return Err(Error::invalid(format!(
                "class index out of range: true {} pred {} with {m} classes",
                o.class, o.pred
            )));
        }
        if !o.confidence.is_finite() || !(0.0..=1.0).contains(&o.confidence) {
            return Err(Error::invalid(format!(
                "confidence {} outside [0, 1]",
                o.confidence
            )));
        }
        let si = snr_index(o.snr_db);
        confusion[si][o.class][o.pred] += 1;
        conf_sum_snr[si] += o.confidence;
        conf_n_snr[si] += 1;
        conf_sum_class[o.class] += o.confidence;
        conf_n_class[o.class] += 1;
    }

    let mut acc_by_snr = Vec::with_capacity(snrs.len());
    let mut acc_by_class_snr = vec![Vec::with_capacity(snrs.len()); m];
    let mut diag_total = 0u64;
    let mut count_total = 0u64;
    for conf in &confusion {
        let mut diag = 0u64;
        let mut count = 0u64;
        for (ci, row) in conf.iter().enumerate() {
            let row_sum: u64 = row.iter().sum();
            acc_by_class_snr[ci].push(if row_sum == 0 {
                None
            } else {
                Some(row[ci] as f64 / row_sum as f64)
            });
            diag += row[ci];
            count += row_sum;
        }
        acc_by_snr.push(diag as f64 / count as f64);
        diag_total += diag;
        count_total += count;
    }

    let report = EvalReport {
        schemes: schemes.to_vec(),
        overall_accuracy: diag_total as f64 / count_total as f64,
        average_accuracy: acc_by_snr.iter().sum::<f64>() / snrs.len() as f64,
        max_accuracy: acc_by_snr.iter().copied().fold(0.0, f64::max),
        acc_by_snr,
        acc_by_class_snr,
        confusion_by_snr: confusion,
        mean_conf_by_snr: conf_sum_snr
            .iter()
            .zip(&conf_n_snr)
            .map(|(s, n)| s / *n as f64)
            .collect(),
        mean_conf_by_class: conf_sum_class
            .iter()
            .zip(&conf_n_class)
            .map(|(s, n)| if *n == 0 { None } else { Some(s / *n as f64) })
            .collect(),
        snrs,
        topk,
    };
    report.validate()?;
    Ok(report)
}

/// Runs one inference pass over `records` and returns the full report.
/// `schemes` fixes the class order and must match the model's class
/// count; every record label must appear in it.
pub fn evaluate(
    params: &NetParams<f32>,
    cfg: &ModelConfig,
    schemes: &[ModulationScheme],
    records: &[FrameRecord],
    topk: usize,
) -> Result<EvalReport> {
    params.check_config(cfg)?;
    if schemes.len() != cfg.classes {
        return Err(Error::invalid(format!(
            "{} schemes for a {}-class model",
            schemes.len(),
            cfg.classes
        )));
    }
    if records.is_empty() {
        return Err(Error::invalid("no instances to evaluate"));
    }
    let outcomes = classify_records(params, cfg, schemes, records, topk)?;
    build_report(schemes, topk, &outcomes)
}

/// Mean instance confidence split two ways.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceStats {
    pub snrs: Vec<i8>,
    pub by_snr: Vec<f64>,
    /// `None` where the class has no instances.
    pub by_class: Vec<Option<f64>>,
}

/// Mean confidence by SNR and by class: the confidence summaries
/// without the accuracy machinery.
pub fn confidence_stats(
    params: &NetParams<f32>,
    cfg: &ModelConfig,
    schemes: &[ModulationScheme],
    records: &[FrameRecord],
    topk: usize,
) -> Result<ConfidenceStats> {
    let report = evaluate(params, cfg, schemes, records, topk)?;
    Ok(ConfidenceStats {
        snrs: report.snrs,
        by_snr: report.mean_conf_by_snr,
        by_class: report.mean_conf_by_class,
    })
}

/// Classifies every record (in parallel, results in record order).
fn classify_records(
    params: &NetParams<f32>,
    cfg: &ModelConfig,
    schemes: &[ModulationScheme],
    records: &[FrameRecord],
    topk: usize,
) -> Result<Vec<InstanceOutcome>> {
    records
        .par_iter()
        .map(|r| {
            let class = schemes.iter().position(|s| *s == r.label).ok_or_else(|| {
                Error::invalid(format!(
                    "record labeled {} is not in the class list",
                    r.label.name()
                ))
            })?;
            let input = frame_to_input::<f32>(r);
            let probs = forward(&input, params, cfg)?;
            let pred = argmax(probs.data());
            let confidence = confidence_weight(&probs, topk)? as f64;
            Ok(InstanceOutcome {
                class,
                snr_db: r.snr_db,
                pred,
                confidence,
            })
        })
        .collect()
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Writes the report as pretty-printed JSON.
pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a report written by [`write_report_json`] and validates it.
pub fn read_report_json(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let report: EvalReport = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    report.validate()?;
    Ok(report)
}
