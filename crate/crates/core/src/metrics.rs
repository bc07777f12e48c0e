//! Accuracy, calibration, predictive entropy, and OOD ROC analysis.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Id,
    Ood,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Id => "ID",
            Source::Ood => "OOD",
        }
    }
}

/// Predictive distributions for a set of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub probs: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub source: Source,
}

impl PredictionSet {
    pub fn new(probs: Vec<Vec<f64>>, labels: Option<Vec<usize>>, source: Source) -> Result<Self> {
        for (i, p) in probs.iter().enumerate() {
            let total: f64 = p.iter().sum();
            if p.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!("row {i} is not a probability vector (sum {total})")));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != probs.len() {
                return Err(Error::Shape(format!("{} predictions but {} labels", probs.len(), labels.len())));
            }
            if let Some((i, &y)) = labels.iter().enumerate().find(|&(i, &y)| y >= probs[i].len()) {
                return Err(Error::Contract(format!("label {y} at row {i} is out of range")));
            }
        }
        Ok(PredictionSet { probs, labels, source })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    fn labelled(&self) -> Result<&[usize]> {
        if self.probs.is_empty() {
            return Err(Error::Contract("empty prediction set".into()));
        }
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Contract("prediction set has no labels".into()))
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.probs.iter().map(|p| predictive_entropy(p)).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(preds: &PredictionSet) -> Result<f64> {
    let labels = preds.labelled()?;
    let correct = preds
        .probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-bin calibration statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// Equal-width bins over the max-probability confidence.
pub fn calibration_bins(preds: &PredictionSet, num_bins: usize) -> Result<Vec<CalibrationBin>> {
    if num_bins == 0 {
        return Err(Error::Contract("ECE needs at least one bin".into()));
    }
    let labels = preds.labelled()?;
    let mut count = vec![0usize; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut conf = vec![0.0; num_bins];
    for (p, &y) in preds.probs.iter().zip(labels) {
        let k = argmax(p);
        let c = p[k];
        let b = ((c * num_bins as f64) as usize).min(num_bins - 1);
        count[b] += 1;
        conf[b] += c;
        if k == y {
            correct[b] += 1;
        }
    }
    Ok((0..num_bins)
        .map(|b| {
            let n = count[b];
            let (accuracy, confidence) = if n == 0 {
                (0.0, 0.0)
            } else {
                (correct[b] as f64 / n as f64, conf[b] / n as f64)
            };
            CalibrationBin {
                left: b as f64 / num_bins as f64,
                right: (b + 1) as f64 / num_bins as f64,
                count: n,
                accuracy,
                confidence,
            }
        })
        .collect())
}

/// Expected calibration error `Σ (n_b / N) |acc_b - conf_b|`.
pub fn ece(preds: &PredictionSet, num_bins: usize) -> Result<f64> {
    let bins = calibration_bins(preds, num_bins)?;
    let n = preds.len() as f64;
    Ok(bins
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.confidence).abs())
        .sum())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn predictive_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub auc: f64,
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`,
    /// OOD being the positive class.
    pub points: Vec<(f64, f64)>,
}

/// `P(ood > id) + ½ P(ood = id)` over all pairs.
pub fn roc_auc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::Contract("ROC-AUC needs nonempty ID and OOD score sets".into()));
    }
    if id_scores.iter().chain(ood_scores).any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let mut id = id_scores.to_vec();
    id.sort_by(f64::total_cmp);
    let mut twice_wins: u128 = 0;
    for &s in ood_scores {
        let below = id.partition_point(|&x| x < s);
        let not_above = id.partition_point(|&x| x <= s);
        twice_wins += 2 * below as u128 + (not_above - below) as u128;
    }
    Ok(twice_wins as f64 / (2.0 * id.len() as f64 * ood_scores.len() as f64))
}

pub fn roc_curve(id_scores: &[f64], ood_scores: &[f64]) -> Result<RocCurve> {
    let auc = roc_auc(id_scores, ood_scores)?;
    let mut thresholds: Vec<f64> = id_scores.iter().chain(ood_scores).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (n_id, n_ood) = (id_scores.len() as f64, ood_scores.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    for thr in thresholds {
        let fp = id_scores.iter().filter(|&&s| s >= thr).count() as f64;
        let tp = ood_scores.iter().filter(|&&s| s >= thr).count() as f64;
        points.push((fp / n_id, tp / n_ood));
    }
    Ok(RocCurve { auc, points })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub split: String,
}

impl MetricRow {
    pub fn new(metric: &str, value: f64, split: &str) -> Self {
        MetricRow {
            metric: metric.into(),
            value,
            split: split.into(),
        }
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "metric,value,split")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.metric, r.value, r.split)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
    pub source: Source,
}

/// Equal-width histogram of `values` over `[lo, hi]`; values outside are
/// clamped into the end bins.
pub fn histogram(values: &[f64], num_bins: usize, lo: f64, hi: f64, source: Source) -> Result<Vec<HistogramBin>> {
    if num_bins == 0 || !(hi > lo) {
        return Err(Error::Contract(format!("bad histogram range [{lo}, {hi}] with {num_bins} bins")));
    }
    let width = (hi - lo) / num_bins as f64;
    let mut counts = vec![0usize; num_bins];
    for &v in values {
        let b = ((v - lo) / width).floor().clamp(0.0, (num_bins - 1) as f64) as usize;
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            left: lo + b as f64 * width,
            right: lo + (b + 1) as f64 * width,
            count,
            source,
        })
        .collect())
}

pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], mut out: W) -> std::io::Result<()> {
    writeln!(out, "bin_left,bin_right,count,source")?;
    for b in bins {
        writeln!(out, "{},{},{},{}", b.left, b.right, b.count, b.source.as_str())?;
    }
    Ok(())
}
