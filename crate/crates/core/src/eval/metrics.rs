//! Binary classification metrics with ASD as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqvol::Label;

/// Clamp applied to probabilities before taking logs.
pub const CE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub method: String,
    pub ce_loss: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

/// Mean binary cross-entropy of `scores` (probability of ASD).
pub fn cross_entropy(targets: &[f64], scores: &[f64]) -> f64 {
    let n = targets.len().max(1) as f64;
    targets
        .iter()
        .zip(scores)
        .map(|(&y, &p)| {
            let p = p.clamp(CE_EPS, 1.0 - CE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.fn_;
        if n == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Zero when there are no true positives.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. `None` when a class is absent.
pub fn auc_mann_whitney(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // rank sum with averaged ranks over ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Area under the ROC curve by the trapezoidal rule over distinct thresholds.
pub fn auc_trapezoid(positive: &[bool], scores: &[f64]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if positive[idx[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp / n_pos, fp / n_neg);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

/// Report fields for `scores` (probability of ASD) against `labels`.
pub fn classification_metrics(method: &str, labels: &[Label], scores: &[f64], threshold: f64) -> Result<ClassifierReport> {
    if labels.len() != scores.len() {
        return Err(Error::Validation(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Validation("no samples to score".into()));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Validation(format!("score {s} outside [0, 1]")));
    }
    let positive: Vec<bool> = labels.iter().map(|&l| l == Label::Asd).collect();
    let targets: Vec<f64> = labels.iter().map(|l| l.target()).collect();
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let confusion = Confusion::from_predictions(&predicted, &positive);
    let auc = auc_mann_whitney(&positive, scores);
    if auc.is_none() {
        log::warn!("AUC undefined for {method}: test labels contain a single class");
    }
    Ok(ClassifierReport {
        method: method.to_string(),
        ce_loss: cross_entropy(&targets, scores),
        accuracy: confusion.accuracy(),
        f1: confusion.f1(),
        auc,
    })
}

/// CSV with columns method, test_ce_loss, test_acc, f1, auc.
pub fn reports_to_csv(reports: &[ClassifierReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "test_ce_loss", "test_acc", "f1", "auc"]).expect("in-memory write");
    for r in reports {
        w.write_record([
            r.method.clone(),
            format!("{:.6}", r.ce_loss),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.f1),
            r.auc.map(|a| format!("{a:.6}")).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
