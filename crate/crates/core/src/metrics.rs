//! Classification metrics: confusion matrix, precision/recall/F1
//! (micro and macro), one-vs-rest ROC AUC, and RMSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// K×K counts; rows are the true class, columns the predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// One-vs-rest (TP, FP, FN, TN) for class `c`.
    pub fn ovr(&self, c: usize) -> (u64, u64, u64, u64) {
        let k = self.num_classes();
        let tp = self.counts[c][c];
        let fp: u64 = (0..k).filter(|&r| r != c).map(|r| self.counts[r][c]).sum();
        let fn_: u64 = (0..k).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }

    /// CSV grid, one row of counts per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.counts {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} labels vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= k || p >= k {
            return Err(Error::Domain(format!("label {} out of range [0,{k})", t.max(p))));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassRates {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// All headline numbers for one evaluation run. AUC and RMSE are
/// filled in by their own computations and default to None when the
/// inputs (probabilities) are unavailable.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision_micro: f64,
    pub recall_micro: f64,
    pub f1_micro: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    /// Macro-averaged recall.
    pub sensitivity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    pub per_class: Vec<ClassRates>,
    /// True when some per-class rate had a zero denominator and was
    /// reported as 0.
    pub zero_denominator: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Accuracy, micro and macro precision/recall/F1, and sensitivity
/// from a confusion matrix. Per-class rates with an empty denominator
/// are reported as 0 and flagged.
pub fn basic_rates(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let k = cm.num_classes();
    let total = cm.total();
    if k == 0 || total == 0 {
        return Err(Error::Data("empty confusion matrix".into()));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut flagged = false;
    let (mut tp_sum, mut fp_sum, mut fn_sum) = (0u64, 0u64, 0u64);
    for c in 0..k {
        let (tp, fp, fn_, _tn) = cm.ovr(c);
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn_;
        let (precision, f1_p) = ratio(tp, tp + fp);
        let (recall, f1_r) = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        flagged |= f1_p || f1_r;
        per_class.push(ClassRates { precision, recall, f1 });
    }
    let accuracy = (0..k).map(|c| cm.counts[c][c]).sum::<u64>() as f64 / total as f64;
    let (precision_micro, _) = ratio(tp_sum, tp_sum + fp_sum);
    let (recall_micro, _) = ratio(tp_sum, tp_sum + fn_sum);
    let f1_micro = if precision_micro + recall_micro > 0.0 {
        2.0 * precision_micro * recall_micro / (precision_micro + recall_micro)
    } else {
        0.0
    };
    let kf = k as f64;
    let precision_macro = per_class.iter().map(|r| r.precision).sum::<f64>() / kf;
    let recall_macro = per_class.iter().map(|r| r.recall).sum::<f64>() / kf;
    let f1_macro = per_class.iter().map(|r| r.f1).sum::<f64>() / kf;
    Ok(MetricReport {
        accuracy,
        precision_micro,
        recall_micro,
        f1_micro,
        precision_macro,
        recall_macro,
        f1_macro,
        sensitivity: recall_macro,
        auc: None,
        rmse: None,
        per_class,
        zero_denominator: flagged,
    })
}

/// Binary AUC for one class against the rest via trapezoidal
/// integration over the tie-grouped threshold sweep.
fn binary_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let pos_total = positive.iter().filter(|&&p| p).count() as f64;
    let neg_total = positive.len() as f64 - pos_total;
    if pos_total == 0.0 || neg_total == 0.0 {
        return f64::NAN;
    }
    let (mut tp, mut fp) = (0.0f64, 0.0f64);
    let (mut prev_tpr, mut prev_fpr) = (0.0f64, 0.0f64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        // advance through the whole tie group before emitting a point
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let tpr = tp / pos_total;
        let fpr = fp / neg_total;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    auc + (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0
}

/// Macro one-vs-rest AUC over the classes present in the truth;
/// absent classes are skipped with a warning.
pub fn roc_auc(truth: &[usize], scores: &Tensor<f32>) -> Result<f64> {
    let s = scores.shape();
    if s.len() != 2 || s[0] != truth.len() {
        return Err(Error::Shape(format!(
            "scores must be [N,K] matching {} labels, got {s:?}",
            truth.len()
        )));
    }
    let (n, k) = (s[0], s[1]);
    if truth.iter().any(|&t| t >= k) {
        return Err(Error::Domain("label out of range for score matrix".into()));
    }
    let mut sum = 0.0;
    let mut used = 0;
    for c in 0..k {
        let positive: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        if !positive.iter().any(|&p| p) {
            eprintln!("warning: class {c} absent from truth; skipped in AUC");
            continue;
        }
        let col: Vec<f64> = (0..n).map(|i| scores.data()[i * k + c] as f64).collect();
        let auc = binary_auc(&col, &positive);
        if auc.is_nan() {
            // all samples positive for this class: undefined, skip
            eprintln!("warning: class {c} has no negatives; skipped in AUC");
            continue;
        }
        sum += auc;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Data("no class admits a one-vs-rest AUC".into()));
    }
    Ok(sum / used as f64)
}

/// Root mean square error over all N·K entries.
pub fn rmse(truth_onehot: &Tensor<f32>, probs: &Tensor<f32>) -> Result<f64> {
    if truth_onehot.shape() != probs.shape() {
        return Err(Error::Shape(format!(
            "rmse shapes differ: {:?} vs {:?}",
            truth_onehot.shape(),
            probs.shape()
        )));
    }
    let n = truth_onehot.len() as f64;
    if n == 0.0 {
        return Err(Error::Data("rmse of empty tensors".into()));
    }
    let ss: f64 = truth_onehot
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&a, &b)| ((a - b) as f64).powi(2))
        .sum();
    Ok((ss / n).sqrt())
}

/// One-hot encode labels into [N,K].
pub fn one_hot(labels: &[usize], k: usize) -> Result<Tensor<f32>> {
    let mut t = Tensor::<f32>::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Domain(format!("label {l} out of range [0,{k})")));
        }
        t.data_mut()[i * k + l] = 1.0;
    }
    Ok(t)
}

/// Row-wise argmax of a probability matrix.
pub fn argmax_rows(probs: &Tensor<f32>) -> Vec<usize> {
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    (0..n)
        .map(|i| {
            let row = &probs.data()[i * k..(i + 1) * k];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0
        })
        .collect()
}

/// Full report from truth labels and predicted probabilities.
pub fn evaluate(truth: &[usize], probs: &Tensor<f32>, k: usize) -> Result<MetricReport> {
    let pred = argmax_rows(probs);
    let cm = confusion(truth, &pred, k)?;
    let mut report = basic_rates(&cm)?;
    report.auc = Some(roc_auc(truth, probs)?);
    report.rmse = Some(rmse(&one_hot(truth, k)?, probs)?);
    Ok(report)
}
