use crate::data::Metric;
use crate::error::{Error, Result};
use crate::nn::Tensor;

fn check_len(n: usize, m: usize) -> Result<()> {
    if n != m || n == 0 {
        return Err(Error::Shape(format!("{n} predictions for {m} labels")));
    }
    Ok(())
}

/// Fraction of rows whose arg-max column equals the label.
pub fn accuracy(probs: &Tensor, labels: &[f64]) -> Result<f64> {
    check_len(probs.rows(), labels.len())?;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = probs.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == y as usize
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve via the rank-sum statistic; tied scores share
/// their mean rank.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_len(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| labels[k] == 1.0).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn rmse(pred: &[f64], labels: &[f64]) -> Result<f64> {
    check_len(pred.len(), labels.len())?;
    let sse: f64 = pred.iter().zip(labels).map(|(p, y)| (p - y).powi(2)).sum();
    Ok((sse / labels.len() as f64).sqrt())
}

/// Metric value as reported. `predictions` are class probabilities
/// (`B×K`) for classification and values in label units (`B×1`) for
/// regression.
pub fn evaluate(metric: Metric, predictions: &Tensor, labels: &[f64]) -> Result<f64> {
    match metric {
        Metric::Accuracy => accuracy(predictions, labels),
        Metric::RocAuc => {
            if predictions.cols() < 2 {
                return Err(Error::Shape("ROC-AUC needs two probability columns".into()));
            }
            let pos: Vec<f64> = (0..predictions.rows()).map(|i| predictions.get2(i, 1)).collect();
            roc_auc(&pos, labels)
        }
        Metric::Rmse => rmse(predictions.data(), labels),
    }
}

/// Higher-is-better objective for a reported metric value.
pub fn orient(metric: Metric, value: f64) -> f64 {
    if metric.higher_is_better() {
        value
    } else {
        -value
    }
}
