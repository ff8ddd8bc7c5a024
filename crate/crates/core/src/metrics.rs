//! Ranking and classification metrics.

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension { expected: scores.len(), got: labels.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    Ok(())
}

/// Indices sorted by descending score, ties kept in input order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Average precision `Σ_n (R_n - R_{n-1}) P_n` over distinct score
/// thresholds (tied scores enter together).
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 {
        return Err(Error::InsufficientData("average precision needs a positive example".into()));
    }
    let idx = descending(scores);
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            tp += labels[idx[i]] as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(ap)
}

/// Fraction of examples with `(score >= threshold) == label`.
pub fn accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::InsufficientData("accuracy of an empty set".into()));
    }
    let hits = scores.iter().zip(labels).filter(|(s, l)| (**s >= threshold) == **l).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney statistic with mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InsufficientData("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += idx[i..j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One-vs-rest AUC averaged over classes that have both positive and
/// negative examples among `labels`.
pub fn macro_auc_ovr(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension { expected: probs.len(), got: labels.len() });
    }
    let mut aucs = Vec::new();
    for c in 0..n_classes {
        let y: Vec<bool> = labels.iter().map(|l| *l == c).collect();
        if y.iter().all(|v| *v) || !y.iter().any(|v| *v) {
            continue;
        }
        let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        aucs.push(roc_auc(&s, &y)?);
    }
    if aucs.is_empty() {
        return Err(Error::InsufficientData("no class has both positive and negative examples".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}
