use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

fn sorted_set(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s.dedup();
    s
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `|pred ∩ truth| / |pred ∪ truth|`, 1 when both are empty.
pub fn jaccard_score(pred: &[usize], truth: &[usize]) -> f64 {
    let (p, t) = (sorted_set(pred), sorted_set(truth));
    let inter = intersection_size(&p, &t);
    let union = p.len() + t.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(pred: &[usize], truth: &[usize]) -> f64 {
    let (p, t) = (sorted_set(pred), sorted_set(truth));
    let inter = intersection_size(&p, &t) as f64;
    let precision = if p.is_empty() { 0.0 } else { inter / p.len() as f64 };
    let recall = if t.is_empty() { 0.0 } else { inter / t.len() as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Average precision of one ranking: sort by score descending (ties by
/// index ascending) and average the precision at each positive. `None`
/// when there are no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len().min(labels.len())).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Some(total / n_pos as f64)
}

/// Split-level metrics. Jaccard, F1 and PRAUC are macro-averaged over
/// visits; the DDI rate pools medication pairs over all visits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: f64,
    pub ddi_rate: f64,
    pub n_visits: usize,
    /// Visits without any positive label, excluded from PRAUC.
    pub prauc_skipped: usize,
    #[serde(skip)]
    pub per_visit: PerVisit,
}

/// Per-visit values kept for resampling.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerVisit {
    pub jaccard: Vec<f64>,
    pub f1: Vec<f64>,
    pub prauc: Vec<f64>,
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn jaccard_examples() {
        // {A,B,C} vs {B,C,D}
        assert_eq!(jaccard_score(&[0, 1, 2], &[1, 2, 3]), 0.5);
        assert_eq!(jaccard_score(&[4, 2], &[2, 4]), 1.0);
        assert_eq!(jaccard_score(&[0], &[1]), 0.0);
        assert_eq!(jaccard_score(&[], &[]), 1.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_score(&[1, 2], &[2, 3]), 0.5);
        assert!((f1_score(&[1], &[1, 2]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_score(&[], &[1]), 0.0);
    }

    #[test]
    fn ap_examples() {
        let labels = [true, true, false, false];
        assert_eq!(average_precision(&[0.9, 0.8, 0.2, 0.1], &labels), Some(1.0));
        let n = 7;
        let mut labels = vec![false; n];
        labels[3] = true;
        let mut scores = vec![1.0; n];
        scores[3] = 0.0;
        assert!((average_precision(&scores, &labels).unwrap() - 1.0 / n as f64).abs() < 1e-15);
        assert_eq!(average_precision(&[0.5], &[false]), None);
    }

    #[test]
    fn ap_ties_break_by_index() {
        // equal scores: index 0 ranks first
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(1.0));
    }
}
