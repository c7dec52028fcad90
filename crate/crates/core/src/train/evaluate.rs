use alloc::vec;
use alloc::vec::Vec;

use super::metrics::{average_precision, f1_score, jaccard_score, mean, Metrics, PerVisit};
use crate::ddi::{ddi_rate, Adjacency};
use crate::ehr::PatientRecord;
use crate::error::Result;
use crate::model::{threshold_set, InferenceSession};
use crate::numcore::Scalar;

/// Anything that scores the medication vocabulary for a patient's visits.
pub trait Recommender {
    /// Scores for visits `from ..= upto` (1-based), one vector per visit.
    fn scores(&self, patient: &PatientRecord, from: usize, upto: usize) -> Result<Vec<Vec<f64>>>;

    /// Recommended set for one score vector.
    fn select(&self, scores: &[f64]) -> Vec<usize>;
}

/// A trained model at its decision threshold.
pub struct ModelRecommender<'m, T> {
    pub session: InferenceSession<'m, T>,
    pub threshold: f64,
}

impl<T: Scalar> Recommender for ModelRecommender<'_, T> {
    fn scores(&self, patient: &PatientRecord, from: usize, upto: usize) -> Result<Vec<Vec<f64>>> {
        self.session.scores(patient, from, upto)
    }

    fn select(&self, scores: &[f64]) -> Vec<usize> {
        threshold_set(scores, self.threshold)
    }
}

/// Always recommends the `k` drugs most frequently prescribed in training
/// (ties by index); scores are the training prescription frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct PrevalenceBaseline {
    pub frequency: Vec<f64>,
    pub top: Vec<usize>,
}

impl PrevalenceBaseline {
    /// `k` is the rounded mean number of medications per training visit.
    pub fn fit(train: &[PatientRecord], n_drugs: usize) -> Self {
        let mut counts = vec![0usize; n_drugs];
        let (mut n_visits, mut n_meds) = (0usize, 0usize);
        for v in train.iter().flat_map(|p| &p.visits) {
            n_visits += 1;
            n_meds += v.medications.len();
            for &m in &v.medications {
                counts[m] += 1;
            }
        }
        let k = if n_visits == 0 { 1 } else { ((n_meds as f64 / n_visits as f64) + 0.5) as usize }.clamp(1, n_drugs.max(1));
        let mut order: Vec<usize> = (0..n_drugs).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        order.truncate(k);
        order.sort_unstable();
        let denom = n_visits.max(1) as f64;
        PrevalenceBaseline { frequency: counts.iter().map(|&c| c as f64 / denom).collect(), top: order }
    }
}

impl Recommender for PrevalenceBaseline {
    fn scores(&self, _patient: &PatientRecord, from: usize, upto: usize) -> Result<Vec<Vec<f64>>> {
        Ok((from..=upto).map(|_| self.frequency.clone()).collect())
    }

    fn select(&self, _scores: &[f64]) -> Vec<usize> {
        self.top.clone()
    }
}

/// Metrics over every visit `t ≥ 2` of `patients`.
pub fn evaluate<R: Recommender + ?Sized>(rec: &R, patients: &[PatientRecord], ddi: &Adjacency) -> Result<Metrics> {
    let n = ddi.n();
    let mut per = PerVisit::default();
    let mut predicted = Vec::new();
    let mut skipped = 0;
    for p in patients.iter().filter(|p| p.visits.len() >= 2) {
        let all = rec.scores(p, 2, p.visits.len())?;
        for (k, scores) in all.iter().enumerate() {
            let truth = &p.visits[k + 1].medications;
            let pred = rec.select(scores);
            per.jaccard.push(jaccard_score(&pred, truth));
            per.f1.push(f1_score(&pred, truth));
            let mut labels = vec![false; n];
            for &m in truth {
                labels[m] = true;
            }
            match average_precision(scores, &labels) {
                Some(ap) => per.prauc.push(ap),
                None => skipped += 1,
            }
            predicted.push(pred);
        }
    }
    Ok(Metrics {
        jaccard: mean(&per.jaccard),
        f1: mean(&per.f1),
        prauc: mean(&per.prauc),
        ddi_rate: ddi_rate(&predicted, ddi)?,
        n_visits: predicted.len(),
        prauc_skipped: skipped,
        per_visit: per,
    })
}
