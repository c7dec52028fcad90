mod common;

use hermes_core::ddi::{ddi_rate, Adjacency};
use hermes_core::ehr::{generate_synthetic, split_dataset, GeneratorConfig, PatientRecord, Split, Vocabs};
use hermes_core::model::{threshold_set, InferenceSession, ModelConfig, Variant};
use hermes_core::train::{
    average_precision, evaluate, train, ModelRecommender, PrevalenceBaseline, Recommender, TrainConfig,
};
use hermes_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cohort(n: usize, seed: u64) -> (Vocabs, Split) {
    let ds = generate_synthetic(&GeneratorConfig { n_patients: n, ..Default::default() }, seed).unwrap();
    let split = split_dataset(&ds.patients, seed).unwrap();
    (ds.vocabs, split)
}

fn small_model() -> ModelConfig {
    ModelConfig { emb_dim: 16, gru_hidden: 16, ..Default::default() }
}

fn ddi_graph(n: usize, seed: u64) -> Adjacency {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    common::random_adjacency(n, 0.05, &mut rng)
}

#[test]
fn bce_falls_over_five_epochs() {
    let (vocabs, split) = cohort(20, 5);
    let ddi = ddi_graph(vocabs.medications.len(), 5);
    let cfg = TrainConfig { max_epochs: 5, patience: 4, seed: 5, ..Default::default() };
    let out = train::<f32>(&small_model(), &cfg, &vocabs, &split, &ddi, |_| ()).unwrap();
    assert_eq!(out.history.len(), 5);
    assert!(out.history[4].bce < out.history[0].bce, "{:?}", out.history);
}

#[test]
fn same_seed_reproduces_history_bit_for_bit() {
    let (vocabs, split) = cohort(30, 9);
    let ddi = ddi_graph(vocabs.medications.len(), 9);
    let cfg = TrainConfig { max_epochs: 3, patience: 2, seed: 9, variant: Variant::GatOnly, ..Default::default() };
    let a = train::<f32>(&small_model(), &cfg, &vocabs, &split, &ddi, |_| ()).unwrap();
    let b = train::<f32>(&small_model(), &cfg, &vocabs, &split, &ddi, |_| ()).unwrap();
    let bits = |h: &[hermes_core::train::EpochRecord]| -> Vec<u64> { h.iter().map(|r| r.loss.to_bits()).collect() };
    assert_eq!(bits(&a.history), bits(&b.history));
    assert_eq!(a.model.params.tensors(), b.model.params.tensors());
}

#[test]
fn early_stopping_returns_the_best_validation_checkpoint() {
    let (vocabs, split) = cohort(40, 2);
    let ddi = ddi_graph(vocabs.medications.len(), 2);
    let cfg = TrainConfig { max_epochs: 8, patience: 2, seed: 2, ..Default::default() };
    let mut seen = Vec::new();
    let out = train::<f32>(&small_model(), &cfg, &vocabs, &split, &ddi, |r| seen.push(r.clone())).unwrap();
    assert_eq!(seen, out.history);
    let best = out.history.iter().map(|r| r.val_jaccard).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.best_val_jaccard, best);
    assert_eq!(out.history[out.best_epoch - 1].val_jaccard, best);
    let rec = ModelRecommender { session: InferenceSession::new(&out.model).unwrap(), threshold: 0.5 };
    assert_eq!(evaluate(&rec, &split.val, &ddi).unwrap().jaccard, best);
    // stopping happens `patience` epochs after the best one at the latest
    assert!(out.history.len() <= out.best_epoch + cfg.patience);
}

#[test]
fn divergence_reports_epoch_and_batch() {
    let (vocabs, split) = cohort(20, 1);
    let ddi = ddi_graph(vocabs.medications.len(), 1);
    let mut cfg = TrainConfig { max_epochs: 3, patience: 2, seed: 1, ..Default::default() };
    cfg.adam.lr = 1e38;
    match train::<f32>(&small_model(), &cfg, &vocabs, &split, &ddi, |_| ()) {
        Err(Error::Diverged { epoch, batch }) => assert!(epoch >= 1 && batch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn invalid_train_configs_are_rejected() {
    let (vocabs, split) = cohort(20, 1);
    let ddi = ddi_graph(vocabs.medications.len(), 1);
    for cfg in [
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { max_epochs: 5, patience: 5, ..Default::default() },
    ] {
        assert!(matches!(
            train::<f32>(&small_model(), &cfg, &vocabs, &split, &ddi, |_| ()),
            Err(Error::InvalidConfig(_))
        ));
    }
}

/// Scores each visit with its own true medications.
struct Oracle(usize);

impl Recommender for Oracle {
    fn scores(&self, p: &PatientRecord, from: usize, upto: usize) -> Result<Vec<Vec<f64>>> {
        Ok((from..=upto).map(|t| p.visits[t - 1].multi_hot(self.0)).collect())
    }
    fn select(&self, scores: &[f64]) -> Vec<usize> {
        threshold_set(scores, 0.5)
    }
}

struct Constant(usize);

impl Recommender for Constant {
    fn scores(&self, _: &PatientRecord, from: usize, upto: usize) -> Result<Vec<Vec<f64>>> {
        Ok((from..=upto).map(|_| vec![0.5; self.0]).collect())
    }
    fn select(&self, scores: &[f64]) -> Vec<usize> {
        threshold_set(scores, 0.5)
    }
}

fn targets(patients: &[PatientRecord]) -> Vec<Vec<usize>> {
    patients.iter().flat_map(|p| p.visits[1..].iter().map(|v| v.medications.clone())).collect()
}

#[test]
fn oracle_scorer_is_perfect() {
    let (vocabs, split) = cohort(60, 4);
    let n = vocabs.medications.len();
    let ddi = ddi_graph(n, 4);
    let m = evaluate(&Oracle(n), &split.test, &ddi).unwrap();
    assert_eq!((m.jaccard, m.f1, m.prauc), (1.0, 1.0, 1.0));
    assert_eq!(m.ddi_rate, ddi_rate(&targets(&split.test), &ddi).unwrap());
    assert_eq!(m.n_visits, targets(&split.test).len());
    assert_eq!(m.per_visit.jaccard.len(), m.n_visits);
}

#[test]
fn constant_scorer_prauc_follows_label_statistics() {
    let (vocabs, split) = cohort(60, 4);
    let n = vocabs.medications.len();
    let ddi = ddi_graph(n, 4);
    let m = evaluate(&Constant(n), &split.test, &ddi).unwrap();
    // all scores tie, so the ranking is index order
    let aps: Vec<f64> = targets(&split.test)
        .iter()
        .map(|t| {
            let (mut hits, mut sum) = (0.0, 0.0);
            for k in 0..n {
                if t.contains(&k) {
                    hits += 1.0;
                    sum += hits / (k + 1) as f64;
                }
            }
            sum / t.len() as f64
        })
        .collect();
    let want = aps.iter().sum::<f64>() / aps.len() as f64;
    assert!((m.prauc - want).abs() < 1e-12);

    // uniformly placed labels: index-order AP is close to prevalence
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    let trials = 2000;
    for _ in 0..trials {
        let labels: Vec<bool> = (0..145).map(|_| rng.random::<f64>() < 0.06).collect();
        total += average_precision(&[0.5; 145], &labels).unwrap_or(0.06);
    }
    assert!((total / trials as f64 - 0.06).abs() < 0.05);
}

#[test]
fn metrics_stay_in_unit_interval() {
    let (vocabs, split) = cohort(60, 8);
    let n = vocabs.medications.len();
    let ddi = ddi_graph(n, 8);
    let base = PrevalenceBaseline::fit(&split.train, n);
    for m in [
        evaluate(&base, &split.test, &ddi).unwrap(),
        evaluate(&Constant(n), &split.test, &ddi).unwrap(),
        evaluate(&Oracle(n), &split.test, &ddi).unwrap(),
    ] {
        for v in [m.jaccard, m.f1, m.prauc, m.ddi_rate] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert_eq!(evaluate(&base, &[], &ddi).unwrap().ddi_rate, 0.0);
}

#[test]
fn prevalence_baseline_picks_the_most_frequent_drugs() {
    let (vocabs, split) = cohort(60, 3);
    let n = vocabs.medications.len();
    let base = PrevalenceBaseline::fit(&split.train, n);
    let visits: Vec<_> = split.train.iter().flat_map(|p| &p.visits).collect();
    let mean = visits.iter().map(|v| v.medications.len()).sum::<usize>() as f64 / visits.len() as f64;
    assert_eq!(base.top.len(), mean.round() as usize);
    let min_top = base.top.iter().map(|&i| base.frequency[i]).fold(f64::INFINITY, f64::min);
    let max_rest = (0..n).filter(|i| !base.top.contains(i)).map(|i| base.frequency[i]).fold(0.0, f64::max);
    assert!(min_top >= max_rest);
}
