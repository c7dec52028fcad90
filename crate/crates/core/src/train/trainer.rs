use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate, ModelRecommender};
use crate::ddi::{build_ehr_graph, Adjacency};
use crate::ehr::{Split, Vocabs};
use crate::error::{Error, Result};
use crate::model::{InferenceSession, Model, ModelConfig, ModelDims, Variant};
use crate::numcore::{AdamConfig, AdamState, Mode, Scalar, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Patients per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation Jaccard improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 40,
            patience: 5,
            seed: 0,
            variant: Variant::GatMhca,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "patience ({}) must be below max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One epoch's averages over training visits plus the validation score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub bce: f64,
    pub ddi_loss: f64,
    pub val_jaccard: f64,
}

pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation Jaccard.
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_jaccard: f64,
}

/// Trains a fresh model on `split.train`. The EHR graph comes from the
/// training patients only. `on_epoch` sees each record as it completes.
pub fn train<T: Scalar>(
    model_config: &ModelConfig,
    config: &TrainConfig,
    vocabs: &Vocabs,
    split: &Split,
    ddi: &Adjacency,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    model_config.validate()?;
    let dims = ModelDims {
        n_diagnoses: vocabs.diagnoses.len(),
        n_procedures: vocabs.procedures.len(),
        n_medications: vocabs.medications.len(),
    };
    let ehr = build_ehr_graph(&split.train, dims.n_medications)?;
    let mut model = Model::<T>::new(model_config.clone(), config.variant, dims, &ehr.adjacency, ddi, config.seed)?;
    let mut adam = AdamState::new(config.adam, model.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
    let mut order: Vec<usize> = (0..split.train.len())
        .filter(|&i| split.train[i].visits.len() >= 2)
        .collect();
    if order.is_empty() {
        return Err(Error::TooFewRecords { need: 1, got: 0 });
    }

    let mut history = Vec::new();
    let mut best: Option<(Model<T>, usize, f64)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum_loss, mut sum_bce, mut sum_ddi, mut n_visits) = (0.0, 0.0, 0.0, 0usize);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |e: Error| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, batch: batch + 1 },
                other => other,
            };
            let tape_seed = config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((epoch as u64) << 32) ^ batch as u64;
            let mut tape = Tape::<T>::new(Mode::Train, tape_seed);
            let mut b = model.bind_trainable(&mut tape);
            let keys = model.memory_keys(&mut tape, &mut b).map_err(diverged)?.keys;
            let a_ddi = model.ddi_matrix(&mut tape);
            let (mut totals, mut bces, mut ddis) = (Vec::new(), Vec::new(), Vec::new());
            for &i in chunk {
                let p = &split.train[i];
                let outs = model.patient_forward(&mut tape, &mut b, keys, p, 2, p.visits.len()).map_err(diverged)?;
                for out in &outs {
                    let parts = model.visit_loss(&mut tape, out, p, a_ddi, model_config.ddi_loss_weight).map_err(diverged)?;
                    totals.push(parts.total);
                    bces.push(parts.bce);
                    ddis.push(parts.ddi);
                }
            }
            let n = totals.len();
            let sum = tape.sum_n(&totals).map_err(diverged)?;
            let loss = tape.scale(sum, T::of(1.0 / n as f64)).map_err(diverged)?;
            let value = |tape: &Tape<T>, vars: &[Var]| vars.iter().map(|&v| tape.value(v).data()[0].as_f64()).sum::<f64>();
            sum_loss += value(&tape, &totals);
            sum_bce += value(&tape, &bces);
            sum_ddi += value(&tape, &ddis);
            n_visits += n;

            let mut grads_tape = tape.backward(loss).map_err(diverged)?;
            let mut grads: Vec<Option<Vec<T>>> = vec![None; model.params.len()];
            for (idx, var) in b.bound_vars() {
                grads[idx] = grads_tape.take(var);
            }
            adam.step(model.params.tensors_mut(), &grads)?;
            if model.params.tensors().iter().any(|t| !t.is_finite()) {
                return Err(Error::Diverged { epoch, batch: batch + 1 });
            }
        }

        // finite but huge weights can still overflow in the validation pass
        let n_batches = order.len().div_ceil(config.batch_size);
        let val_diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged { epoch, batch: n_batches },
            other => other,
        };
        let session = InferenceSession::new(&model).map_err(val_diverged)?;
        let rec = ModelRecommender { session, threshold: model_config.decision_threshold };
        let val = evaluate(&rec, &split.val, ddi).map_err(val_diverged)?;
        let denom = n_visits.max(1) as f64;
        let record = EpochRecord {
            epoch,
            loss: sum_loss / denom,
            bce: sum_bce / denom,
            ddi_loss: sum_ddi / denom,
            val_jaccard: val.jaccard,
        };
        on_epoch(&record);
        history.push(record);

        if best.as_ref().is_none_or(|(_, _, j)| val.jaccard > *j) {
            best = Some((model.clone(), epoch, val.jaccard));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (model, best_epoch, best_val_jaccard) = best.expect("at least one epoch runs");
    Ok(TrainOutcome { model, history, best_epoch, best_val_jaccard })
}
