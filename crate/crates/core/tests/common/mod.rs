#![allow(dead_code)]

use hermes_core::ddi::Adjacency;
use hermes_core::ehr::{generate_synthetic, GeneratorConfig, PatientRecord, Vocabs};
use hermes_core::model::{Model, ModelConfig, ModelDims, Variant};
use hermes_core::numcore::{Mode, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small cohort over a tiny vocabulary.
pub fn tiny_cohort(n_patients: usize, seed: u64) -> (Vocabs, Vec<PatientRecord>) {
    let cfg = GeneratorConfig {
        n_patients,
        mean_visits: 3.0,
        mean_diagnoses: 3.0,
        mean_procedures: 2.0,
        mean_medications: 3.0,
        n_diagnosis_codes: 12,
        n_procedure_codes: 8,
        n_medication_codes: 7,
        ..Default::default()
    };
    let ds = generate_synthetic(&cfg, seed).unwrap();
    (ds.vocabs, ds.patients)
}

pub fn random_adjacency(n: usize, p: f64, rng: &mut impl Rng) -> Adjacency {
    let mut a = Adjacency::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                a.add_edge(i, j).unwrap();
            }
        }
    }
    a
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig { emb_dim: 8, gru_hidden: 6, gat_heads: 2, mhca_heads: 2, dropout: 0.0, ..Default::default() }
}

/// A tiny f64 model with random graphs, plus its cohort.
pub fn tiny_model(variant: Variant, seed: u64) -> (Model<f64>, Vec<PatientRecord>) {
    let (vocabs, patients) = tiny_cohort(3, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let n = vocabs.medications.len();
    let ehr = random_adjacency(n, 0.4, &mut rng);
    let ddi = random_adjacency(n, 0.3, &mut rng);
    let dims = ModelDims {
        n_diagnoses: vocabs.diagnoses.len(),
        n_procedures: vocabs.procedures.len(),
        n_medications: n,
    };
    let model = Model::new(tiny_config(), variant, dims, &ehr, &ddi, seed).unwrap();
    (model, patients)
}

/// Mean visit loss over every patient, as used by the trainer.
pub fn cohort_loss(
    model: &Model<f64>,
    patients: &[PatientRecord],
    gamma: f64,
) -> (Tape<f64>, hermes_core::numcore::Var, hermes_core::model::Bound) {
    let mut tape = Tape::new(Mode::Train, 1);
    let mut b = model.bind_trainable(&mut tape);
    let keys = model.memory_keys(&mut tape, &mut b).unwrap().keys;
    let a_ddi = model.ddi_matrix(&mut tape);
    let mut totals = Vec::new();
    for p in patients {
        let outs = model.patient_forward(&mut tape, &mut b, keys, p, 2, p.visits.len()).unwrap();
        for o in &outs {
            totals.push(model.visit_loss(&mut tape, o, p, a_ddi, gamma).unwrap().total);
        }
    }
    let s = tape.sum_n(&totals).unwrap();
    let loss = tape.scale(s, 1.0 / totals.len() as f64).unwrap();
    (tape, loss, b)
}
