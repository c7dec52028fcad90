//! EHR data model: code vocabularies, visits, patients, NDC→ATC3 mapping,
//! patient-level splitting and the synthetic cohort generator.

mod generate;
mod ndc;
mod record;
mod split;
mod vocab;

pub use generate::{generate_synthetic, synthetic_ddi_records, GeneratorConfig};
pub use ndc::NdcAtcMap;
pub use record::{Dataset, PatientRecord, Visit};
pub use split::{split_dataset, Split};
pub use vocab::{is_atc3, CodeKind, CodeVocab, Vocabs};
