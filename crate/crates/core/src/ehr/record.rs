use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::vocab::Vocabs;
use crate::error::{Error, Result};

/// One admission. Medications are stored as sorted, distinct ATC3 indices
/// (the set bits of the visit's multi-hot vector).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Visit {
    pub diagnoses: Vec<usize>,
    pub procedures: Vec<usize>,
    pub medications: Vec<usize>,
}

impl Visit {
    /// Validates against the vocabularies and normalizes the medication set.
    pub fn new(diagnoses: Vec<usize>, procedures: Vec<usize>, mut medications: Vec<usize>, vocabs: &Vocabs) -> Result<Self> {
        if diagnoses.is_empty() {
            return Err(Error::InvalidRecord("visit has no diagnoses".into()));
        }
        medications.sort_unstable();
        medications.dedup();
        if medications.is_empty() {
            return Err(Error::InvalidRecord("visit has no medications".into()));
        }
        for (codes, n) in [
            (&diagnoses, vocabs.diagnoses.len()),
            (&procedures, vocabs.procedures.len()),
            (&medications, vocabs.medications.len()),
        ] {
            if let Some(&bad) = codes.iter().find(|&&c| c >= n) {
                return Err(Error::IndexOutOfRange { index: bad, size: n });
            }
        }
        Ok(Visit { diagnoses, procedures, medications })
    }

    pub fn multi_hot(&self, n_drugs: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_drugs];
        for &m in &self.medications {
            v[m] = 1.0;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Modeling cohort requires at least two visits.
    pub fn check_cohort(&self) -> Result<()> {
        if self.visits.len() < 2 {
            return Err(Error::InvalidRecord(format!(
                "patient {} has {} visit(s), need at least 2",
                self.patient_id,
                self.visits.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub vocabs: Vocabs,
    pub patients: Vec<PatientRecord>,
}

impl Dataset {
    /// Mean visits per patient and mean dx/px/rx counts per visit.
    pub fn moments(&self) -> [f64; 4] {
        let n_visits: usize = self.patients.iter().map(|p| p.visits.len()).sum();
        let visits = self.patients.iter().flat_map(|p| p.visits.iter());
        let (mut dx, mut px, mut rx) = (0usize, 0usize, 0usize);
        for v in visits {
            dx += v.diagnoses.len();
            px += v.procedures.len();
            rx += v.medications.len();
        }
        let nv = n_visits.max(1) as f64;
        [
            n_visits as f64 / self.patients.len().max(1) as f64,
            dx as f64 / nv,
            px as f64 / nv,
            rx as f64 / nv,
        ]
    }
}
