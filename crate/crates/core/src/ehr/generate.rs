//! Synthetic EHR cohort calibrated to published per-visit moments.
//!
//! Visit counts are `2 + Geometric`, per-visit code counts are Poisson
//! clamped to `[1, vocab]`, and codes are Zipf-distributed over their
//! vocabulary. Diagnosis codes are randomly assigned to condition groups,
//! each with a small drug regimen. Patients carry persistent conditions
//! that most of their diagnoses come from, and medications follow the
//! regimens of the visit's diagnoses, so prescriptions have learnable
//! low-rank structure.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use super::record::{Dataset, PatientRecord, Visit};
use super::vocab::{CodeKind, CodeVocab, Vocabs};
use crate::ddi::DdiRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub mean_visits: f64,
    pub mean_diagnoses: f64,
    pub mean_procedures: f64,
    pub mean_medications: f64,
    pub n_diagnosis_codes: usize,
    pub n_procedure_codes: usize,
    pub n_medication_codes: usize,
    pub zipf_exponent: f64,
    /// Probability that a diagnosis slot comes from one of the patient's
    /// persistent conditions rather than the population at large.
    pub chronic_fraction: f64,
    /// Condition groups per patient, drawn with replacement.
    pub patient_conditions: usize,
    /// Probability that a medication slot follows a diagnosis affinity.
    pub affinity_strength: f64,
    /// Medications in each condition group's regimen.
    pub affinity_width: usize,
    /// Condition groups the diagnosis codes are partitioned into.
    pub affinity_groups: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_patients: 6350,
            mean_visits: 2.36,
            mean_diagnoses: 10.51,
            mean_procedures: 3.84,
            mean_medications: 8.80,
            n_diagnosis_codes: 1958,
            n_procedure_codes: 1426,
            n_medication_codes: 145,
            zipf_exponent: 1.1,
            chronic_fraction: 0.9,
            affinity_strength: 0.9,
            patient_conditions: 2,
            affinity_width: 4,
            affinity_groups: 8,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.mean_visits < 2.0 {
            return bad(format!("mean_visits {} < 2 (cohort needs ≥2 visits)", self.mean_visits));
        }
        for (name, mean, vocab) in [
            ("diagnoses", self.mean_diagnoses, self.n_diagnosis_codes),
            ("procedures", self.mean_procedures, self.n_procedure_codes),
            ("medications", self.mean_medications, self.n_medication_codes),
        ] {
            if !(mean > 0.0 && mean.is_finite()) {
                return bad(format!("mean_{name} must be positive"));
            }
            if mean > vocab as f64 {
                return bad(format!("mean_{name} {mean} exceeds vocabulary size {vocab}"));
            }
        }
        if !(self.zipf_exponent > 0.0) {
            return bad("zipf_exponent must be positive".into());
        }
        for (name, p) in [("chronic_fraction", self.chronic_fraction), ("affinity_strength", self.affinity_strength)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.affinity_width == 0 || self.affinity_width > self.n_medication_codes {
            return bad("affinity_width must lie in [1, medication vocabulary]".into());
        }
        if self.affinity_groups == 0 || self.patient_conditions == 0 {
            return bad("affinity_groups and patient_conditions must be positive".into());
        }
        Ok(())
    }
}

/// Distinct ATC3-shaped class codes, sorted.
fn atc3_codes(n: usize) -> Vec<String> {
    const GROUPS: &[u8] = b"ABCDGHJLMNPRSV";
    let mut codes = Vec::with_capacity(n);
    'outer: for num in 1..=99u32 {
        for sub in b'A'..=b'Z' {
            for &g in GROUPS {
                if codes.len() == n {
                    break 'outer;
                }
                codes.push(format!("{}{:02}{}", g as char, num, sub as char));
            }
        }
    }
    codes.sort();
    codes
}

struct CodeSampler {
    zipf: Zipf<f64>,
    n: usize,
}

impl CodeSampler {
    fn new(n: usize, s: f64) -> Result<Self> {
        let zipf = Zipf::new(n as f64, s).map_err(|e| Error::InvalidConfig(format!("zipf: {e}")))?;
        Ok(CodeSampler { zipf, n })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        (self.zipf.sample(rng) as usize).clamp(1, self.n) - 1
    }
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64, max: usize) -> Result<usize> {
    let p = Poisson::new(mean).map_err(|e| Error::InvalidConfig(format!("poisson: {e}")))?;
    Ok((p.sample(rng) as usize).clamp(1, max))
}

/// Fills `out` to `target` distinct codes using `pick`; after repeated
/// collisions falls back to the smallest unused code.
fn fill_distinct<R: Rng>(rng: &mut R, out: &mut Vec<usize>, target: usize, n: usize, mut pick: impl FnMut(&mut R) -> usize) {
    let mut misses = 0;
    while out.len() < target {
        let c = pick(rng);
        if out.contains(&c) {
            misses += 1;
            if misses > 64 {
                if let Some(free) = (0..n).find(|c| !out.contains(c)) {
                    out.push(free);
                }
                misses = 0;
            }
        } else {
            out.push(c);
            misses = 0;
        }
    }
}

pub fn generate_synthetic(config: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config;

    let vocabs = Vocabs {
        diagnoses: CodeVocab::new(CodeKind::Diagnosis, (0..c.n_diagnosis_codes).map(|i| format!("D{i:04}")).collect())?,
        procedures: CodeVocab::new(CodeKind::Procedure, (0..c.n_procedure_codes).map(|i| format!("P{i:04}")).collect())?,
        medications: CodeVocab::new(CodeKind::Medication, atc3_codes(c.n_medication_codes))?,
    };
    if vocabs.medications.len() < c.n_medication_codes {
        return Err(Error::InvalidConfig(format!("at most {} medication codes", vocabs.medications.len())));
    }

    let dx_sampler = CodeSampler::new(c.n_diagnosis_codes, c.zipf_exponent)?;
    let px_sampler = CodeSampler::new(c.n_procedure_codes, c.zipf_exponent)?;
    let rx_sampler = CodeSampler::new(c.n_medication_codes, c.zipf_exponent)?;
    let n_rx = c.n_medication_codes;

    // Diagnosis codes are split at random into condition groups, each with
    // a regimen of distinct drugs. A patient's persistent conditions are
    // drawn in proportion to group Zipf mass, and within a group codes keep
    // their Zipf weights, so the diagnosis marginal stays Zipf.
    let groups = c.affinity_groups;
    let group_of: Vec<usize> = (0..c.n_diagnosis_codes).map(|_| rng.random_range(0..groups)).collect();
    let mut members = vec![Vec::new(); groups];
    for (code, &g) in group_of.iter().enumerate() {
        members[g].push(code);
    }
    let weight = |code: usize| Float::powf((code + 1) as f64, -c.zipf_exponent);
    let weighted = |w: Vec<f64>| WeightedIndex::new(w).map_err(|e| Error::InvalidConfig(format!("weights: {e}")));
    let group_pick = weighted(members.iter().map(|m| m.iter().map(|&k| weight(k)).sum()).collect())?;
    let within: Vec<Option<WeightedIndex<f64>>> = members
        .iter()
        .map(|m| if m.is_empty() { Ok(None) } else { weighted(m.iter().map(|&k| weight(k)).collect()).map(Some) })
        .collect::<Result<_>>()?;
    let regimens: Vec<Vec<usize>> = (0..groups)
        .map(|_| {
            let mut r = Vec::with_capacity(c.affinity_width);
            fill_distinct(&mut rng, &mut r, c.affinity_width, n_rx, |r| r.random_range(0..n_rx));
            r
        })
        .collect();

    // Geometric counts failures, mean (1-p)/p.
    let extra_visits = Geometric::new(1.0 / (c.mean_visits - 1.0))
        .map_err(|e| Error::InvalidConfig(format!("geometric: {e}")))?;

    let mut patients = Vec::with_capacity(c.n_patients);
    for pid in 0..c.n_patients {
        let n_visits = 2 + extra_visits.sample(&mut rng) as usize;
        let conditions: Vec<usize> = (0..c.patient_conditions).map(|_| group_pick.sample(&mut rng)).collect();

        let mut visits = Vec::with_capacity(n_visits);
        for _ in 0..n_visits {
            let n_dx = poisson_count(&mut rng, c.mean_diagnoses, c.n_diagnosis_codes)?;
            let mut dx = Vec::with_capacity(n_dx);
            fill_distinct(&mut rng, &mut dx, n_dx, c.n_diagnosis_codes, |r| {
                if r.random::<f64>() < c.chronic_fraction {
                    let g = conditions[r.random_range(0..conditions.len())];
                    let pick = within[g].as_ref().expect("drawn groups are non-empty");
                    members[g][pick.sample(r)]
                } else {
                    dx_sampler.draw(r)
                }
            });

            let n_px = poisson_count(&mut rng, c.mean_procedures, c.n_procedure_codes)?;
            let mut px = Vec::with_capacity(n_px);
            fill_distinct(&mut rng, &mut px, n_px, c.n_procedure_codes, |r| px_sampler.draw(r));

            let n_meds = poisson_count(&mut rng, c.mean_medications, n_rx)?;
            let mut rx = Vec::with_capacity(n_meds);
            fill_distinct(&mut rng, &mut rx, n_meds, n_rx, |r| {
                if r.random::<f64>() < c.affinity_strength {
                    let regimen = &regimens[group_of[dx[r.random_range(0..dx.len())]]];
                    regimen[r.random_range(0..regimen.len())]
                } else {
                    rx_sampler.draw(r)
                }
            });
            visits.push(Visit::new(dx, px, rx, &vocabs)?);
        }
        patients.push(PatientRecord { patient_id: format!("SYN{pid:06}"), visits });
    }
    Ok(Dataset { vocabs, patients })
}

/// Interaction records over `vocab` for desk-scale runs: `n_records`
/// pairs spread over `n_types` interaction types with per-type severities
/// in `(0, 1)`. One endpoint of each pair is Zipf-distributed so common
/// drugs take part in interactions.
pub fn synthetic_ddi_records(vocab: &CodeVocab, n_records: usize, n_types: usize, seed: u64) -> Result<Vec<DdiRecord>> {
    if vocab.len() < 2 || n_types == 0 {
        return Err(Error::InvalidConfig("need ≥2 drugs and ≥1 interaction type".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_ddd1);
    let severity: Vec<f64> = (0..n_types).map(|_| rng.random_range(0.01..0.99)).collect();
    let sampler = CodeSampler::new(vocab.len(), 1.1)?;
    let mut out = Vec::with_capacity(n_records);
    while out.len() < n_records {
        let a = sampler.draw(&mut rng);
        let b = rng.random_range(0..vocab.len());
        if a == b {
            continue;
        }
        let t = rng.random_range(0..n_types);
        // per-record severity jitters below its type's maximum
        let sev = severity[t] * rng.random_range(0.8..=1.0);
        out.push(DdiRecord::new(
            vocab.code(a).expect("in range"),
            vocab.code(b).expect("in range"),
            &format!("DDI-{t:03}"),
            sev,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::is_atc3;

    fn small(n: usize) -> GeneratorConfig {
        GeneratorConfig { n_patients: n, ..Default::default() }
    }

    #[test]
    fn one_patient_has_two_visits() {
        let d = generate_synthetic(&small(1), 3).unwrap();
        assert_eq!(d.patients.len(), 1);
        assert!(d.patients[0].visits.len() >= 2);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic(&small(40), 5).unwrap();
        assert_eq!(a, generate_synthetic(&small(40), 5).unwrap());
        assert_ne!(a, generate_synthetic(&small(40), 6).unwrap());
    }

    #[test]
    fn codes_in_range_and_well_formed() {
        let d = generate_synthetic(&small(100), 1).unwrap();
        assert!(d.vocabs.medications.codes().iter().all(|c| is_atc3(c)));
        assert_eq!(d.vocabs.medications.len(), 145);
        for v in d.patients.iter().flat_map(|p| &p.visits) {
            assert!(v.medications.iter().all(|&m| m < 145));
            assert!(!v.diagnoses.is_empty() && !v.medications.is_empty());
        }
    }

    #[test]
    fn infeasible_configs() {
        let c = GeneratorConfig { n_medication_codes: 5, ..small(1) };
        assert!(matches!(generate_synthetic(&c, 0), Err(Error::InvalidConfig(_))));
        let c = GeneratorConfig { mean_procedures: 0.0, ..small(1) };
        assert!(generate_synthetic(&c, 0).is_err());
    }

    #[test]
    fn synthetic_ddi_is_valid() {
        let d = generate_synthetic(&small(1), 0).unwrap();
        let recs = synthetic_ddi_records(&d.vocabs.medications, 200, 50, 0).unwrap();
        assert_eq!(recs.len(), 200);
        assert!(recs.iter().all(|r| r.atc3_a != r.atc3_b && r.severity > 0.0));
    }
}
