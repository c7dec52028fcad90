//! JSON-Lines cohort files.
//!
//! Line 1 is a header carrying the closed vocabularies; every further line
//! is one patient with visits written as code strings:
//!
//! ```text
//! {"version":1,"vocabs":{"dx":[...],"px":[...],"rx":[...]}}
//! {"patient_id":"p1","visits":[{"dx":["4019"],"px":["3893"],"rx":["N02B"]}, ...]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use hermes_core::ehr::{CodeKind, CodeVocab, Dataset, PatientRecord, Visit, Vocabs};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io_err, Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    vocabs: VocabLists,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabLists {
    pub dx: Vec<String>,
    pub px: Vec<String>,
    pub rx: Vec<String>,
}

impl VocabLists {
    pub fn of(v: &Vocabs) -> Self {
        VocabLists {
            dx: v.diagnoses.codes().to_vec(),
            px: v.procedures.codes().to_vec(),
            rx: v.medications.codes().to_vec(),
        }
    }

    pub fn into_vocabs(self) -> hermes_core::Result<Vocabs> {
        Ok(Vocabs {
            diagnoses: CodeVocab::new(CodeKind::Diagnosis, self.dx)?,
            procedures: CodeVocab::new(CodeKind::Procedure, self.px)?,
            medications: CodeVocab::new(CodeKind::Medication, self.rx)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientLine {
    patient_id: String,
    visits: Vec<VisitLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitLine {
    dx: Vec<String>,
    #[serde(default)]
    px: Vec<String>,
    rx: Vec<String>,
}

/// A patient left out of the modeling cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct Rejected {
    pub line: usize,
    pub patient_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub dataset: Dataset,
    /// Free-form provenance written by the tool (effective config, version).
    pub meta: Option<Value>,
    pub rejected: Vec<Rejected>,
}

pub fn load_dataset(path: &Path) -> Result<DatasetFile> {
    let file = File::open(path).map_err(io_err(path))?;
    read_dataset(BufReader::new(file), path)
}

/// Parses a cohort. Malformed lines, unknown codes and invalid visits are
/// errors naming the line; patients with fewer than two visits are
/// dropped and listed in `rejected`.
pub fn read_dataset(reader: impl BufRead, path: &Path) -> Result<DatasetFile> {
    let parse = |line: usize, msg: String| Error::Parse { path: path.into(), line, msg };
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse(1, "empty file, expected a header".into()))?;
    let first = first.map_err(io_err(path))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| parse(1, format!("bad header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(parse(1, format!("unsupported version {} (expected {FORMAT_VERSION})", header.version)));
    }
    let vocabs = header.vocabs.into_vocabs().map_err(|e| parse(1, e.to_string()))?;

    let mut patients = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PatientLine = serde_json::from_str(&line).map_err(|e| parse(n, e.to_string()))?;
        if !seen.insert(p.patient_id.clone()) {
            return Err(parse(n, format!("duplicate patient_id {:?}", p.patient_id)));
        }
        let mut visits = Vec::with_capacity(p.visits.len());
        for (k, v) in p.visits.iter().enumerate() {
            let codes = |vocab: &CodeVocab, codes: &[String]| -> Result<Vec<usize>> {
                codes.iter().map(|c| vocab.lookup(c).map_err(|e| parse(n, format!("visit {}: {e}", k + 1)))).collect()
            };
            let visit = Visit::new(
                codes(&vocabs.diagnoses, &v.dx)?,
                codes(&vocabs.procedures, &v.px)?,
                codes(&vocabs.medications, &v.rx)?,
                &vocabs,
            )
            .map_err(|e| parse(n, format!("visit {} rejected: {e}", k + 1)))?;
            visits.push(visit);
        }
        let record = PatientRecord { patient_id: p.patient_id, visits };
        match record.check_cohort() {
            Ok(()) => patients.push(record),
            Err(e) => {
                log::warn!("{}:{n}: {e}", path.display());
                rejected.push(Rejected { line: n, patient_id: record.patient_id, reason: e.to_string() });
            }
        }
    }
    Ok(DatasetFile { dataset: Dataset { vocabs, patients }, meta: header.meta, rejected })
}

pub fn save_dataset(path: &Path, dataset: &Dataset, meta: Option<&Value>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, dataset, meta).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_dataset(mut w: impl Write, dataset: &Dataset, meta: Option<&Value>) -> std::io::Result<()> {
    let header = Header { version: FORMAT_VERSION, vocabs: VocabLists::of(&dataset.vocabs), meta: meta.cloned() };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let v = &dataset.vocabs;
    let names = |vocab: &CodeVocab, idx: &[usize]| -> Vec<String> {
        idx.iter().map(|&i| vocab.code(i).expect("validated index").to_string()).collect()
    };
    for p in &dataset.patients {
        let line = PatientLine {
            patient_id: p.patient_id.clone(),
            visits: p
                .visits
                .iter()
                .map(|visit| VisitLine {
                    dx: names(&v.diagnoses, &visit.diagnoses),
                    px: names(&v.procedures, &visit.procedures),
                    rx: names(&v.medications, &visit.medications),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
