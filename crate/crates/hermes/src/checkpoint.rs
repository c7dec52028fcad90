//! Checkpoint files: one JSON manifest line, then the parameter tensors as
//! little-endian `f32` blobs in manifest order.
//!
//! The manifest carries the vocabularies with their SHA-256 hashes, the
//! model configuration, both drug graphs and a tensor directory of
//! name, shape and byte offset.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use hermes_core::ddi::{Adjacency, DdiGraph, EdgeLabel};
use hermes_core::ehr::{CodeVocab, Vocabs};
use hermes_core::model::{Model, ModelConfig, ModelDims, ParamStore, Variant};
use hermes_core::numcore::Tensor;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::VocabLists;
use crate::error::{io_err, Error, Result};

pub const FORMAT: &str = "hermes-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn vocab_hash(v: &CodeVocab) -> String {
    sha256_hex(v.codes().join("\n").as_bytes())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabHashes {
    pub dx: String,
    pub px: String,
    pub rx: String,
}

impl VocabHashes {
    pub fn of(v: &Vocabs) -> Self {
        VocabHashes { dx: vocab_hash(&v.diagnoses), px: vocab_hash(&v.procedures), rx: vocab_hash(&v.medications) }
    }

    /// Short identifier clients quote to prove they share the code lists.
    pub fn version(&self) -> String {
        sha256_hex(format!("dx:{}\npx:{}\nrx:{}", self.dx, self.px, self.rx).as_bytes())[..16].to_string()
    }
}

/// Identifier of the vocabularies a client must match.
pub fn vocab_version(v: &Vocabs) -> String {
    VocabHashes::of(v).version()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdiEdge {
    pub a: usize,
    pub b: usize,
    pub interaction_type: String,
    pub severity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub variant: Variant,
    pub model_config: ModelConfig,
    pub vocabs: VocabLists,
    pub vocab_hashes: VocabHashes,
    pub vocab_version: String,
    pub ehr_edges: Vec<(usize, usize)>,
    pub ddi_edges: Vec<DdiEdge>,
    pub ddi_types: Vec<String>,
    /// Effective run configuration.
    pub meta: Value,
    pub tensors: Vec<TensorEntry>,
    pub blob_bytes: usize,
    pub blob_sha256: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub vocabs: Vocabs,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>, vocabs: &Vocabs, ddi: &DdiGraph, meta: Value) -> Self {
        let mut tensors = Vec::with_capacity(model.params.len());
        let mut blob = Vec::with_capacity(model.params.n_values() * 4);
        for (name, t) in model.params.iter() {
            tensors.push(TensorEntry { name: name.to_string(), shape: t.shape().to_vec(), offset: blob.len() });
            blob.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        }
        let hashes = VocabHashes::of(vocabs);
        let manifest = Manifest {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            tool_version: crate::VERSION.into(),
            variant: model.variant,
            model_config: model.config.clone(),
            vocabs: VocabLists::of(vocabs),
            vocab_version: hashes.version(),
            vocab_hashes: hashes,
            ehr_edges: model.ehr_graph().edges().collect(),
            ddi_edges: ddi
                .adjacency
                .edges()
                .map(|(a, b)| {
                    let l = ddi.label(a, b);
                    DdiEdge {
                        a,
                        b,
                        interaction_type: l.map(|l| l.interaction_type.clone()).unwrap_or_default(),
                        severity: l.map_or(0.0, |l| l.severity),
                    }
                })
                .collect(),
            ddi_types: ddi.selected_types.clone(),
            meta,
            tensors,
            blob_bytes: blob.len(),
            blob_sha256: sha256_hex(&blob),
        };
        Checkpoint { manifest, vocabs: vocabs.clone(), params: model.params.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        out.push(b'\n');
        for (_, t) in self.params.iter() {
            out.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_bytes()).map_err(io_err(path))
    }

    /// Reads and verifies a checkpoint. With `expected`, the stored
    /// vocabularies must hash identically.
    pub fn load(path: &Path, expected: Option<&Vocabs>) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let ck = Self::from_bytes(&bytes).map_err(|msg| Error::Checkpoint { path: path.into(), msg })?;
        if let Some(v) = expected {
            ck.check_vocabs(v)?;
        }
        Ok(ck)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        let split = bytes.iter().position(|&b| b == b'\n').ok_or("missing manifest line")?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..split]).map_err(|e| format!("bad manifest: {e}"))?;
        if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
            return Err(format!("unsupported format {} v{}", manifest.format, manifest.version));
        }
        let blob = &bytes[split + 1..];
        if blob.len() != manifest.blob_bytes || sha256_hex(blob) != manifest.blob_sha256 {
            return Err("parameter blob is truncated or corrupt".into());
        }
        let vocabs = manifest.vocabs.clone().into_vocabs().map_err(|e| e.to_string())?;
        if VocabHashes::of(&vocabs) != manifest.vocab_hashes {
            return Err("vocabulary hash mismatch".into());
        }
        let mut params = ParamStore::new();
        let mut offset = 0;
        for t in &manifest.tensors {
            let n: usize = t.shape.iter().product();
            if t.offset != offset || offset + 4 * n > blob.len() {
                return Err(format!("tensor {} has inconsistent offset", t.name));
            }
            let data = blob[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(&t.name, Tensor::new(t.shape.clone(), data).map_err(|e| e.to_string())?);
            offset += 4 * n;
        }
        if offset != blob.len() {
            return Err("trailing bytes after the last tensor".into());
        }
        Ok(Checkpoint { manifest, vocabs, params })
    }

    pub fn check_vocabs(&self, vocabs: &Vocabs) -> Result<()> {
        let got = VocabHashes::of(vocabs);
        if got != self.manifest.vocab_hashes {
            let which: Vec<&str> = [
                ("diagnosis", got.dx != self.manifest.vocab_hashes.dx),
                ("procedure", got.px != self.manifest.vocab_hashes.px),
                ("medication", got.rx != self.manifest.vocab_hashes.rx),
            ]
            .into_iter()
            .filter_map(|(k, bad)| bad.then_some(k))
            .collect();
            return Err(hermes_core::Error::VocabMismatch(format!(
                "{} vocabulary differs from the checkpoint's",
                which.join(", ")
            ))
            .into());
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_diagnoses: self.vocabs.diagnoses.len(),
            n_procedures: self.vocabs.procedures.len(),
            n_medications: self.vocabs.medications.len(),
        }
    }

    pub fn ddi_graph(&self) -> Result<DdiGraph> {
        let mut adjacency = Adjacency::new(self.vocabs.medications.len());
        let mut edge_labels = BTreeMap::new();
        for e in &self.manifest.ddi_edges {
            adjacency.add_edge(e.a, e.b)?;
            edge_labels.insert(
                (e.a.min(e.b), e.a.max(e.b)),
                EdgeLabel { interaction_type: e.interaction_type.clone(), severity: e.severity },
            );
        }
        Ok(DdiGraph { adjacency, selected_types: self.manifest.ddi_types.clone(), edge_labels, skipped_out_of_vocab: 0 })
    }

    pub fn model(&self) -> Result<Model<f32>> {
        let mut ehr = Adjacency::new(self.vocabs.medications.len());
        for &(a, b) in &self.manifest.ehr_edges {
            ehr.add_edge(a, b)?;
        }
        let ddi = self.ddi_graph()?.adjacency;
        Ok(Model::from_params(
            self.manifest.model_config.clone(),
            self.manifest.variant,
            self.dims(),
            &ehr,
            &ddi,
            self.params.clone(),
        )?)
    }

    /// `variant-<blob hash prefix>`.
    pub fn model_version(&self) -> String {
        format!("{}-{}", self.manifest.variant, &self.manifest.blob_sha256[..12])
    }
}
