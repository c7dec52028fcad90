#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use hermes::checkpoint::Checkpoint;
use hermes::config::RunConfig;
use hermes::tsv::load_ddi_records;
use hermes_core::ddi::{build_ddi_graph, Adjacency};
use hermes_core::ehr::{CodeKind, CodeVocab, Vocabs};
use hermes_core::model::{Model, ModelConfig, ModelDims, Variant};
use serde_json::Value;
use tower::ServiceExt;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn vocab(kind: CodeKind, codes: &[&str]) -> CodeVocab {
    CodeVocab::new(kind, codes.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn fixture_vocabs() -> Vocabs {
    Vocabs {
        diagnoses: vocab(CodeKind::Diagnosis, &["R074", "J069", "R509", "K30"]),
        procedures: vocab(CodeKind::Procedure, &["P01", "P02"]),
        medications: vocab(CodeKind::Medication, &["A01A", "B01A", "C01A"]),
    }
}

/// Three-drug model whose scores ignore the patient: the output weights
/// are zero and the biases rank B01A, then C01A, with A01A below 0.5.
pub fn fixture_checkpoint() -> Checkpoint {
    let vocabs = fixture_vocabs();
    let records = load_ddi_records(&fixture("ddi_three.tsv")).unwrap();
    let ddi = build_ddi_graph(&records, &vocabs.medications, 90).unwrap();
    let dims = ModelDims { n_diagnoses: 4, n_procedures: 2, n_medications: 3 };
    let cfg = ModelConfig { emb_dim: 4, gru_hidden: 4, ..Default::default() };
    let mut model =
        Model::<f32>::new(cfg, Variant::GatMhca, dims, &Adjacency::new(3), &ddi.adjacency, 7).unwrap();
    for v in model.params.get_mut("output.w").unwrap().data_mut() {
        *v = 0.0;
    }
    model.params.get_mut("output.b").unwrap().data_mut().copy_from_slice(&[-4.0, 4.0, 3.0]);
    Checkpoint::from_model(&model, &vocabs, &ddi, serde_json::json!({ "fixture": true }))
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec();
    let json = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, json, bytes)
}

/// Small, fast training configuration.
pub fn quick_config(n_patients: usize, epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.generator.n_patients = n_patients;
    cfg.model.emb_dim = 16;
    cfg.model.gru_hidden = 16;
    cfg.train.max_epochs = epochs;
    cfg.train.patience = epochs - 1;
    cfg
}
