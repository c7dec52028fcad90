mod common;

use common::{fixture_checkpoint, fixture_vocabs};
use hermes::checkpoint::{vocab_version, Checkpoint, FORMAT};
use hermes::Error;
use hermes_core::ehr::{CodeKind, CodeVocab, PatientRecord, Visit};
use hermes_core::model::InferenceSession;

fn patient() -> PatientRecord {
    let v = fixture_vocabs();
    PatientRecord {
        patient_id: "x".into(),
        visits: vec![
            Visit::new(vec![0, 2], vec![1], vec![0], &v).unwrap(),
            Visit::new(vec![1], vec![], vec![1, 2], &v).unwrap(),
        ],
    }
}

#[test]
fn round_trip_preserves_params_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hck");
    let ck = fixture_checkpoint();
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path, Some(&fixture_vocabs())).unwrap();
    assert_eq!(back.params, ck.params);
    assert_eq!(back.manifest, ck.manifest);
    assert_eq!(back.vocabs, ck.vocabs);
    assert_eq!(back.to_bytes(), ck.to_bytes());
    assert_eq!(back.manifest.format, FORMAT);
    assert_eq!(back.manifest.meta["fixture"], true);
    assert_eq!(back.manifest.vocab_version, vocab_version(&fixture_vocabs()));

    let (m1, m2) = (ck.model().unwrap(), back.model().unwrap());
    let a = InferenceSession::new(&m1).unwrap().scores(&patient(), 1, 2).unwrap();
    let b = InferenceSession::new(&m2).unwrap().scores(&patient(), 1, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(back.ddi_graph().unwrap().adjacency, ck.ddi_graph().unwrap().adjacency);
}

#[test]
fn vocabulary_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hck");
    fixture_checkpoint().save(&path).unwrap();
    let mut other = fixture_vocabs();
    other.medications =
        CodeVocab::new(CodeKind::Medication, vec!["A01A".into(), "C01A".into(), "B01A".into()]).unwrap();
    match Checkpoint::load(&path, Some(&other)) {
        Err(Error::Core(hermes_core::Error::VocabMismatch(msg))) => assert!(msg.contains("medication"), "{msg}"),
        other => panic!("expected a vocabulary mismatch, got {:?}", other.err()),
    }
    assert!(fixture_checkpoint().check_vocabs(&other).is_err());
    assert!(fixture_checkpoint().check_vocabs(&fixture_vocabs()).is_ok());
    assert_ne!(vocab_version(&other), vocab_version(&fixture_vocabs()));
}

#[test]
fn damaged_files_are_rejected() {
    let bytes = fixture_checkpoint().to_bytes();
    let split = bytes.iter().position(|&b| b == b'\n').unwrap();

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x40;
    assert!(Checkpoint::from_bytes(&flipped).unwrap_err().contains("corrupt"));

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..split]).is_err());
    assert!(Checkpoint::from_bytes(b"").is_err());

    let text = String::from_utf8_lossy(&bytes[..split]).replace(FORMAT, "other-format");
    let mut renamed = text.into_bytes();
    renamed.extend_from_slice(&bytes[split..]);
    assert!(Checkpoint::from_bytes(&renamed).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.hck");
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(Checkpoint::load(&path, None), Err(Error::Checkpoint { .. })));
}

#[test]
fn model_version_tracks_content() {
    let a = fixture_checkpoint();
    assert!(a.model_version().starts_with("gat_mhca-"));
    let mut model = a.model().unwrap();
    model.params.get_mut("output.b").unwrap().data_mut()[0] = 0.0;
    let b = Checkpoint::from_model(&model, &a.vocabs, &a.ddi_graph().unwrap(), serde_json::Value::Null);
    assert_ne!(a.model_version(), b.model_version());
}
