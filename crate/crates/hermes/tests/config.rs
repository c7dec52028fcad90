use hermes::config::{RunConfig, DEFAULT_RED_FLAGS};
use hermes::Error;
use hermes_core::model::Variant;

#[test]
fn defaults() {
    let c = RunConfig::parse("{}").unwrap();
    assert_eq!(c, RunConfig::default());
    assert_eq!(c.train.variant, Variant::GatMhca);
    assert_eq!(c.data.ddi_top_k, 90);
    assert_eq!(c.data.generator.n_patients, 6350);
    assert_eq!((c.serve.host.as_str(), c.serve.port, c.serve.top_k), ("127.0.0.1", 8080, 10));
    assert_eq!(c.serve.red_flags, DEFAULT_RED_FLAGS);
    assert!(!c.serve.filter_ddi);
}

#[test]
fn unknown_keys_are_rejected_in_every_section() {
    for text in [
        r#"{"extra":1}"#,
        r#"{"data":{"extra":1}}"#,
        r#"{"data":{"generator":{"extra":1}}}"#,
        r#"{"model":{"extra":1}}"#,
        r#"{"train":{"extra":1}}"#,
        r#"{"train":{"adam":{"extra":1}}}"#,
        r#"{"serve":{"extra":1}}"#,
    ] {
        let e = RunConfig::parse(text).unwrap_err();
        assert!(e.contains("unknown field"), "{text}: {e}");
    }
}

#[test]
fn invalid_values_are_rejected() {
    for text in [
        r#"{"train":{"batch_size":0}}"#,
        r#"{"train":{"max_epochs":3,"patience":3}}"#,
        r#"{"data":{"ddi_top_k":0}}"#,
        r#"{"serve":{"top_k":0}}"#,
        r#"{"train":{"variant":"transformer"}}"#,
        r#"{"model":{"emb_dim":0}}"#,
    ] {
        assert!(RunConfig::parse(text).is_err(), "{text}");
    }
}

#[test]
fn partial_sections_keep_other_defaults() {
    let c = RunConfig::parse(r#"{"train":{"variant":"gcn_baseline","max_epochs":8},"serve":{"port":9000}}"#).unwrap();
    assert_eq!(c.train.variant, Variant::GcnBaseline);
    assert_eq!(c.train.max_epochs, 8);
    assert_eq!(c.train.batch_size, RunConfig::default().train.batch_size);
    assert_eq!(c.serve.port, 9000);
    assert_eq!(c.serve.top_k, 10);
}

#[test]
fn seed_override_reaches_data_and_training() {
    let mut c = RunConfig::default();
    c.set_seed(17);
    assert_eq!((c.data.seed, c.train.seed), (17, 17));
}

#[test]
fn load_reports_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(RunConfig::load(&dir.path().join("missing.json")), Err(Error::Usage(_))));
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"modle":{}}"#).unwrap();
    assert!(matches!(RunConfig::load(&p), Err(Error::Usage(m)) if m.contains("modle")));
    std::fs::write(&p, serde_json::to_string(&RunConfig::default()).unwrap()).unwrap();
    assert_eq!(RunConfig::load(&p).unwrap(), RunConfig::default());
}
