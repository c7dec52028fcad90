//! Data preparation, training runs and checkpoint evaluation shared by
//! the CLI and tests.

use std::fs;
use std::path::Path;

use hermes_core::ddi::{build_ddi_graph, DdiGraph, DdiRecord};
use hermes_core::ehr::{generate_synthetic, split_dataset, synthetic_ddi_records, Dataset, Split};
use hermes_core::model::{InferenceSession, Variant};
use hermes_core::train::{evaluate, train, EpochRecord, Metrics, ModelRecommender, PrevalenceBaseline};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::config::{DataConfig, RunConfig};
use crate::dataset::{load_dataset, Rejected};
use crate::error::{io_err, Error, Result};
use crate::tsv::load_ddi_records;

pub const CHECKPOINT_FILE: &str = "checkpoint.hck";
pub const METRICS_FILE: &str = "metrics.json";

pub struct Prepared {
    pub dataset: Dataset,
    pub ddi_records: Vec<DdiRecord>,
    pub ddi: DdiGraph,
    pub rejected: Vec<Rejected>,
}

/// Loads or synthesizes the cohort and interaction records and builds
/// the interaction graph over the medication vocabulary.
pub fn prepare_data(cfg: &DataConfig) -> Result<Prepared> {
    let (dataset, rejected) = match &cfg.dataset {
        Some(path) => {
            let f = load_dataset(path)?;
            (f.dataset, f.rejected)
        }
        None => (generate_synthetic(&cfg.generator, cfg.seed)?, Vec::new()),
    };
    let ddi_records = match &cfg.ddi {
        Some(path) => load_ddi_records(path)?,
        None => synthetic_ddi_records(
            &dataset.vocabs.medications,
            cfg.synthetic_ddi_records,
            cfg.synthetic_ddi_types,
            cfg.seed,
        )?,
    };
    let ddi = build_ddi_graph(&ddi_records, &dataset.vocabs.medications, cfg.ddi_top_k)?;
    if ddi.skipped_out_of_vocab > 0 {
        log::warn!("{} interaction records name drugs outside the vocabulary", ddi.skipped_out_of_vocab);
    }
    Ok(Prepared { dataset, ddi_records, ddi, rejected })
}

pub fn split_of(prepared: &Prepared, cfg: &DataConfig) -> Result<Split> {
    Ok(split_dataset(&prepared.dataset.patients, cfg.seed)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: f64,
    pub ddi_rate: f64,
    pub n_visits: usize,
}

impl From<&Metrics> for MetricValues {
    fn from(m: &Metrics) -> Self {
        MetricValues { jaccard: m.jaccard, f1: m.f1, prauc: m.prauc, ddi_rate: m.ddi_rate, n_visits: m.n_visits }
    }
}

/// Contents of a run's `metrics.json`. Field order is fixed, so equal
/// runs serialize to equal bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: f64,
    pub ddi_rate: f64,
    pub n_visits: usize,
    pub prauc_skipped: usize,
    pub split: String,
    pub variant: Variant,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<MetricValues>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<EpochRecord>,
    pub config: Value,
    pub version: String,
}

impl MetricsReport {
    pub fn new(m: &Metrics, split: &str, variant: Variant, seed: u64, config: &RunConfig) -> Self {
        MetricsReport {
            jaccard: m.jaccard,
            f1: m.f1,
            prauc: m.prauc,
            ddi_rate: m.ddi_rate,
            n_visits: m.n_visits,
            prauc_skipped: m.prauc_skipped,
            split: split.into(),
            variant,
            seed,
            best_epoch: None,
            baseline: None,
            history: Vec::new(),
            config: serde_json::to_value(config).expect("config serializes"),
            version: crate::VERSION.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub struct TrainedRun {
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
}

/// Trains `cfg.train.variant` and scores the best epoch on the test split.
pub fn train_run(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainedRun> {
    cfg.validate().map_err(Error::Usage)?;
    let prepared = prepare_data(&cfg.data)?;
    let split = split_of(&prepared, &cfg.data)?;
    let vocabs = &prepared.dataset.vocabs;
    let outcome = train::<f32>(&cfg.model, &cfg.train, vocabs, &split, &prepared.ddi.adjacency, &mut on_epoch)?;
    let rec = ModelRecommender {
        session: InferenceSession::new(&outcome.model)?,
        threshold: cfg.model.decision_threshold,
    };
    let test = evaluate(&rec, &split.test, &prepared.ddi.adjacency)?;
    let baseline = PrevalenceBaseline::fit(&split.train, vocabs.medications.len());
    let base = evaluate(&baseline, &split.test, &prepared.ddi.adjacency)?;

    let mut report = MetricsReport::new(&test, "test", cfg.train.variant, cfg.train.seed, cfg);
    report.best_epoch = Some(outcome.best_epoch);
    report.baseline = Some(MetricValues::from(&base));
    report.history = outcome.history;
    let meta = serde_json::json!({ "config": report.config, "version": crate::VERSION });
    let checkpoint = Checkpoint::from_model(&outcome.model, vocabs, &prepared.ddi, meta);
    Ok(TrainedRun { checkpoint, report })
}

/// Writes `checkpoint.hck` and `metrics.json` into `dir`.
pub fn write_run(dir: &Path, run: &TrainedRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    run.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let path = dir.join(METRICS_FILE);
    fs::write(&path, run.report.to_json()).map_err(io_err(&path))
}

/// Scores a checkpoint on one split of the configured data.
pub fn evaluate_checkpoint(ck: &Checkpoint, cfg: &RunConfig, split_name: &str) -> Result<MetricsReport> {
    let prepared = prepare_data(&cfg.data)?;
    ck.check_vocabs(&prepared.dataset.vocabs)?;
    let split = split_of(&prepared, &cfg.data)?;
    let patients = match split_name {
        "train" => &split.train,
        "val" => &split.val,
        "test" => &split.test,
        other => return Err(Error::Usage(format!("unknown split {other:?} (train, val, test)"))),
    };
    let model = ck.model()?;
    let rec = ModelRecommender { session: InferenceSession::new(&model)?, threshold: model.config.decision_threshold };
    let m = evaluate(&rec, patients, &prepared.ddi.adjacency)?;
    Ok(MetricsReport::new(&m, split_name, model.variant, cfg.train.seed, cfg))
}
