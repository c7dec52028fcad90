//! The `hermes` command line.
//!
//! Exit codes: 0 success, 1 a domain finding (an interaction was found),
//! 2 usage or configuration error (including a checkpoint whose
//! vocabularies do not match the data), 3 internal failure.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use hermes_core::ehr::{generate_synthetic, synthetic_ddi_records};
use hermes_core::model::Variant;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::save_dataset;
use crate::error::{io_err, Error, Result};
use crate::pipeline::{evaluate_checkpoint, train_run, write_run, MetricValues, METRICS_FILE};
use crate::report::{ablation_report, RunMetrics};
use crate::serve::{DdiCheckRequest, DdiIndex, Engine, ServeSettings, Service};
use crate::tsv::{load_ddi_records, write_ddi_records};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDING: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "hermes", version, about = "Medication recommendation with drug-interaction awareness")]
pub struct Cli {
    /// JSON run configuration (sections: data, model, train, serve).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for generation, splitting and training; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic cohort (and optionally interaction records).
    Generate {
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write synthetic interaction records as TSV.
        #[arg(long)]
        ddi_out: Option<PathBuf>,
    },
    /// Train one variant; writes checkpoint.hck and metrics.json into --out.
    Train {
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        ddi: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a split of the configured data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        ddi: Option<PathBuf>,
    },
    /// Tabulate finished runs (run directories or metrics files).
    Ablate {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for report.txt, report.csv, table.tsv and report.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check drugs pairwise for interactions.
    DdiCheck {
        #[arg(required = true)]
        drugs: Vec<String>,
        #[arg(long)]
        ddi: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        ddi: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        filter_ddi: bool,
        #[arg(long)]
        topk: Option<usize>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Normal output goes to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_)
        | Error::Core(hermes_core::Error::InvalidConfig(_) | hermes_core::Error::VocabMismatch(_)) => EXIT_USAGE,
        _ => EXIT_INTERNAL,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_err("<stdout>"))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Generate { patients, out: path, ddi_out } => {
            if let Some(n) = patients {
                cfg.data.generator.n_patients = n;
            }
            cfg.validate().map_err(Error::Usage)?;
            let ds = generate_synthetic(&cfg.data.generator, cfg.data.seed)?;
            let meta = json!({ "config": cfg, "version": crate::VERSION });
            save_dataset(&path, &ds, Some(&meta))?;
            if let Some(p) = ddi_out {
                let records = synthetic_ddi_records(
                    &ds.vocabs.medications,
                    cfg.data.synthetic_ddi_records,
                    cfg.data.synthetic_ddi_types,
                    cfg.data.seed,
                )?;
                let mut buf = format!("# hermes {} seed {}\n", crate::VERSION, cfg.data.seed).into_bytes();
                write_ddi_records(&mut buf, &records).map_err(io_err(&p))?;
                std::fs::write(&p, buf).map_err(io_err(&p))?;
            }
            log::info!("wrote {} patients to {}", ds.patients.len(), path.display());
            Ok(EXIT_OK)
        }
        Command::Train { variant, out: dir, dataset, ddi, epochs } => {
            if let Some(v) = variant {
                cfg.train.variant = v;
            }
            if dataset.is_some() {
                cfg.data.dataset = dataset;
            }
            if ddi.is_some() {
                cfg.data.ddi = ddi;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
                cfg.train.patience = cfg.train.patience.min(e.saturating_sub(1));
            }
            let run = train_run(&cfg, |r| {
                log::info!(
                    "epoch {:>3}  loss {:.4}  bce {:.4}  ddi {:.4}  val jaccard {:.4}",
                    r.epoch,
                    r.loss,
                    r.bce,
                    r.ddi_loss,
                    r.val_jaccard
                )
            })?;
            write_run(&dir, &run)?;
            let m = MetricValues {
                jaccard: run.report.jaccard,
                f1: run.report.f1,
                prauc: run.report.prauc,
                ddi_rate: run.report.ddi_rate,
                n_visits: run.report.n_visits,
            };
            emit(out, &(serde_json::to_string(&m).expect("serializes") + "\n"))?;
            Ok(EXIT_OK)
        }
        Command::Eval { checkpoint, split, dataset, ddi } => {
            if dataset.is_some() {
                cfg.data.dataset = dataset;
            }
            if ddi.is_some() {
                cfg.data.ddi = ddi;
            }
            let ck = Checkpoint::load(&checkpoint, None)?;
            let report = evaluate_checkpoint(&ck, &cfg, &split)?;
            emit(out, &report.to_json())?;
            Ok(EXIT_OK)
        }
        Command::Ablate { runs, out_dir } => {
            if runs.len() < 2 {
                return Err(Error::Usage("ablate needs at least two runs".into()));
            }
            let metrics = runs.iter().map(|p| read_run_metrics(p)).collect::<Result<Vec<_>>>()?;
            let report = ablation_report(&metrics);
            let text = report.to_text();
            emit(out, &text)?;
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
                let provenance = json!({
                    "version": crate::VERSION,
                    "config": cfg,
                    "runs": runs,
                    "inputs": metrics,
                });
                for (name, body) in [
                    ("report.txt", text),
                    ("report.csv", report.to_csv()),
                    ("table.tsv", report.to_table()),
                    ("report.json", serde_json::to_string_pretty(&provenance).expect("serializes") + "\n"),
                ] {
                    let p = dir.join(name);
                    std::fs::write(&p, body).map_err(io_err(&p))?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::DdiCheck { drugs, ddi, checkpoint } => {
            let ddi = ddi.or(cfg.data.ddi.clone());
            let index = match (checkpoint.or(cfg.serve.checkpoint.clone()), ddi) {
                (Some(ck), ddi) => {
                    let ck = Checkpoint::load(&ck, None)?;
                    let records = ddi.map(|p| load_ddi_records(&p)).transpose()?;
                    let engine =
                        Engine::new(&ck, records.as_deref().map(|r| (r, cfg.data.ddi_top_k)), ServeSettings::default())?;
                    (*engine.ddi()).clone()
                }
                (None, Some(p)) => DdiIndex::from_records(&load_ddi_records(&p)?, cfg.data.ddi_top_k)?,
                (None, None) => return Err(Error::Usage("ddi-check needs --ddi or --checkpoint".into())),
            };
            let res = index.check(&DdiCheckRequest { medications: drugs });
            let mut text = String::new();
            for u in &res.unknown {
                text += &format!("UNKNOWN\t{u}\n");
            }
            for w in &res.warnings {
                text += &format!("INTERACTION\t{}\t{}\t{}\t{}\n", w.drug_a, w.drug_b, w.interaction_type, w.severity);
            }
            if res.warnings.is_empty() {
                text += "OK\n";
            }
            emit(out, &text)?;
            Ok(if res.warnings.is_empty() { EXIT_OK } else { EXIT_FINDING })
        }
        Command::Serve { checkpoint, ddi, host, port, filter_ddi, topk } => {
            let s = &mut cfg.serve;
            if checkpoint.is_some() {
                s.checkpoint = checkpoint;
            }
            if ddi.is_some() {
                s.ddi = ddi;
            }
            if let Some(h) = host {
                s.host = h;
            }
            if let Some(p) = port {
                s.port = p;
            }
            s.filter_ddi |= filter_ddi;
            if let Some(k) = topk {
                s.top_k = k;
            }
            cfg.validate().map_err(Error::Usage)?;
            let service = build_service(&cfg)?;
            let addr: SocketAddr = format!("{}:{}", cfg.serve.host, cfg.serve.port)
                .parse()
                .map_err(|e| Error::Usage(format!("bad listen address: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(io_err("<runtime>"))?;
            rt.block_on(crate::serve::run(addr, service)).map_err(io_err(addr.to_string()))?;
            Ok(EXIT_OK)
        }
    }
}

/// Service state for `cfg.serve`; missing parts stay unloaded.
pub fn build_service(cfg: &RunConfig) -> Result<Service> {
    let s = &cfg.serve;
    let records = s.ddi.as_ref().map(|p| load_ddi_records(p)).transpose()?;
    let settings = ServeSettings { top_k: s.top_k, filter_ddi: s.filter_ddi, red_flags: s.red_flags.clone() };
    Ok(match (&s.checkpoint, records) {
        (Some(ck), records) => {
            let ck = Checkpoint::load(ck, None)?;
            let engine = Engine::new(&ck, records.as_deref().map(|r| (r, cfg.data.ddi_top_k)), settings)?;
            Service::with_engine(engine)
        }
        (None, Some(records)) => Service::ddi_only(DdiIndex::from_records(&records, cfg.data.ddi_top_k)?),
        (None, None) => Service::unloaded(),
    })
}

/// Reads `metrics.json` from a run directory, or the file itself.
pub fn read_run_metrics(path: &Path) -> Result<RunMetrics> {
    let file = if path.is_dir() { path.join(METRICS_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: file, line: e.line(), msg: e.to_string() })
}
