//! Ablation report over finished runs: one row per architecture variant,
//! columns DDI rate, Jaccard, PRAUC and F1 as mean (and sample std when a
//! variant has more than one seed).

use std::collections::BTreeMap;

use hermes_core::model::Variant;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 4] = ["DDI Rate", "Jaccard", "Prauc", "F1-score"];

/// The part of a run's metrics file the report needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub variant: Variant,
    pub seed: u64,
    pub jaccard: f64,
    pub f1: f64,
    pub prauc: f64,
    pub ddi_rate: f64,
}

impl RunMetrics {
    fn values(&self) -> [f64; 4] {
        [self.ddi_rate, self.jaccard, self.prauc, self.f1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub seeds: usize,
    /// DDI rate, Jaccard, PRAUC, F1.
    pub mean: [f64; 4],
    /// Sample standard deviation; `None` for a single run.
    pub std: Option<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

pub fn ablation_report(runs: &[RunMetrics]) -> AblationReport {
    let mut by_variant: BTreeMap<Variant, Vec<[f64; 4]>> = BTreeMap::new();
    for r in runs {
        by_variant.entry(r.variant).or_default().push(r.values());
    }
    let rows = Variant::ALL
        .into_iter()
        .filter_map(|v| by_variant.get(&v).map(|vals| (v, vals)))
        .map(|(variant, vals)| {
            let n = vals.len() as f64;
            let mean: [f64; 4] = std::array::from_fn(|k| vals.iter().map(|x| x[k]).sum::<f64>() / n);
            let std = (vals.len() > 1).then(|| {
                std::array::from_fn(|k| {
                    (vals.iter().map(|x| (x[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                })
            });
            AblationRow { variant, seeds: vals.len(), mean, std }
        })
        .collect();
    AblationReport { rows }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    variant: Variant,
    method: String,
    seeds: usize,
    ddi_rate: f64,
    jaccard: f64,
    prauc: f64,
    f1: f64,
    ddi_rate_std: Option<f64>,
    jaccard_std: Option<f64>,
    prauc_std: Option<f64>,
    f1_std: Option<f64>,
}

impl AblationReport {
    /// Tab-separated table of means in the published column layout.
    pub fn to_table(&self) -> String {
        let mut out = format!("Method\t{}\n", COLUMNS.join("\t"));
        for r in &self.rows {
            let cells: Vec<String> = r.mean.iter().map(|v| format!("{v:.4}")).collect();
            out += &format!("{}\t{}\n", r.variant.label(), cells.join("\t"));
        }
        out
    }

    /// Space-aligned table with seed counts and a std column.
    pub fn to_text(&self) -> String {
        let mut grid = vec![{
            let mut h = vec!["Method".to_string()];
            h.extend(COLUMNS.iter().map(|c| c.to_string()));
            h.extend(["Seeds".into(), "Std (DDI/Jac/PR/F1)".into()]);
            h
        }];
        for r in &self.rows {
            let mut row = vec![r.variant.label().to_string()];
            row.extend(r.mean.iter().map(|v| format!("{v:.4}")));
            row.push(r.seeds.to_string());
            row.push(r.std.map_or(String::new(), |s| s.map(|v| format!("{v:.4}")).join("/")));
            grid.push(row);
        }
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|c| grid.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &grid {
            let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            out += line.join("  ").trim_end();
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            let s = r.std.map(|s| s.map(Some)).unwrap_or([None; 4]);
            w.serialize(CsvRow {
                variant: r.variant,
                method: r.variant.label().into(),
                seeds: r.seeds,
                ddi_rate: r.mean[0],
                jaccard: r.mean[1],
                prauc: r.mean[2],
                f1: r.mean[3],
                ddi_rate_std: s[0],
                jaccard_std: s[1],
                prauc_std: s[2],
                f1_std: s[3],
            })
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(text.as_bytes()).deserialize::<CsvRow>() {
            let r = rec.map_err(|e| Error::Other(format!("report csv: {e}")))?;
            let std = match (r.ddi_rate_std, r.jaccard_std, r.prauc_std, r.f1_std) {
                (Some(a), Some(b), Some(c), Some(d)) => Some([a, b, c, d]),
                (None, None, None, None) => None,
                _ => return Err(Error::Other("report csv: partial std columns".into())),
            };
            rows.push(AblationRow { variant: r.variant, seeds: r.seeds, mean: [r.ddi_rate, r.jaccard, r.prauc, r.f1], std });
        }
        Ok(AblationReport { rows })
    }
}
