mod common;

use common::fixture;
use hermes::cli::read_run_metrics;
use hermes::report::{ablation_report, AblationReport, RunMetrics};
use hermes_core::model::Variant;

fn fixture_runs() -> Vec<RunMetrics> {
    ["table/gat_mhca.json", "table/gcn_baseline.json"].map(|f| read_run_metrics(&fixture(f)).unwrap()).into()
}

fn run(variant: Variant, seed: u64, v: [f64; 4]) -> RunMetrics {
    RunMetrics { variant, seed, ddi_rate: v[0], jaccard: v[1], prauc: v[2], f1: v[3] }
}

#[test]
fn fixture_rows_are_reproduced_verbatim() {
    let report = ablation_report(&fixture_runs());
    let table = report.to_table();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines,
        [
            "Method\tDDI Rate\tJaccard\tPrauc\tF1-score",
            "GAMENet\t0.0806\t0.4729\t0.7371\t0.6305",
            "HERMES Kiosk\t0.0798\t0.4755\t0.7443\t0.6331",
        ]
    );
    let text = report.to_text();
    let rows: Vec<String> = text.lines().map(|l| l.split_whitespace().collect::<Vec<_>>().join(" ")).collect();
    assert_eq!(rows[1], "GAMENet 0.0806 0.4729 0.7371 0.6305 1");
    assert_eq!(rows[2], "HERMES Kiosk 0.0798 0.4755 0.7443 0.6331 1");
    assert!(report.rows.iter().all(|r| r.std.is_none()));
}

#[test]
fn text_columns_align() {
    let text = ablation_report(&fixture_runs()).to_text();
    let lines: Vec<&str> = text.lines().collect();
    let col = lines[0].find("Jaccard").unwrap();
    for l in &lines[1..] {
        assert_eq!(&l[col..col + 4], "0.47");
    }
}

#[test]
fn seeds_give_mean_and_sample_std() {
    let runs = vec![
        run(Variant::GatOnly, 0, [0.1, 0.4, 0.7, 0.5]),
        run(Variant::GatOnly, 1, [0.2, 0.5, 0.8, 0.6]),
        run(Variant::GatOnly, 2, [0.3, 0.6, 0.9, 0.7]),
        run(Variant::GcnBaseline, 0, [0.05, 0.3, 0.6, 0.4]),
    ];
    let report = ablation_report(&runs);
    assert_eq!(report.rows.iter().map(|r| r.variant).collect::<Vec<_>>(), [Variant::GcnBaseline, Variant::GatOnly]);
    let gat = &report.rows[1];
    assert_eq!(gat.seeds, 3);
    for (m, want) in gat.mean.iter().zip([0.2, 0.5, 0.8, 0.6]) {
        assert!((m - want).abs() < 1e-12);
    }
    for s in gat.std.unwrap() {
        assert!((s - 0.1).abs() < 1e-12, "{s}");
    }
    assert!(report.to_text().lines().nth(2).unwrap().ends_with("0.1000/0.1000/0.1000/0.1000"));
}

#[test]
fn csv_round_trips() {
    let mut runs = fixture_runs();
    runs.push(run(Variant::GatMhca, 1, [0.0811, 0.4801, 0.7401, 0.6299]));
    let report = ablation_report(&runs);
    let csv = report.to_csv();
    assert!(csv.starts_with("variant,method,seeds,ddi_rate,jaccard,prauc,f1,"));
    assert_eq!(AblationReport::from_csv(&csv).unwrap(), report);
    assert!(AblationReport::from_csv("variant\nbogus\n").is_err());
}

#[test]
fn run_metrics_ignore_extra_fields() {
    let m: RunMetrics = serde_json::from_str(
        r#"{"variant":"gat_only","seed":4,"jaccard":0.5,"f1":0.6,"prauc":0.7,"ddi_rate":0.08,"history":[],"n_visits":10}"#,
    )
    .unwrap();
    assert_eq!(m.variant, Variant::GatOnly);
    assert!(read_run_metrics(&fixture("ndc_map.tsv")).is_err());
}
