use ltrc_core::report::{markdown_table, report_stem};
use ltrc_core::sim::bench::{table1_row, AteBenchOptions, AteReplication};
use ltrc_core::{emit_report, run_ate_benchmark, BenchmarkResult, ReportFormat, ScenarioKind, ScenarioSpec};

fn single_row() -> BenchmarkResult {
    let spec = ScenarioSpec::new(ScenarioKind::Ate);
    let opts = AteBenchOptions { bootstrap: 3, ..AteBenchOptions::default() };
    BenchmarkResult::Ate(run_ate_benchmark(&spec, &[table1_row(2).unwrap()], 250, 4, 21, &opts).unwrap())
}

#[test]
fn single_row_result_writes_three_parseable_files() {
    let result = single_row();
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({"reps": 4, "seed": 21});
    let paths = emit_report(&result, &ReportFormat::ALL, dir.path(), Some(&cfg)).unwrap();
    assert_eq!(paths.len(), 3);
    let stem = report_stem(&result);
    assert!(stem.starts_with("ate_") && stem.ends_with("_250_4_21"), "{stem}");

    let mut reader = csv::Reader::from_path(&paths[0]).unwrap();
    let rows: Vec<AteReplication> = reader.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(rows.len(), 4);

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&paths[1]).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 21);
    let summary = &json["summary"][0];
    let estimates: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    let truth = json["truth"].as_f64().unwrap();
    let bias = estimates.iter().sum::<f64>() / 4.0 - truth;
    assert!((summary["bias"].as_f64().unwrap() - bias).abs() < 1e-12);
    let cp = rows.iter().filter(|r| r.covered).count() as f64 / 4.0;
    assert_eq!(summary["cp"].as_f64().unwrap(), cp);
    let mean_se = rows.iter().map(|r| r.se).sum::<f64>() / 4.0;
    assert!((summary["mean_se"].as_f64().unwrap() - mean_se).abs() < 1e-12);

    let md = std::fs::read_to_string(&paths[2]).unwrap();
    assert_eq!(md, markdown_table(&result));
    assert!(md.contains("| Method | Bias | SD | SE | bootSE | CP | bootCP |"));
    let line = md.lines().last().unwrap();
    let cells: Vec<&str> = line.split('|').map(str::trim).collect();
    assert_eq!(cells[6].split('.').nth(1).unwrap().len(), 3, "CP cell `{}`", cells[6]);
}

#[test]
fn empty_results_are_rejected() {
    let BenchmarkResult::Ate(mut b) = single_row() else { unreachable!() };
    b.replications.clear();
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&BenchmarkResult::Ate(b), &[ReportFormat::Csv], dir.path(), None).is_err());
}
