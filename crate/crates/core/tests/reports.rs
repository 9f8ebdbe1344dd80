use nhf::harness::{
    emit_report, read_json, run_experiment, summarize_reports, timing_path, ExperimentConfig, ReportFormat, RunReport,
    Timing,
};

fn small_config(duration: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model.d_x = 8;
    cfg.filter.n = 6;
    cfg.run.duration = duration;
    cfg.run.repetitions = 1;
    cfg
}

#[test]
fn empty_run_emits_valid_json_and_roundtrips() {
    let cfg = small_config(0.0);
    let report = run_experiment(&cfg).unwrap();
    assert!(report.mse_time_series.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    let written = emit_report(&report, ReportFormat::Json, &path).unwrap();
    assert_eq!(written, vec![path.clone(), timing_path(&path)]);

    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(value["mse_time_series"], serde_json::json!([]));
    assert!(value.get("wall_time_seconds").is_none());
    let back: RunReport = read_json(&path).unwrap();
    assert_eq!(back.config_echo, cfg);
    let timing: Timing = read_json(&timing_path(&path)).unwrap();
    assert!(timing.wall_time_seconds >= 0.0);
}

#[test]
fn json_roundtrip_preserves_everything_but_wall_time() {
    let mut cfg = small_config(0.5);
    cfg.run.snapshot_times = vec![0.25];
    let report = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    emit_report(&report, ReportFormat::Json, &path).unwrap();
    let mut back: RunReport = read_json(&path).unwrap();
    back.wall_time_seconds = report.wall_time_seconds;
    assert_eq!(back, report);
}

#[test]
fn csv_has_one_row_per_observation() {
    let cfg = small_config(0.5);
    let report = run_experiment(&cfg).unwrap();
    let n_obs = cfg.n_observations() as usize;
    assert_eq!(n_obs, 10);
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&report, ReportFormat::Csv, &dir.path().join("r.csv")).unwrap();
    assert_eq!(written.len(), 3);

    let mse = std::fs::read_to_string(&written[0]).unwrap();
    let lines: Vec<&str> = mse.lines().collect();
    assert_eq!(lines.len(), n_obs + 1);
    assert_eq!(lines[0], "step,mse");
    for (line, point) in lines[1..].iter().zip(&report.mse_time_series) {
        let (step, value) = line.split_once(',').unwrap();
        assert_eq!(step.parse::<u64>().unwrap(), point.step);
        assert_eq!(value.parse::<f64>().unwrap(), point.mse.unwrap());
    }

    let theta = std::fs::read_to_string(&written[1]).unwrap();
    let lines: Vec<&str> = theta.lines().collect();
    assert_eq!(lines[0], "step,mean_0,mean_1,mean_2,var_0,var_1,var_2");
    assert_eq!(lines.len(), n_obs + 1);
    let last: Vec<f64> = lines[n_obs].split(',').map(|v| v.parse().unwrap()).collect();
    let summary = report.theta_trace.last().unwrap();
    assert_eq!(&last[1..4], summary.theta_mean.as_slice());
    for j in 0..3 {
        assert_eq!(last[4 + j], summary.theta_cov[j][j]);
    }
}

#[test]
fn report_summary_matches_the_emitted_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut mses = Vec::new();
    for seed in 0..3 {
        let mut cfg = small_config(0.25);
        cfg.run.seed = seed;
        let report = run_experiment(&cfg).unwrap();
        mses.push(report.mse_mean.unwrap());
        emit_report(
            &report,
            ReportFormat::Json,
            &dir.path().join(format!("run_{seed}.json")),
        )
        .unwrap();
    }
    let summary = summarize_reports(dir.path()).unwrap();
    assert_eq!(summary.runs, 3);
    assert_eq!(summary.diverged_runs, 0);
    let mean = mses.iter().sum::<f64>() / 3.0;
    assert!((summary.mse_mean.unwrap() - mean).abs() < 1e-12);
    assert!(summary.wall_time_mean.is_some());
}
