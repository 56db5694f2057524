use amem::{
    fit_adaptive_em, generate_synthetic, kmeans_init, run_benchmark, Algorithm, BenchConfig, FitConfig, FitTrace, MixtureModel, Preset,
    SyntheticSpec, WeightedDataset,
};
use tempfile::tempdir;

#[test]
fn dataset_model_and_trace_survive_files() {
    let dir = tempdir().unwrap();
    let data = generate_synthetic(&SyntheticSpec::new(Preset::Ps, 200, 4)).unwrap();
    data.write_csv_path(dir.path().join("d.csv")).unwrap();
    let back = WeightedDataset::read_csv_path(dir.path().join("d.csv")).unwrap();
    assert_eq!(back, data);

    let init = kmeans_init(&data, 3, 5, 100, 4).unwrap();
    let (model, trace) = fit_adaptive_em(&data, &init, &FitConfig::default()).unwrap();
    model.write_json_path(dir.path().join("m.json")).unwrap();
    let m = MixtureModel::read_json_path(dir.path().join("m.json")).unwrap();
    assert_eq!(m.len(), model.len());
    for (a, b) in m.components().iter().zip(model.components()) {
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.covariance, b.covariance);
    }

    trace.write_csv_path(dir.path().join("t.csv")).unwrap();
    let t = FitTrace::read_csv_path(dir.path().join("t.csv")).unwrap();
    assert_eq!(t.records, trace.records);
    assert_eq!(t.iterations, trace.iterations);
}

#[test]
fn benchmark_writes_one_trace_per_fit() {
    let dir = tempdir().unwrap();
    let cfg = BenchConfig {
        presets: vec![Preset::Vws],
        k_inits: vec![3],
        seeds: vec![1, 2],
        n: 250,
        algorithms: vec![Algorithm::AdaptiveEm, Algorithm::AAmem],
        trace_dir: Some(dir.path().to_path_buf()),
        ..BenchConfig::default()
    };
    let report = run_benchmark(&cfg).unwrap();
    assert_eq!(report.rows.len(), 2);
    for row in &report.rows {
        assert_eq!(row.algorithm, Algorithm::AAmem);
        for (algo, iters) in [("aamem", row.iterations), ("aem", row.baseline_iterations.unwrap())] {
            let t = FitTrace::read_csv_path(dir.path().join(format!("vws_k3_s{}_{algo}.csv", row.seed))).unwrap();
            assert_eq!(t.iterations, iters);
        }
        let f = row.factors.unwrap();
        assert_eq!(f.irf, row.baseline_iterations.unwrap() as f64 / row.iterations as f64);
    }

    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
}
