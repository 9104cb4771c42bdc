use doseconf::bench::{emit_report, run_experiment, ExperimentConfig, Method, PropensityMode, ReportFormat};

fn config(setup: u8, scenario: u8, n_seeds: usize) -> ExperimentConfig {
    ExperimentConfig { setup, scenario, n_seeds, ..Default::default() }
}

#[test]
fn global_weighting_is_wider_than_local_on_setup3() {
    let cfg = ExperimentConfig {
        methods: vec![Method::WcpGlobalOracle, Method::WcpLocalOracle],
        propensity: PropensityMode::Oracle,
        ..config(3, 1, 20)
    };
    let report = run_experiment(&cfg).unwrap();
    for alpha in cfg.alphas {
        let global = report.summary(Method::WcpGlobalOracle, alpha).unwrap();
        let local = report.summary(Method::WcpLocalOracle, alpha).unwrap();
        assert_eq!(global.n_seeds, 20);
        assert!(global.mean_width >= local.mean_width, "{} vs {}", global.mean_width, local.mean_width);
    }
}

#[test]
fn standard_cp_is_valid_on_setup2() {
    for scenario in [1, 2] {
        let cfg = ExperimentConfig { methods: vec![Method::StandardCp], ..config(2, scenario, 10) };
        let report = run_experiment(&cfg).unwrap();
        for alpha in &cfg.alphas {
            let s = report.summary(Method::StandardCp, *alpha).unwrap();
            assert!((s.mean_coverage - (1.0 - alpha)).abs() <= 0.03, "scenario {scenario}: {}", s.mean_coverage);
        }
    }
}

#[test]
fn full_runs_write_identical_files() {
    let cfg = ExperimentConfig { n_samples: 300, grid_k: 8, ..config(1, 4, 3) };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files_a =
        emit_report(&run_experiment(&cfg).unwrap(), a.path(), &[ReportFormat::Csv, ReportFormat::Json]).unwrap();
    let files_b =
        emit_report(&run_experiment(&cfg).unwrap(), b.path(), &[ReportFormat::Csv, ReportFormat::Json]).unwrap();
    assert_eq!(files_a.len(), files_b.len());
    for (fa, fb) in files_a.iter().zip(&files_b) {
        assert_eq!(fa.strip_prefix(a.path()).unwrap(), fb.strip_prefix(b.path()).unwrap());
        assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
    }
    // One grid table per (seed, alpha), each with |methods| * grid_k rows.
    let grid_files: Vec<_> =
        files_a.iter().filter(|p| p.extension().unwrap() == "csv" && p.parent().unwrap() != a.path()).collect();
    assert_eq!(grid_files.len(), 3 * cfg.alphas.len());
    for f in grid_files {
        let rows = std::fs::read_to_string(f).unwrap().lines().count() - 1;
        assert_eq!(rows, Method::ALL.len() * cfg.grid_k);
    }
}
