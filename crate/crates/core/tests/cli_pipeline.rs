use nozzle_lab::cli::{self, Command, RunOverrides};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

fn config(text: &str) -> cli::ExperimentConfig {
    cli::parse_config(text, Path::new(".")).unwrap()
}

fn run_into(cfg: &cli::ExperimentConfig, cmd: Command, dir: &Path) -> cli::RunManifest {
    let o = RunOverrides { out: Some(dir.to_path_buf()), jobs: Some(1), seed: None };
    cli::run(cfg, cmd, &o).unwrap()
}

fn listing(dir: &Path) -> BTreeSet<PathBuf> {
    std::fs::read_dir(dir).unwrap().map(|e| PathBuf::from(e.unwrap().file_name())).collect()
}

const KORN: &str = r#"
[korn]
epsilons = [0.4, 0.2]
refine = false
kernel_intervals = 4
[korn.resolution]
n_boundary = 8
n_rings = 1
n_cells_z = 8
[assertions]
max_ko2_variation = 3.0
"#;

#[test]
fn empty_study_is_a_successful_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("[study]\nmode = \"inviscid\"\nepsilons = []\n");
    let m = run_into(&cfg, Command::ConvergeInviscid, tmp.path());
    assert_eq!(m.exit_code(), 0);
    assert_eq!(m.artifacts, vec![PathBuf::from(cli::MANIFEST_NAME)]);
    assert_eq!(listing(tmp.path()), m.artifacts.iter().cloned().collect());
}

#[test]
fn artifacts_are_deterministic_and_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = config(KORN);
    let ma = run_into(&cfg, Command::KornSweep, &a);
    let mb = run_into(&cfg, Command::KornSweep, &b);
    assert!(ma.success(), "{ma:?}");
    assert_eq!(listing(&a), ma.artifacts.iter().cloned().collect());
    assert_eq!(ma.artifacts, mb.artifacts);
    for f in ma.artifacts.iter().filter(|f| f.as_os_str() != cli::MANIFEST_NAME) {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f:?} differs");
    }
    // a rerun into the same directory replaces the previous artifacts
    let again = run_into(&cfg, Command::KornSweep, &a);
    assert_eq!(listing(&a), again.artifacts.iter().cloned().collect());
}

#[test]
fn foreign_files_in_the_output_directory_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("notes.txt"), "keep me").unwrap();
    let o = RunOverrides { out: Some(tmp.path().to_path_buf()), ..Default::default() };
    assert!(cli::run(&config(KORN), Command::KornSweep, &o).is_err());
    assert!(tmp.path().join("notes.txt").is_file());
}

#[test]
fn failing_assertion_gives_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&KORN.replace("max_ko2_variation = 3.0", "max_ko2_variation = 3.0\nko1_slope = [5.0, 6.0]"));
    let m = run_into(&cfg, Command::KornSweep, tmp.path());
    assert_eq!(m.exit_code(), 1);
}

#[test]
fn geometry_check_reports_the_divergence_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("[geometry]\nradius = { poly = [1.0, 0.5] }\n[assertions]\nmax_divergence_residual = 1e-10\n");
    let m = run_into(&cfg, Command::GeometryCheck, tmp.path());
    assert!(m.success(), "{m:?}");
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("geometry_report.json")).unwrap()).unwrap();
    assert!(rep["divergence_identity_residual"].as_f64().unwrap() <= 1e-10);
    assert!(rep["area_table"].as_array().unwrap().len() > 2);
}

#[test]
fn seeded_axi_runs_repeat_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[geometry]
epsilon = 0.2
[axi]
n_r = 8
n_z = 32
horizon = 0.01
n_outputs = 2
perturbation = 0.01
velocity = { sin = [0.1] }
[assertions]
max_energy_residual = 1e-6
max_mass_drift_per_step = 1e-12
"#;
    let cfg = config(text);
    let a = run_into(&cfg, Command::RunAxi, &tmp.path().join("a"));
    let b = run_into(&cfg, Command::RunAxi, &tmp.path().join("b"));
    assert!(a.success() && b.success(), "{a:?}");
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("axi_final.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    let o = RunOverrides { out: Some(tmp.path().join("c")), jobs: Some(1), seed: Some(7) };
    cli::run(&cfg, Command::RunAxi, &o).unwrap();
    assert_ne!(read("a"), read("c"));
}

#[test]
fn one_dimensional_run_writes_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("[geometry]\nradius = { poly = [1.0, 0.25] }\n[solver1d]\nhorizon = 0.05\nn_cells = 32\nvelocity = { sin = [0.1] }\n");
    let m = run_into(&cfg, Command::Run1d, tmp.path());
    assert!(m.success(), "{m:?}");
    assert!(tmp.path().join("run1d_series.csv").is_file());
}

#[test]
fn poincare_reports_disk_and_circle_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("[poincare]\nn_boundary = 16\nn_rings = 3\n[assertions]\nmax_poincare_drift = 0.05\n");
    let m = run_into(&cfg, Command::Poincare, tmp.path());
    assert!(m.success(), "{m:?}");
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("poincare_report.json")).unwrap()).unwrap();
    assert!((rep[0]["normal_trace_bound"].as_f64().unwrap() - std::f64::consts::PI).abs() < 1e-8);
}

#[test]
fn environment_overrides_the_out_flag() {
    let cfg = config("");
    assert_eq!(cli::resolve_out(&cfg, Some(Path::new("flag"))), PathBuf::from("flag"));
    // the only test that touches this variable
    std::env::set_var(cli::OUT_ENV, "from-env");
    assert_eq!(cli::resolve_out(&cfg, Some(Path::new("flag"))), PathBuf::from("from-env"));
    std::env::remove_var(cli::OUT_ENV);
}
