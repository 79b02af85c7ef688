use std::path::Path;
use std::process::Command;

use asynclqr::harness::config::{ModeKind, NominalSource, Overrides, Preset};
use asynclqr::harness::summary::{load_dir, summarize_artifacts};
use asynclqr::harness::{run_preset, summarize_dir, DEFAULT_THRESHOLD};
use asynclqr::Error;

fn quick(iterations: usize) -> Overrides {
    Overrides {
        mode: Some(ModeKind::ExactGrad),
        iterations: Some(iterations),
        ..Overrides::default()
    }
}

#[test]
fn single_homogeneous_agent_converges_to_the_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let ov = Overrides {
        agents: Some(1),
        batch_size: Some(1),
        eta: Some(3e-5),
        radius_scale: Some(0.0),
        ..quick(100_000)
    };
    let runs = run_preset(Preset::Custom, 7, &ov, dir.path()).unwrap();
    let gap = runs[0].meta.final_gaps[0];
    assert!((-1e-9..=1e-8).contains(&gap), "final gap {gap}");
    assert_eq!(runs[0].meta.staleness.max, 0);
}

#[test]
fn summary_from_disk_matches_summary_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let runs = run_preset(Preset::Fig3c, 3, &quick(150), dir.path()).unwrap();
    assert_eq!(runs.len(), 3);
    for r in &runs {
        assert!(r.trace_path.exists() && r.meta_path.exists());
        assert!(dir.path().join(&r.meta.fleet_file).exists());
    }
    let direct = summarize_artifacts(&runs, DEFAULT_THRESHOLD).unwrap();
    let loaded = summarize_dir(dir.path(), DEFAULT_THRESHOLD).unwrap();
    assert_eq!(direct, loaded);
    assert_eq!(loaded.preset, Preset::Fig3c);
    assert_eq!(loaded.traces.len(), 3);
    // a report written next to the runs is not mistaken for one
    std::fs::write(dir.path().join("report.json"), serde_json::to_string(&loaded).unwrap()).unwrap();
    assert_eq!(load_dir(dir.path()).unwrap().len(), 3);
}

#[test]
fn mixed_directories_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    run_preset(Preset::Fig3c, 1, &quick(20), dir.path()).unwrap();
    run_preset(Preset::Custom, 2, &quick(20), dir.path()).unwrap();
    let err = summarize_dir(dir.path(), DEFAULT_THRESHOLD).unwrap_err();
    assert!(matches!(err, Error::IncompatibleTraces(_)), "{err}");

    let dir = tempfile::tempdir().unwrap();
    assert!(summarize_dir(dir.path(), DEFAULT_THRESHOLD).is_err());
}

fn bytes(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn artifacts_are_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ov = Overrides {
        mode: Some(ModeKind::Zo),
        ..quick(60)
    };
    let ra = run_preset(Preset::Fig3a, 5, &ov, a.path()).unwrap();
    let rb = run_preset(Preset::Fig3a, 5, &ov, b.path()).unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        let label = &x.meta.config.label;
        assert_eq!(bytes(a.path(), &format!("{label}.csv")), bytes(b.path(), &format!("{label}.csv")));
        assert_eq!(bytes(a.path(), &format!("{label}.fleet.json")), bytes(b.path(), &format!("{label}.fleet.json")));
        assert_eq!(x.meta.final_k, y.meta.final_k);
        assert_eq!(x.meta.audit, y.meta.audit);
    }
}

#[test]
fn nominal_system_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scalar.json");
    std::fs::write(&path, r#"{"a": [[1.1]], "b": [[1.0]], "q": [[1.0]], "r": [[1.0]], "k0": [[0.5]]}"#).unwrap();
    let ov = Overrides {
        nominal: Some(NominalSource::Path(path.clone())),
        agents: Some(4),
        batch_size: Some(2),
        eta: Some(0.05),
        radius_scale: Some(1.0),
        ..quick(400)
    };
    let runs = run_preset(Preset::Custom, 1, &ov, &dir.path().join("out")).unwrap();
    let meta = &runs[0].meta;
    assert_eq!(meta.final_k.shape(), (1, 1));
    assert!(meta.final_gaps.iter().all(|g| *g < 1e-3), "{:?}", meta.final_gaps);

    std::fs::write(&path, r#"{"a": [[1.1]], "b": [[1.0]], "q": [[1.0]], "r": [[1.0]], "k0": [[0.5, 0.0]]}"#).unwrap();
    assert!(run_preset(Preset::Custom, 1, &ov, dir.path()).is_err());
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_asynclqr")).args(args).env_remove("ASYNCLQR_SEED").output().unwrap()
}

#[test]
fn cli_run_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = cli(&["run", "--preset", "fig3c", "--N", "30", "--mode", "exact-grad", "--out", out]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("radius_x0.csv").exists());

    let sum = cli(&["summarize", out]);
    assert!(sum.status.success());
    let report: serde_json::Value = serde_json::from_slice(&sum.stdout).unwrap();
    assert_eq!(report["preset"], "fig3c");
    assert_eq!(report["seed"], 7);
}

#[test]
fn cli_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(cli(&["run", "--preset", "fig9", "--out", out]).status.code(), Some(2));
    let bad = cli(&["run", "--preset", "custom", "--eta=-1", "--out", out]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("eta"));
    assert_eq!(cli(&["summarize", out]).status.code(), Some(2));
}
