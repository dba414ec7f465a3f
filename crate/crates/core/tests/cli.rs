use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn esp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esp")).args(args).output().expect("esp runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL_SWEEP: &str = r#"master_seed = 12
n_grid = [16, 64]
replications = 10
metrics = ["wgm", "sgm"]

[solver]
gap_tol = 1e-12
relative_gap = false

[problem]
family = "quadratic"
dim_x = 2
dim_y = 2
mu_x = 1.0
mu_y = 1.0
coupling_scale = 0.3
noise_scale = 1.0
radius_x = 2.0
radius_y = 2.0
"#;

#[test]
fn solve_matching_pennies_certifies_the_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("solve_matching_pennies.toml");
    let out = esp(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(tmp.path());
    assert_eq!(m["status"], "passed");
    assert!(m["details"]["certified_gap"].as_f64().unwrap() <= 1e-6);
    assert!(m["config"].as_str().unwrap().contains("family = \"game\""));
}

#[test]
fn shipped_solve_configs_run() {
    for name in ["mdp_from_file.toml", "solve_logged_game.toml"] {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = configs().join(name);
        let out = esp(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn reruns_are_byte_identical_and_seed_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "sweep.toml", SMALL_SWEEP);
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    let run = |dir: &Path, extra: &[&str]| {
        let mut args = vec!["rate-sweep", "--config", cfg.as_str(), "--out", dir.to_str().unwrap()];
        args.extend_from_slice(extra);
        esp(&args)
    };
    assert_eq!(run(&dirs[0], &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run(&dirs[1], &["--threads", "3"]).status.code(), Some(0));
    assert_eq!(run(&dirs[2], &["--seed", "13"]).status.code(), Some(0));
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&dirs[0], "results.csv"), read(&dirs[1], "results.csv"));
    assert_eq!(read(&dirs[0], "fits.csv"), read(&dirs[1], "fits.csv"));
    assert_ne!(read(&dirs[0], "results.csv"), read(&dirs[2], "results.csv"));
    assert_eq!(manifest(&dirs[2])["master_seed"], 13);
    assert_eq!(manifest(&dirs[1])["threads"], 3);
    let text = String::from_utf8(read(&dirs[0], "results.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("n,metric,mean,std_error,bound,replications,seed"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn unknown_key_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &SMALL_SWEEP.replace("noise_scale = 1.0", "noise_scale = 1.0\nnoise_kind = 3"));
    let out_dir = tmp.path().join("out");
    let out = esp(&["rate-sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:18:"), "{err}");
    assert!(err.contains("noise_kind"), "{err}");
    assert_eq!(manifest(&out_dir)["status"], "invalid-config");
}

#[test]
fn semantic_error_and_kind_mismatch_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "grid.toml", &SMALL_SWEEP.replace("n_grid = [16, 64]", "n_grid = [64, 16]"));
    let out = esp(&["rate-sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.toml:2:"));
    let cfg = write(tmp.path(), "kind.toml", &format!("experiment = \"game\"\n{SMALL_SWEEP}"));
    let out = esp(&["rate-sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_invariant_exits_1_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL_SWEEP.replace("[problem]", "[assertions]\nslope_min = 0.5\n\n[problem]");
    let cfg = write(tmp.path(), "band.toml", &text);
    let out_dir = tmp.path().join("out");
    let out = esp(&["rate-sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let m = manifest(&out_dir);
    assert_eq!(m["status"], "failed");
    assert!(m["suites"].as_array().unwrap().iter().any(|s| s["passed"] == false));
    assert!(out_dir.join("results.csv").exists());
    let fits = fs::read_to_string(out_dir.join("fits.csv")).unwrap();
    assert!(fits.contains(",false,"));
}

#[test]
fn runtime_error_exits_1_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "missing.toml",
        "master_seed = 1\n[problem]\nfamily = \"mdp\"\ninstance_file = \"nowhere.mdp\"\n",
    );
    let out_dir = tmp.path().join("out");
    let out = esp(&["solve", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let m = manifest(&out_dir);
    assert_eq!(m["status"], "error");
    assert!(m["message"].as_str().unwrap().contains("nowhere.mdp"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.mdp"));
}

#[test]
fn malformed_payoff_file_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("pay.csv"), "i,j,payoff\n0,0,0.5\n0,1,oops\n").unwrap();
    let cfg = write(
        tmp.path(),
        "logged.toml",
        "master_seed = 1\n[problem]\nfamily = \"game\"\nn1 = 2\nn2 = 2\nlaw = { law = \"deterministic\" }\npayoff_csv = \"pay.csv\"\n",
    );
    let out_dir = tmp.path().join("out");
    let out = esp(&["solve", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let msg = manifest(&out_dir)["message"].as_str().unwrap().to_string();
    assert!(msg.contains("pay.csv") && msg.contains("line 3"), "{msg}");
}

#[test]
fn mdp_results_carry_the_identity_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "mdp.toml",
        "master_seed = 4\nn_grid = [64, 128]\nreplications = 4\n[problem]\nfamily = \"mdp\"\nnum_states = 3\nnum_actions = 2\n",
    );
    let out_dir = tmp.path().join("out");
    let out = esp(&["mdp", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("n,metric,mean,std_error,bound,replications,seed,residual_eq18")
    );
}
