use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hamgd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamgd")).args(args).current_dir(cwd).output().unwrap()
}

fn text(out: &[u8]) -> String {
    String::from_utf8_lossy(out).into_owned()
}

const CONFIG: &str = r#"
label = "cli"

[problem]
family = "coupled_scalar"
base = "softplus"
c = 10.0
d = 1

[solver]
method = "sgda"
eta = 0.01
max_iters = 150

[run]
start = [5.0, 5.0]
output = "out/cli.csv"
"#;

#[test]
fn run_writes_output_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cli.toml"), CONFIG).unwrap();
    let out = hamgd(&["run", "cli.toml"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("MaxIters after 150 steps"));
    assert_eq!(fs::read_to_string(dir.path().join("out/cli.csv")).unwrap().lines().count(), 152);
}

#[test]
fn divergence_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CONFIG.replace("eta = 0.01", "eta = 5.0").replace("max_iters = 150", "max_iters = 10000");
    fs::write(dir.path().join("d.toml"), cfg).unwrap();
    let out = hamgd(&["run", "d.toml"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("Diverged"));
}

#[test]
fn invalid_configs_exit_nonzero_and_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), CONFIG.replace("eta = 0.01\n", "")).unwrap();
    let out = hamgd(&["run", "bad.toml"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("solver.eta"));

    fs::write(dir.path().join("typo.toml"), CONFIG.replace("max_iters", "max_iter")).unwrap();
    let out = hamgd(&["run", "typo.toml"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("max_iter"));

    assert!(!hamgd(&["run", "missing.toml"], dir.path()).status.success());
    assert!(!hamgd(&["sweep", "typo.toml"], dir.path()).status.success());
}

#[test]
fn certify_prints_report_and_machine_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    let out = hamgd(&["certify", "c.toml", "--resolution", "41"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("certificate for cli"));
    let machine: Vec<_> = stdout.lines().filter(|l| l.starts_with("certify ")).collect();
    assert_eq!(machine.len(), 1);
    assert!(machine[0].contains("regime=SufficientlyBilinear"));
    assert!(machine[0].contains("resolution=41"));
}

#[test]
fn checkgrad_and_sweep_complete() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), CONFIG).unwrap();
    let out = hamgd(&["checkgrad", "c.toml"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("PASS"));

    let cfg = CONFIG.replace("\"sgda\"", "\"hgd\"").replace("max_iters = 150", "max_iters = 2000");
    fs::write(dir.path().join("s.toml"), cfg).unwrap();
    let out = hamgd(&["sweep", "s.toml", "--c", "3,10"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("out/cli_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}
