use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mamba-wireless"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn scan_config(out: &Path) -> String {
    format!(
        "kind = \"scan-bench\"\noutput_dir = {:?}\n[scan_bench]\nlengths = [8, 16]\nd = 2\nn = 2\nrepeats = 2\n",
        out.display().to_string()
    )
}

#[test]
fn run_then_plot_scan_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), &scan_config(&out));
    let run = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let dir = String::from_utf8(run.stdout).unwrap().lines().next().unwrap().to_string();
    assert!(Path::new(&dir).join("manifest.toml").is_file());
    let csv = std::fs::read_to_string(Path::new(&dir).join("seed-0/scan_latency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3, "one row per (impl, L)");

    let plot = bin().args(["plot", &dir, "scan"]).output().unwrap();
    assert!(plot.status.success(), "{}", String::from_utf8_lossy(&plot.stderr));
    let svg = std::fs::read_to_string(Path::new(&dir).join("scan.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("parallel"));

    let missing = bin().args(["plot", &dir, "bleu"]).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("bleu.csv"));
}

#[test]
fn malformed_config_fails_without_touching_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let body = format!("{}\nbogus = = 3\n", scan_config(&out));
    let cfg = write_config(tmp.path(), &body);
    let run = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!run.status.success());
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("line"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = bin().arg("selftest").env("MAMBA_WIRELESS_THREADS", "many").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = bin().arg("selftest").env("MAMBA_WIRELESS_THREADS", "1").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
