use std::process::Command;

fn she() -> Command {
    Command::new(env!("CARGO_BIN_EXE_she"))
}

#[test]
fn green_eval_prints_kernel_and_images() {
    let out = she()
        .args(["green-eval", "--kappa-pi", "0.5", "--t", "1", "--x", "1,1", "--y", "1,1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap();
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    assert!((value("kernel") - value("images")).abs() < 1e-10);
    assert!(value("kernel") < value("free"));
}

#[test]
fn dilate_writes_reports_and_config() {
    let dir = std::env::temp_dir().join(format!("she-cli-{}", std::process::id()));
    let out = she()
        .args(["dilate", "--format", "json", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("dilation.json").exists());
    assert!(!dir.join("dilation.csv").exists());
    assert!(dir.join("dilation.config.toml").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mismatched_preset_is_an_error() {
    let out = she().args(["solve", "--preset", "dilation"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
