use std::path::Path;
use std::process::{Command, Output};

fn despeckle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_despeckle"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pfr");
    let b = dir.path().join("b.pfr");
    for out in [&a, &b] {
        let o = despeckle(&[
            "simulate",
            "--mode",
            "dualpol",
            "--rhh",
            "2",
            "--rvv",
            "2",
            "--rhv",
            "1",
            "--size",
            "128",
            "--seed",
            "7",
            "-o",
            path(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(&bytes[4..16], &[128, 0, 0, 0, 128, 0, 0, 0, 4, 0, 0, 0]);

    let stats = despeckle(&["stats", path(&a)]);
    assert!(stats.status.success());
    let text = String::from_utf8(stats.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("row,col,covariance,std_error"));
    assert_eq!(text.lines().count(), 1 + 16);
}

#[test]
fn gradcheck_passes() {
    let o = despeckle(&["gradcheck", "--seed", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!String::from_utf8(o.stdout).unwrap().contains("FAIL"));
}

#[test]
fn eval_of_clean_against_itself_is_saturated() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.pfr");
    let noisy = dir.path().join("noisy.pfr");
    let o = despeckle(&[
        "simulate",
        "--mode",
        "gamma",
        "--size",
        "32",
        "--polarizations",
        "1",
        "--seed",
        "1",
        "--clean-out",
        path(&clean),
        "-o",
        path(&noisy),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = despeckle(&[
        "eval",
        "--clean",
        path(&clean),
        "--despeckled",
        path(&clean),
        "--noisy",
        path(&noisy),
        "--roi",
        "0,0,16,16",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(
        csv.lines()
            .any(|l| l.starts_with("psnr_despeckled,") && l.ends_with(",saturated")),
        "{csv}"
    );
    assert!(csv.lines().any(|l| l.starts_with("enl_noisy,")), "{csv}");
}

#[test]
fn train_then_despeckle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    for seed in 0..2 {
        let out = data.join(format!("s{seed}.pfr"));
        let o = despeckle(&[
            "simulate",
            "--mode",
            "gamma",
            "--size",
            "32",
            "--polarizations",
            "2",
            "--seed",
            &seed.to_string(),
            "-o",
            path(&out),
        ]);
        assert!(o.status.success());
    }
    let ckpt = dir.path().join("m.pmck");
    let log = dir.path().join("loss.csv");
    let o = despeckle(&[
        "train",
        path(&data),
        "--desk",
        "--epochs",
        "2",
        "--width",
        "2",
        "--patch",
        "16",
        "-o",
        path(&ckpt),
        "--log",
        path(&log),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&log).unwrap().lines().count() > 1);

    let out = dir.path().join("r.pfr");
    let preview = dir.path().join("r.pgm");
    let o = despeckle(&[
        "despeckle",
        path(&data.join("s0.pfr")),
        "--checkpoint",
        path(&ckpt),
        "-o",
        path(&out),
        "--preview",
        path(&preview),
        "--patch",
        "16",
        "--stride",
        "8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.exists() && preview.exists());
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let o = despeckle(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(despeckle(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_file_exits_2() {
    let o = despeckle(&["stats", "/nonexistent/x.pfr"]);
    assert_eq!(o.status.code(), Some(2));
    let o = despeckle(&[
        "despeckle",
        "/nonexistent/x.pfr",
        "--checkpoint",
        "/nonexistent/m.pmck",
        "-o",
        "/tmp/never.pfr",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn contract_violations_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.pfr");
    let o = despeckle(&[
        "simulate",
        "--mode",
        "singlepol",
        "--size",
        "8",
        "--kernel",
        "0.5,x",
        "-o",
        path(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_modes_use_underscored_names() {
    for mode in ["polmerlin", "channel_only", "merlin_single_pol", "supervised_mse"] {
        let o = despeckle(&["train", "/nonexistent", "--mode", mode]);
        assert_eq!(o.status.code(), Some(2), "{mode}");
    }
    assert_eq!(
        despeckle(&["train", "/nonexistent", "--mode", "merlin"]).status.code(),
        Some(1)
    );
}
