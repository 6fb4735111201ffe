use std::path::Path;
use std::process::{Command, Output};

fn racemix(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_racemix"))
        .args(args)
        .env("RACEMIX_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

const TINY: &[&str] = &[
    "--output_dir",
    "out",
    "--trials",
    "1",
    "--synth.subjects_per_race",
    "12",
    "--synth.images_per_subject",
    "4",
    "--images_per_subject",
    "3",
    "--test_subjects_per_race",
    "10",
    "--pairs_per_race",
    "40",
    "--folds",
    "2",
    "--total_subjects",
    "12",
    "--train.epochs",
    "1",
    "--train.hidden",
    "[32]",
];

fn with_tiny<'a>(cmd: &[&'a str]) -> Vec<&'a str> {
    let mut v = cmd.to_vec();
    v.extend_from_slice(TINY);
    v
}

#[test]
fn enumerate_lists_every_mix() {
    let dir = tempfile::tempdir().unwrap();
    let out = racemix(&["enumerate", "--total", "5000"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 90);
    assert!(text
        .lines()
        .nth(1)
        .unwrap()
        .ends_with("1250,1250,1250,1250"));
}

#[test]
fn verify_fixtures_exit_code_follows_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.csv");
    std::fs::write(
        &good,
        "african_subj,asian_subj,cauc_subj,indian_subj,acc_afr,acc_asi,acc_cau,acc_ind,acc_mean,acc_var\n\
         1250,1250,1250,1250,71.68,71.70,80.68,75.25,74.83,13.53\n",
    )
    .unwrap();
    let out = racemix(&["verify-fixtures", good.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        std::fs::read_to_string(&good)
            .unwrap()
            .replace("13.53", "14.53"),
    )
    .unwrap();
    let out = racemix(&["verify-fixtures", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn bad_overrides_fail() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["sweep", "--trials", "0"],
        vec!["sweep", "--no_such_field", "1"],
        vec!["sweep", "--trials"],
        vec!["sweep", "stray"],
    ] {
        let out = racemix(&args, dir.path());
        assert!(!out.status.success(), "{args:?} should fail");
    }
}

#[test]
fn pipeline_writes_under_output_root() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in [
        vec!["synth"],
        vec!["sample", "--index", "5"],
        vec!["train"],
        vec!["eval"],
    ] {
        let out = racemix(&with_tiny(&cmd), dir.path());
        assert!(
            out.status.success(),
            "{cmd:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = dir.path().join("out");
    for f in [
        "catalog.csv",
        "features.bin",
        "pairs.csv",
        "manifest.jsonl",
        "model.bin",
        "train_log.csv",
        "eval.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn stopped_sweep_exits_nonzero_then_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = with_tiny(&["sweep", "--sweep_points", "[0,1,2,3]"]);
    args.extend(["--stop_after_cells", "2"]);
    let out = racemix(&args, dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("out/sweep.resume.json").exists());
    let out = racemix(
        &with_tiny(&["sweep", "--sweep_points", "[0,1,2,3]"]),
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!dir.path().join("out/sweep.resume.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    // header, 4 trial rows, 4 mean and 4 sd rows
    assert_eq!(csv.lines().count(), 13);
}
