use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ldtf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldtf"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, beats: &str) {
    let o = ldtf(&["synth", "--beats-per-class", beats, "--classes", "N,V,F"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn params_prints_reference_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = ldtf(&["params"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("9258742"), "{text}");
    assert!(text.contains("74087228"), "{text}");
}

#[test]
fn help_lists_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = ldtf(&["train", "--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for needle in ["--layers", "--heads", "--lr", "--batch-size", "published reference"] {
        assert!(text.contains(needle), "missing {needle}:\n{text}");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ldtf(&["nonsense"], dir.path()).status.code(), Some(1));
    assert_eq!(ldtf(&["train", "--no-such-flag"], dir.path()).status.code(), Some(1));
    assert_eq!(ldtf(&["params", "--classes", "N,X"], dir.path()).status.code(), Some(1));
    assert_eq!(ldtf(&["params", "--dropout", "1.5"], dir.path()).status.code(), Some(1));
    assert_eq!(ldtf(&[], dir.path()).status.code(), Some(1));
}

#[test]
fn missing_annotation_exits_with_two_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "4");
    fs::remove_file(dir.path().join("data/annotations/syn002.csv")).unwrap();
    let o = ldtf(&["ingest"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("syn002.csv"), "{}", stderr(&o));
}

#[test]
fn corrupt_header_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "4");
    fs::write(dir.path().join("data/records/syn001.hea"), "syn001 two 360\n").unwrap();
    let o = ldtf(&["ingest"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn corrupt_segment_archive_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/segments.seg"), b"garbage").unwrap();
    let o = ldtf(&["embed"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_archive_embeds_successfully() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("data/records")).unwrap();
    fs::create_dir_all(dir.path().join("data/annotations")).unwrap();
    let o = ldtf(&["ingest"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = ldtf(&["embed"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("0 embeddings"));
}

#[test]
fn end_to_end_run() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "8");
    let classes = ["--classes", "N,V,F"];
    let steps: Vec<Vec<&str>> = vec![
        [&["ingest"][..], &classes].concat(),
        vec!["embed", "--csv", "out/embeddings.csv"],
        [&["train", "--epochs", "0", "--layers", "1", "--heads", "1"][..], &classes].concat(),
        [&["eval"][..], &classes].concat(),
    ];
    for step in &steps {
        let o = ldtf(step, dir.path());
        assert!(o.status.success(), "{step:?}: {}", stderr(&o));
    }
    for file in ["segments.seg", "manifest.csv", "embeddings.lde", "embeddings.csv", "model.ldtf", "history.csv", "report.json"] {
        assert!(dir.path().join("out").join(file).exists(), "{file}");
    }
    let report: String = fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    assert!(report.contains("macro_recall"));

    // evaluating with a different class list than the checkpoint is refused
    let o = ldtf(&["eval", "--classes", "N,V"], dir.path());
    assert_ne!(o.status.code(), Some(0));
}
