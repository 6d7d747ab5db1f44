use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn metapin(args: &[&str], corpus: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metapin"))
        .args(args)
        .arg("--corpus")
        .arg(corpus)
        .arg("--out")
        .arg(out)
        .arg("--registry-fixture")
        .arg(fixture("registry.json"))
        .args(["--cutoff", "2021-01-01"])
        .env_remove("GITHUB_TOKEN")
        .output()
        .expect("run metapin")
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn run_on_export_succeeds_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let first = metapin(&["run"], &fixture("corpus.json"), &a);
    assert_eq!(
        code(&first),
        0,
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("package updated"), "{stdout}");
    metapin(&["run"], &fixture("corpus.json"), &b);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn stages_can_run_separately() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for stage in ["scan", "classify", "groups", "recommend", "report"] {
        let o = metapin(&[stage], &fixture("corpus.json"), &out);
        assert_eq!(
            code(&o),
            0,
            "{stage}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(out.join("recommendations/index.json").is_file());
}

#[test]
fn jobs_do_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    metapin(&["run", "--jobs", "1"], &fixture("corpus.json"), &one);
    metapin(&["run", "--jobs", "4"], &fixture("corpus.json"), &many);
    assert_eq!(tree(&one), tree(&many));
}

#[test]
fn advisories_hold_a_recommendation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let advisories = fixture("advisories.json");
    let o = metapin(
        &["run", "--advisories", advisories.to_str().unwrap()],
        &fixture("corpus.json"),
        &out,
    );
    assert_eq!(code(&o), 0);
    let index = std::fs::read_to_string(out.join("recommendations/index.json")).unwrap();
    assert!(index.contains("\"held\""), "{index}");
}

#[test]
fn missing_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = metapin(&["scan"], &dir.path().join("nope"), &dir.path().join("out"));
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_metapin"))
        .args(["scan", "--frobnicate"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_corpus_directory_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    let o = metapin(&["run"], &corpus, &dir.path().join("out"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unreadable_repository_gives_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(corpus.join("not-a-repo")).unwrap();
    std::fs::write(corpus.join("not-a-repo/Dockerfile"), "FROM scratch\n").unwrap();
    let out = dir.path().join("out");
    let git = Command::new("git")
        .args(["init", "-q", "-b", "main"])
        .arg(corpus.join("empty"))
        .status()
        .unwrap();
    assert!(git.success());
    let o = metapin(&["run"], &corpus, &out);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not-a-repo"));
    let timelines = std::fs::read_to_string(out.join("timelines.json")).unwrap();
    assert!(timelines.contains("\"empty\""), "{timelines}");
}
