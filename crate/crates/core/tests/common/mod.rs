#![allow(dead_code)]

use std::path::{Path, PathBuf};

use chrono::{NaiveDate, TimeZone, Utc};
use metapin::history::{HistoryExport, ScanOptions};
use metapin::pipeline::{self, RegistryMode, RunConfig, StageOutcome};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Replays an export fixture as git repositories under `root`.
pub fn materialize(export: &str, root: &Path) {
    HistoryExport::load(&fixture(export))
        .unwrap()
        .write_git_corpus(root)
        .unwrap();
}

pub fn config(corpus: &Path, out: &Path) -> RunConfig {
    RunConfig {
        corpus: Some(corpus.to_path_buf()),
        registry: Some(RegistryMode::Fixture(fixture("registry.json"))),
        cutoff: Utc.from_utc_datetime(
            &NaiveDate::from_ymd_opt(2021, 1, 1)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
        ),
        out: out.to_path_buf(),
        jobs: None,
        scan: ScanOptions::default(),
        advisories: None,
    }
}

/// Runs scan, classify, groups and recommend.
pub fn run_all(config: &RunConfig) -> StageOutcome {
    let mut outcome = pipeline::scan(config).unwrap();
    for stage in [pipeline::classify, pipeline::groups, pipeline::recommend] {
        let o = stage(config).unwrap();
        outcome.errors.extend(o.errors);
        outcome.warnings.extend(o.warnings);
    }
    outcome
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Relative path and bytes of every file below `dir`, sorted.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path
                    .strip_prefix(base)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
