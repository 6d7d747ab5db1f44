//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use metapin::dockerfile::{parse_dockerfile, ParseOptions};
use metapin::extract::{build_env, extract_urls};
use metapin::history::{ExportedCommit, ExportedRepo, HistoryExport};
use metapin::metamaint::{
    compare_combinations, tag_distance, CombinationSource, PackageSet, ProductOrdering,
    VersionCombination,
};
use metapin::pipeline::{
    self, ClassificationArtifact, GroupsArtifact, RecommendationIndex, TimelinesArtifact,
};
use metapin::pkgid::{match_github_url, PackageIdentity};
use metapin::recommend::{pinned_tags, RecommendationStatus};
use metapin::registry::RegistrySnapshot;
use metapin::shell::parse_shell;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Deserialize;

use common::{config, fixture, materialize, read, run_all, tree};

const EXTRACTION_BUDGET: Duration = Duration::from_secs(1);
const PATTERN_TABLE_SIZE: usize = 30;
const PATTERN_MAX_ERRORS: usize = 0;
const TAG_DISTANCE_EXAMPLE: usize = 4;
const TAG_DISTANCE_CASES: usize = 1_000;
const ORDER_MAX_SET: usize = 3;
const ORDER_MAX_TAGS: usize = 4;
const ORDER_RANDOM_CASES: usize = 10_000;
const ORDER_BUDGET: Duration = Duration::from_secs(10);
const MIN_CORPUS_REPOS: usize = 8;
const MIN_CORPUS_DOCKERFILES: usize = 12;
const FUZZ_INPUTS: usize = 10_000;
const FUZZ_PER_INPUT: Duration = Duration::from_millis(100);
const PIPELINE_BUDGET: Duration = Duration::from_secs(30);
const PIPELINE_PARALLEL_JOBS: usize = 4;

type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(&str, Check); 9] = [
        (
            "1 worked Dockerfile examples extract the substituted URLs",
            c1_extraction,
        ),
        ("2 URL pattern table classifies without error", c2_patterns),
        (
            "3 tag distance example and metric properties",
            c3_tag_distance,
        ),
        ("4 product order agrees with brute force", c4_product_order),
        (
            "5 synthetic corpus classification matches ground truth",
            c5_classification,
        ),
        (
            "6 recommendation patches round-trip to the group maximum",
            c6_round_trip,
        ),
        (
            "7 advisories hold exactly the flagged recommendation",
            c7_advisory_hold,
        ),
        ("8 parsers are total on random input", c8_fuzz),
        ("9 end-to-end runtime and --jobs determinism", c9_end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn export_of(files: &[(&str, &str)]) -> HistoryExport {
    HistoryExport {
        repos: vec![ExportedRepo {
            id: "examples".into(),
            commits: vec![ExportedCommit {
                id: "c1".into(),
                timestamp: Utc.with_ymd_and_hms(2021, 6, 1, 0, 0, 0).unwrap(),
                message: None,
                files: files
                    .iter()
                    .map(|(p, t)| (p.to_string(), Some(t.to_string())))
                    .collect(),
                renames: BTreeMap::new(),
            }],
        }],
    }
}

fn c1_extraction() -> Result<String, String> {
    let zookeeper = "FROM ubuntu:14.04\nENV zookeeperVersion 3.4.13\nRUN wget -q http://archive.apache.org/dist/zookeeper/zookeeper-$zookeeperVersion/zookeeper-$zookeeperVersion.tar.gz\n";
    let postgres = "FROM debian:buster\nENV PG_VERSION=9.3.4\n    RUN curl -SL https://example.com/postgres-$PG_VERSION.tar.xz | tar -xJC /usr/src/postgres && ...\n";
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("examples.json");
    let export = export_of(&[
        ("zookeeper/Dockerfile", zookeeper),
        ("postgres/Dockerfile", postgres),
    ]);
    std::fs::write(&corpus, serde_json::to_string(&export).unwrap()).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let start = Instant::now();
    pipeline::scan(&config(&corpus, &out)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    #[derive(Deserialize)]
    struct Row {
        dockerfile: String,
        urls: Vec<Url>,
    }
    #[derive(Deserialize)]
    struct Url {
        url: String,
    }
    let rows: Vec<Row> = serde_json::from_str(&read(&out.join(pipeline::EXTRACTION))).unwrap();
    let got: BTreeMap<String, Vec<String>> = rows
        .into_iter()
        .map(|r| (r.dockerfile, r.urls.into_iter().map(|u| u.url).collect()))
        .collect();
    let want: BTreeMap<String, Vec<String>> = [
        (
            "postgres/Dockerfile".to_string(),
            vec!["https://example.com/postgres-9.3.4.tar.xz".to_string()],
        ),
        (
            "zookeeper/Dockerfile".to_string(),
            vec![
                "http://archive.apache.org/dist/zookeeper/zookeeper-3.4.13/zookeeper-3.4.13.tar.gz"
                    .to_string(),
            ],
        ),
    ]
    .into();
    ensure(got == want, || format!("got {got:?}"))?;
    ensure(elapsed < EXTRACTION_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "2/2 exact URLs in {elapsed:?} (budget {EXTRACTION_BUDGET:?})"
    ))
}

#[derive(Deserialize)]
struct PatternCase {
    url: String,
    expect: Option<PatternExpect>,
}

#[derive(Deserialize, PartialEq, Debug)]
struct PatternExpect {
    identity: String,
    tag: String,
    pattern: String,
    #[serde(default)]
    asset: Option<String>,
}

fn c2_patterns() -> Result<String, String> {
    let cases: Vec<PatternCase> =
        serde_json::from_str(&read(&fixture("url_patterns.json"))).map_err(|e| e.to_string())?;
    ensure(cases.len() == PATTERN_TABLE_SIZE, || {
        format!("table has {} rows", cases.len())
    })?;
    let mut errors = Vec::new();
    for case in &cases {
        let got = match_github_url(&case.url).map(|p| PatternExpect {
            identity: p.identity.to_string(),
            tag: p.tag,
            pattern: serde_json::to_value(p.pattern)
                .unwrap()
                .as_str()
                .unwrap()
                .to_string(),
            asset: p.asset_file,
        });
        if got != case.expect {
            errors.push(format!("{}: got {got:?}", case.url));
        }
    }
    ensure(errors.len() == PATTERN_MAX_ERRORS, || errors.join("; "))?;
    let matched = cases.iter().filter(|c| c.expect.is_some()).count();
    Ok(format!(
        "{} URLs ({matched} matches, {} rejections), {} errors",
        cases.len(),
        cases.len() - matched,
        errors.len()
    ))
}

fn registry_with(tags: &BTreeMap<String, Vec<String>>) -> RegistrySnapshot {
    let value: BTreeMap<&String, serde_json::Value> = tags
        .iter()
        .map(|(k, v)| (k, serde_json::json!({ "tags": v })))
        .collect();
    RegistrySnapshot::from_json(
        &serde_json::to_string(&value).unwrap(),
        Path::new("generated"),
    )
    .expect("generated registry")
}

fn c3_tag_distance() -> Result<String, String> {
    let example: BTreeMap<String, Vec<String>> = [(
        "x/y".to_string(),
        ["v1.0", "v1.1", "v1.2", "v1.3", "v2.0"]
            .map(String::from)
            .to_vec(),
    )]
    .into();
    let id: PackageIdentity = "x/y".parse().unwrap();
    let d =
        tag_distance(&id, "v1.0", "v2.0", &registry_with(&example)).map_err(|e| e.to_string())?;
    ensure(d == TAG_DISTANCE_EXAMPLE, || format!("example gave {d}"))?;

    let mut rng = StdRng::seed_from_u64(3);
    for case in 0..TAG_DISTANCE_CASES {
        let n = rng.gen_range(1..60);
        let mut tags: Vec<String> = (0..n)
            .map(|i| format!("t{i}-{}", rng.gen_range(0..1000)))
            .collect();
        tags.sort();
        tags.dedup();
        let reg = registry_with(&[("p/q".to_string(), tags.clone())].into());
        let id: PackageIdentity = "p/q".parse().unwrap();
        let pick = |rng: &mut StdRng| tags[rng.gen_range(0..tags.len())].clone();
        let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let dist = |x: &str, y: &str| tag_distance(&id, x, y, &reg).unwrap();
        let ab = dist(&a, &b);
        ensure(ab == dist(&b, &a), || format!("case {case}: asymmetric"))?;
        ensure(dist(&a, &a) == 0, || format!("case {case}: d(a,a) != 0"))?;
        ensure((ab == 0) == (a == b), || {
            format!("case {case}: zero iff equal violated")
        })?;
        ensure(dist(&a, &c) <= ab + dist(&b, &c), || {
            format!("case {case}: triangle")
        })?;
    }
    Ok(format!(
        "example = {d}; {TAG_DISTANCE_CASES} random cases hold nonnegativity, symmetry, identity, triangle"
    ))
}

fn combination(indices: &[usize]) -> VersionCombination {
    let ids: Vec<PackageIdentity> = (0..indices.len())
        .map(|i| format!("p/p{i:02}").parse().unwrap())
        .collect();
    VersionCombination {
        set: PackageSet::new(ids.clone()).unwrap(),
        tags: ids
            .iter()
            .zip(indices)
            .map(|(k, i)| (k.clone(), format!("t{i}")))
            .collect(),
        indices: ids.into_iter().zip(indices.iter().copied()).collect(),
        source: CombinationSource {
            repo: "r".into(),
            dockerfile: "Dockerfile".into(),
            commit: "c".into(),
            timestamp: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
        },
    }
}

fn brute_force_order(x: &[usize], y: &[usize]) -> ProductOrdering {
    let mut x_le_y = true;
    let mut y_le_x = true;
    for i in 0..x.len() {
        if x[i] > y[i] {
            x_le_y = false;
        }
        if y[i] > x[i] {
            y_le_x = false;
        }
    }
    if x_le_y && y_le_x {
        ProductOrdering::Equal
    } else if x_le_y {
        ProductOrdering::Less
    } else if y_le_x {
        ProductOrdering::Greater
    } else {
        ProductOrdering::Incomparable
    }
}

/// All index vectors with `sizes[i]` choices in position `i`.
fn all_vectors(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..n).map(move |i| {
                    let mut w = v.clone();
                    w.push(i);
                    w
                })
            })
            .collect();
    }
    out
}

fn c4_product_order() -> Result<String, String> {
    let start = Instant::now();
    let mut pairs = 0usize;
    let mut disagreements = Vec::new();
    // package sets have at least two members
    for size in 2..=ORDER_MAX_SET {
        for tag_counts in all_vectors(&vec![ORDER_MAX_TAGS; size]) {
            let sizes: Vec<usize> = tag_counts.iter().map(|c| c + 1).collect();
            let combos: Vec<(Vec<usize>, VersionCombination)> = all_vectors(&sizes)
                .into_iter()
                .map(|v| {
                    let c = combination(&v);
                    (v, c)
                })
                .collect();
            for (xv, x) in &combos {
                for (yv, y) in &combos {
                    pairs += 1;
                    let got = compare_combinations(x, y).map_err(|e| e.to_string())?;
                    if got != brute_force_order(xv, yv) && disagreements.len() < 5 {
                        disagreements.push(format!("{xv:?} vs {yv:?}: {got:?}"));
                    }
                }
            }
        }
    }
    let mut rng = StdRng::seed_from_u64(4);
    for _ in 0..ORDER_RANDOM_CASES {
        let size = rng.gen_range(ORDER_MAX_SET + 1..=12);
        let tags = rng.gen_range(ORDER_MAX_TAGS + 1..=40);
        let xv: Vec<usize> = (0..size).map(|_| rng.gen_range(0..tags)).collect();
        // bias towards comparable pairs
        let yv: Vec<usize> = xv
            .iter()
            .map(|&i| match rng.gen_range(0..4) {
                0 => i,
                1 => (i + rng.gen_range(0..3)).min(tags - 1),
                2 => i.saturating_sub(rng.gen_range(0..3)),
                _ => rng.gen_range(0..tags),
            })
            .collect();
        let got = compare_combinations(&combination(&xv), &combination(&yv))
            .map_err(|e| e.to_string())?;
        if got != brute_force_order(&xv, &yv) && disagreements.len() < 5 {
            disagreements.push(format!("{xv:?} vs {yv:?}: {got:?}"));
        }
    }
    let elapsed = start.elapsed();
    ensure(disagreements.is_empty(), || disagreements.join("; "))?;
    ensure(elapsed < ORDER_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{pairs} exhaustive pairs + {ORDER_RANDOM_CASES} random cases, 0 disagreements, {elapsed:?} (budget {ORDER_BUDGET:?})"
    ))
}

#[derive(Deserialize)]
struct Expected {
    dockerfiles: BTreeMap<String, String>,
    excluded: Vec<String>,
    repos: BTreeMap<String, String>,
    groups: BTreeMap<String, ExpectedGroup>,
    recommendations: BTreeMap<String, ExpectedRec>,
}

#[derive(Deserialize)]
struct ExpectedGroup {
    class: String,
    members: Vec<String>,
    #[serde(default)]
    metrics: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct ExpectedRec {
    status: String,
    evidence: Vec<String>,
    target: BTreeMap<String, String>,
}

fn name<T: serde::Serialize>(v: T) -> String {
    serde_json::to_value(v)
        .unwrap()
        .as_str()
        .unwrap()
        .to_string()
}

fn c5_classification() -> Result<String, String> {
    let expected: Expected = serde_json::from_str(&read(&fixture("expected.json"))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    materialize("corpus.json", &corpus);
    let repos = std::fs::read_dir(&corpus).unwrap().count();
    let out = dir.path().join("out");
    let mut cfg = config(&corpus, &out);
    cfg.advisories = Some(fixture("advisories.json"));
    let outcome = run_all(&cfg);
    ensure(outcome.errors.is_empty(), || {
        format!("{:?}", outcome.errors)
    })?;

    let c: ClassificationArtifact =
        serde_json::from_str(&read(&out.join(pipeline::CLASSIFICATION))).unwrap();
    let got_df: BTreeMap<String, String> = c
        .dockerfiles
        .iter()
        .map(|d| (format!("{}/{}", d.repo, d.path), name(d.status)))
        .collect();
    ensure(got_df == expected.dockerfiles, || {
        format!("dockerfiles: {got_df:?}")
    })?;
    let got_ex: Vec<String> = c
        .excluded
        .iter()
        .filter_map(|e| Some(format!("{}/{}", e.repo, e.path.as_ref()?)))
        .collect();
    ensure(got_ex == expected.excluded, || {
        format!("excluded: {got_ex:?}")
    })?;
    let got_repos: BTreeMap<String, String> = c
        .repos
        .iter()
        .map(|r| (r.repo.clone(), name(r.status)))
        .collect();
    ensure(got_repos == expected.repos, || {
        format!("repos: {got_repos:?}")
    })?;

    let g: GroupsArtifact = serde_json::from_str(&read(&out.join(pipeline::GROUPS))).unwrap();
    ensure(g.groups.len() == expected.groups.len(), || {
        format!("{} groups", g.groups.len())
    })?;
    for group in &g.groups {
        let key = group
            .set
            .members()
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("+");
        let want = expected
            .groups
            .get(&key)
            .ok_or_else(|| format!("unexpected group {key}"))?;
        let members: Vec<String> = group.members.iter().map(|m| m.repo.clone()).collect();
        ensure(name(group.class) == want.class, || {
            format!("{key}: class {:?}", group.class)
        })?;
        ensure(members == want.members, || {
            format!("{key}: members {members:?}")
        })?;
        let metrics = group.metrics.map(|m| serde_json::to_value(m).unwrap());
        ensure(metrics == want.metrics, || {
            format!("{key}: metrics {metrics:?}")
        })?;
    }

    let index: RecommendationIndex =
        serde_json::from_str(&read(&out.join("recommendations/index.json"))).unwrap();
    ensure(
        index.recommendations.len() == expected.recommendations.len(),
        || format!("{} recommendations", index.recommendations.len()),
    )?;
    for row in &index.recommendations {
        let r = &row.recommendation;
        let key = format!("{}/{}", r.target.repo, r.target.dockerfile);
        let want = expected
            .recommendations
            .get(&key)
            .ok_or_else(|| format!("unexpected recommendation {key}"))?;
        let target: BTreeMap<String, String> = r
            .changes
            .iter()
            .map(|c| (c.identity.to_string(), c.to_tag.clone()))
            .collect();
        ensure(
            name(r.status) == want.status && r.evidence == want.evidence && target == want.target,
            || format!("{key}: {:?} {:?} {target:?}", r.status, r.evidence),
        )?;
    }

    let tally = |rows: &[pipeline::TallyRow]| {
        rows.iter()
            .map(|r| format!("{}={}", r.category, r.count))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let analyzed = c.dockerfiles.len();
    let dockerfiles = analyzed + c.excluded.iter().filter(|e| e.path.is_some()).count();
    ensure(
        repos >= MIN_CORPUS_REPOS && dockerfiles >= MIN_CORPUS_DOCKERFILES,
        || format!("corpus too small: {repos} repos, {dockerfiles} Dockerfiles"),
    )?;
    for (rows, what) in [
        (&c.dockerfile_table, "Dockerfile status"),
        (&c.repo_table, "repo status"),
        (&g.group_table, "group class"),
    ] {
        ensure(rows.iter().all(|r| r.count > 0), || {
            format!("a {what} is not covered: {}", tally(rows))
        })?;
        let pct: f64 = rows.iter().map(|r| r.percent).sum();
        ensure((pct - 100.0).abs() <= 0.2, || {
            format!("{what} percentages sum to {pct}")
        })?;
    }

    let again = dir.path().join("again");
    let mut cfg2 = config(&corpus, &again);
    cfg2.advisories = cfg.advisories.clone();
    run_all(&cfg2);
    ensure(tree(&out) == tree(&again), || {
        "rerun artifacts differ".into()
    })?;

    Ok(format!(
        "{repos} git repos, {dockerfiles} Dockerfiles; Dockerfiles [{}]; repos [{}]; groups [{}]; rerun byte-identical",
        tally(&c.dockerfile_table),
        tally(&c.repo_table),
        tally(&g.group_table)
    ))
}

fn changed_lines(a: &str, b: &str) -> Option<BTreeSet<usize>> {
    let (a, b): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    if a.len() != b.len() {
        return None;
    }
    Some(
        (0..a.len())
            .filter(|i| a[*i] != b[*i])
            .map(|i| i + 1)
            .collect(),
    )
}

fn c6_round_trip() -> Result<String, String> {
    let mut checked = 0;
    for corpus_name in ["corpus.json", "comparable4/corpus.json"] {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        run_all(&config(&fixture(corpus_name), &out));
        let timelines: TimelinesArtifact =
            serde_json::from_str(&read(&out.join(pipeline::TIMELINES))).unwrap();
        let groups: GroupsArtifact =
            serde_json::from_str(&read(&out.join(pipeline::GROUPS))).unwrap();
        let index: RecommendationIndex =
            serde_json::from_str(&read(&out.join("recommendations/index.json"))).unwrap();
        for group in groups
            .groups
            .iter()
            .filter(|g| name(g.class) == "comparable")
        {
            let max = group
                .members
                .iter()
                .find(|m| {
                    group.members.iter().all(|o| {
                        matches!(
                            compare_combinations(&o.combination, &m.combination),
                            Ok(ProductOrdering::Less | ProductOrdering::Equal)
                        )
                    })
                })
                .ok_or("comparable group without maximum")?;
            let laggards = group
                .members
                .iter()
                .filter(|m| m.combination.tags != max.combination.tags);
            for member in laggards {
                let path = &member.combination.source.dockerfile;
                let row = index
                    .recommendations
                    .iter()
                    .find(|r| {
                        r.recommendation.target.repo == member.repo
                            && &r.recommendation.target.dockerfile == path
                    })
                    .ok_or_else(|| format!("no recommendation for {}/{path}", member.repo))?;
                let patch = row
                    .patch
                    .as_ref()
                    .ok_or_else(|| format!("{}/{path}: no patch", member.repo))?;
                let original = timelines
                    .repos
                    .iter()
                    .flat_map(|r| &r.timelines)
                    .find(|t| t.repo == member.repo && &t.path == path)
                    .and_then(|t| t.latest_text.clone())
                    .ok_or("missing HEAD text")?;
                let work = dir.path().join("work").join(&member.repo);
                let file = work.join(path);
                std::fs::create_dir_all(file.parent().unwrap()).unwrap();
                std::fs::write(&file, &original).unwrap();
                let status = Command::new("patch")
                    .args(["-p1", "--quiet", "--forward", "-i"])
                    .arg(out.join("recommendations").join(patch))
                    .current_dir(&work)
                    .status()
                    .map_err(|e| format!("patch tool: {e}"))?;
                ensure(status.success(), || {
                    format!("{}/{path}: patch did not apply", member.repo)
                })?;
                let patched = read(&file);
                let pinned = pinned_tags(&patched, path, ParseOptions::default());
                for (id, tag) in &max.combination.tags {
                    let got = pinned.get(id).cloned().unwrap_or_default();
                    ensure(got == BTreeSet::from([tag.clone()]), || {
                        format!("{}/{path}: {id} pinned at {got:?}, want {tag}", member.repo)
                    })?;
                }
                let sites: BTreeSet<usize> = row
                    .recommendation
                    .changes
                    .iter()
                    .flat_map(|c| c.edit_sites.iter().flat_map(|s| s.start_line..=s.end_line))
                    .collect();
                let changed = changed_lines(&original, &patched).ok_or("line count changed")?;
                ensure(changed.is_subset(&sites) && !changed.is_empty(), || {
                    format!(
                        "{}/{path}: changed lines {changed:?} outside edit sites {sites:?}",
                        member.repo
                    )
                })?;
                checked += 1;
            }
        }
    }
    ensure(checked > 0, || "no recommendations checked".into())?;
    Ok(format!(
        "{checked} patches apply with patch -p1, re-extract to the group maximum, edits confined to planned lines"
    ))
}

fn c7_advisory_hold() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let statuses =
        |advisories: Option<&Path>, out: &Path| -> Vec<(String, RecommendationStatus, String)> {
            let mut cfg = config(&fixture("corpus.json"), out);
            cfg.advisories = advisories.map(Path::to_path_buf);
            run_all(&cfg);
            let index: RecommendationIndex =
                serde_json::from_str(&read(&out.join("recommendations/index.json"))).unwrap();
            index
                .recommendations
                .into_iter()
                .map(|r| {
                    let msg = read(&out.join("recommendations").join(&r.message));
                    (r.recommendation.target.repo, r.recommendation.status, msg)
                })
                .collect()
        };
    let with = statuses(Some(&fixture("advisories.json")), &dir.path().join("with"));
    let without = statuses(None, &dir.path().join("without"));
    let held: Vec<&String> = with
        .iter()
        .filter(|(_, s, _)| *s == RecommendationStatus::Held)
        .map(|(r, _, _)| r)
        .collect();
    ensure(held == ["imaging-lambda"], || format!("held: {held:?}"))?;
    let caution = with
        .iter()
        .find(|(r, _, _)| r == "imaging-lambda")
        .map(|(_, _, m)| m.clone())
        .unwrap();
    ensure(
        caution.contains("Caution") && caution.contains("strukturag/libde265 v1.0.8"),
        || caution.clone(),
    )?;
    ensure(
        with.iter()
            .filter(|(_, _, m)| m.contains("Caution"))
            .count()
            == 1,
        || "caution leaked".into(),
    )?;
    ensure(
        without
            .iter()
            .all(|(_, s, _)| *s == RecommendationStatus::Ready),
        || format!("without advisories: {without:?}"),
    )?;
    Ok(format!(
        "1 of {} recommendations held (imaging-lambda, strukturag/libde265 v1.0.8); 0 held without the advisories file",
        with.len()
    ))
}

const FRAGMENTS: &[&str] = &[
    "FROM ",
    "RUN ",
    "ENV ",
    "ARG ",
    "ADD ",
    "COPY ",
    "from ",
    "\\\n",
    "\n",
    "\r\n",
    " ",
    "\t",
    "$",
    "${",
    "}",
    "$(",
    ")",
    "(",
    "`",
    "'",
    "\"",
    "<<EOF\n",
    "<<-'X'\n",
    "EOF\n",
    "&&",
    "||",
    ";",
    "|",
    "&",
    "#",
    "=",
    ":-",
    "-",
    "wget ",
    "curl -o x ",
    "sudo ",
    "if ",
    "then ",
    "fi",
    "export ",
    "A=1 ",
    "http://github.com/a/b/archive/v1.tar.gz",
    "[\"sh\", \"-c\", ",
    "]",
    "\\",
    "é",
    "\u{0}",
    "${A:-${B}}",
    "$'x'",
    "> out",
    "2>&1",
    "{",
    "$@",
    "$1",
];

fn fuzz_input(rng: &mut StdRng) -> Vec<u8> {
    if rng.gen_bool(0.5) {
        let n = rng.gen_range(0..512);
        (0..n).map(|_| rng.gen()).collect()
    } else {
        let mut out = Vec::new();
        for _ in 0..rng.gen_range(0..80) {
            if rng.gen_ratio(1, 20) {
                out.push(rng.gen());
            } else {
                out.extend_from_slice(FRAGMENTS[rng.gen_range(0..FRAGMENTS.len())].as_bytes());
            }
        }
        out
    }
}

fn c8_fuzz() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(8);
    let inputs: Vec<Vec<u8>> = (0..FUZZ_INPUTS).map(|_| fuzz_input(&mut rng)).collect();
    let (to_worker, work) = mpsc::channel::<Vec<u8>>();
    let (done, results) = mpsc::channel::<Result<Duration, String>>();
    std::thread::spawn(move || {
        for input in work {
            let start = Instant::now();
            let r = catch_unwind(AssertUnwindSafe(|| {
                let ast = parse_dockerfile(&input, "Dockerfile");
                let env = build_env(&ast);
                let _ = extract_urls(&ast, &env);
                let _ = parse_shell(&String::from_utf8_lossy(&input));
            }));
            let sent = done.send(
                r.map(|_| start.elapsed())
                    .map_err(|_| format!("panic on input {:?}", String::from_utf8_lossy(&input))),
            );
            if sent.is_err() {
                break;
            }
        }
    });
    let previous_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut slowest = Duration::ZERO;
    let mut failure = None;
    for (i, input) in inputs.into_iter().enumerate() {
        to_worker.send(input).unwrap();
        match results.recv_timeout(FUZZ_PER_INPUT) {
            Ok(Ok(d)) => slowest = slowest.max(d),
            Ok(Err(e)) => {
                failure = Some(format!("input {i}: {e}"));
                break;
            }
            Err(_) => {
                failure = Some(format!("input {i}: no result within {FUZZ_PER_INPUT:?}"));
                break;
            }
        }
    }
    std::panic::set_hook(previous_hook);
    if let Some(f) = failure {
        return Err(f);
    }
    Ok(format!(
        "{FUZZ_INPUTS} inputs, no panic, slowest {slowest:?} (limit {FUZZ_PER_INPUT:?} each)"
    ))
}

fn c9_end_to_end() -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    materialize("corpus.json", &corpus);
    let run = |jobs: usize, out: &Path| -> Result<Duration, String> {
        let mut cfg = config(&corpus, out);
        cfg.jobs = Some(jobs);
        cfg.advisories = Some(fixture("advisories.json"));
        let start = Instant::now();
        let outcome = run_all(&cfg);
        pipeline::report(&cfg).map_err(|e| e.to_string())?;
        ensure(outcome.errors.is_empty(), || {
            format!("{:?}", outcome.errors)
        })?;
        Ok(start.elapsed())
    };
    let single = run(1, &dir.path().join("single"))?;
    let parallel = run(PIPELINE_PARALLEL_JOBS, &dir.path().join("parallel"))?;
    ensure(single < PIPELINE_BUDGET, || {
        format!("single-threaded run took {single:?}")
    })?;
    let a = tree(&dir.path().join("single"));
    let b = tree(&dir.path().join("parallel"));
    ensure(a == b, || "--jobs changed the artifacts".into())?;
    Ok(format!(
        "single-threaded {single:?} (budget {PIPELINE_BUDGET:?}), --jobs {PIPELINE_PARALLEL_JOBS} {parallel:?}, {} artifacts identical",
        a.len()
    ))
}
