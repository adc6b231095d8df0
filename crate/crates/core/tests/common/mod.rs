//! Shared test support: fixture loading, an independent consolidation
//! oracle, a naive report scanner and proptest strategies.
#![allow(dead_code)]

pub mod props;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;

use sourcerer_core::domain::{CategoryId, CodeLocation, ConsolidatedFinding, NormalizedFinding, Severity, ToolId};
use sourcerer_core::ingest::{load_app_profile, parse_manifest, parse_tool_report, AppProfile, ManifestInfo, RawFinding, ToolReport};
use sourcerer_core::reconcile::{MatchGranularity, ToolFindings};
use sourcerer_core::session::{create_session, DataBundle, SessionConfig, SessionInputs, TriageSession};

pub const A2_TOOLS: [&str; 3] = ["mobsf", "androbugs", "qark"];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/a2").join(name)
}

pub fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("reading fixture {name}: {e}"))
}

pub fn a2_inputs() -> SessionInputs {
    let profile = load_app_profile(&fixture("profile.toml")).unwrap();
    let manifest = parse_manifest(&String::from_utf8(fixture("AndroidManifest.xml")).unwrap()).unwrap();
    let reports = A2_TOOLS
        .iter()
        .map(|t| parse_tool_report(&ToolId::from(*t), &fixture(&format!("{t}.json"))).unwrap())
        .collect();
    SessionInputs {
        profile,
        manifest: Some(manifest),
        reports,
    }
}

pub fn a2_data() -> DataBundle {
    DataBundle::shipped_for("fintech").unwrap()
}

pub fn a2_session() -> TriageSession {
    create_session(a2_inputs(), SessionConfig::default(), &a2_data()).unwrap()
}

pub fn at(second: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 1, 9, 0, 0).unwrap() + chrono::Duration::seconds(i64::from(second))
}

// -- synthetic corpus -----------------------------------------------------

pub const CORPUS_SIZE: usize = 36;
pub const CORPUS_SQL: usize = 23;
pub const CORPUS_PHONE_STATE: usize = 23;

fn raw(native_id: &str, class_name: &str, method: &str) -> RawFinding {
    RawFinding {
        native_id: native_id.into(),
        severity: "high".into(),
        file: None,
        class_name: Some(class_name.into()),
        method_name: Some(method.into()),
        line: None,
        message: String::new(),
    }
}

/// One corpus app. Every app has a two-tool logging finding; `sql` adds a
/// two-tool SQL injection finding and `phone_state` declares
/// READ_PHONE_STATE.
pub fn corpus_session(index: usize, sql: bool, phone_state: bool) -> TriageSession {
    let mut mobsf = vec![raw("android_logging", "com.corpus.Api", "log")];
    let mut androbugs = vec![raw("LOG_SENSITIVE_INFO", "com.corpus.Api", "log")];
    if sql {
        mobsf.push(raw("android_sql_raw_query", "com.corpus.Db", "query"));
        androbugs.push(raw("SQLITE_RAW_QUERY", "com.corpus.Db", "query"));
    }
    let mut permissions = vec!["android.permission.INTERNET".to_string()];
    if phone_state {
        permissions.push("android.permission.READ_PHONE_STATE".into());
    }
    let report = |tool: &str, raw_findings| ToolReport {
        tool: tool.into(),
        tool_version: "1".into(),
        raw_findings,
    };
    let inputs = SessionInputs {
        profile: AppProfile {
            app_id: format!("corpus.app{index:02}"),
            display_name: format!("Corpus app {index}"),
            description: "Send money with your PIN to phone contacts.".into(),
            domain_tag: "fintech".into(),
        },
        manifest: Some(ManifestInfo {
            package: format!("corpus.app{index:02}"),
            permissions,
            ..ManifestInfo::default()
        }),
        reports: vec![report("mobsf", mobsf), report("androbugs", androbugs)],
    };
    create_session(inputs, SessionConfig::default(), &a2_data()).unwrap()
}

/// 36 apps: SQL injection in the first 23, READ_PHONE_STATE in apps 10..33.
pub fn corpus() -> Vec<TriageSession> {
    (0..CORPUS_SIZE)
        .map(|i| corpus_session(i, i < CORPUS_SQL, (10..10 + CORPUS_PHONE_STATE).contains(&i)))
        .collect()
}

// -- naive scanner --------------------------------------------------------

/// Counts finding records by scanning for the `"native_id"` key, without a
/// JSON parser.
pub fn naive_record_count(payload: &str) -> usize {
    payload.matches("\"native_id\"").count()
}

/// Distinct native ids, read as the first quoted string after each key.
pub fn naive_native_ids(payload: &str) -> BTreeSet<String> {
    payload
        .split("\"native_id\"")
        .skip(1)
        .filter_map(|rest| {
            let start = rest.find('"')? + 1;
            let end = start + rest[start..].find('"')?;
            Some(rest[start..end].to_string())
        })
        .collect()
}

// -- consolidation oracle -------------------------------------------------

/// Location agreement written directly from the matching rules: the fields
/// a granularity compares must be present and equal, and an app-wide
/// finding agrees only with another app-wide finding.
pub fn oracle_match(a: &CodeLocation, b: &CodeLocation, g: MatchGranularity) -> bool {
    let app_wide = |l: &CodeLocation| l.file.is_none() && l.class_name.is_none() && l.method_name.is_none() && l.line.is_none();
    if app_wide(a) || app_wide(b) {
        return app_wide(a) && app_wide(b);
    }
    let same = |x: &Option<String>, y: &Option<String>| x.is_some() && x == y;
    match g {
        MatchGranularity::Method => same(&a.class_name, &b.class_name) && same(&a.method_name, &b.method_name),
        MatchGranularity::Class => same(&a.class_name, &b.class_name),
        MatchGranularity::File => same(&a.file, &b.file),
    }
}

/// (category, sorted members, supporting tools), borrowed from the input.
pub type OracleGroup<'a> = (&'a CategoryId, Vec<&'a NormalizedFinding>, BTreeSet<&'a ToolId>);

/// Every location class per category, found by breadth-first reachability
/// over the pairwise relation, with its distinct supporting tools.
pub fn oracle_classes(by_tool: &[ToolFindings], g: MatchGranularity) -> Vec<OracleGroup<'_>> {
    let all: Vec<&NormalizedFinding> = by_tool.iter().flat_map(|t| &t.findings).collect();
    let categories: BTreeSet<&CategoryId> = all.iter().map(|f| &f.category).collect();
    let mut classes = Vec::new();
    for category in categories {
        let nodes: Vec<&NormalizedFinding> = all.iter().copied().filter(|f| &f.category == category).collect();
        let mut seen = vec![false; nodes.len()];
        for start in 0..nodes.len() {
            if seen[start] {
                continue;
            }
            let mut class = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                class.push(nodes[i]);
                for j in 0..nodes.len() {
                    if !seen[j] && oracle_match(&nodes[i].location, &nodes[j].location, g) {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            class.sort();
            let support: BTreeSet<&ToolId> = class.iter().map(|f| &f.tool).collect();
            classes.push((category, class, support));
        }
    }
    classes
}

/// Splits oracle classes by threshold `k` into (kept groups, residue).
pub fn oracle_filter<'a>(classes: &[OracleGroup<'a>], k: usize) -> (BTreeSet<OracleGroup<'a>>, Vec<&'a NormalizedFinding>) {
    let mut kept = BTreeSet::new();
    let mut residue = Vec::new();
    for class in classes {
        if class.2.len() >= k {
            kept.insert(class.clone());
        } else {
            residue.extend(class.1.iter().copied());
        }
    }
    residue.sort();
    (kept, residue)
}

/// Brute-force consolidation: enumerate location classes, count distinct
/// tools, filter by `k`.
pub fn oracle(by_tool: &[ToolFindings], k: usize, g: MatchGranularity) -> (BTreeSet<OracleGroup<'_>>, Vec<&NormalizedFinding>) {
    oracle_filter(&oracle_classes(by_tool, g), k)
}

/// Consolidated findings in oracle shape, borrowing from `findings`.
pub fn as_groups(findings: &[ConsolidatedFinding]) -> BTreeSet<OracleGroup<'_>> {
    findings
        .iter()
        .map(|f| (&f.category, f.members.iter().collect(), f.support.iter().collect()))
        .collect()
}

pub fn refs<T>(items: &[T]) -> Vec<&T> {
    items.iter().collect()
}

// -- generators -----------------------------------------------------------

pub const POOL_CATEGORIES: [&str; 5] = [
    "sql-injection",
    "sensitive-data-logging",
    "hardcoded-secret",
    "insecure-webview-xss",
    "weak-crypto-hash",
];

/// Location pool. Whenever a class is present its file is derived from
/// it, so class agreement implies file agreement.
pub fn pool_location(index: usize) -> CodeLocation {
    let located = |class: &str, method: Option<&str>| CodeLocation {
        file: Some(format!("{}.java", class.replace('.', "/"))),
        class_name: Some(class.to_string()),
        method_name: method.map(str::to_string),
        line: None,
    };
    match index {
        0 => located("com.a.Db", Some("query")),
        1 => located("com.a.Db", Some("insert")),
        2 => located("com.b.Net", Some("query")),
        3 => located("com.b.Net", None),
        4 => CodeLocation {
            file: Some("res/xml/network_security_config.xml".into()),
            ..CodeLocation::default()
        },
        _ => CodeLocation::app_wide(),
    }
}

pub const POOL_LOCATIONS: usize = 6;

pub fn finding(tool: &str, category: &str, location: CodeLocation, severity: Severity) -> NormalizedFinding {
    NormalizedFinding {
        tool: tool.into(),
        category: category.into(),
        severity,
        native_id: format!("{tool}:{category}"),
        evidence: String::new(),
        location,
    }
}

pub fn severity_strategy() -> impl Strategy<Value = Severity> {
    prop::sample::select(Severity::ALL.to_vec())
}

pub fn finding_strategy(tool: &'static str, categories: usize, locations: usize) -> impl Strategy<Value = NormalizedFinding> {
    (0..categories, 0..locations, severity_strategy())
        .prop_map(move |(c, l, s)| finding(tool, POOL_CATEGORIES[c], pool_location(l), s))
}

/// Up to three tools, each with up to `per_tool` findings.
pub fn tools_strategy(per_tool: usize, categories: usize, locations: usize) -> impl Strategy<Value = Vec<ToolFindings>> {
    let one = |tool: &'static str| {
        prop::collection::vec(finding_strategy(tool, categories, locations), 0..=per_tool)
            .prop_map(move |findings| ToolFindings {
                tool: tool.into(),
                findings,
            })
    };
    (1usize..=3, one("mobsf"), one("androbugs"), one("qark")).prop_map(|(n, a, b, c)| {
        let mut v = vec![a, b, c];
        v.truncate(n);
        v
    })
}

pub fn granularity_strategy() -> impl Strategy<Value = MatchGranularity> {
    prop::sample::select(MatchGranularity::ALL.to_vec())
}

pub fn category_sets(by_tool: &[ToolFindings]) -> BTreeMap<ToolId, BTreeSet<CategoryId>> {
    by_tool
        .iter()
        .map(|t| (t.tool.clone(), t.findings.iter().map(|f| f.category.clone()).collect()))
        .collect()
}
