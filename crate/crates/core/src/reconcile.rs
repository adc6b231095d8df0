//! Cross-tool reconciliation.
//!
//! Raw tool findings are lifted into the canonical taxonomy through a
//! per-tool category map, then merged across tools: findings of one
//! category whose locations match (transitively) form one equivalence
//! class, and a class survives only when at least `threshold` distinct
//! tools support it. Everything that does not survive is kept as residue.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash3_64;

use crate::domain::{
    CategoryId, CategorySets, CodeLocation, ConsolidatedFinding, FindingId, NormalizedFinding, Severity,
    Taxonomy, ToolId, Verdict,
};
use crate::error::{Error, Result};
use crate::ingest::{map_severity, RawFinding, ToolReport, GENERIC_TOOL};

const SHIPPED_CATEGORY_MAPS: &str = include_str!("../data/category_maps.toml");

/// Per-tool map from native rule id to canonical category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub version: String,
    #[serde(default)]
    pub tools: BTreeMap<ToolId, BTreeMap<String, CategoryId>>,
}

impl CategoryMap {
    pub fn load(text: &str, taxonomy: &Taxonomy) -> Result<Self> {
        let map: CategoryMap = toml::from_str(text).map_err(|e| Error::data("category map", e))?;
        for (tool, entries) in &map.tools {
            for (native, category) in entries {
                if !taxonomy.contains(category) {
                    return Err(Error::data(
                        "category map",
                        format!("{tool}:{native} targets unknown category `{category}`"),
                    ));
                }
            }
        }
        Ok(map)
    }

    pub fn shipped(taxonomy: &Taxonomy) -> Result<Self> {
        Self::load(SHIPPED_CATEGORY_MAPS, taxonomy)
    }

    /// The generic adapter's native ids are canonical category ids.
    pub fn lookup(&self, tool: &ToolId, native_id: &str, taxonomy: &Taxonomy) -> Option<CategoryId> {
        if tool.as_str() == GENERIC_TOOL {
            let id = CategoryId::from(native_id);
            return taxonomy.contains(&id).then_some(id);
        }
        self.tools.get(tool)?.get(native_id).cloned()
    }

    pub fn covers(&self, tool: &ToolId) -> bool {
        tool.as_str() == GENERIC_TOOL || self.tools.contains_key(tool)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalized {
    pub findings: Vec<NormalizedFinding>,
    pub quarantined: Vec<RawFinding>,
}

/// Lifts every raw finding of `report` into the taxonomy. Findings whose
/// native id has no mapping, or whose location names a method or line
/// without a file or class, are quarantined; `findings.len() +
/// quarantined.len()` always equals the raw count.
pub fn normalize_findings(report: &ToolReport, map: &CategoryMap, taxonomy: &Taxonomy) -> Normalized {
    let mut out = Normalized::default();
    for raw in &report.raw_findings {
        let Some(category) = map.lookup(&report.tool, raw.native_id.trim(), taxonomy) else {
            out.quarantined.push(raw.clone());
            continue;
        };
        let location = raw.location();
        if !location.is_well_formed() {
            out.quarantined.push(raw.clone());
            continue;
        }
        let severity = if raw.severity.trim().is_empty() {
            taxonomy.get(&category).map_or(Severity::Medium, |c| c.default_severity)
        } else {
            map_severity(&report.tool, &raw.severity)
        };
        out.findings.push(NormalizedFinding {
            tool: report.tool.clone(),
            category,
            severity,
            location,
            evidence: raw.message.trim().to_string(),
            native_id: raw.native_id.trim().to_string(),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchGranularity {
    Method,
    #[default]
    Class,
    File,
}

impl MatchGranularity {
    pub const ALL: [MatchGranularity; 3] = [MatchGranularity::Method, MatchGranularity::Class, MatchGranularity::File];
}

impl fmt::Display for MatchGranularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchGranularity::Method => "method",
            MatchGranularity::Class => "class",
            MatchGranularity::File => "file",
        })
    }
}

impl FromStr for MatchGranularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "method" => Ok(MatchGranularity::Method),
            "class" => Ok(MatchGranularity::Class),
            "file" => Ok(MatchGranularity::File),
            other => Err(format!("unknown granularity `{other}` (expected method, class or file)")),
        }
    }
}

fn same(a: &Option<String>, b: &Option<String>) -> bool {
    matches!((a, b), (Some(x), Some(y)) if x == y)
}

/// Whether two locations denote the same code site at granularity `g`.
/// A field missing on either side never matches.
pub fn locations_match(a: &CodeLocation, b: &CodeLocation, g: MatchGranularity) -> bool {
    match g {
        MatchGranularity::Method => same(&a.class_name, &b.class_name) && same(&a.method_name, &b.method_name),
        MatchGranularity::Class => same(&a.class_name, &b.class_name),
        MatchGranularity::File => same(&a.file, &b.file),
    }
}

/// App-wide findings only match other app-wide findings.
fn colocated(a: &CodeLocation, b: &CodeLocation, g: MatchGranularity) -> bool {
    match (a.is_app_wide(), b.is_app_wide()) {
        (true, true) => true,
        (false, false) => locations_match(a, b, g),
        _ => false,
    }
}

/// One tool's normalized findings, the unit of a vote.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolFindings {
    pub tool: ToolId,
    pub findings: Vec<NormalizedFinding>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consolidation {
    pub findings: Vec<ConsolidatedFinding>,
    /// Findings whose equivalence class fell below the threshold.
    pub residue: Vec<NormalizedFinding>,
}

/// Union-find over indices; the lower root wins so classes are
/// independent of union order.
struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn reset(&mut self, n: usize) {
        self.parent.clear();
        self.parent.extend(0..n);
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Content address over the category and every member field. XXH3 output
/// does not depend on platform or crate version, so ids are stable.
fn finding_id(category: &CategoryId, members: &[NormalizedFinding], buf: &mut Vec<u8>) -> FindingId {
    buf.clear();
    let mut field = |value: Option<&[u8]>| {
        match value {
            Some(v) => {
                buf.push(1);
                buf.extend_from_slice(v);
            }
            None => buf.push(2),
        }
        buf.push(0);
    };
    field(Some(category.as_str().as_bytes()));
    for m in members {
        let line = m.location.line.map(u32::to_le_bytes);
        field(Some(m.tool.as_str().as_bytes()));
        field(Some(m.category.as_str().as_bytes()));
        field(Some(m.severity.as_str().as_bytes()));
        field(m.location.file.as_deref().map(str::as_bytes));
        field(m.location.class_name.as_deref().map(str::as_bytes));
        field(m.location.method_name.as_deref().map(str::as_bytes));
        field(line.as_ref().map(|l| &l[..]));
        field(Some(m.evidence.as_bytes()));
        field(Some(m.native_id.as_bytes()));
    }
    FindingId::from(format!("f-{:016x}", XxHash3_64::oneshot(buf)))
}

/// Majority vote. Within each category, findings whose locations match at
/// `granularity` are merged by transitive closure; a class is kept when at
/// least `threshold` distinct tools support it and otherwise goes to the
/// residue. Output is sorted by (category, first location, id).
pub fn consolidate(by_tool: &[ToolFindings], threshold: usize, granularity: MatchGranularity) -> Result<Consolidation> {
    if threshold == 0 {
        return Err(Error::ConfigInvalid("consolidation threshold must be at least 1".into()));
    }
    for (i, group) in by_tool.iter().enumerate() {
        if by_tool[..i].iter().any(|g| g.tool == group.tool) {
            return Err(Error::DuplicateTool(group.tool.clone()));
        }
        if let Some(stray) = group.findings.iter().find(|f| f.tool != group.tool) {
            return Err(Error::ConfigInvalid(format!(
                "finding from `{}` listed under tool `{}`",
                stray.tool, group.tool
            )));
        }
    }

    let mut all: Vec<&NormalizedFinding> = by_tool.iter().flat_map(|g| &g.findings).collect();
    all.sort_by(|a, b| a.category.cmp(&b.category));

    let mut out = Consolidation::default();
    let mut sets = DisjointSet { parent: Vec::new() };
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut tools: Vec<&ToolId> = Vec::new();
    let mut buf = Vec::new();
    for run in all.chunk_by(|a, b| a.category == b.category) {
        let category = &run[0].category;
        sets.reset(run.len());
        for i in 0..run.len() {
            for j in (i + 1)..run.len() {
                if colocated(&run[i].location, &run[j].location, granularity) {
                    sets.union(i, j);
                }
            }
        }
        order.clear();
        order.extend((0..run.len()).map(|i| (sets.find(i), i)));
        order.sort_unstable();
        for class in order.chunk_by(|a, b| a.0 == b.0) {
            tools.clear();
            tools.extend(class.iter().map(|&(_, i)| &run[i].tool));
            tools.sort_unstable();
            tools.dedup();
            let members = class.iter().map(|&(_, i)| run[i].clone());
            if tools.len() < threshold {
                out.residue.extend(members);
                continue;
            }
            let mut members: Vec<NormalizedFinding> = members.collect();
            members.sort();
            out.findings.push(ConsolidatedFinding {
                id: finding_id(category, &members, &mut buf),
                category: category.clone(),
                locations: members.iter().map(|m| m.location.clone()).collect(),
                support: tools.iter().map(|t| (*t).clone()).collect(),
                severity: members.iter().map(|m| m.severity).max().expect("class is non-empty"),
                members,
                verdict: Verdict::Unverified,
            });
        }
    }

    out.findings.sort_by(|a, b| {
        (&a.category, a.first_location(), &a.id).cmp(&(&b.category, b.first_location(), &b.id))
    });
    // Byte-identical member lists hash alike; suffix repeats in output order.
    let mut ids: Vec<&FindingId> = out.findings.iter().map(|f| &f.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        let mut seen: BTreeMap<FindingId, usize> = BTreeMap::new();
        for finding in &mut out.findings {
            let count = seen.entry(finding.id.clone()).or_insert(0);
            *count += 1;
            if *count > 1 {
                finding.id = FindingId::from(format!("{}-{}", finding.id, count));
            }
        }
    }
    out.residue.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolReduction {
    pub category_count: usize,
    /// `(category_count - prioritized) / category_count`; absent when the
    /// tool reported no categories.
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReductionStats {
    pub per_tool: BTreeMap<ToolId, ToolReduction>,
    pub prioritized_count: usize,
}

pub fn reduction_from_counts(counts: &BTreeMap<ToolId, usize>, prioritized_count: usize) -> ReductionStats {
    let per_tool = counts
        .iter()
        .map(|(tool, &count)| {
            let reduction = (count > 0).then(|| (count as f64 - prioritized_count as f64) / count as f64);
            (
                tool.clone(),
                ToolReduction {
                    category_count: count,
                    reduction,
                },
            )
        })
        .collect();
    ReductionStats {
        per_tool,
        prioritized_count,
    }
}

/// Warning reduction of the prioritized list relative to each standalone
/// tool, measured in distinct canonical categories.
pub fn reduction_stats(per_tool: &CategorySets, prioritized: &BTreeSet<CategoryId>) -> ReductionStats {
    let counts = per_tool.iter().map(|(tool, cats)| (tool.clone(), cats.len())).collect();
    reduction_from_counts(&counts, prioritized.len())
}
