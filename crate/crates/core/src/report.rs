//! Security reports and cross-app corpus statistics.
//!
//! A report has three columns: accepted assets grouped by family, the ranked
//! vulnerability-to-asset map, and mitigations per ranked finding. Column 2
//! holds verified findings only; findings still awaiting a verdict are
//! listed in a separate appendix along with unmapped findings, sub-threshold
//! residue and quarantined raw findings, so nothing is dropped silently.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{
    AssetFamily, AssetId, CategoryId, ConsolidatedFinding, Criticality, FamilySet, FindingId, NormalizedFinding,
    Provenance, Severity, ThreatClass, ToolId, Verdict,
};
use crate::error::{Error, Result};
use crate::ingest::{qualify_permission, RawFinding};
use crate::mitigation::{lookup, Mitigation};
use crate::reconcile::{reduction_stats, MatchGranularity, ReductionStats};
use crate::session::TriageSession;
use crate::validate::validate_session;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const NO_PRIORITIZED: &str = "no prioritized vulnerabilities";
pub const NO_MITIGATION: &str = "no mitigation known";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" | "machine" | "machine-readable" => Ok(ReportFormat::Json),
            "markdown" | "md" | "human" | "human-readable" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}` (expected json or markdown)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppMeta {
    pub app_id: String,
    pub display_name: String,
    pub domain_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package: Option<String>,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub threshold: usize,
    pub granularity: MatchGranularity,
    pub taxonomy_version: String,
    pub lexicon_version: String,
    pub catalog_version: String,
    pub category_map_version: String,
    pub rules_version: String,
    pub weights_version: String,
    pub kb_version: String,
    pub kb_edition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRow {
    pub id: AssetId,
    pub name: String,
    pub families: FamilySet,
    pub provenance: Provenance,
    pub criticality: Criticality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetColumn {
    pub user: Vec<AssetRow>,
    pub application: Vec<AssetRow>,
    pub platform: Vec<AssetRow>,
}

impl AssetColumn {
    pub fn group(&self, family: AssetFamily) -> &[AssetRow] {
        match family {
            AssetFamily::User => &self.user,
            AssetFamily::Application => &self.application,
            AssetFamily::Platform => &self.platform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub asset_id: AssetId,
    pub asset_name: String,
    pub rule_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityRow {
    pub finding_id: FindingId,
    pub category: CategoryId,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threat_class: Option<ThreatClass>,
    pub severity: Severity,
    pub support: Vec<ToolId>,
    pub locations: Vec<String>,
    pub verdict: Verdict,
    pub score: f64,
    pub impacts: Vec<ImpactRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitigationRow {
    pub finding_id: FindingId,
    pub category: CategoryId,
    /// Empty means no mitigation is known for the category.
    pub mitigations: Vec<Mitigation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmappedRow {
    pub finding_id: FindingId,
    pub category: CategoryId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineRow {
    pub tool: ToolId,
    pub finding: RawFinding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub schema_version: u32,
    pub app: AppMeta,
    pub config: ReportConfig,
    pub assets: AssetColumn,
    pub vulnerabilities: Vec<VulnerabilityRow>,
    pub mitigations: Vec<MitigationRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub pending_verification: Vec<VulnerabilityRow>,
    pub unmapped: Vec<UnmappedRow>,
    pub residue: Vec<NormalizedFinding>,
    pub quarantined: Vec<QuarantineRow>,
    pub reduction: ReductionStats,
}

fn vulnerability_row(session: &TriageSession, finding: &ConsolidatedFinding, score: f64) -> VulnerabilityRow {
    let category = session.taxonomy().get(&finding.category);
    let impacts = session
        .prioritization
        .impacts
        .iter()
        .filter(|i| i.finding_id == finding.id)
        .map(|i| ImpactRow {
            asset_id: i.asset_id.clone(),
            asset_name: session
                .asset(&i.asset_id)
                .map(|c| c.asset.name.clone())
                .unwrap_or_default(),
            rule_id: i.rule_id.clone(),
        })
        .collect();
    VulnerabilityRow {
        finding_id: finding.id.clone(),
        category: finding.category.clone(),
        display_name: category.map_or_else(|| finding.category.to_string(), |c| c.display_name.clone()),
        threat_class: category.map(|c| c.threat_class),
        severity: finding.severity,
        support: finding.support.iter().cloned().collect(),
        locations: finding.locations.iter().map(|l| l.to_string()).collect(),
        verdict: finding.verdict,
        score,
        impacts,
    }
}

/// Builds the report without validating the session first.
pub fn build_report(session: &TriageSession) -> SecurityReport {
    let data = &session.config.data;
    let row = |asset: &crate::domain::Asset| AssetRow {
        id: asset.id.clone(),
        name: asset.name.clone(),
        families: asset.families.clone(),
        provenance: asset.provenance,
        criticality: asset.criticality,
    };
    let in_family = |family: AssetFamily| -> Vec<AssetRow> {
        session
            .accepted_assets()
            .filter(|a| a.families.contains(family))
            .map(row)
            .collect()
    };

    let mut vulnerabilities = Vec::new();
    let mut pending = Vec::new();
    for entry in &session.prioritization.ranked {
        let Some(finding) = session.finding(&entry.finding_id) else {
            continue;
        };
        let row = vulnerability_row(session, finding, entry.score);
        if finding.verdict == Verdict::Verified {
            vulnerabilities.push(row);
        } else {
            pending.push(row);
        }
    }
    let mitigations = vulnerabilities
        .iter()
        .map(|v| MitigationRow {
            finding_id: v.finding_id.clone(),
            category: v.category.clone(),
            mitigations: lookup(&v.category, &data.kb).into_iter().cloned().collect(),
        })
        .collect();
    let unmapped = session
        .prioritization
        .unmapped
        .iter()
        .filter_map(|id| session.finding(id))
        .map(|f| UnmappedRow {
            finding_id: f.id.clone(),
            category: f.category.clone(),
        })
        .collect();
    let quarantined = session
        .reports
        .iter()
        .flat_map(|r| {
            r.quarantined.iter().map(|raw| QuarantineRow {
                tool: r.report.tool.clone(),
                finding: raw.clone(),
            })
        })
        .collect();
    let prioritized: BTreeSet<CategoryId> = vulnerabilities.iter().map(|v| v.category.clone()).collect();

    SecurityReport {
        schema_version: REPORT_SCHEMA_VERSION,
        app: AppMeta {
            app_id: session.profile.app_id.clone(),
            display_name: session.profile.display_name.clone(),
            domain_tag: session.profile.domain_tag.clone(),
            package: session.manifest.as_ref().map(|m| m.package.clone()),
            session_id: session.id.clone(),
        },
        config: ReportConfig {
            threshold: session.config.threshold,
            granularity: session.config.granularity,
            taxonomy_version: data.taxonomy.version.clone(),
            lexicon_version: data.lexicon.version.clone(),
            catalog_version: data.catalog.version.clone(),
            category_map_version: data.category_map.version.clone(),
            rules_version: data.rules.version.clone(),
            weights_version: data.weights.version.clone(),
            kb_version: data.kb.version.clone(),
            kb_edition: data.kb.edition.clone(),
        },
        assets: AssetColumn {
            user: in_family(AssetFamily::User),
            application: in_family(AssetFamily::Application),
            platform: in_family(AssetFamily::Platform),
        },
        note: vulnerabilities.is_empty().then(|| NO_PRIORITIZED.to_string()),
        vulnerabilities,
        mitigations,
        pending_verification: pending,
        unmapped,
        residue: session.residue.clone(),
        quarantined,
        reduction: reduction_stats(&session.category_sets(), &prioritized),
    }
}

/// Validates the session and renders its report. Output bytes depend only
/// on session content.
pub fn render_report(session: &TriageSession, format: ReportFormat) -> Result<Vec<u8>> {
    let violations = validate_session(session);
    if !violations.is_empty() {
        return Err(Error::InvalidSession(violations));
    }
    let report = build_report(session);
    Ok(match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
            bytes.push(b'\n');
            bytes
        }
        ReportFormat::Markdown => render_markdown(&report).into_bytes(),
    })
}

fn cell(text: &str) -> String {
    text.replace('|', "\\|")
}

fn vulnerability_table(out: &mut String, rows: &[VulnerabilityRow]) {
    out.push_str("| # | Vulnerability | Threat class | Severity | Support | Score | Impacted assets | Locations |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for (i, v) in rows.iter().enumerate() {
        let support: Vec<&str> = v.support.iter().map(ToolId::as_str).collect();
        let impacts: Vec<&str> = v.impacts.iter().map(|i| i.asset_name.as_str()).collect();
        let _ = writeln!(
            out,
            "| {} | {} (`{}`) | {} | {} | {} | {:.3} | {} | {} |",
            i + 1,
            cell(&v.display_name),
            v.category,
            v.threat_class.map_or("-", ThreatClass::as_str),
            v.severity.as_str(),
            support.join(", "),
            v.score,
            if impacts.is_empty() { "-".to_string() } else { cell(&impacts.join(", ")) },
            cell(&v.locations.join("; ")),
        );
    }
}

pub fn render_markdown(report: &SecurityReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Security report: {}", report.app.display_name);
    out.push('\n');
    let _ = writeln!(out, "- App id: `{}`", report.app.app_id);
    if let Some(package) = &report.app.package {
        let _ = writeln!(out, "- Package: `{package}`");
    }
    let _ = writeln!(out, "- Domain: {}", report.app.domain_tag);
    let _ = writeln!(out, "- Session: `{}`", report.app.session_id);
    let c = &report.config;
    let _ = writeln!(
        out,
        "- Consolidation: at least {} tool(s), {} granularity",
        c.threshold, c.granularity
    );
    let _ = writeln!(
        out,
        "- Data: taxonomy {}, lexicon {}, permissions {}, category map {}, impact rules {}, weights {}, knowledge base {} ({})",
        c.taxonomy_version,
        c.lexicon_version,
        c.catalog_version,
        c.category_map_version,
        c.rules_version,
        c.weights_version,
        c.kb_version,
        c.kb_edition
    );

    out.push_str("\n## 1. Assets\n");
    for family in AssetFamily::ALL {
        let _ = writeln!(out, "\n### {} assets\n", family.label());
        let rows = report.assets.group(family);
        if rows.is_empty() {
            out.push_str("_none accepted_\n");
        }
        for a in rows {
            let _ = writeln!(
                out,
                "- {} (criticality {}, {}, {})",
                a.name,
                a.criticality.get(),
                a.families,
                a.provenance.as_str()
            );
        }
    }

    out.push_str("\n## 2. Vulnerability-to-asset map\n\n");
    match &report.note {
        Some(note) if report.vulnerabilities.is_empty() => {
            let _ = writeln!(out, "_{note}_");
        }
        _ => vulnerability_table(&mut out, &report.vulnerabilities),
    }

    out.push_str("\n## 3. Mitigations\n");
    if report.mitigations.is_empty() {
        out.push_str("\n_none_\n");
    }
    for (i, row) in report.mitigations.iter().enumerate() {
        let _ = writeln!(out, "\n### {}. `{}` ({})\n", i + 1, row.category, row.finding_id);
        if row.mitigations.is_empty() {
            let _ = writeln!(out, "_{NO_MITIGATION}_");
        }
        for m in &row.mitigations {
            let _ = writeln!(out, "- **{}** {}: {} _({})_", m.masvs_id, m.title, m.summary, m.guideline_ref);
        }
    }

    out.push_str("\n## Warning reduction\n\n");
    let _ = writeln!(out, "Prioritized categories: {}\n", report.reduction.prioritized_count);
    out.push_str("| Tool | Categories reported | Reduction |\n|---|---|---|\n");
    for (tool, r) in &report.reduction.per_tool {
        let reduction = r.reduction.map_or("n/a".to_string(), |x| format!("{:.1}%", x * 100.0));
        let _ = writeln!(out, "| {} | {} | {} |", tool, r.category_count, reduction);
    }

    out.push_str("\n## Appendix A: pending verification\n\n");
    if report.pending_verification.is_empty() {
        out.push_str("_none_\n");
    } else {
        vulnerability_table(&mut out, &report.pending_verification);
    }

    out.push_str("\n## Appendix B: unmapped findings (needs review)\n\n");
    if report.unmapped.is_empty() {
        out.push_str("_none_\n");
    }
    for u in &report.unmapped {
        let _ = writeln!(out, "- `{}` {}", u.category, u.finding_id);
    }

    out.push_str("\n## Appendix C: below consolidation threshold\n\n");
    if report.residue.is_empty() {
        out.push_str("_none_\n");
    }
    for f in &report.residue {
        let _ = writeln!(
            out,
            "- {} `{}` at {} ({}, {})",
            f.tool,
            f.category,
            f.location,
            f.native_id,
            f.severity.as_str()
        );
    }

    out.push_str("\n## Appendix D: quarantined raw findings\n\n");
    if report.quarantined.is_empty() {
        out.push_str("_none_\n");
    }
    for q in &report.quarantined {
        let _ = writeln!(
            out,
            "- {} `{}`: {}",
            q.tool,
            q.finding.native_id,
            cell(&q.finding.message)
        );
    }
    out
}

/// Which findings count towards "affected".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffectedBasis {
    /// Consolidated findings not marked false positive.
    #[default]
    PostTriage,
    /// Every consolidated finding, regardless of verdict.
    PreTriage,
}

/// Raw tallies. `merge` is associative and commutative, so per-session
/// counts can be combined in any grouping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub total_apps: usize,
    pub categories: BTreeMap<CategoryId, usize>,
    pub permissions: BTreeMap<String, usize>,
}

impl CorpusCounts {
    pub fn of_session(session: &TriageSession, basis: AffectedBasis) -> Self {
        let categories: BTreeSet<CategoryId> = session
            .findings
            .iter()
            .filter(|f| basis == AffectedBasis::PreTriage || f.verdict != Verdict::FalsePositive)
            .map(|f| f.category.clone())
            .collect();
        let permissions: BTreeSet<String> = session
            .manifest
            .iter()
            .flat_map(|m| m.permissions.iter().map(|p| qualify_permission(p)))
            .collect();
        CorpusCounts {
            total_apps: 1,
            categories: categories.into_iter().map(|c| (c, 1)).collect(),
            permissions: permissions.into_iter().map(|p| (p, 1)).collect(),
        }
    }

    pub fn merge(mut self, other: CorpusCounts) -> Self {
        self.total_apps += other.total_apps;
        for (k, v) in other.categories {
            *self.categories.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.permissions {
            *self.permissions.entry(k).or_insert(0) += v;
        }
        self
    }

    pub fn finish(&self) -> Result<CorpusStats> {
        if self.total_apps == 0 {
            return Err(Error::EmptyCorpus);
        }
        let share = |affected: usize| Share {
            affected,
            percentage: percent_half_up(affected, self.total_apps),
        };
        Ok(CorpusStats {
            total_apps: self.total_apps,
            categories: self.categories.iter().map(|(k, v)| (k.clone(), share(*v))).collect(),
            permissions: self.permissions.iter().map(|(k, v)| (k.clone(), share(*v))).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub affected: usize,
    pub percentage: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_apps: usize,
    pub categories: BTreeMap<CategoryId, Share>,
    pub permissions: BTreeMap<String, Share>,
}

/// `round(100 * part / total)` with halves rounded up, in integer
/// arithmetic.
pub fn percent_half_up(part: usize, total: usize) -> u32 {
    assert!(total > 0, "percentage of an empty total");
    let (part, total) = (part as u128, total as u128);
    ((200 * part + total) / (2 * total)) as u32
}

pub fn corpus_stats(sessions: &[TriageSession]) -> Result<CorpusStats> {
    corpus_stats_with(sessions, AffectedBasis::PostTriage)
}

pub fn corpus_stats_with(sessions: &[TriageSession], basis: AffectedBasis) -> Result<CorpusStats> {
    if sessions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    sessions
        .iter()
        .map(|s| CorpusCounts::of_session(s, basis))
        .fold(CorpusCounts::default(), CorpusCounts::merge)
        .finish()
}

impl CorpusStats {
    pub fn render_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Corpus statistics ({} apps)\n", self.total_apps);
        out.push_str("| Category | Apps | Percent |\n|---|---|---|\n");
        let mut categories: Vec<_> = self.categories.iter().collect();
        categories.sort_by(|a, b| b.1.affected.cmp(&a.1.affected).then_with(|| a.0.cmp(b.0)));
        for (category, share) in categories {
            let _ = writeln!(out, "| {} | {} | {}% |", category, share.affected, share.percentage);
        }
        out.push_str("\n| Permission | Apps | Percent |\n|---|---|---|\n");
        let mut permissions: Vec<_> = self.permissions.iter().collect();
        permissions.sort_by(|a, b| b.1.affected.cmp(&a.1.affected).then_with(|| a.0.cmp(b.0)));
        for (permission, share) in permissions {
            let _ = writeln!(out, "| {} | {} | {}% |", permission, share.affected, share.percentage);
        }
        out
    }
}
