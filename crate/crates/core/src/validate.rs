//! Structural checks over a whole session.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{Asset, AssetState, Provenance, Verdict};
use crate::session::{SessionEvent, TriageSession};

/// One broken invariant, naming the offending entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, entity: impl fmt::Display, message: impl Into<String>) {
        self.0.push(Violation {
            entity: entity.to_string(),
            message: message.into(),
        });
    }
}

/// Every invariant violation found in `session`; empty means valid.
pub fn validate_session(session: &TriageSession) -> Vec<Violation> {
    let mut out = Collector(Vec::new());
    let taxonomy = session.taxonomy();
    let threshold = session.config.threshold;

    if threshold == 0 {
        out.push("config", "threshold must be at least 1");
    }
    if let Err(reason) = session.config.data.weights.check() {
        out.push("config", reason);
    }

    let mut asset_ids = BTreeSet::new();
    for candidate in &session.assets {
        let asset = &candidate.asset;
        if !asset_ids.insert(&asset.id) {
            out.push(&asset.id, "duplicate asset id");
        }
        if asset.id != Asset::id_for(&asset.name, asset.provenance) {
            out.push(&asset.id, "id does not match name and provenance");
        }
        if asset.state == AssetState::Accepted && asset.families.is_unclassified() {
            out.push(&asset.id, "accepted asset has no family");
        }
        if asset.provenance != Provenance::Manual && candidate.evidence.is_empty() {
            out.push(&asset.id, "candidate asset carries no evidence");
        }
    }

    let mut tools = BTreeSet::new();
    let mut normalized_total = 0;
    for report in &session.reports {
        let tool = &report.report.tool;
        if !tools.insert(tool) {
            out.push(tool, "tool report supplied more than once");
        }
        if report.normalized.len() + report.quarantined.len() != report.report.raw_findings.len() {
            out.push(tool, "normalized plus quarantined findings do not add up to the raw count");
        }
        normalized_total += report.normalized.len();
        for finding in &report.normalized {
            if &finding.tool != tool {
                out.push(tool, format!("normalized finding attributed to `{}`", finding.tool));
            }
            if !taxonomy.contains(&finding.category) {
                out.push(tool, format!("category `{}` is not in the taxonomy", finding.category));
            }
            if !finding.location.is_well_formed() {
                out.push(tool, format!("finding `{}` has no file or class", finding.native_id));
            }
        }
    }

    let mut finding_ids = BTreeSet::new();
    let mut consolidated_members = 0;
    for finding in &session.findings {
        let id = &finding.id;
        if !finding_ids.insert(id) {
            out.push(id, "duplicate finding id");
        }
        if !taxonomy.contains(&finding.category) {
            out.push(id, format!("category `{}` is not in the taxonomy", finding.category));
        }
        if finding.members.is_empty() {
            out.push(id, "consolidated finding has no members");
            continue;
        }
        consolidated_members += finding.members.len();
        if finding.support.len() < threshold {
            out.push(
                id,
                format!("support {} is below threshold {}", finding.support.len(), threshold),
            );
        }
        if let Some(stray) = finding.support.iter().find(|t| !tools.contains(t)) {
            out.push(id, format!("supporting tool `{stray}` has no report in the session"));
        }
        let member_tools: BTreeSet<_> = finding.members.iter().map(|m| &m.tool).collect();
        if member_tools != finding.support.iter().collect() {
            out.push(id, "support differs from the member tools");
        }
        if finding.members.iter().any(|m| m.category != finding.category) {
            out.push(id, "member category differs from the finding category");
        }
        if finding.members.iter().map(|m| m.severity).max() != Some(finding.severity) {
            out.push(id, "severity is not the maximum member severity");
        }
        let member_locations: BTreeSet<_> = finding.members.iter().map(|m| &m.location).collect();
        if member_locations != finding.locations.iter().collect() {
            out.push(id, "locations differ from the member locations");
        }
    }
    if consolidated_members + session.residue.len() != normalized_total {
        out.push(
            "findings",
            format!(
                "{} consolidated members plus {} residue do not account for {} normalized findings",
                consolidated_members,
                session.residue.len(),
                normalized_total
            ),
        );
    }

    let assets: BTreeMap<_, _> = session.assets.iter().map(|c| (&c.asset.id, &c.asset)).collect();
    let findings: BTreeMap<_, _> = session.findings.iter().map(|f| (&f.id, f)).collect();
    let p = &session.prioritization;
    for impact in &p.impacts {
        let entity = format!("{}->{}", impact.finding_id, impact.asset_id);
        match findings.get(&impact.finding_id) {
            None => out.push(&entity, "impact references an unknown finding"),
            Some(f) if f.verdict == Verdict::FalsePositive => out.push(&entity, "impact on a false-positive finding"),
            Some(_) => {}
        }
        match assets.get(&impact.asset_id) {
            None => out.push(&entity, "impact references an unknown asset"),
            Some(a) if a.state != AssetState::Accepted => out.push(&entity, "impact on an asset that is not accepted"),
            Some(_) => {}
        }
    }
    for entry in &p.ranked {
        if !findings.contains_key(&entry.finding_id) {
            out.push(&entry.finding_id, "ranked entry references an unknown finding");
        }
    }
    if *p != session.derive_prioritization() {
        out.push("prioritization", "derived ranking differs from recomputation over current state");
    }

    for (index, logged) in session.events.iter().enumerate() {
        let entity = format!("event #{index}");
        match &logged.event {
            SessionEvent::AssetDecision { asset_id, .. } | SessionEvent::AssetCriticality { asset_id, .. } => {
                if !assets.contains_key(asset_id) {
                    out.push(&entity, format!("references unknown asset `{asset_id}`"));
                }
            }
            SessionEvent::FindingVerdict { finding_id, .. } => {
                if !findings.contains_key(finding_id) {
                    out.push(&entity, format!("references unknown finding `{finding_id}`"));
                }
            }
            SessionEvent::ManualAsset { .. } | SessionEvent::Note { .. } => {}
        }
    }

    out.0
}
