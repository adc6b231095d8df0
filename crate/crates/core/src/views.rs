//! Read-only projections of a session for the HTTP service and UI.

use serde::{Deserialize, Serialize};

use crate::assets::Evidence;
use crate::domain::{Asset, AssetState, FindingId, Verdict};
use crate::mitigation::{lookup, Mitigation};
use crate::report::{build_report, SecurityReport, VulnerabilityRow};
use crate::session::TriageSession;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetView {
    #[serde(flatten)]
    pub asset: Asset,
    pub evidence: Vec<Evidence>,
    pub needs_review: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetsView {
    pub assets: Vec<AssetView>,
    pub accepted: usize,
    pub rejected: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFindingView {
    pub rank: usize,
    #[serde(flatten)]
    pub row: VulnerabilityRow,
    pub mitigations: Vec<Mitigation>,
    pub no_mitigation_known: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedView {
    pub findings: Vec<RankedFindingView>,
    /// Ranked findings with no impact on an accepted asset, either because
    /// no rule covers the category or no matching asset is accepted yet.
    pub needs_review: Vec<FindingId>,
    pub false_positives: Vec<FindingId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionViews {
    pub assets: AssetsView,
    pub ranked: RankedView,
    pub report: SecurityReport,
}

pub fn assets_view(session: &TriageSession) -> AssetsView {
    let count = |state| session.assets.iter().filter(|c| c.asset.state == state).count();
    AssetsView {
        assets: session
            .assets
            .iter()
            .map(|c| AssetView {
                asset: c.asset.clone(),
                evidence: c.evidence.clone(),
                needs_review: c.needs_review,
            })
            .collect(),
        accepted: count(AssetState::Accepted),
        rejected: count(AssetState::Rejected),
        candidates: count(AssetState::Candidate),
    }
}

/// The ranked list in rank order, with impacts and mitigations attached.
pub fn ranked_view(session: &TriageSession) -> RankedView {
    let kb = &session.config.data.kb;
    let report = build_report(session);
    let mut rows: std::collections::BTreeMap<FindingId, VulnerabilityRow> = report
        .vulnerabilities
        .into_iter()
        .chain(report.pending_verification)
        .map(|r| (r.finding_id.clone(), r))
        .collect();
    let findings = session
        .prioritization
        .ranked
        .iter()
        .filter_map(|entry| rows.remove(&entry.finding_id))
        .enumerate()
        .map(|(i, row)| {
            let mitigations: Vec<Mitigation> = lookup(&row.category, kb).into_iter().cloned().collect();
            RankedFindingView {
                rank: i + 1,
                no_mitigation_known: mitigations.is_empty(),
                mitigations,
                row,
            }
        })
        .collect();
    RankedView {
        findings,
        needs_review: session
            .prioritization
            .ranked
            .iter()
            .filter(|entry| !session.prioritization.impacts.iter().any(|i| i.finding_id == entry.finding_id))
            .map(|entry| entry.finding_id.clone())
            .collect(),
        false_positives: session
            .findings
            .iter()
            .filter(|f| f.verdict == Verdict::FalsePositive)
            .map(|f| f.id.clone())
            .collect(),
    }
}

pub fn snapshot_views(session: &TriageSession) -> SessionViews {
    SessionViews {
        assets: assets_view(session),
        ranked: ranked_view(session),
        report: build_report(session),
    }
}
