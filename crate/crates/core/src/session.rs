//! Triage sessions: the event-sourced record of one app's pass through asset
//! identification, reconciliation and prioritization.
//!
//! A session is built once by [`create_session`] and then only changes
//! through [`apply_event`], which appends to the log and recomputes every
//! derived field from scratch. [`replay`] over the creation output
//! reproduces the current state exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assets::{
    extract_asset_candidates, merge_candidates, permissions_to_assets, AssetLexicon, CandidateAsset,
    PermissionCatalog,
};
use crate::domain::{
    Asset, AssetFamily, AssetId, AssetState, CategoryId, CategorySets, ConsolidatedFinding, Criticality,
    FamilySet, FindingId, NormalizedFinding, Provenance, Taxonomy, ToolId, Verdict,
};
use crate::error::{Error, Result};
use crate::ingest::{parse_tool_report, AppProfile, ManifestInfo, RawFinding, ToolReport};
use crate::mapping::{prioritize, ImpactRules, Prioritization, PriorityWeights};
use crate::mitigation::MitigationKb;
use crate::reconcile::{consolidate, normalize_findings, CategoryMap, MatchGranularity, ToolFindings};

pub const SESSION_SCHEMA: &str = "sourcerer-session";
pub const SESSION_SCHEMA_VERSION: u32 = 1;

/// Every data file the pipeline reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBundle {
    pub taxonomy: Taxonomy,
    pub lexicon: AssetLexicon,
    pub catalog: PermissionCatalog,
    pub category_map: CategoryMap,
    pub rules: ImpactRules,
    pub weights: PriorityWeights,
    pub kb: MitigationKb,
}

impl DataBundle {
    /// The shipped data files, with the lexicon covering every domain.
    pub fn shipped() -> Result<Self> {
        let taxonomy = Taxonomy::shipped();
        Ok(DataBundle {
            lexicon: AssetLexicon::shipped(),
            catalog: PermissionCatalog::shipped(),
            category_map: CategoryMap::shipped(&taxonomy)?,
            rules: ImpactRules::shipped(&taxonomy)?,
            weights: PriorityWeights::shipped(),
            kb: MitigationKb::shipped(&taxonomy)?,
            taxonomy,
        })
    }

    /// The shipped data files with the lexicon narrowed to `domain`.
    pub fn shipped_for(domain: &str) -> Result<Self> {
        let mut bundle = Self::shipped()?;
        bundle.lexicon = bundle.lexicon.for_domain(domain);
        Ok(bundle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub threshold: usize,
    pub granularity: MatchGranularity,
    /// Wall-clock phase timings make session bytes nondeterministic, so
    /// they are only recorded on request.
    #[serde(default)]
    pub record_timings: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            threshold: 2,
            granularity: MatchGranularity::Class,
            record_timings: false,
        }
    }
}

/// The configuration a session was created under. Carries full copies of
/// the data files so the pipeline can be re-run from the session alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub threshold: usize,
    pub granularity: MatchGranularity,
    pub data: DataBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub report: ToolReport,
    pub normalized: Vec<NormalizedFinding>,
    pub quarantined: Vec<RawFinding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub assets_ms: f64,
    pub reconcile_ms: f64,
    pub prioritize_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetDecision {
    Accepted,
    Rejected,
}

impl From<AssetDecision> for AssetState {
    fn from(d: AssetDecision) -> Self {
        match d {
            AssetDecision::Accepted => AssetState::Accepted,
            AssetDecision::Rejected => AssetState::Rejected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SessionEvent {
    AssetDecision {
        asset_id: AssetId,
        state: AssetDecision,
    },
    FindingVerdict {
        finding_id: FindingId,
        verdict: Verdict,
    },
    /// A developer-added asset; enters the session already accepted.
    ManualAsset {
        name: String,
        families: FamilySet,
        criticality: Criticality,
    },
    AssetCriticality {
        asset_id: AssetId,
        criticality: Criticality,
    },
    Note {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageSession {
    pub id: String,
    pub profile: AppProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestInfo>,
    pub reports: Vec<SessionReport>,
    pub assets: Vec<CandidateAsset>,
    pub findings: Vec<ConsolidatedFinding>,
    pub residue: Vec<NormalizedFinding>,
    pub prioritization: Prioritization,
    pub config: ConfigSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<PhaseTimings>,
    pub events: Vec<LoggedEvent>,
}

/// Raw pipeline inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionInputs {
    pub profile: AppProfile,
    pub manifest: Option<ManifestInfo>,
    pub reports: Vec<ToolReport>,
}

/// Parses each payload with its own adapter. The first failure is returned
/// and names its tool; other payloads are unaffected by it.
pub fn parse_reports(payloads: &[(ToolId, Vec<u8>)]) -> Result<Vec<ToolReport>> {
    payloads
        .iter()
        .map(|(tool, bytes)| parse_tool_report(tool, bytes))
        .collect()
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

fn session_id(inputs: &SessionInputs, config: &ConfigSnapshot) -> String {
    let mut hasher = Sha256::new();
    let parts = [
        serde_json::to_vec(&inputs.profile),
        serde_json::to_vec(&inputs.manifest),
        serde_json::to_vec(&inputs.reports),
        serde_json::to_vec(config),
    ];
    for part in parts {
        hasher.update(part.expect("session inputs serialize"));
        hasher.update([0u8]);
    }
    format!("s-{}", &hex::encode(hasher.finalize())[..16])
}

/// Runs all three phases. Every asset starts as a candidate, so the ranked
/// list scores zero until decisions arrive.
pub fn create_session(mut inputs: SessionInputs, config: SessionConfig, data: &DataBundle) -> Result<TriageSession> {
    if config.threshold == 0 {
        return Err(Error::ConfigInvalid("threshold must be at least 1".into()));
    }
    if !inputs.reports.is_empty() && config.threshold > inputs.reports.len() {
        return Err(Error::ConfigInvalid(format!(
            "threshold {} exceeds the {} supplied tool report(s)",
            config.threshold,
            inputs.reports.len()
        )));
    }
    data.weights.check().map_err(Error::ConfigInvalid)?;
    let mut tools = BTreeSet::new();
    for report in &inputs.reports {
        if !tools.insert(&report.tool) {
            return Err(Error::DuplicateTool(report.tool.clone()));
        }
    }

    // Reports are kept in tool order so the session does not depend on the
    // order they were supplied in.
    inputs.reports.sort_by(|a, b| a.tool.cmp(&b.tool));

    let snapshot = ConfigSnapshot {
        threshold: config.threshold,
        granularity: config.granularity,
        data: data.clone(),
    };
    let id = session_id(&inputs, &snapshot);

    let start = Instant::now();
    let described = extract_asset_candidates(&inputs.profile, &data.lexicon);
    let declared = inputs
        .manifest
        .as_ref()
        .map(|m| permissions_to_assets(m, &data.catalog))
        .unwrap_or_default();
    let assets = merge_candidates(described, declared, &data.lexicon);
    let assets_ms = elapsed_ms(start);

    let start = Instant::now();
    let reports: Vec<SessionReport> = inputs
        .reports
        .into_iter()
        .map(|report| {
            let n = normalize_findings(&report, &data.category_map, &data.taxonomy);
            SessionReport {
                report,
                normalized: n.findings,
                quarantined: n.quarantined,
            }
        })
        .collect();
    let groups: Vec<ToolFindings> = reports
        .iter()
        .map(|r| ToolFindings {
            tool: r.report.tool.clone(),
            findings: r.normalized.clone(),
        })
        .collect();
    let consolidation = consolidate(&groups, config.threshold, config.granularity)?;
    let reconcile_ms = elapsed_ms(start);

    let mut session = TriageSession {
        id,
        profile: inputs.profile,
        manifest: inputs.manifest,
        reports,
        assets,
        findings: consolidation.findings,
        residue: consolidation.residue,
        prioritization: Prioritization::default(),
        config: snapshot,
        timings: None,
        events: Vec::new(),
    };
    let start = Instant::now();
    recompute(&mut session);
    if config.record_timings {
        session.timings = Some(PhaseTimings {
            assets_ms,
            reconcile_ms,
            prioritize_ms: elapsed_ms(start),
        });
    }
    log::debug!(
        "session {}: {} asset candidates, {} consolidated findings, {} residue",
        session.id,
        session.assets.len(),
        session.findings.len(),
        session.residue.len()
    );
    Ok(session)
}

impl TriageSession {
    pub fn asset_list(&self) -> Vec<Asset> {
        self.assets.iter().map(|c| c.asset.clone()).collect()
    }

    pub fn accepted_assets(&self) -> impl Iterator<Item = &Asset> {
        self.assets
            .iter()
            .map(|c| &c.asset)
            .filter(|a| a.state == AssetState::Accepted)
    }

    pub fn tools(&self) -> BTreeSet<&ToolId> {
        self.reports.iter().map(|r| &r.report.tool).collect()
    }

    pub fn asset(&self, id: &AssetId) -> Option<&CandidateAsset> {
        self.assets.iter().find(|c| &c.asset.id == id)
    }

    pub fn finding(&self, id: &FindingId) -> Option<&ConsolidatedFinding> {
        self.findings.iter().find(|f| &f.id == id)
    }

    /// Resolves an asset by id, or failing that by a unique exact name.
    pub fn resolve_asset(&self, key: &str) -> Option<&AssetId> {
        if let Some(c) = self.assets.iter().find(|c| c.asset.id.as_str() == key) {
            return Some(&c.asset.id);
        }
        let mut named = self.assets.iter().filter(|c| c.asset.name == key);
        match (named.next(), named.next()) {
            (Some(c), None) => Some(&c.asset.id),
            _ => None,
        }
    }

    /// Distinct canonical categories each tool reported.
    pub fn category_sets(&self) -> CategorySets {
        self.reports
            .iter()
            .map(|r| {
                let categories: BTreeSet<CategoryId> = r.normalized.iter().map(|f| f.category.clone()).collect();
                (r.report.tool.clone(), categories)
            })
            .collect()
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.config.data.taxonomy
    }

    /// The prioritization recomputed from current state.
    pub fn derive_prioritization(&self) -> Prioritization {
        prioritize(
            &self.findings,
            &self.asset_list(),
            &self.config.data.rules,
            &self.config.data.weights,
        )
    }
}

fn recompute(session: &mut TriageSession) {
    session.prioritization = session.derive_prioritization();
}

fn asset_mut<'a>(session: &'a mut TriageSession, id: &AssetId) -> Result<&'a mut CandidateAsset> {
    session
        .assets
        .iter_mut()
        .find(|c| &c.asset.id == id)
        .ok_or_else(|| Error::UnknownEntity {
            kind: "asset",
            id: id.to_string(),
        })
}

fn mutate(session: &mut TriageSession, event: &SessionEvent) -> Result<()> {
    match event {
        SessionEvent::AssetDecision { asset_id, state } => {
            let candidate = asset_mut(session, asset_id)?;
            if *state == AssetDecision::Accepted && candidate.asset.families.is_unclassified() {
                return Err(Error::IllegalTransition(format!(
                    "asset `{}` is unclassified; assign families before accepting it",
                    candidate.asset.name
                )));
            }
            candidate.asset.state = (*state).into();
        }
        SessionEvent::FindingVerdict { finding_id, verdict } => {
            let finding = session
                .findings
                .iter_mut()
                .find(|f| &f.id == finding_id)
                .ok_or_else(|| Error::UnknownEntity {
                    kind: "finding",
                    id: finding_id.to_string(),
                })?;
            finding.verdict = *verdict;
        }
        SessionEvent::ManualAsset {
            name,
            families,
            criticality,
        } => {
            let name = name.trim();
            if name.is_empty() {
                return Err(Error::IllegalTransition("manual asset needs a name".into()));
            }
            if families.is_unclassified() {
                return Err(Error::IllegalTransition(format!("manual asset `{name}` needs at least one family")));
            }
            let mut asset = Asset::new(name, families.clone(), Provenance::Manual, *criticality);
            if session.asset(&asset.id).is_some() {
                return Err(Error::IllegalTransition(format!("manual asset `{name}` already exists")));
            }
            asset.state = AssetState::Accepted;
            session.assets.push(CandidateAsset {
                asset,
                evidence: Vec::new(),
                needs_review: false,
            });
            session.assets.sort_by(|a, b| (&a.asset.name, &a.asset.id).cmp(&(&b.asset.name, &b.asset.id)));
        }
        SessionEvent::AssetCriticality { asset_id, criticality } => {
            asset_mut(session, asset_id)?.asset.criticality = *criticality;
        }
        SessionEvent::Note { .. } => {}
    }
    Ok(())
}

/// Applies one event, appends it to the log and recomputes derived state.
/// On error `session` is returned untouched.
pub fn apply_event(session: &TriageSession, event: SessionEvent, at: DateTime<Utc>) -> Result<TriageSession> {
    let mut next = session.clone();
    mutate(&mut next, &event)?;
    recompute(&mut next);
    next.events.push(LoggedEvent { at, event });
    Ok(next)
}

/// Applies `events` in order on top of `base`.
pub fn replay(base: &TriageSession, events: &[LoggedEvent]) -> Result<TriageSession> {
    let mut state = base.clone();
    for logged in events {
        mutate(&mut state, &logged.event)?;
        state.events.push(logged.clone());
    }
    recompute(&mut state);
    Ok(state)
}

impl TriageSession {
    /// The raw inputs this session was created from.
    pub fn inputs(&self) -> SessionInputs {
        SessionInputs {
            profile: self.profile.clone(),
            manifest: self.manifest.clone(),
            reports: self.reports.iter().map(|r| r.report.clone()).collect(),
        }
    }

    /// Re-runs the full pipeline from the stored inputs and config snapshot,
    /// then replays the event log.
    pub fn rebuild(&self) -> Result<TriageSession> {
        let config = SessionConfig {
            threshold: self.config.threshold,
            granularity: self.config.granularity,
            record_timings: false,
        };
        let mut base = create_session(self.inputs(), config, &self.config.data)?;
        base.timings = self.timings;
        replay(&base, &self.events)
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    schema: String,
    schema_version: u32,
    checksum: String,
    session: serde_json::Value,
}

fn checksum(session: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(session).expect("json value serializes");
    format!("sha256:{}", hex::encode(Sha256::digest(canonical.as_bytes())))
}

pub fn save_session(session: &TriageSession) -> Vec<u8> {
    let value = serde_json::to_value(session).expect("session serializes");
    let envelope = Envelope {
        schema: SESSION_SCHEMA.into(),
        schema_version: SESSION_SCHEMA_VERSION,
        checksum: checksum(&value),
        session: value,
    };
    let mut bytes = serde_json::to_vec_pretty(&envelope).expect("envelope serializes");
    bytes.push(b'\n');
    bytes
}

pub fn load_session(bytes: &[u8]) -> Result<TriageSession> {
    let envelope: Envelope = serde_json::from_slice(bytes).map_err(|e| Error::CorruptSession(e.to_string()))?;
    if envelope.schema != SESSION_SCHEMA {
        return Err(Error::CorruptSession(format!("unexpected schema `{}`", envelope.schema)));
    }
    if envelope.schema_version != SESSION_SCHEMA_VERSION {
        return Err(Error::CorruptSession(format!(
            "schema version {} is not supported (expected {})",
            envelope.schema_version, SESSION_SCHEMA_VERSION
        )));
    }
    let actual = checksum(&envelope.session);
    if actual != envelope.checksum {
        return Err(Error::CorruptSession(format!(
            "checksum mismatch: recorded {}, computed {}",
            envelope.checksum, actual
        )));
    }
    serde_json::from_value(envelope.session).map_err(|e| Error::CorruptSession(e.to_string()))
}

/// Family groups for the asset column, in User, Application, Platform
/// order. Assets in several families appear in each.
pub fn group_by_family<'a>(assets: impl Iterator<Item = &'a Asset>) -> BTreeMap<AssetFamily, Vec<&'a Asset>> {
    let mut groups: BTreeMap<AssetFamily, Vec<&Asset>> = AssetFamily::ALL.iter().map(|f| (*f, Vec::new())).collect();
    for asset in assets {
        for family in asset.families.iter() {
            groups.entry(family).or_default().push(asset);
        }
    }
    groups
}
