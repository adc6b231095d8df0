//! Vulnerability-to-asset mapping and prioritization.
//!
//! A finding's priority is
//!
//! ```text
//! severity_weight(severity) * sum over impacted assets of
//!     criticality * max(family_weight(f) for f in asset.families)
//! ```
//!
//! which is linear in every weight, so uniform positive rescaling never
//! changes the ranked order.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{
    Asset, AssetFamily, AssetId, AssetState, CategoryId, ConsolidatedFinding, FamilySet, FindingId, Provenance,
    Severity, Taxonomy, ThreatClass, Verdict,
};
use crate::error::{Error, Result};

const SHIPPED_RULES: &str = include_str!("../data/impact_rules.toml");
const SHIPPED_WEIGHTS: &str = include_str!("../data/weights.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssetSelector {
    ByFamily(FamilySet),
    /// Case-insensitive glob over the asset name; `*` matches any run.
    ByNamePattern(String),
    ByProvenance(Provenance),
}

impl AssetSelector {
    pub fn selects(&self, asset: &Asset) -> bool {
        match self {
            AssetSelector::ByFamily(families) => asset.families.intersects(families),
            AssetSelector::ByNamePattern(pattern) => glob_match(&pattern.to_lowercase(), &asset.name.to_lowercase()),
            AssetSelector::ByProvenance(provenance) => asset.provenance == *provenance,
        }
    }
}

fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for middle in &parts[1..parts.len() - 1] {
        match rest.find(middle) {
            Some(at) => rest = &rest[at + middle.len()..],
            None => return false,
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactRule {
    pub id: String,
    pub category: CategoryId,
    pub selector: AssetSelector,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpactRules {
    pub version: String,
    #[serde(rename = "rule", default)]
    pub rules: Vec<ImpactRule>,
}

impl ImpactRules {
    pub fn load(text: &str, taxonomy: &Taxonomy) -> Result<Self> {
        let rules: ImpactRules = toml::from_str(text).map_err(|e| Error::data("impact rules", e))?;
        rules.check(taxonomy)?;
        Ok(rules)
    }

    pub fn shipped(taxonomy: &Taxonomy) -> Result<Self> {
        Self::load(SHIPPED_RULES, taxonomy)
    }

    pub fn check(&self, taxonomy: &Taxonomy) -> Result<()> {
        let mut ids = BTreeSet::new();
        for rule in &self.rules {
            if rule.id.trim().is_empty() || !ids.insert(rule.id.as_str()) {
                return Err(Error::data("impact rules", format!("missing or duplicate rule id `{}`", rule.id)));
            }
            if !taxonomy.contains(&rule.category) {
                return Err(Error::data(
                    "impact rules",
                    format!("rule `{}` targets unknown category `{}`", rule.id, rule.category),
                ));
            }
            let well_formed = match &rule.selector {
                AssetSelector::ByFamily(f) => !f.is_unclassified(),
                AssetSelector::ByNamePattern(p) => !p.trim().is_empty(),
                AssetSelector::ByProvenance(_) => true,
            };
            if !well_formed {
                return Err(Error::data("impact rules", format!("rule `{}` has an empty selector", rule.id)));
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> BTreeSet<&CategoryId> {
        self.rules.iter().map(|r| &r.category).collect()
    }

    pub fn covers(&self, category: &CategoryId) -> bool {
        self.rules.iter().any(|r| &r.category == category)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetImpact {
    pub finding_id: FindingId,
    pub asset_id: AssetId,
    pub rule_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    pub impacts: Vec<AssetImpact>,
    /// No impact rule exists for the finding's category.
    pub unmapped: bool,
}

/// One impact per accepted asset selected by any rule for the finding's
/// category; the first rule in file order is credited.
pub fn map_to_assets(finding: &ConsolidatedFinding, assets: &[Asset], rules: &ImpactRules) -> Mapping {
    let applicable: Vec<&ImpactRule> = rules.rules.iter().filter(|r| r.category == finding.category).collect();
    if applicable.is_empty() {
        return Mapping {
            impacts: Vec::new(),
            unmapped: true,
        };
    }
    let mut impacts = Vec::new();
    let mut hit = BTreeSet::new();
    for rule in applicable {
        for asset in assets.iter().filter(|a| a.state == AssetState::Accepted) {
            if rule.selector.selects(asset) && hit.insert(&asset.id) {
                impacts.push(AssetImpact {
                    finding_id: finding.id.clone(),
                    asset_id: asset.id.clone(),
                    rule_id: rule.id.clone(),
                });
            }
        }
    }
    impacts.sort();
    Mapping {
        impacts,
        unmapped: false,
    }
}

pub fn assign_threat_class(finding: &ConsolidatedFinding, taxonomy: &Taxonomy) -> Option<ThreatClass> {
    taxonomy.get(&finding.category).map(|c| c.threat_class)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityWeights {
    pub critical: f64,
    pub high: f64,
    pub medium: f64,
    pub info: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyWeights {
    pub user: f64,
    pub application: f64,
    pub platform: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityWeights {
    #[serde(default = "default_weights_version")]
    pub version: String,
    pub severity: SeverityWeights,
    pub family: FamilyWeights,
}

fn default_weights_version() -> String {
    "custom".into()
}

impl Default for PriorityWeights {
    fn default() -> Self {
        PriorityWeights {
            version: "default".into(),
            severity: SeverityWeights {
                critical: 4.0,
                high: 3.0,
                medium: 2.0,
                info: 1.0,
            },
            family: FamilyWeights {
                user: 1.0,
                application: 1.0,
                platform: 1.0,
            },
        }
    }
}

impl PriorityWeights {
    pub fn load(text: &str) -> Result<Self> {
        let weights: PriorityWeights = toml::from_str(text).map_err(|e| Error::data("weights", e))?;
        weights.check().map_err(|reason| Error::data("weights", reason))?;
        Ok(weights)
    }

    pub fn shipped() -> Self {
        Self::load(SHIPPED_WEIGHTS).expect("shipped weights are valid")
    }

    pub fn check(&self) -> Result<(), String> {
        let all = [
            self.severity.critical,
            self.severity.high,
            self.severity.medium,
            self.severity.info,
            self.family.user,
            self.family.application,
            self.family.platform,
        ];
        if all.iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err("every weight must be a finite number > 0".into())
        }
    }

    pub fn severity_weight(&self, severity: Severity) -> f64 {
        match severity {
            Severity::Critical => self.severity.critical,
            Severity::High => self.severity.high,
            Severity::Medium => self.severity.medium,
            Severity::Info => self.severity.info,
        }
    }

    pub fn family_weight(&self, family: AssetFamily) -> f64 {
        match family {
            AssetFamily::User => self.family.user,
            AssetFamily::Application => self.family.application,
            AssetFamily::Platform => self.family.platform,
        }
    }

    pub fn scaled_severity(&self, factor: f64) -> Self {
        let mut w = self.clone();
        w.severity.critical *= factor;
        w.severity.high *= factor;
        w.severity.medium *= factor;
        w.severity.info *= factor;
        w
    }

    pub fn scaled_family(&self, factor: f64) -> Self {
        let mut w = self.clone();
        w.family.user *= factor;
        w.family.application *= factor;
        w.family.platform *= factor;
        w
    }
}

pub fn priority_score(finding: &ConsolidatedFinding, impacts: &[AssetImpact], assets: &[Asset], weights: &PriorityWeights) -> f64 {
    let by_id: BTreeMap<&AssetId, &Asset> = assets.iter().map(|a| (&a.id, a)).collect();
    let impacted: BTreeSet<&AssetId> = impacts
        .iter()
        .filter(|i| i.finding_id == finding.id)
        .map(|i| &i.asset_id)
        .collect();
    let total: f64 = impacted
        .into_iter()
        .filter_map(|id| by_id.get(id))
        .map(|asset| {
            let family = asset
                .families
                .iter()
                .map(|f| weights.family_weight(f))
                .fold(0.0, f64::max);
            f64::from(asset.criticality.get()) * family
        })
        // `Sum` for floats starts at -0.0; unimpacted findings score +0.0.
        .fold(0.0, |acc, x| acc + x);
    weights.severity_weight(finding.severity) * total
}

/// Relative tolerance under which two scores count as tied. Scores are
/// products of float weights, so rescaling can perturb exact ties by an ulp.
const TIE_TOLERANCE: f64 = 1e-9;

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

fn tie_break(a: &ConsolidatedFinding, b: &ConsolidatedFinding) -> Ordering {
    b.support
        .len()
        .cmp(&a.support.len())
        .then_with(|| a.category.cmp(&b.category))
        .then_with(|| a.id.cmp(&b.id))
}

/// Descending by score; tied scores order by support size (descending),
/// then category id, then finding id. False positives are dropped.
pub fn rank<'a>(scored: Vec<(&'a ConsolidatedFinding, f64)>) -> Vec<(&'a ConsolidatedFinding, f64)> {
    let mut kept: Vec<_> = scored
        .into_iter()
        .filter(|(f, _)| f.verdict != Verdict::FalsePositive)
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| tie_break(a.0, b.0)));

    // Regroup runs of near-equal scores and order each run by the tie rule.
    let mut start = 0;
    while start < kept.len() {
        let head = kept[start].1;
        let mut end = start + 1;
        while end < kept.len() && tied(head, kept[end].1) {
            end += 1;
        }
        kept[start..end].sort_by(|a, b| tie_break(a.0, b.0));
        start = end;
    }
    kept
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub finding_id: FindingId,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Prioritization {
    pub impacts: Vec<AssetImpact>,
    pub unmapped: Vec<FindingId>,
    pub ranked: Vec<RankedEntry>,
}

/// Full map, score and rank pass over the current state.
pub fn prioritize(
    findings: &[ConsolidatedFinding],
    assets: &[Asset],
    rules: &ImpactRules,
    weights: &PriorityWeights,
) -> Prioritization {
    let mut out = Prioritization::default();
    let mut scored = Vec::with_capacity(findings.len());
    for finding in findings {
        if finding.verdict == Verdict::FalsePositive {
            continue;
        }
        let mapping = map_to_assets(finding, assets, rules);
        if mapping.unmapped {
            out.unmapped.push(finding.id.clone());
        }
        let score = priority_score(finding, &mapping.impacts, assets, weights);
        scored.push((finding, score));
        out.impacts.extend(mapping.impacts);
    }
    out.ranked = rank(scored)
        .into_iter()
        .map(|(f, score)| RankedEntry {
            finding_id: f.id.clone(),
            score,
        })
        .collect();
    out.impacts.sort();
    out
}
