//! Asset identification: candidate assets from the store description and
//! the manifest's dangerous permissions, classified into asset families.
//!
//! Description matching is lexicon driven. A lexicon pattern is a sequence
//! of words matched case-insensitively against the whitespace-normalized
//! description; `*` matches any single word and a trailing `*` on a word
//! makes it a prefix (`payment*` matches `payments`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Asset, AssetFamily, Criticality, FamilySet, Provenance};
use crate::error::{Error, Result};
use crate::ingest::{normalize_whitespace, qualify_permission, AppProfile, ManifestInfo};

const SHIPPED_LEXICON: &str = include_str!("../data/lexicon.toml");
const SHIPPED_CATALOG: &str = include_str!("../data/permissions.toml");

/// Android's dangerous-level runtime permissions.
pub const ANDROID_DANGEROUS_PERMISSIONS: [&str; 30] = [
    "android.permission.READ_CALENDAR",
    "android.permission.WRITE_CALENDAR",
    "android.permission.CAMERA",
    "android.permission.READ_CONTACTS",
    "android.permission.WRITE_CONTACTS",
    "android.permission.GET_ACCOUNTS",
    "android.permission.ACCESS_FINE_LOCATION",
    "android.permission.ACCESS_COARSE_LOCATION",
    "android.permission.ACCESS_BACKGROUND_LOCATION",
    "android.permission.RECORD_AUDIO",
    "android.permission.READ_PHONE_STATE",
    "android.permission.READ_PHONE_NUMBERS",
    "android.permission.CALL_PHONE",
    "android.permission.ANSWER_PHONE_CALLS",
    "android.permission.READ_CALL_LOG",
    "android.permission.WRITE_CALL_LOG",
    "android.permission.ADD_VOICEMAIL",
    "android.permission.USE_SIP",
    "android.permission.PROCESS_OUTGOING_CALLS",
    "android.permission.BODY_SENSORS",
    "android.permission.ACTIVITY_RECOGNITION",
    "android.permission.SEND_SMS",
    "android.permission.RECEIVE_SMS",
    "android.permission.READ_SMS",
    "android.permission.RECEIVE_WAP_PUSH",
    "android.permission.RECEIVE_MMS",
    "android.permission.READ_EXTERNAL_STORAGE",
    "android.permission.WRITE_EXTERNAL_STORAGE",
    "android.permission.ACCESS_MEDIA_LOCATION",
    "android.permission.ACCEPT_HANDOVER",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub asset: String,
    pub patterns: Vec<String>,
    pub families: FamilySet,
    pub criticality: Criticality,
    /// Domain tags this entry applies to; empty means every domain.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub domains: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetLexicon {
    pub version: String,
    #[serde(rename = "entry", default)]
    pub entries: Vec<LexiconEntry>,
}

impl AssetLexicon {
    pub fn new(version: impl Into<String>, entries: Vec<LexiconEntry>) -> Result<Self> {
        let lexicon = AssetLexicon {
            version: version.into(),
            entries,
        };
        lexicon.check()?;
        Ok(lexicon)
    }

    pub fn load(text: &str) -> Result<Self> {
        let lexicon: AssetLexicon = toml::from_str(text).map_err(|e| Error::data("lexicon", e))?;
        lexicon.check()?;
        Ok(lexicon)
    }

    /// The full shipped lexicon, every domain included.
    pub fn shipped() -> Self {
        Self::load(SHIPPED_LEXICON).expect("shipped lexicon is valid")
    }

    /// Entries that apply to `domain`, plus the domain-independent ones.
    pub fn for_domain(&self, domain: &str) -> AssetLexicon {
        let domain = domain.trim().to_ascii_lowercase();
        AssetLexicon {
            version: format!("{}+{}", self.version, domain),
            entries: self
                .entries
                .iter()
                .filter(|e| e.domains.is_empty() || e.domains.iter().any(|d| d.eq_ignore_ascii_case(&domain)))
                .cloned()
                .collect(),
        }
    }

    pub fn domains(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.entries.iter().flat_map(|e| e.domains.iter().cloned()).collect();
        tags.sort();
        tags.dedup();
        tags
    }

    fn check(&self) -> Result<()> {
        for entry in &self.entries {
            if entry.asset.trim().is_empty() {
                return Err(Error::data("lexicon", "entry with empty asset name"));
            }
            if entry.patterns.is_empty() || entry.patterns.iter().any(|p| Pattern::compile(p).is_none()) {
                return Err(Error::data("lexicon", format!("entry `{}` has an empty pattern", entry.asset)));
            }
            if entry.families.is_unclassified() {
                return Err(Error::data("lexicon", format!("entry `{}` has no families", entry.asset)));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("lexicon serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtectionLevel {
    Dangerous,
    Normal,
    Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionEntry {
    pub protection: ProtectionLevel,
    pub asset: String,
    pub criticality: Criticality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionCatalog {
    pub version: String,
    pub permissions: BTreeMap<String, PermissionEntry>,
}

impl PermissionCatalog {
    pub fn load(text: &str) -> Result<Self> {
        let catalog: PermissionCatalog = toml::from_str(text).map_err(|e| Error::data("permission catalog", e))?;
        if let Some(name) = catalog.permissions.keys().find(|k| k.trim().is_empty()) {
            return Err(Error::data("permission catalog", format!("empty permission name `{name}`")));
        }
        Ok(catalog)
    }

    pub fn shipped() -> Self {
        Self::load(SHIPPED_CATALOG).expect("shipped permission catalog is valid")
    }

    pub fn get(&self, permission: &str) -> Option<&PermissionEntry> {
        self.permissions
            .get(permission)
            .or_else(|| self.permissions.get(&qualify_permission(permission)))
    }

    pub fn dangerous(&self) -> impl Iterator<Item = &str> {
        self.permissions
            .iter()
            .filter(|(_, e)| e.protection == ProtectionLevel::Dangerous)
            .map(|(name, _)| name.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceSource {
    Description,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Evidence {
    pub source: EvidenceSource,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateAsset {
    pub asset: Asset,
    pub evidence: Vec<Evidence>,
    /// Set when no lexicon entry or permission classified the candidate.
    #[serde(default)]
    pub needs_review: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Any,
    Word(String),
    Prefix(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pattern(Vec<Token>);

fn words(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            spans.push((s, i));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

impl Pattern {
    fn compile(pattern: &str) -> Option<Pattern> {
        let mut tokens = Vec::new();
        for piece in pattern.split_whitespace() {
            if piece == "*" {
                tokens.push(Token::Any);
                continue;
            }
            let (body, prefix) = match piece.strip_suffix('*') {
                Some(body) => (body, true),
                None => (piece, false),
            };
            let spans = words(body);
            for (i, (s, e)) in spans.iter().enumerate() {
                let word = body[*s..*e].to_lowercase();
                if prefix && i + 1 == spans.len() {
                    tokens.push(Token::Prefix(word));
                } else {
                    tokens.push(Token::Word(word));
                }
            }
        }
        if tokens.iter().all(|t| *t == Token::Any) {
            None
        } else {
            Some(Pattern(tokens))
        }
    }

    fn matches_at(&self, lowered: &[String], at: usize) -> bool {
        if at + self.0.len() > lowered.len() {
            return false;
        }
        self.0.iter().zip(&lowered[at..]).all(|(token, word)| match token {
            Token::Any => true,
            Token::Word(w) => w == word,
            Token::Prefix(p) => word.starts_with(p.as_str()),
        })
    }
}

/// Matched phrase occurrences of `pattern` in `text`, quoted from the
/// whitespace-normalized text with original casing.
fn find_matches(pattern: &str, text: &str) -> Vec<String> {
    let Some(compiled) = Pattern::compile(pattern) else {
        return Vec::new();
    };
    let normalized = normalize_whitespace(text);
    let spans = words(&normalized);
    let lowered: Vec<String> = spans.iter().map(|(s, e)| normalized[*s..*e].to_lowercase()).collect();
    (0..spans.len())
        .filter(|&i| compiled.matches_at(&lowered, i))
        .map(|i| {
            let end = spans[i + compiled.0.len() - 1].1;
            normalized[spans[i].0..end].to_string()
        })
        .collect()
}

fn entry_matches(entry: &LexiconEntry, text: &str) -> bool {
    entry.patterns.iter().any(|p| !find_matches(p, text).is_empty())
}

/// Candidates from the profile description, one per matched asset name,
/// sorted by name.
pub fn extract_asset_candidates(profile: &AppProfile, lexicon: &AssetLexicon) -> Vec<CandidateAsset> {
    let mut found: BTreeMap<String, (Criticality, Vec<Evidence>)> = BTreeMap::new();
    for entry in &lexicon.entries {
        let mut quotes = Vec::new();
        for pattern in &entry.patterns {
            quotes.extend(find_matches(pattern, &profile.description));
        }
        if quotes.is_empty() {
            continue;
        }
        let slot = found
            .entry(entry.asset.clone())
            .or_insert_with(|| (entry.criticality, Vec::new()));
        slot.0 = slot.0.max(entry.criticality);
        for text in quotes {
            let evidence = Evidence {
                source: EvidenceSource::Description,
                text,
            };
            if !slot.1.contains(&evidence) {
                slot.1.push(evidence);
            }
        }
    }

    found
        .into_iter()
        .map(|(name, (criticality, evidence))| {
            let mut candidate = CandidateAsset {
                asset: Asset::new(name, FamilySet::unclassified(), Provenance::DescriptionKeyword, criticality),
                evidence,
                needs_review: false,
            };
            classify_in_place(&mut candidate, lexicon);
            candidate
        })
        .collect()
}

/// Platform-asset candidates for every declared dangerous permission in the
/// catalog. Permissions guarding the same asset merge into one candidate.
pub fn permissions_to_assets(manifest: &ManifestInfo, catalog: &PermissionCatalog) -> Vec<CandidateAsset> {
    let mut found: BTreeMap<String, (Criticality, Vec<Evidence>)> = BTreeMap::new();
    for permission in &manifest.permissions {
        let Some(entry) = catalog.get(permission) else {
            continue;
        };
        if entry.protection != ProtectionLevel::Dangerous {
            continue;
        }
        let slot = found
            .entry(entry.asset.clone())
            .or_insert_with(|| (entry.criticality, Vec::new()));
        slot.0 = slot.0.max(entry.criticality);
        slot.1.push(Evidence {
            source: EvidenceSource::Manifest,
            text: permission.clone(),
        });
    }
    found
        .into_iter()
        .map(|(name, (criticality, evidence))| CandidateAsset {
            asset: Asset::new(name, FamilySet::of(&[AssetFamily::Platform]), Provenance::ManifestPermission, criticality),
            evidence,
            needs_review: false,
        })
        .collect()
}

/// Union of the families of every lexicon entry that produced the
/// candidate, plus Platform when a dangerous permission backs it. An empty
/// result is the unclassified marker.
pub fn classify_families(candidate: &CandidateAsset, lexicon: &AssetLexicon) -> FamilySet {
    let mut families = FamilySet::unclassified();
    let name = candidate.asset.name.as_str();
    for entry in lexicon.entries.iter().filter(|e| e.asset == name) {
        let produced = candidate
            .evidence
            .iter()
            .filter(|ev| ev.source == EvidenceSource::Description)
            .any(|ev| entry_matches(entry, &ev.text));
        if produced {
            families.union_with(&entry.families);
        }
    }
    if candidate.evidence.iter().any(|ev| ev.source == EvidenceSource::Manifest) {
        families.insert(AssetFamily::Platform);
    }
    families
}

fn classify_in_place(candidate: &mut CandidateAsset, lexicon: &AssetLexicon) {
    let families = classify_families(candidate, lexicon);
    candidate.needs_review = families.is_unclassified();
    candidate.asset.families = families;
}

/// Merges description and manifest candidates by asset name: evidence is
/// concatenated, families are reclassified over the combined evidence and
/// criticality takes the maximum. A name seen in the description keeps
/// description provenance.
pub fn merge_candidates(
    description: Vec<CandidateAsset>,
    manifest: Vec<CandidateAsset>,
    lexicon: &AssetLexicon,
) -> Vec<CandidateAsset> {
    let mut merged: BTreeMap<String, CandidateAsset> = BTreeMap::new();
    for candidate in description.into_iter().chain(manifest) {
        match merged.get_mut(&candidate.asset.name) {
            None => {
                merged.insert(candidate.asset.name.clone(), candidate);
            }
            Some(existing) => {
                existing.asset.criticality = existing.asset.criticality.max(candidate.asset.criticality);
                existing.asset.families.union_with(&candidate.asset.families);
                for ev in candidate.evidence {
                    if !existing.evidence.contains(&ev) {
                        existing.evidence.push(ev);
                    }
                }
            }
        }
    }
    merged
        .into_values()
        .map(|mut candidate| {
            let has_description = candidate.evidence.iter().any(|e| e.source == EvidenceSource::Description);
            let provenance = if has_description {
                Provenance::DescriptionKeyword
            } else {
                Provenance::ManifestPermission
            };
            candidate.asset = Asset::new(
                candidate.asset.name.clone(),
                candidate.asset.families.clone(),
                provenance,
                candidate.asset.criticality,
            );
            let reclassified = classify_families(&candidate, lexicon);
            if !reclassified.is_unclassified() {
                candidate.asset.families = reclassified;
            }
            candidate.needs_review = candidate.asset.families.is_unclassified();
            candidate
        })
        .collect()
}
