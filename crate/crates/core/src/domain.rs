//! Vocabulary shared by every phase of the pipeline.
//!
//! Types here are plain values: structural validation only, no policy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        /// Shared immutable string; clones are reference-count bumps.
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(value: impl AsRef<str>) -> Self {
                Self(Arc::from(value.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(value: &str) -> Self {
                Self::new(value)
            }
        }

        impl From<String> for $name {
            fn from(value: String) -> Self {
                Self(Arc::from(value))
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
                String::deserialize(deserializer).map(Self::from)
            }
        }
    };
}

string_id!(
    /// Slug naming a report adapter: `mobsf`, `androbugs`, `qark`, `generic`.
    ToolId
);
string_id!(
    /// Stable slug of a canonical vulnerability category, e.g. `sql-injection`.
    CategoryId
);
string_id!(AssetId);
string_id!(FindingId);

/// Hex prefix of a SHA-256 over `parts`, each part terminated by a NUL byte.
pub(crate) fn content_hash(parts: &[&str], len: usize) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    let mut hex = hex::encode(hasher.finalize());
    hex.truncate(len);
    hex
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetFamily {
    User,
    Application,
    Platform,
}

impl AssetFamily {
    pub const ALL: [AssetFamily; 3] = [AssetFamily::User, AssetFamily::Application, AssetFamily::Platform];

    pub fn label(self) -> &'static str {
        match self {
            AssetFamily::User => "User",
            AssetFamily::Application => "Application",
            AssetFamily::Platform => "Platform",
        }
    }
}

/// Set of families an asset belongs to. Membership may overlap; the empty
/// set is the explicit "unclassified" marker.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FamilySet(BTreeSet<AssetFamily>);

impl FamilySet {
    pub fn unclassified() -> Self {
        Self::default()
    }

    pub fn of(families: &[AssetFamily]) -> Self {
        Self(families.iter().copied().collect())
    }

    pub fn is_unclassified(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, family: AssetFamily) -> bool {
        self.0.contains(&family)
    }

    pub fn insert(&mut self, family: AssetFamily) {
        self.0.insert(family);
    }

    pub fn union_with(&mut self, other: &FamilySet) {
        self.0.extend(other.0.iter().copied());
    }

    pub fn intersects(&self, other: &FamilySet) -> bool {
        self.0.iter().any(|f| other.0.contains(f))
    }

    pub fn iter(&self) -> impl Iterator<Item = AssetFamily> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for FamilySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("unclassified");
        }
        let labels: Vec<_> = self.iter().map(AssetFamily::label).collect();
        f.write_str(&labels.join("+"))
    }
}

impl FromIterator<AssetFamily> for FamilySet {
    fn from_iter<I: IntoIterator<Item = AssetFamily>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    DescriptionKeyword,
    ManifestPermission,
    Manual,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::DescriptionKeyword => "description-keyword",
            Provenance::ManifestPermission => "manifest-permission",
            Provenance::Manual => "manual",
        }
    }
}

/// Asset criticality on a 1 (low) to 3 (critical) scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Criticality(u8);

impl Criticality {
    pub const LOW: Criticality = Criticality(1);
    pub const MEDIUM: Criticality = Criticality(2);
    pub const CRITICAL: Criticality = Criticality(3);

    pub fn new(value: u8) -> Result<Self> {
        Self::try_from(value).map_err(Error::ConfigInvalid)
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for Criticality {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, String> {
        if (1..=3).contains(&value) {
            Ok(Criticality(value))
        } else {
            Err(format!("criticality must be 1..=3, got {value}"))
        }
    }
}

impl From<Criticality> for u8 {
    fn from(value: Criticality) -> u8 {
        value.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetState {
    Candidate,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Asset {
    pub id: AssetId,
    pub name: String,
    pub families: FamilySet,
    pub provenance: Provenance,
    pub criticality: Criticality,
    pub state: AssetState,
}

impl Asset {
    pub fn new(name: impl Into<String>, families: FamilySet, provenance: Provenance, criticality: Criticality) -> Self {
        let name = name.into();
        Asset {
            id: Asset::id_for(&name, provenance),
            name,
            families,
            provenance,
            criticality,
            state: AssetState::Candidate,
        }
    }

    /// Ids are content addressed so they survive session reloads.
    pub fn id_for(name: &str, provenance: Provenance) -> AssetId {
        AssetId::from(format!("a-{}", content_hash(&[name, provenance.as_str()], 12)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodeLocation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
}

impl CodeLocation {
    /// A location carrying no fields: the tool reported an app-wide issue.
    pub fn app_wide() -> Self {
        Self::default()
    }

    pub fn class(class_name: &str) -> Self {
        CodeLocation {
            class_name: Some(class_name.to_string()),
            ..Self::default()
        }
    }

    pub fn method(class_name: &str, method_name: &str) -> Self {
        CodeLocation {
            class_name: Some(class_name.to_string()),
            method_name: Some(method_name.to_string()),
            ..Self::default()
        }
    }

    pub fn is_app_wide(&self) -> bool {
        self.file.is_none() && self.class_name.is_none() && self.method_name.is_none() && self.line.is_none()
    }

    /// Either anchored by file or class, or entirely app-wide.
    pub fn is_well_formed(&self) -> bool {
        self.is_app_wide() || self.file.is_some() || self.class_name.is_some()
    }

    fn nonempty(value: Option<String>) -> Option<String> {
        value.map(|v| v.trim().to_string()).filter(|v| !v.is_empty())
    }

    pub(crate) fn from_fragments(
        file: Option<String>,
        class_name: Option<String>,
        method_name: Option<String>,
        line: Option<u32>,
    ) -> Self {
        CodeLocation {
            file: Self::nonempty(file),
            class_name: Self::nonempty(class_name),
            method_name: Self::nonempty(method_name),
            line: line.filter(|l| *l > 0),
        }
    }
}

impl fmt::Display for CodeLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_app_wide() {
            return f.write_str("(app-wide)");
        }
        match (&self.class_name, &self.file) {
            (Some(class), _) => f.write_str(class)?,
            (None, Some(file)) => f.write_str(file)?,
            (None, None) => f.write_str("?")?,
        }
        if let Some(method) = &self.method_name {
            write!(f, "#{method}")?;
        }
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Medium,
    High,
    Critical,
}

impl Severity {
    pub const ALL: [Severity; 4] = [Severity::Critical, Severity::High, Severity::Medium, Severity::Info];

    /// Ordinal rank, 4 for critical down to 1 for info.
    pub fn rank(self) -> u8 {
        match self {
            Severity::Critical => 4,
            Severity::High => 3,
            Severity::Medium => 2,
            Severity::Info => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Critical => "critical",
            Severity::High => "high",
            Severity::Medium => "medium",
            Severity::Info => "info",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThreatClass {
    UntrustedCodeExecution,
    UntrustedContent,
    UntrustedNetwork,
}

impl ThreatClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ThreatClass::UntrustedCodeExecution => "untrusted-code-execution",
            ThreatClass::UntrustedContent => "untrusted-content",
            ThreatClass::UntrustedNetwork => "untrusted-network",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalCategory {
    pub id: CategoryId,
    pub display_name: String,
    pub default_severity: Severity,
    pub threat_class: ThreatClass,
}

/// Tool-independent vulnerability taxonomy, loaded from a versioned TOML file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub version: String,
    #[serde(rename = "category", default)]
    categories: Vec<CanonicalCategory>,
}

const SHIPPED_TAXONOMY: &str = include_str!("../data/taxonomy.toml");

/// Category ids the shipped taxonomy must always provide.
pub const SEED_CATEGORIES: [&str; 11] = [
    "sql-injection",
    "sensitive-data-logging",
    "hardcoded-secret",
    "dangerous-permission-access",
    "external-storage-sensitive-write",
    "insecure-webview-xss",
    "webview-remote-debug",
    "weak-crypto-hash",
    "tracking-library",
    "insecure-ipc-export",
    "insecure-network-validation",
];

impl Taxonomy {
    pub fn new(version: impl Into<String>, categories: Vec<CanonicalCategory>) -> Result<Self> {
        let taxonomy = Taxonomy {
            version: version.into(),
            categories,
        };
        taxonomy.check()?;
        Ok(taxonomy)
    }

    pub fn load(text: &str) -> Result<Self> {
        let taxonomy: Taxonomy = toml::from_str(text).map_err(|e| Error::data("taxonomy", e))?;
        taxonomy.check()?;
        Ok(taxonomy)
    }

    pub fn shipped() -> Self {
        Self::load(SHIPPED_TAXONOMY).expect("shipped taxonomy is valid")
    }

    fn check(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for category in &self.categories {
            if category.id.as_str().is_empty() {
                return Err(Error::data("taxonomy", "empty category id"));
            }
            if !seen.insert(&category.id) {
                return Err(Error::data("taxonomy", format!("duplicate category `{}`", category.id)));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &CategoryId) -> Option<&CanonicalCategory> {
        self.categories.iter().find(|c| &c.id == id)
    }

    pub fn contains(&self, id: &CategoryId) -> bool {
        self.get(id).is_some()
    }

    pub fn categories(&self) -> &[CanonicalCategory] {
        &self.categories
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NormalizedFinding {
    pub tool: ToolId,
    pub category: CategoryId,
    pub severity: Severity,
    pub location: CodeLocation,
    pub evidence: String,
    pub native_id: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    #[default]
    Unverified,
    Verified,
    FalsePositive,
}

/// Cross-tool merged finding: one category at one location equivalence class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidatedFinding {
    pub id: FindingId,
    pub category: CategoryId,
    pub locations: BTreeSet<CodeLocation>,
    pub support: BTreeSet<ToolId>,
    pub severity: Severity,
    pub members: Vec<NormalizedFinding>,
    #[serde(default)]
    pub verdict: Verdict,
}

impl ConsolidatedFinding {
    pub fn first_location(&self) -> Option<&CodeLocation> {
        self.locations.iter().next()
    }
}

/// Per-tool distinct category sets, the input shape for reduction statistics.
pub type CategorySets = BTreeMap<ToolId, BTreeSet<CategoryId>>;
