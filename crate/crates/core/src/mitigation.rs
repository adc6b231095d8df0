//! OWASP MASVS/MSTG mitigation knowledge base.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{CategoryId, Taxonomy};
use crate::error::{Error, Result};

const SHIPPED_KB: &str = include_str!("../data/mitigations.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mitigation {
    pub masvs_id: String,
    pub title: String,
    pub summary: String,
    pub guideline_ref: String,
    pub applies_to: Vec<CategoryId>,
}

impl Mitigation {
    /// `(area, number)` of an `MSTG-<AREA>-<N>` id.
    pub fn parse_id(id: &str) -> Option<(&str, u32)> {
        let rest = id.strip_prefix("MSTG-")?;
        let (area, number) = rest.rsplit_once('-')?;
        let area_ok = !area.is_empty() && area.chars().all(|c| c.is_ascii_uppercase());
        let number_ok = !number.is_empty() && number.chars().all(|c| c.is_ascii_digit());
        if !(area_ok && number_ok) {
            return None;
        }
        Some((area, number.parse().ok()?))
    }

    fn sort_key(&self) -> (&str, u32) {
        Self::parse_id(&self.masvs_id).unwrap_or((&self.masvs_id, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitigationKb {
    pub version: String,
    #[serde(default)]
    pub edition: String,
    #[serde(rename = "mitigation", default)]
    pub entries: Vec<Mitigation>,
}

/// Parses and validates a KB file; nothing is returned unless every entry
/// passes.
pub fn load_kb(file: &[u8], taxonomy: &Taxonomy) -> Result<MitigationKb> {
    let text = std::str::from_utf8(file).map_err(|e| Error::MalformedKb(e.to_string()))?;
    let kb: MitigationKb = toml::from_str(text).map_err(|e| Error::MalformedKb(e.to_string()))?;
    kb.check(taxonomy)?;
    Ok(kb)
}

impl MitigationKb {
    pub fn shipped(taxonomy: &Taxonomy) -> Result<Self> {
        load_kb(SHIPPED_KB.as_bytes(), taxonomy)
    }

    pub fn check(&self, taxonomy: &Taxonomy) -> Result<()> {
        let mut ids = BTreeSet::new();
        for entry in &self.entries {
            if Mitigation::parse_id(&entry.masvs_id).is_none() {
                return Err(Error::MalformedKb(format!("`{}` is not an MSTG-<AREA>-<N> id", entry.masvs_id)));
            }
            if !ids.insert(entry.masvs_id.as_str()) {
                return Err(Error::MalformedKb(format!("duplicate entry `{}`", entry.masvs_id)));
            }
            if entry.applies_to.is_empty() {
                return Err(Error::MalformedKb(format!("`{}` applies to no category", entry.masvs_id)));
            }
            if let Some(missing) = entry.applies_to.iter().find(|c| !taxonomy.contains(c)) {
                return Err(Error::DanglingCategory {
                    entry: entry.masvs_id.clone(),
                    category: missing.to_string(),
                });
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("knowledge base serializes")
    }
}

/// Entries applying to `category`, ordered by area then requirement number.
/// An empty result means no mitigation is known.
pub fn lookup<'a>(category: &CategoryId, kb: &'a MitigationKb) -> Vec<&'a Mitigation> {
    let mut hits: Vec<&Mitigation> = kb.entries.iter().filter(|m| m.applies_to.contains(category)).collect();
    hits.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    hits
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(category: &str, kb: &MitigationKb) -> Vec<String> {
        lookup(&CategoryId::from(category), kb).iter().map(|m| m.masvs_id.clone()).collect()
    }

    #[test]
    fn storage_and_platform_requirements_present() {
        let taxonomy = Taxonomy::shipped();
        let kb = MitigationKb::shipped(&taxonomy).unwrap();
        assert!(kb.entries.len() >= 7);
        assert!(ids("hardcoded-secret", &kb).contains(&"MSTG-STORAGE-3".to_string()));
        assert!(ids("insecure-webview-xss", &kb).contains(&"MSTG-PLATFORM-7".to_string()));
    }

    #[test]
    fn ordering_is_numeric_within_area() {
        let taxonomy = Taxonomy::shipped();
        let entry = |id: &str| Mitigation {
            masvs_id: id.into(),
            title: String::new(),
            summary: String::new(),
            guideline_ref: String::new(),
            applies_to: vec!["sql-injection".into()],
        };
        let kb = MitigationKb {
            version: "t".into(),
            edition: String::new(),
            entries: vec![entry("MSTG-STORAGE-10"), entry("MSTG-CODE-2"), entry("MSTG-STORAGE-3")],
        };
        kb.check(&taxonomy).unwrap();
        assert_eq!(ids("sql-injection", &kb), vec!["MSTG-CODE-2", "MSTG-STORAGE-3", "MSTG-STORAGE-10"]);
        assert!(ids("tracking-library", &kb).is_empty());
    }

    #[test]
    fn dangling_category_rejected() {
        let taxonomy = Taxonomy::shipped();
        let text = br#"version = "t"
[[mitigation]]
masvs_id = "MSTG-CODE-1"
title = "t"
summary = "s"
guideline_ref = "g"
applies_to = ["no-such-category"]
"#;
        match load_kb(text, &taxonomy) {
            Err(Error::DanglingCategory { entry, category }) => {
                assert_eq!(entry, "MSTG-CODE-1");
                assert_eq!(category, "no-such-category");
            }
            other => panic!("expected DanglingCategory, got {other:?}"),
        }
    }

    #[test]
    fn empty_kb_is_valid() {
        let kb = load_kb(b"version = \"empty\"\n", &Taxonomy::shipped()).unwrap();
        assert!(kb.entries.is_empty());
    }

    #[test]
    fn malformed_entries() {
        let taxonomy = Taxonomy::shipped();
        assert!(matches!(load_kb(b"not toml [", &taxonomy), Err(Error::MalformedKb(_))));
        let bad_id = br#"version = "t"
[[mitigation]]
masvs_id = "V2.3"
title = "t"
summary = "s"
guideline_ref = "g"
applies_to = ["sql-injection"]
"#;
        assert!(matches!(load_kb(bad_id, &taxonomy), Err(Error::MalformedKb(_))));
        assert_eq!(Mitigation::parse_id("MSTG-STORAGE-3"), Some(("STORAGE", 3)));
        assert_eq!(Mitigation::parse_id("MSTG-storage-3"), None);
        assert_eq!(Mitigation::parse_id("MSTG-STORAGE-"), None);
    }

    #[test]
    fn serialize_round_trip() {
        let taxonomy = Taxonomy::shipped();
        let kb = MitigationKb::shipped(&taxonomy).unwrap();
        assert_eq!(load_kb(kb.to_toml().as_bytes(), &taxonomy).unwrap(), kb);
    }
}
