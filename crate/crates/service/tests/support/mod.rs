//! Builds A2 fixture session files for the service tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use sourcerer_core::assets::{CandidateAsset, Evidence, EvidenceSource};
use sourcerer_core::domain::{Asset, Criticality, FamilySet, Provenance, ToolId};
use sourcerer_core::ingest::{load_app_profile, parse_manifest};
use sourcerer_core::session::{create_session, parse_reports, save_session, DataBundle, SessionConfig, SessionInputs, TriageSession};

pub fn fixture(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/a2").join(name);
    std::fs::read(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

pub fn a2_session() -> TriageSession {
    let profile = load_app_profile(&fixture("profile.toml")).unwrap();
    let manifest = parse_manifest(&String::from_utf8(fixture("AndroidManifest.xml")).unwrap()).unwrap();
    let payloads: Vec<_> = ["mobsf", "androbugs", "qark"]
        .iter()
        .map(|t| (ToolId::from(*t), fixture(&format!("{t}.json"))))
        .collect();
    let inputs = SessionInputs {
        profile,
        manifest: Some(manifest),
        reports: parse_reports(&payloads).unwrap(),
    };
    create_session(inputs, SessionConfig::default(), &DataBundle::shipped_for("fintech").unwrap()).unwrap()
}

/// The A2 session plus one unclassified candidate, which cannot be accepted.
pub fn a2_session_with_unclassified() -> TriageSession {
    let mut session = a2_session();
    session.assets.push(CandidateAsset {
        asset: Asset::new("loyalty points", FamilySet::unclassified(), Provenance::DescriptionKeyword, Criticality::LOW),
        evidence: vec![Evidence {
            source: EvidenceSource::Description,
            text: "loyalty points".into(),
        }],
        needs_review: true,
    });
    session
}

pub fn write_session(dir: &Path, session: &TriageSession) -> PathBuf {
    let path = dir.join("session.json");
    std::fs::write(&path, save_session(session)).unwrap();
    path
}
