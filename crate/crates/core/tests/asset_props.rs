//! Properties of asset extraction, classification and permission mapping.

use std::collections::BTreeSet;

use proptest::prelude::*;

use sourcerer_core::assets::{
    extract_asset_candidates, permissions_to_assets, AssetLexicon, CandidateAsset, LexiconEntry, PermissionCatalog,
    ANDROID_DANGEROUS_PERMISSIONS,
};
use sourcerer_core::domain::{AssetFamily, Criticality, FamilySet};
use sourcerer_core::ingest::{AppProfile, ManifestInfo};

const VOCABULARY: [&str; 30] = [
    "send", "money", "to", "your", "phone", "contacts", "with", "a", "PIN", "unlock", "device", "bank", "account",
    "debit", "card", "mobile", "number", "sim", "cards", "gps", "location", "share", "activity", "friends", "the",
    "encrypted", "login", "otp", "transaction", "history",
];

const EXTRA_PATTERNS: [&str; 6] = ["money", "share *", "bank*", "the", "phone contacts", "unlock *"];

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(1000)
}

fn description() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (prop::sample::select(VOCABULARY.to_vec()), prop::sample::select(vec![" ", " ", ", ", ". "])),
        0..40,
    )
    .prop_map(|words| words.into_iter().map(|(w, sep)| format!("{w}{sep}")).collect())
}

fn profile(description: String) -> AppProfile {
    AppProfile {
        app_id: "p".into(),
        display_name: "P".into(),
        description,
        domain_tag: "fintech".into(),
    }
}

fn families() -> impl Strategy<Value = FamilySet> {
    prop::sample::subsequence(AssetFamily::ALL.to_vec(), 1..=3).prop_map(|f| FamilySet::of(&f))
}

fn extra_entry() -> impl Strategy<Value = LexiconEntry> {
    (
        prop::sample::select(vec!["PIN", "wallet", "contacts", "bank account", "social graph"]),
        prop::sample::subsequence(EXTRA_PATTERNS.to_vec(), 1..=3),
        families(),
        1u8..=3,
    )
        .prop_map(|(asset, patterns, families, c)| LexiconEntry {
            asset: asset.into(),
            patterns: patterns.into_iter().map(String::from).collect(),
            families,
            criticality: Criticality::new(c).unwrap(),
            domains: vec![],
        })
}

fn names(candidates: &[CandidateAsset]) -> BTreeSet<&str> {
    candidates.iter().map(|c| c.asset.name.as_str()).collect()
}

fn lexicon() -> AssetLexicon {
    AssetLexicon::shipped().for_domain("fintech")
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn extraction_is_deterministic(text in description()) {
        let lexicon = lexicon();
        let first = extract_asset_candidates(&profile(text.clone()), &lexicon);
        let second = extract_asset_candidates(&profile(text), &lexicon.clone());
        prop_assert_eq!(first, second);
    }

    #[test]
    fn adding_a_lexicon_entry_never_removes_a_candidate(text in description(), extra in extra_entry(), at in any::<prop::sample::Index>()) {
        let base = lexicon();
        let mut entries = base.entries.clone();
        entries.insert(at.index(entries.len() + 1), extra);
        let grown = AssetLexicon::new(base.version.clone(), entries).unwrap();
        let before = extract_asset_candidates(&profile(text.clone()), &base);
        let after = extract_asset_candidates(&profile(text), &grown);
        prop_assert!(names(&before).is_subset(&names(&after)));
    }

    #[test]
    fn candidates_round_trip_through_serialization(text in description()) {
        let candidates = extract_asset_candidates(&profile(text), &lexicon());
        for candidate in &candidates {
            let all: BTreeSet<AssetFamily> = AssetFamily::ALL.into_iter().collect();
            prop_assert!(candidate.asset.families.iter().all(|f| all.contains(&f)));
            prop_assert_eq!(candidate.needs_review, candidate.asset.families.is_unclassified());
            prop_assert!(!candidate.evidence.is_empty());
        }
        let json = serde_json::to_string(&candidates).unwrap();
        let back: Vec<CandidateAsset> = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, candidates);
    }

    #[test]
    fn family_sets_round_trip(families in prop::sample::subsequence(AssetFamily::ALL.to_vec(), 0..=3)) {
        let set = FamilySet::of(&families);
        let json = serde_json::to_string(&set).unwrap();
        prop_assert_eq!(serde_json::from_str::<FamilySet>(&json).unwrap(), set.clone());
        prop_assert_eq!(set.len(), families.len());
    }

    #[test]
    fn permission_assets_never_exceed_declared(
        dangerous in prop::sample::subsequence(ANDROID_DANGEROUS_PERMISSIONS.to_vec(), 0..=12),
        other in prop::collection::vec("android\\.permission\\.[A-Z_]{3,12}", 0..5),
    ) {
        let mut permissions: Vec<String> = dangerous.into_iter().map(String::from).chain(other).collect();
        permissions.sort();
        permissions.dedup();
        let manifest = ManifestInfo {
            package: "p".into(),
            permissions: permissions.clone(),
            ..ManifestInfo::default()
        };
        let out = permissions_to_assets(&manifest, &PermissionCatalog::shipped());
        prop_assert!(out.len() <= permissions.len());
        for candidate in &out {
            prop_assert!(candidate.asset.families.contains(AssetFamily::Platform));
            for evidence in &candidate.evidence {
                prop_assert!(permissions.contains(&evidence.text));
            }
        }
    }
}
