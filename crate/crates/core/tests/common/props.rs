//! Property bodies and strategies shared by the proptest suites and the
//! acceptance runner.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use super::*;
use sourcerer_core::domain::{
    Asset, AssetFamily, AssetState, Criticality, FamilySet, FindingId, Provenance, Taxonomy, Verdict,
};
use sourcerer_core::mapping::{prioritize, ImpactRules, Prioritization, PriorityWeights};
use sourcerer_core::reconcile::consolidate;
use sourcerer_core::session::{apply_event, load_session, replay, save_session, AssetDecision, SessionEvent};

pub type Check = Result<(), TestCaseError>;

pub const CASES: u32 = 1000;

pub fn config() -> ProptestConfig {
    ProptestConfig::with_cases(CASES)
}

// -- reconciliation -------------------------------------------------------

/// Up to three tools, six findings each, over five categories and the
/// full location pool.
pub fn tools_input() -> impl Strategy<Value = Vec<ToolFindings>> {
    tools_strategy(6, 5, POOL_LOCATIONS)
}

fn ids(by_tool: &[ToolFindings], k: usize, g: MatchGranularity) -> BTreeSet<FindingId> {
    consolidate(by_tool, k, g).unwrap().findings.into_iter().map(|f| f.id).collect()
}

pub fn matches_oracle(by_tool: &[ToolFindings], k: usize, g: MatchGranularity) -> Check {
    let out = consolidate(by_tool, k, g).unwrap();
    let (expected, residue) = oracle(by_tool, k, g);
    prop_assert_eq!(as_groups(&out.findings), expected);
    prop_assert_eq!(refs(&out.residue), residue);
    Ok(())
}

pub fn permutation_invariance(by_tool: &[ToolFindings], k: usize, g: MatchGranularity, seed: u64) -> Check {
    let mut shuffled = by_tool.to_vec();
    let mut state = seed;
    let mut next = move |n: usize| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as usize % n.max(1)
    };
    for i in (1..shuffled.len()).rev() {
        let j = next(i + 1);
        shuffled.swap(i, j);
    }
    for group in &mut shuffled {
        for i in (1..group.findings.len()).rev() {
            let j = next(i + 1);
            group.findings.swap(i, j);
        }
    }
    prop_assert_eq!(consolidate(by_tool, k, g).unwrap(), consolidate(&shuffled, k, g).unwrap());
    Ok(())
}

pub fn threshold_monotonicity(by_tool: &[ToolFindings], k: usize, g: MatchGranularity) -> Check {
    let looser = ids(by_tool, k, g);
    let stricter = ids(by_tool, k + 1, g);
    prop_assert!(stricter.is_subset(&looser));
    Ok(())
}

pub fn k1_equals_category_union(by_tool: &[ToolFindings], g: MatchGranularity) -> Check {
    let out = consolidate(by_tool, 1, g).unwrap();
    let got: BTreeSet<CategoryId> = out.findings.iter().map(|f| f.category.clone()).collect();
    let want: BTreeSet<CategoryId> = by_tool.iter().flat_map(|t| &t.findings).map(|f| f.category.clone()).collect();
    prop_assert_eq!(got, want);
    prop_assert!(out.residue.is_empty());
    Ok(())
}

pub fn granularity_monotonicity(by_tool: &[ToolFindings], k: usize) -> Check {
    let pairs = [
        (MatchGranularity::Method, MatchGranularity::Class),
        (MatchGranularity::Class, MatchGranularity::File),
    ];
    for (fine, coarse) in pairs {
        let fine_out = consolidate(by_tool, k, fine).unwrap();
        let coarse_out = consolidate(by_tool, k, coarse).unwrap();
        for f in &fine_out.findings {
            let covered = coarse_out.findings.iter().any(|c| {
                c.category == f.category
                    && f.support.is_subset(&c.support)
                    && f.members.iter().all(|m| c.members.contains(m))
            });
            prop_assert!(covered, "{} finding {} has no {} superset", fine, f.id, coarse);
        }
    }
    Ok(())
}

pub fn conservation(by_tool: &[ToolFindings], k: usize, g: MatchGranularity) -> Check {
    let out = consolidate(by_tool, k, g).unwrap();
    let mut seen: Vec<NormalizedFinding> = out.findings.iter().flat_map(|f| f.members.clone()).collect();
    seen.extend(out.residue.clone());
    seen.sort();
    let mut input: Vec<NormalizedFinding> = by_tool.iter().flat_map(|t| t.findings.clone()).collect();
    input.sort();
    prop_assert_eq!(seen, input);
    for f in &out.findings {
        prop_assert!(f.support.len() >= k);
        prop_assert_eq!(Some(f.severity), f.members.iter().map(|m| m.severity).max());
    }
    Ok(())
}

/// Each category is consolidated independently of every other, so the
/// exhaustive single-category sweep extends to any category mix.
pub fn category_separability(by_tool: &[ToolFindings], k: usize, g: MatchGranularity) -> Check {
    let whole = consolidate(by_tool, k, g).unwrap();
    let categories: BTreeSet<&CategoryId> = by_tool.iter().flat_map(|t| &t.findings).map(|f| &f.category).collect();
    let mut findings = Vec::new();
    let mut residue = Vec::new();
    for category in categories {
        let restricted: Vec<ToolFindings> = by_tool
            .iter()
            .map(|t| ToolFindings {
                tool: t.tool.clone(),
                findings: t.findings.iter().filter(|f| &f.category == category).cloned().collect(),
            })
            .collect();
        let part = consolidate(&restricted, k, g).unwrap();
        findings.extend(part.findings);
        residue.extend(part.residue);
    }
    findings.sort_by(|a, b| a.id.cmp(&b.id));
    residue.sort();
    let mut expected = whole.findings.clone();
    expected.sort_by(|a, b| a.id.cmp(&b.id));
    prop_assert_eq!(findings, expected);
    prop_assert_eq!(residue, whole.residue);
    Ok(())
}

// -- exhaustive sweep -----------------------------------------------------

/// Every subset of at most two (category, location) cells out of 3 x 3.
pub fn small_subsets() -> Vec<Vec<(usize, usize)>> {
    let cells: Vec<(usize, usize)> = (0..3).flat_map(|c| (0..3).map(move |l| (c, l))).collect();
    let mut out = vec![vec![]];
    for i in 0..cells.len() {
        out.push(vec![cells[i]]);
        for j in (i + 1)..cells.len() {
            out.push(vec![cells[i], cells[j]]);
        }
    }
    out
}

pub fn materialize(tool: &'static str, cells: &[(usize, usize)]) -> ToolFindings {
    ToolFindings {
        tool: tool.into(),
        findings: cells
            .iter()
            .map(|&(c, l)| finding(tool, POOL_CATEGORIES[c], pool_location(l), Severity::High))
            .collect(),
    }
}

/// Compares `consolidate` with the oracle for every granularity and
/// k in 1..=3; panics on the first mismatch. Returns the comparison count.
pub fn sweep_check(by_tool: &[ToolFindings]) -> usize {
    let mut checked = 0;
    for g in MatchGranularity::ALL {
        let classes = oracle_classes(by_tool, g);
        for k in 1..=3 {
            let out = consolidate(by_tool, k, g).unwrap();
            let (expected, residue) = oracle_filter(&classes, k);
            assert_eq!(as_groups(&out.findings), expected, "k={k} g={g} input={by_tool:?}");
            assert_eq!(refs(&out.residue), residue, "k={k} g={g} input={by_tool:?}");
            checked += 1;
        }
    }
    checked
}

/// Three tools, each reporting any subset of at most two cells.
pub fn sweep_two_cells_per_tool() -> usize {
    let subsets = small_subsets();
    let per_tool = |tool| subsets.iter().map(|cells| materialize(tool, cells)).collect::<Vec<_>>();
    let (mobsf, androbugs, qark) = (per_tool("mobsf"), per_tool("androbugs"), per_tool("qark"));
    let mut checked = 0;
    for a in &mobsf {
        for b in &androbugs {
            for c in &qark {
                checked += sweep_check(&[a.clone(), b.clone(), c.clone()]);
            }
        }
    }
    checked
}

/// One category; one, two or three tools each reporting any subset of the
/// three locations.
pub fn sweep_single_category() -> usize {
    let cells = |mask: u32| -> Vec<(usize, usize)> { (0..3).filter(|l| mask & (1 << l) != 0).map(|l| (0, l)).collect() };
    let mut checked = 0;
    for mask_a in 0u32..8 {
        for mask_b in 0u32..8 {
            for mask_c in 0u32..8 {
                let by_tool = [
                    materialize("mobsf", &cells(mask_a)),
                    materialize("androbugs", &cells(mask_b)),
                    materialize("qark", &cells(mask_c)),
                ];
                checked += sweep_check(&by_tool);
                checked += sweep_check(&by_tool[..2]);
                checked += sweep_check(&by_tool[..1]);
            }
        }
    }
    checked
}

// -- asset mapping --------------------------------------------------------

const MAPPING_CATEGORIES: [&str; 6] = [
    "sql-injection",
    "sensitive-data-logging",
    "hardcoded-secret",
    "dangerous-permission-access",
    "insecure-webview-xss",
    "weak-crypto-hash",
];

const ASSET_NAMES: [&str; 6] = ["PIN", "phone no.", "api key", "device identifiers", "bank account", "contacts"];

pub fn rules() -> ImpactRules {
    ImpactRules::shipped(&Taxonomy::shipped()).unwrap()
}

fn family_set() -> impl Strategy<Value = FamilySet> {
    prop::sample::subsequence(AssetFamily::ALL.to_vec(), 0..=3).prop_map(|f| FamilySet::of(&f))
}

/// Assets in every state; unclassified assets are never accepted.
pub fn mapping_assets() -> impl Strategy<Value = Vec<Asset>> {
    let states = vec![AssetState::Candidate, AssetState::Accepted, AssetState::Rejected];
    prop::sample::subsequence(ASSET_NAMES.to_vec(), 0..=ASSET_NAMES.len()).prop_flat_map(move |names| {
        let n = names.len();
        (
            Just(names),
            prop::collection::vec(family_set(), n),
            prop::collection::vec(1u8..=3, n),
            prop::collection::vec(prop::sample::select(states.clone()), n),
        )
            .prop_map(|(names, families, crit, states)| {
                names
                    .into_iter()
                    .zip(families)
                    .zip(crit)
                    .zip(states)
                    .map(|(((name, families), crit), state)| {
                        let mut asset = Asset::new(name, families, Provenance::DescriptionKeyword, Criticality::new(crit).unwrap());
                        asset.state = if asset.families.is_unclassified() && state == AssetState::Accepted {
                            AssetState::Candidate
                        } else {
                            state
                        };
                        asset
                    })
                    .collect()
            })
    })
}

pub fn mapping_findings() -> impl Strategy<Value = Vec<ConsolidatedFinding>> {
    let one = (
        prop::sample::select(MAPPING_CATEGORIES.to_vec()),
        prop::sample::select(Severity::ALL.to_vec()),
        prop::sample::subsequence(A2_TOOLS.to_vec(), 1..=3),
        prop::sample::select(vec![Verdict::Unverified, Verdict::Verified, Verdict::FalsePositive]),
    );
    prop::collection::vec(one, 0..8).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (category, severity, tools, verdict))| ConsolidatedFinding {
                id: FindingId::from(format!("f-{i:02}")),
                category: category.into(),
                locations: [CodeLocation::class(&format!("com.x.C{i}"))].into_iter().collect(),
                support: tools.into_iter().map(ToolId::from).collect(),
                severity,
                members: vec![],
                verdict,
            })
            .collect()
    })
}

pub fn weights() -> impl Strategy<Value = PriorityWeights> {
    (prop::array::uniform4(0.1f64..10.0), prop::array::uniform3(0.1f64..10.0)).prop_map(|(s, f)| {
        let mut w = PriorityWeights::default();
        w.severity.critical = s[0];
        w.severity.high = s[1];
        w.severity.medium = s[2];
        w.severity.info = s[3];
        w.family.user = f[0];
        w.family.application = f[1];
        w.family.platform = f[2];
        w
    })
}

pub fn order(p: &Prioritization) -> Vec<&FindingId> {
    p.ranked.iter().map(|e| &e.finding_id).collect()
}

pub fn scores(p: &Prioritization) -> BTreeMap<&FindingId, f64> {
    p.ranked.iter().map(|e| (&e.finding_id, e.score)).collect()
}

pub fn ordering_invariant_under_scaling(findings: &[ConsolidatedFinding], assets: &[Asset], w: &PriorityWeights, c: f64) -> Check {
    let rules = rules();
    let base = prioritize(findings, assets, &rules, w);
    let by_severity = prioritize(findings, assets, &rules, &w.scaled_severity(c));
    let by_family = prioritize(findings, assets, &rules, &w.scaled_family(c));
    prop_assert_eq!(order(&base), order(&by_severity));
    prop_assert_eq!(order(&base), order(&by_family));
    Ok(())
}

pub fn false_positive_removes_exactly_one(
    findings: &[ConsolidatedFinding],
    assets: &[Asset],
    w: &PriorityWeights,
    pick: prop::sample::Index,
) -> Check {
    let rules = rules();
    let before = prioritize(findings, assets, &rules, w);
    if before.ranked.is_empty() {
        return Err(TestCaseError::reject("nothing ranked"));
    }
    let target = before.ranked[pick.index(before.ranked.len())].finding_id.clone();
    let mut marked = findings.to_vec();
    marked.iter_mut().find(|f| f.id == target).unwrap().verdict = Verdict::FalsePositive;
    let after = prioritize(&marked, assets, &rules, w);

    let mut expected = scores(&before);
    expected.remove(&target);
    prop_assert_eq!(scores(&after), expected);
    prop_assert!(after.impacts.iter().all(|i| i.finding_id != target));
    Ok(())
}

pub fn rejecting_an_asset_never_raises_a_score(
    findings: &[ConsolidatedFinding],
    assets: &[Asset],
    w: &PriorityWeights,
    pick: prop::sample::Index,
) -> Check {
    let rules = rules();
    let accepted: Vec<usize> = (0..assets.len()).filter(|&i| assets[i].state == AssetState::Accepted).collect();
    if accepted.is_empty() {
        return Err(TestCaseError::reject("no accepted asset"));
    }
    let before = prioritize(findings, assets, &rules, w);
    let mut rejected = assets.to_vec();
    rejected[accepted[pick.index(accepted.len())]].state = AssetState::Rejected;
    let after = prioritize(findings, &rejected, &rules, w);
    let before = scores(&before);
    for (id, score) in scores(&after) {
        prop_assert!(score <= before[id], "{} rose from {} to {}", id, before[id], score);
    }
    Ok(())
}

// -- session --------------------------------------------------------------

pub fn base_session() -> &'static TriageSession {
    static BASE: OnceLock<TriageSession> = OnceLock::new();
    BASE.get_or_init(a2_session)
}

/// Event templates resolved against the current session by index.
#[derive(Debug, Clone)]
pub enum Template {
    Decide(prop::sample::Index, bool),
    Verdict(prop::sample::Index, Verdict),
    Manual(&'static str, Vec<AssetFamily>, u8),
    Criticality(prop::sample::Index, u8),
    Note(String),
}

pub fn template() -> impl Strategy<Value = Template> {
    prop_oneof![
        4 => (any::<prop::sample::Index>(), any::<bool>()).prop_map(|(i, a)| Template::Decide(i, a)),
        3 => (any::<prop::sample::Index>(), prop::sample::select(vec![Verdict::Unverified, Verdict::Verified, Verdict::FalsePositive]))
            .prop_map(|(i, v)| Template::Verdict(i, v)),
        1 => (
            prop::sample::select(vec!["UPI handle", "transaction history", "", "PIN"]),
            prop::sample::subsequence(AssetFamily::ALL.to_vec(), 0..=3),
            1u8..=3,
        )
            .prop_map(|(n, f, c)| Template::Manual(n, f, c)),
        1 => (any::<prop::sample::Index>(), 1u8..=3).prop_map(|(i, c)| Template::Criticality(i, c)),
        1 => "[a-z ]{0,12}".prop_map(Template::Note),
    ]
}

pub fn templates() -> impl Strategy<Value = Vec<Template>> {
    prop::collection::vec(template(), 0..12)
}

pub fn resolve(session: &TriageSession, t: &Template) -> SessionEvent {
    match t {
        Template::Decide(i, accept) => SessionEvent::AssetDecision {
            asset_id: session.assets[i.index(session.assets.len())].asset.id.clone(),
            state: if *accept { AssetDecision::Accepted } else { AssetDecision::Rejected },
        },
        Template::Verdict(i, verdict) => SessionEvent::FindingVerdict {
            finding_id: session.findings[i.index(session.findings.len())].id.clone(),
            verdict: *verdict,
        },
        Template::Manual(name, families, c) => SessionEvent::ManualAsset {
            name: (*name).into(),
            families: FamilySet::of(families),
            criticality: Criticality::new(*c).unwrap(),
        },
        Template::Criticality(i, c) => SessionEvent::AssetCriticality {
            asset_id: session.assets[i.index(session.assets.len())].asset.id.clone(),
            criticality: Criticality::new(*c).unwrap(),
        },
        Template::Note(text) => SessionEvent::Note { text: text.clone() },
    }
}

/// Applies each template in turn, skipping events the session rejects.
pub fn drive(templates: &[Template]) -> TriageSession {
    let mut state = base_session().clone();
    for (n, t) in templates.iter().enumerate() {
        let event = resolve(&state, t);
        if let Ok(next) = apply_event(&state, event, at(n as u32)) {
            state = next;
        }
    }
    state
}

pub fn replay_reproduces_current_state(templates: &[Template]) -> Check {
    let state = drive(templates);
    prop_assert_eq!(&replay(base_session(), &state.events).unwrap(), &state);
    prop_assert_eq!(state.prioritization.clone(), state.derive_prioritization());
    Ok(())
}

pub fn save_load_round_trip_is_identity(templates: &[Template]) -> Check {
    let state = drive(templates);
    let bytes = save_session(&state);
    let loaded = load_session(&bytes).unwrap();
    prop_assert_eq!(&loaded, &state);
    prop_assert_eq!(save_session(&loaded), bytes);
    Ok(())
}
