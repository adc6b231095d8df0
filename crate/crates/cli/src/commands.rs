use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, Utc};
use serde::Serialize;

use sourcerer_core::assets::AssetLexicon;
use sourcerer_core::domain::{AssetFamily, AssetState, Criticality, FamilySet, FindingId, ToolId, Verdict};
use sourcerer_core::ingest::{load_app_profile, parse_manifest};
use sourcerer_core::mapping::{ImpactRules, PriorityWeights};
use sourcerer_core::mitigation::load_kb;
use sourcerer_core::report::{build_report, corpus_stats_with, render_report, AffectedBasis, ReportFormat};
use sourcerer_core::session::{
    apply_event, create_session, load_session, parse_reports, save_session, AssetDecision, DataBundle, SessionConfig,
    SessionEvent, SessionInputs, TriageSession,
};
use sourcerer_core::validate::validate_session;
use sourcerer_core::views::{assets_view, ranked_view};
use sourcerer_core::Error as CoreError;
use sourcerer_service::{serve as start_service, write_atomically, ServeOptions, ServiceError};

use crate::{AssetsArgs, CorpusArgs, Format, InitArgs, ReportArgs, ServeArgs, TriageArgs, ViewArgs};

/// 2 for invariant violations, 1 for everything else.
pub fn exit_code(error: &anyhow::Error) -> u8 {
    let invariant = error.chain().any(|cause| {
        matches!(cause.downcast_ref::<CoreError>(), Some(CoreError::InvalidSession(_)))
            || matches!(
                cause.downcast_ref::<ServiceError>(),
                Some(ServiceError::Core(CoreError::InvalidSession(_)))
            )
    });
    if invariant {
        2
    } else {
        1
    }
}

/// Event timestamp. Honours `SOURCE_DATE_EPOCH` for reproducible sessions.
fn now() -> Result<DateTime<Utc>> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(value) => {
            let seconds: i64 = value.trim().parse().context("SOURCE_DATE_EPOCH must be an integer")?;
            DateTime::from_timestamp(seconds, 0).ok_or_else(|| anyhow!("SOURCE_DATE_EPOCH is out of range"))
        }
        Err(_) => Ok(Utc::now()),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).with_context(|| format!("{} is not UTF-8", path.display()))
}

fn check(session: &TriageSession) -> Result<()> {
    let violations = validate_session(session);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CoreError::InvalidSession(violations).into())
    }
}

fn open(path: &Path) -> Result<TriageSession> {
    let session = load_session(&read(path)?).with_context(|| format!("loading session {}", path.display()))?;
    check(&session).with_context(|| format!("validating session {}", path.display()))?;
    Ok(session)
}

fn store(path: &Path, session: &TriageSession) -> Result<()> {
    check(session)?;
    write_atomically(path, &save_session(session))?;
    log::info!("wrote {} ({} events)", path.display(), session.events.len());
    Ok(())
}

/// Applies events in order, stopping at the first rejected one.
struct Editor {
    session: TriageSession,
    at: DateTime<Utc>,
    applied: usize,
}

impl Editor {
    fn new(session: TriageSession) -> Result<Self> {
        Ok(Editor {
            session,
            at: now()?,
            applied: 0,
        })
    }

    fn apply(&mut self, event: SessionEvent) -> Result<()> {
        let described = format!("{event:?}");
        self.session = apply_event(&self.session, event, self.at).with_context(|| format!("applying {described}"))?;
        self.applied += 1;
        Ok(())
    }

    fn asset_id(&self, key: &str) -> Result<sourcerer_core::domain::AssetId> {
        self.session.resolve_asset(key).cloned().ok_or_else(|| {
            CoreError::UnknownEntity {
                kind: "asset",
                id: key.to_owned(),
            }
            .into()
        })
    }

    fn decide(&mut self, key: &str, state: AssetDecision) -> Result<()> {
        let asset_id = self.asset_id(key)?;
        self.apply(SessionEvent::AssetDecision { asset_id, state })
    }

    /// Accepts every classified asset still awaiting a decision.
    fn accept_all_assets(&mut self) -> Result<()> {
        let pending: Vec<_> = self
            .session
            .assets
            .iter()
            .filter(|c| c.asset.state == AssetState::Candidate && !c.asset.families.is_unclassified())
            .map(|c| c.asset.id.clone())
            .collect();
        for asset_id in pending {
            self.apply(SessionEvent::AssetDecision {
                asset_id,
                state: AssetDecision::Accepted,
            })?;
        }
        Ok(())
    }

    /// Verifies every finding that has no verdict yet.
    fn auto_verify(&mut self) -> Result<()> {
        let pending: Vec<_> = self
            .session
            .findings
            .iter()
            .filter(|f| f.verdict == Verdict::Unverified)
            .map(|f| f.id.clone())
            .collect();
        for finding_id in pending {
            self.apply(SessionEvent::FindingVerdict {
                finding_id,
                verdict: Verdict::Verified,
            })?;
        }
        Ok(())
    }

    fn batch(&mut self, accept_all_assets: bool, auto_verify: bool) -> Result<()> {
        if accept_all_assets {
            self.accept_all_assets()?;
        }
        if auto_verify {
            self.auto_verify()?;
        }
        Ok(())
    }
}

fn split_pair<'a>(text: &'a str, what: &str) -> Result<(&'a str, &'a str)> {
    text.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| anyhow!("expected {what}, got `{text}`"))
}

/// Lowercase serde name of a unit enum value.
fn label<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn parse_label<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(text.trim().to_ascii_lowercase()))
        .map_err(|_| anyhow!("unknown {what} `{text}`"))
}

fn families_text(families: &FamilySet) -> String {
    if families.is_unclassified() {
        "unclassified".into()
    } else {
        families.iter().map(|f| label(&f)).collect::<Vec<_>>().join(",")
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Renders rows as aligned plain text or as a Markdown table.
fn table(headers: &[&str], rows: &[Vec<String>], markdown: bool) -> String {
    let mut out = String::new();
    if markdown {
        let _ = writeln!(out, "| {} |", headers.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(headers.len()));
        for row in rows {
            let cells: Vec<String> = row.iter().map(|c| c.replace('|', "\\|")).collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        return out;
    }
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_owned()
    };
    let _ = writeln!(out, "{}", line(headers.to_vec()));
    for row in rows {
        let _ = writeln!(out, "{}", line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn data_bundle(args: &InitArgs, domain: &str) -> Result<DataBundle> {
    let mut data = DataBundle::shipped()?;
    data.lexicon = match args.lexicon.as_deref() {
        Some(value) if Path::new(value).is_file() => {
            AssetLexicon::load(&read_text(Path::new(value))?)
                .with_context(|| format!("loading lexicon {value}"))?
                .for_domain(domain)
        }
        Some(tag) => data.lexicon.for_domain(tag),
        None => data.lexicon.for_domain(domain),
    };
    if let Some(path) = &args.kb {
        data.kb = load_kb(&read(path)?, &data.taxonomy).with_context(|| format!("loading {}", path.display()))?;
    }
    if let Some(path) = &args.weights {
        data.weights = PriorityWeights::load(&read_text(path)?).with_context(|| format!("loading {}", path.display()))?;
    }
    if let Some(path) = &args.rules {
        data.rules = ImpactRules::load(&read_text(path)?, &data.taxonomy)
            .with_context(|| format!("loading {}", path.display()))?;
    }
    Ok(data)
}

pub fn init(args: InitArgs) -> Result<()> {
    let path = &args.session.session;
    if path.exists() && !args.force {
        bail!("{} already exists; pass --force to replace it", path.display());
    }
    let profile = load_app_profile(&read(&args.profile)?).with_context(|| format!("loading {}", args.profile.display()))?;
    let manifest = match &args.manifest {
        Some(p) => Some(parse_manifest(&read_text(p)?).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let mut payloads = Vec::new();
    for spec in &args.reports {
        let (tool, file) = split_pair(spec, "TOOL=PATH")?;
        payloads.push((ToolId::from(tool), read(Path::new(file))?));
    }
    let reports = parse_reports(&payloads)?;
    let data = data_bundle(&args, &profile.domain_tag)?;
    let config = SessionConfig {
        threshold: args.threshold,
        granularity: args.granularity,
        record_timings: args.record_timings,
    };
    let inputs = SessionInputs {
        profile,
        manifest,
        reports,
    };
    let mut editor = Editor::new(create_session(inputs, config, &data)?)?;
    editor.batch(args.batch.accept_all_assets, args.batch.auto_verify)?;
    let session = editor.session;
    store(path, &session)?;

    if args.format == Format::Json {
        return print_json(&serde_json::json!({
            "session": path,
            "session_id": session.id,
            "assets": session.assets.len(),
            "findings": session.findings.len(),
            "residue": session.residue.len(),
            "quarantined": session.reports.iter().map(|r| r.quarantined.len()).sum::<usize>(),
            "events": session.events.len(),
        }));
    }
    let review = session.assets.iter().filter(|c| c.needs_review).count();
    let quarantined: usize = session.reports.iter().map(|r| r.quarantined.len()).sum();
    println!("session   {} -> {}", session.id, path.display());
    println!("assets    {} candidates, {review} need review", session.assets.len());
    println!(
        "findings  {} consolidated from {} tools ({} residue, {quarantined} quarantined)",
        session.findings.len(),
        session.reports.len(),
        session.residue.len()
    );
    if !session.events.is_empty() {
        println!("events    {} applied in batch mode", session.events.len());
    }
    Ok(())
}

fn parse_manual_asset(spec: &str) -> Result<SessionEvent> {
    let (name, rest) = split_pair(spec, "NAME=FAMILIES[:CRITICALITY]")?;
    let (families, criticality) = match rest.split_once(':') {
        Some((f, c)) => (f, Some(c)),
        None => (rest, None),
    };
    let families: FamilySet = families
        .split(',')
        .map(|f| parse_label::<AssetFamily>(f, "asset family"))
        .collect::<Result<_>>()?;
    let criticality = match criticality {
        Some(c) => Criticality::new(c.trim().parse().with_context(|| format!("criticality `{c}`"))?)?,
        None => Criticality::MEDIUM,
    };
    Ok(SessionEvent::ManualAsset {
        name: name.to_owned(),
        families,
        criticality,
    })
}

pub fn assets(args: AssetsArgs) -> Result<()> {
    let path = &args.session.session;
    let mut editor = Editor::new(open(path)?)?;
    for spec in &args.add {
        editor.apply(parse_manual_asset(spec)?)?;
    }
    for spec in &args.criticality {
        let (key, level) = split_pair(spec, "ASSET=LEVEL")?;
        let criticality = Criticality::new(level.parse().with_context(|| format!("criticality `{level}`"))?)?;
        let asset_id = editor.asset_id(key)?;
        editor.apply(SessionEvent::AssetCriticality { asset_id, criticality })?;
    }
    for key in &args.accept {
        editor.decide(key, AssetDecision::Accepted)?;
    }
    for key in &args.reject {
        editor.decide(key, AssetDecision::Rejected)?;
    }
    if args.accept_all_assets {
        editor.accept_all_assets()?;
    }
    if editor.applied > 0 {
        store(path, &editor.session)?;
    }
    let session = editor.session;

    if args.format == Format::Json {
        return print_json(&assets_view(&session));
    }
    let rows: Vec<Vec<String>> = session
        .assets
        .iter()
        .map(|c| {
            vec![
                label(&c.asset.state),
                families_text(&c.asset.families),
                c.asset.criticality.get().to_string(),
                c.asset.name.clone(),
                c.asset.id.to_string(),
            ]
        })
        .collect();
    print!("{}", table(&["state", "families", "crit", "name", "id"], &rows, args.format == Format::Markdown));
    Ok(())
}

pub fn consolidate(args: ViewArgs) -> Result<()> {
    let session = open(&args.session.session)?;
    let report = build_report(&session);
    let quarantined = &report.quarantined;
    if args.format == Format::Json {
        return print_json(&serde_json::json!({
            "threshold": session.config.threshold,
            "granularity": session.config.granularity,
            "findings": session.findings,
            "residue": session.residue,
            "quarantined": quarantined,
            "reduction": report.reduction,
        }));
    }
    let markdown = args.format == Format::Markdown;
    println!(
        "{} findings kept at threshold {} ({} granularity)\n",
        session.findings.len(),
        session.config.threshold,
        session.config.granularity
    );
    let rows: Vec<Vec<String>> = session
        .findings
        .iter()
        .map(|f| {
            vec![
                f.id.to_string(),
                f.category.to_string(),
                label(&f.severity),
                f.support.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(","),
                label(&f.verdict),
                f.locations.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" "),
            ]
        })
        .collect();
    print!("{}", table(&["id", "category", "severity", "tools", "verdict", "locations"], &rows, markdown));
    if !session.residue.is_empty() {
        println!("\nbelow threshold: {}", session.residue.len());
        let rows: Vec<Vec<String>> = session
            .residue
            .iter()
            .map(|r| vec![r.tool.to_string(), r.category.to_string(), r.location.to_string()])
            .collect();
        print!("{}", table(&["tool", "category", "location"], &rows, markdown));
    }
    if !quarantined.is_empty() {
        println!("\nquarantined (no category mapping): {}", quarantined.len());
    }
    println!("\nwarning reduction vs. each tool ({} prioritized categories):", report.reduction.prioritized_count);
    let rows: Vec<Vec<String>> = report
        .reduction
        .per_tool
        .iter()
        .map(|(tool, r)| {
            vec![
                tool.to_string(),
                r.category_count.to_string(),
                r.reduction.map_or_else(|| "n/a".into(), |x| format!("{:.1}%", x * 100.0)),
            ]
        })
        .collect();
    print!("{}", table(&["tool", "categories", "reduction"], &rows, markdown));
    Ok(())
}

pub fn triage(args: TriageArgs) -> Result<()> {
    let path = &args.session.session;
    let mut editor = Editor::new(open(path)?)?;
    for spec in &args.verdicts {
        let (id, verdict) = split_pair(spec, "FINDING=VERDICT")?;
        editor.apply(SessionEvent::FindingVerdict {
            finding_id: FindingId::from(id),
            verdict: parse_label(verdict, "verdict")?,
        })?;
    }
    if let Some(text) = &args.note {
        editor.apply(SessionEvent::Note { text: text.clone() })?;
    }
    editor.batch(args.batch.accept_all_assets, args.batch.auto_verify)?;
    if editor.applied > 0 {
        store(path, &editor.session)?;
    }
    let view = ranked_view(&editor.session);
    if args.format == Format::Json {
        return print_json(&view);
    }
    let rows: Vec<Vec<String>> = view
        .findings
        .iter()
        .map(|f| {
            let assets: Vec<&str> = f.row.impacts.iter().map(|i| i.asset_name.as_str()).collect();
            vec![
                f.rank.to_string(),
                format!("{:.2}", f.row.score),
                f.row.category.to_string(),
                label(&f.row.severity),
                label(&f.row.verdict),
                if assets.is_empty() { "-".into() } else { assets.join(", ") },
                f.row.finding_id.to_string(),
            ]
        })
        .collect();
    print!(
        "{}",
        table(&["rank", "score", "category", "severity", "verdict", "assets", "id"], &rows, args.format == Format::Markdown)
    );
    if !view.needs_review.is_empty() {
        println!("\n{} finding(s) have no impact on an accepted asset and need review", view.needs_review.len());
    }
    if !view.false_positives.is_empty() {
        println!("{} finding(s) marked false positive", view.false_positives.len());
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let session = open(&args.session.session)?;
    let format = match args.format {
        Format::Json => ReportFormat::Json,
        Format::Markdown | Format::Text => ReportFormat::Markdown,
    };
    let bytes = render_report(&session, format)?;
    match &args.output {
        Some(path) => write_atomically(path, &bytes)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(())
}

pub fn corpus_stats(args: CorpusArgs) -> Result<()> {
    let sessions = args.sessions.iter().map(|p| open(p)).collect::<Result<Vec<_>>>()?;
    let basis = if args.pre_triage {
        AffectedBasis::PreTriage
    } else {
        AffectedBasis::PostTriage
    };
    let stats = corpus_stats_with(&sessions, basis)?;
    match args.format {
        Format::Json => print_json(&stats),
        Format::Markdown | Format::Text => {
            print!("{}", stats.render_markdown());
            Ok(())
        }
    }
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let options = ServeOptions {
            addr: args.bind,
            ui_dir: args.ui_dir.clone(),
            allow_remote: args.allow_remote,
            ..ServeOptions::new(&args.session.session)
        };
        let handle = start_service(options).await?;
        println!("serving {} on http://{}", args.session.session.display(), handle.local_addr());
        if args.ui_dir.is_some() {
            println!("triage UI at http://{}/ui/", handle.local_addr());
        }
        tokio::signal::ctrl_c().await?;
        log::info!("shutting down");
        handle.shutdown().await?;
        Ok(())
    })
}
