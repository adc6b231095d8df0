//! `sourcerer`: run the three triage phases over an app's store listing,
//! manifest and analyzer reports, and steer the resulting session.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sourcerer_core::reconcile::MatchGranularity;

pub const DEFAULT_SESSION: &str = "sourcerer-session.json";

#[derive(Debug, Parser)]
#[command(name = "sourcerer", version, about = "Asset-centric security triage for Android apps")]
struct Cli {
    /// More log output; repeat for debug logging.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run all phases and write a new session file.
    Init(InitArgs),
    /// List assets and record accept/reject decisions.
    Assets(AssetsArgs),
    /// Show consolidated findings, residue and warning reduction.
    Consolidate(ViewArgs),
    /// Record verdicts and show the ranked findings.
    Triage(TriageArgs),
    /// Render the three-column security report.
    Report(ReportArgs),
    /// Aggregate category and permission prevalence over many sessions.
    CorpusStats(CorpusArgs),
    /// Serve a session over local HTTP for the triage UI.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Markdown,
}

#[derive(Debug, Args)]
pub struct SessionArg {
    #[arg(long, default_value = DEFAULT_SESSION)]
    pub session: PathBuf,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Accept every classified candidate asset.
    #[arg(long)]
    pub accept_all_assets: bool,
    /// Mark every unverified finding as verified.
    #[arg(long)]
    pub auto_verify: bool,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// App profile (TOML with app_id, display_name, description, domain_tag).
    #[arg(long)]
    pub profile: PathBuf,
    /// AndroidManifest.xml in plain-text form.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Analyzer report as TOOL=PATH; repeat for each tool.
    #[arg(long = "report", value_name = "TOOL=PATH")]
    pub reports: Vec<String>,
    /// Number of tools that must agree for a finding to be kept.
    #[arg(long, default_value_t = 2)]
    pub threshold: usize,
    /// Location matching level: method, class or file.
    #[arg(long, default_value = "class")]
    pub granularity: MatchGranularity,
    /// Domain tag or lexicon file; defaults to the profile's domain tag.
    #[arg(long)]
    pub lexicon: Option<String>,
    /// Mitigation knowledge base file.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Priority weights file.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Impact rules file.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Store per-phase wall-clock timings in the session.
    #[arg(long)]
    pub record_timings: bool,
    /// Replace an existing session file.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub session: SessionArg,
    #[command(flatten)]
    pub batch: BatchArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AssetsArgs {
    #[command(flatten)]
    pub session: SessionArg,
    /// Accept an asset by id or name; repeatable.
    #[arg(long, value_name = "ASSET")]
    pub accept: Vec<String>,
    /// Reject an asset by id or name; repeatable.
    #[arg(long, value_name = "ASSET")]
    pub reject: Vec<String>,
    /// Add an accepted asset as NAME=FAMILIES[:CRITICALITY], e.g.
    /// `loyalty points=user,application:2`.
    #[arg(long = "add", value_name = "SPEC")]
    pub add: Vec<String>,
    /// Set criticality as ASSET=1|2|3; repeatable.
    #[arg(long = "criticality", value_name = "ASSET=LEVEL")]
    pub criticality: Vec<String>,
    #[arg(long)]
    pub accept_all_assets: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ViewArgs {
    #[command(flatten)]
    pub session: SessionArg,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TriageArgs {
    #[command(flatten)]
    pub session: SessionArg,
    #[command(flatten)]
    pub batch: BatchArgs,
    /// Set a verdict as FINDING=verified|false-positive|unverified.
    #[arg(long = "verdict", value_name = "FINDING=VERDICT")]
    pub verdicts: Vec<String>,
    /// Append a free-text note to the event log.
    #[arg(long)]
    pub note: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub session: SessionArg,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    pub format: Format,
    /// Write to a file instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Session files; repeatable.
    #[arg(long = "session", required = true)]
    pub sessions: Vec<PathBuf>,
    /// Count every consolidated finding, including false positives.
    #[arg(long)]
    pub pre_triage: bool,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub session: SessionArg,
    #[arg(long, default_value = "127.0.0.1:8750")]
    pub bind: SocketAddr,
    /// Permit a non-loopback bind address. The API has no authentication.
    #[arg(long)]
    pub allow_remote: bool,
    /// Directory holding the built triage UI, served at /ui/.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are input errors; exit code 2 is reserved for
            // invariant violations.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Init(args) => commands::init(args),
        Command::Assets(args) => commands::assets(args),
        Command::Consolidate(args) => commands::consolidate(args),
        Command::Triage(args) => commands::triage(args),
        Command::Report(args) => commands::report(args),
        Command::CorpusStats(args) => commands::corpus_stats(args),
        Command::Serve(args) => commands::serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
