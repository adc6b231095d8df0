//! Parsers for exported analyzer reports, AndroidManifest XML, and app profiles.
//!
//! Each analyzer adapter reads the interchange format documented in
//! `docs/formats.md`:
//!
//! ```json
//! {"tool": "mobsf", "tool_version": "3.4",
//!  "findings": [{"native_id": "android_logging", "severity": "info",
//!                "file": "...", "class": "...", "method": "...", "line": 12,
//!                "message": "..."}]}
//! ```
//!
//! Every parser is a pure function of its input bytes.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::domain::{CodeLocation, Severity, ToolId};
use crate::error::{Error, Result};

/// Adapters with a severity table and a shipped category map.
pub const KNOWN_TOOLS: [&str; 4] = ["mobsf", "androbugs", "qark", "generic"];

pub const GENERIC_TOOL: &str = "generic";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RawFinding {
    pub native_id: String,
    #[serde(default)]
    pub severity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, rename = "class", skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    #[serde(default, rename = "method", skip_serializing_if = "Option::is_none")]
    pub method_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    #[serde(default)]
    pub message: String,
}

impl RawFinding {
    pub fn location(&self) -> CodeLocation {
        CodeLocation::from_fragments(
            self.file.clone(),
            self.class_name.clone(),
            self.method_name.clone(),
            self.line,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolReport {
    pub tool: ToolId,
    pub tool_version: String,
    pub raw_findings: Vec<RawFinding>,
}

#[derive(Deserialize)]
struct ReportPayload {
    tool: String,
    #[serde(default)]
    tool_version: String,
    findings: Vec<RawFinding>,
}

pub fn is_known_tool(tool: &ToolId) -> bool {
    KNOWN_TOOLS.contains(&tool.as_str())
}

pub fn parse_tool_report(tool: &ToolId, payload: &[u8]) -> Result<ToolReport> {
    if !is_known_tool(tool) {
        return Err(Error::UnknownTool(tool.to_string()));
    }
    let unsupported = |reason: String| Error::UnsupportedReport {
        tool: tool.clone(),
        reason,
    };
    let parsed: ReportPayload = serde_json::from_slice(payload).map_err(|e| unsupported(e.to_string()))?;
    if parsed.tool.trim().to_ascii_lowercase() != tool.as_str() {
        return Err(unsupported(format!("payload declares tool `{}`", parsed.tool)));
    }
    if let Some(bad) = parsed.findings.iter().position(|f| f.native_id.trim().is_empty()) {
        return Err(unsupported(format!("finding #{bad} has an empty native_id")));
    }
    Ok(ToolReport {
        tool: tool.clone(),
        tool_version: parsed.tool_version,
        raw_findings: parsed.findings,
    })
}

/// Maps a tool's severity label onto the four-level scale. Unknown labels
/// fall back to medium and log a warning.
pub fn map_severity(tool: &ToolId, label: &str) -> Severity {
    let label = label.trim().to_ascii_lowercase();
    let mapped = match tool.as_str() {
        // MobSF code analysis levels.
        "mobsf" => match label.as_str() {
            "high" | "critical" => Some(Severity::Critical),
            "warning" | "medium" => Some(Severity::High),
            "info" | "low" => Some(Severity::Medium),
            "secure" | "good" | "hotspot" => Some(Severity::Info),
            _ => None,
        },
        "androbugs" => match label.as_str() {
            "critical" => Some(Severity::Critical),
            "warning" => Some(Severity::High),
            "notice" => Some(Severity::Medium),
            "info" => Some(Severity::Info),
            _ => None,
        },
        "qark" => match label.as_str() {
            "vulnerability" | "high" => Some(Severity::Critical),
            "medium" | "warning" => Some(Severity::High),
            "low" => Some(Severity::Medium),
            "info" => Some(Severity::Info),
            _ => None,
        },
        _ => match label.as_str() {
            "critical" => Some(Severity::Critical),
            "high" => Some(Severity::High),
            "medium" => Some(Severity::Medium),
            "low" | "info" => Some(Severity::Info),
            _ => None,
        },
    };
    mapped.unwrap_or_else(|| {
        warn!("{tool}: unknown severity label `{label}`, using medium");
        Severity::Medium
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Activity,
    Service,
    Receiver,
    Provider,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExportedComponent {
    pub kind: ComponentKind,
    pub name: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub package: String,
    pub permissions: Vec<String>,
    pub exported_components: Vec<ExportedComponent>,
    pub debuggable: bool,
    pub allow_backup: bool,
}

impl ManifestInfo {
    /// Accepts either a fully-qualified permission or the bare
    /// `android.permission.` suffix.
    pub fn declares(&self, permission: &str) -> bool {
        let qualified = qualify_permission(permission);
        self.permissions.iter().any(|p| p == permission || *p == qualified)
    }
}

pub(crate) fn qualify_permission(name: &str) -> String {
    if name.contains('.') {
        name.to_string()
    } else {
        format!("android.permission.{name}")
    }
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, local: &str) -> Option<&'a str> {
    node.attributes().find(|a| a.name() == local).map(|a| a.value())
}

fn attr_true(node: roxmltree::Node<'_, '_>, local: &str) -> Option<bool> {
    attr(node, local).map(|v| v.trim().eq_ignore_ascii_case("true"))
}

/// Declares any prefix the document uses without binding it. Third-party
/// manifests regularly drop the `xmlns:android` declaration.
fn bind_unknown_prefixes(xml_text: &str) -> Result<String> {
    let mut patched = xml_text.to_string();
    for _ in 0..8 {
        match roxmltree::Document::parse(&patched) {
            Ok(_) => return Ok(patched),
            Err(roxmltree::Error::UnknownNamespace(prefix, _)) => {
                let uri = match prefix.as_str() {
                    "android" => "http://schemas.android.com/apk/res/android".to_string(),
                    "tools" => "http://schemas.android.com/tools".to_string(),
                    other => format!("urn:unbound:{other}"),
                };
                let Some(root_at) = patched.find("<manifest") else {
                    return Err(Error::MalformedManifest("missing <manifest> root".into()));
                };
                let insert_at = root_at + "<manifest".len();
                patched.insert_str(insert_at, &format!(" xmlns:{prefix}=\"{uri}\""));
            }
            Err(e) => return Err(Error::MalformedManifest(e.to_string())),
        }
    }
    Err(Error::MalformedManifest("too many unbound namespace prefixes".into()))
}

pub fn parse_manifest(xml_text: &str) -> Result<ManifestInfo> {
    match roxmltree::Document::parse(xml_text) {
        Ok(doc) => manifest_from_document(&doc),
        Err(roxmltree::Error::UnknownNamespace(..)) => {
            let patched = bind_unknown_prefixes(xml_text)?;
            let doc = roxmltree::Document::parse(&patched).map_err(|e| Error::MalformedManifest(e.to_string()))?;
            manifest_from_document(&doc)
        }
        Err(e) => Err(Error::MalformedManifest(e.to_string())),
    }
}

fn manifest_from_document(doc: &roxmltree::Document<'_>) -> Result<ManifestInfo> {
    let root = doc.root_element();
    if root.tag_name().name() != "manifest" {
        return Err(Error::MalformedManifest(format!(
            "root element is <{}>, expected <manifest>",
            root.tag_name().name()
        )));
    }

    let mut info = ManifestInfo {
        package: attr(root, "package").unwrap_or_default().to_string(),
        allow_backup: true,
        ..ManifestInfo::default()
    };
    let mut seen = BTreeSet::new();

    for child in root.children().filter(|n| n.is_element()) {
        match child.tag_name().name() {
            "uses-permission" | "uses-permission-sdk-23" | "uses-permission-sdk-m" => {
                if let Some(name) = attr(child, "name").map(str::trim).filter(|n| !n.is_empty()) {
                    if seen.insert(name.to_string()) {
                        info.permissions.push(name.to_string());
                    }
                }
            }
            "application" => {
                info.debuggable = attr_true(child, "debuggable").unwrap_or(false);
                info.allow_backup = attr_true(child, "allowBackup").unwrap_or(true);
                for component in child.children().filter(|n| n.is_element()) {
                    let kind = match component.tag_name().name() {
                        "activity" | "activity-alias" => ComponentKind::Activity,
                        "service" => ComponentKind::Service,
                        "receiver" => ComponentKind::Receiver,
                        "provider" => ComponentKind::Provider,
                        _ => continue,
                    };
                    let has_filter = component
                        .children()
                        .any(|n| n.is_element() && n.tag_name().name() == "intent-filter");
                    // Pre-S default: components with an intent filter are exported.
                    let exported = attr_true(component, "exported")
                        .unwrap_or(has_filter && kind != ComponentKind::Provider);
                    if exported {
                        let name = attr(component, "name").unwrap_or_default();
                        let name = match name.strip_prefix('.') {
                            Some(rest) if !info.package.is_empty() => format!("{}.{rest}", info.package),
                            _ => name.to_string(),
                        };
                        info.exported_components.push(ExportedComponent { kind, name });
                    }
                }
            }
            _ => {}
        }
    }
    Ok(info)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppProfile {
    pub app_id: String,
    pub display_name: String,
    pub description: String,
    pub domain_tag: String,
}

#[derive(Deserialize)]
struct ProfileFile {
    app_id: Option<String>,
    display_name: Option<String>,
    description: Option<String>,
    domain_tag: Option<String>,
}

pub(crate) fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads an app profile (TOML). `description` must be present but may be
/// empty; `display_name` defaults to the app id and `domain_tag` to
/// `general`.
pub fn load_app_profile(descriptor: &[u8]) -> Result<AppProfile> {
    let text = std::str::from_utf8(descriptor).map_err(|e| Error::MalformedProfile(e.to_string()))?;
    let file: ProfileFile = toml::from_str(text).map_err(|e| Error::MalformedProfile(e.to_string()))?;
    let app_id = file
        .app_id
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::MalformedProfile("missing app_id".into()))?;
    let description = file
        .description
        .ok_or_else(|| Error::MalformedProfile("missing description field".into()))?;
    Ok(AppProfile {
        display_name: file.display_name.unwrap_or_else(|| app_id.clone()),
        domain_tag: file
            .domain_tag
            .map(|t| t.trim().to_ascii_lowercase())
            .filter(|t| !t.is_empty())
            .unwrap_or_else(|| "general".into()),
        description: normalize_whitespace(&description),
        app_id,
    })
}
