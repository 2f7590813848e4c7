use serde::{Deserialize, Serialize};

/// `git describe`-style identifier of the producing build.
pub fn version_string() -> String {
    match option_env!("UWMMSE_GIT_DESCRIBE") {
        Some(d) if !d.is_empty() => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Embedded in every emitted artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// Effective run configuration, after flag overrides.
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(config: &impl Serialize) -> Self {
        Self {
            tool: "uwmmse".into(),
            version: version_string(),
            config: serde_json::to_value(config).expect("config serializes"),
        }
    }

    /// One-line form for CSV comment headers.
    pub fn csv_comment(&self) -> String {
        format!(
            "# {} {} config={}\n",
            self.tool,
            self.version,
            serde_json::to_string(&self.config).expect("value serializes")
        )
    }
}
