use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use caseloop_core::gateway::{BackendProfile, GatewayMode};
use caseloop_core::session::SessionConfig;
use serde::{Deserialize, Serialize};

use crate::OpError;

/// Where timestamps come from. `stepping` makes every command start its
/// clock at `start_ms` and advance `step_ms` per reading, so repeated runs
/// produce identical session ids and logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ClockConfig {
    #[default]
    System,
    Stepping {
        start_ms: u64,
        step_ms: u64,
    },
}

/// The config file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub sessions_dir: PathBuf,
    pub bind: String,
    /// Environment variable holding the API bearer token; the API is open
    /// when it is unset.
    pub api_token_env: String,
    pub default_profile: Option<String>,
    pub clock: ClockConfig,
    pub session: SessionConfig,
    pub profiles: BTreeMap<String, BackendProfile>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            sessions_dir: PathBuf::from("sessions"),
            bind: "127.0.0.1:8080".into(),
            api_token_env: "CASELOOP_API_TOKEN".into(),
            default_profile: None,
            clock: ClockConfig::System,
            session: SessionConfig::default(),
            profiles: BTreeMap::new(),
        }
    }
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub profile: Option<String>,
    pub cassette: Option<PathBuf>,
    pub mode: Option<GatewayMode>,
    pub sessions_dir: Option<PathBuf>,
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self, OpError> {
        toml::from_str(text).map_err(|e| OpError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, OpError> {
        let text = std::fs::read_to_string(path).map_err(|e| OpError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies command-line settings, resolving the backend profile into
    /// `session.backend`.
    pub fn resolve(mut self, overrides: &Overrides) -> Result<Self, OpError> {
        if let Some(dir) = &overrides.sessions_dir {
            self.sessions_dir = dir.clone();
        }
        let name = overrides.profile.clone().or_else(|| self.default_profile.clone());
        if let Some(name) = name {
            self.session.backend = self
                .profiles
                .get(&name)
                .cloned()
                .ok_or_else(|| OpError::Config(format!("no backend profile named `{name}`")))?;
        }
        if let Some(cassette) = &overrides.cassette {
            self.session.backend.cassette_path = Some(cassette.clone());
            if overrides.mode.is_none() && self.session.backend.mode == GatewayMode::Live {
                self.session.backend.mode = GatewayMode::Replay;
            }
        }
        if let Some(mode) = overrides.mode {
            self.session.backend.mode = mode;
        }
        self.session.validate().map_err(OpError::Config)?;
        Ok(self)
    }
}
