use serde::{Deserialize, Serialize};

use crate::gateway::BackendProfile;
use crate::prompts::CodegenOptions;
use crate::runner::RunnerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Fix rounds allowed in each automatic loop (unit, system).
    pub max_auto_iterations: u32,
    /// Manual feedback rounds before the best candidate is finalized.
    pub max_manual_rounds: u32,
    pub design_review_enabled: bool,
    #[serde(flatten)]
    pub runner: RunnerConfig,
    pub codegen: CodegenOptions,
    pub backend: BackendProfile,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_auto_iterations: 5,
            max_manual_rounds: 5,
            design_review_enabled: false,
            runner: RunnerConfig::default(),
            codegen: CodegenOptions::default(),
            backend: BackendProfile::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_auto_iterations == 0 {
            return Err("max_auto_iterations must be at least 1".into());
        }
        if self.max_manual_rounds == 0 {
            return Err("max_manual_rounds must be at least 1".into());
        }
        self.runner.validate()
    }
}
