use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::parsers::{UseCaseEdit, UseCaseSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UseCaseVerdict {
    Pass,
    Fail,
}

/// One manual-validation submission. Use cases missing from
/// `per_use_case` count as not passed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualFeedback {
    #[serde(default)]
    pub per_use_case: BTreeMap<u32, UseCaseVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_use_cases: Option<Vec<UseCaseEdit>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_use_cases: Option<Vec<String>>,
}

/// Where a submission sends the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "snake_case")]
pub enum Route {
    Complete,
    BugFix { problem: String },
    Redesign { edits: Vec<UseCaseEdit> },
    BudgetExhausted,
}

impl ManualFeedback {
    pub fn all_pass(ids: impl IntoIterator<Item = u32>) -> Self {
        Self { per_use_case: ids.into_iter().map(|id| (id, UseCaseVerdict::Pass)).collect(), ..Self::default() }
    }

    pub fn with_error(mut self, message: impl Into<String>) -> Self {
        self.error_message = Some(message.into());
        self
    }

    fn has_error(&self) -> bool {
        self.error_message.is_some()
    }

    fn has_revision(&self) -> bool {
        self.revised_use_cases.as_ref().is_some_and(|e| !e.is_empty())
            || self.new_use_cases.as_ref().is_some_and(|n| !n.is_empty())
    }

    pub fn validate(&self, use_cases: &UseCaseSet) -> Result<(), String> {
        if self.per_use_case.is_empty() && !self.has_error() && !self.has_revision() {
            return Err("feedback is empty".into());
        }
        if let Some(msg) = &self.error_message {
            if msg.trim().is_empty() {
                return Err("error message is blank".into());
            }
            if self.has_revision() {
                return Err("an error message and use-case revisions cannot be submitted together".into());
            }
        }
        if let Some(id) = self.per_use_case.keys().find(|id| !use_cases.contains(**id)) {
            return Err(format!("use case {id} does not exist"));
        }
        if self.new_use_cases.iter().flatten().any(|d| d.trim().is_empty()) {
            return Err("a new use case is blank".into());
        }
        Ok(())
    }

    /// Revisions and additions as one edit batch.
    pub fn edits(&self) -> Vec<UseCaseEdit> {
        let mut edits = self.revised_use_cases.clone().unwrap_or_default();
        edits.extend(self.new_use_cases.iter().flatten().map(|d| UseCaseEdit::Add { description: d.clone() }));
        edits
    }

    pub fn passes(&self) -> usize {
        self.per_use_case.values().filter(|v| **v == UseCaseVerdict::Pass).count()
    }

    fn every_case_passes(&self, use_cases: &UseCaseSet) -> bool {
        use_cases.ids().all(|id| self.per_use_case.get(&id) == Some(&UseCaseVerdict::Pass))
    }
}

/// The manual-validation routing table. Assumes `fb` passed validation.
pub fn route_feedback(
    fb: &ManualFeedback,
    use_cases: &UseCaseSet,
    manual_rounds: u32,
    max_manual_rounds: u32,
) -> Route {
    if !fb.has_error() && !fb.has_revision() && fb.every_case_passes(use_cases) {
        return Route::Complete;
    }
    if manual_rounds >= max_manual_rounds {
        return Route::BudgetExhausted;
    }
    if let Some(msg) = &fb.error_message {
        return Route::BugFix { problem: msg.clone() };
    }
    if fb.has_revision() {
        return Route::Redesign { edits: fb.edits() };
    }
    let failing: Vec<String> = use_cases
        .iter()
        .filter(|(id, _)| fb.per_use_case.get(id) != Some(&UseCaseVerdict::Pass))
        .map(|(id, uc)| format!("{id}. {}", uc.description))
        .collect();
    Route::BugFix { problem: format!("The following use cases did not pass manual testing:\n{}", failing.join("\n")) }
}
