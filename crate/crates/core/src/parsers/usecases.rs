use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{extract_json, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    HumanEdited,
    HumanAdded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseCase {
    pub description: String,
    pub provenance: Provenance,
}

/// Numbered requirements in ascending id order, plus how many accepted human
/// edit batches produced this version.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseCaseSet {
    entries: BTreeMap<u32, UseCase>,
    revision: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum UseCaseEdit {
    Modify { id: u32, description: String },
    Add { description: String },
    Delete { id: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EditError {
    #[error("use case {0} does not exist")]
    UnknownId(u32),
    #[error("edit {0} has an empty description")]
    EmptyDescription(usize),
    #[error("edits would leave no use cases")]
    WouldEmpty,
}

impl UseCaseSet {
    pub fn from_descriptions<I, S>(descriptions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = descriptions
            .into_iter()
            .enumerate()
            .map(|(i, d)| (i as u32 + 1, UseCase { description: d.into(), provenance: Provenance::Generated }))
            .collect();
        Self { entries, revision: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn revision(&self) -> u32 {
        self.revision
    }

    pub fn get(&self, id: u32) -> Option<&UseCase> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: u32) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &UseCase)> {
        self.entries.iter().map(|(id, uc)| (*id, uc))
    }

    pub fn descriptions(&self) -> Vec<&str> {
        self.entries.values().map(|u| u.description.as_str()).collect()
    }

    /// Applies one edit batch atomically, returning the next revision. An
    /// empty batch returns an identical set.
    pub fn apply_edits(&self, edits: &[UseCaseEdit]) -> Result<UseCaseSet, EditError> {
        if edits.is_empty() {
            return Ok(self.clone());
        }
        let mut entries = self.entries.clone();
        for (i, edit) in edits.iter().enumerate() {
            match edit {
                UseCaseEdit::Modify { id, description } => {
                    if description.trim().is_empty() {
                        return Err(EditError::EmptyDescription(i));
                    }
                    let entry = entries.get_mut(id).ok_or(EditError::UnknownId(*id))?;
                    if entry.description != *description {
                        entry.description = description.clone();
                        if entry.provenance == Provenance::Generated {
                            entry.provenance = Provenance::HumanEdited;
                        }
                    }
                }
                UseCaseEdit::Add { description } => {
                    if description.trim().is_empty() {
                        return Err(EditError::EmptyDescription(i));
                    }
                    let next = entries.keys().next_back().map_or(1, |k| k + 1);
                    entries
                        .insert(next, UseCase { description: description.clone(), provenance: Provenance::HumanAdded });
                }
                UseCaseEdit::Delete { id } => {
                    entries.remove(id).ok_or(EditError::UnknownId(*id))?;
                }
            }
        }
        if entries.is_empty() {
            return Err(EditError::WouldEmpty);
        }
        Ok(UseCaseSet { entries, revision: self.revision + 1 })
    }

    /// The numbered JSON object form shown to the model, e.g.
    /// `{"1": "User can view the GUI."}`.
    pub fn to_prompt_json(&self) -> String {
        if self.entries.is_empty() {
            return "{}".to_string();
        }
        let body: Vec<String> = self
            .entries
            .iter()
            .map(|(id, uc)| format!("  \"{id}\": {}", Value::String(uc.description.clone())))
            .collect();
        format!("{{\n{}\n}}", body.join(",\n"))
    }
}

pub fn parse_use_cases(text: &str) -> Result<UseCaseSet, ParseError> {
    let fragment = extract_json(text)?;
    let Value::Object(map) = fragment.value else {
        return Err(ParseError::MalformedUseCases("expected a JSON object".into()));
    };
    if map.is_empty() {
        return Err(ParseError::MalformedUseCases("no use cases in object".into()));
    }
    let mut entries = BTreeMap::new();
    for (key, value) in map {
        let id: u32 =
            key.trim().parse().map_err(|_| ParseError::MalformedUseCases(format!("key `{key}` is not a number")))?;
        let Value::String(description) = value else {
            return Err(ParseError::MalformedUseCases(format!("use case {key} is not text")));
        };
        let description = description.trim().to_string();
        if description.is_empty() {
            return Err(ParseError::MalformedUseCases(format!("use case {key} is empty")));
        }
        let uc = UseCase { description, provenance: Provenance::Generated };
        if entries.insert(id, uc).is_some() {
            return Err(ParseError::MalformedUseCases(format!("use case {id} listed twice")));
        }
    }
    Ok(UseCaseSet { entries, revision: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exemplar_object() {
        let set = parse_use_cases(r#"{"1": "User can view the GUI."}"#).unwrap();
        assert_eq!(set.descriptions(), vec!["User can view the GUI."]);
        assert_eq!(set.revision(), 0);
        assert_eq!(set.get(1).unwrap().provenance, Provenance::Generated);
    }

    #[test]
    fn ascending_order_regardless_of_source_order() {
        let set = parse_use_cases(r#"{"2":"b","1":"a","10":"c"}"#).unwrap();
        assert_eq!(set.ids().collect::<Vec<_>>(), vec![1, 2, 10]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(parse_use_cases("{}"), Err(ParseError::MalformedUseCases(_))));
        assert!(matches!(parse_use_cases(r#"{"1": 3}"#), Err(ParseError::MalformedUseCases(_))));
        assert!(matches!(parse_use_cases(r#"{"one": "x"}"#), Err(ParseError::MalformedUseCases(_))));
        assert!(matches!(parse_use_cases(r#"{"1": "  "}"#), Err(ParseError::MalformedUseCases(_))));
        assert!(matches!(parse_use_cases(r#"{"1": "a", "01": "b"}"#), Err(ParseError::MalformedUseCases(_))));
        assert_eq!(parse_use_cases("just prose"), Err(ParseError::NoJsonFound));
    }

    #[test]
    fn edits_track_provenance_and_revision() {
        let set = UseCaseSet::from_descriptions(["a", "b"]);
        let next = set
            .apply_edits(&[
                UseCaseEdit::Modify { id: 2, description: "b2".into() },
                UseCaseEdit::Add { description: "c".into() },
                UseCaseEdit::Delete { id: 1 },
            ])
            .unwrap();
        assert_eq!(next.revision(), 1);
        assert_eq!(next.ids().collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(next.get(2).unwrap().provenance, Provenance::HumanEdited);
        assert_eq!(next.get(3).unwrap().provenance, Provenance::HumanAdded);
        assert_eq!(set.apply_edits(&[]).unwrap(), set);
    }

    #[test]
    fn bad_edits_rejected() {
        let set = UseCaseSet::from_descriptions(["a"]);
        assert_eq!(
            set.apply_edits(&[UseCaseEdit::Modify { id: 9, description: "x".into() }]),
            Err(EditError::UnknownId(9))
        );
        assert_eq!(set.apply_edits(&[UseCaseEdit::Delete { id: 1 }]), Err(EditError::WouldEmpty));
        assert_eq!(
            set.apply_edits(&[UseCaseEdit::Add { description: " ".into() }]),
            Err(EditError::EmptyDescription(0))
        );
    }

    #[test]
    fn prompt_json_round_trips() {
        let set = UseCaseSet::from_descriptions(["say \"hi\"", "two"]);
        let text = set.to_prompt_json();
        assert!(text.starts_with("{\n  \"1\": \"say \\\"hi\\\"\""));
        assert_eq!(parse_use_cases(&text).unwrap(), set);
    }

    proptest! {
        #[test]
        fn order_preserved_for_any_key_permutation(
            ids in proptest::collection::btree_set(1u32..500, 1..12),
            seed in any::<u64>(),
        ) {
            let mut keys: Vec<u32> = ids.iter().copied().collect();
            // deterministic shuffle
            let n = keys.len();
            for i in 0..n {
                let j = ((seed >> (i % 32)) as usize + i * 7) % n;
                keys.swap(i, j);
            }
            let body: Vec<String> = keys.iter().map(|k| format!("\"{k}\": \"uc {k}\"")).collect();
            let set = parse_use_cases(&format!("{{{}}}", body.join(", "))).unwrap();
            prop_assert_eq!(set.ids().collect::<Vec<_>>(), ids.into_iter().collect::<Vec<_>>());
        }
    }
}
