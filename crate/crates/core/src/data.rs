//! Study records and dataset validation.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Arm {
    Intervention,
    Control,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Intervention => f.write_str("intervention"),
            Arm::Control => f.write_str("control"),
        }
    }
}

/// One study's 2x2 table. Counts are exact integers.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StudyRecord {
    pub id: String,
    pub label: String,
    pub intervention_events: u64,
    pub intervention_nonevents: u64,
    pub control_events: u64,
    pub control_nonevents: u64,
}

impl StudyRecord {
    pub fn new(
        id: impl Into<String>,
        intervention_events: u64,
        intervention_nonevents: u64,
        control_events: u64,
        control_nonevents: u64,
    ) -> Self {
        let id = id.into();
        Self {
            label: id.clone(),
            id,
            intervention_events,
            intervention_nonevents,
            control_events,
            control_nonevents,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn intervention_total(&self) -> u64 {
        self.intervention_events + self.intervention_nonevents
    }

    pub fn control_total(&self) -> u64 {
        self.control_events + self.control_nonevents
    }

    pub fn total(&self) -> u64 {
        self.intervention_total() + self.control_total()
    }

    pub fn total_events(&self) -> u64 {
        self.intervention_events + self.control_events
    }

    /// True when any of the four cells is zero.
    pub fn has_zero_cell(&self) -> bool {
        self.intervention_events == 0
            || self.intervention_nonevents == 0
            || self.control_events == 0
            || self.control_nonevents == 0
    }

    /// The same study with the two arms exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            id: self.id.clone(),
            label: self.label.clone(),
            intervention_events: self.control_events,
            intervention_nonevents: self.control_nonevents,
            control_events: self.intervention_events,
            control_nonevents: self.intervention_nonevents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetaDataset {
    pub studies: Vec<StudyRecord>,
    pub outcome_name: String,
    pub intervention_name: String,
    pub control_name: String,
}

impl MetaDataset {
    pub fn new(studies: Vec<StudyRecord>) -> Self {
        Self {
            studies,
            outcome_name: String::from("event"),
            intervention_name: String::from("intervention"),
            control_name: String::from("control"),
        }
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    /// Every study with its arms exchanged (names swapped too).
    pub fn swapped(&self) -> Self {
        Self {
            studies: self.studies.iter().map(StudyRecord::swapped).collect(),
            outcome_name: self.outcome_name.clone(),
            intervention_name: self.control_name.clone(),
            control_name: self.intervention_name.clone(),
        }
    }
}

/// Checks every study invariant and hands the dataset back untouched.
///
/// Counts are unsigned, so negative values can only arrive through a parser;
/// [`Error::NegativeCount`] is raised there.
pub fn validate_dataset(raw: MetaDataset) -> Result<MetaDataset> {
    if raw.studies.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut seen = BTreeSet::new();
    for study in &raw.studies {
        if !seen.insert(study.id.as_str()) {
            return Err(Error::DuplicateStudyId(study.id.clone()));
        }
        if study.intervention_total() == 0 {
            return Err(Error::EmptyArm {
                id: study.id.clone(),
                arm: Arm::Intervention,
            });
        }
        if study.control_total() == 0 {
            return Err(Error::EmptyArm {
                id: study.id.clone(),
                arm: Arm::Control,
            });
        }
    }
    Ok(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn six() -> MetaDataset {
        MetaDataset::new(
            (0..6)
                .map(|i| StudyRecord::new(alloc::format!("S{i}"), 10 + i, 90, 12, 88 - i))
                .collect(),
        )
    }

    #[test]
    fn valid_dataset_passes_through() {
        let d = six();
        assert_eq!(validate_dataset(d.clone()).unwrap(), d);
    }

    #[test]
    fn validation_is_idempotent() {
        let once = validate_dataset(six()).unwrap();
        let twice = validate_dataset(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn empty_arm_is_rejected() {
        let d = MetaDataset::new(vec![StudyRecord::new("A", 0, 0, 3, 4)]);
        assert!(matches!(
            validate_dataset(d),
            Err(Error::EmptyArm { arm: Arm::Intervention, .. })
        ));
        let d = MetaDataset::new(vec![StudyRecord::new("A", 1, 0, 0, 0)]);
        assert!(matches!(
            validate_dataset(d),
            Err(Error::EmptyArm { arm: Arm::Control, .. })
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let d = MetaDataset::new(vec![
            StudyRecord::new("A", 1, 2, 3, 4),
            StudyRecord::new("A", 5, 6, 7, 8),
        ]);
        assert_eq!(validate_dataset(d), Err(Error::DuplicateStudyId("A".into())));
    }

    #[test]
    fn zero_cells_are_accepted() {
        let d = MetaDataset::new(vec![StudyRecord::new("A", 0, 10, 0, 10)]);
        assert!(validate_dataset(d).is_ok());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert_eq!(validate_dataset(MetaDataset::new(vec![])), Err(Error::EmptyDataset));
    }
}
