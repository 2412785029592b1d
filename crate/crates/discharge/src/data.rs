//! Core clinical record types shared across the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeutil::serde_epoch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Diagnosis,
    Procedure,
    Medication,
    Lab,
    EncounterStart,
    EncounterEnd,
}

/// One timestamped clinical fact. Lab events carry a value, others none;
/// `surgery_flag` is present on encounter_start events only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub patient_id: String,
    pub kind: EventKind,
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(with = "serde_epoch")]
    pub timestamp: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surgery_flag: Option<bool>,
}

impl EventRecord {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EventKind::Lab => {
                let v = self
                    .value
                    .ok_or_else(|| Error::data(format!("lab event {} missing value", self.code)))?;
                if !v.is_finite() {
                    return Err(Error::data(format!("lab event {} has non-finite value", self.code)));
                }
            }
            _ => {
                if self.value.is_some() {
                    return Err(Error::data(format!(
                        "non-lab event {} carries a value",
                        self.code
                    )));
                }
            }
        }
        if self.surgery_flag.is_some() && self.kind != EventKind::EncounterStart {
            return Err(Error::data("surgery_flag on non-encounter_start event".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    #[serde(with = "serde_epoch")]
    pub birth_date: i64,
    pub gender: String,
    pub race: String,
    pub ethnicity: String,
    pub insurance: String,
}

/// Reference interval for one lab code; panic bounds sit outside the
/// normal bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabRange {
    pub low: f64,
    pub high: f64,
    pub panic_low: f64,
    pub panic_high: f64,
}

impl LabRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.panic_low <= self.low && self.low <= self.high && self.high <= self.panic_high) {
            return Err(Error::data(format!("invalid lab range {self:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_events_need_values() {
        let mut e = EventRecord {
            patient_id: "p1".into(),
            kind: EventKind::Lab,
            code: "L1".into(),
            value: None,
            timestamp: 0,
            surgery_flag: None,
        };
        assert!(e.validate().is_err());
        e.value = Some(3.5);
        assert!(e.validate().is_ok());
        e.kind = EventKind::Diagnosis;
        assert!(e.validate().is_err());
    }

    #[test]
    fn event_json_round_trip() {
        let e = EventRecord {
            patient_id: "p1".into(),
            kind: EventKind::EncounterStart,
            code: "INP".into(),
            value: None,
            timestamp: 1_483_228_800,
            surgery_flag: Some(true),
        };
        let line = serde_json::to_string(&e).unwrap();
        assert!(line.contains("\"2017-01-01T00:00:00Z\""));
        assert!(!line.contains("value"));
        let back: EventRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, e);
    }
}
