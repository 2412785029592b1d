//! Cohort construction: encounter cleaning, per-day labeled prediction
//! instances, and leak-free temporal train/validation/test splits.
//!
//! Cleaning order is nested removal, then gap merging. Anchors are UTC
//! midnights; the label interval is half-open on the left and closed on the
//! right, so an encounter's last anchor is its single positive example.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{EventKind, EventRecord};
use crate::error::{Error, Result};
use crate::rng::{fnv1a, splitmix};
use crate::timeutil::{ceil_day, serde_epoch, DAY_SECS, HOUR_SECS};

pub const MERGE_GAP_SECS: i64 = 12 * HOUR_SECS;

/// A contiguous hospital stay after cleaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub patient_id: String,
    #[serde(with = "serde_epoch")]
    pub admit: i64,
    #[serde(with = "serde_epoch")]
    pub discharge: i64,
    pub surgery_flag: bool,
    /// Raw encounter ids folded into this one (dedup + merging).
    pub source_ids: Vec<u64>,
}

impl Encounter {
    pub fn new(patient_id: impl Into<String>, admit: i64, discharge: i64) -> Self {
        Encounter {
            patient_id: patient_id.into(),
            admit,
            discharge,
            surgery_flag: false,
            source_ids: Vec::new(),
        }
    }

    pub fn contains(&self, other: &Encounter) -> bool {
        self.admit <= other.admit && other.discharge <= self.discharge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One labeled prediction instance: anchored at a midnight inside the stay,
/// labeled positive iff discharge falls in (anchor, anchor + 24h].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayExample {
    pub patient_id: String,
    #[serde(with = "serde_epoch")]
    pub admit: i64,
    #[serde(with = "serde_epoch")]
    pub discharge: i64,
    pub surgery_flag: bool,
    #[serde(with = "serde_epoch")]
    pub anchor: i64,
    pub label: bool,
    pub split: Split,
}

/// Build per-patient encounters from paired encounter_start/encounter_end
/// events. Events must be time-ordered per patient.
pub fn encounters_from_events(events: &[EventRecord]) -> Result<Vec<Encounter>> {
    let mut open: BTreeMap<&str, Vec<Encounter>> = BTreeMap::new();
    let mut done = Vec::new();
    let mut next_source_id = 0u64;
    for event in events {
        match event.kind {
            EventKind::EncounterStart => {
                let mut enc = Encounter::new(event.patient_id.clone(), event.timestamp, 0);
                enc.surgery_flag = event.surgery_flag.unwrap_or(false);
                enc.source_ids.push(next_source_id);
                next_source_id += 1;
                open.entry(event.patient_id.as_str()).or_default().push(enc);
            }
            EventKind::EncounterEnd => {
                let stack = open.get_mut(event.patient_id.as_str()).filter(|s| !s.is_empty());
                let mut enc = stack
                    .and_then(|s| s.pop())
                    .ok_or_else(|| {
                        Error::data(format!(
                            "encounter_end without start for patient {}",
                            event.patient_id
                        ))
                    })?;
                enc.discharge = event.timestamp;
                if enc.admit >= enc.discharge {
                    return Err(Error::data(format!(
                        "encounter with admit >= discharge for patient {}",
                        event.patient_id
                    )));
                }
                done.push(enc);
            }
            _ => {}
        }
    }
    if open.values().any(|s| !s.is_empty()) {
        return Err(Error::data("encounter_start without matching end".to_string()));
    }
    done.sort_by(|a, b| {
        (&a.patient_id, a.admit, a.discharge).cmp(&(&b.patient_id, b.admit, b.discharge))
    });
    Ok(done)
}

/// Drop encounters contained inside another encounter of the same patient.
/// Identical intervals keep the one with the lowest source id.
pub fn remove_nested(encounters: &[Encounter]) -> Vec<Encounter> {
    let mut by_patient: BTreeMap<&str, Vec<&Encounter>> = BTreeMap::new();
    for e in encounters {
        by_patient.entry(e.patient_id.as_str()).or_default().push(e);
    }
    let mut kept = Vec::new();
    for (_, mut list) in by_patient {
        list.sort_by(|a, b| {
            a.admit
                .cmp(&b.admit)
                .then(b.discharge.cmp(&a.discharge))
                .then(a.source_ids.iter().min().cmp(&b.source_ids.iter().min()))
        });
        let mut max_end = i64::MIN;
        for e in list {
            if e.discharge > max_end {
                kept.push(e.clone());
                max_end = e.discharge;
            }
        }
    }
    kept
}

/// Merge same-patient encounters whose gap is strictly less than `gap`
/// seconds (overlaps count as negative gaps). Single left-to-right pass over
/// admit-sorted encounters reaches the fixed point.
pub fn merge_within_gap(encounters: &[Encounter], gap: i64) -> Vec<Encounter> {
    let mut by_patient: BTreeMap<&str, Vec<&Encounter>> = BTreeMap::new();
    for e in encounters {
        by_patient.entry(e.patient_id.as_str()).or_default().push(e);
    }
    let mut merged = Vec::new();
    for (_, mut list) in by_patient {
        list.sort_by_key(|e| (e.admit, e.discharge));
        let mut current: Option<Encounter> = None;
        for e in list {
            match current.as_mut() {
                None => current = Some(e.clone()),
                Some(cur) => {
                    if e.admit - cur.discharge < gap {
                        cur.discharge = cur.discharge.max(e.discharge);
                        cur.surgery_flag |= e.surgery_flag;
                        cur.source_ids.extend_from_slice(&e.source_ids);
                    } else {
                        merged.push(current.take().unwrap());
                        current = Some(e.clone());
                    }
                }
            }
        }
        if let Some(cur) = current {
            merged.push(cur);
        }
    }
    merged
}

/// Nested removal followed by gap merging.
pub fn clean_encounters(encounters: &[Encounter]) -> Vec<Encounter> {
    merge_within_gap(&remove_nested(encounters), MERGE_GAP_SECS)
}

/// Midnight anchors m with admit <= m < discharge.
pub fn anchors(encounter: &Encounter) -> impl Iterator<Item = i64> + '_ {
    let first = ceil_day(encounter.admit);
    (0..).map(move |k| first + k * DAY_SECS).take_while(move |&m| m < encounter.discharge)
}

/// One example per midnight anchor inside the stay; empty when the stay
/// spans no midnight.
pub fn make_day_examples(encounter: &Encounter) -> Vec<DayExample> {
    anchors(encounter)
        .map(|m| DayExample {
            patient_id: encounter.patient_id.clone(),
            admit: encounter.admit,
            discharge: encounter.discharge,
            surgery_flag: encounter.surgery_flag,
            anchor: m,
            label: encounter.discharge <= m + DAY_SECS,
            split: Split::Train,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitWarning {
    CutoffAfterAllData,
    CutoffBeforeAllData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<DayExample>,
    pub validation: Vec<DayExample>,
    pub test: Vec<DayExample>,
    #[serde(with = "serde_epoch")]
    pub cutoff: i64,
    pub warning: Option<SplitWarning>,
}

impl SplitDataset {
    pub fn prevalence(examples: &[DayExample]) -> f64 {
        if examples.is_empty() {
            return f64::NAN;
        }
        examples.iter().filter(|e| e.label).count() as f64 / examples.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SplitOptions {
    pub cutoff: i64,
    pub seed: u64,
    /// Stricter than the test-only guarantee; disable to keep validation
    /// patients' pre-cutoff visits in train.
    pub remove_validation_from_train: bool,
}

/// Pure per-patient assignment hash; bit 0 picks validation vs test.
fn assignment_hash(patient_id: &str, seed: u64, cutoff: i64) -> u64 {
    splitmix(fnv1a(patient_id.as_bytes()) ^ splitmix(seed) ^ splitmix(cutoff as u64))
}

/// Temporal split per the cohort rules:
/// - patients with any encounter starting on/after the cutoff go 50-50 to
///   validation/test by seeded hash parity;
/// - each such patient keeps exactly one post-cutoff encounter (seeded);
/// - test (and by default validation) patients are removed from train.
pub fn split_cohort(examples: &[DayExample], options: &SplitOptions) -> SplitDataset {
    // group post-cutoff encounters by patient
    let mut post_cutoff: BTreeMap<&str, Vec<(i64, i64)>> = BTreeMap::new();
    let mut min_admit = i64::MAX;
    let mut max_admit = i64::MIN;
    for ex in examples {
        min_admit = min_admit.min(ex.admit);
        max_admit = max_admit.max(ex.admit);
        if ex.admit >= options.cutoff {
            let list = post_cutoff.entry(ex.patient_id.as_str()).or_default();
            if !list.contains(&(ex.admit, ex.discharge)) {
                list.push((ex.admit, ex.discharge));
            }
        }
    }

    let mut assignment: BTreeMap<&str, (Split, (i64, i64))> = BTreeMap::new();
    for (patient, mut encs) in post_cutoff {
        encs.sort_unstable();
        let h = assignment_hash(patient, options.seed, options.cutoff);
        let split = if h & 1 == 0 { Split::Validation } else { Split::Test };
        let chosen = encs[(splitmix(h) % encs.len() as u64) as usize];
        assignment.insert(patient, (split, chosen));
    }

    let mut out = SplitDataset {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        cutoff: options.cutoff,
        warning: None,
    };
    for ex in examples {
        match assignment.get(ex.patient_id.as_str()) {
            None => {
                let mut e = ex.clone();
                e.split = Split::Train;
                out.train.push(e);
            }
            Some((split, chosen)) => {
                if ex.admit >= options.cutoff {
                    if (ex.admit, ex.discharge) == *chosen {
                        let mut e = ex.clone();
                        e.split = *split;
                        match split {
                            Split::Validation => out.validation.push(e),
                            Split::Test => out.test.push(e),
                            Split::Train => unreachable!(),
                        }
                    }
                    // other post-cutoff visits of this patient are dropped
                } else {
                    // pre-cutoff history of a held-out patient;
                    // dropped for test always, for validation per option
                    let keep = *split == Split::Validation && !options.remove_validation_from_train;
                    if keep {
                        let mut e = ex.clone();
                        e.split = Split::Train;
                        out.train.push(e);
                    }
                }
            }
        }
    }

    if !examples.is_empty() {
        if options.cutoff > max_admit {
            out.warning = Some(SplitWarning::CutoffAfterAllData);
        } else if options.cutoff <= min_admit {
            out.warning = Some(SplitWarning::CutoffBeforeAllData);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeutil::parse_utc;

    fn ts(text: &str) -> i64 {
        parse_utc(text).unwrap()
    }

    fn enc(pid: &str, admit: &str, discharge: &str, source: u64) -> Encounter {
        let mut e = Encounter::new(pid, ts(admit), ts(discharge));
        e.source_ids.push(source);
        e
    }

    #[test]
    fn nested_removed_outermost_kept() {
        let a = enc("p", "2015-01-01T00:00:00Z", "2015-01-05T00:00:00Z", 0);
        let b = enc("p", "2015-01-02T00:00:00Z", "2015-01-03T00:00:00Z", 1);
        let kept = remove_nested(&[a.clone(), b]);
        assert_eq!(kept, vec![a]);
    }

    #[test]
    fn identical_duplicates_keep_lowest_source_id() {
        let a = enc("p", "2015-01-01T00:00:00Z", "2015-01-02T00:00:00Z", 7);
        let b = enc("p", "2015-01-01T00:00:00Z", "2015-01-02T00:00:00Z", 3);
        let kept = remove_nested(&[a, b]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].source_ids, vec![3]);
    }

    #[test]
    fn partial_overlap_survives_nested_pass() {
        let a = enc("p", "2015-01-01T00:00:00Z", "2015-01-05T00:00:00Z", 0);
        let b = enc("p", "2015-01-04T00:00:00Z", "2015-01-06T00:00:00Z", 1);
        assert_eq!(remove_nested(&[a, b]).len(), 2);
    }

    #[test]
    fn chain_of_8h_gaps_merges_transitively() {
        let a = enc("p", "2015-01-01T00:00:00Z", "2015-01-02T00:00:00Z", 0);
        let b = enc("p", "2015-01-02T08:00:00Z", "2015-01-03T00:00:00Z", 1);
        let c = enc("p", "2015-01-03T08:00:00Z", "2015-01-04T00:00:00Z", 2);
        let merged = merge_within_gap(&[a, b, c], MERGE_GAP_SECS);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].admit, ts("2015-01-01T00:00:00Z"));
        assert_eq!(merged[0].discharge, ts("2015-01-04T00:00:00Z"));
        assert_eq!(merged[0].source_ids, vec![0, 1, 2]);
    }

    #[test]
    fn gap_of_exactly_12h_not_merged() {
        let a = enc("p", "2015-01-01T00:00:00Z", "2015-01-02T00:00:00Z", 0);
        let b = enc("p", "2015-01-02T12:00:00Z", "2015-01-03T00:00:00Z", 1);
        assert_eq!(merge_within_gap(&[a, b], MERGE_GAP_SECS).len(), 2);
    }

    #[test]
    fn different_patients_never_merge() {
        let a = enc("p1", "2015-01-01T00:00:00Z", "2015-01-02T00:00:00Z", 0);
        let b = enc("p2", "2015-01-02T01:00:00Z", "2015-01-03T00:00:00Z", 1);
        assert_eq!(merge_within_gap(&[a, b], MERGE_GAP_SECS).len(), 2);
    }

    #[test]
    fn day_examples_hand_worked() {
        let e = enc("p", "2015-01-01T10:00:00Z", "2015-01-03T15:00:00Z", 0);
        let ex = make_day_examples(&e);
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].anchor, ts("2015-01-02T00:00:00Z"));
        assert!(!ex[0].label); // discharge Jan 3 15:00 is beyond Jan 3 00:00
        assert_eq!(ex[1].anchor, ts("2015-01-03T00:00:00Z"));
        assert!(ex[1].label);
    }

    #[test]
    fn no_midnight_no_examples() {
        let e = enc("p", "2015-01-01T08:00:00Z", "2015-01-01T20:00:00Z", 0);
        assert!(make_day_examples(&e).is_empty());
    }

    #[test]
    fn discharge_exactly_24h_after_anchor_is_positive() {
        let e = enc("p", "2015-01-01T00:00:00Z", "2015-01-02T00:00:00Z", 0);
        let ex = make_day_examples(&e);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].anchor, ts("2015-01-01T00:00:00Z"));
        assert!(ex[0].label);
    }

    #[test]
    fn admit_at_midnight_is_an_anchor() {
        let e = enc("p", "2015-01-01T00:00:00Z", "2015-01-02T12:00:00Z", 0);
        let ex = make_day_examples(&e);
        assert_eq!(ex[0].anchor, e.admit);
        assert_eq!(ex.len(), 2);
    }

    fn example_soup() -> Vec<DayExample> {
        let mut out = Vec::new();
        // p1: one 2015 and one 2017 encounter; p2: 2015 only; p3: two 2017
        for (pid, admit, discharge) in [
            ("p1", "2015-03-01T05:00:00Z", "2015-03-04T10:00:00Z"),
            ("p1", "2017-02-01T05:00:00Z", "2017-02-03T10:00:00Z"),
            ("p2", "2015-05-01T05:00:00Z", "2015-05-03T10:00:00Z"),
            ("p3", "2017-03-01T05:00:00Z", "2017-03-05T10:00:00Z"),
            ("p3", "2017-06-01T05:00:00Z", "2017-06-03T10:00:00Z"),
        ] {
            out.extend(make_day_examples(&enc(pid, admit, discharge, 0)));
        }
        out
    }

    #[test]
    fn test_patients_fully_removed_from_train() {
        let cutoff = ts("2017-01-01T00:00:00Z");
        let examples = example_soup();
        let split = split_cohort(
            &examples,
            &SplitOptions { cutoff, seed: 11, remove_validation_from_train: true },
        );
        let held: Vec<&str> = split
            .validation
            .iter()
            .chain(&split.test)
            .map(|e| e.patient_id.as_str())
            .collect();
        for e in &split.train {
            assert!(!held.contains(&e.patient_id.as_str()));
        }
        // each held-out patient contributes exactly one encounter
        for list in [&split.validation, &split.test] {
            let mut per: BTreeMap<&str, Vec<(i64, i64)>> = BTreeMap::new();
            for e in list.iter() {
                let encs = per.entry(e.patient_id.as_str()).or_default();
                if !encs.contains(&(e.admit, e.discharge)) {
                    encs.push((e.admit, e.discharge));
                }
            }
            for (_, encs) in per {
                assert_eq!(encs.len(), 1);
            }
        }
    }

    #[test]
    fn split_is_deterministic() {
        let cutoff = ts("2017-01-01T00:00:00Z");
        let opts = SplitOptions { cutoff, seed: 5, remove_validation_from_train: true };
        let a = split_cohort(&example_soup(), &opts);
        let b = split_cohort(&example_soup(), &opts);
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn no_post_cutoff_patients_means_full_train() {
        let cutoff = ts("2020-01-01T00:00:00Z");
        let examples = example_soup();
        let split = split_cohort(
            &examples,
            &SplitOptions { cutoff, seed: 5, remove_validation_from_train: true },
        );
        assert!(split.validation.is_empty());
        assert!(split.test.is_empty());
        assert_eq!(split.train.len(), examples.len());
        assert_eq!(split.warning, Some(SplitWarning::CutoffAfterAllData));
    }

    #[test]
    fn labels_recompute_from_timestamps() {
        for ex in example_soup() {
            let expected = ex.discharge > ex.anchor && ex.discharge <= ex.anchor + DAY_SECS;
            assert_eq!(ex.label, expected);
        }
    }

    #[test]
    fn encounters_from_event_stream() {
        let mk = |kind, ts_text: &str, flag: Option<bool>| EventRecord {
            patient_id: "p".into(),
            kind,
            code: "INP".into(),
            value: None,
            timestamp: ts(ts_text),
            surgery_flag: flag,
        };
        let events = vec![
            mk(EventKind::EncounterStart, "2015-01-01T02:00:00Z", Some(true)),
            mk(EventKind::EncounterEnd, "2015-01-03T02:00:00Z", None),
        ];
        let encs = encounters_from_events(&events).unwrap();
        assert_eq!(encs.len(), 1);
        assert!(encs[0].surgery_flag);
    }
}
