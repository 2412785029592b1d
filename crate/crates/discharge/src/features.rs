//! Featurization: code vocabulary, fixed-length sparse count vectors
//! (recent / historical / demographics blocks), and per-day sequences for
//! the recurrent model.
//!
//! Windows relative to a prediction anchor: recent = [anchor-24h, anchor),
//! historical = [anchor-180d, anchor-24h). Events at or after the anchor
//! never contribute.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::Encounter;
use crate::data::{EventKind, EventRecord, LabRange, PatientRecord};
use crate::error::{Error, Result};
use crate::timeutil::{floor_day, DAY_SECS};

pub const RECENT_WINDOW_SECS: i64 = DAY_SECS;
pub const HISTORICAL_WINDOW_SECS: i64 = 180 * DAY_SECS;
pub const DEFAULT_MIN_COUNT: u32 = 100;
pub const SECONDS_PER_YEAR: f64 = 365.25 * DAY_SECS as f64;

/// Feature channels, in fixed block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Diagnosis,
    Procedure,
    Medication,
    LabCode,
    LabCategory,
    EncounterType,
}

pub const CHANNELS: [Channel; 6] = [
    Channel::Diagnosis,
    Channel::Procedure,
    Channel::Medication,
    Channel::LabCode,
    Channel::LabCategory,
    Channel::EncounterType,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabCategory {
    Normal,
    Abnormal,
    Panic,
}

impl LabCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabCategory::Normal => "normal",
            LabCategory::Abnormal => "abnormal",
            LabCategory::Panic => "panic",
        }
    }
}

/// Normal iff value in [low, high]; panic iff outside the panic bounds;
/// abnormal otherwise.
pub fn categorize_lab(value: f64, range: &LabRange) -> Result<LabCategory> {
    if !value.is_finite() {
        return Err(Error::data(format!("non-finite lab value {value}")));
    }
    range.validate()?;
    if value >= range.low && value <= range.high {
        Ok(LabCategory::Normal)
    } else if value < range.panic_low || value > range.panic_high {
        Ok(LabCategory::Panic)
    } else {
        Ok(LabCategory::Abnormal)
    }
}

/// The channel tokens one event contributes (a lab event contributes to both
/// the lab-code and the lab-result-category channels).
fn event_tokens(
    event: &EventRecord,
    ranges: &BTreeMap<String, LabRange>,
    mut emit: impl FnMut(Channel, String),
) {
    match event.kind {
        EventKind::Diagnosis => emit(Channel::Diagnosis, event.code.clone()),
        EventKind::Procedure => emit(Channel::Procedure, event.code.clone()),
        EventKind::Medication => emit(Channel::Medication, event.code.clone()),
        EventKind::Lab => {
            emit(Channel::LabCode, event.code.clone());
            let category = match (event.value, ranges.get(&event.code)) {
                (Some(v), Some(r)) => match categorize_lab(v, r) {
                    Ok(c) => c.as_str(),
                    Err(_) => "unknown",
                },
                _ => "unknown",
            };
            emit(Channel::LabCategory, format!("{}|{category}", event.code));
        }
        EventKind::EncounterStart | EventKind::EncounterEnd => {
            emit(Channel::EncounterType, event.code.clone())
        }
    }
}

/// Categorical demographic vocabularies; every block gets an extra "other"
/// column so vector width never depends on the input.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemographicVocab {
    pub genders: Vec<String>,
    pub races: Vec<String>,
    pub ethnicities: Vec<String>,
    pub insurances: Vec<String>,
}

impl DemographicVocab {
    fn from_patients(patients: &[PatientRecord]) -> Self {
        fn distinct(values: impl Iterator<Item = String>) -> Vec<String> {
            let set: std::collections::BTreeSet<String> = values.collect();
            set.into_iter().collect()
        }
        DemographicVocab {
            genders: distinct(patients.iter().map(|p| p.gender.clone())),
            races: distinct(patients.iter().map(|p| p.race.clone())),
            ethnicities: distinct(patients.iter().map(|p| p.ethnicity.clone())),
            insurances: distinct(patients.iter().map(|p| p.insurance.clone())),
        }
    }

    /// age + one-hot blocks (each with an "other" slot) + surgery flag
    pub fn width(&self) -> u32 {
        (1 + (self.genders.len() + 1)
            + (self.races.len() + 1)
            + (self.ethnicities.len() + 1)
            + (self.insurances.len() + 1)
            + 1) as u32
    }
}

/// Code-to-column mapping with dense, token-sorted, deterministic indices,
/// plus demographic vocabularies and the age standardization constants the
/// recurrent model uses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    pub version: u32,
    pub min_count: u32,
    /// token -> channel-local column, per channel
    pub channels: BTreeMap<Channel, BTreeMap<String, u32>>,
    pub demographics: DemographicVocab,
    pub age_mean: f64,
    pub age_std: f64,
}

pub const VOCAB_VERSION: u32 = 1;

impl Vocabulary {
    pub fn channel_width(&self, channel: Channel) -> u32 {
        self.channels.get(&channel).map_or(0, |m| m.len() as u32)
    }

    /// Offset of a channel inside one code block.
    pub fn channel_offset(&self, channel: Channel) -> u32 {
        let mut offset = 0;
        for c in CHANNELS {
            if c == channel {
                return offset;
            }
            offset += self.channel_width(c);
        }
        unreachable!("channel not in CHANNELS")
    }

    /// Width of one code block (recent and historical each span this).
    pub fn code_width(&self) -> u32 {
        CHANNELS.iter().map(|&c| self.channel_width(c)).sum()
    }

    pub fn demo_width(&self) -> u32 {
        self.demographics.width()
    }

    /// Total fixed-vector width: recent + historical + demographics.
    pub fn total_width(&self) -> u32 {
        2 * self.code_width() + self.demo_width()
    }

    pub fn demo_offset(&self) -> u32 {
        2 * self.code_width()
    }

    fn lookup(&self, channel: Channel, token: &str) -> Option<u32> {
        self.channels.get(&channel)?.get(token).copied().map(|local| self.channel_offset(channel) + local)
    }
}

/// Count channel tokens over training events and keep those occurring at
/// least `min_count` times. Order-independent and deterministic.
pub fn build_vocabulary(
    events: &[EventRecord],
    patients: &[PatientRecord],
    ranges: &BTreeMap<String, LabRange>,
    min_count: u32,
) -> Vocabulary {
    let mut counts: BTreeMap<Channel, BTreeMap<String, u32>> = BTreeMap::new();
    for event in events {
        event_tokens(event, ranges, |channel, token| {
            *counts.entry(channel).or_default().entry(token).or_insert(0) += 1;
        });
    }
    let mut channels = BTreeMap::new();
    for channel in CHANNELS {
        let kept: BTreeMap<String, u32> = counts
            .remove(&channel)
            .unwrap_or_default()
            .into_iter()
            .filter(|(_, n)| *n >= min_count)
            .enumerate()
            .map(|(i, (token, _))| (token, i as u32))
            .collect();
        channels.insert(channel, kept);
    }
    Vocabulary {
        version: VOCAB_VERSION,
        min_count,
        channels,
        demographics: DemographicVocab::from_patients(patients),
        age_mean: 0.0,
        age_std: 1.0,
    }
}

/// Sorted sparse feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub width: u32,
    /// (column, value), strictly increasing columns, finite values.
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn from_map(width: u32, map: BTreeMap<u32, f64>) -> Self {
        let entries: Vec<(u32, f64)> =
            map.into_iter().filter(|&(_, v)| v != 0.0).collect();
        debug_assert!(entries.iter().all(|&(c, v)| c < width && v.is_finite()));
        SparseVector { width, entries }
    }

    pub fn get(&self, column: u32) -> f64 {
        match self.entries.binary_search_by_key(&column, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width as usize];
        for &(c, v) in &self.entries {
            out[c as usize] = v;
        }
        out
    }
}

pub fn age_years_at(birth_date: i64, at: i64) -> f64 {
    (at - birth_date) as f64 / SECONDS_PER_YEAR
}

fn one_hot(slot: &mut BTreeMap<u32, f64>, base: u32, categories: &[String], token: &str) -> u32 {
    let idx = categories.iter().position(|c| c == token).unwrap_or(categories.len());
    slot.insert(base + idx as u32, 1.0);
    base + categories.len() as u32 + 1
}

/// Demographics block as (column-within-block, value) pairs.
/// `standardize_age` applies the vocabulary's train-split age constants
/// (used by the recurrent model; trees take the raw age).
pub fn demographics_block(
    vocab: &Vocabulary,
    record: &PatientRecord,
    age_years: f64,
    surgery: bool,
    standardize_age: bool,
) -> BTreeMap<u32, f64> {
    let mut out = BTreeMap::new();
    let age = if standardize_age {
        (age_years - vocab.age_mean) / vocab.age_std.max(1e-9)
    } else {
        age_years
    };
    if age != 0.0 {
        out.insert(0, age);
    }
    let demo = &vocab.demographics;
    let mut base = 1;
    base = one_hot(&mut out, base, &demo.genders, &record.gender);
    base = one_hot(&mut out, base, &demo.races, &record.race);
    base = one_hot(&mut out, base, &demo.ethnicities, &record.ethnicity);
    base = one_hot(&mut out, base, &demo.insurances, &record.insurance);
    if surgery {
        out.insert(base, 1.0);
    }
    out
}

/// Fixed-length representation for one (patient, anchor) pair.
/// `events` must be the patient's events sorted by timestamp.
pub fn featurize_day(
    record: &PatientRecord,
    events: &[&EventRecord],
    anchor: i64,
    surgery_flag: bool,
    vocab: &Vocabulary,
    ranges: &BTreeMap<String, LabRange>,
) -> SparseVector {
    let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
    let code_width = vocab.code_width();

    let lo = events.partition_point(|e| e.timestamp < anchor - HISTORICAL_WINDOW_SECS);
    let hi = events.partition_point(|e| e.timestamp < anchor);
    for event in &events[lo..hi] {
        let block = if event.timestamp >= anchor - RECENT_WINDOW_SECS { 0 } else { code_width };
        event_tokens(event, ranges, |channel, token| {
            if let Some(col) = vocab.lookup(channel, &token) {
                *acc.entry(block + col).or_insert(0.0) += 1.0;
            }
        });
    }

    let demo_offset = vocab.demo_offset();
    let age = age_years_at(record.birth_date, anchor);
    for (col, value) in demographics_block(vocab, record, age, surgery_flag, false) {
        acc.insert(demo_offset + col, value);
    }
    SparseVector::from_map(vocab.total_width(), acc)
}

/// One step of a per-day sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqStep {
    /// Midnight starting this calendar day.
    pub day: i64,
    /// Vocabulary-local token indices per channel, CHANNELS order.
    pub tokens: Vec<Vec<u32>>,
    pub demographics: Vec<f64>,
    /// Discharge-in-24h target for the anchor at this day's end; None on
    /// steps where the patient is not inpatient at that anchor.
    pub discharge24: Option<bool>,
    pub inpatient_now: bool,
    pub inpatient_next: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySequence {
    pub patient_id: String,
    pub steps: Vec<SeqStep>,
}

impl DaySequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step whose end-of-day anchor equals `anchor`, if present.
    pub fn step_for_anchor(&self, anchor: i64) -> Option<usize> {
        let day = anchor - DAY_SECS;
        self.steps.binary_search_by_key(&day, |s| s.day).ok()
    }
}

fn overlaps(enc: &Encounter, start: i64, end: i64) -> bool {
    enc.admit < end && enc.discharge > start
}

/// Per-day sequence over the patient's whole record: one step per calendar
/// day that has at least one event or any inpatient overlap (closed right
/// boundary, so an admission at the next midnight still creates a step).
/// Targets follow the three training tasks; non-inpatient days are included.
pub fn build_sequence(
    record: &PatientRecord,
    events: &[&EventRecord],
    encounters: &[Encounter],
    vocab: &Vocabulary,
    ranges: &BTreeMap<String, LabRange>,
    end_day: i64,
) -> Result<DaySequence> {
    let mut days: std::collections::BTreeSet<i64> = events
        .iter()
        .filter(|e| e.timestamp <= end_day + DAY_SECS - 1)
        .map(|e| floor_day(e.timestamp))
        .collect();
    for enc in encounters {
        let mut d = floor_day(enc.admit) - DAY_SECS; // closed right boundary
        while d <= end_day && d < enc.discharge {
            if d + DAY_SECS >= enc.admit {
                days.insert(d);
            }
            d += DAY_SECS;
        }
    }
    days.retain(|&d| d <= end_day);
    if days.is_empty() {
        return Err(Error::data(format!("patient {} has an empty sequence", record.patient_id)));
    }

    let mut steps = Vec::with_capacity(days.len());
    for day in days {
        let lo = events.partition_point(|e| e.timestamp < day);
        let hi = events.partition_point(|e| e.timestamp < day + DAY_SECS);
        let mut tokens: Vec<Vec<u32>> = vec![Vec::new(); CHANNELS.len()];
        for event in &events[lo..hi] {
            event_tokens(event, ranges, |channel, token| {
                if let Some(map) = vocab.channels.get(&channel) {
                    if let Some(&local) = map.get(&token) {
                        let slot = CHANNELS.iter().position(|&c| c == channel).unwrap();
                        tokens[slot].push(local);
                    }
                }
            });
        }
        for t in &mut tokens {
            t.sort_unstable();
        }

        let anchor = day + DAY_SECS;
        let hosting = encounters.iter().find(|e| e.admit <= anchor && anchor < e.discharge);
        let surgery_today = encounters
            .iter()
            .any(|e| e.surgery_flag && overlaps(e, day, day + DAY_SECS));
        let age = age_years_at(record.birth_date, day);
        let demo_map = demographics_block(vocab, record, age, surgery_today, true);
        let mut demographics = vec![0.0; vocab.demo_width() as usize];
        for (col, v) in demo_map {
            demographics[col as usize] = v;
        }

        steps.push(SeqStep {
            day,
            tokens,
            demographics,
            discharge24: hosting.map(|e| e.discharge <= anchor + DAY_SECS),
            inpatient_now: encounters.iter().any(|e| overlaps(e, day, day + DAY_SECS)),
            inpatient_next: encounters
                .iter()
                .any(|e| overlaps(e, day + DAY_SECS, day + 2 * DAY_SECS)),
        });
    }
    Ok(DaySequence { patient_id: record.patient_id.clone(), steps })
}

/// Sort by length (ties by patient id) and cut contiguous chunks; shorter
/// sequences inside a batch are implicitly padded by consumers, and padded
/// steps never reach losses or metrics.
pub fn batch_sequences(mut sequences: Vec<DaySequence>, batch_size: usize) -> Vec<Vec<DaySequence>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    sequences.sort_by(|a, b| a.len().cmp(&b.len()).then(a.patient_id.cmp(&b.patient_id)));
    let mut batches = Vec::new();
    let mut it = sequences.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(it.by_ref().take(batch_size).collect());
    }
    batches
}
