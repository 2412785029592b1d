//! Deterministic synthetic EHR generator with a planted discharge signal.
//!
//! Patients receive Poisson-arriving inpatient encounters plus sparse
//! outpatient background events. Inside a stay, events are drawn day by day
//! (Zipf-distributed codes per family) and each midnight the stay ends with
//! probability sigmoid(bias + sum of planted-code weights present in the
//! prior 24h). The bias is calibrated by bisection against fixed uniform
//! draws, so realized day-level prevalence hits the target exactly up to
//! bisection resolution.
//!
//! Randomness: one root seed, per-concern and per-patient substreams, so
//! generation parallelizes across patients without changing output.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EventKind, EventRecord, LabRange, PatientRecord};
use crate::error::{Error, Result};
use crate::mathx::{logit, sigmoid};
use crate::rng::{SeedBank, Stream};
use crate::timeutil::{ceil_day, DAY_SECS};

/// Encounter-type tokens carried on encounter_start/encounter_end events.
pub const ENC_START_CODE: &str = "ENC:INPATIENT";
pub const ENC_START_SURGERY_CODE: &str = "ENC:SURGERY";
pub const ENC_END_CODE: &str = "ENC:DISCHARGE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodePools {
    pub diagnosis: usize,
    pub procedure: usize,
    pub medication: usize,
    pub lab: usize,
}

impl Default for CodePools {
    fn default() -> Self {
        CodePools { diagnosis: 300, procedure: 200, medication: 250, lab: 120 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Epoch seconds, UTC. Events and encounters stay inside this window.
    pub range_start: i64,
    pub range_end: i64,
    pub code_pools: CodePools,
    /// Bounds the simulated stay horizon; realized mean length of stay
    /// follows from `target_prevalence`.
    pub mean_los_days: f64,
    pub target_prevalence: f64,
    pub signal_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 2000,
            range_start: 1_420_070_400, // 2015-01-01
            range_end: 1_514_764_800,   // 2018-01-01
            code_pools: CodePools::default(),
            mean_los_days: 5.5,
            target_prevalence: 0.18,
            signal_strength: 1.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.range_start >= self.range_end {
            return Err(Error::config("date_range start must precede end"));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return Err(Error::config(format!(
                "target_prevalence must be in (0,1), got {}",
                self.target_prevalence
            )));
        }
        if self.mean_los_days <= 0.0 {
            return Err(Error::config("mean_los_days must be positive"));
        }
        if self.signal_strength < 0.0 {
            return Err(Error::config("signal_strength must be non-negative"));
        }
        let needed = (self.stay_cap_days() + 3) * DAY_SECS;
        if self.range_end - self.range_start < needed {
            return Err(Error::config(format!(
                "date_range must cover at least {} days",
                needed / DAY_SECS
            )));
        }
        Ok(())
    }

    /// Hard cap on anchors per stay; stays reaching it are force-discharged.
    fn stay_cap_days(&self) -> i64 {
        ((self.mean_los_days * 6.0).ceil() as i64).clamp(30, 120)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCode {
    pub code: String,
    pub weight: f64,
}

/// Diagnostics-only record of the planted signal. Must never feed
/// featurization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthLog {
    pub bias: f64,
    pub signal_strength: f64,
    pub planted: Vec<PlantedCode>,
    pub realized_prevalence: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub patients: Vec<PatientRecord>,
    /// Globally time-ordered.
    pub events: Vec<EventRecord>,
    pub truth: TruthLog,
    pub lab_ranges: BTreeMap<String, LabRange>,
}

// Per-family per-day event rates during a stay, and background rates.
const STAY_RATES: [(EventKind, f64); 4] = [
    (EventKind::Diagnosis, 2.0),
    (EventKind::Procedure, 0.9),
    (EventKind::Medication, 2.4),
    (EventKind::Lab, 3.0),
];
const OUTPATIENT_DAYS_MEAN: f64 = 6.0;
const ENCOUNTERS_MEAN: f64 = 1.3;
const SURGERY_FRACTION: f64 = 0.3;
const ZIPF_EXPONENT: f64 = 1.1;
const PLANTED_PER_FAMILY: usize = 4; // over diagnosis, medication, lab

struct FamilySampler {
    prefix: &'static str,
    cdf: Vec<f64>,
}

impl FamilySampler {
    fn new(prefix: &'static str, pool: usize) -> Self {
        let mut cdf = Vec::with_capacity(pool);
        let mut acc = 0.0;
        for rank in 1..=pool {
            acc += 1.0 / (rank as f64).powf(ZIPF_EXPONENT);
            cdf.push(acc);
        }
        FamilySampler { prefix, cdf }
    }

    fn code_for_rank(&self, rank: usize) -> String {
        format!("{}{:04}", self.prefix, rank + 1)
    }

    fn sample(&self, stream: &mut Stream) -> String {
        self.code_for_rank(stream.from_cdf(&self.cdf))
    }
}

struct Samplers {
    diagnosis: FamilySampler,
    procedure: FamilySampler,
    medication: FamilySampler,
    lab: FamilySampler,
}

impl Samplers {
    fn new(pools: &CodePools) -> Self {
        Samplers {
            diagnosis: FamilySampler::new("D", pools.diagnosis),
            procedure: FamilySampler::new("P", pools.procedure),
            medication: FamilySampler::new("M", pools.medication),
            lab: FamilySampler::new("L", pools.lab),
        }
    }

    fn for_kind(&self, kind: EventKind) -> &FamilySampler {
        match kind {
            EventKind::Diagnosis => &self.diagnosis,
            EventKind::Procedure => &self.procedure,
            EventKind::Medication => &self.medication,
            EventKind::Lab => &self.lab,
            _ => unreachable!("no sampler for encounter marks"),
        }
    }
}

/// Per-anchor generative state kept until the bias is calibrated.
struct AnchorDraw {
    /// Sum of planted weights present in the prior 24h.
    signal: f64,
    uniform: f64,
    /// Fraction of the following day at which discharge lands if drawn.
    offset: f64,
}

struct RawEncounter {
    admit: i64,
    surgery: bool,
    anchors: Vec<AnchorDraw>,
    /// segments[k] holds the events of [max(admit, anchor_k - 24h), anchor_k).
    segments: Vec<Vec<EventRecord>>,
}

struct RawPatient {
    record: PatientRecord,
    outpatient: Vec<EventRecord>,
    encounters: Vec<RawEncounter>,
}

fn pick_weighted<'a>(stream: &mut Stream, table: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = table.iter().map(|(_, w)| w).sum();
    let mut u = stream.unit() * total;
    for (token, w) in table {
        if u < *w {
            return token;
        }
        u -= w;
    }
    table.last().expect("non-empty table").0
}

fn lab_ranges(pools: &CodePools, bank: &SeedBank, samplers: &Samplers) -> BTreeMap<String, LabRange> {
    let mut stream = bank.stream("lab-ranges");
    let mut out = BTreeMap::new();
    for rank in 0..pools.lab {
        let center = 40.0 + 120.0 * stream.unit();
        let width = 4.0 + 16.0 * stream.unit();
        let panic_margin = width * (0.6 + 0.8 * stream.unit());
        out.insert(
            samplers.lab.code_for_rank(rank),
            LabRange {
                low: center - width,
                high: center + width,
                panic_low: center - width - panic_margin,
                panic_high: center + width + panic_margin,
            },
        );
    }
    out
}

fn plant_signal(config: &SynthConfig, bank: &SeedBank, samplers: &Samplers) -> Vec<PlantedCode> {
    let mut stream = bank.stream("planted");
    let mut planted = Vec::new();
    let families = [&samplers.diagnosis, &samplers.medication, &samplers.lab];
    for family in families {
        // top Zipf ranks, where day-to-day presence actually varies; deeper
        // ranks fire too rarely to carry signal
        let span = family.cdf.len().min(12);
        let ranks = stream.sample_distinct(span, PLANTED_PER_FAMILY);
        for (i, r) in ranks.iter().enumerate() {
            let magnitude = (1.6 + 1.0 * stream.unit()) * config.signal_strength;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            planted.push(PlantedCode {
                code: family.code_for_rank(*r as usize),
                weight: sign * magnitude,
            });
        }
    }
    planted
}

fn event(patient_id: &str, kind: EventKind, code: String, ts: i64, value: Option<f64>) -> EventRecord {
    EventRecord { patient_id: patient_id.to_string(), kind, code, value, timestamp: ts, surgery_flag: None }
}

/// Draw one day-segment of stay events in [seg_start, seg_end).
#[allow(clippy::too_many_arguments)]
fn draw_segment(
    stream: &mut Stream,
    patient_id: &str,
    seg_start: i64,
    seg_end: i64,
    samplers: &Samplers,
    ranges: &BTreeMap<String, LabRange>,
    out: &mut Vec<EventRecord>,
) {
    let fraction = (seg_end - seg_start) as f64 / DAY_SECS as f64;
    for (kind, rate) in STAY_RATES {
        let count = stream.poisson(rate * fraction);
        for _ in 0..count {
            let code = samplers.for_kind(kind).sample(stream);
            let ts = seg_start + stream.below((seg_end - seg_start) as u64) as i64;
            let value = (kind == EventKind::Lab).then(|| {
                let range = &ranges[&code];
                let center = (range.low + range.high) / 2.0;
                let width = (range.high - range.low) / 2.0;
                center + 0.9 * width * stream.normal()
            });
            out.push(event(patient_id, kind, code, ts, value));
        }
    }
}

fn generate_patient(
    config: &SynthConfig,
    bank: &SeedBank,
    samplers: &Samplers,
    ranges: &BTreeMap<String, LabRange>,
    planted: &BTreeMap<&str, f64>,
    index: usize,
) -> RawPatient {
    let patient_id = format!("P{index:06}");
    let mut demo = bank.stream_indexed("demographics", index as u64);
    // birth between 1930 and 2000
    let birth_date = -1_262_304_000 + (demo.below(70 * 365) as i64) * DAY_SECS;
    let record = PatientRecord {
        patient_id: patient_id.clone(),
        birth_date,
        gender: pick_weighted(&mut demo, &[("female", 0.51), ("male", 0.48), ("unknown", 0.01)])
            .to_string(),
        race: pick_weighted(
            &mut demo,
            &[
                ("white", 0.45),
                ("asian", 0.25),
                ("black", 0.08),
                ("pacific_islander", 0.03),
                ("native_american", 0.02),
                ("other", 0.17),
            ],
        )
        .to_string(),
        ethnicity: pick_weighted(
            &mut demo,
            &[("non_hispanic", 0.70), ("hispanic", 0.25), ("unknown", 0.05)],
        )
        .to_string(),
        insurance: pick_weighted(
            &mut demo,
            &[
                ("private", 0.45),
                ("medicare", 0.30),
                ("medicaid", 0.12),
                ("self_pay", 0.05),
                ("other", 0.08),
            ],
        )
        .to_string(),
    };

    let mut events_stream = bank.stream_indexed("events", index as u64);
    let mut outpatient = Vec::new();
    let out_days = events_stream.poisson(OUTPATIENT_DAYS_MEAN);
    let day_span = ((config.range_end - config.range_start) / DAY_SECS - 1) as u64;
    for _ in 0..out_days {
        let day = config.range_start + (events_stream.below(day_span) as i64) * DAY_SECS;
        let n_events = 1 + events_stream.poisson(1.2);
        for _ in 0..n_events {
            let kind = match events_stream.below(3) {
                0 => EventKind::Diagnosis,
                1 => EventKind::Medication,
                _ => EventKind::Lab,
            };
            let code = samplers.for_kind(kind).sample(&mut events_stream);
            let ts = day + events_stream.below(DAY_SECS as u64) as i64;
            let value = (kind == EventKind::Lab).then(|| {
                let range = &ranges[&code];
                let center = (range.low + range.high) / 2.0;
                let width = (range.high - range.low) / 2.0;
                center + 0.9 * width * events_stream.normal()
            });
            outpatient.push(event(&patient_id, kind, code, ts, value));
        }
    }

    let mut enc_stream = bank.stream_indexed("encounters", index as u64);
    let mut hazard_stream = bank.stream_indexed("hazards", index as u64);
    let cap = config.stay_cap_days();
    let n_encounters = enc_stream.poisson(ENCOUNTERS_MEAN);
    let admit_span = (config.range_end - config.range_start - (cap + 2) * DAY_SECS) as u64;
    let mut encounters = Vec::new();
    for _ in 0..n_encounters {
        let admit = config.range_start + enc_stream.below(admit_span) as i64;
        let surgery = enc_stream.bernoulli(SURGERY_FRACTION);
        let mut anchors = Vec::new();
        let mut segments = Vec::new();
        let first_anchor = ceil_day(admit);
        for k in 0..cap {
            let anchor = first_anchor + k * DAY_SECS;
            let seg_start = admit.max(anchor - DAY_SECS);
            let mut segment = Vec::new();
            if seg_start < anchor {
                draw_segment(
                    &mut events_stream,
                    &patient_id,
                    seg_start,
                    anchor,
                    samplers,
                    ranges,
                    &mut segment,
                );
            }
            let mut present: BTreeSet<&str> = BTreeSet::new();
            for e in &segment {
                if let Some(code) = planted.get_key_value(e.code.as_str()) {
                    present.insert(code.0);
                }
            }
            let signal: f64 = present.iter().map(|c| planted[c]).sum();
            anchors.push(AnchorDraw {
                signal,
                uniform: hazard_stream.unit(),
                offset: hazard_stream.unit(),
            });
            segments.push(segment);
        }
        encounters.push(RawEncounter { admit, surgery, anchors, segments });
    }

    RawPatient { record, outpatient, encounters }
}

/// Realized day-level prevalence for a candidate bias: each encounter walks
/// its anchors until the fixed uniform draw falls under the hazard, or the
/// cap forces discharge. Monotone non-decreasing in the bias.
fn prevalence_for_bias(patients: &[RawPatient], bias: f64) -> f64 {
    let mut positives = 0u64;
    let mut anchors = 0u64;
    for p in patients {
        for enc in &p.encounters {
            let mut taken = enc.anchors.len();
            for (k, a) in enc.anchors.iter().enumerate() {
                if a.uniform < sigmoid(bias + a.signal) {
                    taken = k + 1;
                    break;
                }
            }
            positives += 1;
            anchors += taken as u64;
        }
    }
    if anchors == 0 {
        f64::NAN
    } else {
        positives as f64 / anchors as f64
    }
}

fn calibrate_bias(patients: &[RawPatient], target: f64) -> f64 {
    if patients.iter().all(|p| p.encounters.is_empty()) {
        return logit(target);
    }
    let (mut lo, mut hi) = (-15.0f64, 10.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if prevalence_for_bias(patients, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Number of anchors taken and the discharge timestamp under the final bias.
fn resolve_discharge(enc: &RawEncounter, bias: f64, first_anchor: i64) -> (usize, i64) {
    let mut taken = enc.anchors.len();
    for (k, a) in enc.anchors.iter().enumerate() {
        if a.uniform < sigmoid(bias + a.signal) {
            taken = k + 1;
            break;
        }
    }
    let last_anchor = first_anchor + (taken as i64 - 1) * DAY_SECS;
    let offset = enc.anchors[taken - 1].offset;
    // lands in (anchor, anchor + 24h]
    let discharge = last_anchor + 1 + (offset * (DAY_SECS - 1) as f64).floor() as i64;
    (taken, discharge)
}

pub fn generate_dataset(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let bank = SeedBank::new(config.seed);
    let samplers = Samplers::new(&config.code_pools);
    let ranges = lab_ranges(&config.code_pools, &bank, &samplers);
    let planted = plant_signal(config, &bank, &samplers);
    let planted_map: BTreeMap<&str, f64> =
        planted.iter().map(|p| (p.code.as_str(), p.weight)).collect();

    let raw: Vec<RawPatient> = (0..config.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(config, &bank, &samplers, &ranges, &planted_map, i))
        .collect();

    let bias = calibrate_bias(&raw, config.target_prevalence);
    let realized = prevalence_for_bias(&raw, bias);

    let mut patients = Vec::with_capacity(raw.len());
    let mut events: Vec<EventRecord> = raw
        .par_iter()
        .map(|p| {
            let mut list = p.outpatient.clone();
            for enc in &p.encounters {
                let first_anchor = ceil_day(enc.admit);
                let (taken, discharge) = resolve_discharge(enc, bias, first_anchor);
                let code = if enc.surgery { ENC_START_SURGERY_CODE } else { ENC_START_CODE };
                list.push(EventRecord {
                    patient_id: p.record.patient_id.clone(),
                    kind: EventKind::EncounterStart,
                    code: code.to_string(),
                    value: None,
                    timestamp: enc.admit,
                    surgery_flag: Some(enc.surgery),
                });
                list.push(event(
                    &p.record.patient_id,
                    EventKind::EncounterEnd,
                    ENC_END_CODE.to_string(),
                    discharge,
                    None,
                ));
                for segment in &enc.segments[..taken] {
                    list.extend_from_slice(segment);
                }
            }
            list
        })
        .flatten()
        .collect();
    patients.extend(raw.iter().map(|p| p.record.clone()));

    events.sort_by(|a, b| {
        (a.timestamp, &a.patient_id, a.kind, &a.code)
            .cmp(&(b.timestamp, &b.patient_id, b.kind, &b.code))
            .then(a.value.unwrap_or(0.0).total_cmp(&b.value.unwrap_or(0.0)))
    });

    let truth = TruthLog {
        bias,
        signal_strength: config.signal_strength,
        planted,
        realized_prevalence: realized.is_finite().then_some(realized),
    };
    Ok(SynthOutput { patients, events, truth, lab_ranges: ranges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort;

    fn small_config() -> SynthConfig {
        SynthConfig { n_patients: 300, seed: 7, ..SynthConfig::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small_config()).unwrap();
        let b = generate_dataset(&small_config()).unwrap();
        assert_eq!(a.patients, b.patients);
        assert_eq!(a.events, b.events);
        assert_eq!(a.truth.bias, b.truth.bias);
    }

    #[test]
    fn empty_population_yields_empty_collections() {
        let out = generate_dataset(&SynthConfig { n_patients: 0, ..SynthConfig::default() }).unwrap();
        assert!(out.patients.is_empty());
        assert!(out.events.is_empty());
        assert_eq!(out.truth.realized_prevalence, None);
    }

    #[test]
    fn invalid_prevalence_rejected() {
        for p in [0.0, 1.0, -0.5, 1.5] {
            let cfg = SynthConfig { target_prevalence: p, ..SynthConfig::default() };
            assert!(matches!(generate_dataset(&cfg), Err(Error::Config { .. })));
        }
    }

    #[test]
    fn events_well_formed_and_inside_range() {
        let cfg = small_config();
        let out = generate_dataset(&cfg).unwrap();
        assert!(!out.events.is_empty());
        for e in &out.events {
            e.validate().unwrap();
            assert!(e.timestamp >= cfg.range_start && e.timestamp < cfg.range_end);
        }
        // globally time-ordered
        assert!(out.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn encounter_marks_pair_up() {
        let out = generate_dataset(&small_config()).unwrap();
        let encounters = cohort::encounters_from_events(&out.events).unwrap();
        let starts =
            out.events.iter().filter(|e| e.kind == EventKind::EncounterStart).count();
        assert_eq!(encounters.len(), starts);
    }

    #[test]
    fn prevalence_lands_near_target() {
        let cfg = SynthConfig { n_patients: 2000, ..SynthConfig::default() };
        let out = generate_dataset(&cfg).unwrap();
        let encounters = cohort::encounters_from_events(&out.events).unwrap();
        let cleaned = cohort::clean_encounters(&encounters);
        let examples: Vec<_> = cleaned.iter().flat_map(|e| cohort::make_day_examples(e)).collect();
        assert!(examples.len() > 10_000, "got {} examples", examples.len());
        let prevalence =
            examples.iter().filter(|e| e.label).count() as f64 / examples.len() as f64;
        assert!(
            (prevalence - cfg.target_prevalence).abs() < 0.02,
            "prevalence {prevalence}"
        );
    }

    #[test]
    fn truth_log_reports_planted_codes() {
        let out = generate_dataset(&small_config()).unwrap();
        assert_eq!(out.truth.planted.len(), 3 * PLANTED_PER_FAMILY);
        for p in &out.truth.planted {
            assert!(p.weight.abs() > 0.0);
        }
    }
}
