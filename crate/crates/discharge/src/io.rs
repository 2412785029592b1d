//! Artifact readers and writers. Every reader that touches bytes from disk
//! goes through a parse function that validates structure, so untrusted or
//! truncated files fail with an error instead of a panic. JSON objects use
//! ordered maps and structs, which keeps serialization byte-stable across
//! runs and thread counts.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::cohort::DayExample;
use crate::data::{EventRecord, LabRange, PatientRecord};
use crate::error::{Error, Result};
use crate::features::SparseVector;
use crate::metrics::{CalibrationBin, PrPoint, RocCurve, RocPoint};
use crate::timeutil::{format_utc, parse_utc};

// ---------------------------------------------------------------- generic

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}

// ----------------------------------------------------------- events.jsonl

/// Parse one events.jsonl line and enforce the record invariants.
pub fn parse_event_line(line: &str) -> Result<EventRecord> {
    let event: EventRecord = serde_json::from_str(line)?;
    event.validate()?;
    Ok(event)
}

pub fn write_events_jsonl(path: &Path, events: &[EventRecord]) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    for event in events {
        serde_json::to_writer(&mut file, event)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_events_jsonl(path: &Path) -> Result<Vec<EventRecord>> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut events = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = parse_event_line(&line)
            .map_err(|e| Error::data(format!("events line {}: {e}", idx + 1)))?;
        events.push(event);
    }
    Ok(events)
}

// ----------------------------------------------------------- patients.csv

pub const PATIENTS_HEADER: [&str; 6] =
    ["patient_id", "birth_date", "gender", "race", "ethnicity", "insurance"];

pub fn write_patients_csv(path: &Path, patients: &[PatientRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(PATIENTS_HEADER)?;
    for p in patients {
        writer.write_record([
            p.patient_id.as_str(),
            &format_utc(p.birth_date),
            &p.gender,
            &p.race,
            &p.ethnicity,
            &p.insurance,
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Parse patients.csv bytes: exact header, RFC 3339 birth dates, no blanks.
pub fn parse_patients_csv(bytes: &[u8]) -> Result<Vec<PatientRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = reader.headers()?.clone();
    if header.iter().ne(PATIENTS_HEADER) {
        return Err(Error::data(format!("unexpected patients.csv header: {header:?}")));
    }
    let mut patients = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != PATIENTS_HEADER.len() {
            return Err(Error::data("patients.csv row width mismatch"));
        }
        let field = |i: usize| -> Result<String> {
            let v = row.get(i).unwrap_or("").trim();
            if v.is_empty() {
                return Err(Error::data(format!("empty {} in patients.csv", PATIENTS_HEADER[i])));
            }
            Ok(v.to_string())
        };
        patients.push(PatientRecord {
            patient_id: field(0)?,
            birth_date: parse_utc(&field(1)?)?,
            gender: field(2)?,
            race: field(3)?,
            ethnicity: field(4)?,
            insurance: field(5)?,
        });
    }
    Ok(patients)
}

pub fn read_patients_csv(path: &Path) -> Result<Vec<PatientRecord>> {
    let bytes = std::fs::read(path)?;
    parse_patients_csv(&bytes)
}

// ----------------------------------------------------------- cohort.jsonl

pub fn parse_cohort_line(line: &str) -> Result<DayExample> {
    let example: DayExample = serde_json::from_str(line)?;
    if example.admit >= example.discharge {
        return Err(Error::data("day example with admit >= discharge"));
    }
    if example.anchor < example.admit || example.anchor >= example.discharge {
        return Err(Error::data("day example anchor outside its encounter"));
    }
    Ok(example)
}

pub fn write_cohort_jsonl(path: &Path, examples: &[DayExample]) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut file, ex)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_cohort_jsonl(path: &Path) -> Result<Vec<DayExample>> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut examples = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex = parse_cohort_line(&line)
            .map_err(|e| Error::data(format!("cohort line {}: {e}", idx + 1)))?;
        examples.push(ex);
    }
    Ok(examples)
}

// ------------------------------------------------------------ features.bin

pub const FEATURES_MAGIC: &[u8; 4] = b"DFB1";

/// Binary feature rows: magic, width u32, row count u64, then per row
/// (example id u64, nnz u32, nnz * (col u32, value f64)), little-endian.
pub fn write_features_bin(path: &Path, width: u32, rows: &[(u64, SparseVector)]) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    file.write_all(FEATURES_MAGIC)?;
    file.write_all(&width.to_le_bytes())?;
    file.write_all(&(rows.len() as u64).to_le_bytes())?;
    for (id, row) in rows {
        if row.width != width {
            return Err(Error::data("feature row width mismatch on write"));
        }
        file.write_all(&id.to_le_bytes())?;
        file.write_all(&(row.entries.len() as u32).to_le_bytes())?;
        for &(col, value) in &row.entries {
            file.write_all(&col.to_le_bytes())?;
            file.write_all(&value.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data("truncated features.bin"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse features.bin bytes with full structural validation (columns in
/// range and strictly increasing, finite values, honest lengths).
pub fn parse_features_bin(bytes: &[u8]) -> Result<(u32, Vec<(u64, SparseVector)>)> {
    let mut cur = ByteCursor { bytes, pos: 0 };
    if cur.take(4)? != FEATURES_MAGIC {
        return Err(Error::data("bad features.bin magic"));
    }
    let width = cur.u32()?;
    let count = cur.u64()?;
    // 12 bytes is the minimum row size; reject silly counts before allocating
    if count > (bytes.len() as u64) / 12 + 1 {
        return Err(Error::data("features.bin row count exceeds file size"));
    }
    let mut rows = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = cur.u64()?;
        let nnz = cur.u32()? as usize;
        if nnz > (bytes.len() - cur.pos) / 12 {
            return Err(Error::data("features.bin entry count exceeds file size"));
        }
        let mut entries = Vec::with_capacity(nnz);
        let mut prev: Option<u32> = None;
        for _ in 0..nnz {
            let col = cur.u32()?;
            let value = cur.f64()?;
            if col >= width {
                return Err(Error::data("feature column out of range"));
            }
            if prev.is_some_and(|p| col <= p) {
                return Err(Error::data("feature columns not strictly increasing"));
            }
            if !value.is_finite() {
                return Err(Error::data("non-finite feature value"));
            }
            prev = Some(col);
            entries.push((col, value));
        }
        rows.push((id, SparseVector { width, entries }));
    }
    if cur.pos != bytes.len() {
        return Err(Error::data("trailing bytes in features.bin"));
    }
    Ok((width, rows))
}

pub fn read_features_bin(path: &Path) -> Result<(u32, Vec<(u64, SparseVector)>)> {
    let mut bytes = Vec::new();
    BufReader::new(std::fs::File::open(path)?).read_to_end(&mut bytes)?;
    parse_features_bin(&bytes)
}

// ------------------------------------------------------------- curve CSVs

pub fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "threshold,fpr,tpr")?;
    for p in &curve.points {
        writeln!(file, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    file.flush()?;
    Ok(())
}

/// Parse roc.csv text; thresholds may be `inf`/`-inf`, rates must lie in
/// [0,1] and be non-decreasing.
pub fn parse_roc_csv(text: &str) -> Result<RocCurve> {
    let mut lines = text.lines();
    match lines.next() {
        Some("threshold,fpr,tpr") => {}
        other => return Err(Error::data(format!("bad roc.csv header: {other:?}"))),
    }
    let mut points = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = |name: &str| -> Result<f64> {
            let raw = parts
                .next()
                .ok_or_else(|| Error::data(format!("roc.csv line {}: missing {name}", idx + 2)))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|e| Error::data(format!("roc.csv line {}: {name}: {e}", idx + 2)))
        };
        let threshold = next("threshold")?;
        let fpr = next("fpr")?;
        let tpr = next("tpr")?;
        if parts.next().is_some() {
            return Err(Error::data(format!("roc.csv line {}: extra fields", idx + 2)));
        }
        if threshold.is_nan() {
            return Err(Error::data("roc.csv threshold is NaN"));
        }
        if !(0.0..=1.0).contains(&fpr) || !(0.0..=1.0).contains(&tpr) {
            return Err(Error::data("roc.csv rates outside [0,1]"));
        }
        points.push(RocPoint { threshold, fpr, tpr });
    }
    if points.len() < 2 {
        return Err(Error::data("roc.csv needs at least the two endpoints"));
    }
    for pair in points.windows(2) {
        if !(pair[1].threshold < pair[0].threshold) {
            return Err(Error::data("roc.csv thresholds must strictly decrease"));
        }
        if pair[1].fpr < pair[0].fpr || pair[1].tpr < pair[0].tpr {
            return Err(Error::data("roc.csv rates must be non-decreasing"));
        }
    }
    Ok(RocCurve { points })
}

pub fn read_roc_csv(path: &Path) -> Result<RocCurve> {
    parse_roc_csv(&std::fs::read_to_string(path)?)
}

pub fn write_pr_csv(path: &Path, points: &[PrPoint]) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "threshold,recall,precision")?;
    for p in points {
        writeln!(file, "{},{},{}", p.threshold, p.recall, p.precision)?;
    }
    file.flush()?;
    Ok(())
}

pub fn write_calibration_csv(path: &Path, bins: &[CalibrationBin]) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "bin_low,bin_high,count,mean_pred,frac_pos")?;
    for b in bins {
        let fmt = |v: Option<f64>| v.map_or(String::from(""), |x| x.to_string());
        writeln!(
            file,
            "{},{},{},{},{}",
            b.lo,
            b.hi,
            b.count,
            fmt(b.mean_predicted),
            fmt(b.fraction_positive)
        )?;
    }
    file.flush()?;
    Ok(())
}

// -------------------------------------------------------------- train log

pub fn write_train_log_csv(path: &Path, trace: &[crate::gru::EpochLog]) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "epoch,task,mean_loss,validation_auroc")?;
    for e in trace {
        for (task, loss) in
            ["discharge24", "inpatient_now", "inpatient_next"].iter().zip(e.task_loss)
        {
            if let Some(loss) = loss {
                writeln!(
                    file,
                    "{},{},{},{}",
                    e.epoch,
                    task,
                    loss,
                    e.validation_auroc.map_or(String::new(), |a| a.to_string())
                )?;
            }
        }
    }
    file.flush()?;
    Ok(())
}

// --------------------------------------------------------------- lab ranges

pub fn write_lab_ranges(path: &Path, ranges: &BTreeMap<String, LabRange>) -> Result<()> {
    write_json(path, ranges)
}

pub fn read_lab_ranges(path: &Path) -> Result<BTreeMap<String, LabRange>> {
    let ranges: BTreeMap<String, LabRange> = read_json(path)?;
    for r in ranges.values() {
        r.validate()?;
    }
    Ok(ranges)
}
