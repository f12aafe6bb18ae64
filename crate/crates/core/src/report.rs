//! Study reports and their CSV form.
//!
//! CSV layout: a `# config <hash>` line, then the header
//! `study,group,key,arch,params,value,aux,note` and one row per record.
//! Floats are written in shortest round-trip form.
//!
//! Training logs use `epoch,stage,arch,arch_hash,loss` and search
//! histories `generation,arch,params,accuracy,loss`, each under the same
//! stamp line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evo::EvalRecord;
use crate::scheduler::StepLog;

pub const CSV_HEADER: [&str; 8] = ["study", "group", "key", "arch", "params", "value", "aux", "note"];

/// One measured sample. `key` is a block index, variant index or parameter
/// limit depending on the study; `aux` carries a secondary measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub group: String,
    pub key: u64,
    pub arch: String,
    pub params: u64,
    pub value: f64,
    pub aux: f64,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Statistics of `values` in the given order. `None` when empty.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Summary { count: values.len(), mean, std: var.sqrt(), min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: String,
    pub config_hash: String,
    pub records: Vec<StudyRecord>,
    /// Per group, in order of first appearance.
    pub summary: Vec<(String, Summary)>,
}

impl StudyReport {
    pub fn new(study: &str, config_hash: &str, records: Vec<StudyRecord>) -> Self {
        let summary = summarize(&records);
        Self { study: study.to_string(), config_hash: config_hash.to_string(), records, summary }
    }

    pub fn group(&self, name: &str) -> Option<&Summary> {
        self.summary.iter().find(|(g, _)| g == name).map(|(_, s)| s)
    }

    pub fn records_in<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a StudyRecord> + 'a {
        self.records.iter().filter(move |r| r.group == group)
    }

    /// True when the stored summary equals a fresh recomputation.
    pub fn summary_consistent(&self) -> bool {
        summarize(&self.records) == self.summary
    }

    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.study, self.config_hash)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut out = format!("# config {}\n", self.config_hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(CSV_HEADER)?;
            for r in &self.records {
                w.write_record([
                    self.study.as_str(),
                    &r.group,
                    &r.key.to_string(),
                    &r.arch,
                    &r.params.to_string(),
                    &r.value.to_string(),
                    &r.aux.to_string(),
                    &r.note,
                ])?;
            }
            w.flush()?;
        }
        Ok(out)
    }

    pub fn summary_text(&self) -> String {
        let mut s = format!("study {} config {}\n", self.study, self.config_hash);
        for (group, m) in &self.summary {
            let _ = writeln!(
                s,
                "{group}: n={} mean={:.6} std={:.6} min={:.6} max={:.6}",
                m.count, m.mean, m.std, m.min, m.max
            );
        }
        for note in self.records.iter().filter(|r| !r.note.is_empty()).map(|r| &r.note) {
            if !s.contains(note.as_str()) {
                let _ = writeln!(s, "note: {note}");
            }
        }
        s
    }

    /// Writes `<study>_<hash>.csv` and `<study>_<hash>.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.file_stem()));
        std::fs::write(&csv_path, self.to_csv()?)?;
        std::fs::write(dir.join(format!("{}.txt", self.file_stem())), self.summary_text())?;
        Ok(csv_path)
    }
}

fn summarize(records: &[StudyRecord]) -> Vec<(String, Summary)> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(g, _)| *g == r.group) {
            Some((_, v)) => v.push(r.value),
            None => groups.push((r.group.clone(), vec![r.value])),
        }
    }
    groups.into_iter().map(|(g, v)| (g, Summary::of(&v).expect("non-empty group"))).collect()
}

fn csv_rows<R, const N: usize>(
    config_hash: &str,
    header: Option<[&str; N]>,
    rows: impl Iterator<Item = R>,
    fields: impl Fn(R) -> [String; N],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        if let Some(h) = header {
            w.write_record(h)?;
        }
        for r in rows {
            w.write_record(fields(r))?;
        }
        w.flush()?;
    }
    if header.is_some() {
        let mut stamped = format!("# config {config_hash}\n").into_bytes();
        stamped.extend(out);
        out = stamped;
    }
    Ok(out)
}

/// Training-log rows; with `header` the stamp and column names come first,
/// without it the bytes are meant to be appended to an existing log.
pub fn step_log_csv(config_hash: &str, log: &[StepLog], header: bool) -> Result<Vec<u8>> {
    let h = header.then_some(["epoch", "stage", "arch", "arch_hash", "loss"]);
    csv_rows(config_hash, h, log.iter(), |s| {
        [s.epoch.to_string(), s.stage.to_string(), s.arch.to_string(), s.arch.fingerprint_hex(), s.loss.to_string()]
    })
}

pub fn search_history_csv(config_hash: &str, history: &[EvalRecord]) -> Result<Vec<u8>> {
    let h = Some(["generation", "arch", "params", "accuracy", "loss"]);
    csv_rows(config_hash, h, history.iter(), |r| {
        [r.generation.to_string(), r.arch.to_string(), r.params.to_string(), r.accuracy.to_string(), r.loss.to_string()]
    })
}

/// Reads the `# config <hash>` stamp from the first line of an artifact.
pub fn read_config_stamp(bytes: &[u8]) -> Result<String> {
    let line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    std::str::from_utf8(line)
        .ok()
        .and_then(|l| l.strip_prefix("# config "))
        .map(|h| h.trim().to_string())
        .ok_or_else(|| Error::Format { offset: 0, message: "missing '# config <hash>' line".into() })
}
