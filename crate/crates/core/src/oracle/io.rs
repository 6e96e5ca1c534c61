//! Columnar sweep file and CSV exports.
//!
//! Sweep file, little-endian:
//!
//! ```text
//! "DYNS"  u16 version (=1)  u16 flags
//! u32 header length, UTF-8 JSON header
//!     {perms, class_count, samples, macs, dataset}
//! u16 labels[n]
//! u16 predictions[n·M]   sample-major
//! f32 confidences[n·M]   sample-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::analysis::{Bounds, GreedyStep, PreferenceReport};
use super::SweepResult;
use crate::error::{Error, Result};
use crate::options::Permutation;

pub const SWEEP_MAGIC: [u8; 4] = *b"DYNS";
pub const SWEEP_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    perms: Vec<Permutation>,
    class_count: usize,
    samples: usize,
    macs: Vec<u64>,
    dataset: String,
}

impl SweepResult {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check()?;
        let header = serde_json::to_vec(&Header {
            perms: self.perms.clone(),
            class_count: self.class_count,
            samples: self.n(),
            macs: self.macs.clone(),
            dataset: self.dataset.clone(),
        })?;
        let cells = self.predictions.len();
        let mut out = Vec::with_capacity(12 + header.len() + 2 * self.n() + 6 * cells);
        out.extend_from_slice(&SWEEP_MAGIC);
        out.extend_from_slice(&SWEEP_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for &l in &self.labels {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        for p in &self.predictions {
            out.extend_from_slice(&p.to_le_bytes());
        }
        for c in &self.confidences {
            out.extend_from_slice(&c.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |at: usize, len: usize, what: &str| {
            bytes.get(at..at + len).ok_or_else(|| Error::Truncated(format!("sweep {what} at byte {at}")))
        };
        let magic: [u8; 4] = take(0, 4, "magic")?.try_into().expect("four bytes");
        if magic != SWEEP_MAGIC {
            return Err(Error::BadMagic { expected: SWEEP_MAGIC, found: magic });
        }
        let version = u16::from_le_bytes(take(4, 2, "version")?.try_into().expect("two bytes"));
        if version != SWEEP_VERSION {
            return Err(Error::BadVersion(version));
        }
        let hlen = u32::from_le_bytes(take(8, 4, "header length")?.try_into().expect("four bytes")) as usize;
        let header: Header = serde_json::from_slice(take(12, hlen, "header")?)
            .map_err(|e| Error::Format(format!("sweep header: {e}")))?;
        let (n, m) = (header.samples, header.perms.len());
        let mut at = 12 + hlen;
        let u16s = |at: usize, count: usize, what: &str| -> Result<Vec<u16>> {
            Ok(take(at, 2 * count, what)?.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect())
        };
        let labels = u16s(at, n, "labels")?.into_iter().map(usize::from).collect();
        at += 2 * n;
        let predictions = u16s(at, n * m, "predictions")?;
        at += 2 * n * m;
        let confidences = take(at, 4 * n * m, "confidences")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        at += 4 * n * m;
        if at != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in sweep file", bytes.len() - at)));
        }
        let mut sr = SweepResult::from_parts(header.perms, labels, header.class_count, predictions, confidences, header.macs)?;
        sr.dataset = header.dataset;
        Ok(sr)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv: {e}")))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// One row per permutation: index, label, static accuracy, MACs.
pub fn static_csv(sr: &SweepResult, base: &Permutation) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "label", "accuracy", "macs"]).map_err(csv_err)?;
    for (m, acc) in sr.static_accuracies().iter().enumerate() {
        w.write_record([m.to_string(), sr.perms[m].label(base), acc.to_string(), sr.macs[m].to_string()]).map_err(csv_err)?;
    }
    finish(w)
}

pub fn bounds_csv(rows: &[(String, Bounds)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "worst", "median", "best", "volatility"]).map_err(csv_err)?;
    for (name, b) in rows {
        w.write_record([name.clone(), b.worst.to_string(), b.median.to_string(), b.best.to_string(), b.volatility().to_string()])
            .map_err(csv_err)?;
    }
    finish(w)
}

pub fn greedy_csv(sr: &SweepResult, curve: &[GreedyStep], base: &Permutation) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "accuracy", "perm_index", "label"]).map_err(csv_err)?;
    for s in curve {
        w.write_record([s.k.to_string(), s.accuracy.to_string(), s.perm.to_string(), sr.perms[s.perm].label(base)])
            .map_err(csv_err)?;
    }
    finish(w)
}

pub fn histogram_csv(hist: &[usize]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["unique_predictions", "samples"]).map_err(csv_err)?;
    for (c, n) in hist.iter().enumerate().skip(1) {
        w.write_record([c.to_string(), n.to_string()]).map_err(csv_err)?;
    }
    finish(w)
}

pub fn marginals_csv(report: &PreferenceReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "slot", "attribute", "value", "fraction"]).map_err(csv_err)?;
    for g in &report.groups {
        for s in &g.marginals {
            w.write_record([g.group.clone(), s.slot.to_string(), s.attribute.to_string(), s.value.to_string(), s.fraction.to_string()])
                .map_err(csv_err)?;
        }
    }
    finish(w)
}
