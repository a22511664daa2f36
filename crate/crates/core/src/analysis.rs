//! Gradient traces, inner-product histograms and harmonization replay.
//!
//! A trace is JSONL, one object per line: either `{"iter": n, "ip": x}` or
//! `{"iter": n, "g1": [...], "g2": [...]}`. Full lines may also carry `ip`,
//! which must then agree with `g1 . g2`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonizer::{harmonize, GradientPair, HarmonizeMethod};
use crate::vecmath::{dot, ParamVector};

/// Stored and recomputed inner products may differ by this much, relative
/// to `|g1| |g2|`.
pub const IP_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub iter: u64,
    pub ip: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g1: Option<ParamVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2: Option<ParamVector>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    iter: u64,
    ip: Option<f64>,
    g1: Option<ParamVector>,
    g2: Option<ParamVector>,
}

impl TraceEntry {
    pub fn ip(iter: u64, ip: f64) -> Self {
        Self { iter, ip, g1: None, g2: None }
    }

    pub fn full(iter: u64, pair: &GradientPair) -> Self {
        Self { iter, ip: pair.inner_product(), g1: Some(pair.g1().clone()), g2: Some(pair.g2().clone()) }
    }

    pub fn pair(&self) -> Option<GradientPair> {
        match (&self.g1, &self.g2) {
            (Some(a), Some(b)) => GradientPair::new(a.clone(), b.clone()).ok(),
            _ => None,
        }
    }

    fn from_raw(raw: RawEntry) -> std::result::Result<Self, String> {
        match (raw.g1, raw.g2) {
            (Some(g1), Some(g2)) => {
                let computed = dot(&g1, &g2).map_err(|e| e.to_string())?;
                if let Some(ip) = raw.ip {
                    let tol = IP_REL_TOL * (g1.norm() * g2.norm()).max(f64::MIN_POSITIVE);
                    if (ip - computed).abs() > tol {
                        return Err(format!("stored ip {ip} disagrees with g1.g2 = {computed}"));
                    }
                }
                Ok(Self { iter: raw.iter, ip: computed, g1: Some(g1), g2: Some(g2) })
            }
            (None, None) => match raw.ip {
                Some(ip) if ip.is_finite() => Ok(Self::ip(raw.iter, ip)),
                Some(ip) => Err(format!("non-finite ip {ip}")),
                None => Err("entry needs `ip` or both `g1` and `g2`".into()),
            },
            _ => Err("`g1` and `g2` must appear together".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientTrace {
    entries: Vec<TraceEntry>,
}

impl GradientTrace {
    pub fn new(entries: Vec<TraceEntry>) -> Result<Self> {
        let mut t = Self::default();
        for e in entries {
            t.push(e)?;
        }
        Ok(t)
    }

    /// Appends an entry; iterations must be strictly increasing.
    pub fn push(&mut self, entry: TraceEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.iter <= last.iter {
                return Err(Error::InvalidDataset(format!(
                    "trace iterations must increase: {} after {}",
                    entry.iter, last.iter
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn inner_products(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.ip).collect()
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut *w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<GradientTrace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_trace(BufReader::new(file), path)
}

/// Parses JSONL from any reader; `origin` only labels errors. Blank lines are
/// skipped.
pub fn read_trace<R: BufRead>(reader: R, origin: &Path) -> Result<GradientTrace> {
    let mut trace = GradientTrace::default();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(&line).map_err(|e| Error::parse(origin, n, e.to_string()))?;
        let entry = TraceEntry::from_raw(raw).map_err(|m| Error::parse(origin, n, m))?;
        trace.push(entry).map_err(|e| Error::parse(origin, n, e.to_string()))?;
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    pub obtuse_fraction: f64,
}

impl Histogram {
    /// Equal-width bins over `[min, max]`, each left-closed except the last,
    /// which is closed on both sides. A zero-width range is widened to
    /// `[v - 0.5, v + 0.5]`.
    pub fn from_values(values: &[f64], num_bins: usize) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 bins, got {num_bins}")));
        }
        if values.is_empty() {
            return Err(Error::InvalidDataset("histogram of an empty trace".into()));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let mut lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / num_bins as f64;
        let mut bin_edges: Vec<f64> = (0..num_bins).map(|i| lo + i as f64 * width).collect();
        bin_edges.push(hi);
        let mut counts = vec![0u64; num_bins];
        for &v in values {
            let b = (((v - lo) / width).floor() as usize).min(num_bins - 1);
            counts[b] += 1;
        }
        let obtuse = values.iter().filter(|&&v| v < 0.0).count();
        Ok(Self {
            bin_edges,
            counts,
            total: values.len() as u64,
            obtuse_fraction: obtuse as f64 / values.len() as f64,
        })
    }

    /// `bin_lo,bin_hi,count` rows under a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::InvalidDataset(format!("csv write failed: {e}"));
        out.write_record(["bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
        for (i, c) in self.counts.iter().enumerate() {
            out.write_record([self.bin_edges[i].to_string(), self.bin_edges[i + 1].to_string(), c.to_string()])
                .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::io("<histogram>", e))
    }
}

pub fn histogram(trace: &GradientTrace, num_bins: usize) -> Result<Histogram> {
    Histogram::from_values(&trace.inner_products(), num_bins)
}

/// Replays `method` on every full entry and returns the inner products of
/// the harmonized pairs.
pub fn post_harmonization_trace(trace: &GradientTrace, method: HarmonizeMethod) -> Result<GradientTrace> {
    let mut out = GradientTrace::default();
    for e in trace.entries() {
        let pair = e.pair().ok_or(Error::IncompleteTrace { iter: e.iter })?;
        let r = harmonize(method, &pair)?;
        out.push(TraceEntry::ip(e.iter, dot(&r.tilde_g1, &r.tilde_g2)?))?;
    }
    Ok(out)
}
