//! Discrete-window detection: one SEAV and one LDCA per window, reset at each
//! window boundary.

use std::net::Ipv4Addr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hashing::{SeedSet, DEFAULT_MASTER_SEED};
use crate::long_sketch::{Estimate, LdcaConfig, LdcaSketch};
use crate::short_sketch::{
    CandidateHost, SeaOverflow, SeavConfig, SeavSketch, DEFAULT_RESTORE_CAP,
};
use crate::trace::TraceRecord;

pub const DEFAULT_BETA: f64 = 0.8;
pub const DEFAULT_WINDOW_SECONDS: u32 = 300;

/// Everything needed to build a detector. Two detectors with equal configs
/// produce mergeable sketches.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub seav: SeavConfig,
    pub ldca: LdcaConfig,
    pub master_seed: u64,
    /// Candidates are reported when their estimate reaches `beta * theta`.
    pub beta: f64,
    pub restore_cap: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            seav: SeavConfig::default(),
            ldca: LdcaConfig::default(),
            master_seed: DEFAULT_MASTER_SEED,
            beta: DEFAULT_BETA,
            restore_cap: DEFAULT_RESTORE_CAP,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::ConfigInvalid {
                constraint: "beta",
                detail: format!("filter slack must be in (0, 1], got {}", self.beta),
            });
        }
        if self.restore_cap == 0 {
            return Err(Error::ConfigInvalid {
                constraint: "restore cap",
                detail: "restore cap must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn theta(&self) -> u64 {
        self.seav.theta()
    }

    pub fn seeds(&self) -> Result<SeedSet> {
        SeedSet::new(self.master_seed, self.ldca.rows() as usize)
    }

    /// Estimate a candidate must reach to be reported.
    pub fn filter_threshold(&self) -> f64 {
        self.beta * self.theta() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportSource {
    Discrete,
    Sliding,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionReport {
    pub ip: u32,
    pub estimate: f64,
    pub saturated: bool,
    /// Window id for discrete reports, slide id (last slice) for sliding ones.
    pub window_id: u64,
    pub source: ReportSource,
}

impl DetectionReport {
    pub fn addr(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.ip)
    }
}

/// Result of one detection pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowOutcome {
    pub window_id: u64,
    /// Sorted by IP.
    pub reports: Vec<DetectionReport>,
    /// Number of candidates produced by restore, before filtering.
    pub candidates: usize,
    /// SEAs skipped because restore exceeded its cap.
    pub overflows: Vec<SeaOverflow>,
}

/// Filters restored candidates through a cardinality estimator.
pub(crate) fn filter_candidates(
    candidates: &[CandidateHost],
    estimate: impl Fn(u32) -> Estimate + Sync,
    threshold: f64,
    window_id: u64,
    source: ReportSource,
) -> Vec<DetectionReport> {
    let mut out: Vec<DetectionReport> = candidates
        .par_iter()
        .filter_map(|c| {
            let e = estimate(c.ip);
            (e.saturated || e.value >= threshold).then_some(DetectionReport {
                ip: c.ip,
                estimate: e.value,
                saturated: e.saturated,
                window_id,
                source,
            })
        })
        .collect();
    out.sort_unstable_by_key(|r| r.ip);
    out
}

pub(crate) fn log_overflows(window_id: u64, overflows: &[SeaOverflow]) {
    for o in overflows {
        log::warn!(
            "window {window_id}: {}",
            Error::RestoreOverflow {
                rp: o.rp,
                cap: o.cap
            }
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState {
    config: DetectorConfig,
    seav: SeavSketch,
    ldca: LdcaSketch,
    window_id: u64,
    pair_count: u64,
}

impl DetectorState {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let seeds = config.seeds()?;
        Ok(DetectorState {
            seav: SeavSketch::new(config.seav.clone(), &seeds),
            ldca: LdcaSketch::new(config.ldca, &seeds)?,
            config,
            window_id: 0,
            pair_count: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn seav(&self) -> &SeavSketch {
        &self.seav
    }

    pub fn ldca(&self) -> &LdcaSketch {
        &self.ldca
    }

    pub fn window_id(&self) -> u64 {
        self.window_id
    }

    pub fn pair_count(&self) -> u64 {
        self.pair_count
    }

    /// SEAV plus LDCA bytes.
    pub fn memory_bytes(&self) -> usize {
        self.seav.memory_bytes() + self.ldca.memory_bytes()
    }

    // scan-path:begin
    #[inline]
    pub fn process_pair(&mut self, hip: u32, oip: u32) {
        self.seav.update(hip, oip);
        self.ldca.update(hip, oip);
        self.pair_count += 1;
    }
    // scan-path:end

    /// Scans `pairs` on up to `threads` shards, each into a private sketch
    /// pair, then OR-merges the shards into this state.
    pub fn process_pairs_parallel(&mut self, pairs: &[(u32, u32)], threads: usize) -> Result<()> {
        let threads = threads.max(1);
        if threads == 1 || pairs.len() < 2 * threads {
            for &(h, o) in pairs {
                self.process_pair(h, o);
            }
            return Ok(());
        }
        let chunk = pairs.len().div_ceil(threads);
        let shards: Vec<DetectorState> = pairs
            .par_chunks(chunk)
            .map(|part| {
                let mut shard = self.empty_like();
                for &(h, o) in part {
                    shard.process_pair(h, o);
                }
                shard
            })
            .collect();
        for shard in &shards {
            self.merge(shard)?;
        }
        Ok(())
    }

    fn empty_like(&self) -> DetectorState {
        let mut s = self.clone();
        s.seav.clear();
        s.ldca.clear();
        s.pair_count = 0;
        s
    }

    /// OR-merges another state built from the same config.
    pub fn merge(&mut self, other: &DetectorState) -> Result<()> {
        self.seav.merge(&other.seav)?;
        self.ldca.merge(&other.ldca)?;
        self.pair_count += other.pair_count;
        Ok(())
    }

    /// Restores candidates and keeps those whose estimate reaches
    /// `beta * theta` (or whose union register saturated).
    pub fn finalize_window(&self) -> WindowOutcome {
        self.finalize_with_beta(self.config.beta)
    }

    pub fn finalize_with_beta(&self, beta: f64) -> WindowOutcome {
        finalize_sketches(
            &self.seav,
            &self.ldca,
            self.config.restore_cap,
            beta * self.config.theta() as f64,
            self.window_id,
        )
    }

    /// Zeroes all registers and moves to the next window.
    pub fn reset(&mut self) {
        self.seav.clear();
        self.ldca.clear();
        self.pair_count = 0;
        self.window_id += 1;
    }

    /// Zeroes all registers and jumps to `window_id`, which must be ahead of
    /// the current one.
    pub fn reset_to(&mut self, window_id: u64) -> Result<()> {
        if window_id <= self.window_id {
            return Err(Error::invalid(format!(
                "window id must increase: {} -> {window_id}",
                self.window_id
            )));
        }
        self.reset();
        self.window_id = window_id;
        Ok(())
    }

    pub(crate) fn from_parts(
        config: DetectorConfig,
        seav: SeavSketch,
        ldca: LdcaSketch,
        window_id: u64,
    ) -> DetectorState {
        DetectorState {
            config,
            seav,
            ldca,
            window_id,
            pair_count: 0,
        }
    }
}

/// Restore + LDCA filter over a pair of (possibly merged) sketches.
pub fn finalize_sketches(
    seav: &SeavSketch,
    ldca: &LdcaSketch,
    restore_cap: u64,
    threshold: f64,
    window_id: u64,
) -> WindowOutcome {
    let restored = seav.restore(restore_cap);
    log_overflows(window_id, &restored.overflows);
    WindowOutcome {
        window_id,
        reports: filter_candidates(
            &restored.candidates,
            |ip| ldca.estimate(ip),
            threshold,
            window_id,
            ReportSource::Discrete,
        ),
        candidates: restored.candidates.len(),
        overflows: restored.overflows,
    }
}

/// Runs discrete windows of `window_slices` slices over a trace whose records
/// are ordered by slice. Windows without traffic produce no outcome.
pub fn detect_trace(
    config: &DetectorConfig,
    records: &[TraceRecord],
    window_slices: u32,
    threads: usize,
) -> Result<Vec<WindowOutcome>> {
    if window_slices == 0 {
        return Err(Error::invalid("window must span at least one slice"));
    }
    let mut state = DetectorState::new(config.clone())?;
    let mut outcomes = Vec::new();
    for (window_id, batch) in windows(records, window_slices)? {
        if window_id != state.window_id() {
            state.reset_to(window_id)?;
        }
        let pairs: Vec<(u32, u32)> = batch.iter().map(|r| (r.hip, r.oip)).collect();
        state.process_pairs_parallel(&pairs, threads)?;
        outcomes.push(state.finalize_window());
    }
    Ok(outcomes)
}

/// Splits slice-ordered records into `(window_id, records)` runs.
pub fn windows(records: &[TraceRecord], window_slices: u32) -> Result<Vec<(u64, &[TraceRecord])>> {
    let mut out: Vec<(u64, &[TraceRecord])> = Vec::new();
    let mut start = 0;
    for i in 1..=records.len() {
        let boundary = i == records.len()
            || records[i].slice / window_slices != records[start].slice / window_slices;
        if i < records.len() && records[i].slice < records[i - 1].slice {
            return Err(Error::Data(format!(
                "trace is not ordered by slice at record {i} ({} after {})",
                records[i].slice,
                records[i - 1].slice
            )));
        }
        if boundary {
            out.push((
                (records[start].slice / window_slices) as u64,
                &records[start..i],
            ));
            start = i;
        }
    }
    Ok(out)
}
