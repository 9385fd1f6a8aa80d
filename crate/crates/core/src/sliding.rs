//! Sliding-window detection.
//!
//! Every SEAV and LDCA bit is replaced by the last slice in which it was set.
//! A bit is active while `now - stamp < window_slices`; the active view of the
//! sketches is what discrete detection would see for the last
//! `window_slices` slices. Expiry is evaluated lazily when the view is read,
//! so moving to the next slice does not touch the pool.

use crate::error::{Error, Result};
use crate::long_sketch::{ldc_estimate, Estimate, LdcaSketch};
use crate::short_sketch::SeavSketch;
use crate::trace::TraceRecord;
use crate::window::{
    filter_candidates, log_overflows, DetectorConfig, ReportSource, WindowOutcome,
};

/// Default slice width in seconds.
pub const DEFAULT_SLICE_SECONDS: u32 = 1;
/// Default window length in slices.
pub const DEFAULT_WINDOW_SLICES: u32 = 300;

const NEVER: u32 = 0;

/// One timestamp per sketch bit. Stamps are stored as `slice + 1`, with zero
/// meaning the bit has never been set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampPool {
    stamps: Vec<u32>,
    window_slices: u32,
    now: u32,
}

impl TimestampPool {
    pub fn new(slots: usize, window_slices: u32) -> Result<Self> {
        if window_slices == 0 {
            return Err(Error::invalid("window must span at least one slice"));
        }
        Ok(TimestampPool {
            stamps: vec![NEVER; slots],
            window_slices,
            now: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn now(&self) -> u32 {
        self.now
    }

    pub fn window_slices(&self) -> u32 {
        self.window_slices
    }

    pub fn memory_bytes(&self) -> usize {
        self.stamps.len() * std::mem::size_of::<u32>()
    }

    /// Records that `slot` was set during slice `at`; keeps the newest stamp.
    pub fn touch(&mut self, slot: usize, at: u32) -> Result<()> {
        if slot >= self.stamps.len() {
            return Err(Error::invalid(format!(
                "slot {slot} out of range for {} slots",
                self.stamps.len()
            )));
        }
        if at == u32::MAX {
            return Err(Error::invalid("slice index exhausted the timestamp range"));
        }
        self.touch_unchecked(slot, at);
        Ok(())
    }

    // scan-path:begin
    #[inline]
    pub(crate) fn touch_unchecked(&mut self, slot: usize, at: u32) {
        let s = &mut self.stamps[slot];
        *s = (*s).max(at + 1);
    }
    // scan-path:end

    /// Last slice in which `slot` was set.
    pub fn stamp(&self, slot: usize) -> Option<u32> {
        match self.stamps[slot] {
            NEVER => None,
            s => Some(s - 1),
        }
    }

    pub fn is_active(&self, slot: usize) -> bool {
        match self.stamp(slot) {
            None => false,
            Some(t) => t > self.now || self.now - t < self.window_slices,
        }
    }

    pub fn advance_slice(&mut self) -> Result<()> {
        self.advance_to(self.now as u64 + 1)
    }

    pub fn advance_to(&mut self, slice: u64) -> Result<()> {
        if slice >= u32::MAX as u64 {
            return Err(Error::invalid("slice index exhausted the timestamp range"));
        }
        self.now = self.now.max(slice as u32);
        Ok(())
    }

    /// Per-slot maximum of another pool of the same size.
    pub fn merge(&mut self, other: &TimestampPool) -> Result<()> {
        if self.stamps.len() != other.stamps.len() || self.window_slices != other.window_slices {
            return Err(Error::MergeIncompatible(
                "timestamp pools differ in size or window".into(),
            ));
        }
        for (a, b) in self.stamps.iter_mut().zip(&other.stamps) {
            *a = (*a).max(*b);
        }
        self.now = self.now.max(other.now);
        Ok(())
    }

    pub(crate) fn raw(&self) -> &[u32] {
        &self.stamps
    }

    pub(crate) fn from_raw(stamps: Vec<u32>, window_slices: u32, now: u32) -> Result<Self> {
        let mut pool = TimestampPool::new(0, window_slices)?;
        pool.stamps = stamps;
        pool.now = now;
        Ok(pool)
    }
}

/// Sliding-window counterpart of [`DetectorState`](crate::window::DetectorState).
#[derive(Debug, Clone)]
pub struct SlidingDetector {
    config: DetectorConfig,
    // Empty sketches used only for addressing and as materialization targets.
    seav_layout: SeavSketch,
    ldca_layout: LdcaSketch,
    seav_pool: TimestampPool,
    ldca_pool: TimestampPool,
}

impl SlidingDetector {
    pub fn new(config: DetectorConfig, window_slices: u32) -> Result<Self> {
        config.validate()?;
        let seeds = config.seeds()?;
        let seav_layout = SeavSketch::new(config.seav.clone(), &seeds);
        let ldca_layout = LdcaSketch::new(config.ldca, &seeds)?;
        let seav_slots = config.seav.total_se() * config.seav.g() as usize;
        let ldca_slots = config.ldca.total_bits() as usize;
        Ok(SlidingDetector {
            seav_pool: TimestampPool::new(seav_slots, window_slices)?,
            ldca_pool: TimestampPool::new(ldca_slots, window_slices)?,
            seav_layout,
            ldca_layout,
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn now(&self) -> u32 {
        self.seav_pool.now()
    }

    pub fn window_slices(&self) -> u32 {
        self.seav_pool.window_slices()
    }

    pub fn seav_pool(&self) -> &TimestampPool {
        &self.seav_pool
    }

    pub fn ldca_pool(&self) -> &TimestampPool {
        &self.ldca_pool
    }

    /// Total slot count; equals the SEAV plus LDCA bit count.
    pub fn slot_count(&self) -> usize {
        self.seav_pool.len() + self.ldca_pool.len()
    }

    pub fn memory_bytes(&self) -> usize {
        self.seav_pool.memory_bytes() + self.ldca_pool.memory_bytes()
    }

    // scan-path:begin
    /// Records a pair in the current slice.
    #[inline]
    pub fn process_pair(&mut self, hip: u32, oip: u32) {
        let now = self.seav_pool.now;
        let g = self.config.seav.g() as usize;
        let k = self.config.ldca.k() as usize;
        let seav_pool = &mut self.seav_pool;
        self.seav_layout.for_each_bit(hip, oip, |se, bit| {
            seav_pool.touch_unchecked(se * g + bit as usize, now)
        });
        let ldca_pool = &mut self.ldca_pool;
        self.ldca_layout.for_each_bit(hip, oip, |ldc, bit| {
            ldca_pool.touch_unchecked(ldc * k + bit as usize, now)
        });
    }
    // scan-path:end

    pub fn advance_slice(&mut self) -> Result<()> {
        self.seav_pool.advance_slice()?;
        self.ldca_pool.advance_slice()
    }

    pub fn advance_to(&mut self, slice: u32) -> Result<()> {
        self.seav_pool.advance_to(slice as u64)?;
        self.ldca_pool.advance_to(slice as u64)
    }

    /// SEAV holding exactly the active bits.
    pub fn materialize_seav(&self) -> SeavSketch {
        let mut view = self.seav_layout.clone();
        let g = self.config.seav.g() as usize;
        for slot in 0..self.seav_pool.len() {
            if self.seav_pool.is_active(slot) {
                view.set_bit(slot / g, (slot % g) as u32);
            }
        }
        view
    }

    /// LDCA holding exactly the active bits.
    pub fn materialize_ldca(&self) -> LdcaSketch {
        let mut view = self.ldca_layout.clone();
        let k = self.config.ldca.k() as usize;
        for slot in 0..self.ldca_pool.len() {
            if self.ldca_pool.is_active(slot) {
                view.set_bit(slot / k, (slot % k) as u32);
            }
        }
        view
    }

    /// Estimate over the active bits of `hip`'s union register, without
    /// materializing the whole LDCA.
    pub fn estimate(&self, hip: u32) -> Estimate {
        let k = self.config.ldca.k() as usize;
        let rows = self.config.ldca.rows() as usize;
        let bases: Vec<usize> = (0..rows)
            .map(|row| {
                self.ldca_layout
                    .ldc_index(row, self.ldca_layout.column_of(row, hip))
                    * k
            })
            .collect();
        let ones = (0..k)
            .filter(|&bit| bases.iter().all(|&b| self.ldca_pool.is_active(b + bit)))
            .count();
        ldc_estimate((k - ones) as u64, k as u64).expect("ones never exceed k")
    }

    /// Detection over the window ending at the current slice. Reports carry
    /// the current slice as their id.
    pub fn detect(&self) -> WindowOutcome {
        self.detect_with_beta(self.config.beta)
    }

    pub fn detect_with_beta(&self, beta: f64) -> WindowOutcome {
        let slide = self.now() as u64;
        let restored = self.materialize_seav().restore(self.config.restore_cap);
        log_overflows(slide, &restored.overflows);
        WindowOutcome {
            window_id: slide,
            reports: filter_candidates(
                &restored.candidates,
                |ip| self.estimate(ip),
                beta * self.config.theta() as f64,
                slide,
                ReportSource::Sliding,
            ),
            candidates: restored.candidates.len(),
            overflows: restored.overflows,
        }
    }

    pub(crate) fn pools_mut(&mut self) -> (&mut TimestampPool, &mut TimestampPool) {
        (&mut self.seav_pool, &mut self.ldca_pool)
    }
}

/// Runs the sliding detector over slice-ordered records, detecting at the end
/// of every slice `t` with `(t + 1) % every == 0`.
pub fn detect_trace_sliding(
    config: &DetectorConfig,
    records: &[TraceRecord],
    window_slices: u32,
    every: u32,
) -> Result<Vec<WindowOutcome>> {
    if every == 0 {
        return Err(Error::invalid(
            "detection cadence must be at least one slice",
        ));
    }
    let mut det = SlidingDetector::new(config.clone(), window_slices)?;
    let mut outcomes = Vec::new();
    let Some(first) = records.first() else {
        return Ok(outcomes);
    };
    let last = records.last().unwrap().slice;
    let end = (last / every + 1) as u64 * every as u64 - 1;
    det.advance_to(first.slice)?;
    let mut i = 0;
    let mut slice = first.slice as u64;
    while slice <= end {
        while i < records.len() && records[i].slice as u64 == slice {
            det.process_pair(records[i].hip, records[i].oip);
            i += 1;
        }
        if i < records.len() && (records[i].slice as u64) < slice {
            return Err(Error::Data(format!(
                "trace is not ordered by slice at record {i}"
            )));
        }
        if (slice + 1).is_multiple_of(every as u64) {
            outcomes.push(det.detect());
        }
        slice += 1;
        if slice <= end {
            det.advance_to(slice as u32)?;
        }
    }
    Ok(outcomes)
}
