//! Linear distinct counters (LDC) and the LDC array (LDCA).
//!
//! Each host is mapped to one LDC per row by the row hash `LH_i`; the opposite
//! IP sets bit `H3(oip) mod k` in each of them. At estimation time the host's
//! row registers are ANDed into a union register (ULDC) and the linear
//! counting estimate `-k ln(z0 / k)` is taken over its zero bits.

use crate::error::{Error, Result};
use crate::hashing::{HashSeed, SeedSet};

pub const DEFAULT_K: u32 = 8192;
pub const DEFAULT_LDC_COUNT: u64 = 8192;
pub const DEFAULT_DESIGN_PAIRS: u64 = 1_000_000;
/// Upper clamp applied by the planner unless the caller overrides it.
pub const DEFAULT_MAX_ROWS: u32 = 8;

/// A cardinality estimate; `saturated` is set when the register had no zero
/// bits left, in which case `value` is the sentinel `k ln k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub saturated: bool,
}

/// Linear counting estimate from the number of zero bits.
pub fn ldc_estimate(zeros: u64, k: u64) -> Result<Estimate> {
    if k == 0 {
        return Err(Error::invalid("LDC size must be at least 1"));
    }
    if zeros > k {
        return Err(Error::invalid(format!(
            "zero count {zeros} exceeds register size {k}"
        )));
    }
    let kf = k as f64;
    if zeros == 0 {
        return Ok(Estimate {
            value: kf * kf.ln(),
            saturated: true,
        });
    }
    Ok(Estimate {
        value: -kf * (zeros as f64 / kf).ln(),
        saturated: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ldc {
    words: Vec<u64>,
    k: u32,
}

impl Ldc {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("LDC size must be at least 1"));
        }
        Ok(Ldc {
            words: vec![0; k.div_ceil(64) as usize],
            k,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn update(&mut self, oip: u32, h3: &HashSeed) {
        let bit = h3.hash_range_unchecked(oip, self.k as u64) as usize;
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn zero_count(&self) -> u64 {
        self.k as u64 - self.ones()
    }

    pub fn estimate(&self) -> Estimate {
        ldc_estimate(self.zero_count(), self.k as u64).expect("zero count never exceeds k")
    }
}

/// Probability that a ULDC bit is set with `n` distinct pairs spread over
/// `cols` columns per row and `rows` rows ANDed together.
pub fn psu(k: u64, n: f64, cols: f64, rows: u32) -> f64 {
    let per_cell = n / cols;
    let zero = (1.0 - 1.0 / k as f64).powf(per_cell);
    (1.0 - zero).powi(rows as i32)
}

/// Unclamped row count minimizing [`psu`] for a fixed budget of `v` LDCs.
pub fn optimal_rows_raw(v: u64, n: u64, k: u64) -> f64 {
    -(v as f64) * std::f64::consts::LN_2 / (n as f64 * (1.0 - 1.0 / k as f64).ln())
}

/// `max(1, round(optimal_rows_raw))`.
pub fn plan_rows(v: u64, n: u64, k: u64) -> u32 {
    let raw = optimal_rows_raw(v, n, k);
    if raw.is_finite() {
        (raw.round().max(1.0)).min(u32::MAX as f64) as u32
    } else {
        1
    }
}

/// Planner output for a given LDC budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowPlan {
    pub v: u64,
    pub n: u64,
    pub k: u64,
    pub raw: f64,
    pub optimal: u32,
    pub rows: u32,
    pub cols: u64,
    pub psu: f64,
}

impl RowPlan {
    pub fn new(v: u64, n: u64, k: u64, max_rows: u32) -> Result<Self> {
        if v == 0 || n == 0 || k < 2 || max_rows == 0 {
            return Err(Error::invalid(
                "planner needs V >= 1, N >= 1, k >= 2 and a positive row clamp",
            ));
        }
        let raw = optimal_rows_raw(v, n, k);
        let optimal = plan_rows(v, n, k);
        let rows = optimal.clamp(1, max_rows).min(v as u32);
        let cols = v / rows as u64;
        Ok(RowPlan {
            v,
            n,
            k,
            raw,
            optimal,
            rows,
            cols,
            psu: psu(k, n as f64, cols as f64, rows),
        })
    }

    /// Expected number of noise bits in a ULDC.
    pub fn noise_bits(&self) -> f64 {
        self.psu * self.k as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LdcaConfig {
    rows: u32,
    cols: u32,
    k: u32,
}

impl Default for LdcaConfig {
    fn default() -> Self {
        LdcaConfig::planned(
            DEFAULT_LDC_COUNT,
            DEFAULT_DESIGN_PAIRS,
            DEFAULT_K,
            DEFAULT_MAX_ROWS,
        )
        .expect("default LDCA plan is valid")
    }
}

impl LdcaConfig {
    pub fn new(rows: u32, cols: u32, k: u32) -> Result<Self> {
        if rows == 0 || rows > 240 {
            return Err(Error::ConfigInvalid {
                constraint: "LR",
                detail: format!("row count must be in 1..=240, got {rows}"),
            });
        }
        if cols == 0 {
            return Err(Error::ConfigInvalid {
                constraint: "LC",
                detail: "column count must be at least 1".into(),
            });
        }
        if k == 0 || !k.is_multiple_of(8) {
            return Err(Error::ConfigInvalid {
                constraint: "k",
                detail: format!("LDC size must be a positive multiple of 8, got {k}"),
            });
        }
        Ok(LdcaConfig { rows, cols, k })
    }

    /// Lets the planner choose LR for `v` LDCs and design point `n`; warns
    /// when the expected ULDC noise `Psu * k` is not below one bit.
    pub fn planned(v: u64, n: u64, k: u32, max_rows: u32) -> Result<Self> {
        let plan = RowPlan::new(v, n, k as u64, max_rows)?;
        if plan.noise_bits() >= 1.0 {
            log::warn!(
                "LDCA plan LR={} LC={} k={} expects {:.3} noise bits per union register (>= 1)",
                plan.rows,
                plan.cols,
                k,
                plan.noise_bits()
            );
        }
        let cols = u32::try_from(plan.cols).map_err(|_| Error::ConfigInvalid {
            constraint: "LC",
            detail: format!("{} columns do not fit in 32 bits", plan.cols),
        })?;
        Self::new(plan.rows, cols, k)
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// `V = LR * LC`.
    pub fn ldc_count(&self) -> u64 {
        self.rows as u64 * self.cols as u64
    }

    pub fn total_bits(&self) -> u64 {
        self.ldc_count() * self.k as u64
    }

    /// `LR * LC * k / 8`.
    pub fn memory_bytes(&self) -> usize {
        (self.total_bits() / 8) as usize
    }

    pub fn psu(&self, n: u64) -> f64 {
        psu(self.k as u64, n as f64, self.cols as f64, self.rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LdcaSketch {
    config: LdcaConfig,
    h3: HashSeed,
    lh: Vec<HashSeed>,
    words_per_ldc: usize,
    words: Vec<u64>,
}

impl LdcaSketch {
    pub fn new(config: LdcaConfig, seeds: &SeedSet) -> Result<Self> {
        if seeds.lh.len() < config.rows as usize {
            return Err(Error::invalid(format!(
                "seed set has {} row hashes, LDCA needs {}",
                seeds.lh.len(),
                config.rows
            )));
        }
        let words_per_ldc = config.k.div_ceil(64) as usize;
        Ok(LdcaSketch {
            words: vec![0; config.ldc_count() as usize * words_per_ldc],
            h3: seeds.h3,
            lh: seeds.lh[..config.rows as usize].to_vec(),
            words_per_ldc,
            config,
        })
    }

    pub fn config(&self) -> &LdcaConfig {
        &self.config
    }

    pub fn memory_bytes(&self) -> usize {
        self.config.memory_bytes()
    }

    pub fn clear(&mut self) {
        self.words.fill(0);
    }

    pub fn set_bit_count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn ldc_index(&self, row: usize, col: usize) -> usize {
        row * self.config.cols as usize + col
    }

    /// Column of `hip` in `row`.
    pub fn column_of(&self, row: usize, hip: u32) -> usize {
        self.lh[row].hash_range_unchecked(hip, self.config.cols as u64) as usize
    }

    // scan-path:begin
    /// Calls `f(ldc_index, bit)` for the LR bits a pair sets.
    #[inline]
    pub fn for_each_bit(&self, hip: u32, oip: u32, mut f: impl FnMut(usize, u32)) {
        let bit = self.h3.hash_range_unchecked(oip, self.config.k as u64) as u32;
        let cols = self.config.cols as u64;
        for (row, lh) in self.lh.iter().enumerate() {
            let col = lh.hash_range_unchecked(hip, cols) as usize;
            f(row * cols as usize + col, bit);
        }
    }

    #[inline]
    pub(crate) fn set_bit(&mut self, ldc: usize, bit: u32) {
        let bit = bit as usize;
        self.words[ldc * self.words_per_ldc + bit / 64] |= 1 << (bit % 64);
    }

    #[inline]
    pub fn update(&mut self, hip: u32, oip: u32) {
        let bit = self.h3.hash_range_unchecked(oip, self.config.k as u64) as usize;
        let cols = self.config.cols as u64;
        let wpl = self.words_per_ldc;
        for (row, lh) in self.lh.iter().enumerate() {
            let col = lh.hash_range_unchecked(hip, cols) as usize;
            let ldc = row * cols as usize + col;
            self.words[ldc * wpl + bit / 64] |= 1 << (bit % 64);
        }
    }
    // scan-path:end

    /// A copy of one LDC register.
    pub fn ldc(&self, row: usize, col: usize) -> Ldc {
        let start = self.ldc_index(row, col) * self.words_per_ldc;
        Ldc {
            words: self.words[start..start + self.words_per_ldc].to_vec(),
            k: self.config.k,
        }
    }

    /// AND of the host's LR row registers.
    pub fn union_ldc(&self, hip: u32) -> Ldc {
        let mut union = vec![u64::MAX; self.words_per_ldc];
        for row in 0..self.config.rows as usize {
            let start = self.ldc_index(row, self.column_of(row, hip)) * self.words_per_ldc;
            for (u, w) in union.iter_mut().zip(&self.words[start..]) {
                *u &= w;
            }
        }
        let tail = self.config.k as usize % 64;
        if tail != 0 {
            *union.last_mut().unwrap() &= (1u64 << tail) - 1;
        }
        Ldc {
            words: union,
            k: self.config.k,
        }
    }

    pub fn estimate(&self, hip: u32) -> Estimate {
        self.union_ldc(hip).estimate()
    }

    pub fn is_compatible(&self, other: &Self) -> bool {
        self.config == other.config && self.h3 == other.h3 && self.lh == other.lh
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if !self.is_compatible(other) {
            return Err(Error::MergeIncompatible(
                "LDCA sketches differ in shape or seeds".into(),
            ));
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    /// Register bytes, `k / 8` little-endian bytes per LDC, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.config.k as usize / 8;
        let mut out = Vec::with_capacity(self.memory_bytes());
        for ldc in self.words.chunks(self.words_per_ldc) {
            let start = out.len();
            for w in ldc {
                out.extend_from_slice(&w.to_le_bytes());
            }
            out.truncate(start + per);
        }
        out
    }

    pub(crate) fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() != self.memory_bytes() {
            return Err(Error::Data(format!(
                "LDCA payload has {} bytes, expected {}",
                bytes.len(),
                self.memory_bytes()
            )));
        }
        let per = self.config.k as usize / 8;
        for (ldc, chunk) in self
            .words
            .chunks_mut(self.words_per_ldc)
            .zip(bytes.chunks(per))
        {
            for (i, w) in ldc.iter_mut().enumerate() {
                let mut buf = [0u8; 8];
                let lo = (i * 8).min(per);
                let hi = (i * 8 + 8).min(per);
                buf[..hi - lo].copy_from_slice(&chunk[lo..hi]);
                *w = u64::from_le_bytes(buf);
            }
        }
        Ok(())
    }
}
