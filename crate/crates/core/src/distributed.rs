//! Watch points, sketch frames and the global server.
//!
//! Each watch point (WP) scans only the pairs routed through it, then ships
//! its SEAV and LDCA to the global server (GS) as [`SketchFrame`]s. The GS
//! OR-merges the frames of one window and runs restore and filtering on the
//! merged sketches. Because sketch updates only set bits, the merged sketches
//! are bit-identical to those of a single node that saw the whole stream.
//!
//! # Frame layout
//!
//! All integers little-endian.
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `SSPD` |
//! | 4  | 1 | version (1) |
//! | 5  | 1 | kind: 0 SEAV, 1 LDCA, 2 SEAV timestamps, 3 LDCA timestamps |
//! | 6  | 1 | r |
//! | 7  | 1 | SR |
//! | 8  | 1 | a |
//! | 9  | 1 | g |
//! | 10 | 8 | theta |
//! | 18 | 4 | k |
//! | 22 | 4 | LR |
//! | 26 | 4 | LC |
//! | 30 | 8 | master seed |
//! | 38 | 8 | window id (slide id for timestamp frames) |
//! | 46 | 8 | payload length `n` |
//! | 54 | n | payload |
//! | 54+n | 4 | CRC-32 (IEEE) of bytes `0..54+n` |
//!
//! Bytes 6..38 form the config block; frames merge only if their config
//! blocks are byte-identical.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, FrameError, Result};
use crate::hashing::HashSeed;
use crate::long_sketch::{LdcaConfig, LdcaSketch};
use crate::short_sketch::{SeavConfig, SeavSketch};
use crate::sliding::{SlidingDetector, TimestampPool};
use crate::trace::TraceRecord;
use crate::window::{finalize_sketches, windows, DetectorConfig, DetectorState, WindowOutcome};

pub const MAGIC: [u8; 4] = *b"SSPD";
pub const VERSION: u8 = 1;
pub const CONFIG_BLOCK_BYTES: usize = 32;
pub const HEADER_BYTES: usize = 54;
pub const CHECKSUM_BYTES: usize = 4;
pub const DEFAULT_BUFFER_PAIRS: usize = 64 * 1024;

const ROUTE_TAG: u8 = 0x04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Seav = 0,
    Ldca = 1,
    SeavStamps = 2,
    LdcaStamps = 3,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Result<Self, FrameError> {
        Ok(match b {
            0 => FrameKind::Seav,
            1 => FrameKind::Ldca,
            2 => FrameKind::SeavStamps,
            3 => FrameKind::LdcaStamps,
            other => return Err(FrameError::UnknownKind(other)),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            FrameKind::Seav => "seav",
            FrameKind::Ldca => "ldca",
            FrameKind::SeavStamps => "seav_ts",
            FrameKind::LdcaStamps => "ldca_ts",
        }
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `wp<k>_win<w>_<kind>.sspd`
pub fn frame_file_name(wp: usize, window_id: u64, kind: FrameKind) -> String {
    format!("wp{wp}_win{window_id}_{kind}.sspd")
}

/// The detector parameters that decide sketch shape and hashing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameConfig {
    pub r: u8,
    pub rows: u8,
    pub overlap: u8,
    pub g: u8,
    pub theta: u64,
    pub k: u32,
    pub lr: u32,
    pub lc: u32,
    pub master_seed: u64,
}

impl FrameConfig {
    pub fn from_detector(cfg: &DetectorConfig) -> Result<Self> {
        let byte = |v: u32, what: &str| {
            u8::try_from(v)
                .map_err(|_| Error::invalid(format!("{what} = {v} does not fit a frame byte")))
        };
        Ok(FrameConfig {
            r: byte(cfg.seav.r(), "r")?,
            rows: byte(cfg.seav.rows() as u32, "SR")?,
            overlap: byte(cfg.seav.overlap(), "a")?,
            g: byte(cfg.seav.g(), "g")?,
            theta: cfg.seav.theta(),
            k: cfg.ldca.k(),
            lr: cfg.ldca.rows(),
            lc: cfg.ldca.cols(),
            master_seed: cfg.master_seed,
        })
    }

    /// Rebuilds a detector config; `beta` and the restore cap are GS-side
    /// knobs and not part of the frame.
    pub fn to_detector(&self, beta: f64, restore_cap: u64) -> Result<DetectorConfig> {
        let cfg = DetectorConfig {
            seav: SeavConfig::new(
                self.r as u32,
                self.rows as u32,
                self.overlap as u32,
                self.theta,
                self.g as u32,
            )?,
            ldca: LdcaConfig::new(self.lr, self.lc, self.k)?,
            master_seed: self.master_seed,
            beta,
            restore_cap,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn encode(&self) -> [u8; CONFIG_BLOCK_BYTES] {
        let mut b = [0u8; CONFIG_BLOCK_BYTES];
        b[0] = self.r;
        b[1] = self.rows;
        b[2] = self.overlap;
        b[3] = self.g;
        b[4..12].copy_from_slice(&self.theta.to_le_bytes());
        b[12..16].copy_from_slice(&self.k.to_le_bytes());
        b[16..20].copy_from_slice(&self.lr.to_le_bytes());
        b[20..24].copy_from_slice(&self.lc.to_le_bytes());
        b[24..32].copy_from_slice(&self.master_seed.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; CONFIG_BLOCK_BYTES]) -> Self {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        FrameConfig {
            r: b[0],
            rows: b[1],
            overlap: b[2],
            g: b[3],
            theta: u64_at(4),
            k: u32_at(12),
            lr: u32_at(16),
            lc: u32_at(20),
            master_seed: u64_at(24),
        }
    }

    /// Payload size a frame of `kind` must carry.
    fn payload_bytes(&self, kind: FrameKind) -> Result<usize> {
        let cfg = self.to_detector(1.0, 1)?;
        let seav = cfg.seav.memory_bytes();
        let ldca = cfg.ldca.memory_bytes();
        Ok(match kind {
            FrameKind::Seav => seav,
            FrameKind::Ldca => ldca,
            FrameKind::SeavStamps => seav * 8 * 4,
            FrameKind::LdcaStamps => ldca * 8 * 4,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchFrame {
    pub kind: FrameKind,
    pub config: FrameConfig,
    pub window_id: u64,
    pub payload: Vec<u8>,
}

fn stamps_to_bytes(pool: &TimestampPool) -> Vec<u8> {
    pool.raw().iter().flat_map(|s| s.to_le_bytes()).collect()
}

fn bytes_to_stamps(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

impl SketchFrame {
    pub fn seav(cfg: &DetectorConfig, sketch: &SeavSketch, window_id: u64) -> Result<Self> {
        Ok(SketchFrame {
            kind: FrameKind::Seav,
            config: FrameConfig::from_detector(cfg)?,
            window_id,
            payload: sketch.as_bytes().to_vec(),
        })
    }

    pub fn ldca(cfg: &DetectorConfig, sketch: &LdcaSketch, window_id: u64) -> Result<Self> {
        Ok(SketchFrame {
            kind: FrameKind::Ldca,
            config: FrameConfig::from_detector(cfg)?,
            window_id,
            payload: sketch.to_bytes(),
        })
    }

    /// SEAV and LDCA frames of a discrete-window state.
    pub fn from_state(state: &DetectorState) -> Result<[Self; 2]> {
        Ok([
            Self::seav(state.config(), state.seav(), state.window_id())?,
            Self::ldca(state.config(), state.ldca(), state.window_id())?,
        ])
    }

    /// Timestamp-pool frames of a sliding detector, tagged with its slide id.
    pub fn from_sliding(det: &SlidingDetector) -> Result<[Self; 2]> {
        let config = FrameConfig::from_detector(det.config())?;
        let slide = det.now() as u64;
        Ok([
            SketchFrame {
                kind: FrameKind::SeavStamps,
                config,
                window_id: slide,
                payload: stamps_to_bytes(det.seav_pool()),
            },
            SketchFrame {
                kind: FrameKind::LdcaStamps,
                config,
                window_id: slide,
                payload: stamps_to_bytes(det.ldca_pool()),
            },
        ])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.payload.len() + CHECKSUM_BYTES);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.config.encode());
        out.extend_from_slice(&self.window_id.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let truncated = |needed: usize| FrameError::Truncated {
            needed,
            available: bytes.len(),
        };
        if bytes.len() < 4 {
            return Err(truncated(4).into());
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FrameError::BadMagic(magic).into());
        }
        if bytes.len() < 5 {
            return Err(truncated(5).into());
        }
        if bytes[4] != VERSION {
            return Err(FrameError::UnsupportedVersion(bytes[4]).into());
        }
        if bytes.len() < HEADER_BYTES {
            return Err(truncated(HEADER_BYTES).into());
        }
        let payload_len = u64::from_le_bytes(bytes[46..54].try_into().unwrap());
        let total = usize::try_from(payload_len)
            .ok()
            .and_then(|n| n.checked_add(HEADER_BYTES + CHECKSUM_BYTES))
            .ok_or_else(|| truncated(usize::MAX))?;
        if bytes.len() < total {
            return Err(truncated(total).into());
        }
        let body = &bytes[..total - CHECKSUM_BYTES];
        let stored = u32::from_le_bytes(bytes[total - CHECKSUM_BYTES..total].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FrameError::ChecksumMismatch { stored, computed }.into());
        }
        let kind = FrameKind::from_byte(bytes[5])?;
        let config = FrameConfig::decode(bytes[6..38].try_into().unwrap());
        let payload = body[HEADER_BYTES..].to_vec();
        let expected = config.payload_bytes(kind)?;
        if payload.len() != expected {
            return Err(FrameError::PayloadSize {
                expected,
                actual: payload.len(),
            }
            .into());
        }
        Ok(SketchFrame {
            kind,
            config,
            window_id: u64::from_le_bytes(bytes[38..46].try_into().unwrap()),
            payload,
        })
    }

    fn expect_kind(&self, kind: FrameKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "expected a {kind} frame, got {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_seav(&self) -> Result<SeavSketch> {
        self.expect_kind(FrameKind::Seav)?;
        let cfg = self.config.to_detector(1.0, 1)?;
        let mut sk = SeavSketch::new(cfg.seav.clone(), &cfg.seeds()?);
        sk.load_bytes(&self.payload)?;
        Ok(sk)
    }

    pub fn to_ldca(&self) -> Result<LdcaSketch> {
        self.expect_kind(FrameKind::Ldca)?;
        let cfg = self.config.to_detector(1.0, 1)?;
        let mut sk = LdcaSketch::new(cfg.ldca, &cfg.seeds()?)?;
        sk.load_bytes(&self.payload)?;
        Ok(sk)
    }
}

fn check_compatible(frames: &[SketchFrame]) -> Result<&SketchFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::MergeIncompatible("no frames to merge".into()))?;
    for f in frames {
        if f.config.encode() != first.config.encode() {
            return Err(Error::MergeIncompatible(format!(
                "config block mismatch: {:?} vs {:?}",
                f.config, first.config
            )));
        }
        if f.window_id != first.window_id {
            return Err(Error::MergeIncompatible(format!(
                "window mismatch: {} vs {}",
                f.window_id, first.window_id
            )));
        }
    }
    Ok(first)
}

/// OR-merges SEAV and LDCA frames of one window into global sketches.
pub fn merge_frames(frames: &[SketchFrame]) -> Result<(SeavSketch, LdcaSketch)> {
    check_compatible(frames)?;
    let mut seav: Option<SeavSketch> = None;
    let mut ldca: Option<LdcaSketch> = None;
    for f in frames {
        match f.kind {
            FrameKind::Seav => {
                let sk = f.to_seav()?;
                match &mut seav {
                    Some(acc) => acc.merge(&sk)?,
                    None => seav = Some(sk),
                }
            }
            FrameKind::Ldca => {
                let sk = f.to_ldca()?;
                match &mut ldca {
                    Some(acc) => acc.merge(&sk)?,
                    None => ldca = Some(sk),
                }
            }
            other => {
                return Err(Error::MergeIncompatible(format!(
                    "{other} frame in a discrete-window merge"
                )))
            }
        }
    }
    match (seav, ldca) {
        (Some(s), Some(l)) => Ok((s, l)),
        (None, _) => Err(Error::MergeIncompatible("missing SEAV frame".into())),
        (_, None) => Err(Error::MergeIncompatible("missing LDCA frame".into())),
    }
}

/// Merged global state, ready for [`DetectorState::finalize_window`].
pub fn merge_frames_to_state(
    frames: &[SketchFrame],
    beta: f64,
    restore_cap: u64,
) -> Result<DetectorState> {
    let first = check_compatible(frames)?;
    let cfg = first.config.to_detector(beta, restore_cap)?;
    let window_id = first.window_id;
    let (seav, ldca) = merge_frames(frames)?;
    Ok(DetectorState::from_parts(cfg, seav, ldca, window_id))
}

/// Merges timestamp frames by per-slot maximum into a sliding detector.
pub fn merge_sliding_frames(
    frames: &[SketchFrame],
    window_slices: u32,
    beta: f64,
    restore_cap: u64,
) -> Result<SlidingDetector> {
    let first = check_compatible(frames)?;
    let cfg = first.config.to_detector(beta, restore_cap)?;
    let slide = u32::try_from(first.window_id)
        .map_err(|_| Error::Data(format!("slide id {} out of range", first.window_id)))?;
    let mut det = SlidingDetector::new(cfg, window_slices)?;
    det.advance_to(slide)?;
    let (mut have_seav, mut have_ldca) = (false, false);
    {
        let (seav_pool, ldca_pool) = det.pools_mut();
        for f in frames {
            let stamps = bytes_to_stamps(&f.payload);
            let (pool, seen) = match f.kind {
                FrameKind::SeavStamps => (&mut *seav_pool, &mut have_seav),
                FrameKind::LdcaStamps => (&mut *ldca_pool, &mut have_ldca),
                other => {
                    return Err(Error::MergeIncompatible(format!(
                        "{other} frame in a sliding-window merge"
                    )))
                }
            };
            pool.merge(&TimestampPool::from_raw(stamps, window_slices, slide)?)?;
            *seen = true;
        }
    }
    if !have_seav {
        return Err(Error::MergeIncompatible(
            "missing SEAV timestamp frame".into(),
        ));
    }
    if !have_ldca {
        return Err(Error::MergeIncompatible(
            "missing LDCA timestamp frame".into(),
        ));
    }
    Ok(det)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// By a hash of the (host, opposite) pair.
    Hash,
    /// Pair `i` goes to WP `i mod n`, scattering each host over all WPs.
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopologyOptions {
    pub n_wp: usize,
    pub route: Route,
    pub buffer_pairs: usize,
}

impl Default for TopologyOptions {
    fn default() -> Self {
        TopologyOptions {
            n_wp: 1,
            route: Route::Hash,
            buffer_pairs: DEFAULT_BUFFER_PAIRS,
        }
    }
}

/// A frame emitted by a WP at the end of a window.
#[derive(Debug, Clone, Copy)]
pub struct FrameEvent<'a> {
    pub wp: usize,
    pub window_id: u64,
    pub kind: FrameKind,
    pub bytes: &'a [u8],
}

/// GS result for one window.
#[derive(Debug, Clone)]
pub struct GlobalWindow {
    pub outcome: WindowOutcome,
    pub seav: SeavSketch,
    pub ldca: LdcaSketch,
    /// Pairs scanned per WP.
    pub wp_pairs: Vec<u64>,
}

struct WatchPoint {
    state: DetectorState,
    buffer: Vec<(u32, u32)>,
    capacity: usize,
}

impl WatchPoint {
    fn push(&mut self, pair: (u32, u32)) {
        self.buffer.push(pair);
        if self.buffer.len() >= self.capacity {
            self.flush();
        }
    }

    /// Scans the buffered batch.
    fn flush(&mut self) {
        for &(h, o) in &self.buffer {
            self.state.process_pair(h, o);
        }
        self.buffer.clear();
    }
}

/// Runs `opts.n_wp` in-process watch points over a slice-ordered trace and a
/// global server that merges their frames each window. `sink` sees every
/// encoded frame before the GS decodes it.
pub fn simulate_topology(
    config: &DetectorConfig,
    records: &[TraceRecord],
    window_slices: u32,
    opts: &TopologyOptions,
    mut sink: impl FnMut(FrameEvent<'_>) -> Result<()>,
) -> Result<Vec<GlobalWindow>> {
    if opts.n_wp == 0 {
        return Err(Error::invalid("at least one watch point is required"));
    }
    if opts.buffer_pairs == 0 {
        return Err(Error::invalid("WP buffer must hold at least one pair"));
    }
    if window_slices == 0 {
        return Err(Error::invalid("window must span at least one slice"));
    }
    let router = HashSeed::new(config.master_seed, ROUTE_TAG);
    let template = DetectorState::new(config.clone())?;
    let mut wps: Vec<WatchPoint> = (0..opts.n_wp)
        .map(|_| WatchPoint {
            state: template.clone(),
            buffer: Vec::with_capacity(opts.buffer_pairs.min(1 << 20)),
            capacity: opts.buffer_pairs,
        })
        .collect();
    let mut results = Vec::new();
    let mut seq = 0usize;
    for (window_id, batch) in windows(records, window_slices)? {
        let mut shards: Vec<Vec<(u32, u32)>> = vec![Vec::new(); opts.n_wp];
        for r in batch {
            let wp = match opts.route {
                Route::Hash => router.hash_range_unchecked(
                    r.hip.rotate_left(16) ^ r.oip.wrapping_mul(0x9E37_79B1),
                    opts.n_wp as u64,
                ) as usize,
                Route::RoundRobin => seq % opts.n_wp,
            };
            seq += 1;
            shards[wp].push((r.hip, r.oip));
        }
        let encoded: Vec<Result<[Vec<u8>; 2]>> = wps
            .par_iter_mut()
            .zip(shards.par_iter())
            .map(|(wp, shard)| {
                if wp.state.window_id() != window_id {
                    wp.state.reset_to(window_id)?;
                } else {
                    debug_assert_eq!(wp.state.pair_count(), 0);
                }
                for &p in shard {
                    wp.push(p);
                }
                wp.flush();
                let [s, l] = SketchFrame::from_state(&wp.state)?;
                Ok([s.encode(), l.encode()])
            })
            .collect();
        let mut frames = Vec::with_capacity(2 * opts.n_wp);
        for (i, enc) in encoded.into_iter().enumerate() {
            for bytes in enc? {
                let frame = SketchFrame::decode(&bytes)?;
                sink(FrameEvent {
                    wp: i,
                    window_id,
                    kind: frame.kind,
                    bytes: &bytes,
                })?;
                frames.push(frame);
            }
        }
        let (seav, ldca) = merge_frames(&frames)?;
        let outcome = finalize_sketches(
            &seav,
            &ldca,
            config.restore_cap,
            config.filter_threshold(),
            window_id,
        );
        results.push(GlobalWindow {
            outcome,
            seav,
            ldca,
            wp_pairs: wps.iter().map(|w| w.state.pair_count()).collect(),
        });
    }
    Ok(results)
}
