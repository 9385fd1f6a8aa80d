//! Ground truth, detection metrics and synthetic traces.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trace::TraceRecord;

/// Exact per-host opposite IP sets.
#[derive(Debug, Clone, Default)]
pub struct ExactOracle {
    sets: HashMap<u32, HashSet<u32>>,
}

impl ExactOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut o = Self::new();
        for (h, op) in pairs {
            o.insert(h, op);
        }
        o
    }

    pub fn from_records(records: &[TraceRecord]) -> Self {
        Self::from_pairs(records.iter().map(|r| (r.hip, r.oip)))
    }

    pub fn insert(&mut self, hip: u32, oip: u32) {
        self.sets.entry(hip).or_default().insert(oip);
    }

    pub fn host_count(&self) -> usize {
        self.sets.len()
    }

    pub fn cardinality(&self, hip: u32) -> u64 {
        self.sets.get(&hip).map_or(0, |s| s.len() as u64)
    }

    /// `(host, |OP(host)|)` sorted by host.
    pub fn cardinalities(&self) -> Vec<(u32, u64)> {
        let mut v: Vec<(u32, u64)> = self
            .sets
            .iter()
            .map(|(&h, s)| (h, s.len() as u64))
            .collect();
        v.sort_unstable();
        v
    }

    /// Hosts with at least `theta` distinct opposite IPs, sorted.
    pub fn superpoints(&self, theta: u64) -> Vec<u32> {
        superpoints_from(&self.cardinalities(), theta)
    }
}

pub fn superpoints_from(cardinalities: &[(u32, u64)], theta: u64) -> Vec<u32> {
    let mut v: Vec<u32> = cardinalities
        .iter()
        .filter(|&&(_, c)| c >= theta)
        .map(|&(h, _)| h)
        .collect();
    v.sort_unstable();
    v
}

/// Cardinalities by sorting and de-duplicating pairs.
pub fn sort_unique_cardinalities(pairs: impl IntoIterator<Item = (u32, u32)>) -> Vec<(u32, u64)> {
    let mut v: Vec<(u32, u32)> = pairs.into_iter().collect();
    v.sort_unstable();
    v.dedup();
    let mut out: Vec<(u32, u64)> = Vec::new();
    for (h, _) in v {
        match out.last_mut() {
            Some((last, c)) if *last == h => *c += 1,
            _ => out.push((h, 1)),
        }
    }
    out
}

/// Detection error rates. FPR and FNR are both normalized by the number of
/// true super points; `precision` is the conventional `tp / detected`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub fpr: f64,
    pub fnr: f64,
    pub ftr: f64,
    pub precision: f64,
    pub detected: usize,
    pub truth: usize,
}

pub fn metrics(detected: &[u32], truth: &[u32]) -> Result<Metrics> {
    let truth_set: HashSet<u32> = truth.iter().copied().collect();
    if truth_set.is_empty() {
        return Err(Error::UndefinedMetric(
            "no true super points; FPR/FNR are undefined",
        ));
    }
    let detected_set: HashSet<u32> = detected.iter().copied().collect();
    let false_pos = detected_set.difference(&truth_set).count();
    let false_neg = truth_set.difference(&detected_set).count();
    let tp = detected_set.len() - false_pos;
    let t = truth_set.len() as f64;
    let fpr = false_pos as f64 / t;
    let fnr = false_neg as f64 / t;
    Ok(Metrics {
        fpr,
        fnr,
        ftr: fpr + fnr,
        precision: if detected_set.is_empty() {
            1.0
        } else {
            tp as f64 / detected_set.len() as f64
        },
        detected: detected_set.len(),
        truth: truth_set.len(),
    })
}

/// Shape of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceSpec {
    pub n_super: usize,
    /// Inclusive range of planted super point cardinalities.
    pub super_cardinality: (u64, u64),
    pub n_background: usize,
    /// Inclusive range of background host cardinalities.
    pub background_cardinality: (u64, u64),
    /// Total records; pairs beyond the distinct ones are repeats.
    pub n_pairs: u64,
    pub slices: u32,
    pub seed: u64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            n_super: 50,
            super_cardinality: (2048, 2048),
            n_background: 100_000,
            background_cardinality: (1, 8),
            n_pairs: 1_000_000,
            slices: 300,
            seed: 0x5EED,
        }
    }
}

impl TraceSpec {
    fn validate(&self) -> Result<()> {
        let check_range = |name: &str, (lo, hi): (u64, u64)| {
            if lo == 0 || lo > hi {
                Err(Error::invalid(format!(
                    "{name} cardinality range {lo}..={hi} must be non-empty and start at 1 or more"
                )))
            } else {
                Ok(())
            }
        };
        check_range("super", self.super_cardinality)?;
        check_range("background", self.background_cardinality)?;
        if self.slices == 0 {
            return Err(Error::invalid("trace must span at least one slice"));
        }
        if self.n_super + self.n_background > (1 << 30) {
            return Err(Error::invalid("too many hosts for the IPv4 space"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedTrace {
    /// Ordered by slice; shuffled within each slice.
    pub records: Vec<TraceRecord>,
    /// Exact `(host, cardinality)` for every host, sorted by host.
    pub truth: Vec<(u32, u64)>,
    /// Planted super points, sorted.
    pub planted: Vec<u32>,
}

/// Deterministic synthetic trace for the given spec.
pub fn generate_trace(spec: &TraceSpec) -> Result<GeneratedTrace> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_hosts = spec.n_super + spec.n_background;
    let mut seen = HashSet::with_capacity(n_hosts);
    let mut hosts = Vec::with_capacity(n_hosts);
    while hosts.len() < n_hosts {
        let h: u32 = rng.random();
        if seen.insert(h) {
            hosts.push(h);
        }
    }
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut truth = Vec::with_capacity(n_hosts);
    for (i, &h) in hosts.iter().enumerate() {
        let (lo, hi) = if i < spec.n_super {
            spec.super_cardinality
        } else {
            spec.background_cardinality
        };
        let n = rng.random_range(lo..=hi);
        let mut ops = HashSet::with_capacity(n as usize);
        while (ops.len() as u64) < n {
            let o: u32 = rng.random();
            if ops.insert(o) {
                pairs.push((h, o));
            }
        }
        truth.push((h, n));
    }
    if (pairs.len() as u64) > spec.n_pairs {
        return Err(Error::invalid(format!(
            "spec plants {} distinct pairs but allows only {} records",
            pairs.len(),
            spec.n_pairs
        )));
    }
    let distinct = pairs.len();
    while (pairs.len() as u64) < spec.n_pairs {
        let p = pairs[rng.random_range(0..distinct)];
        pairs.push(p);
    }
    pairs.shuffle(&mut rng);
    let mut records: Vec<TraceRecord> = pairs
        .into_iter()
        .map(|(hip, oip)| TraceRecord {
            slice: rng.random_range(0..spec.slices),
            hip,
            oip,
        })
        .collect();
    records.sort_by_key(|r| r.slice);
    let mut planted = hosts[..spec.n_super].to_vec();
    planted.sort_unstable();
    truth.sort_unstable();
    Ok(GeneratedTrace {
        records,
        truth,
        planted,
    })
}

/// Ground-truth sidecar: one `ip cardinality` line per host, sorted by IP.
pub fn write_truth(mut w: impl Write, truth: &[(u32, u64)]) -> Result<()> {
    let mut sorted = truth.to_vec();
    sorted.sort_unstable();
    for (h, c) in sorted {
        writeln!(w, "{} {}", Ipv4Addr::from(h), c)?;
    }
    Ok(())
}

pub fn read_truth(r: impl BufRead) -> Result<Vec<(u32, u64)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(ip), Some(card), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Data(format!(
                "truth line {}: expected `ip cardinality`",
                i + 1
            )));
        };
        let ip: Ipv4Addr = ip
            .parse()
            .map_err(|_| Error::Data(format!("truth line {}: bad address {ip:?}", i + 1)))?;
        let card: u64 = card
            .parse()
            .map_err(|_| Error::Data(format!("truth line {}: bad cardinality {card:?}", i + 1)))?;
        out.push((u32::from(ip), card));
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> TraceSpec {
        TraceSpec {
            n_super: 5,
            super_cardinality: (100, 200),
            n_background: 300,
            background_cardinality: (1, 8),
            n_pairs: 5000,
            slices: 10,
            seed: 3,
        }
    }

    #[test]
    fn oracle_basics() {
        assert!(ExactOracle::new().superpoints(1).is_empty());
        let o = ExactOracle::from_pairs([(1, 10), (1, 11), (1, 10), (2, 10), (3, 1)]);
        assert_eq!(o.cardinality(1), 2);
        assert_eq!(o.superpoints(1), vec![1, 2, 3]);
        assert_eq!(o.superpoints(2), vec![1]);
        assert_eq!(o.superpoints(3), Vec::<u32>::new());
    }

    #[test]
    fn oracle_agrees_with_sort_unique() {
        let t = generate_trace(&small_spec()).unwrap();
        let pairs: Vec<(u32, u32)> = t.records.iter().map(|r| (r.hip, r.oip)).collect();
        let a = ExactOracle::from_pairs(pairs.iter().copied()).cardinalities();
        let b = sort_unique_cardinalities(pairs);
        assert_eq!(a, b);
        assert_eq!(a, t.truth);
    }

    #[test]
    fn metrics_examples() {
        let truth: Vec<u32> = (0..50).collect();
        let m = metrics(&truth, &truth).unwrap();
        assert_eq!((m.fpr, m.fnr, m.ftr), (0.0, 0.0, 0.0));

        let mut plus_one = truth.clone();
        plus_one.push(1000);
        let m = metrics(&plus_one, &truth).unwrap();
        assert_eq!((m.fpr, m.fnr, m.ftr), (0.02, 0.0, 0.02));
        assert!((m.precision - 50.0 / 51.0).abs() < 1e-12);

        let m = metrics(&truth[2..], &truth).unwrap();
        assert_eq!(m.fnr, 0.04);
        assert!(matches!(metrics(&[1], &[]), Err(Error::UndefinedMetric(_))));
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_relabeling(
            det in proptest::collection::vec(0u32..200, 0..60),
            truth in proptest::collection::vec(0u32..200, 1..60),
            key in any::<u32>(),
        ) {
            // x -> x * odd + key is a bijection on u32.
            let relabel = |v: &[u32]| v.iter().map(|x| x.wrapping_mul(0x9E37_79B1).wrapping_add(key)).collect::<Vec<_>>();
            let a = metrics(&det, &truth).unwrap();
            let b = metrics(&relabel(&det), &relabel(&truth)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn generated_truth_matches_plan() {
        let spec = small_spec();
        let t = generate_trace(&spec).unwrap();
        assert_eq!(t.records.len(), 5000);
        assert!(t.records.windows(2).all(|w| w[0].slice <= w[1].slice));
        assert!(t.records.iter().all(|r| r.slice < 10));
        let oracle = ExactOracle::from_records(&t.records);
        assert_eq!(oracle.superpoints(100), t.planted);
        assert_eq!(t.truth.len(), 305);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_trace(&small_spec()).unwrap();
        let b = generate_trace(&small_spec()).unwrap();
        assert_eq!(
            crate::trace::encode_binary(&a.records),
            crate::trace::encode_binary(&b.records)
        );
        let c = generate_trace(&TraceSpec {
            seed: 4,
            ..small_spec()
        })
        .unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn no_supers_means_empty_truth_above_background() {
        let t = generate_trace(&TraceSpec {
            n_super: 0,
            ..small_spec()
        })
        .unwrap();
        assert!(ExactOracle::from_records(&t.records)
            .superpoints(9)
            .is_empty());
    }

    #[test]
    fn boundary_cardinality_is_included() {
        let t = generate_trace(&TraceSpec {
            super_cardinality: (1024, 1024),
            n_pairs: 10_000,
            ..small_spec()
        })
        .unwrap();
        let supers = ExactOracle::from_records(&t.records).superpoints(1024);
        assert_eq!(supers, t.planted);
    }

    #[test]
    fn inconsistent_specs_rejected() {
        for bad in [
            TraceSpec {
                super_cardinality: (0, 4),
                ..small_spec()
            },
            TraceSpec {
                background_cardinality: (9, 8),
                ..small_spec()
            },
            TraceSpec {
                slices: 0,
                ..small_spec()
            },
            TraceSpec {
                n_pairs: 10,
                ..small_spec()
            },
        ] {
            assert!(matches!(
                generate_trace(&bad),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn truth_sidecar_round_trip() {
        let truth = vec![(0x0a000002, 5), (0x0a000001, 7)];
        let mut buf = Vec::new();
        write_truth(&mut buf, &truth).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "10.0.0.1 7\n10.0.0.2 5\n"
        );
        assert_eq!(
            read_truth(&buf[..]).unwrap(),
            vec![(0x0a000001, 7), (0x0a000002, 5)]
        );
        assert!(read_truth("10.0.0.1".as_bytes()).is_err());
        assert!(read_truth("10.0.0.1 x".as_bytes()).is_err());
    }
}
