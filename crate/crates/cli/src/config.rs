//! Flag groups shared by several commands and their resolution into a
//! detector configuration.

use std::fmt::Display;

use clap::{Args, ValueEnum};
use sspd_core::distributed::Route;
use sspd_core::hashing::DEFAULT_MASTER_SEED;
use sspd_core::long_sketch::{
    LdcaConfig, RowPlan, DEFAULT_DESIGN_PAIRS, DEFAULT_K, DEFAULT_LDC_COUNT, DEFAULT_MAX_ROWS,
};
use sspd_core::short_sketch::{SeavConfig, DEFAULT_RESTORE_CAP};
use sspd_core::sliding::DEFAULT_SLICE_SECONDS;
use sspd_core::window::{DetectorConfig, DEFAULT_BETA, DEFAULT_WINDOW_SECONDS};
use sspd_core::{Error, Result};

/// Parses decimal, `0x` hex or `1e6`-style integers.
pub fn parse_count(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim().replace('_', "");
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        return u64::from_str_radix(hex, 16).map_err(|e| e.to_string());
    }
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(f) if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 => Ok(f as u64),
        _ => Err(format!("{s:?} is not a non-negative integer")),
    }
}

#[derive(Args, Debug, Clone)]
pub struct SketchArgs {
    /// Master hash seed.
    #[arg(long, default_value_t = DEFAULT_MASTER_SEED, value_parser = parse_count)]
    pub seed: u64,
    /// Super point threshold (distinct opposite IPs per window).
    #[arg(long, default_value_t = 1024, value_parser = parse_count)]
    pub theta: u64,
    /// Report candidates whose estimate reaches beta * theta.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    /// Low IP bits selecting the SEA.
    #[arg(long, default_value_t = 4)]
    pub r: u32,
    /// SE rows per SEA.
    #[arg(long, default_value_t = 4)]
    pub sr: u32,
    /// Index bits shared by adjacent rows.
    #[arg(long, default_value_t = 2)]
    pub a: u32,
    /// Bits per short estimator.
    #[arg(long, default_value_t = 8)]
    pub g: u32,
    /// Bits per linear distinct counter.
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: u32,
    /// Number of LDCs; the planner splits them into LR rows.
    #[arg(long, value_parser = parse_count, conflicts_with = "memory_budget")]
    pub v: Option<u64>,
    /// LDCA rows (skips the planner).
    #[arg(long)]
    pub lr: Option<u32>,
    /// LDCA columns; requires --lr.
    #[arg(long, requires = "lr", conflicts_with = "memory_budget")]
    pub lc: Option<u32>,
    /// Expected distinct pairs per window, used by the planner.
    #[arg(long, default_value_t = DEFAULT_DESIGN_PAIRS, value_parser = parse_count)]
    pub design_n: u64,
    /// Upper clamp on planned LDCA rows.
    #[arg(long, default_value_t = DEFAULT_MAX_ROWS)]
    pub max_rows: u32,
    /// Total sketch bytes; the LDCA gets what the SEAV leaves.
    #[arg(long, value_parser = parse_count)]
    pub memory_budget: Option<u64>,
    /// Per-SEA cap on surviving restore tuples.
    #[arg(long, default_value_t = DEFAULT_RESTORE_CAP, value_parser = parse_count)]
    pub restore_cap: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    #[arg(long, default_value_t = DEFAULT_WINDOW_SECONDS)]
    pub window_seconds: u32,
    #[arg(long, default_value_t = DEFAULT_SLICE_SECONDS)]
    pub slice_seconds: u32,
    /// Window length in slices; overrides window/slice seconds.
    #[arg(long)]
    pub window_slices: Option<u32>,
}

impl WindowArgs {
    pub fn slices(&self) -> Result<u32> {
        if let Some(w) = self.window_slices {
            if w == 0 {
                return Err(Error::InvalidArgument(
                    "--window-slices must be at least 1".into(),
                ));
            }
            return Ok(w);
        }
        if self.slice_seconds == 0 || self.window_seconds == 0 {
            return Err(Error::InvalidArgument(
                "window and slice lengths must be positive".into(),
            ));
        }
        if !self.window_seconds.is_multiple_of(self.slice_seconds) {
            return Err(Error::InvalidArgument(format!(
                "window of {} s is not a whole number of {} s slices",
                self.window_seconds, self.slice_seconds
            )));
        }
        Ok(self.window_seconds / self.slice_seconds)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteArg {
    Hash,
    RoundRobin,
}

impl From<RouteArg> for Route {
    fn from(r: RouteArg) -> Self {
        match r {
            RouteArg::Hash => Route::Hash,
            RouteArg::RoundRobin => Route::RoundRobin,
        }
    }
}

/// Resolved LDC budget: where V came from and what the planner said.
#[derive(Debug, Clone)]
pub struct LdcaChoice {
    pub config: LdcaConfig,
    pub v: u64,
    pub plan: Option<RowPlan>,
}

pub fn seav_config(s: &SketchArgs) -> Result<SeavConfig> {
    SeavConfig::new(s.r, s.sr, s.a, s.theta, s.g)
}

pub fn ldca_choice(s: &SketchArgs, seav: &SeavConfig) -> Result<LdcaChoice> {
    let k = s.k;
    if k == 0 {
        return Err(Error::InvalidArgument("--k must be positive".into()));
    }
    let v = match s.memory_budget {
        Some(budget) => {
            let seav_bytes = seav.memory_bytes() as u64;
            let v = budget.saturating_sub(seav_bytes) * 8 / k as u64;
            if v == 0 {
                return Err(Error::ConfigInvalid {
                    constraint: "memory budget",
                    detail: format!(
                        "{budget} B leaves no room for one {k}-bit LDC after the {seav_bytes} B SEAV"
                    ),
                });
            }
            v
        }
        None => s.v.unwrap_or(DEFAULT_LDC_COUNT),
    };
    match (s.lr, s.lc) {
        (Some(lr), Some(lc)) => Ok(LdcaChoice {
            config: LdcaConfig::new(lr, lc, k)?,
            v: lr as u64 * lc as u64,
            plan: None,
        }),
        (Some(lr), None) => {
            if lr == 0 || v < lr as u64 {
                return Err(Error::ConfigInvalid {
                    constraint: "LR",
                    detail: format!("LR={lr} does not fit V={v} LDCs"),
                });
            }
            let lc = u32::try_from(v / lr as u64)
                .map_err(|_| Error::InvalidArgument(format!("V={v} is too large")))?;
            Ok(LdcaChoice {
                config: LdcaConfig::new(lr, lc, k)?,
                v,
                plan: None,
            })
        }
        _ => Ok(LdcaChoice {
            config: LdcaConfig::planned(v, s.design_n, k, s.max_rows)?,
            v,
            plan: Some(RowPlan::new(v, s.design_n, k as u64, s.max_rows)?),
        }),
    }
}

/// Every resolved setting of a run, echoed into output headers.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: Vec<(String, String)>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        let mut rc = RunConfig::default();
        rc.set("command", command);
        rc.set("version", env!("CARGO_PKG_VERSION"));
        rc
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn header(&self) -> Vec<String> {
        let mut out = vec![format!("sspd {}", self.get("command").unwrap_or(""))];
        out.extend(
            self.entries
                .iter()
                .filter(|(k, _)| k != "command")
                .map(|(k, v)| format!("{k}={v}")),
        );
        out
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn add_sketch(&mut self, s: &SketchArgs, det: &DetectorConfig, ldca: &LdcaChoice) {
        self.set("seed", format!("{:#x}", s.seed));
        self.set("theta", s.theta);
        self.set("beta", s.beta);
        self.set("r", s.r);
        self.set("sr", s.sr);
        self.set("a", s.a);
        self.set("g", s.g);
        self.set("tau", det.seav.tau());
        self.set("seav_bytes", det.seav.memory_bytes());
        self.set("k", s.k);
        self.set("v", ldca.v);
        self.set("lr", det.ldca.rows());
        self.set("lc", det.ldca.cols());
        self.set("ldca_bytes", det.ldca.memory_bytes());
        self.set("design_n", s.design_n);
        self.set("max_rows", s.max_rows);
        self.set(
            "memory_budget",
            s.memory_budget
                .map_or("none".to_string(), |b| b.to_string()),
        );
        match &ldca.plan {
            Some(p) => {
                self.set("planner_raw_lr", format!("{:.4}", p.raw));
                self.set("psu", format!("{:.6e}", p.psu));
            }
            None => self.set("planner_raw_lr", "none"),
        }
        self.set("restore_cap", s.restore_cap);
        self.set("threads", s.threads);
    }

    pub fn add_window(&mut self, w: &WindowArgs, slices: u32) {
        self.set("window_seconds", w.window_seconds);
        self.set("slice_seconds", w.slice_seconds);
        self.set("window_slices", slices);
    }
}

/// Detector config plus the header describing it.
pub fn detector(s: &SketchArgs) -> Result<(DetectorConfig, LdcaChoice)> {
    let seav = seav_config(s)?;
    let ldca = ldca_choice(s, &seav)?;
    let cfg = DetectorConfig {
        seav,
        ldca: ldca.config,
        master_seed: s.seed,
        beta: s.beta,
        restore_cap: s.restore_cap,
    };
    cfg.validate()?;
    Ok((cfg, ldca))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_several_spellings() {
        assert_eq!(parse_count("1000000"), Ok(1_000_000));
        assert_eq!(parse_count("1e6"), Ok(1_000_000));
        assert_eq!(parse_count("0x5EED"), Ok(0x5EED));
        assert_eq!(parse_count("1_024"), Ok(1024));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }

    #[test]
    fn window_slices_resolution() {
        let w = WindowArgs {
            window_seconds: 300,
            slice_seconds: 5,
            window_slices: None,
        };
        assert_eq!(w.slices().unwrap(), 60);
        let bad = WindowArgs {
            slice_seconds: 7,
            ..w.clone()
        };
        assert!(bad.slices().is_err());
        let explicit = WindowArgs {
            window_slices: Some(10),
            ..bad
        };
        assert_eq!(explicit.slices().unwrap(), 10);
    }
}
