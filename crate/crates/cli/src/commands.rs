use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use sspd_core::distributed::{
    frame_file_name, simulate_topology, TopologyOptions, DEFAULT_BUFFER_PAIRS,
};
use sspd_core::eval::{
    generate_trace, metrics, read_truth, superpoints_from, write_truth, ExactOracle, TraceSpec,
};
use sspd_core::hashing::DEFAULT_MASTER_SEED;
use sspd_core::long_sketch::{
    RowPlan, DEFAULT_DESIGN_PAIRS, DEFAULT_K, DEFAULT_LDC_COUNT, DEFAULT_MAX_ROWS,
};
use sspd_core::report::{read_reports, write_comment_header, write_metrics, write_reports};
use sspd_core::sliding::detect_trace_sliding;
use sspd_core::trace::{encode_binary, read_trace, write_text, TraceFormat, TraceRecord};
use sspd_core::window::{detect_trace, windows, DetectorState, WindowOutcome};
use sspd_core::{Error, Result};

use crate::config::{detector, parse_count, RouteArg, RunConfig, SketchArgs, WindowArgs};
use crate::CliError;

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Trace file; `.txt`/`.csv` are written as text, anything else binary.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar (default: `<out>.truth`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MASTER_SEED, value_parser = parse_count)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub n_super: usize,
    #[arg(long, default_value_t = 2048, value_parser = parse_count)]
    pub super_min: u64,
    #[arg(long, default_value_t = 2048, value_parser = parse_count)]
    pub super_max: u64,
    #[arg(long, default_value_t = 100_000)]
    pub n_background: usize,
    #[arg(long, default_value_t = 1, value_parser = parse_count)]
    pub background_min: u64,
    #[arg(long, default_value_t = 8, value_parser = parse_count)]
    pub background_max: u64,
    /// Total records, repeats included.
    #[arg(long, default_value_t = 1_000_000, value_parser = parse_count)]
    pub n_pairs: u64,
    #[arg(long, default_value_t = 300)]
    pub slices: u32,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Report CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sketch: SketchArgs,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Args, Debug)]
pub struct SlideArgs {
    #[command(flatten)]
    pub common: DetectArgs,
    /// Slices between detections (default: one window).
    #[arg(long)]
    pub detect_every: Option<u32>,
}

#[derive(Args, Debug)]
pub struct DistsimArgs {
    #[command(flatten)]
    pub common: DetectArgs,
    #[arg(long, default_value_t = 4)]
    pub n_wp: usize,
    #[arg(long, value_enum, default_value_t = RouteArg::Hash)]
    pub route: RouteArg,
    /// Pairs a WP buffers before scanning them.
    #[arg(long, default_value_t = DEFAULT_BUFFER_PAIRS)]
    pub buffer: usize,
    /// Directory for per-WP frame files.
    #[arg(long)]
    pub frames_dir: Option<PathBuf>,
    /// Merge-equivalence log (default: `<out>.merge.log`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Report CSV from detect, slide or distsim.
    #[arg(long)]
    pub reports: PathBuf,
    /// Ground-truth sidecar; used for every window unless --trace is given.
    #[arg(long, required_unless_present = "trace")]
    pub truth: Option<PathBuf>,
    /// Trace to compute exact per-window truth from.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024, value_parser = parse_count)]
    pub theta: u64,
    /// Report ids are slide ids: window `s` covers the `window_slices`
    /// slices ending at `s`.
    #[arg(long)]
    pub sliding: bool,
    /// Detection cadence of a sliding run (default: one window).
    #[arg(long, requires = "sliding")]
    pub detect_every: Option<u32>,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long, default_value_t = DEFAULT_LDC_COUNT, value_parser = parse_count)]
    pub v: u64,
    #[arg(long, default_value_t = DEFAULT_DESIGN_PAIRS, value_parser = parse_count)]
    pub design_n: u64,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_ROWS)]
    pub max_rows: u32,
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| with_path(path, e))
}

fn load_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    read_trace(path).map_err(|e| match e {
        Error::Io(io) => with_path(path, io),
        other => other,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| with_path(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| with_path(path, e))?,
    ))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_report_file(
    path: &Path,
    rc: &RunConfig,
    id_column: &str,
    outcomes: &[WindowOutcome],
) -> Result<()> {
    let mut w = create(path)?;
    write_reports(&mut w, &rc.header(), id_column, outcomes)?;
    w.flush()?;
    Ok(())
}

fn log_summary(outcomes: &[WindowOutcome]) {
    let reports: usize = outcomes.iter().map(|o| o.reports.len()).sum();
    let overflows: usize = outcomes.iter().map(|o| o.overflows.len()).sum();
    log::info!(
        "{} windows, {reports} reports, {overflows} SEA overflows",
        outcomes.len()
    );
}

pub fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let spec = TraceSpec {
        n_super: a.n_super,
        super_cardinality: (a.super_min, a.super_max),
        n_background: a.n_background,
        background_cardinality: (a.background_min, a.background_max),
        n_pairs: a.n_pairs,
        slices: a.slices,
        seed: a.seed,
    };
    let trace = generate_trace(&spec)?;
    let truth_path = a
        .truth
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".truth"));
    let mut rc = RunConfig::new("generate");
    rc.set("seed", format!("{:#x}", a.seed));
    rc.set("n_super", a.n_super);
    rc.set(
        "super_cardinality",
        format!("{}..={}", a.super_min, a.super_max),
    );
    rc.set("n_background", a.n_background);
    rc.set(
        "background_cardinality",
        format!("{}..={}", a.background_min, a.background_max),
    );
    rc.set("n_pairs", a.n_pairs);
    rc.set("slices", a.slices);
    rc.set("trace", a.out.display());
    rc.set("truth", truth_path.display());

    let mut w = create(&a.out)?;
    match TraceFormat::from_path(&a.out) {
        TraceFormat::Text => {
            write_comment_header(&mut w, &rc.header())?;
            write_text(&mut w, &trace.records)?;
        }
        // 12-byte records only; the header lives in the sidecar.
        TraceFormat::Binary => w.write_all(&encode_binary(&trace.records))?,
    }
    w.flush()?;
    let mut t = create(&truth_path)?;
    write_comment_header(&mut t, &rc.header())?;
    write_truth(&mut t, &trace.truth)?;
    t.flush()?;
    log::info!(
        "{} records, {} hosts, {} planted super points",
        trace.records.len(),
        trace.truth.len(),
        trace.planted.len()
    );
    Ok(())
}

struct Prepared {
    rc: RunConfig,
    config: sspd_core::window::DetectorConfig,
    records: Vec<TraceRecord>,
    window_slices: u32,
}

fn prepare(command: &str, a: &DetectArgs) -> Result<Prepared> {
    let (config, ldca) = detector(&a.sketch)?;
    let window_slices = a.window.slices()?;
    let mut rc = RunConfig::new(command);
    rc.add_sketch(&a.sketch, &config, &ldca);
    rc.add_window(&a.window, window_slices);
    rc.set("trace", a.trace.display());
    rc.set("out", a.out.display());
    let records = load_trace(&a.trace)?;
    Ok(Prepared {
        rc,
        config,
        records,
        window_slices,
    })
}

pub fn detect(a: &DetectArgs) -> Result<(), CliError> {
    let p = prepare("detect", a)?;
    let outcomes = detect_trace(&p.config, &p.records, p.window_slices, a.sketch.threads)?;
    write_report_file(&a.out, &p.rc, "window_id", &outcomes)?;
    log_summary(&outcomes);
    Ok(())
}

pub fn slide(a: &SlideArgs) -> Result<(), CliError> {
    let mut p = prepare("slide", &a.common)?;
    let every = a.detect_every.unwrap_or(p.window_slices);
    p.rc.set("detect_every", every);
    let outcomes = detect_trace_sliding(&p.config, &p.records, p.window_slices, every)?;
    write_report_file(&a.common.out, &p.rc, "slide_id", &outcomes)?;
    log_summary(&outcomes);
    Ok(())
}

pub fn distsim(a: &DistsimArgs) -> Result<(), CliError> {
    let mut p = prepare("distsim", &a.common)?;
    let log_path = a
        .log
        .clone()
        .unwrap_or_else(|| with_suffix(&a.common.out, ".merge.log"));
    p.rc.set("n_wp", a.n_wp);
    p.rc.set("route", format!("{:?}", a.route));
    p.rc.set("buffer", a.buffer);
    p.rc.set(
        "frames_dir",
        a.frames_dir
            .as_ref()
            .map_or("none".to_string(), |d| d.display().to_string()),
    );
    p.rc.set("log", log_path.display());
    let opts = TopologyOptions {
        n_wp: a.n_wp,
        route: a.route.into(),
        buffer_pairs: a.buffer,
    };
    if let Some(dir) = &a.frames_dir {
        fs::create_dir_all(dir)?;
    }
    let mut frame_bytes = 0u64;
    let global = simulate_topology(&p.config, &p.records, p.window_slices, &opts, |ev| {
        frame_bytes += ev.bytes.len() as u64;
        if let Some(dir) = &a.frames_dir {
            fs::write(
                dir.join(frame_file_name(ev.wp, ev.window_id, ev.kind)),
                ev.bytes,
            )?;
        }
        Ok(())
    })?;
    let outcomes: Vec<WindowOutcome> = global.iter().map(|g| g.outcome.clone()).collect();
    write_report_file(&a.common.out, &p.rc, "window_id", &outcomes)?;

    // Replay on a single node and compare bit for bit.
    let mut log = create(&log_path)?;
    write_comment_header(&mut log, &p.rc.header())?;
    writeln!(
        log,
        "window_id,wp_pairs,seav_identical,ldca_identical,reports_identical"
    )?;
    let mut mismatched = Vec::new();
    let batches = windows(&p.records, p.window_slices)?;
    for (g, (id, batch)) in global.iter().zip(&batches) {
        let mut st = DetectorState::new(p.config.clone())?;
        if *id != st.window_id() {
            st.reset_to(*id)?;
        }
        let pairs: Vec<(u32, u32)> = batch.iter().map(|r| (r.hip, r.oip)).collect();
        st.process_pairs_parallel(&pairs, a.common.sketch.threads)?;
        let seav_ok = &g.seav == st.seav();
        let ldca_ok = &g.ldca == st.ldca();
        let reports_ok = g.outcome == st.finalize_window();
        let wp_pairs: Vec<String> = g.wp_pairs.iter().map(u64::to_string).collect();
        writeln!(
            log,
            "{id},{},{seav_ok},{ldca_ok},{reports_ok}",
            wp_pairs.join(" ")
        )?;
        if !(seav_ok && ldca_ok && reports_ok) {
            mismatched.push(*id);
        }
    }
    let verdict = if mismatched.is_empty() {
        "PASS"
    } else {
        "FAIL"
    };
    writeln!(
        log,
        "# merge-equivalence {verdict}: {} windows, {} frames bytes total",
        global.len(),
        frame_bytes
    )?;
    log.flush()?;
    if global.len() != batches.len() {
        return Err(CliError::Internal(format!(
            "{} GS windows for {} trace windows",
            global.len(),
            batches.len()
        )));
    }
    if !mismatched.is_empty() {
        return Err(CliError::Internal(format!(
            "merged sketches differ from single node in windows {mismatched:?}"
        )));
    }
    log_summary(&outcomes);
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let window_slices = a.window.slices()?;
    let mut rc = RunConfig::new("eval");
    rc.set("theta", a.theta);
    rc.add_window(&a.window, window_slices);
    rc.set("sliding", a.sliding);
    rc.set("reports", a.reports.display());
    rc.set(
        "truth",
        a.truth
            .as_ref()
            .map_or("none".to_string(), |p| p.display().to_string()),
    );
    rc.set(
        "trace",
        a.trace
            .as_ref()
            .map_or("none".to_string(), |p| p.display().to_string()),
    );
    rc.set("out", a.out.display());

    let reports = read_reports(BufReader::new(open(&a.reports)?))?;
    let records = match &a.trace {
        Some(path) => {
            let mut recs = load_trace(path)?;
            recs.sort_by_key(|r| r.slice);
            Some(recs)
        }
        None => None,
    };
    let sidecar = match (&a.truth, &records) {
        (Some(path), None) => {
            let truth = read_truth(BufReader::new(open(path)?))?;
            Some(superpoints_from(&truth, a.theta))
        }
        _ => None,
    };
    let w = window_slices as u64;
    let every = a.detect_every.unwrap_or(window_slices) as u64;
    if every == 0 {
        return Err(Error::InvalidArgument("--detect-every must be at least 1".into()).into());
    }
    rc.set(
        "detect_every",
        if a.sliding {
            every.to_string()
        } else {
            "none".into()
        },
    );
    let mut ids: BTreeSet<u64> = reports.iter().map(|r| r.id).collect();
    if let Some(recs) = &records {
        if let (Some(first), Some(last)) = (recs.first(), recs.last()) {
            if a.sliding {
                let (lo, hi) = (first.slice as u64, last.slice as u64);
                let end = (hi / every + 1) * every - 1;
                ids.extend((lo..=end).filter(|s| (s + 1) % every == 0));
            } else {
                ids.extend(windows(recs, window_slices)?.into_iter().map(|(id, _)| id));
            }
        }
    }
    if ids.is_empty() {
        ids.insert(0);
    }
    let mut rows = Vec::new();
    for id in ids {
        let truth = match (&records, &sidecar) {
            (Some(recs), _) => {
                let (lo, hi) = if a.sliding {
                    ((id + 1).saturating_sub(w), id)
                } else {
                    (id * w, id * w + w - 1)
                };
                let start = recs.partition_point(|r| (r.slice as u64) < lo);
                let end = recs.partition_point(|r| (r.slice as u64) <= hi);
                ExactOracle::from_pairs(recs[start..end].iter().map(|r| (r.hip, r.oip)))
                    .superpoints(a.theta)
            }
            (None, Some(t)) => t.clone(),
            (None, None) => unreachable!("clap requires --truth or --trace"),
        };
        let detected: Vec<u32> = reports
            .iter()
            .filter(|r| r.id == id)
            .map(|r| r.ip)
            .collect();
        match metrics(&detected, &truth) {
            Ok(m) => rows.push((id, m)),
            Err(Error::UndefinedMetric(why)) => {
                log::warn!("window {id}: skipped, {why}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut out = create(&a.out)?;
    write_metrics(&mut out, &rc.header(), &rows)?;
    out.flush()?;
    Ok(())
}

pub fn plan(a: &PlanArgs) -> Result<(), CliError> {
    let plan = RowPlan::new(a.v, a.design_n, a.k as u64, a.max_rows)?;
    let mut rc = RunConfig::new("plan");
    rc.set("v", a.v);
    rc.set("design_n", a.design_n);
    rc.set("k", a.k);
    rc.set("max_rows", a.max_rows);
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    write_comment_header(&mut w, &rc.header())?;
    writeln!(w, "LR_raw={:.4}", plan.raw)?;
    writeln!(w, "LR_optimal={}", plan.optimal)?;
    writeln!(w, "LR={}", plan.rows)?;
    writeln!(w, "LC={}", plan.cols)?;
    writeln!(w, "Psu={:.6e}", plan.psu)?;
    writeln!(w, "Psu_k={:.6}", plan.noise_bits())?;
    writeln!(
        w,
        "ldca_bytes={}",
        plan.rows as u64 * plan.cols * a.k as u64 / 8
    )?;
    if plan.noise_bits() >= 1.0 {
        writeln!(w, "warning=expected ULDC noise is not below one bit")?;
    }
    Ok(())
}
