//! Command-line entry point. Summaries go to stdout as JSON, diagnostics to
//! stderr. Usage errors exit 2, computation errors exit 1.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Config;
use crate::dance::{self, TrajectoryPlan};
use crate::maw::MawSpec;
use crate::metrics::{self, CalibrationSpec, Matching, MetricRun, TrackedRun};
use crate::mosaic;
use crate::pipeline;
use crate::scan::{self, ScanError, ScanPlan};
use crate::service::{self, http, Clock, Hub};
use crate::spectrum::{self, LineScanSignal, LineSegment};
use crate::stage::write_pose_csv;
use crate::synth;
use crate::Error;

#[derive(Parser, Debug)]
#[command(name = "comb", version, about = "Hive robot simulator and analysis tools")]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Derive comb-window geometry.
    #[command(allow_negative_numbers = true)]
    Maw(MawArgs),
    /// Generate a waggle trajectory plan.
    #[command(allow_negative_numbers = true)]
    Dance(DanceArgs),
    /// Scan planning.
    #[command(subcommand)]
    Scan(ScanCmd),
    /// Execute a plan on the simulated stage.
    Simulate(SimulateArgs),
    /// Cross-track and along-track error statistics.
    Metrics(MetricsArgs),
    /// Dominant oscillation frequency of a line signal.
    Spectrum(SpectrumArgs),
    /// Register and blend scan tiles.
    Stitch(StitchArgs),
    /// Run the control service.
    Serve(ServeArgs),
    /// Write synthetic test data.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Run the full pipeline described by a manifest.
    Run(RunArgs),
}

#[derive(Args, Debug)]
struct MawArgs {
    /// Config file to check; same as the global `--config`.
    config: Option<PathBuf>,
    /// Panel length (mm).
    #[arg(long)]
    panel_length: Option<f64>,
    /// Panel width (mm).
    #[arg(long)]
    panel_width: Option<f64>,
    /// Margin kept clear of the panel edge (mm).
    #[arg(long)]
    margin: Option<f64>,
    /// Seal overlap (mm).
    #[arg(long)]
    seal: Option<f64>,
    /// Running clearance (mm).
    #[arg(long)]
    clearance: Option<f64>,
    /// Validate only; the summary reports `ok`.
    #[arg(long)]
    check: bool,
}

#[derive(Args, Debug)]
struct DanceArgs {
    #[arg(long)]
    run_length: Option<f64>,
    /// Heading in degrees clockwise from +y.
    #[arg(long)]
    orientation: Option<f64>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    run_speed: Option<f64>,
    #[arg(long)]
    return_speed: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    freq: Option<f64>,
    #[arg(long)]
    loop_radius: Option<f64>,
    /// Output plan; `.json` keeps cycle structure, `.csv` holds waypoints.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum ScanCmd {
    /// Grid plan from rows, columns and overlaps.
    Plan(ScanPlanArgs),
    /// Smallest grid covering an area.
    Area(ScanAreaArgs),
    /// Transition timing for a plan.
    Timing(ScanTimingArgs),
}

#[derive(Args, Debug)]
struct GridFlags {
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    row_overlap: Option<f64>,
    #[arg(long)]
    col_overlap: Option<f64>,
    #[arg(long)]
    footprint_w: Option<f64>,
    #[arg(long)]
    footprint_h: Option<f64>,
    /// Visit every row in the same direction.
    #[arg(long)]
    raster: bool,
}

#[derive(Args, Debug)]
struct ScanPlanArgs {
    #[command(flatten)]
    grid: GridFlags,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScanAreaArgs {
    #[arg(long)]
    width: f64,
    #[arg(long)]
    height: f64,
    #[arg(long, default_value_t = 0.1)]
    min_overlap: f64,
    #[arg(long)]
    footprint_w: Option<f64>,
    #[arg(long)]
    footprint_h: Option<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScanTimingArgs {
    /// Plan JSON; the configured grid is used when absent.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    settle_s: Option<f64>,
    #[arg(long)]
    exposure_s: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Plan file (`.json` or `.csv`).
    #[arg(long)]
    plan: PathBuf,
    /// Pose log CSV.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Treat plan coordinates as stage coordinates instead of offsets from
    /// the home pose.
    #[arg(long)]
    absolute: bool,
    /// Write one tracked run per plan cycle (pixel CSV) into this directory.
    #[arg(long)]
    track_dir: Option<PathBuf>,
    /// Gaussian noise added to tracked positions (mm).
    #[arg(long, default_value_t = 0.0)]
    noise_mm: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    px_per_mm: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MatchingArg {
    Phase,
    Nearest,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Tracked run CSVs (`t_s,u_px,v_px`).
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    px_per_mm: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    matching: Option<MatchingArg>,
    /// Compare every run with this plan cycle instead of matching by time.
    #[arg(long)]
    cycle: Option<usize>,
    /// Per-phase error CSV.
    #[arg(long)]
    phase_csv: Option<PathBuf>,
    /// Mean path CSV.
    #[arg(long)]
    mean_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    /// Directory of numbered grayscale frames.
    #[arg(long, conflicts_with = "signal")]
    frames: Option<PathBuf>,
    /// CSV signal, one value per row (last column).
    #[arg(long)]
    signal: Option<PathBuf>,
    #[arg(long)]
    fps: Option<f64>,
    /// Analysis line `x0,y0,x1,y1` in pixels.
    #[arg(long)]
    line: Option<LineSegment>,
    /// Print the max-variance line suggestion and exit.
    #[arg(long)]
    suggest_line: bool,
    #[arg(long)]
    snr_threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct StitchArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    tiles: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Placement and residual report.
    #[arg(long)]
    placements: Option<PathBuf>,
    #[arg(long)]
    px_per_mm: Option<f64>,
    #[arg(long)]
    search_radius: Option<i64>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Listen address; defaults to $COMB_BIND or 127.0.0.1:8080.
    #[arg(long)]
    bind: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// Advance time only via /v1/clock/advance.
    #[arg(long)]
    manual_clock: bool,
}

#[derive(Subcommand, Debug)]
enum SynthCmd {
    /// Master texture and the tiles a scan plan would capture.
    Tiles(SynthTilesArgs),
    /// Frames of an oscillating bar.
    Wing(SynthWingArgs),
}

#[derive(Args, Debug)]
struct SynthTilesArgs {
    /// Plan JSON; the configured grid is used when absent.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    px_per_mm: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    master_width: usize,
    #[arg(long, default_value_t = 1500)]
    master_height: usize,
}

#[derive(Args, Debug)]
struct SynthWingArgs {
    #[arg(long, default_value_t = 13.88)]
    freq: f64,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long, default_value_t = 1200)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    manifest: PathBuf,
}

/// Failure of a subcommand.
enum Failure {
    Usage(String),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

macro_rules! impl_failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Compute(e.into())
            }
        }
    )*};
}

impl_failure_from!(
    crate::maw::MawError,
    crate::stage::StageError,
    crate::controller::ControllerError,
    crate::dance::DanceError,
    crate::scan::ScanError,
    crate::metrics::MetricsError,
    crate::spectrum::SpectrumError,
    crate::mosaic::MosaicError,
    crate::raster::RasterError,
    std::io::Error
);

type Outcome = Result<Value, Failure>;

/// Parses `args` and runs the subcommand; returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            let _ = serde_json::to_writer_pretty(&mut out, &summary);
            let _ = writeln!(out);
            0
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {}: {e}", e.name());
            let _ = writeln!(std::io::stdout(), "{}", json!({"error": e.name(), "message": e.to_string()}));
            1
        }
    }
}

fn execute(cli: Cli) -> Outcome {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Cmd::Maw(a) => {
            let cfg = match &a.config {
                Some(p) => Config::load(p)?,
                None => cfg,
            };
            maw(cfg, a)
        }
        Cmd::Dance(a) => dance_cmd(cfg, a),
        Cmd::Scan(ScanCmd::Plan(a)) => scan_plan(cfg, a),
        Cmd::Scan(ScanCmd::Area(a)) => scan_area(cfg, a),
        Cmd::Scan(ScanCmd::Timing(a)) => scan_timing(cfg, a),
        Cmd::Simulate(a) => simulate(cfg, a),
        Cmd::Metrics(a) => metrics_cmd(cfg, a),
        Cmd::Spectrum(a) => spectrum_cmd(cfg, a),
        Cmd::Stitch(a) => stitch(cfg, a),
        Cmd::Serve(a) => serve(cfg, a),
        Cmd::Synth(SynthCmd::Tiles(a)) => synth_tiles(cfg, a),
        Cmd::Synth(SynthCmd::Wing(a)) => synth_wing(cfg, a),
        Cmd::Run(a) => run_manifest(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read_plan(path: &Path) -> Result<TrajectoryPlan, Failure> {
    if is_json(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::Compute(dance::DanceError::Format(format!("{}: {e}", path.display())).into()))
    } else {
        Ok(TrajectoryPlan::read_csv(open(path)?)?)
    }
}

fn write_plan(path: &Path, plan: &TrajectoryPlan) -> Result<(), Failure> {
    if is_json(path) {
        write_json(path, plan)
    } else {
        let mut w = create(path)?;
        plan.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn read_scan_plan(path: &Path) -> Result<ScanPlan, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Compute(Error::Config(format!("{}: {e}", path.display()))))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}

fn maw(mut cfg: Config, a: MawArgs) -> Outcome {
    let p = &mut cfg.maw;
    if let Some(v) = a.panel_length {
        p.panel_length = v;
    }
    if let Some(v) = a.panel_width {
        p.panel_width = v;
    }
    if let Some(v) = a.margin {
        p.crack_margin = v;
    }
    if let Some(v) = a.seal {
        p.seal_overlap = v;
    }
    if let Some(v) = a.clearance {
        p.running_clearance = v;
    }
    let spec = MawSpec::derive(cfg.maw)?;
    if !spec.clearance_in_range {
        eprintln!("warning: running clearance {} mm is outside the recommended band", spec.params.running_clearance);
    }
    eprintln!("aperture radius {:.3} mm, disc cutout {:.3} mm", spec.aperture_radius, spec.insert.disc_inner_radius);
    if a.check {
        return Ok(
            json!({"ok": true, "seal_residual": spec.seal_residual(), "clearance_in_range": spec.clearance_in_range}),
        );
    }
    Ok(to_value(&spec))
}

fn dance_cmd(mut cfg: Config, a: DanceArgs) -> Outcome {
    let d = &mut cfg.dance;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag {
                d.$field = v;
            }
        )*};
    }
    set!(run_length => run_length, orientation => orientation, cycles => cycles, run_speed => run_speed,
         amplitude => lateral_amplitude, freq => lateral_freq, loop_radius => loop_radius);
    if a.return_speed.is_some() {
        d.return_speed = a.return_speed;
    }
    let plan = dance::generate(&cfg.dance)?;
    if let Some(out) = &a.out {
        write_plan(out, &plan)?;
        eprintln!("wrote {} waypoints to {}", plan.waypoints.len(), out.display());
    }
    Ok(json!({
        "waypoints": plan.waypoints.len(),
        "cycles": plan.cycles(),
        "duration_s": plan.duration(),
        "arc_length_mm": plan.arc_length(),
        "waggle_runs": plan.waggle_runs,
        "params": cfg.dance,
    }))
}

fn apply_grid(cfg: &mut Config, g: &GridFlags) {
    let s = &mut cfg.scan;
    if let Some(v) = g.rows {
        s.rows = v;
    }
    if let Some(v) = g.cols {
        s.cols = v;
    }
    if let Some(v) = g.row_overlap {
        s.row_overlap = v;
    }
    if let Some(v) = g.col_overlap {
        s.col_overlap = v;
    }
    if let Some(v) = g.footprint_w {
        s.footprint_w = v;
    }
    if let Some(v) = g.footprint_h {
        s.footprint_h = v;
    }
    if g.raster {
        s.serpentine = false;
    }
}

fn plan_summary(plan: &ScanPlan) -> Value {
    let (fw, fh) = plan.coverage_factors();
    json!({
        "rows": plan.rows,
        "cols": plan.cols,
        "positions": plan.positions.len(),
        "pitch_w_mm": plan.pitch_w(),
        "pitch_h_mm": plan.pitch_h(),
        "covered_w_mm": plan.covered_w(),
        "covered_h_mm": plan.covered_h(),
        "coverage_h_factor": fh,
        "coverage_w_factor": fw,
        "travel_mm": plan.travel_length(),
    })
}

fn scan_plan(mut cfg: Config, a: ScanPlanArgs) -> Outcome {
    apply_grid(&mut cfg, &a.grid);
    let plan = scan::plan_grid(&cfg.scan)?;
    if let Some(out) = &a.out {
        write_json(out, &plan)?;
    }
    Ok(plan_summary(&plan))
}

fn scan_area(cfg: Config, a: ScanAreaArgs) -> Outcome {
    let fw = a.footprint_w.unwrap_or(cfg.scan.footprint_w);
    let fh = a.footprint_h.unwrap_or(cfg.scan.footprint_h);
    let plan = match scan::plan_for_area(a.width, a.height, fw, fh, a.min_overlap, cfg.scan.origin) {
        Ok(p) => p,
        Err(ScanError::FootprintTooLarge { fallback }) => {
            eprintln!("warning: footprint exceeds the area; using a single position");
            *fallback
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(out) = &a.out {
        write_json(out, &plan)?;
    }
    Ok(plan_summary(&plan))
}

fn scan_timing(mut cfg: Config, a: ScanTimingArgs) -> Outcome {
    let plan = match &a.plan {
        Some(p) => read_scan_plan(p)?,
        None => scan::plan_grid(&cfg.scan)?,
    };
    if let Some(v) = a.settle_s {
        cfg.capture.settle_s = v;
    }
    if let Some(v) = a.exposure_s {
        cfg.capture.exposure_s = v;
    }
    let report = scan::estimate_timing(&plan, &cfg.stage, cfg.capture)?;
    if let Some(m) = report.mean_row_transition_s {
        eprintln!("mean row transition {m:.3} s");
    }
    Ok(json!({
        "capture": cfg.capture,
        "first_capture_s": report.first_capture_s,
        "total_s": report.total_s,
        "mean_row_transition_s": report.mean_row_transition_s,
        "mean_col_transition_s": report.mean_col_transition_s,
        "transitions": report.transitions.len(),
    }))
}

fn write_tracks(dir: &Path, runs: &[MetricRun], cal: CalibrationSpec) -> Result<Vec<PathBuf>, Failure> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        let path = dir.join(format!("run_{k:03}.csv"));
        let mut w = create(&path)?;
        TrackedRun::from_mm(run, cal).write_csv(&mut w)?;
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

fn simulate(cfg: Config, a: SimulateArgs) -> Outcome {
    let plan = read_plan(&a.plan)?;
    let sim = pipeline::simulate(&plan, cfg.stage, !a.absolute)?;
    if let Some(out) = &a.out {
        let mut w = create(out)?;
        write_pose_csv(&mut w, &sim.log.poses)?;
        w.flush()?;
    }
    let summary = sim.summary();
    eprintln!("executed {:.3} s, {} poses", summary.duration_s, summary.poses);
    let mut v = to_value(&summary);
    if let Some(dir) = &a.track_dir {
        let cal = CalibrationSpec { px_per_mm: a.px_per_mm.unwrap_or(cfg.metrics.px_per_mm) };
        let runs = pipeline::cycle_tracks(&plan, &sim, a.noise_mm, a.seed.unwrap_or(cfg.seed));
        let paths = write_tracks(dir, &runs, cal)?;
        v["tracks"] = json!(paths.len());
    }
    if let Some(r) = &sim.log.report {
        for w in &r.warnings {
            eprintln!("warning: segment {} retimed ({:?} limit)", w.segment, w.limit);
        }
    }
    Ok(v)
}

fn metrics_cmd(cfg: Config, a: MetricsArgs) -> Outcome {
    let plan = read_plan(&a.plan)?;
    let cal = CalibrationSpec { px_per_mm: a.px_per_mm.unwrap_or(cfg.metrics.px_per_mm) };
    let n = a.samples.unwrap_or(cfg.metrics.phase_samples);
    let matching = match a.matching {
        Some(MatchingArg::Phase) => Matching::Phase,
        Some(MatchingArg::Nearest) => Matching::NearestPoint,
        None => cfg.metrics.matching,
    };
    let mut runs = Vec::new();
    for p in &a.runs {
        let tracked = TrackedRun::read_csv(open(p)?)?;
        runs.push(metrics::calibrate(&tracked, cal)?);
    }
    let analysis = pipeline::analyze_cycles(&runs, &plan, n, matching, a.cycle)?;
    if let Some(path) = &a.phase_csv {
        let mut w = create(path)?;
        analysis.report.write_phase_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &a.mean_csv {
        let mut w = create(path)?;
        writeln!(w, "phase,x_mm,y_mm,sd_x_mm,sd_y_mm")?;
        let m = &analysis.mean_path;
        for (k, (p, s)) in m.mean.iter().zip(&m.sd).enumerate() {
            writeln!(w, "{:.6},{:.6},{:.6},{:.6},{:.6}", k as f64 / n as f64, p[0], p[1], s[0], s[1])?;
        }
        w.flush()?;
    }
    let r = &analysis.report;
    eprintln!("cte rms {:.4} mm, ate rms {:.4} mm over {} runs", r.cte_rms, r.ate_rms, r.runs);
    let mut v = to_value(r);
    v.as_object_mut().unwrap().remove("per_phase_errors");
    v["cycles"] = json!(analysis.cycles);
    v["matching"] = json!(matching);
    Ok(v)
}

fn spectrum_cmd(cfg: Config, a: SpectrumArgs) -> Outcome {
    let fps = a.fps.unwrap_or(cfg.spectrum.fps);
    let threshold = a.snr_threshold.unwrap_or(cfg.spectrum.snr_threshold);
    if let Some(path) = &a.signal {
        let sig = LineScanSignal::read_csv(open(path)?, fps)?;
        let peak = spectrum::dominant_frequency(&sig, threshold)?;
        eprintln!("dominant frequency {:.3} Hz", peak.freq);
        return Ok(to_value(&peak));
    }
    let Some(dir) = &a.frames else {
        return Err(Failure::Usage("one of --frames or --signal is required".into()));
    };
    let frames = spectrum::load_frames(dir)?;
    if a.suggest_line {
        let line = spectrum::suggest_line(&frames);
        return Ok(json!({ "suggested_line": line }));
    }
    let Some(line) = a.line else {
        return Err(Failure::Usage("--line is required with --frames (see --suggest-line)".into()));
    };
    let analysis = spectrum::analyze_frames(&frames, line, fps, threshold)?;
    eprintln!("dominant frequency {:.3} Hz from the {:?} signal", analysis.chosen.freq, analysis.chosen_kind);
    Ok(to_value(&analysis))
}

fn stitch(cfg: Config, a: StitchArgs) -> Outcome {
    let plan = read_scan_plan(&a.plan)?;
    let px = a.px_per_mm.unwrap_or(cfg.mosaic.px_per_mm);
    let mut opts = cfg.mosaic.register_options();
    if let Some(r) = a.search_radius {
        opts.search_radius = r;
    }
    let tiles = mosaic::load_tiles(&a.tiles, &plan, px)?;
    let m = mosaic::compose(&tiles, opts)?;
    m.canvas.save(&a.out)?;
    let report = m.report();
    if let Some(p) = &a.placements {
        write_json(p, &report)?;
    }
    if report.low_confidence > 0 {
        eprintln!("warning: {} registrations fell back to nominal offsets", report.low_confidence);
    }
    Ok(json!({
        "width": report.width,
        "height": report.height,
        "tiles": report.placements.len(),
        "adjacencies": report.adjacencies.len(),
        "low_confidence": report.low_confidence,
        "max_residual_px": report.max_residual,
    }))
}

fn serve(cfg: Config, a: ServeArgs) -> Outcome {
    let clock = if a.manual_clock {
        Clock::Manual
    } else {
        if !(a.time_scale > 0.0) {
            return Err(Failure::Usage(format!("--time-scale must be positive, got {}", a.time_scale)));
        }
        Clock::Realtime { time_scale: a.time_scale }
    };
    let addr = a.bind.unwrap_or_else(service::bind_address);
    let hub = Arc::new(Hub::spawn(cfg.controller(), clock)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("listening on http://{addr}/v1");
    rt.block_on(http::serve(&addr, hub))?;
    Ok(json!({"stopped": true}))
}

fn synth_tiles(cfg: Config, a: SynthTilesArgs) -> Outcome {
    let plan = match &a.plan {
        Some(p) => read_scan_plan(p)?,
        None => scan::plan_grid(&cfg.scan)?,
    };
    let px = a.px_per_mm.unwrap_or(cfg.mosaic.px_per_mm);
    let seed = a.seed.unwrap_or(cfg.seed);
    let master = synth::value_noise(a.master_width, a.master_height, seed);
    let (tiles, origin, size) = synth::plan_tiles(&master, &plan, px)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io(format!("{}: {e}", a.out.display())))?;
    master.save(&a.out.join("master.png"))?;
    let tile_dir = a.out.join("tiles");
    fs::create_dir_all(&tile_dir).map_err(|e| Error::Io(format!("{}: {e}", tile_dir.display())))?;
    for (i, t) in tiles.iter().enumerate() {
        t.save(&tile_dir.join(format!("tile_{i:03}.png")))?;
    }
    write_json(&a.out.join("plan.json"), &plan)?;
    Ok(json!({"tiles": tiles.len(), "tile_size": size, "origin_px": origin, "seed": seed}))
}

fn synth_wing(cfg: Config, a: SynthWingArgs) -> Outcome {
    let fps = a.fps.unwrap_or(cfg.spectrum.fps);
    let frames = spectrum::oscillating_bar_frames(a.freq, fps, a.frames, a.width, a.height);
    fs::create_dir_all(&a.out).map_err(|e| Error::Io(format!("{}: {e}", a.out.display())))?;
    for (i, f) in frames.iter().enumerate() {
        f.save(&a.out.join(format!("frame_{i:05}.pgm")))?;
    }
    Ok(json!({"frames": frames.len(), "freq_hz": a.freq, "fps": fps}))
}

/// Inputs for an end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Config file, relative to the manifest.
    #[serde(default)]
    pub config: Option<PathBuf>,
    #[serde(default = "default_subcommand")]
    pub subcommand: String,
    /// Output directory, relative to the manifest.
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Injected tracking noise for the simulated runs (mm).
    #[serde(default)]
    pub noise_mm: f64,
}

fn default_subcommand() -> String {
    "pipeline".into()
}

fn run_manifest(a: RunArgs) -> Outcome {
    let text = fs::read_to_string(&a.manifest).map_err(|e| Error::Io(format!("{}: {e}", a.manifest.display())))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.manifest.display())))?;
    if m.subcommand != "pipeline" {
        return Err(Failure::Usage(format!("unsupported manifest subcommand {:?}", m.subcommand)));
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let mut cfg = match &m.config {
        Some(p) => Config::load(&base.join(p))?,
        None => Config::default(),
    };
    cfg.seed = m.seed;
    let out = base.join(&m.out_dir);
    fs::create_dir_all(&out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;

    let plan = dance::generate(&cfg.dance)?;
    write_plan(&out.join("plan.json"), &plan)?;
    let sim = pipeline::simulate(&plan, cfg.stage, true)?;
    let mut w = create(&out.join("poses.csv"))?;
    write_pose_csv(&mut w, &sim.log.poses)?;
    w.flush()?;
    let cal = CalibrationSpec { px_per_mm: cfg.metrics.px_per_mm };
    let runs = pipeline::cycle_tracks(&plan, &sim, m.noise_mm, m.seed);
    write_tracks(&out.join("tracks"), &runs, cal)?;
    // score what was written, as an external tracker's output would be
    let reread: Vec<MetricRun> =
        runs.iter().map(|r| metrics::calibrate(&TrackedRun::from_mm(r, cal), cal)).collect::<Result<_, _>>()?;
    let analysis = pipeline::analyze_cycles(&reread, &plan, cfg.metrics.phase_samples, cfg.metrics.matching, None)?;
    let mut w = create(&out.join("phase_errors.csv"))?;
    analysis.report.write_phase_csv(&mut w)?;
    w.flush()?;

    let scan_plan = scan::plan_grid(&cfg.scan)?;
    let timing = scan::estimate_timing(&scan_plan, &cfg.stage, cfg.capture)?;
    write_json(&out.join("scan_plan.json"), &scan_plan)?;

    let master = synth::value_noise(2000, 1500, m.seed);
    let (tiles, _, _) = synth::plan_tiles(&master, &scan_plan, cfg.mosaic.px_per_mm)?;
    let tiles = mosaic::tiles_from_plan(tiles, &scan_plan, cfg.mosaic.px_per_mm)?;
    let mosaic = mosaic::compose(&tiles, cfg.mosaic.register_options())?;
    mosaic.canvas.save(&out.join("mosaic.png"))?;
    let mosaic_report = mosaic.report();

    let frames = spectrum::oscillating_bar_frames(cfg.flapper_hz, cfg.spectrum.fps, 1200, 64, 16);
    let line = LineSegment { x0: 14.0, y0: 0.0, x1: 14.0, y1: 15.0 };
    let spectral = spectrum::analyze_frames(&frames, line, cfg.spectrum.fps, cfg.spectrum.snr_threshold)?;

    let mut error_report = to_value(&analysis.report);
    error_report.as_object_mut().unwrap().remove("per_phase_errors");
    let report = json!({
        "seed": m.seed,
        "dance": {"waypoints": plan.waypoints.len(), "duration_s": plan.duration()},
        "simulation": sim.summary(),
        "metrics": error_report,
        "scan_timing": {
            "mean_row_transition_s": timing.mean_row_transition_s,
            "mean_col_transition_s": timing.mean_col_transition_s,
            "total_s": timing.total_s,
        },
        "mosaic": {
            "width": mosaic_report.width,
            "height": mosaic_report.height,
            "low_confidence": mosaic_report.low_confidence,
            "max_residual_px": mosaic_report.max_residual,
        },
        "spectrum": spectral,
    });
    write_json(&out.join("report.json"), &report)?;
    eprintln!("wrote pipeline artifacts to {}", out.display());
    Ok(report)
}
