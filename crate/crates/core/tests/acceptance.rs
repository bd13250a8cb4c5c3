//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use comb::config::Config;
use comb::controller::{dispatch, ControllerState, Key, Mode, RoutineKind};
use comb::dance::{generate, DanceParams};
use comb::metrics::{CalibrationSpec, Matching, TrackedRun};
use comb::mosaic::{compose, tiles_from_plan, RegisterOptions};
use comb::pipeline;
use comb::raster::Raster;
use comb::scan::{estimate_timing, plan_grid, GridSpec};
use comb::spectrum::{dominant_frequency, LineScanSignal};
use comb::stage::{Stage, StageConfig};
use comb::synth::value_noise;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Rest-to-rest time under velocity and acceleration limits, written from
/// the profile shape: accelerate to the peak speed, cruise, decelerate.
fn trapezoid_time(d: f64, v: f64, a: f64) -> f64 {
    let peak = (a * d).sqrt().min(v);
    let ramp = peak / a;
    let ramp_dist = peak * ramp;
    2.0 * ramp + (d - ramp_dist) / peak
}

fn kinematics() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let mut cfg = StageConfig::default();
        cfg.x.v_max = rng.random_range(5.0..120.0);
        cfg.x.a_max = rng.random_range(20.0..2000.0);
        let d: f64 = rng.random_range(0.05..170.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut stage = Stage::new(cfg).map_err(|e| e.to_string())?;
        let start = stage.pose();
        let pitch = 1.0 / cfg.x.steps_per_mm;
        let target = start.x + (d / pitch).round() * pitch;
        stage.move_to(target, start.y).map_err(|e| e.to_string())?;
        let t0 = stage.time();
        while !stage.is_idle() {
            stage.step();
        }
        let elapsed = stage.time() - t0;
        let expected = trapezoid_time((target - start.x).abs(), cfg.x.v_max, cfg.x.a_max);
        let err = (elapsed - expected).abs();
        worst = worst.max(err);
        ensure(err <= cfg.tick_s + 1e-9, || {
            format!(
                "move {i}: d={d:.4} v={:.2} a={:.2} took {elapsed:.4} s, closed form {expected:.4} s",
                cfg.x.v_max, cfg.x.a_max
            )
        })?;
        ensure((stage.pose().x - target).abs() < 1e-9, || format!("move {i} ended at {}", stage.pose().x))?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("runtime {secs:.2} s"))?;
    Ok(format!("1000 moves, worst deviation {:.4} ms, {secs:.2} s", worst * 1e3))
}

fn zero_noise_fidelity() -> Check {
    let cfg = Config::default();
    let params = DanceParams { run_length: 20.0, cycles: 5, ..cfg.dance };
    let plan = generate(&params).map_err(|e| e.to_string())?;
    let sim = pipeline::simulate(&plan, cfg.stage, true).map_err(|e| e.to_string())?;
    let cal = CalibrationSpec { px_per_mm: cfg.metrics.px_per_mm };
    // round trip through the tracker file format
    let mut runs = Vec::new();
    for r in pipeline::cycle_tracks(&plan, &sim, 0.0, 0) {
        let mut buf = Vec::new();
        TrackedRun::from_mm(&r, cal).write_csv(&mut buf).map_err(|e| e.to_string())?;
        let back = TrackedRun::read_csv(buf.as_slice()).map_err(|e| e.to_string())?;
        runs.push(comb::metrics::calibrate(&back, cal).map_err(|e| e.to_string())?);
    }
    ensure(runs.len() == 5, || format!("{} tracked cycles", runs.len()))?;
    let a = pipeline::analyze_cycles(&runs, &plan, 500, Matching::Phase, None).map_err(|e| e.to_string())?;
    let pitch = 1.0 / cfg.stage.x.steps_per_mm;
    let r = &a.report;
    ensure(r.cte_rms <= pitch && r.ate_rms <= pitch, || {
        format!("cte_rms {:.5} ate_rms {:.5} exceed {pitch}", r.cte_rms, r.ate_rms)
    })?;
    Ok(format!("cte_rms {:.5} mm, ate_rms {:.5} mm, bound {pitch} mm", r.cte_rms, r.ate_rms))
}

fn injected_noise() -> Check {
    let sigma = 1.63;
    let (plan, runs) = pipeline::noisy_straight_runs(20.0, 2.0, 500, 5, sigma, 2024);
    let a = pipeline::analyze_cycles(&runs, &plan, 500, Matching::Phase, None).map_err(|e| e.to_string())?;
    let r = &a.report;
    ensure(r.runs == 5, || format!("{} runs", r.runs))?;
    let rel = (r.cte_rms - sigma).abs() / sigma;
    ensure(rel <= 0.05, || format!("cte_rms {:.4} is {:.1}% from {sigma}", r.cte_rms, rel * 100.0))?;
    let commanded = comb::metrics::commanded_cycle(&plan, None, 500).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for run in &runs {
        let norm = comb::metrics::normalize_cycle(run, 500, None).map_err(|e| e.to_string())?;
        let errs = comb::metrics::decompose_errors(&norm, &commanded, Matching::Phase).map_err(|e| e.to_string())?;
        for p in &errs.phases {
            worst = worst.max((p.cte * p.cte + p.ate * p.ate - p.euclid * p.euclid).abs());
        }
        samples += errs.phases.len();
    }
    ensure(worst <= 1e-9, || format!("orthogonality residual {worst:e} mm^2"))?;
    Ok(format!(
        "cte_rms {:.4} mm ({:+.2}%), {} phase samples, max |cte^2+ate^2-e^2| {worst:.1e}",
        r.cte_rms,
        (r.cte_rms / sigma - 1.0) * 100.0,
        samples
    ))
}

/// Length covered by `[s, s + len]` intervals, or None if they leave a gap.
fn gap_free_span(mut starts: Vec<f64>, len: f64) -> Option<f64> {
    starts.sort_by(f64::total_cmp);
    let lo = starts[0];
    let mut hi = lo + len;
    for s in starts {
        if s > hi + 1e-12 {
            return None;
        }
        hi = hi.max(s + len);
    }
    Some(hi - lo)
}

fn scan_coverage() -> Check {
    let spec = GridSpec { rows: 7, cols: 8, row_overlap: 0.604, col_overlap: 0.555, ..GridSpec::default() };
    let plan = plan_grid(&spec).map_err(|e| e.to_string())?;
    ensure(plan.positions.len() == 56, || format!("{} positions", plan.positions.len()))?;
    let h = gap_free_span(plan.positions.iter().map(|p| p.y).collect(), spec.footprint_h).ok_or("vertical gap")?
        / spec.footprint_h;
    let w = gap_free_span(plan.positions.iter().map(|p| p.x).collect(), spec.footprint_w).ok_or("horizontal gap")?
        / spec.footprint_w;
    ensure((h - 3.376).abs() < 1e-9 && (w - 4.115).abs() < 1e-9, || format!("union spans {h}·h, {w}·w"))?;
    let (fw, fh) = plan.coverage_factors();
    ensure((fh - 3.376).abs() < 1e-9 && (fw - 4.115).abs() < 1e-9, || format!("reported {fh}·h, {fw}·w"))?;
    Ok(format!("{h:.6}·h x {w:.6}·w, no gaps"))
}

fn transition_timing() -> Check {
    let cfg = Config::load(&repo_root().join("configs/default.json")).map_err(|e| e.to_string())?;
    let plan = plan_grid(&cfg.scan).map_err(|e| e.to_string())?;
    let t = estimate_timing(&plan, &cfg.stage, cfg.capture).map_err(|e| e.to_string())?;
    let m = t.mean_row_transition_s.ok_or("no row transitions")?;
    ensure((10.0..=11.0).contains(&m), || format!("mean row transition {m:.3} s"))?;
    Ok(format!(
        "mean row transition {m:.3} s (settle {} s + exposure {} s)",
        cfg.capture.settle_s, cfg.capture.exposure_s
    ))
}

fn sinusoid(freq: f64, fps: f64, secs: f64, phase: f64, offset: f64) -> LineScanSignal {
    let n = (fps * secs).round() as usize;
    let v =
        (0..n).map(|i| offset + 40.0 * (2.0 * std::f64::consts::PI * freq * i as f64 / fps + phase).sin()).collect();
    LineScanSignal::new(fps, v).unwrap()
}

fn spectral_accuracy() -> Check {
    let started = Instant::now();
    let fps = 120.0;
    let mut detail = Vec::new();
    for f in [13.88, 27.95] {
        let p = dominant_frequency(&sinusoid(f, fps, 10.0, 0.3, 100.0), 3.0).map_err(|e| e.to_string())?;
        ensure((p.freq - f).abs() <= 0.5 * p.bin_width, || {
            format!("{f} Hz estimated as {:.4} (bin {:.4})", p.freq, p.bin_width)
        })?;
        detail.push(format!("{f}->{:.4}", p.freq));
    }
    let mut runner = TestRunner::new(PropConfig { cases: 200, failure_persistence: None, ..PropConfig::default() });
    runner
        .run(&(1.0f64..55.0, 0.0f64..std::f64::consts::TAU, 0.0f64..200.0), |(f, phase, offset)| {
            let p = dominant_frequency(&sinusoid(f, fps, 10.0, phase, offset), 3.0)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!((p.freq - f).abs() <= 0.5 * p.bin_width, "{} vs {}", p.freq, f);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("runtime {secs:.2} s"))?;
    Ok(format!("{}, 200 random cases, {secs:.2} s", detail.join(", ")))
}

fn mosaic_round_trip() -> Check {
    let started = Instant::now();
    let px = 12.0;
    let plan = plan_grid(&GridSpec::default()).map_err(|e| e.to_string())?;
    let master = value_noise(2000, 1500, 5);
    let tw = (plan.footprint_w * px).round() as usize;
    let th = (plan.footprint_h * px).round() as usize;
    let x0 = plan.positions.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let y0 = plan.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let truth: Vec<[i64; 2]> =
        plan.positions.iter().map(|p| [((p.x - x0) * px).round() as i64, ((p.y - y0) * px).round() as i64]).collect();
    let base = [20i64, 30i64];
    let images: Vec<Raster> =
        truth.iter().map(|o| master.crop((base[0] + o[0]) as usize, (base[1] + o[1]) as usize, tw, th)).collect();
    let tiles = tiles_from_plan(images, &plan, px).map_err(|e| e.to_string())?;
    let m = compose(&tiles, RegisterOptions::default()).map_err(|e| e.to_string())?;
    let at = |row: usize, col: usize| plan.index_of(row, col).unwrap();
    ensure(m.adjacencies.len() == 97, || format!("{} adjacencies", m.adjacencies.len()))?;
    for adj in &m.adjacencies {
        let (ia, ib) = (at(adj.a[0], adj.a[1]), at(adj.b[0], adj.b[1]));
        let want = [truth[ib][0] - truth[ia][0], truth[ib][1] - truth[ia][1]];
        ensure((adj.refined[0] - want[0]).abs() <= 1 && (adj.refined[1] - want[1]).abs() <= 1, || {
            format!("{:?}->{:?} registered {:?}, true {want:?}", adj.a, adj.b, adj.refined)
        })?;
    }
    let p0 = m.placements.iter().find(|p| p.row == 0 && p.col == 0).ok_or("tile (0,0) not placed")?;
    let i0 = at(0, 0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in 0..m.canvas.height() {
        for u in 0..m.canvas.width() {
            let mx = base[0] + truth[i0][0] + u as i64 - p0.x;
            let my = base[1] + truth[i0][1] + v as i64 - p0.y;
            if mx < 0 || my < 0 || mx >= master.width() as i64 || my >= master.height() as i64 {
                return Err(format!("canvas pixel ({u},{v}) maps outside the master"));
            }
            sum += (m.canvas.get(u, v) as f64 - master.get(mx as usize, my as usize) as f64).abs();
            count += 1;
        }
    }
    let mae = sum / count as f64;
    ensure(mae <= 2.0, || format!("mean absolute error {mae:.3}"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("runtime {secs:.2} s"))?;
    Ok(format!("97 registrations within 1 px, MAE {mae:.4}, {secs:.2} s"))
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn routine_name(r: Option<RoutineKind>) -> &'static str {
    r.map_or("none", RoutineKind::as_str)
}

fn fsm_totality() -> Check {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/transition_table.csv");
    let mut reader = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
    let mut table: HashMap<[String; 5], [String; 5]> = HashMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        let f: Vec<String> = row.iter().map(str::to_owned).collect();
        let key = [f[0].clone(), f[1].clone(), f[2].clone(), f[3].clone(), f[4].clone()];
        let val = [f[5].clone(), f[6].clone(), f[7].clone(), f[8].clone(), f[9].clone()];
        ensure(table.insert(key.clone(), val).is_none(), || format!("duplicate row {key:?}"))?;
    }
    let mut checked = 0;
    let mut accepted = 0;
    for mode in Mode::ALL {
        for motion in [false, true] {
            for routine in [None, Some(RoutineKind::Dance), Some(RoutineKind::Scan)] {
                for flapper in [false, true] {
                    let state = ControllerState {
                        mode,
                        motion_enabled: motion,
                        active_routine: routine,
                        flapper_hz: if flapper { 13.0 } else { 0.0 },
                        ..ControllerState::default()
                    };
                    for key in Key::ALL {
                        let k = [
                            mode.as_str().to_owned(),
                            flag(motion).to_owned(),
                            routine_name(routine).to_owned(),
                            flag(flapper).to_owned(),
                            key.name().to_owned(),
                        ];
                        let want = table.get(&k).ok_or_else(|| format!("no table row for {k:?}"))?;
                        let got = match dispatch(&state, key) {
                            Ok(t) => {
                                accepted += 1;
                                let s = t.state;
                                [
                                    "accepted".to_owned(),
                                    s.mode.as_str().to_owned(),
                                    flag(s.motion_enabled).to_owned(),
                                    routine_name(s.active_routine).to_owned(),
                                    flag(s.flapper_hz > 0.0).to_owned(),
                                ]
                            }
                            Err(_) => ["rejected".to_owned(), k[0].clone(), k[1].clone(), k[2].clone(), k[3].clone()],
                        };
                        ensure(&got == want, || format!("{k:?}: table {want:?}, controller {got:?}"))?;
                        checked += 1;
                    }
                }
            }
        }
    }
    ensure(checked == table.len(), || format!("table has {} rows, enumerated {checked}", table.len()))?;
    Ok(format!("{checked} (state, key) pairs match, {accepted} accepted"))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = repo_root().join("configs/default.json");
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let manifest = dir.path().join(format!("{name}.json"));
        let body = serde_json::json!({
            "config": config,
            "out_dir": name,
            "seed": 42,
            "noise_mm": 0.05,
        });
        std::fs::write(&manifest, body.to_string()).map_err(|e| e.to_string())?;
        let out =
            Command::new(env!("CARGO_BIN_EXE_comb")).arg("run").arg(&manifest).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("run failed: {}", String::from_utf8_lossy(&out.stderr)))?;
        outputs.push((dir.path().join(name), out.stdout));
    }
    ensure(outputs[0].1 == outputs[1].1, || "stdout summaries differ".into())?;
    let mut files = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for entry in std::fs::read_dir(outputs[0].0.join(&rel)).map_err(|e| e.to_string())? {
            let entry = entry.map_err(|e| e.to_string())?;
            let r = rel.join(entry.file_name());
            if entry.path().is_dir() {
                stack.push(r);
            } else {
                files.push(r);
            }
        }
    }
    files.sort();
    for name in ["poses.csv", "report.json"] {
        ensure(files.iter().any(|f| f == Path::new(name)), || format!("{name} not written"))?;
    }
    for f in &files {
        let a = std::fs::read(outputs[0].0.join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(outputs[1].0.join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{} differs", f.display()))?;
    }
    Ok(format!("{} artifacts byte-identical", files.len()))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("kinematics_closed_form", kinematics),
        ("zero_noise_fidelity", zero_noise_fidelity),
        ("injected_noise_oracle", injected_noise),
        ("scan_coverage", scan_coverage),
        ("transition_timing", transition_timing),
        ("spectral_accuracy", spectral_accuracy),
        ("mosaic_round_trip", mosaic_round_trip),
        ("controller_fsm_totality", fsm_totality),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
