//! Dominant-frequency estimation from a fixed line through a frame sequence.

use std::io::Read;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Raster;

pub const MIN_SIGNAL_LEN: usize = 16;
pub const DEFAULT_SNR_THRESHOLD: f64 = 3.0;
pub const ZERO_PAD: usize = 4;
/// Samples per unit length along the analysis line, with a floor.
const MIN_LINE_SAMPLES: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("line ({0},{1})-({2},{3}) leaves the {4}x{5} frame")]
    LineOutOfBounds(f64, f64, f64, f64, usize, usize),
    #[error("need at least 2 frames, got {0}")]
    EmptySequence(usize),
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    FrameSizeMismatch { index: usize, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("signal has {0} samples; at least {MIN_SIGNAL_LEN} are required")]
    SignalTooShort(usize),
    #[error("sample rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("no dominant peak: snr {snr:.2} below {threshold:.2}")]
    NoDominantPeak { snr: f64, threshold: f64 },
    #[error("signal input: {0}")]
    Format(String),
}

impl SpectrumError {
    pub fn name(&self) -> &'static str {
        match self {
            SpectrumError::LineOutOfBounds(..) => "LineOutOfBounds",
            SpectrumError::EmptySequence(_) => "EmptySequence",
            SpectrumError::FrameSizeMismatch { .. } => "FrameSizeMismatch",
            SpectrumError::SignalTooShort(_) => "SignalTooShort",
            SpectrumError::InvalidRate(_) => "InvalidRate",
            SpectrumError::NoDominantPeak { .. } => "NoDominantPeak",
            SpectrumError::Format(_) => "SignalFormat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScanSignal {
    pub fps: f64,
    pub values: Vec<f64>,
}

impl LineScanSignal {
    pub fn new(fps: f64, values: Vec<f64>) -> Result<Self, SpectrumError> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(SpectrumError::InvalidRate(fps));
        }
        if values.len() < MIN_SIGNAL_LEN {
            return Err(SpectrumError::SignalTooShort(values.len()));
        }
        Ok(LineScanSignal { fps, values })
    }

    /// One value per line, or the last column of a CSV with a header row.
    pub fn read_csv<R: Read>(input: R, fps: f64) -> Result<Self, SpectrumError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
        let mut values = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| SpectrumError::Format(e.to_string()))?;
            let field = rec.iter().next_back().unwrap_or("");
            values.push(field.parse::<f64>().map_err(|e| SpectrumError::Format(format!("{field:?}: {e}")))?);
        }
        Self::new(fps, values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPeak {
    pub freq: f64,
    pub magnitude: f64,
    pub bin_width: f64,
    pub snr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl std::str::FromStr for LineSegment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match v[..] {
            [x0, y0, x1, y1] => Ok(LineSegment { x0, y0, x1, y1 }),
            _ => Err(format!("expected x0,y0,x1,y1, got {} values", v.len())),
        }
    }
}

impl LineSegment {
    fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    pub fn sample_count(&self) -> usize {
        (self.length().ceil() as usize + 1).max(MIN_LINE_SAMPLES)
    }

    fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.sample_count();
        (0..n).map(move |k| {
            let f = k as f64 / (n - 1) as f64;
            (self.x0 + f * (self.x1 - self.x0), self.y0 + f * (self.y1 - self.y0))
        })
    }

    fn check(&self, w: usize, h: usize) -> Result<(), SpectrumError> {
        let inside = |x: f64, y: f64| x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64;
        if w == 0 || h == 0 || !inside(self.x0, self.y0) || !inside(self.x1, self.y1) {
            return Err(SpectrumError::LineOutOfBounds(self.x0, self.y0, self.x1, self.y1, w, h));
        }
        Ok(())
    }
}

/// Both line signals extracted from a frame sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSignals {
    /// Mean absolute change along the line per frame transition.
    pub abs_diff: Vec<f64>,
    /// Mean intensity along the line per frame.
    pub mean_intensity: Vec<f64>,
}

pub fn extract_line_signals(frames: &[Raster], line: LineSegment) -> Result<LineSignals, SpectrumError> {
    if frames.len() < 2 {
        return Err(SpectrumError::EmptySequence(frames.len()));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    for (index, f) in frames.iter().enumerate() {
        if f.width() != w || f.height() != h {
            return Err(SpectrumError::FrameSizeMismatch {
                index,
                got_w: f.width(),
                got_h: f.height(),
                want_w: w,
                want_h: h,
            });
        }
    }
    line.check(w, h)?;
    let profiles: Vec<Vec<f64>> =
        frames.iter().map(|f| line.points().map(|(x, y)| f.bilinear(x, y)).collect()).collect();
    let n = line.sample_count() as f64;
    let mean_intensity = profiles.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let abs_diff = profiles
        .windows(2)
        .map(|pair| pair[0].iter().zip(&pair[1]).map(|(a, b)| (b - a).abs()).sum::<f64>() / n)
        .collect();
    Ok(LineSignals { abs_diff, mean_intensity })
}

/// The absolute-difference signal alone.
pub fn extract_line_signal(frames: &[Raster], line: LineSegment, fps: f64) -> Result<LineScanSignal, SpectrumError> {
    let s = extract_line_signals(frames, line)?;
    if !(fps > 0.0) {
        return Err(SpectrumError::InvalidRate(fps));
    }
    // short sequences are allowed here; the length check belongs to analysis
    Ok(LineScanSignal { fps, values: s.abs_diff })
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|k| 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / (n - 1) as f64).cos()).collect()
}

/// Magnitude spectrum of the mean-removed, Hann-windowed block padded to `m`.
fn padded_magnitude(block: &[f64], m: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mean = block.iter().sum::<f64>() / block.len() as f64;
    let win = hann(block.len());
    let mut buf: Vec<Complex<f64>> = block
        .iter()
        .zip(&win)
        .map(|(v, w)| Complex::new((v - mean) * w, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    planner.plan_fft_forward(m).process(&mut buf);
    buf[..=m / 2].iter().map(|c| c.norm()).collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Averaged spectrum over half-overlapping segments of an eighth of the
/// signal. Peak-to-median ratios from a single periodogram are heavy-tailed
/// for noise; averaging makes the ratio a usable detector.
fn averaged_magnitude(values: &[f64], planner: &mut FftPlanner<f64>) -> (Vec<f64>, usize) {
    let l = values.len();
    let seg = (prev_pow2(l / 8)).max(MIN_SIGNAL_LEN).min(l);
    let hop = (seg / 2).max(1);
    let m = seg.next_power_of_two() * ZERO_PAD;
    let mut acc = vec![0.0; m / 2 + 1];
    let mut count = 0;
    let mut start = 0;
    while start + seg <= l {
        for (a, v) in acc.iter_mut().zip(padded_magnitude(&values[start..start + seg], m, planner)) {
            *a += v;
        }
        count += 1;
        start += hop;
    }
    for a in &mut acc {
        *a /= count as f64;
    }
    (acc, m)
}

fn prev_pow2(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}

/// Peak frequency with parabolic refinement on log magnitude, plus snr.
pub fn dominant_frequency(signal: &LineScanSignal, snr_threshold: f64) -> Result<SpectrumPeak, SpectrumError> {
    let peak = spectrum_peak(signal)?;
    if !(peak.snr >= snr_threshold) {
        return Err(SpectrumError::NoDominantPeak { snr: peak.snr, threshold: snr_threshold });
    }
    Ok(peak)
}

/// As `dominant_frequency` without the snr gate.
pub fn spectrum_peak(signal: &LineScanSignal) -> Result<SpectrumPeak, SpectrumError> {
    let signal = LineScanSignal::new(signal.fps, signal.values.clone())?;
    let values = &signal.values;
    let n = values.len().next_power_of_two();
    let m = n * ZERO_PAD;
    let mut planner = FftPlanner::new();
    let mag = padded_magnitude(values, m, &mut planner);

    let (k, &peak) = mag.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let delta = if k + 1 < mag.len() && peak > 0.0 {
        let l = |v: f64| v.max(f64::MIN_POSITIVE).ln();
        let (a, b, c) = (l(mag[k - 1]), l(peak), l(mag[k + 1]));
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            (0.5 * (a - c) / den).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    let freq = (k as f64 + delta) * signal.fps / m as f64;

    let (avg, am) = averaged_magnitude(values, &mut planner);
    let at = ((freq * am as f64 / signal.fps).round() as usize).min(avg.len() - 1);
    let local = avg[at.saturating_sub(1)..(at + 2).min(avg.len())].iter().cloned().fold(0.0, f64::max);
    let mut rest = avg[1..].to_vec();
    let med = median(&mut rest);
    let snr = if med > 0.0 {
        local / med
    } else if local > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(SpectrumPeak { freq, magnitude: peak, bin_width: signal.fps / n as f64, snr })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    AbsDiff,
    MeanIntensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: SignalKind,
    pub peak: Option<SpectrumPeak>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnalysis {
    pub chosen: SpectrumPeak,
    pub chosen_kind: SignalKind,
    pub candidates: Vec<Candidate>,
}

/// Analyses both line signals and keeps the one with the higher snr.
pub fn analyze_frames(
    frames: &[Raster],
    line: LineSegment,
    fps: f64,
    snr_threshold: f64,
) -> Result<FrameAnalysis, SpectrumError> {
    let sigs = extract_line_signals(frames, line)?;
    let mut candidates = Vec::new();
    let mut best: Option<(SignalKind, SpectrumPeak)> = None;
    let mut last_err = None;
    for (kind, values) in [(SignalKind::AbsDiff, sigs.abs_diff), (SignalKind::MeanIntensity, sigs.mean_intensity)] {
        let res = LineScanSignal::new(fps, values).and_then(|s| spectrum_peak(&s));
        match res {
            Ok(p) => {
                if best.is_none_or(|(_, b)| p.snr > b.snr) {
                    best = Some((kind, p));
                }
                candidates.push(Candidate { kind, peak: Some(p), error: None });
            }
            Err(e) => {
                candidates.push(Candidate { kind, peak: None, error: Some(e.to_string()) });
                last_err = Some(e);
            }
        }
    }
    let (kind, peak) = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap()),
    };
    if !(peak.snr >= snr_threshold) {
        return Err(SpectrumError::NoDominantPeak { snr: peak.snr, threshold: snr_threshold });
    }
    Ok(FrameAnalysis { chosen: peak, chosen_kind: kind, candidates })
}

/// Column of maximum temporal variance along the horizontal centre line,
/// extended vertically across the frame. Offered as a starting point; the
/// caller always picks the line explicitly.
pub fn suggest_line(frames: &[Raster]) -> Option<LineSegment> {
    let f0 = frames.first()?;
    let (w, h) = (f0.width(), f0.height());
    if w == 0 || h == 0 || frames.len() < 2 {
        return None;
    }
    let y = h / 2;
    let mut best = (0usize, -1.0f64);
    for x in 0..w {
        let vals: Vec<f64> = frames.iter().map(|f| f.get(x, y) as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        if var > best.1 {
            best = (x, var);
        }
    }
    Some(LineSegment { x0: best.0 as f64, y0: 0.0, x1: best.0 as f64, y1: (h - 1) as f64 })
}

pub fn load_frames(dir: &Path) -> Result<Vec<Raster>, SpectrumError> {
    let paths = crate::raster::numbered_images(dir).map_err(|e| SpectrumError::Format(e.to_string()))?;
    paths.iter().map(|p| Raster::load(p).map_err(|e| SpectrumError::Format(e.to_string()))).collect()
}

/// Frames of a bar whose position oscillates sinusoidally across a vertical
/// analysis line.
pub fn oscillating_bar_frames(freq: f64, fps: f64, count: usize, width: usize, height: usize) -> Vec<Raster> {
    let centre = width as f64 / 2.0;
    let amp = width as f64 / 4.0;
    let half = width as f64 / 16.0;
    (0..count)
        .map(|i| {
            let pos = centre + amp * (std::f64::consts::TAU * freq * i as f64 / fps).sin();
            let mut r = Raster::new(width, height);
            for y in 0..height {
                for x in 0..width {
                    // one-pixel linear edge keeps intensity continuous in pos
                    let d = (x as f64 - pos).abs();
                    let v = (half + 0.5 - d).clamp(0.0, 1.0);
                    r.set(x, y, (30.0 + 200.0 * v) as f32);
                }
            }
            r
        })
        .collect()
}
