//! Range processing: per-frame coherent chirp integration, fast-time DFT,
//! slow-time mean profile and cell-averaging CFAR.

use std::collections::BTreeSet;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rustfft::{Fft, FftPlanner};

use crate::csvfmt::g9;
use crate::cube_io::{CubeHeader, CubeReader};
use crate::error::{Error, Result};
use crate::scene::{DataCube, IfSynthesizer, SceneConfig, WaveformConfig};

/// Fast-time taper applied before the range DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    /// No taper. Narrowest main lobe; resolves the 1.0/1.2 m ridge pair.
    #[default]
    Rectangular,
    /// Symmetric Hann taper.
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => hann(len),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Window::Rectangular => "rect",
            Window::Hann => "hann",
        }
    }
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" | "rectangular" => Ok(Window::Rectangular),
            "hann" => Ok(Window::Hann),
            other => Err(Error::Config(format!(
                "unknown window `{other}` (expected rect or hann)"
            ))),
        }
    }
}

/// Symmetric Hann window of `len` points.
pub fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

/// Complex range profiles over slow time, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeTimeMap {
    pub radar_id: u32,
    /// Row-major `[frame][bin]`.
    pub values: Vec<Complex64>,
    pub n_bins: usize,
    pub bin_spacing: f64,
    pub slow_rate: f64,
    pub start_offset: f64,
    /// Carrier centre frequency, needed to convert phase to displacement.
    pub center_frequency: f64,
}

impl RangeTimeMap {
    pub fn n_frames(&self) -> usize {
        if self.n_bins == 0 {
            0
        } else {
            self.values.len() / self.n_bins
        }
    }

    pub fn row(&self, frame: usize) -> &[Complex64] {
        &self.values[frame * self.n_bins..(frame + 1) * self.n_bins]
    }

    pub fn value(&self, frame: usize, bin: usize) -> Complex64 {
        self.values[frame * self.n_bins + bin]
    }

    pub fn range_of(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_spacing
    }

    pub fn column(&self, bin: usize) -> Result<Vec<Complex64>> {
        if bin >= self.n_bins {
            return Err(Error::Index {
                index: bin,
                len: self.n_bins,
            });
        }
        Ok(self.values.iter().skip(bin).step_by(self.n_bins).copied().collect())
    }

    /// Elementwise sum of two maps with identical geometry.
    pub fn add(&self, other: &RangeTimeMap) -> Result<RangeTimeMap> {
        if self.n_bins != other.n_bins || self.values.len() != other.values.len() {
            return Err(Error::InvalidInput("map shapes differ".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
        Ok(out)
    }

    fn empty(radar_id: u32, waveform: &WaveformConfig, start_offset: f64) -> Self {
        RangeTimeMap {
            radar_id,
            values: Vec::with_capacity(waveform.n_frames * waveform.fast_time_samples),
            n_bins: waveform.fast_time_samples,
            bin_spacing: waveform.bin_spacing(),
            slow_rate: waveform.slow_rate(),
            start_offset,
            center_frequency: waveform.center_frequency(),
        }
    }
}

/// Windowed fast-time DFT of one chirp-averaged frame.
///
/// Output is scaled by the window sum so a unit-amplitude tone centred on a
/// bin has magnitude 1 there.
pub struct RangeProcessor {
    taper: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl RangeProcessor {
    pub fn new(len: usize, window: Window) -> Self {
        let coeffs = window.coefficients(len);
        let sum: f64 = coeffs.iter().sum();
        let taper = coeffs.iter().map(|c| c / sum).collect();
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        RangeProcessor {
            taper,
            fft,
            scratch,
        }
    }

    pub fn transform(&mut self, frame_mean: &mut [Complex64]) {
        for (s, w) in frame_mean.iter_mut().zip(&self.taper) {
            *s *= *w;
        }
        self.fft.process_with_scratch(frame_mean, &mut self.scratch);
    }
}

/// Coherent mean over the chirps of one stored frame.
pub fn chirp_mean(frame: &[Complex32], fast_time_samples: usize, out: &mut [Complex64]) {
    out.fill(Complex64::new(0.0, 0.0));
    let chirps = frame.len() / fast_time_samples;
    for chirp in frame.chunks_exact(fast_time_samples) {
        for (acc, s) in out.iter_mut().zip(chirp) {
            *acc += Complex64::new(s.re.into(), s.im.into());
        }
    }
    let scale = 1.0 / chirps as f64;
    for s in out.iter_mut() {
        *s *= scale;
    }
}

pub fn range_fft(cube: &DataCube, window: Window) -> Result<RangeTimeMap> {
    cube.validate()?;
    let w = &cube.waveform;
    let mut map = RangeTimeMap::empty(cube.radar_id, w, cube.start_offset);
    let mut proc = RangeProcessor::new(w.fast_time_samples, window);
    let mut buf = vec![Complex64::new(0.0, 0.0); w.fast_time_samples];
    for f in 0..w.n_frames {
        chirp_mean(cube.frame(f), w.fast_time_samples, &mut buf);
        proc.transform(&mut buf);
        map.values.extend_from_slice(&buf);
    }
    Ok(map)
}

/// Range-FFT of a cube file, streamed one frame at a time.
pub fn range_fft_reader(reader: &mut CubeReader, window: Window) -> Result<RangeTimeMap> {
    let CubeHeader {
        radar_id,
        waveform,
        start_offset,
    } = reader.header().clone();
    let n = waveform.fast_time_samples;
    let mut map = RangeTimeMap::empty(radar_id, &waveform, start_offset);
    let mut proc = RangeProcessor::new(n, window);
    let mut frame = Vec::new();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    while reader.next_frame(&mut frame)? {
        chirp_mean(&frame, n, &mut buf);
        proc.transform(&mut buf);
        map.values.extend_from_slice(&buf);
    }
    Ok(map)
}

/// Range-time map straight from the scene model without materializing the cube.
///
/// Noiseless output matches `range_fft(synthesize_if_cube(..))` up to the f32
/// storage of the cube. With noise enabled, the per-frame noise is drawn
/// directly at the chirp-averaged level (see
/// [`IfSynthesizer::add_frame_mean_noise`]).
pub fn simulate_range_time_map(
    scene: &SceneConfig,
    radar_id: u32,
    window: Window,
) -> Result<RangeTimeMap> {
    let clean = simulate_clean_frame_means(scene, radar_id)?;
    frame_means_to_map(scene, radar_id, &clean, window)
}

/// Noiseless chirp-averaged fast-time frames, `[frame][sample]` row-major.
pub fn simulate_clean_frame_means(scene: &SceneConfig, radar_id: u32) -> Result<Vec<Complex64>> {
    let synth = IfSynthesizer::new(scene, radar_id)?;
    let w = &scene.waveform;
    let n = w.fast_time_samples;
    let mut out = vec![Complex64::new(0.0, 0.0); w.n_frames * n];
    for (f, row) in out.chunks_exact_mut(n).enumerate() {
        synth.clean_frame_mean(f, row);
    }
    Ok(out)
}

/// Adds the scene's frame-level noise to precomputed clean frame means and
/// range-transforms them. Lets Monte Carlo runs reuse one clean synthesis.
pub fn frame_means_to_map(
    scene: &SceneConfig,
    radar_id: u32,
    clean: &[Complex64],
    window: Window,
) -> Result<RangeTimeMap> {
    let synth = IfSynthesizer::new(scene, radar_id)?;
    let w = &scene.waveform;
    let n = w.fast_time_samples;
    if clean.len() != w.n_frames * n {
        return Err(Error::InvalidInput("frame means do not match waveform".into()));
    }
    let mut map = RangeTimeMap::empty(radar_id, w, synth.radar().start_offset);
    let mut proc = RangeProcessor::new(n, window);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (f, row) in clean.chunks_exact(n).enumerate() {
        buf.copy_from_slice(row);
        synth.add_frame_mean_noise(f, &mut buf);
        proc.transform(&mut buf);
        map.values.extend_from_slice(&buf);
    }
    Ok(map)
}

/// Per-bin mean magnitude across slow time.
pub fn mean_profile(map: &RangeTimeMap) -> Result<Vec<f64>> {
    let frames = map.n_frames();
    if frames == 0 {
        return Err(Error::InvalidInput("range-time map has no frames".into()));
    }
    let mut profile = vec![0.0; map.n_bins];
    for f in 0..frames {
        for (acc, v) in profile.iter_mut().zip(map.row(f)) {
            *acc += v.norm();
        }
    }
    let scale = 1.0 / frames as f64;
    profile.iter_mut().for_each(|v| *v *= scale);
    Ok(profile)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfarParams {
    /// Guard cells on each side of the cell under test.
    pub guard_cells: usize,
    /// Training cells on each side of the guard band.
    pub training_cells: usize,
    pub pfa: f64,
    /// A threshold crossing is reported only if it is at least this fraction
    /// of each immediate neighbour, in `(0, 1]`.
    pub peak_ratio: f64,
}

impl Default for CfarParams {
    fn default() -> Self {
        CfarParams {
            guard_cells: 2,
            training_cells: 8,
            pfa: 1e-3,
            peak_ratio: 0.8,
        }
    }
}

impl CfarParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::Config(format!("cfar pfa must lie in (0, 1) (got {})", self.pfa)));
        }
        if self.training_cells < 2 {
            return Err(Error::Config(format!(
                "cfar training_cells must be >= 2 (got {})",
                self.training_cells
            )));
        }
        if !(self.peak_ratio > 0.0 && self.peak_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "cfar peak_ratio must lie in (0, 1] (got {})",
                self.peak_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bin_index: usize,
    pub range: f64,
    /// Cell value over the local noise estimate (dB).
    pub snr_estimate: f64,
}

/// CA-CFAR multiplier for `n` exponentially distributed training cells:
/// `alpha = n * (pfa^(-1/n) - 1)`.
pub fn ca_cfar_scale(pfa: f64, n: usize) -> f64 {
    let n = n as f64;
    n * (pfa.powf(-1.0 / n) - 1.0)
}

/// Cell-averaging CFAR over a square-law (power) profile.
///
/// Cells near the ends use whichever training cells exist, provided there
/// are at least `training_cells` of them. Among threshold crossings only
/// peaks (see [`CfarParams::peak_ratio`]) are reported, in bin order.
pub fn cfar_detect(profile: &[f64], params: &CfarParams, bin_spacing: f64) -> Result<Vec<Detection>> {
    params.validate()?;
    let g = params.guard_cells;
    let t = params.training_cells;
    let min_len = 2 * (g + t) + 1;
    if profile.len() <= min_len {
        return Err(Error::Config(format!(
            "profile of {} cells too short for CFAR window (needs > {min_len})",
            profile.len()
        )));
    }
    let len = profile.len();
    let mut detections = Vec::new();
    for i in 0..len {
        let lead = i.saturating_sub(g + t)..i.saturating_sub(g);
        let lag = (i + g + 1).min(len)..(i + g + t + 1).min(len);
        let n = lead.len() + lag.len();
        if n < t {
            continue;
        }
        let noise = (profile[lead].iter().sum::<f64>() + profile[lag].iter().sum::<f64>()) / n as f64;
        let value = profile[i];
        if !(value > ca_cfar_scale(params.pfa, n) * noise) {
            continue;
        }
        let left = if i > 0 { profile[i - 1] } else { 0.0 };
        let right = if i + 1 < len { profile[i + 1] } else { 0.0 };
        if value < params.peak_ratio * left.max(right) {
            continue;
        }
        let snr_estimate = if noise > 0.0 {
            10.0 * (value / noise).log10()
        } else {
            f64::INFINITY
        };
        detections.push(Detection {
            bin_index: i,
            range: i as f64 * bin_spacing,
            snr_estimate,
        });
    }
    Ok(detections)
}

/// Union of `bin ± expansion` over all detections, clipped to `[0, n_bins)`.
pub fn candidate_bins(detections: &[Detection], expansion: usize, n_bins: usize) -> Vec<usize> {
    let mut set = BTreeSet::new();
    for d in detections {
        let lo = d.bin_index.saturating_sub(expansion);
        let hi = (d.bin_index + expansion).min(n_bins.saturating_sub(1));
        set.extend(lo..=hi);
    }
    set.into_iter().collect()
}

/// `|map|` as CSV: header `time_s` then one column per bin range (m).
/// Times are on the radar's own clock, starting at 0.
pub fn write_range_map_csv<W: Write>(out: &mut W, map: &RangeTimeMap) -> std::io::Result<()> {
    write!(out, "time_s")?;
    for b in 0..map.n_bins {
        write!(out, ",{}", g9(map.range_of(b)))?;
    }
    writeln!(out)?;
    for f in 0..map.n_frames() {
        write!(out, "{}", g9(f as f64 / map.slow_rate))?;
        for v in map.row(f) {
            write!(out, ",{}", g9(v.norm()))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
