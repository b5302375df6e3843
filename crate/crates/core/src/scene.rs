//! Two-radar desk-scale scene and FMCW IF data synthesis.
//!
//! Each radar is a single-antenna FMCW unit on the x-axis of the target plane
//! projection, offset from the plane by `plane_offset_d`. Targets are point
//! scatterers whose position oscillates sinusoidally along a unit axis to mimic
//! thoracoabdominal breathing motion. For every chirp the beat signal is
//!
//! ```text
//! s(t_n) = sum_j sigma_j * exp(i * (4*pi*gamma*r_j(tau)/c * t_n + 4*pi*f_c*r_j(tau)/c))
//! ```
//!
//! with `tau` the slow-time stamp of the chirp start. The range-dependent
//! residual video phase is not modelled.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.99792458e8;

/// Default observation length used when a frame count is not given.
pub const DEFAULT_DURATION_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformConfig {
    /// Chirp start frequency (Hz).
    pub f_start: f64,
    /// Swept bandwidth (Hz).
    pub bandwidth: f64,
    /// Chirp duration, equal to the pulse repetition interval (s).
    pub chirp_duration: f64,
    pub chirps_per_frame: usize,
    pub n_frames: usize,
    pub fast_time_samples: usize,
    /// ADC sample rate (Hz).
    pub adc_sample_rate: f64,
}

impl WaveformConfig {
    /// 60 GHz start, 1.5 GHz sweep, 20 us back-to-back chirps, 1024 chirps per
    /// frame, 80 samples at 4 MHz and 60 s of frames.
    pub fn desk_scale() -> Self {
        let mut w = WaveformConfig {
            f_start: 60e9,
            bandwidth: 1.5e9,
            chirp_duration: 20e-6,
            chirps_per_frame: 1024,
            n_frames: 1,
            fast_time_samples: 80,
            adc_sample_rate: 4e6,
        };
        w.n_frames = w.frames_for_duration(DEFAULT_DURATION_S);
        w
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.f_start,
            self.bandwidth,
            self.chirp_duration,
            self.adc_sample_rate,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("waveform parameters must be finite".into()));
        }
        if self.bandwidth <= 0.0 {
            return Err(Error::Config(format!(
                "bandwidth must be > 0 (got {})",
                self.bandwidth
            )));
        }
        if self.chirp_duration <= 0.0 {
            return Err(Error::Config(format!(
                "chirp duration must be > 0 (got {})",
                self.chirp_duration
            )));
        }
        if self.f_start <= 0.0 {
            return Err(Error::Config(format!(
                "start frequency must be > 0 (got {})",
                self.f_start
            )));
        }
        if self.adc_sample_rate <= 0.0 {
            return Err(Error::Config(format!(
                "ADC sample rate must be > 0 (got {})",
                self.adc_sample_rate
            )));
        }
        if self.chirps_per_frame == 0 || self.n_frames == 0 || self.fast_time_samples == 0 {
            return Err(Error::Config(
                "chirps_per_frame, n_frames and fast_time_samples must be >= 1".into(),
            ));
        }
        // Allow for rounding in products such as 4e6 * 20e-6.
        let capacity = self.adc_sample_rate * self.chirp_duration;
        if self.fast_time_samples as f64 > capacity * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "fast_time_samples ({}) exceeds adc_sample_rate * chirp_duration ({capacity})",
                self.fast_time_samples
            )));
        }
        Ok(())
    }

    /// Frequency slope (Hz/s).
    pub fn slope(&self) -> f64 {
        self.bandwidth / self.chirp_duration
    }

    pub fn center_frequency(&self) -> f64 {
        self.f_start + self.bandwidth / 2.0
    }

    pub fn frame_duration(&self) -> f64 {
        self.chirp_duration * self.chirps_per_frame as f64
    }

    /// Slow-time sample rate, one sample per frame (Hz).
    pub fn slow_rate(&self) -> f64 {
        1.0 / self.frame_duration()
    }

    /// Observation length covered by all frames (s).
    pub fn duration(&self) -> f64 {
        self.frame_duration() * self.n_frames as f64
    }

    /// Range spacing between adjacent fast-time DFT bins (m).
    pub fn bin_spacing(&self) -> f64 {
        SPEED_OF_LIGHT * self.adc_sample_rate / (2.0 * self.slope() * self.fast_time_samples as f64)
    }

    /// Number of whole frames closest to `seconds` of observation (at least one).
    pub fn frames_for_duration(&self, seconds: f64) -> usize {
        ((seconds / self.frame_duration()).round() as usize).max(1)
    }
}

/// Theoretical range resolution `c / 2B`.
pub fn range_resolution(waveform: &WaveformConfig) -> Result<f64> {
    if !(waveform.bandwidth > 0.0) {
        return Err(Error::Config(format!(
            "bandwidth must be > 0 (got {})",
            waveform.bandwidth
        )));
    }
    Ok(SPEED_OF_LIGHT / (2.0 * waveform.bandwidth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarUnit {
    pub id: u32,
    /// Position along the baseline (m); the radar's y coordinate is 0.
    pub position_x: f64,
    /// Perpendicular distance between the radar and the target plane (m).
    pub plane_offset_d: f64,
    /// Time of the first chirp relative to the common scene clock (s).
    pub start_offset: f64,
}

impl RadarUnit {
    pub fn new(id: u32, position_x: f64) -> Self {
        RadarUnit {
            id,
            position_x,
            plane_offset_d: 0.0,
            start_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    /// Rest position (x, y) in the target plane (m).
    pub position: [f64; 2],
    pub breath_frequency: f64,
    /// Peak displacement along `vibration_axis` (m).
    pub breath_amplitude: f64,
    pub breath_phase: f64,
    /// IF amplitude `sigma`.
    pub reflectivity: f64,
    pub vibration_axis: [f64; 2],
}

impl TargetModel {
    /// Target breathing along +y with 1 cm amplitude and unit reflectivity.
    pub fn new(x: f64, y: f64, breath_frequency: f64) -> Self {
        TargetModel {
            position: [x, y],
            breath_frequency,
            breath_amplitude: 0.01,
            breath_phase: 0.0,
            reflectivity: 1.0,
            vibration_axis: [0.0, 1.0],
        }
    }

    /// Scatterer position at scene time `t`.
    pub fn displaced_position(&self, t: f64) -> [f64; 2] {
        let excursion =
            self.breath_amplitude * (2.0 * PI * self.breath_frequency * t + self.breath_phase).sin();
        [
            self.position[0] + excursion * self.vibration_axis[0],
            self.position[1] + excursion * self.vibration_axis[1],
        ]
    }
}

/// Distance between `radar` and the displaced scatterer of `target` at time `t`.
pub fn instantaneous_range(radar: &RadarUnit, target: &TargetModel, t: f64) -> f64 {
    let [x, y] = target.displaced_position(t);
    let dx = x - radar.position_x;
    (dx * dx + y * y + radar.plane_offset_d * radar.plane_offset_d).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub waveform: WaveformConfig,
    pub radars: Vec<RadarUnit>,
    pub targets: Vec<TargetModel>,
    /// Per-sample SNR of the strongest target; `None` synthesizes clean data.
    pub noise_snr_db: Option<f64>,
    pub rng_seed: u64,
}

impl SceneConfig {
    /// Radars at (0.5, 0) and (1.5, 0) m, targets at (0.8, 1.0) and (1.1, 1.0) m
    /// breathing at 0.35 and 0.40 Hz with 1 cm amplitude, on the desk-scale waveform.
    pub fn two_subject_desk() -> Self {
        SceneConfig {
            waveform: WaveformConfig::desk_scale(),
            radars: vec![RadarUnit::new(1, 0.50), RadarUnit::new(2, 1.50)],
            targets: vec![
                TargetModel::new(0.80, 1.00, 0.35),
                TargetModel::new(1.10, 1.00, 0.40),
            ],
            noise_snr_db: None,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        if self.radars.len() < 2 {
            return Err(Error::Config(format!(
                "at least 2 radars are required (got {})",
                self.radars.len()
            )));
        }
        for (i, r) in self.radars.iter().enumerate() {
            if !r.position_x.is_finite() {
                return Err(Error::Config(format!("radar {}: position must be finite", r.id)));
            }
            if !(r.plane_offset_d >= 0.0) || !r.plane_offset_d.is_finite() {
                return Err(Error::Config(format!(
                    "radar {}: plane offset d must be >= 0 (got {})",
                    r.id, r.plane_offset_d
                )));
            }
            if !(r.start_offset >= 0.0) || !r.start_offset.is_finite() {
                return Err(Error::Config(format!(
                    "radar {}: start offset must be >= 0 (got {})",
                    r.id, r.start_offset
                )));
            }
            for other in &self.radars[..i] {
                if other.id == r.id {
                    return Err(Error::Config(format!("duplicate radar id {}", r.id)));
                }
                if other.position_x == r.position_x {
                    return Err(Error::Config(format!(
                        "radars {} and {} share x position {}",
                        other.id, r.id, r.position_x
                    )));
                }
            }
        }
        let nyquist = self.waveform.slow_rate() / 2.0;
        for (i, t) in self.targets.iter().enumerate() {
            let id = i + 1;
            if !t.position.iter().all(|v| v.is_finite()) || !(t.position[1] > 0.0) {
                return Err(Error::Config(format!(
                    "target {id}: y must be > 0 (got {})",
                    t.position[1]
                )));
            }
            if !(t.breath_frequency > 0.0 && t.breath_frequency < nyquist) {
                return Err(Error::Config(format!(
                    "target {id}: breathing frequency {} outside (0, {nyquist})",
                    t.breath_frequency
                )));
            }
            if !(t.breath_amplitude >= 0.0) || !t.breath_amplitude.is_finite() {
                return Err(Error::Config(format!(
                    "target {id}: breathing amplitude must be >= 0"
                )));
            }
            if !(t.reflectivity >= 0.0) || !t.reflectivity.is_finite() || !t.breath_phase.is_finite()
            {
                return Err(Error::Config(format!(
                    "target {id}: reflectivity must be finite and >= 0"
                )));
            }
            let norm = t.vibration_axis[0].hypot(t.vibration_axis[1]);
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "target {id}: vibration axis must have unit length (got {norm})"
                )));
            }
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return Err(Error::Config("noise SNR must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn radar(&self, radar_id: u32) -> Result<&RadarUnit> {
        self.radars
            .iter()
            .find(|r| r.id == radar_id)
            .ok_or_else(|| Error::InvalidInput(format!("no radar with id {radar_id}")))
    }

    /// Copy of the scene with one radar's start offset replaced.
    pub fn with_start_offset(&self, radar_id: u32, offset: f64) -> Result<SceneConfig> {
        if !(offset >= 0.0) || !offset.is_finite() {
            return Err(Error::InvalidInput(format!(
                "start offset must be >= 0 (got {offset})"
            )));
        }
        let mut scene = self.clone();
        scene
            .radars
            .iter_mut()
            .find(|r| r.id == radar_id)
            .ok_or_else(|| Error::InvalidInput(format!("no radar with id {radar_id}")))?
            .start_offset = offset;
        Ok(scene)
    }

    /// Complex noise variance per IF sample, if noise is enabled.
    pub fn noise_variance(&self) -> Option<f64> {
        self.noise_snr_db.map(|snr| {
            let strongest = self
                .targets
                .iter()
                .map(|t| t.reflectivity)
                .fold(0.0_f64, f64::max);
            // Noise-only scenes are referenced to a unit-amplitude target.
            let reference = if strongest > 0.0 { strongest } else { 1.0 };
            reference * reference / 10f64.powf(snr / 10.0)
        })
    }
}

/// Raw IF samples of one radar, stored frame-major, chirp-middle, sample-minor.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    pub radar_id: u32,
    pub waveform: WaveformConfig,
    pub start_offset: f64,
    pub samples: Vec<Complex32>,
}

impl DataCube {
    pub fn zeros(radar_id: u32, waveform: WaveformConfig, start_offset: f64) -> Self {
        let len = waveform.n_frames * waveform.chirps_per_frame * waveform.fast_time_samples;
        DataCube {
            radar_id,
            waveform,
            start_offset,
            samples: vec![Complex32::new(0.0, 0.0); len],
        }
    }

    pub fn frame_len(&self) -> usize {
        self.waveform.chirps_per_frame * self.waveform.fast_time_samples
    }

    pub fn frame(&self, frame: usize) -> &[Complex32] {
        let len = self.frame_len();
        &self.samples[frame * len..(frame + 1) * len]
    }

    pub fn sample(&self, frame: usize, chirp: usize, n: usize) -> Complex32 {
        let w = &self.waveform;
        self.samples[(frame * w.chirps_per_frame + chirp) * w.fast_time_samples + n]
    }

    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        let expected =
            self.waveform.n_frames * self.waveform.chirps_per_frame * self.waveform.fast_time_samples;
        if self.samples.len() != expected {
            return Err(Error::Format(format!(
                "cube holds {} samples, header implies {expected}",
                self.samples.len()
            )));
        }
        if !self.samples.iter().all(|s| s.re.is_finite() && s.im.is_finite()) {
            return Err(Error::Format("cube contains non-finite samples".into()));
        }
        Ok(())
    }
}

/// Chirp-level IF generator for one radar of a scene.
///
/// Noise for frame `f` is drawn from a ChaCha8 stream keyed by
/// `rng_seed ^ radar_id` with stream number `f`, so frames can be produced in
/// any order with identical results.
#[derive(Debug, Clone)]
pub struct IfSynthesizer<'a> {
    scene: &'a SceneConfig,
    radar: RadarUnit,
    noise_std: Option<f64>,
}

impl<'a> IfSynthesizer<'a> {
    pub fn new(scene: &'a SceneConfig, radar_id: u32) -> Result<Self> {
        scene.validate()?;
        let radar = scene.radar(radar_id)?.clone();
        Ok(IfSynthesizer {
            scene,
            radar,
            noise_std: scene.noise_variance().map(|v| (v / 2.0).sqrt()),
        })
    }

    pub fn radar(&self) -> &RadarUnit {
        &self.radar
    }

    pub fn waveform(&self) -> &WaveformConfig {
        &self.scene.waveform
    }

    /// Slow-time stamp of the start of chirp `chirp` in frame `frame`.
    pub fn chirp_time(&self, frame: usize, chirp: usize) -> f64 {
        let w = &self.scene.waveform;
        let index = (frame * w.chirps_per_frame + chirp) as f64;
        self.radar.start_offset + index * w.chirp_duration
    }

    /// Adds the noiseless beat signal of one chirp to `out`.
    fn add_clean_chirp(&self, frame: usize, chirp: usize, out: &mut [Complex64]) {
        let w = &self.scene.waveform;
        let tau = self.chirp_time(frame, chirp);
        let range_to_phase = 4.0 * PI / SPEED_OF_LIGHT;
        let fc = w.center_frequency();
        let dt = 1.0 / w.adc_sample_rate;
        for target in &self.scene.targets {
            let r = instantaneous_range(&self.radar, target, tau);
            let mut phasor = Complex64::from_polar(target.reflectivity, range_to_phase * fc * r);
            let step = Complex64::from_polar(1.0, range_to_phase * w.slope() * r * dt);
            for s in out.iter_mut() {
                *s += phasor;
                phasor *= step;
            }
        }
    }

    fn frame_rng(&self, frame: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.scene.rng_seed ^ u64::from(self.radar.id));
        rng.set_stream(frame as u64);
        rng
    }

    /// Writes all chirps of `frame` into `out` (length chirps_per_frame * fast_time_samples).
    pub fn frame(&self, frame: usize, out: &mut [Complex64]) {
        let w = &self.scene.waveform;
        let n = w.fast_time_samples;
        debug_assert_eq!(out.len(), n * w.chirps_per_frame);
        out.fill(Complex64::new(0.0, 0.0));
        for (chirp, samples) in out.chunks_exact_mut(n).enumerate() {
            self.add_clean_chirp(frame, chirp, samples);
        }
        if let Some(std) = self.noise_std {
            let mut rng = self.frame_rng(frame);
            for s in out.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *s += Complex64::new(re * std, im * std);
            }
        }
    }

    /// Coherent mean over the chirps of `frame`, noiseless.
    ///
    /// Sums chirps in order then divides, the same reduction the range
    /// processor applies to a stored cube.
    pub fn clean_frame_mean(&self, frame: usize, out: &mut [Complex64]) {
        let w = &self.scene.waveform;
        out.fill(Complex64::new(0.0, 0.0));
        let mut chirp_buf = vec![Complex64::new(0.0, 0.0); w.fast_time_samples];
        for chirp in 0..w.chirps_per_frame {
            chirp_buf.fill(Complex64::new(0.0, 0.0));
            self.add_clean_chirp(frame, chirp, &mut chirp_buf);
            for (acc, s) in out.iter_mut().zip(&chirp_buf) {
                *acc += *s;
            }
        }
        let scale = 1.0 / w.chirps_per_frame as f64;
        for s in out.iter_mut() {
            *s *= scale;
        }
    }

    /// Adds noise distributed as the coherent mean of `chirps_per_frame`
    /// independent per-sample draws, i.e. complex variance `sigma_n^2 / P`.
    ///
    /// Equal in distribution to averaging a noisy cube but not sample-identical.
    pub fn add_frame_mean_noise(&self, frame: usize, out: &mut [Complex64]) {
        if let Some(std) = self.noise_std {
            let std = std / (self.scene.waveform.chirps_per_frame as f64).sqrt();
            let mut rng = self.frame_rng(frame);
            for s in out.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *s += Complex64::new(re * std, im * std);
            }
        }
    }
}

/// Synthesizes the complete IF cube of `radar_id`.
///
/// Memory use is `8 * n_frames * chirps_per_frame * fast_time_samples` bytes;
/// long scenes should be streamed with [`IfSynthesizer`] instead.
pub fn synthesize_if_cube(scene: &SceneConfig, radar_id: u32) -> Result<DataCube> {
    let synth = IfSynthesizer::new(scene, radar_id)?;
    let w = scene.waveform.clone();
    let mut cube = DataCube::zeros(radar_id, w.clone(), synth.radar().start_offset);
    let frame_len = cube.frame_len();
    let mut buf = vec![Complex64::new(0.0, 0.0); frame_len];
    for (f, dst) in cube.samples.chunks_exact_mut(frame_len).enumerate() {
        synth.frame(f, &mut buf);
        for (d, s) in dst.iter_mut().zip(&buf) {
            *d = Complex32::new(s.re as f32, s.im as f32);
        }
    }
    Ok(cube)
}

/// Re-synthesizes `cube` as if its radar had started `offset` seconds late.
pub fn apply_start_offset(scene: &SceneConfig, cube: &DataCube, offset: f64) -> Result<DataCube> {
    let shifted = scene.with_start_offset(cube.radar_id, offset)?;
    if shifted.waveform != cube.waveform {
        return Err(Error::InvalidInput(
            "cube waveform does not match the scene".into(),
        ));
    }
    synthesize_if_cube(&shifted, cube.radar_id)
}
