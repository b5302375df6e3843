//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment. Radars and targets use
//! indexed prefixes such as `radar.1.x_m` and `target.2.breath_hz`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::assoc::AssociationParams;
use crate::error::{Error, Result};
use crate::range::{CfarParams, Window};
use crate::scene::{RadarUnit, SceneConfig, TargetModel, WaveformConfig, DEFAULT_DURATION_S};
use crate::vital::{BandPass, RESPIRATION_BAND};

/// Default breathing frequency for targets that do not set one (Hz).
pub const DEFAULT_BREATH_HZ: f64 = 0.25;

/// Default one-sided lag span of the correlations behind the rate spectrum,
/// as a fraction of the recording duration.
pub const DEFAULT_SPECTRUM_LAG_FRACTION: f64 = 0.4;

/// Key reference shown by `--help`.
pub const CONFIG_KEYS: &str = "\
Configuration keys (flat `key = value`, `#` comments, defaults in brackets):
  waveform
    f_start_hz [60e9]  bandwidth_hz [1.5e9]  chirp_duration_s [20e-6]
    chirps_per_frame [1024]  fast_time_samples [80]  adc_sample_rate_hz [4e6]
    duration_s [60]  or  n_frames [frames in duration_s]
  scene
    noise_snr_db [unset: noiseless]  rng_seed [0]
    radar.N.x_m (required)  radar.N.d_m [0]  radar.N.start_offset_s [0]
    target.N.x_m, target.N.y_m (required)  target.N.breath_hz [0.25]
    target.N.amplitude_m [0.01]  target.N.phase_rad [0]  target.N.reflectivity [1]
    target.N.axis_x [0]  target.N.axis_y [1]
  processing
    window [rect | hann]  cfar.guard_cells [2]  cfar.training_cells [8]
    cfar.pfa [1e-3]  cfar.peak_ratio [0.8]  expansion [0]
    band_lo_hz [0.1]  band_hi_hz [0.7]  gamma_th [0.3]  max_lag_s [5]
    lag_tolerance [2]  spectrum_lag_fraction [0.4]  zero_pad_factor [8]
    emit_intermediates [false]";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub window: Window,
    pub cfar: CfarParams,
    pub association: AssociationParams,
    pub band: (f64, f64),
    pub expansion: usize,
    pub zero_pad_factor: usize,
    /// One-sided lag span of the rate-spectrum correlations over duration.
    pub spectrum_lag_fraction: f64,
    pub emit_intermediates: bool,
    /// Set from the command line, never from the file.
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Processing defaults around the given scene.
    pub fn with_scene(scene: SceneConfig) -> Self {
        RunConfig {
            scene,
            window: Window::default(),
            cfar: CfarParams::default(),
            association: AssociationParams::default(),
            band: RESPIRATION_BAND,
            expansion: 0,
            zero_pad_factor: 8,
            spectrum_lag_fraction: DEFAULT_SPECTRUM_LAG_FRACTION,
            emit_intermediates: false,
            output_dir: None,
        }
    }

    /// The two-subject desk scene with default processing.
    pub fn desk_scale() -> Self {
        RunConfig::with_scene(SceneConfig::two_subject_desk())
    }

    /// Maximum lag (s) of the correlations feeding the rate spectrum.
    pub fn spectrum_max_lag(&self) -> f64 {
        self.spectrum_lag_fraction * self.scene.waveform.duration()
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.cfar.validate()?;
        self.association.validate()?;
        let w = &self.scene.waveform;
        let (lo, hi) = self.band;
        if !(lo > 0.0 && lo < hi && hi < w.slow_rate() / 2.0) {
            return Err(Error::Config(format!(
                "band ({lo}, {hi}) Hz must satisfy 0 < lo < hi < {} Hz",
                w.slow_rate() / 2.0
            )));
        }
        if !(self.spectrum_lag_fraction > 0.0 && self.spectrum_lag_fraction < 0.5) {
            return Err(Error::Config(format!(
                "spectrum_lag_fraction must lie in (0, 0.5) (got {})",
                self.spectrum_lag_fraction
            )));
        }
        if self.zero_pad_factor < 1 {
            return Err(Error::Config("zero_pad_factor must be >= 1".into()));
        }
        if self.expansion >= w.fast_time_samples {
            return Err(Error::Config(format!(
                "expansion ({}) must be below the bin count ({})",
                self.expansion, w.fast_time_samples
            )));
        }
        Ok(())
    }

    /// Checks that the recording is long enough for the filter and lag
    /// settings. Separate from [`RunConfig::validate`] so short scenes can
    /// still be simulated.
    pub fn check_duration(&self) -> Result<()> {
        let w = &self.scene.waveform;
        let (lo, _) = self.band;
        let transient = BandPass::new(self.band, w.slow_rate())?.transient_len();
        if w.n_frames <= transient {
            return Err(Error::Config(format!(
                "{} frames are too few for the {lo} Hz band edge (need more than {transient})",
                w.n_frames
            )));
        }
        if self.association.max_lag >= w.duration() / 2.0 {
            return Err(Error::Config(format!(
                "max_lag_s ({}) must be below half the duration ({} s)",
                self.association.max_lag,
                w.duration()
            )));
        }
        if self.spectrum_max_lag() < self.association.max_lag {
            return Err(Error::Config(format!(
                "spectrum lag span ({} s) must cover max_lag_s ({} s)",
                self.spectrum_max_lag(),
                self.association.max_lag
            )));
        }
        Ok(())
    }

    /// Renders the configuration in the file format; `parse_config` of the
    /// result reproduces `self` (apart from `output_dir`).
    pub fn to_config_text(&self) -> String {
        let w = &self.scene.waveform;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("f_start_hz", w.f_start.to_string());
        kv("bandwidth_hz", w.bandwidth.to_string());
        kv("chirp_duration_s", w.chirp_duration.to_string());
        kv("chirps_per_frame", w.chirps_per_frame.to_string());
        kv("fast_time_samples", w.fast_time_samples.to_string());
        kv("adc_sample_rate_hz", w.adc_sample_rate.to_string());
        kv("n_frames", w.n_frames.to_string());
        if let Some(snr) = self.scene.noise_snr_db {
            kv("noise_snr_db", snr.to_string());
        }
        kv("rng_seed", self.scene.rng_seed.to_string());
        for r in &self.scene.radars {
            kv(&format!("radar.{}.x_m", r.id), r.position_x.to_string());
            kv(&format!("radar.{}.d_m", r.id), r.plane_offset_d.to_string());
            kv(&format!("radar.{}.start_offset_s", r.id), r.start_offset.to_string());
        }
        for (i, t) in self.scene.targets.iter().enumerate() {
            let p = format!("target.{}", i + 1);
            kv(&format!("{p}.x_m"), t.position[0].to_string());
            kv(&format!("{p}.y_m"), t.position[1].to_string());
            kv(&format!("{p}.breath_hz"), t.breath_frequency.to_string());
            kv(&format!("{p}.amplitude_m"), t.breath_amplitude.to_string());
            kv(&format!("{p}.phase_rad"), t.breath_phase.to_string());
            kv(&format!("{p}.reflectivity"), t.reflectivity.to_string());
            kv(&format!("{p}.axis_x"), t.vibration_axis[0].to_string());
            kv(&format!("{p}.axis_y"), t.vibration_axis[1].to_string());
        }
        kv("window", self.window.name().to_string());
        kv("cfar.guard_cells", self.cfar.guard_cells.to_string());
        kv("cfar.training_cells", self.cfar.training_cells.to_string());
        kv("cfar.pfa", self.cfar.pfa.to_string());
        kv("cfar.peak_ratio", self.cfar.peak_ratio.to_string());
        kv("expansion", self.expansion.to_string());
        kv("band_lo_hz", self.band.0.to_string());
        kv("band_hi_hz", self.band.1.to_string());
        kv("gamma_th", self.association.gamma_th.to_string());
        kv("max_lag_s", self.association.max_lag.to_string());
        kv("lag_tolerance", self.association.lag_tolerance.to_string());
        kv("spectrum_lag_fraction", self.spectrum_lag_fraction.to_string());
        kv("zero_pad_factor", self.zero_pad_factor.to_string());
        kv("emit_intermediates", self.emit_intermediates.to_string());
        s
    }
}

struct Entry<'a> {
    value: &'a str,
    line: usize,
}

fn parse_value<T: FromStr>(key: &str, e: &Entry) -> Result<T> {
    e.value.parse().map_err(|_| Error::Syntax {
        line: e.line,
        message: format!("`{key}`: cannot parse `{}`", e.value),
    })
}

fn parse_bool(key: &str, e: &Entry) -> Result<bool> {
    match e.value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Syntax {
            line: e.line,
            message: format!("`{key}`: expected true or false, got `{}`", e.value),
        }),
    }
}

fn is_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

/// Splits the text into key/value entries, rejecting duplicates.
fn tokenize(text: &str) -> Result<Vec<(&str, Entry<'_>)>> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Syntax {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || !key.chars().all(is_key_char) {
            return Err(Error::Syntax {
                line,
                message: format!("invalid key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(Error::Syntax {
                line,
                message: format!("`{key}` has no value"),
            });
        }
        if let Some(&first) = seen.get(key) {
            return Err(Error::DuplicateKey {
                key: key.to_string(),
                first,
                second: line,
            });
        }
        seen.insert(key, line);
        entries.push((key, Entry { value, line }));
    }
    Ok(entries)
}

#[derive(Default)]
struct RadarKeys {
    x: Option<f64>,
    d: f64,
    start_offset: f64,
}

struct TargetKeys {
    x: Option<f64>,
    y: Option<f64>,
    model: TargetModel,
}

fn indexed<'k>(key: &'k str, prefix: &str, e: &Entry) -> Result<Option<(u32, &'k str)>> {
    let Some(rest) = key.strip_prefix(prefix) else {
        return Ok(None);
    };
    let (idx, field) = rest.split_once('.').ok_or_else(|| Error::Syntax {
        line: e.line,
        message: format!("`{key}`: expected `{prefix}N.field`"),
    })?;
    let idx: u32 = idx.parse().ok().filter(|&n| n >= 1).ok_or_else(|| Error::Syntax {
        line: e.line,
        message: format!("`{key}`: index must be an integer >= 1"),
    })?;
    Ok(Some((idx, field)))
}

fn unknown(key: &str, e: &Entry) -> Error {
    Error::Syntax {
        line: e.line,
        message: format!("unknown key `{key}`"),
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::desk_scale();
    let w = &mut cfg.scene.waveform;
    let mut duration: Option<(f64, usize)> = None;
    let mut n_frames: Option<(usize, usize)> = None;
    let mut radars: BTreeMap<u32, RadarKeys> = BTreeMap::new();
    let mut targets: BTreeMap<u32, TargetKeys> = BTreeMap::new();

    for (key, e) in tokenize(text)? {
        if let Some((id, field)) = indexed(key, "radar.", &e)? {
            let r = radars.entry(id).or_default();
            match field {
                "x_m" => r.x = Some(parse_value(key, &e)?),
                "d_m" => r.d = parse_value(key, &e)?,
                "start_offset_s" => r.start_offset = parse_value(key, &e)?,
                _ => return Err(unknown(key, &e)),
            }
            continue;
        }
        if let Some((id, field)) = indexed(key, "target.", &e)? {
            let t = targets.entry(id).or_insert_with(|| TargetKeys {
                x: None,
                y: None,
                model: TargetModel::new(0.0, 1.0, DEFAULT_BREATH_HZ),
            });
            match field {
                "x_m" => t.x = Some(parse_value(key, &e)?),
                "y_m" => t.y = Some(parse_value(key, &e)?),
                "breath_hz" => t.model.breath_frequency = parse_value(key, &e)?,
                "amplitude_m" => t.model.breath_amplitude = parse_value(key, &e)?,
                "phase_rad" => t.model.breath_phase = parse_value(key, &e)?,
                "reflectivity" => t.model.reflectivity = parse_value(key, &e)?,
                "axis_x" => t.model.vibration_axis[0] = parse_value(key, &e)?,
                "axis_y" => t.model.vibration_axis[1] = parse_value(key, &e)?,
                _ => return Err(unknown(key, &e)),
            }
            continue;
        }
        match key {
            "f_start_hz" => w.f_start = parse_value(key, &e)?,
            "bandwidth_hz" => w.bandwidth = parse_value(key, &e)?,
            "chirp_duration_s" => w.chirp_duration = parse_value(key, &e)?,
            "chirps_per_frame" => w.chirps_per_frame = parse_value(key, &e)?,
            "fast_time_samples" => w.fast_time_samples = parse_value(key, &e)?,
            "adc_sample_rate_hz" => w.adc_sample_rate = parse_value(key, &e)?,
            "duration_s" => duration = Some((parse_value(key, &e)?, e.line)),
            "n_frames" => n_frames = Some((parse_value(key, &e)?, e.line)),
            "noise_snr_db" => cfg.scene.noise_snr_db = Some(parse_value(key, &e)?),
            "rng_seed" => cfg.scene.rng_seed = parse_value(key, &e)?,
            "window" => {
                cfg.window = e.value.parse().map_err(|_| Error::Syntax {
                    line: e.line,
                    message: format!("`window`: expected rect or hann, got `{}`", e.value),
                })?
            }
            "cfar.guard_cells" => cfg.cfar.guard_cells = parse_value(key, &e)?,
            "cfar.training_cells" => cfg.cfar.training_cells = parse_value(key, &e)?,
            "cfar.pfa" => cfg.cfar.pfa = parse_value(key, &e)?,
            "cfar.peak_ratio" => cfg.cfar.peak_ratio = parse_value(key, &e)?,
            "expansion" => cfg.expansion = parse_value(key, &e)?,
            "band_lo_hz" => cfg.band.0 = parse_value(key, &e)?,
            "band_hi_hz" => cfg.band.1 = parse_value(key, &e)?,
            "gamma_th" => cfg.association.gamma_th = parse_value(key, &e)?,
            "max_lag_s" => cfg.association.max_lag = parse_value(key, &e)?,
            "lag_tolerance" => cfg.association.lag_tolerance = parse_value(key, &e)?,
            "spectrum_lag_fraction" => cfg.spectrum_lag_fraction = parse_value(key, &e)?,
            "zero_pad_factor" => cfg.zero_pad_factor = parse_value(key, &e)?,
            "emit_intermediates" => cfg.emit_intermediates = parse_bool(key, &e)?,
            _ => return Err(unknown(key, &e)),
        }
    }

    w.n_frames = match (duration, n_frames) {
        (Some((_, a)), Some((_, b))) => {
            return Err(Error::Config(format!(
                "duration_s (line {a}) and n_frames (line {b}) are mutually exclusive"
            )))
        }
        (None, Some((n, _))) => n,
        (Some((seconds, _)), None) => {
            if !(seconds > 0.0) || !seconds.is_finite() {
                return Err(Error::Config(format!("duration_s must be > 0 (got {seconds})")));
            }
            frames_checked(w, seconds)?
        }
        (None, None) => frames_checked(w, DEFAULT_DURATION_S)?,
    };

    if radars.is_empty() {
        return Err(Error::Config("no radars configured (radar.N.x_m)".into()));
    }
    cfg.scene.radars = radars
        .into_iter()
        .map(|(id, r)| {
            let x = r.x.ok_or_else(|| Error::Config(format!("radar.{id}.x_m is required")))?;
            Ok(RadarUnit {
                id,
                position_x: x,
                plane_offset_d: r.d,
                start_offset: r.start_offset,
            })
        })
        .collect::<Result<_>>()?;
    cfg.scene.targets = targets
        .into_iter()
        .map(|(id, t)| {
            let x = t.x.ok_or_else(|| Error::Config(format!("target.{id}.x_m is required")))?;
            let y = t.y.ok_or_else(|| Error::Config(format!("target.{id}.y_m is required")))?;
            Ok(TargetModel {
                position: [x, y],
                ..t.model
            })
        })
        .collect::<Result<_>>()?;
    cfg.validate()?;
    Ok(cfg)
}

fn frames_checked(w: &WaveformConfig, seconds: f64) -> Result<usize> {
    if !(w.chirp_duration > 0.0) || w.chirps_per_frame == 0 {
        w.validate()?;
    }
    Ok(w.frames_for_duration(seconds))
}
