//! Slow-time phase extraction and respiration displacement signals.

use std::f64::consts::PI;
use std::io::Write;

use crate::csvfmt::g9;
use crate::error::{Error, Result};
use crate::range::RangeTimeMap;
use crate::scene::SPEED_OF_LIGHT;

/// Default respiration band (Hz), 6 to 42 breaths per minute.
pub const RESPIRATION_BAND: (f64, f64) = (0.1, 0.7);

/// Displacement signal of one range bin of one radar.
#[derive(Debug, Clone, PartialEq)]
pub struct RespSignal {
    pub radar_id: u32,
    pub bin_index: usize,
    pub range: f64,
    /// Band-limited radial displacement (m), one sample per frame.
    pub displacement: Vec<f64>,
    pub slow_rate: f64,
    pub start_offset: f64,
}

impl RespSignal {
    pub fn duration(&self) -> f64 {
        self.displacement.len() as f64 / self.slow_rate
    }
}

/// Unwraps `phase` in place so successive differences lie in `(-pi, pi]`.
pub fn unwrap_phase(phase: &mut [f64]) {
    if phase.is_empty() {
        return;
    }
    let mut prev_raw = phase[0];
    let mut prev_out = phase[0];
    for p in phase.iter_mut().skip(1) {
        let raw = *p;
        let mut d = (raw - prev_raw + PI).rem_euclid(2.0 * PI) - PI;
        if d == -PI {
            d = PI;
        }
        prev_out += d;
        prev_raw = raw;
        *p = prev_out;
    }
}

/// Unwrapped slow-time phase of `bin`.
pub fn extract_phase(map: &RangeTimeMap, bin: usize) -> Result<Vec<f64>> {
    let mut phase: Vec<f64> = map.column(bin)?.iter().map(|v| v.arg()).collect();
    unwrap_phase(&mut phase);
    Ok(phase)
}

/// Removes the least-squares line (and hence the mean) from `x`.
pub fn detrend(x: &mut [f64]) {
    let n = x.len();
    if n == 0 {
        return;
    }
    if n == 1 {
        x[0] = 0.0;
        return;
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let x_mean = x.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (v - x_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    for (i, v) in x.iter_mut().enumerate() {
        *v -= x_mean + slope * (i as f64 - t_mean);
    }
}

/// Radial displacement (m) per radian of slow-time phase, `c / (4 pi f_c)`.
pub fn displacement_per_radian(center_frequency: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * PI * center_frequency)
}

/// Converts phase (rad) to radial displacement (m) via `d = phase * c / (4 pi f_c)`,
/// then removes mean and linear trend.
pub fn phase_to_displacement(phase: &[f64], center_frequency: f64) -> Result<Vec<f64>> {
    if !(center_frequency > 0.0) {
        return Err(Error::InvalidInput(format!(
            "centre frequency must be > 0 (got {center_frequency})"
        )));
    }
    let scale = displacement_per_radian(center_frequency);
    let mut out: Vec<f64> = phase.iter().map(|p| p * scale).collect();
    detrend(&mut out);
    Ok(out)
}

/// Second-order section in transposed direct form II, `a0` normalized to 1.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos) / 2.0;
        Biquad {
            b: [b0 / a0, 2.0 * b0 / a0, b0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(cutoff: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 + cos) / 2.0;
        Biquad {
            b: [b0 / a0, -2.0 * b0 / a0, b0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Runs the section over `x` in place, starting from the steady state for
    /// a constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let y_ss = self.dc_gain() * first;
        let mut z2 = self.b[2] * first - self.a[1] * y_ss;
        let mut z1 = self.b[1] * first - self.a[0] * y_ss + z2;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + z1;
            z1 = self.b[1] * input - self.a[0] * y + z2;
            z2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

/// Fourth-order Butterworth Q values for the two cascaded sections.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_4];

/// Zero-phase band-pass: fourth-order Butterworth high-pass at `band.0` and
/// low-pass at `band.1`, applied forward and backward.
#[derive(Debug, Clone)]
pub struct BandPass {
    sections: Vec<Biquad>,
    pad: usize,
}

impl BandPass {
    pub fn new(band: (f64, f64), sample_rate: f64) -> Result<Self> {
        let (lo, hi) = band;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidInput(format!("invalid band ({lo}, {hi}) Hz")));
        }
        if !(sample_rate > 2.0 * hi) {
            return Err(Error::InvalidInput(format!(
                "sample rate {sample_rate} Hz must exceed twice the upper band edge {hi} Hz"
            )));
        }
        let mut sections = Vec::with_capacity(4);
        for q in BUTTER4_Q {
            sections.push(Biquad::highpass(lo, sample_rate, q));
        }
        for q in BUTTER4_Q {
            sections.push(Biquad::lowpass(hi, sample_rate, q));
        }
        Ok(BandPass {
            sections,
            pad: (sample_rate / lo).ceil() as usize,
        })
    }

    /// Settling length (samples): one period of the lower band edge. Inputs
    /// must be longer than this.
    pub fn transient_len(&self) -> usize {
        self.pad
    }

    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let n = signal.len();
        if n <= self.pad {
            return Err(Error::InvalidInput(format!(
                "series of {n} samples is shorter than the filter transient ({} samples)",
                self.pad
            )));
        }
        let pad = self.pad;
        // Odd reflection about both end points.
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * signal[0] - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * signal[n - 1] - signal[n - 1 - i]));

        for s in &self.sections {
            s.run(&mut ext);
        }
        ext.reverse();
        for s in &self.sections {
            s.run(&mut ext);
        }
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }
}

/// Zero-phase respiration band-pass of `signal` sampled at `slow_rate`.
pub fn bandpass_respiration(signal: &[f64], slow_rate: f64, band: (f64, f64)) -> Result<Vec<f64>> {
    BandPass::new(band, slow_rate)?.apply(signal)
}

/// Phase, displacement and band-pass for one range bin.
pub fn respiration_signal(map: &RangeTimeMap, bin: usize, band: (f64, f64)) -> Result<RespSignal> {
    let phase = extract_phase(map, bin)?;
    let displacement = phase_to_displacement(&phase, map.center_frequency)?;
    let displacement = bandpass_respiration(&displacement, map.slow_rate, band)?;
    Ok(RespSignal {
        radar_id: map.radar_id,
        bin_index: bin,
        range: map.range_of(bin),
        displacement,
        slow_rate: map.slow_rate,
        start_offset: map.start_offset,
    })
}

/// One radar's respiration signals as CSV: `time_s` then one displacement
/// column (m) per signal, headed by its range (m).
pub fn write_resp_csv<W: Write>(out: &mut W, signals: &[RespSignal]) -> std::io::Result<()> {
    write!(out, "time_s")?;
    for s in signals {
        write!(out, ",{}", g9(s.range))?;
    }
    writeln!(out)?;
    let Some(first) = signals.first() else {
        return Ok(());
    };
    let len = signals.iter().map(|s| s.displacement.len()).min().unwrap_or(0);
    for i in 0..len {
        write!(out, "{}", g9(i as f64 / first.slow_rate))?;
        for s in signals {
            write!(out, ",{}", g9(s.displacement[i]))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    const FS: f64 = 48.828125;

    fn map_from_column(col: &[Complex64]) -> RangeTimeMap {
        RangeTimeMap {
            radar_id: 1,
            values: col.to_vec(),
            n_bins: 1,
            bin_spacing: 0.1,
            slow_rate: FS,
            start_offset: 0.0,
            center_frequency: 60.75e9,
        }
    }

    fn tone(freq: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    /// Single-bin DFT magnitude, used as an oracle for tone levels.
    fn dft_amplitude(x: &[f64], freq: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * i as f64 / FS;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn constant_column_gives_constant_phase() {
        let map = map_from_column(&vec![Complex64::from_polar(2.0, 1.2); 50]);
        let phase = extract_phase(&map, 0).unwrap();
        assert!(phase.iter().all(|p| (p - 1.2).abs() < 1e-12));
        assert!(matches!(extract_phase(&map, 1), Err(Error::Index { .. })));
    }

    #[test]
    fn ramp_unwraps_to_continuous_phase() {
        let n = 400;
        let truth: Vec<f64> = (0..n).map(|i| 4.0 * PI * i as f64 / (n - 1) as f64).collect();
        let col: Vec<Complex64> = truth.iter().map(|&t| Complex64::from_polar(1.0, t)).collect();
        let phase = extract_phase(&map_from_column(&col), 0).unwrap();
        for (p, t) in phase.iter().zip(&truth) {
            assert!((p - t).abs() < 1e-9);
        }
        assert!(phase.windows(2).all(|w| (w[1] - w[0]).abs() < PI));
    }

    #[test]
    fn displacement_examples() {
        let fc = 60.75e9;
        // 4 pi fc * 0.01 / c
        let step = 4.0 * PI * fc * 0.01 / SPEED_OF_LIGHT;
        assert!((step - 25.4645).abs() < 1e-3);
        // Symmetric pulse: detrending removes only the mean.
        let d = phase_to_displacement(&[0.0, step, 0.0], fc).unwrap();
        assert!(((d[1] - d[0]) - 0.01).abs() < 1e-12);
        assert!((displacement_per_radian(fc) * step - 0.01).abs() < 1e-15);

        let z = phase_to_displacement(&[0.0; 10], fc).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));

        let lambda = SPEED_OF_LIGHT / fc;
        let d = phase_to_displacement(&[0.0, 2.0 * PI, 0.0], fc).unwrap();
        assert!(((d[1] - d[0]) - lambda / 2.0).abs() < 1e-15);

        assert!(phase_to_displacement(&[1.0], 0.0).is_err());
    }

    #[test]
    fn bandpass_preserves_in_band_tone() {
        let x = tone(0.35, 1.0, 2930);
        let y = bandpass_respiration(&x, FS, RESPIRATION_BAND).unwrap();
        let ratio = dft_amplitude(&y, 0.35) / dft_amplitude(&x, 0.35);
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
        let mid = &y[500..2400];
        let peak = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.05, "{peak}");
    }

    #[test]
    fn bandpass_rejects_dc() {
        let y = bandpass_respiration(&vec![3.0; 2930], FS, RESPIRATION_BAND).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-6), "{:?}", &y[..4]);
    }

    #[test]
    fn bandpass_attenuates_out_of_band_tone() {
        let x: Vec<f64> = tone(0.35, 1.0, 2930)
            .iter()
            .zip(tone(5.0, 1.0, 2930))
            .map(|(a, b)| a + b)
            .collect();
        let y = bandpass_respiration(&x, FS, RESPIRATION_BAND).unwrap();
        let before = dft_amplitude(&x, 5.0);
        let after = dft_amplitude(&y, 5.0);
        let atten_db = 20.0 * (before / after).log10();
        assert!(atten_db >= 20.0, "{atten_db} dB");
    }

    #[test]
    fn bandpass_rejects_short_series_and_bad_band() {
        let bp = BandPass::new(RESPIRATION_BAND, FS).unwrap();
        assert_eq!(bp.transient_len(), 489);
        assert!(bp.apply(&vec![0.0; 489]).is_err());
        assert!(bp.apply(&vec![0.0; 490]).is_ok());
        assert!(BandPass::new((0.1, 0.7), 1.2).is_err());
        assert!(BandPass::new((0.7, 0.1), FS).is_err());
    }

    #[test]
    fn resp_csv_layout() {
        let s = RespSignal {
            radar_id: 1,
            bin_index: 10,
            range: 0.999308193,
            displacement: vec![0.0, 0.001, -0.001],
            slow_rate: 2.0,
            start_offset: 0.0,
        };
        let mut buf = Vec::new();
        write_resp_csv(&mut buf, &[s.clone(), RespSignal { range: 1.2, ..s }]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time_s,0.999308193,1.2\n0,0,0\n0.5,0.001,0.001\n1,-0.001,-0.001\n"
        );
    }

    proptest! {
        #[test]
        fn unwrap_differences_stay_in_half_open_interval(
            steps in proptest::collection::vec(-20.0f64..20.0, 1..200),
        ) {
            let mut raw: Vec<f64> = steps.iter().scan(0.0, |acc, s| { *acc += s; Some(*acc) }).collect();
            let wrapped: Vec<f64> = raw.iter().map(|p| Complex64::from_polar(1.0, *p).arg()).collect();
            raw.copy_from_slice(&wrapped);
            unwrap_phase(&mut raw);
            for w in raw.windows(2) {
                let d = w[1] - w[0];
                prop_assert!(d > -PI - 1e-9 && d <= PI + 1e-9, "diff {}", d);
            }
            // Unwrapping never changes the wrapped value.
            for (u, w) in raw.iter().zip(&wrapped) {
                let back = Complex64::from_polar(1.0, *u).arg();
                prop_assert!((Complex64::from_polar(1.0, back) - Complex64::from_polar(1.0, *w)).norm() < 1e-6);
            }
        }

        #[test]
        fn displacement_round_trip(
            amp in 1e-4f64..0.02,
            freq in 0.1f64..0.7,
            phase0 in -3.0f64..3.0,
            n in 50usize..500,
        ) {
            let fc = 60.75e9;
            let k = 4.0 * PI * fc / SPEED_OF_LIGHT;
            let truth: Vec<f64> = (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / FS + phase0).sin()).collect();
            let phase: Vec<f64> = truth.iter().map(|d| k * d).collect();
            let got = phase_to_displacement(&phase, fc).unwrap();
            let mut expected = truth.clone();
            detrend(&mut expected);
            for (g, e) in got.iter().zip(&expected) {
                prop_assert!((g - e).abs() <= 1e-9 * amp);
            }
        }
    }
}
