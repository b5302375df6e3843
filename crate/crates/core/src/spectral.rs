//! Per-subject breathing rate from delay-compensated, averaged correlations.

use std::collections::BTreeMap;
use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::assoc::{normalized_xcorr, AssociationSet, CorrelationFunction};
use crate::csvfmt::g9;
use crate::error::{Error, Result};
use crate::range::hann;
use crate::vital::RespSignal;

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedAutocorrelation {
    pub target_id: usize,
    pub slow_rate: f64,
    /// Lag of `values[0]` in samples; lags increase by one sample.
    pub first_lag: isize,
    pub values: Vec<f64>,
    pub n_pairs: usize,
}

impl AveragedAutocorrelation {
    pub fn lags(&self) -> Vec<f64> {
        (0..self.values.len())
            .map(|i| (self.first_lag + i as isize) as f64 / self.slow_rate)
            .collect()
    }

    pub fn at(&self, lag: isize) -> Option<f64> {
        let idx = lag - self.first_lag;
        if idx < 0 {
            return None;
        }
        self.values.get(idx as usize).copied()
    }
}

/// Correlations of every member pair of `set`, computed out to `max_lag`
/// seconds. Longer lags than those used for association give the rate
/// spectrum its resolution.
pub fn member_correlations(
    set: &AssociationSet,
    signals_r1: &[RespSignal],
    signals_r2: &[RespSignal],
    max_lag: f64,
) -> Result<BTreeMap<(usize, usize), CorrelationFunction>> {
    let find = |signals: &[RespSignal], bin: usize| {
        signals
            .iter()
            .find(|s| s.bin_index == bin)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("no respiration signal for bin {bin}")))
    };
    let mut store = BTreeMap::new();
    for p in &set.pairs {
        let x = find(signals_r1, p.m)?;
        let y = find(signals_r2, p.k)?;
        store.insert((p.m, p.k), normalized_xcorr(&x, &y, max_lag)?);
    }
    Ok(store)
}

/// Mean over the set's pairs of `R(l + lag_p) / R(lag_p)`, where `lag_p` is
/// each pair's peak lag. Only lags inside every shifted support are kept.
pub fn averaged_autocorrelation(
    set: &AssociationSet,
    store: &BTreeMap<(usize, usize), CorrelationFunction>,
) -> Result<AveragedAutocorrelation> {
    if set.pairs.is_empty() {
        return Err(Error::InvalidInput(format!("target {} has no pairs", set.target_id)));
    }
    let mut members = Vec::with_capacity(set.pairs.len());
    for p in &set.pairs {
        let corr = store
            .get(&(p.m, p.k))
            .ok_or_else(|| Error::InvalidInput(format!("no correlation stored for pair ({}, {})", p.m, p.k)))?;
        let shift = p.peak_lag_samples;
        let peak = corr.at(shift).ok_or_else(|| {
            Error::InvalidInput(format!("peak lag {shift} outside stored correlation ({}, {})", p.m, p.k))
        })?;
        if peak == 0.0 {
            return Err(Error::Degenerate(format!("zero peak value for pair ({}, {})", p.m, p.k)));
        }
        members.push((corr, shift, peak));
    }
    let slow_rate = members[0].0.slow_rate;
    // Shifted support of a member: [-L - shift, L - shift].
    let lo = members.iter().map(|(c, s, _)| -(c.max_lag as isize) - s).max().unwrap();
    let hi = members.iter().map(|(c, s, _)| c.max_lag as isize - s).min().unwrap();
    let n = members.len() as f64;
    let values = (lo..=hi)
        .map(|l| {
            members
                .iter()
                .map(|(c, s, peak)| c.at(l + s).unwrap_or(0.0) / peak)
                .sum::<f64>()
                / n
        })
        .collect();
    Ok(AveragedAutocorrelation {
        target_id: set.target_id,
        slow_rate,
        first_lag: lo,
        values,
        n_pairs: members.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSpectrum {
    pub target_id: usize,
    /// In-band frequencies (Hz).
    pub frequencies: Vec<f64>,
    /// Spectral magnitude, scaled so the in-band maximum is 1.
    pub power: Vec<f64>,
    pub rate_bpm: f64,
    pub band: (f64, f64),
}

/// Hann-windowed, zero-padded transform of the averaged correlation; the
/// breathing rate is the in-band peak.
pub fn rate_spectrum(acorr: &AveragedAutocorrelation, band: (f64, f64), zero_pad_factor: usize) -> Result<RateSpectrum> {
    let fs = acorr.slow_rate;
    let (lo, hi) = band;
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::InvalidInput(format!(
            "band ({lo}, {hi}) Hz must lie within (0, {}) Hz",
            fs / 2.0
        )));
    }
    if zero_pad_factor < 1 {
        return Err(Error::InvalidInput("zero_pad_factor must be >= 1".into()));
    }
    let len = acorr.values.len();
    if len == 0 {
        return Err(Error::InvalidInput("empty autocorrelation".into()));
    }
    let n_fft = len * zero_pad_factor;
    let window = hann(len);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for ((b, v), w) in buf.iter_mut().zip(&acorr.values).zip(&window) {
        b.re = v * w;
    }
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);

    let df = fs / n_fft as f64;
    let first = (lo / df).ceil() as usize;
    let last = ((hi / df).floor() as usize).min(n_fft / 2);
    if first > last {
        return Err(Error::InvalidInput(format!(
            "band ({lo}, {hi}) Hz holds no spectral bin at {df} Hz spacing"
        )));
    }
    let frequencies: Vec<f64> = (first..=last).map(|k| k as f64 * df).collect();
    let mut power: Vec<f64> = (first..=last).map(|k| buf[k].norm()).collect();
    let (peak_idx, &peak) = power
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| if *cur.1 > *best.1 { cur } else { best });
    if !(peak > 0.0) {
        return Err(Error::Degenerate(format!(
            "target {} has no in-band spectral content",
            acorr.target_id
        )));
    }
    for p in power.iter_mut() {
        *p /= peak;
    }
    power[peak_idx] = 1.0;
    Ok(RateSpectrum {
        target_id: acorr.target_id,
        rate_bpm: 60.0 * frequencies[peak_idx],
        frequencies,
        power,
        band,
    })
}

/// Root-mean-square difference of paired rates (bpm).
pub fn rate_rmse(estimates: &[f64], references: &[f64]) -> Result<f64> {
    if estimates.len() != references.len() {
        return Err(Error::InvalidInput(format!(
            "{} estimates but {} references",
            estimates.len(),
            references.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidInput("no rates to compare".into()));
    }
    let sum: f64 = estimates.iter().zip(references).map(|(e, r)| (e - r) * (e - r)).sum();
    Ok((sum / estimates.len() as f64).sqrt())
}

/// Spectrum CSV: `frequency_hz,bpm,power`.
pub fn write_spectrum_csv<W: Write>(out: &mut W, spectrum: &RateSpectrum) -> std::io::Result<()> {
    writeln!(out, "frequency_hz,bpm,power")?;
    for (f, p) in spectrum.frequencies.iter().zip(&spectrum.power) {
        writeln!(out, "{},{},{}", g9(*f), g9(60.0 * f), g9(*p))?;
    }
    Ok(())
}

/// Averaged correlation CSV: `lag_s,value`.
pub fn write_autocorrelation_csv<W: Write>(out: &mut W, acorr: &AveragedAutocorrelation) -> std::io::Result<()> {
    writeln!(out, "lag_s,value")?;
    for (l, v) in acorr.lags().iter().zip(&acorr.values) {
        writeln!(out, "{},{}", g9(*l), g9(*v))?;
    }
    Ok(())
}

/// One summary row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSummary {
    pub target_id: usize,
    pub rate_bpm: f64,
    pub n_pairs: usize,
    pub position: [f64; 2],
}

/// Summary CSV: `target_id,rate_bpm,n_pairs,x_m,y_m`.
pub fn write_summary_csv<W: Write>(out: &mut W, rows: &[TargetSummary]) -> std::io::Result<()> {
    writeln!(out, "target_id,rate_bpm,n_pairs,x_m,y_m")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.target_id,
            g9(r.rate_bpm),
            r.n_pairs,
            g9(r.position[0]),
            g9(r.position[1])
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::PairResult;
    use crate::vital::RESPIRATION_BAND;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    const FS: f64 = 48.828125;

    fn pair(m: usize, k: usize, lag: isize) -> PairResult {
        PairResult {
            m,
            k,
            range1: 1.0,
            range2: 1.2,
            peak_lag_samples: lag,
            peak_lag: lag as f64 / FS,
            peak_value: 0.9,
            accepted: true,
        }
    }

    fn set(pairs: Vec<PairResult>) -> AssociationSet {
        AssociationSet {
            target_id: 1,
            pairs,
            representative_ranges: (1.0, 1.2),
            position: None,
        }
    }

    fn corr(pair: (usize, usize), max_lag: usize, f: impl Fn(isize) -> f64) -> CorrelationFunction {
        let m = max_lag as isize;
        CorrelationFunction {
            pair,
            slow_rate: FS,
            max_lag,
            values: (-m..=m).map(f).collect(),
        }
    }

    fn cosine_acorr(freq: f64, half: isize) -> AveragedAutocorrelation {
        AveragedAutocorrelation {
            target_id: 1,
            slow_rate: FS,
            first_lag: -half,
            values: (-half..=half).map(|l| (2.0 * PI * freq * l as f64 / FS).cos()).collect(),
            n_pairs: 1,
        }
    }

    #[test]
    fn single_member_is_recentred() {
        let c = corr((10, 12), 50, |l| 0.8 * (-((l - 7) as f64).powi(2) / 40.0).exp());
        let store = BTreeMap::from([((10, 12), c.clone())]);
        let a = averaged_autocorrelation(&set(vec![pair(10, 12, 7)]), &store).unwrap();
        assert_eq!(a.first_lag, -57);
        assert_eq!(a.values.len(), 101);
        assert_eq!(a.at(0), Some(1.0));
        for l in -57..=43 {
            assert!((a.at(l).unwrap() - c.at(l + 7).unwrap() / 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_members_average_to_either() {
        let c = corr((0, 0), 30, |l| (l as f64 * 0.2).cos() * 0.7);
        let mut c2 = c.clone();
        c2.pair = (1, 1);
        let store = BTreeMap::from([((0, 0), c.clone()), ((1, 1), c2)]);
        let two = averaged_autocorrelation(&set(vec![pair(0, 0, -3), pair(1, 1, -3)]), &store).unwrap();
        let one = averaged_autocorrelation(&set(vec![pair(0, 0, -3)]), &store).unwrap();
        assert_eq!(two.n_pairs, 2);
        assert_eq!(two.first_lag, one.first_lag);
        for (a, b) in two.values.iter().zip(&one.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn support_is_intersection_of_shifts() {
        let store = BTreeMap::from([
            ((0, 0), corr((0, 0), 20, |l| 1.0 - (l as f64 / 40.0).abs())),
            ((1, 1), corr((1, 1), 20, |l| 1.0 - (l as f64 / 40.0).abs())),
        ]);
        let a = averaged_autocorrelation(&set(vec![pair(0, 0, 3), pair(1, 1, -2)]), &store).unwrap();
        // Supports [-23, 17] and [-18, 22].
        assert_eq!(a.first_lag, -18);
        assert_eq!(a.values.len(), 36);
        assert_eq!(a.at(0), Some(1.0));
    }

    #[test]
    fn negative_peak_normalizes_with_its_sign() {
        let store = BTreeMap::from([((0, 0), corr((0, 0), 10, |l| -0.6 * (l as f64 * 0.3).cos()))]);
        let a = averaged_autocorrelation(&set(vec![pair(0, 0, 0)]), &store).unwrap();
        assert_eq!(a.at(0), Some(1.0));
        assert!((a.at(1).unwrap() - 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn averaging_errors() {
        let store = BTreeMap::from([((0, 0), corr((0, 0), 10, |l| if l == 2 { 0.0 } else { 0.5 }))]);
        assert!(averaged_autocorrelation(&set(vec![]), &store).is_err());
        assert!(matches!(
            averaged_autocorrelation(&set(vec![pair(0, 0, 2)]), &store),
            Err(Error::Degenerate(_))
        ));
        assert!(averaged_autocorrelation(&set(vec![pair(1, 1, 0)]), &store).is_err());
        assert!(averaged_autocorrelation(&set(vec![pair(0, 0, 11)]), &store).is_err());
    }

    #[test]
    fn sinusoid_rates() {
        // 24 s of one-sided lag, as used for 60 s recordings.
        let half = (24.0 * FS) as isize;
        for (freq, bpm) in [(0.35, 21.0), (0.40, 24.0)] {
            let s = rate_spectrum(&cosine_acorr(freq, half), RESPIRATION_BAND, 8).unwrap();
            let native_bin = 60.0 * FS / (2 * half + 1) as f64;
            assert!((s.rate_bpm - bpm).abs() <= native_bin, "{} vs {bpm}", s.rate_bpm);
            assert!((s.rate_bpm - bpm).abs() < 0.2, "{} vs {bpm}", s.rate_bpm);
        }
    }

    #[test]
    fn two_tone_peak_picks_stronger_line() {
        let half = (24.0 * FS) as isize;
        let mut a = cosine_acorr(0.35, half);
        for (v, l) in a.values.iter_mut().zip(-half..) {
            *v += 0.5 * (2.0 * PI * 0.4 * l as f64 / FS).cos();
        }
        let s = rate_spectrum(&a, RESPIRATION_BAND, 8).unwrap();
        assert!((s.rate_bpm - 21.0).abs() < 0.2);
    }

    #[test]
    fn spectrum_preconditions() {
        let a = cosine_acorr(0.3, 100);
        assert!(rate_spectrum(&a, (0.0, 0.7), 8).is_err());
        assert!(rate_spectrum(&a, (0.7, 0.1), 8).is_err());
        assert!(rate_spectrum(&a, (0.1, 30.0), 8).is_err());
        assert!(rate_spectrum(&a, (0.1, 0.7), 0).is_err());
        // 201 samples at 48.8 Hz: 0.243 Hz bin spacing, none in [0.3, 0.4].
        assert!(rate_spectrum(&a, (0.3, 0.4), 1).is_err());
        let s = rate_spectrum(&a, (0.1, 0.7), 1).unwrap();
        assert_eq!(s.frequencies.len(), s.power.len());
        assert!(s.frequencies.iter().all(|f| (0.1..=0.7).contains(f)));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rate_rmse(&[12.0, 20.0], &[12.0, 20.0]).unwrap(), 0.0);
        assert_eq!(rate_rmse(&[13.0], &[12.0]).unwrap(), 1.0);
        assert!(rate_rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rate_rmse(&[], &[]).is_err());
        // Reported measurement/reference pairs of two subjects in four postures.
        let measured = [12.7, 15.8, 13.9, 17.4, 13.8, 12.6, 13.6, 13.6];
        let reference = [12.2, 15.0, 13.0, 17.1, 14.5, 13.0, 14.1, 12.9];
        // Oracle: squared differences sum to 3.18 over 8 pairs.
        let expected = (3.18f64 / 8.0).sqrt();
        let rmse = rate_rmse(&measured, &reference).unwrap();
        assert!((rmse - expected).abs() < 1e-12);
        assert!((rmse - 0.630476).abs() < 1e-6);
    }

    #[test]
    fn csv_layouts() {
        let s = RateSpectrum {
            target_id: 1,
            frequencies: vec![0.35],
            power: vec![1.0],
            rate_bpm: 21.0,
            band: RESPIRATION_BAND,
        };
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "frequency_hz,bpm,power\n0.35,21,1\n");
        let mut buf = Vec::new();
        write_summary_csv(
            &mut buf,
            &[TargetSummary {
                target_id: 2,
                rate_bpm: 24.0,
                n_pairs: 1,
                position: [1.12, 1.03],
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "target_id,rate_bpm,n_pairs,x_m,y_m\n2,24,1,1.12,1.03\n"
        );
    }

    /// Mean squared deviation of the averaged correlation from the clean one
    /// when each member carries independent noise.
    fn averaging_error(n_members: usize, trials: u64) -> f64 {
        let clean = |l: isize| (2.0 * PI * 0.3 * l as f64 / FS).cos();
        let mut total = 0.0;
        for t in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(t);
            let mut store = BTreeMap::new();
            let mut pairs = Vec::new();
            for i in 0..n_members {
                let noise: Vec<f64> = (0..201).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut c = corr((i, i), 100, |l| clean(l));
                for (v, e) in c.values.iter_mut().zip(&noise) {
                    *v += 0.2 * e;
                }
                c.values[100] = 1.0;
                store.insert((i, i), c);
                pairs.push(pair(i, i, 0));
            }
            let a = averaged_autocorrelation(&set(pairs), &store).unwrap();
            total += a
                .values
                .iter()
                .zip(-100..)
                .map(|(v, l)| (v - clean(l)).powi(2))
                .sum::<f64>()
                / a.values.len() as f64;
        }
        total / trials as f64
    }

    #[test]
    fn averaging_reduces_variance() {
        let errors: Vec<f64> = (1..=5).map(|n| averaging_error(n, 40)).collect();
        for w in errors.windows(2) {
            assert!(w[1] < w[0], "{errors:?}");
        }
    }

    proptest! {
        #[test]
        fn spectrum_max_is_one(seed in 0u64..500, len in 64usize..600, pad in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = AveragedAutocorrelation { target_id: 1, slow_rate: FS, first_lag: 0, values, n_pairs: 1 };
            let df = FS / (len * pad) as f64;
            let resolvable = (1..).map(|i| i as f64 * df).take_while(|f| *f <= RESPIRATION_BAND.1)
                .any(|f| f >= RESPIRATION_BAND.0);
            if !resolvable {
                prop_assert!(matches!(rate_spectrum(&a, RESPIRATION_BAND, pad), Err(Error::InvalidInput(_))));
                return Ok(());
            }
            let s = rate_spectrum(&a, RESPIRATION_BAND, pad).unwrap();
            let max = s.power.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(max, 1.0);
            prop_assert!(s.power.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!(s.rate_bpm >= 6.0 && s.rate_bpm <= 42.0);
        }

        #[test]
        fn averaged_value_at_zero_is_one(
            seed in 0u64..500,
            shifts in proptest::collection::vec(-20isize..20, 1..5),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = BTreeMap::new();
            let mut pairs = Vec::new();
            for (i, &s) in shifts.iter().enumerate() {
                let mut c = corr((i, i), 40, |_| 0.0);
                for v in c.values.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                store.insert((i, i), c);
                pairs.push(pair(i, i, s));
            }
            let a = averaged_autocorrelation(&set(pairs), &store).unwrap();
            prop_assert_eq!(a.at(0), Some(1.0));
            prop_assert!(a.values.iter().all(|v| v.is_finite()));
        }
    }
}
