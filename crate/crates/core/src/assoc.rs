//! Cross-radar respiration correlation, ghost suppression and two-circle
//! multilateration.
//!
//! Two radars on the baseline each report the ranges of every breathing
//! subject, but not which range belongs to whom. Every cross pairing of
//! ranges intersects somewhere, so `n` subjects yield `n^2` candidate
//! positions. A pairing is kept only if the respiration signals of its two
//! range bins correlate above `gamma_th`; pairings of different subjects
//! correlate weakly because independent breathing rhythms are uncorrelated.

use std::collections::BTreeMap;
use std::io::Write;

use crate::csvfmt::g9;
use crate::error::{Error, Result};
use crate::vital::RespSignal;

/// Pearson cross-correlation over a symmetric range of integer lags.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFunction {
    /// `(radar 1 bin, radar 2 bin)`.
    pub pair: (usize, usize),
    pub slow_rate: f64,
    /// Largest lag in samples; there are `2 * max_lag + 1` values.
    pub max_lag: usize,
    /// Value at lag `l` samples is `values[l + max_lag]`.
    pub values: Vec<f64>,
}

impl CorrelationFunction {
    pub fn lag_seconds(&self, lag: isize) -> f64 {
        lag as f64 / self.slow_rate
    }

    /// Lags in seconds, matching `values`.
    pub fn lags(&self) -> Vec<f64> {
        let m = self.max_lag as isize;
        (-m..=m).map(|l| self.lag_seconds(l)).collect()
    }

    pub fn at(&self, lag: isize) -> Option<f64> {
        let idx = lag + self.max_lag as isize;
        if idx < 0 {
            return None;
        }
        self.values.get(idx as usize).copied()
    }
}

/// Pearson correlation of `x[i]` with `y[i + lag]` over their overlap, for
/// every `lag` in `-max_lag..=max_lag`. Positive lag means `y` is delayed
/// relative to `x`.
pub fn xcorr_series(x: &[f64], y: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if variance(x) <= 0.0 || variance(y) <= 0.0 {
        return Err(Error::Degenerate("zero-variance input to correlation".into()));
    }
    let prefix = |s: &[f64]| {
        let mut p = Vec::with_capacity(s.len() + 1);
        let mut q = Vec::with_capacity(s.len() + 1);
        let (mut a, mut b) = (0.0, 0.0);
        p.push(0.0);
        q.push(0.0);
        for v in s {
            a += v;
            b += v * v;
            p.push(a);
            q.push(b);
        }
        (p, q)
    };
    let (px, qx) = prefix(x);
    let (py, qy) = prefix(y);
    let m = max_lag as isize;
    let (nx, ny) = (x.len() as isize, y.len() as isize);
    let mut out = Vec::with_capacity(2 * max_lag + 1);
    for lag in -m..=m {
        // Overlap: i in [lo, hi) with x[i], y[i + lag].
        let lo = 0.max(-lag);
        let hi = nx.min(ny - lag);
        if hi - lo < 2 {
            out.push(0.0);
            continue;
        }
        let (lo, hi) = (lo as usize, hi as usize);
        let (ylo, yhi) = ((lo as isize + lag) as usize, (hi as isize + lag) as usize);
        let n = (hi - lo) as f64;
        let sx = px[hi] - px[lo];
        let sy = py[yhi] - py[ylo];
        let sxx = qx[hi] - qx[lo];
        let syy = qy[yhi] - qy[ylo];
        let sxy: f64 = x[lo..hi].iter().zip(&y[ylo..yhi]).map(|(a, b)| a * b).sum();
        let cov = sxy - sx * sy / n;
        let vx = sxx - sx * sx / n;
        let vy = syy - sy * sy / n;
        let denom = (vx * vy).sqrt();
        let r = if denom > f64::EPSILON * (sxx * syy).sqrt() && denom > 0.0 {
            (cov / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        out.push(r);
    }
    Ok(out)
}

fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64
}

/// Lag-limited Pearson cross-correlation of two respiration signals.
pub fn normalized_xcorr(x: &RespSignal, y: &RespSignal, max_lag: f64) -> Result<CorrelationFunction> {
    if (x.slow_rate - y.slow_rate).abs() > 1e-9 * x.slow_rate {
        return Err(Error::InvalidInput(format!(
            "slow rates differ ({} vs {} Hz)",
            x.slow_rate, y.slow_rate
        )));
    }
    let duration = x.duration().min(y.duration());
    if !(max_lag >= 0.0 && max_lag < duration / 2.0) {
        return Err(Error::InvalidInput(format!(
            "max lag {max_lag} s must be below half the series duration ({duration} s)"
        )));
    }
    let max_lag = (max_lag * x.slow_rate).floor() as usize;
    Ok(CorrelationFunction {
        pair: (x.bin_index, y.bin_index),
        slow_rate: x.slow_rate,
        max_lag,
        values: xcorr_series(&x.displacement, &y.displacement, max_lag)?,
    })
}

/// Tie-break order: smaller `|lag|` first, then the negative lag.
fn nearer_zero(lag: isize, than: isize) -> bool {
    lag.abs() < than.abs() || (lag.abs() == than.abs() && lag < than)
}

/// Index of the dominant `|value|` among `candidates`, preferring the
/// smallest `|lag|` and then the negative lag on ties.
fn dominant<I>(candidates: I) -> Option<(isize, f64)>
where
    I: IntoIterator<Item = (isize, f64)>,
{
    let mut best: Option<(isize, f64)> = None;
    for (lag, v) in candidates {
        best = match best {
            None => Some((lag, v)),
            Some((bl, bv)) => {
                let better = v.abs() > bv.abs() || (v.abs() == bv.abs() && nearer_zero(lag, bl));
                if better {
                    Some((lag, v))
                } else {
                    Some((bl, bv))
                }
            }
        };
    }
    best
}

/// Lag of the largest value, preferring the smallest `|lag|` and then the
/// negative lag on ties.
fn strongest_positive(values: &[(isize, f64)]) -> isize {
    let mut best: (isize, f64) = (0, f64::NEG_INFINITY);
    for &(lag, v) in values {
        if v > best.1 || (v == best.1 && nearer_zero(lag, best.0)) {
            best = (lag, v);
        }
    }
    best.0
}

/// Dominant peak `(lag samples, value)` over all lags.
pub fn peak_lag_samples(corr: &CorrelationFunction) -> (isize, f64) {
    let m = corr.max_lag as isize;
    dominant((-m..=m).zip(corr.values.iter().copied())).unwrap_or((0, 0.0))
}

/// Dominant peak `(lag seconds, value)` over all lags.
pub fn peak_lag(corr: &CorrelationFunction) -> (f64, f64) {
    let (lag, v) = peak_lag_samples(corr);
    (corr.lag_seconds(lag), v)
}

/// Dominant peak restricted to `center ± half_width` samples.
pub fn peak_lag_near(corr: &CorrelationFunction, center: isize, half_width: usize) -> (isize, f64) {
    let m = corr.max_lag as isize;
    let w = half_width as isize;
    let lo = (center - w).max(-m);
    let hi = (center + w).min(m);
    dominant((lo..=hi).filter_map(|l| corr.at(l).map(|v| (l, v)))).unwrap_or((0, 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    /// Radar 1 range bin.
    pub m: usize,
    /// Radar 2 range bin.
    pub k: usize,
    pub range1: f64,
    pub range2: f64,
    pub peak_lag_samples: isize,
    pub peak_lag: f64,
    pub peak_value: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationSet {
    pub target_id: usize,
    pub pairs: Vec<PairResult>,
    /// `|peak_value|`-weighted mean range per radar.
    pub representative_ranges: (f64, f64),
    pub position: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationParams {
    /// Acceptance threshold on `|peak_value|`.
    pub gamma_th: f64,
    /// Lag search limit (s).
    pub max_lag: f64,
    /// Lag agreement tolerance (slow-time samples), used both around the
    /// common inter-radar lag and between members of one cluster.
    pub lag_tolerance: usize,
}

impl Default for AssociationParams {
    fn default() -> Self {
        AssociationParams {
            gamma_th: 0.3,
            max_lag: 5.0,
            lag_tolerance: 2,
        }
    }
}

impl AssociationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_th > 0.0 && self.gamma_th < 1.0) {
            return Err(Error::Config(format!(
                "gamma_th must lie in (0, 1) (got {})",
                self.gamma_th
            )));
        }
        if !(self.max_lag >= 0.0) || !self.max_lag.is_finite() {
            return Err(Error::Config(format!(
                "max_lag must be >= 0 (got {})",
                self.max_lag
            )));
        }
        Ok(())
    }
}

/// Everything produced by [`associate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    /// Every `(m, k)` pair in radar-1-bin, radar-2-bin order.
    pub pairs: Vec<PairResult>,
    pub sets: Vec<AssociationSet>,
    /// Common inter-radar lag (samples) the pair peaks were taken around.
    pub common_lag: isize,
    pub correlations: BTreeMap<(usize, usize), CorrelationFunction>,
}

/// Correlates every radar-1 signal with every radar-2 signal and groups the
/// accepted pairs into subjects.
///
/// The start-time offset between non-coherent radars is shared by all pairs,
/// while the per-pair correlation of a periodic breathing signal has a
/// `|R|` peak at every half period. The offset is therefore estimated once
/// as the lag maximising the signed sum `sum R_mk` over all pairs, and each
/// pair's dominant `|R|` peak is taken within `lag_tolerance` of it. Both
/// radars view a subject from the same side, so a true pair correlates
/// positively at the true lag and negatively half a period away, while the
/// full-period aliases of subjects with different rates do not line up.
///
/// Accepted pairs are clustered greedily in descending `|peak_value|`: a pair
/// joins every existing cluster with which it shares a bin and whose median
/// lag is within `lag_tolerance`, merging them; otherwise it starts a cluster.
pub fn associate(
    signals_r1: &[RespSignal],
    signals_r2: &[RespSignal],
    params: &AssociationParams,
) -> Result<Association> {
    params.validate()?;
    if signals_r1.is_empty() || signals_r2.is_empty() {
        return Err(Error::InvalidInput("both radars need at least one signal".into()));
    }
    let mut correlations = BTreeMap::new();
    for x in signals_r1 {
        for y in signals_r2 {
            let corr = normalized_xcorr(x, y, params.max_lag)?;
            correlations.insert((x.bin_index, y.bin_index), corr);
        }
    }
    let max_lag = correlations.values().next().map(|c| c.max_lag).unwrap_or(0);
    let m = max_lag as isize;
    let summed: Vec<(isize, f64)> = (-m..=m)
        .map(|lag| (lag, correlations.values().filter_map(|c| c.at(lag)).sum()))
        .collect();
    let common_lag = strongest_positive(&summed);

    let range_of = |signals: &[RespSignal], bin: usize| {
        signals.iter().find(|s| s.bin_index == bin).map(|s| s.range).unwrap_or(f64::NAN)
    };
    let pairs: Vec<PairResult> = correlations
        .iter()
        .map(|(&(mb, kb), corr)| {
            let (lag, value) = peak_lag_near(corr, common_lag, params.lag_tolerance);
            PairResult {
                m: mb,
                k: kb,
                range1: range_of(signals_r1, mb),
                range2: range_of(signals_r2, kb),
                peak_lag_samples: lag,
                peak_lag: corr.lag_seconds(lag),
                peak_value: value,
                accepted: value.abs() > params.gamma_th,
            }
        })
        .collect();

    let sets = cluster_pairs(&pairs, params.lag_tolerance);
    Ok(Association {
        pairs,
        sets,
        common_lag,
        correlations,
    })
}

fn median(values: &mut [isize]) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Groups accepted pairs into subjects (see [`associate`]).
pub fn cluster_pairs(pairs: &[PairResult], lag_tolerance: usize) -> Vec<AssociationSet> {
    let mut accepted: Vec<&PairResult> = pairs.iter().filter(|p| p.accepted).collect();
    accepted.sort_by(|a, b| {
        b.peak_value
            .abs()
            .total_cmp(&a.peak_value.abs())
            .then(a.m.cmp(&b.m))
            .then(a.k.cmp(&b.k))
    });

    let mut clusters: Vec<Vec<PairResult>> = Vec::new();
    for pair in accepted {
        let matching: Vec<usize> = clusters
            .iter()
            .enumerate()
            .filter(|(_, members)| {
                let shares = members.iter().any(|q| q.m == pair.m || q.k == pair.k);
                let mut lags: Vec<isize> = members.iter().map(|q| q.peak_lag_samples).collect();
                shares && (pair.peak_lag_samples as f64 - median(&mut lags)).abs() <= lag_tolerance as f64
            })
            .map(|(i, _)| i)
            .collect();
        match matching.split_first() {
            None => clusters.push(vec![pair.clone()]),
            Some((&first, rest)) => {
                for &i in rest.iter().rev() {
                    let moved = clusters.remove(i);
                    clusters[first].extend(moved);
                }
                clusters[first].push(pair.clone());
            }
        }
    }

    clusters
        .into_iter()
        .enumerate()
        .map(|(i, mut members)| {
            members.sort_by(|a, b| a.m.cmp(&b.m).then(a.k.cmp(&b.k)));
            let weight: f64 = members.iter().map(|p| p.peak_value.abs()).sum();
            let r1 = members.iter().map(|p| p.peak_value.abs() * p.range1).sum::<f64>() / weight;
            let r2 = members.iter().map(|p| p.peak_value.abs() * p.range2).sum::<f64>() / weight;
            AssociationSet {
                target_id: i + 1,
                pairs: members,
                representative_ranges: (r1, r2),
                position: None,
            }
        })
        .collect()
}

/// Radar baseline positions `a`, `b` on the x-axis and common plane offset `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub a: f64,
    pub b: f64,
    pub d: f64,
}

impl Geometry {
    pub fn new(a: f64, b: f64, d: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a == b {
            return Err(Error::Config(format!(
                "radar positions must be finite and distinct (a = {a}, b = {b})"
            )));
        }
        if !(d >= 0.0) || !d.is_finite() {
            return Err(Error::Config(format!("plane offset d must be >= 0 (got {d})")));
        }
        Ok(Geometry { a, b, d })
    }
}

/// Intersects the range circles `(x - a)^2 + y^2 + d^2 = r1^2` and
/// `(x - b)^2 + y^2 + d^2 = r2^2`, taking the `y > 0` branch.
pub fn multilaterate(geom: &Geometry, r1: f64, r2: f64) -> Result<[f64; 2]> {
    let Geometry { a, b, d } = *geom;
    if a == b {
        return Err(Error::Config("radar positions coincide".into()));
    }
    if !(r1.is_finite() && r2.is_finite()) {
        return Err(Error::Infeasible(format!("non-finite ranges ({r1}, {r2})")));
    }
    if r1 <= d || r2 <= d {
        return Err(Error::Infeasible(format!(
            "range ({r1}, {r2}) m does not exceed plane offset {d} m"
        )));
    }
    let x = (r1 * r1 - r2 * r2 + b * b - a * a) / (2.0 * (b - a));
    let radicand = r1 * r1 - d * d - (x - a) * (x - a);
    if radicand < 0.0 {
        return Err(Error::Infeasible(format!(
            "ranges ({r1}, {r2}) m do not intersect (radicand {radicand})"
        )));
    }
    Ok([x, radicand.sqrt()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub ranges: (f64, f64),
    /// `Err` holds the infeasibility reason.
    pub position: std::result::Result<[f64; 2], String>,
}

/// Multilaterates every cross pairing of the two range lists, keeping
/// infeasible pairings flagged. Radar-1 ranges vary slowest.
pub fn enumerate_candidates(geom: &Geometry, ranges_r1: &[f64], ranges_r2: &[f64]) -> Vec<Candidate> {
    ranges_r1
        .iter()
        .flat_map(|&r1| {
            ranges_r2.iter().map(move |&r2| Candidate {
                ranges: (r1, r2),
                position: multilaterate(geom, r1, r2).map_err(|e| e.to_string()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    /// Sets with a feasible position, renumbered from 1.
    pub targets: Vec<AssociationSet>,
    /// Sets dropped because their representative ranges do not intersect.
    pub dropped: Vec<(AssociationSet, String)>,
}

/// Positions every association set from its representative ranges.
pub fn resolve_targets(sets: &[AssociationSet], geom: &Geometry) -> Resolved {
    let mut targets = Vec::new();
    let mut dropped = Vec::new();
    for set in sets {
        let (r1, r2) = set.representative_ranges;
        match multilaterate(geom, r1, r2) {
            Ok(pos) => {
                let mut s = set.clone();
                s.position = Some(pos);
                s.target_id = targets.len() + 1;
                targets.push(s);
            }
            Err(e) => dropped.push((set.clone(), e.to_string())),
        }
    }
    Resolved { targets, dropped }
}

/// Pair grid CSV: `m,k,range1_m,range2_m,peak_lag_s,peak_value,accepted`.
pub fn write_pairs_csv<W: Write>(out: &mut W, pairs: &[PairResult]) -> std::io::Result<()> {
    writeln!(out, "m,k,range1_m,range2_m,peak_lag_s,peak_value,accepted")?;
    for p in pairs {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.m,
            p.k,
            g9(p.range1),
            g9(p.range2),
            g9(p.peak_lag),
            g9(p.peak_value),
            p.accepted
        )?;
    }
    Ok(())
}

/// Resolved positions CSV: `target_id,x_m,y_m,r1_m,r2_m`.
pub fn write_positions_csv<W: Write>(out: &mut W, targets: &[AssociationSet]) -> std::io::Result<()> {
    writeln!(out, "target_id,x_m,y_m,r1_m,r2_m")?;
    for t in targets {
        let [x, y] = t.position.unwrap_or([f64::NAN, f64::NAN]);
        writeln!(
            out,
            "{},{},{},{},{}",
            t.target_id,
            g9(x),
            g9(y),
            g9(t.representative_ranges.0),
            g9(t.representative_ranges.1)
        )?;
    }
    Ok(())
}
