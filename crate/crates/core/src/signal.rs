//! Conditioning of timestamped multichannel streams: exponential
//! smoothing, cross-correlation lag search and linear resampling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("series is empty")]
    Empty,
    #[error("filter weight must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("target time {t} outside source span [{first}, {last}]")]
    Extrapolation { t: f64, first: f64, last: f64 },
    #[error("overlap of {overlap_s:.3} s is shorter than 10x max lag {max_lag_s} s")]
    InsufficientOverlap { overlap_s: f64, max_lag_s: f64 },
    #[error("correlation peak {peak:.3} below 0.2, lag estimate unreliable")]
    UnreliableLag { peak: f64 },
    #[error("channel {channel} out of range for {channels}-channel series")]
    NoSuchChannel { channel: usize, channels: usize },
}

/// Samples on strictly increasing timestamps, `channels` values each,
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedSeries {
    timestamps: Vec<f64>,
    values: Vec<f64>,
    channels: usize,
}

impl TimedSeries {
    pub fn new(timestamps: Vec<f64>, values: Vec<f64>, channels: usize) -> Result<Self, SignalError> {
        if channels == 0 {
            return Err(SignalError::InvalidSeries("need at least one channel".into()));
        }
        if values.len() != timestamps.len() * channels {
            return Err(SignalError::InvalidSeries(format!(
                "{} values for {} timestamps x {} channels",
                values.len(),
                timestamps.len(),
                channels
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(SignalError::InvalidSeries(format!(
                "timestamps not strictly increasing at index {} ({} then {})",
                i + 1,
                timestamps[i],
                timestamps[i + 1]
            )));
        }
        if timestamps.iter().any(|t| !t.is_finite()) {
            return Err(SignalError::InvalidSeries("non-finite timestamp".into()));
        }
        Ok(Self { timestamps, values, channels })
    }

    pub fn from_rows<const N: usize>(timestamps: Vec<f64>, rows: &[[f64; N]]) -> Result<Self, SignalError> {
        Self::new(timestamps, rows.iter().flatten().copied().collect(), N)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.channels)
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(c).step_by(self.channels).copied()
    }

    pub fn first_time(&self) -> Option<f64> {
        self.timestamps.first().copied()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.timestamps.last().copied()
    }

    /// Mean sample rate over the series span.
    pub fn mean_rate(&self) -> Option<f64> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        Some((n - 1) as f64 / (self.timestamps[n - 1] - self.timestamps[0]))
    }

    /// Same values with every timestamp moved by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            timestamps: self.timestamps.iter().map(|t| t + dt).collect(),
            values: self.values.clone(),
            channels: self.channels,
        }
    }
}

/// `y₀ = x₀`, `yₜ = α·xₜ + (1 − α)·yₜ₋₁`, per channel. `alpha` weights the
/// newest sample.
pub fn exponential_filter(s: &TimedSeries, alpha: f64) -> Result<TimedSeries, SignalError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SignalError::InvalidAlpha(alpha));
    }
    if s.is_empty() {
        return Err(SignalError::Empty);
    }
    if alpha == 1.0 {
        return Ok(s.clone());
    }
    let n = s.channels;
    let mut out = Vec::with_capacity(s.values.len());
    out.extend_from_slice(s.row(0));
    for i in 1..s.len() {
        for c in 0..n {
            let prev = out[(i - 1) * n + c];
            // prev + α(x − prev): exact on constant input
            out.push(prev + alpha * (s.values[i * n + c] - prev));
        }
    }
    Ok(TimedSeries { timestamps: s.timestamps.clone(), values: out, channels: n })
}

/// Linear interpolation of every channel at `target_ts`. Targets must lie
/// within the source span.
pub fn resample_linear(s: &TimedSeries, target_ts: &[f64]) -> Result<TimedSeries, SignalError> {
    if s.is_empty() {
        return Err(SignalError::Empty);
    }
    let ts = &s.timestamps;
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    let n = s.channels;
    let mut values = Vec::with_capacity(target_ts.len() * n);
    for &t in target_ts {
        if !(t >= first && t <= last) {
            return Err(SignalError::Extrapolation { t, first, last });
        }
        let i = ts.partition_point(|&x| x <= t);
        if i == 0 || ts[i - 1] == t {
            let k = if i == 0 { 0 } else { i - 1 };
            values.extend_from_slice(s.row(k));
            continue;
        }
        let (t0, t1) = (ts[i - 1], ts[i]);
        let u = (t - t0) / (t1 - t0);
        let (r0, r1) = (s.row(i - 1), s.row(i));
        values.extend((0..n).map(|c| r0[c] + u * (r1[c] - r0[c])));
    }
    TimedSeries::new(target_ts.to_vec(), values, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    /// Positive when `b` trails `a`.
    pub lag_s: f64,
    pub shift_samples: i64,
    pub peak_correlation: f64,
    /// Spacing of the common grid the search ran on.
    pub resample_period_s: f64,
}

/// Lag between channel 0 of `a` and channel 0 of `b`.
pub fn estimate_lag(a: &TimedSeries, b: &TimedSeries, max_lag_s: f64) -> Result<LagEstimate, SignalError> {
    estimate_lag_channels(a, 0, b, 0, max_lag_s)
}

/// Resamples both channels onto a uniform grid at the higher of the two
/// mean rates over their common span, then picks the integer shift with
/// the largest normalized cross-correlation of the mean-removed signals.
pub fn estimate_lag_channels(
    a: &TimedSeries,
    channel_a: usize,
    b: &TimedSeries,
    channel_b: usize,
    max_lag_s: f64,
) -> Result<LagEstimate, SignalError> {
    for (s, c) in [(a, channel_a), (b, channel_b)] {
        if c >= s.channels {
            return Err(SignalError::NoSuchChannel { channel: c, channels: s.channels });
        }
        if s.len() < 2 {
            return Err(SignalError::Empty);
        }
    }
    if !(max_lag_s >= 0.0) {
        return Err(SignalError::InvalidSeries(format!("max lag must be non-negative, got {max_lag_s}")));
    }
    let start = a.timestamps[0].max(b.timestamps[0]);
    let end = a.timestamps[a.len() - 1].min(b.timestamps[b.len() - 1]);
    let overlap_s = end - start;
    if !(overlap_s > 0.0) || overlap_s < 10.0 * max_lag_s {
        return Err(SignalError::InsufficientOverlap { overlap_s: overlap_s.max(0.0), max_lag_s });
    }
    let rate = a.mean_rate().unwrap().max(b.mean_rate().unwrap());
    let period = 1.0 / rate;
    let n = (overlap_s * rate + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|k| (start + k as f64 * period).min(end)).collect();

    let pick = |s: &TimedSeries, c: usize| -> Result<Vec<f64>, SignalError> {
        let single = TimedSeries::new(s.timestamps.clone(), s.channel(c).collect(), 1)?;
        let mut v = resample_linear(&single, &grid)?.values;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        Ok(v)
    };
    let xa = pick(a, channel_a)?;
    let xb = pick(b, channel_b)?;

    let max_shift = ((max_lag_s * rate).round() as i64).min(n as i64 - 1);
    let mut best = (0i64, f64::NEG_INFINITY);
    for k in -max_shift..=max_shift {
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        let lo = 0.max(-k) as usize;
        let hi = (n as i64).min(n as i64 - k) as usize;
        for i in lo..hi {
            let (x, y) = (xa[i], xb[(i as i64 + k) as usize]);
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let denom = (saa * sbb).sqrt();
        let r = if denom > 0.0 { sab / denom } else { 0.0 };
        if r > best.1 {
            best = (k, r);
        }
    }
    let (shift, peak) = best;
    if !(peak >= 0.2) {
        return Err(SignalError::UnreliableLag { peak });
    }
    Ok(LagEstimate {
        lag_s: shift as f64 * period,
        shift_samples: shift,
        peak_correlation: peak,
        resample_period_s: period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn uniform(rate: f64, duration: f64, f: impl Fn(f64) -> f64) -> TimedSeries {
        let n = (duration * rate).round() as usize + 1;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let vs = ts.iter().map(|&t| f(t)).collect();
        TimedSeries::new(ts, vs, 1).unwrap()
    }

    #[test]
    fn construction_checks() {
        assert!(TimedSeries::new(vec![0.0, 0.0], vec![1.0, 2.0], 1).is_err());
        assert!(TimedSeries::new(vec![0.0, 1.0], vec![1.0], 1).is_err());
        assert!(TimedSeries::new(vec![], vec![], 0).is_err());
        let s = TimedSeries::from_rows(vec![0.0, 1.0], &[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(s.channel(1).collect::<Vec<_>>(), vec![2.0, 4.0]);
        assert_eq!(s.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn filter_fixed_points() {
        let s = TimedSeries::from_rows(vec![0.0, 1.0, 2.0], &[[3.0, -1.0], [3.0, -1.0], [3.0, -1.0]]).unwrap();
        assert_eq!(exponential_filter(&s, 0.2).unwrap(), s);
        let ramp = uniform(10.0, 1.0, |t| t * t);
        assert_eq!(exponential_filter(&ramp, 1.0).unwrap(), ramp);
    }

    #[test]
    fn filter_step_response() {
        let s = TimedSeries::new(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0, 1.0], 1).unwrap();
        let y = exponential_filter(&s, 0.2).unwrap();
        let expected = [0.0, 0.2, 0.36, 0.488];
        for (a, b) in y.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_errors() {
        let empty = TimedSeries::new(vec![], vec![], 1).unwrap();
        assert_eq!(exponential_filter(&empty, 0.2), Err(SignalError::Empty));
        let s = uniform(1.0, 2.0, |t| t);
        assert!(matches!(exponential_filter(&s, 0.0), Err(SignalError::InvalidAlpha(_))));
        assert!(matches!(exponential_filter(&s, 1.5), Err(SignalError::InvalidAlpha(_))));
    }

    #[test]
    fn filter_reduces_variance_of_noise() {
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = uniform(100.0, 20.0, |_| 0.0);
            let noisy = TimedSeries::new(s.timestamps().to_vec(), (0..s.len()).map(|_| rng.random_range(-1.0..1.0)).collect(), 1).unwrap();
            let y = exponential_filter(&noisy, 0.2).unwrap();
            assert!(var(y.values()) <= var(noisy.values()));
        }
    }

    #[test]
    fn resample_at_source_and_midpoints() {
        let s = TimedSeries::from_rows(vec![0.0, 1.0, 3.0], &[[0.0, 10.0], [2.0, 20.0], [6.0, -2.0]]).unwrap();
        let same = resample_linear(&s, s.timestamps()).unwrap();
        assert_eq!(same, s);
        let mid = resample_linear(&s, &[0.5, 2.0]).unwrap();
        assert_eq!(mid.row(0), &[1.0, 15.0]);
        assert_eq!(mid.row(1), &[4.0, 9.0]);
        assert!(matches!(resample_linear(&s, &[3.5]), Err(SignalError::Extrapolation { .. })));
        assert!(matches!(resample_linear(&s, &[-0.1]), Err(SignalError::Extrapolation { .. })));
    }

    #[test]
    fn ramp_upsampling_is_exact() {
        let slow = uniform(25.0, 4.0, |t| 3.0 * t - 1.0);
        let targets: Vec<f64> = (0..=500).map(|i| i as f64 / 125.0).collect();
        let fast = resample_linear(&slow, &targets).unwrap();
        for (t, v) in targets.iter().zip(fast.values()) {
            assert!((v - (3.0 * t - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_shift_gives_zero_lag() {
        let a = uniform(125.0, 30.0, |t| (2.0 * PI * t).sin());
        let est = estimate_lag(&a, &a, 0.5).unwrap();
        assert_eq!(est.shift_samples, 0);
        assert!((est.peak_correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sine_shifted_by_forty_ms() {
        let a = uniform(125.0, 60.0, |t| (2.0 * PI * t).sin());
        let b = uniform(125.0, 60.0, |t| (2.0 * PI * (t - 0.040)).sin());
        let est = estimate_lag(&a, &b, 0.3).unwrap();
        assert!((est.lag_s - 0.040).abs() <= est.resample_period_s, "{est:?}");
        let back = estimate_lag(&b, &a, 0.3).unwrap();
        assert!((back.lag_s + 0.040).abs() <= back.resample_period_s);
    }

    #[test]
    fn independent_noise_is_unreliable() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = uniform(125.0, 60.0, |t| (2.0 * PI * t).sin());
        let b = TimedSeries::new(a.timestamps().to_vec(), (0..a.len()).map(|_| rng.random_range(-1.0..1.0)).collect(), 1).unwrap();
        assert!(matches!(estimate_lag(&a, &b, 0.3), Err(SignalError::UnreliableLag { .. })));
    }

    #[test]
    fn lag_needs_enough_overlap() {
        let a = uniform(125.0, 2.0, |t| t.sin());
        assert!(matches!(estimate_lag(&a, &a, 0.5), Err(SignalError::InsufficientOverlap { .. })));
        assert!(matches!(estimate_lag_channels(&a, 1, &a, 0, 0.1), Err(SignalError::NoSuchChannel { .. })));
    }

    #[test]
    fn mixed_rate_lag() {
        // 25 Hz stream trailing a 125 Hz stream
        let f = |t: f64| (2.0 * PI * 0.3 * t).sin() + 0.5 * (2.0 * PI * 0.71 * t + 1.0).sin();
        let a = uniform(125.0, 60.0, f);
        let slow = uniform(25.0, 59.0, &f).shifted(0.040);
        let est = estimate_lag(&a, &slow, 0.4).unwrap();
        assert!((est.lag_s - 0.040).abs() <= est.resample_period_s, "{est:?}");
    }
}
