//! The 15 hand-crafted descriptors of a selected breathing signal.
//!
//! Four time-domain statistics, four short-term statistics over 1 s windows
//! with 50% overlap, five Welch-spectrum statistics restricted to the
//! breathing band, plus the spread of the autocorrelation sequence and the
//! respiratory rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{BAND_HIGH_HZ, BAND_LOW_HZ};
use crate::spectrum::{welch_psd, WelchConfig};

pub const FEATURE_COUNT: usize = 15;

/// Shortest signal accepted, seconds.
pub const MIN_SECONDS: f64 = 5.0;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "mean",
    "std",
    "rms",
    "peak_to_peak",
    "window_energy_mean",
    "window_energy_std",
    "window_zero_crossings_mean",
    "window_zero_crossings_std",
    "spectral_centroid_hz",
    "spectral_bandwidth_hz",
    "spectral_entropy",
    "peak_power_ratio",
    "band_power",
    "autocorrelation_std",
    "respiratory_rate_bpm",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean: f64,
    pub std: f64,
    pub rms: f64,
    pub peak_to_peak: f64,
    pub window_energy_mean: f64,
    pub window_energy_std: f64,
    pub window_zero_crossings_mean: f64,
    pub window_zero_crossings_std: f64,
    pub spectral_centroid_hz: f64,
    pub spectral_bandwidth_hz: f64,
    pub spectral_entropy: f64,
    pub peak_power_ratio: f64,
    pub band_power: f64,
    pub autocorrelation_std: f64,
    pub respiratory_rate_bpm: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.mean,
            self.std,
            self.rms,
            self.peak_to_peak,
            self.window_energy_mean,
            self.window_energy_std,
            self.window_zero_crossings_mean,
            self.window_zero_crossings_std,
            self.spectral_centroid_hz,
            self.spectral_bandwidth_hz,
            self.spectral_entropy,
            self.peak_power_ratio,
            self.band_power,
            self.autocorrelation_std,
            self.respiratory_rate_bpm,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            mean: a[0],
            std: a[1],
            rms: a[2],
            peak_to_peak: a[3],
            window_energy_mean: a[4],
            window_energy_std: a[5],
            window_zero_crossings_mean: a[6],
            window_zero_crossings_std: a[7],
            spectral_centroid_hz: a[8],
            spectral_bandwidth_hz: a[9],
            spectral_entropy: a[10],
            peak_power_ratio: a[11],
            band_power: a[12],
            autocorrelation_std: a[13],
            respiratory_rate_bpm: a[14],
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

fn zero_crossings(w: &[f64]) -> usize {
    w.windows(2)
        .filter(|p| (p[0] < 0.0) != (p[1] < 0.0) && p[0] != p[1])
        .count()
}

/// Biased autocorrelation of the mean-removed signal, normalised to 1 at lag
/// 0. All zeros for a constant signal.
pub fn autocorrelation(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let (m, _) = mean_std(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let r0: f64 = c.iter().map(|v| v * v).sum();
    if !(r0 > 0.0) {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / r0)
        .collect()
}

pub fn extract_features(s: &[f64], fs: f64, welch: &WelchConfig) -> Result<FeatureVector> {
    if !(fs > 0.0) {
        return Err(Error::parameter("fs", "must be > 0"));
    }
    if (s.len() as f64) < MIN_SECONDS * fs {
        return Err(Error::parameter(
            "length",
            format!("{} samples is shorter than {MIN_SECONDS} s at {fs} Hz", s.len()),
        ));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite sample in selected signal".into()));
    }

    let (mean, std) = mean_std(s);
    let rms = (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);

    let win = (fs.round() as usize).max(2);
    let hop = (win / 2).max(1);
    let mut energies = Vec::new();
    let mut crossings = Vec::new();
    let mut start = 0;
    while start + win <= s.len() {
        let w = &s[start..start + win];
        energies.push(w.iter().map(|v| v * v).sum::<f64>() / win as f64);
        crossings.push(zero_crossings(w) as f64);
        start += hop;
    }
    let (energy_mean, energy_std) = mean_std(&energies);
    let (zc_mean, zc_std) = mean_std(&crossings);

    let spec = welch_psd(s, fs, welch)?;
    let band = spec.band(BAND_LOW_HZ, BAND_HIGH_HZ);
    if band.is_empty() {
        return Err(Error::parameter(
            "welch",
            "spectrum has no bin inside the breathing band",
        ));
    }
    let total: f64 = band.iter().map(|&k| spec.power[k]).sum();
    let mut peak = band[0];
    for &k in &band {
        if spec.power[k] > spec.power[peak] {
            peak = k;
        }
    }
    let (centroid, bandwidth, entropy, peak_ratio) = if total > 0.0 {
        let c = band.iter().map(|&k| spec.freqs[k] * spec.power[k]).sum::<f64>() / total;
        let bw = (band
            .iter()
            .map(|&k| (spec.freqs[k] - c).powi(2) * spec.power[k])
            .sum::<f64>()
            / total)
            .sqrt();
        let h: f64 = band
            .iter()
            .map(|&k| spec.power[k] / total)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        let h = if band.len() > 1 {
            h / (band.len() as f64).ln()
        } else {
            0.0
        };
        (c, bw, h.clamp(0.0, 1.0), spec.power[peak] / total)
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };
    let band_power = total * spec.bin_width();

    let (_, ac_std) = mean_std(&autocorrelation(s));

    Ok(FeatureVector {
        mean,
        std,
        rms,
        peak_to_peak: max - min,
        window_energy_mean: energy_mean,
        window_energy_std: energy_std,
        window_zero_crossings_mean: zc_mean,
        window_zero_crossings_std: zc_std,
        spectral_centroid_hz: centroid,
        spectral_bandwidth_hz: bandwidth,
        spectral_entropy: entropy,
        peak_power_ratio: peak_ratio,
        band_power,
        autocorrelation_std: ac_std,
        respiratory_rate_bpm: 60.0 * spec.freqs[peak],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(a: f64, f: f64, secs: f64, phase: f64) -> Vec<f64> {
        let n = (secs * 30.0) as usize;
        (0..n)
            .map(|t| a * (2.0 * PI * f * t as f64 / 30.0 + phase).sin())
            .collect()
    }

    #[test]
    fn rate_of_quarter_hertz() {
        let f = extract_features(&sine(1.0, 0.25, 30.0, 0.0), 30.0, &WelchConfig::default()).unwrap();
        assert_eq!(f.respiratory_rate_bpm, 15.0);
    }

    #[test]
    fn sine_amplitude_statistics() {
        for a in [0.5, 3.0, 12.0] {
            let f = extract_features(&sine(a, 0.3, 40.0, 0.4), 30.0, &WelchConfig::default()).unwrap();
            assert!((f.rms / (a / 2f64.sqrt()) - 1.0).abs() < 0.01);
            assert!((f.peak_to_peak / (2.0 * a) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn zero_signal_conventions() {
        let f = extract_features(&[0.0; 300], 30.0, &WelchConfig::default()).unwrap();
        assert_eq!(f.mean, 0.0);
        assert_eq!(f.std, 0.0);
        assert_eq!(f.rms, 0.0);
        assert_eq!(f.peak_to_peak, 0.0);
        assert_eq!(f.spectral_entropy, 0.0);
        assert!(f.to_array().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn short_signal_rejected() {
        assert!(extract_features(&[1.0; 149], 30.0, &WelchConfig::default()).is_err());
    }

    #[test]
    fn ranges_hold() {
        for f0 in [0.2, 0.33, 0.5, 0.6] {
            let f = extract_features(&sine(1.0, f0, 20.0, 0.0), 30.0, &WelchConfig::default()).unwrap();
            assert!((10.0..=40.0).contains(&f.respiratory_rate_bpm));
            assert!((0.0..=1.0).contains(&f.spectral_entropy));
        }
    }

    #[test]
    fn whole_period_shift_invariance() {
        // 0.25 Hz has a 120-sample period
        let long = sine(1.0, 0.25, 44.0, 0.2);
        let a = extract_features(&long[..1200], 30.0, &WelchConfig::default())
            .unwrap()
            .to_array();
        let b = extract_features(&long[120..1320], 30.0, &WelchConfig::default())
            .unwrap()
            .to_array();
        for (k, (x, y)) in a.iter().zip(&b).enumerate() {
            let scale = x.abs().max(y.abs()).max(1e-9);
            assert!(
                (x - y).abs() / scale <= 0.02 || (x - y).abs() < 1e-9,
                "{}: {x} vs {y}",
                FEATURE_NAMES[k]
            );
        }
    }

    #[test]
    fn autocorrelation_starts_at_one() {
        let r = autocorrelation(&sine(1.0, 0.3, 10.0, 0.0));
        assert!((r[0] - 1.0).abs() < 1e-12);
        assert!(r.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn array_roundtrip() {
        let a: [f64; FEATURE_COUNT] = std::array::from_fn(|i| i as f64 * 1.5);
        assert_eq!(FeatureVector::from_array(a).to_array(), a);
    }
}
