//! Welch power spectral density.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Segment taper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    #[default]
    Hann,
    /// No taper. Narrowest main lobe, highest sidelobes.
    Rectangular,
}

impl Taper {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Taper::Hann => hann(n),
            Taper::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchConfig {
    /// Segment length in seconds, capped at the record length. `None` uses
    /// the whole record as a single segment.
    pub window_seconds: Option<f64>,
    /// Fractional overlap between consecutive segments.
    pub overlap: f64,
    /// Zero-pad each segment so the bin spacing is at most this, Hz.
    /// Padding interpolates the spectrum; it does not sharpen it.
    pub grid_hz: Option<f64>,
    pub taper: Taper,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            window_seconds: Some(8.0),
            overlap: 0.5,
            grid_hz: None,
            taper: Taper::Hann,
        }
    }
}

impl WelchConfig {
    pub fn whole_record() -> Self {
        WelchConfig {
            window_seconds: None,
            overlap: 0.5,
            grid_hz: None,
            taper: Taper::Hann,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.window_seconds {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::parameter("window_seconds", "must be > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::parameter("overlap", "must be in [0, 1)"));
        }
        if let Some(g) = self.grid_hz {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::parameter("grid_hz", "must be > 0"));
            }
        }
        Ok(())
    }

    /// Segment length in samples for a record of `n` samples.
    pub fn segment_len(&self, n: usize, fs: f64) -> usize {
        match self.window_seconds {
            Some(w) => ((w * fs).round() as usize).clamp(1, n.max(1)),
            None => n,
        }
    }

    /// FFT length for a segment of `win_len` samples.
    pub fn fft_len(&self, win_len: usize, fs: f64) -> usize {
        match self.grid_hz {
            Some(g) => win_len.max(((fs / g).ceil() as usize).next_power_of_two()),
            None => win_len,
        }
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub window_len: usize,
    pub overlap_len: usize,
    pub segments: usize,
}

impl PowerSpectrum {
    pub fn bin_width(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Indices of bins with `lo <= f <= hi`.
    pub fn band(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.freqs.len())
            .filter(|&k| self.freqs[k] >= lo && self.freqs[k] <= hi)
            .collect()
    }

    /// ∫ PSD df over all bins.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_width()
    }
}

/// Periodic (DFT-even) Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate: mean-removed tapered segments, averaged
/// periodograms, density scaling so that the integral over frequency equals
/// the signal variance.
pub fn welch_psd(x: &[f64], fs: f64, cfg: &WelchConfig) -> Result<PowerSpectrum> {
    cfg.validate()?;
    if !(fs > 0.0) {
        return Err(Error::parameter("fs", "must be > 0"));
    }
    let win_len = cfg.segment_len(x.len(), fs);
    if win_len < 2 || x.len() < win_len {
        return Err(Error::parameter(
            "length",
            format!("{} samples is shorter than one {win_len}-sample window", x.len()),
        ));
    }
    let overlap_len = ((win_len as f64) * cfg.overlap).floor() as usize;
    let step = win_len - overlap_len;
    let segments = (x.len() - win_len) / step + 1;

    let window = cfg.taper.weights(win_len);
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let nfft = cfg.fft_len(win_len, fs);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let nbins = nfft / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    for s in 0..segments {
        let seg = &x[s * step..s * step + win_len];
        let mean = seg.iter().sum::<f64>() / win_len as f64;
        buf.fill(Complex64::new(0.0, 0.0));
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let scale = 1.0 / (fs * wss * segments as f64);
    let power: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (nfft.is_multiple_of(2) && k == nfft / 2) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..nbins).map(|k| k as f64 * fs / nfft as f64).collect();
    Ok(PowerSpectrum {
        freqs,
        power,
        window_len: win_len,
        overlap_len,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tone(f: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * f * t as f64 / fs + phase).sin()).collect()
    }

    /// Direct DFT periodogram of the whole record, used as an independent
    /// check on the peak location.
    fn dft_peak(x: &[f64], fs: f64) -> f64 {
        let n = x.len();
        let mut best = (0.0, 0usize);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let p = re * re + im * im;
            if p > best.0 {
                best = (p, k);
            }
        }
        best.1 as f64 * fs / n as f64
    }

    #[test]
    fn tone_peak_location() {
        let x = tone(0.25, 30.0, 1800, 0.3);
        let spec = welch_psd(&x, 30.0, &WelchConfig::default()).unwrap();
        let k = (0..spec.power.len())
            .max_by(|&a, &b| spec.power[a].partial_cmp(&spec.power[b]).unwrap())
            .unwrap();
        assert!((spec.freqs[k] - 0.25).abs() <= spec.bin_width());
        assert!((dft_peak(&x, 30.0) - 0.25).abs() < 1e-12);
        assert_eq!(spec.window_len, 240);
        assert_eq!(spec.segments, 14);
    }

    #[test]
    fn zero_signal_zero_power() {
        let spec = welch_psd(&[0.0; 600], 30.0, &WelchConfig::default()).unwrap();
        assert!(spec.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn white_noise_integrates_to_variance() {
        let mut total = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..1800).map(|_| StandardNormal.sample(&mut rng)).collect();
            total += welch_psd(&x, 30.0, &WelchConfig::default()).unwrap().total_power();
        }
        let mean = total / 100.0;
        assert!((0.9..=1.1).contains(&mean), "{mean}");
    }

    #[test]
    fn shift_invariant_for_whole_periods() {
        // 0.375 Hz is bin-centred for an 8 s window at 30 Hz
        let long = tone(0.375, 30.0, 1800 + 37, 0.0);
        let a = welch_psd(&long[..1800], 30.0, &WelchConfig::default()).unwrap();
        let b = welch_psd(&long[37..], 30.0, &WelchConfig::default()).unwrap();
        let peak = a.power.iter().cloned().fold(0.0, f64::max);
        for (p, q) in a.power.iter().zip(&b.power) {
            assert!((p - q).abs() <= 1e-9 * peak);
        }
    }

    #[test]
    fn padding_refines_grid_and_keeps_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let plain = welch_psd(&x, 30.0, &WelchConfig::whole_record()).unwrap();
        let cfg = WelchConfig {
            grid_hz: Some(0.01),
            ..WelchConfig::whole_record()
        };
        let padded = welch_psd(&x, 30.0, &cfg).unwrap();
        assert!(padded.bin_width() <= 0.01);
        assert_eq!(padded.window_len, 300);
        let (a, b) = (plain.total_power(), padded.total_power());
        assert!((a - b).abs() < 1e-9 * a, "{a} {b}");
    }

    #[test]
    fn untapered_whole_record_is_parseval_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..451).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        let cfg = WelchConfig {
            taper: Taper::Rectangular,
            ..WelchConfig::whole_record()
        };
        let p = welch_psd(&x, 30.0, &cfg).unwrap().total_power();
        assert!((p - var).abs() < 1e-12 * var, "{p} {var}");
    }

    #[test]
    fn short_record_rejected() {
        let cfg = WelchConfig {
            window_seconds: None,
            overlap: 0.5,
            grid_hz: None,
            taper: Taper::Hann,
        };
        assert!(welch_psd(&[1.0], 30.0, &cfg).is_err());
    }
}
