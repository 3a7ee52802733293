//! Informative-channel selection by periodicity index.
//!
//! The index is the power of the dominant in-band spectral line plus its
//! second harmonic, divided by the total in-band power. The spectrum is a
//! single untapered segment over the whole record, zero-padded onto a fine
//! grid. A line spans one native bin either side of its centre (the main
//! lobe), capped at 0.05 Hz so that short records, whose main lobes are a
//! large share of the band, do not score every channel near 1. Under that
//! cap the rectangular window keeps more of a tone inside its line than a
//! Hann window would (a 10 s tone scores about 0.8 against 0.6), which is
//! what separates a tone from noise on short walks. Only
//! in-band bins count, in the numerator as in the denominator, so a
//! harmonic above the band contributes nothing and the index stays in
//! `[0, 1]`. Above the band the bandpassed signal holds mostly attenuated
//! gait residue, which must not vote for a channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{BAND_HIGH_HZ, BAND_LOW_HZ};
use crate::spectrum::{welch_psd, PowerSpectrum, Taper, WelchConfig};
use crate::types::ChannelId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub welch: WelchConfig,
    /// Native (unpadded) bins either side of a peak counted as its line.
    pub line_half_width: usize,
    /// Cap on the line half-width, Hz. Short records have main lobes wide
    /// enough to cover most of the band; the cap keeps the index measuring
    /// concentration there instead of saturating at 1.
    pub max_line_hz: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            welch: WelchConfig {
                grid_hz: Some(0.005),
                taper: Taper::Rectangular,
                ..WelchConfig::whole_record()
            },
            line_half_width: 1,
            max_line_hz: 0.05,
        }
    }
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        self.welch.validate()?;
        if !(self.max_line_hz.is_finite() && self.max_line_hz >= 0.0) {
            return Err(Error::parameter("select.max_line_hz", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Line half-width in Hz for a spectrum.
    pub fn line_hz(&self, spec: &PowerSpectrum, fs: f64) -> f64 {
        let native = fs / spec.window_len as f64;
        (self.line_half_width as f64 * native).min(self.max_line_hz)
    }
}

/// Selected channel with the per-channel indices (`None` for unusable
/// channels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub channel: ChannelId,
    pub indices: [Option<f64>; 6],
    #[serde(skip)]
    pub signal: Vec<f64>,
}

/// Index with lines of `half_width_hz` either side of the peak and of the
/// bin nearest twice the peak frequency.
pub fn periodicity_index(spec: &PowerSpectrum, half_width_hz: f64) -> Result<f64> {
    let band = spec.band(BAND_LOW_HZ, BAND_HIGH_HZ);
    if band.is_empty() {
        return Err(Error::parameter(
            "spectrum",
            format!("no bin inside [{BAND_LOW_HZ}, {BAND_HIGH_HZ}] Hz"),
        ));
    }
    let total: f64 = band.iter().map(|&k| spec.power[k]).sum();
    if !(total > 0.0) {
        return Ok(0.0);
    }
    let mut peak = band[0];
    for &k in &band {
        if spec.power[k] > spec.power[peak] {
            peak = k;
        }
    }
    let df = spec.bin_width();
    let reach = (half_width_hz / df + 1e-9).floor() as usize;
    let harmonic = (2.0 * spec.freqs[peak] / df).round() as usize;

    let (lo, hi) = (band[0], *band.last().unwrap());
    let mut in_line = vec![false; spec.freqs.len()];
    for centre in [peak, harmonic] {
        if centre > hi {
            continue;
        }
        let from = centre.saturating_sub(reach).max(lo);
        let to = (centre + reach).min(hi);
        in_line[from..=to].iter_mut().for_each(|f| *f = true);
    }
    let line: f64 = band.iter().filter(|&&k| in_line[k]).map(|&k| spec.power[k]).sum();
    Ok((line / total).clamp(0.0, 1.0))
}

/// Position of the largest index. Ties (within a relative 1e-12) go to the
/// earlier position.
pub fn argmax_index(indices: &[Option<f64>; 6]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (c, idx) in indices.iter().enumerate() {
        if let Some(v) = *idx {
            match best {
                Some((_, b)) if v <= b + 1e-12 * b.abs() => {}
                _ => best = Some((c, v)),
            }
        }
    }
    best.map(|(c, _)| c)
}

/// Pick the channel with the largest periodicity index. Ties (within a
/// relative 1e-12) go to the earlier channel in the fixed order.
pub fn select_informative(
    channels: &[Vec<f64>; 6],
    usable: &[bool; 6],
    fs: f64,
    cfg: &SelectConfig,
) -> Result<SelectionResult> {
    let mut indices = [None; 6];
    for id in ChannelId::ALL {
        let c = id.index();
        if usable[c] {
            let spec = welch_psd(&channels[c], fs, &cfg.welch)?;
            indices[c] = Some(periodicity_index(&spec, cfg.line_hz(&spec, fs))?);
        }
    }
    let c = argmax_index(&indices).ok_or_else(|| Error::EmptySignal("no usable channel to select from".into()))?;
    Ok(SelectionResult {
        channel: ChannelId::from_index(c),
        indices,
        signal: channels[c].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn tone(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * f * t as f64 / 30.0).sin()).collect()
    }

    fn spec_of(x: &[f64]) -> PowerSpectrum {
        welch_psd(x, 30.0, &SelectConfig::default().welch).unwrap()
    }

    fn index_of(x: &[f64]) -> f64 {
        let spec = spec_of(x);
        periodicity_index(&spec, SelectConfig::default().line_hz(&spec, 30.0)).unwrap()
    }

    #[test]
    fn long_sine_is_periodic() {
        let idx = index_of(&tone(0.3, 1800));
        assert!(idx >= 0.9, "{idx}");
        assert!(idx <= 1.0);
    }

    #[test]
    fn white_noise_is_not() {
        let mut sum = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..3600).map(|_| StandardNormal.sample(&mut rng)).collect();
            sum += index_of(&x);
        }
        assert!(sum / 100.0 < 0.2, "{}", sum / 100.0);
    }

    #[test]
    fn short_record_does_not_saturate() {
        // 7 s: the band holds only a few native bins, yet a clean tone
        // should usually beat a noisy copy of itself, and never score 1
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = 0.2 + 0.4 * rng.random::<f64>();
            let clean = tone(f, 210);
            let noisy: Vec<f64> = clean
                .iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    v + 0.7 * e
                })
                .collect();
            let (a, b) = (index_of(&clean), index_of(&noisy));
            assert!(a < 1.0, "seed {seed}: {a}");
            wins += (a > b) as usize;
        }
        assert!(wins >= 70, "{wins}/100");
    }

    #[test]
    fn zero_power_is_zero_index() {
        assert_eq!(index_of(&[0.0; 600]), 0.0);
    }

    #[test]
    fn single_bin_lines_use_literal_bins() {
        // hand-built spectrum: bins every 0.1 Hz
        let spec = PowerSpectrum {
            freqs: (0..10).map(|k| k as f64 * 0.1).collect(),
            power: vec![5.0, 0.0, 1.0, 4.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0],
            window_len: 20,
            overlap_len: 0,
            segments: 1,
        };
        // band bins 0.2..0.6 → {1, 4, 1, 2, 3}; peak 0.3 Hz, harmonic 0.6 Hz
        let idx = periodicity_index(&spec, 0.0).unwrap();
        assert!((idx - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_band_harmonic_ignored() {
        let mut power = vec![0.0; 10];
        power[4] = 4.0; // 0.4 Hz, in band
        power[2] = 1.0;
        power[8] = 1.0; // 0.8 Hz, above the band
        let spec = PowerSpectrum {
            freqs: (0..10).map(|k| k as f64 * 0.1).collect(),
            power,
            window_len: 20,
            overlap_len: 0,
            segments: 1,
        };
        // in band {1, 0, 4, 0, 0}: only the fundamental counts
        let idx = periodicity_index(&spec, 0.0).unwrap();
        assert!((idx - 0.8).abs() < 1e-12, "{idx}");
    }

    #[test]
    fn argmax_of_listed_indices() {
        let idx = [Some(0.1), Some(0.9), Some(0.3), Some(0.2), Some(0.4), Some(0.5)];
        assert_eq!(argmax_index(&idx), Some(1));
        assert_eq!(argmax_index(&[None; 6]), None);
    }

    #[test]
    fn identical_channels_pick_first() {
        let x = tone(0.3, 600);
        let chans: [Vec<f64>; 6] = std::array::from_fn(|_| x.clone());
        let r = select_informative(&chans, &[true; 6], 30.0, &SelectConfig::default()).unwrap();
        assert_eq!(r.channel.index(), 0);
    }

    #[test]
    fn unusable_channels_skipped() {
        let x = tone(0.3, 600);
        let chans: [Vec<f64>; 6] = std::array::from_fn(|_| x.clone());
        let r = select_informative(
            &chans,
            &[false, false, true, true, false, false],
            30.0,
            &SelectConfig::default(),
        )
        .unwrap();
        assert_eq!(r.channel.index(), 2);
        assert_eq!(r.indices[0], None);
        assert!(select_informative(&chans, &[false; 6], 30.0, &SelectConfig::default()).is_err());
    }

    #[test]
    fn sine_among_noise_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut chans: [Vec<f64>; 6] =
            std::array::from_fn(|_| (0..900).map(|_| StandardNormal.sample(&mut rng)).collect());
        chans[4] = tone(0.37, 900);
        let r = select_informative(&chans, &[true; 6], 30.0, &SelectConfig::default()).unwrap();
        assert_eq!(r.channel.index(), 4);
        for k in [0.1, 10.0] {
            let mut scaled = chans.clone();
            scaled[1].iter_mut().for_each(|v| *v *= k);
            scaled[4].iter_mut().for_each(|v| *v *= k);
            let s = select_informative(&scaled, &[true; 6], 30.0, &SelectConfig::default()).unwrap();
            assert_eq!(s.channel, r.channel);
        }
        let negated: [Vec<f64>; 6] = std::array::from_fn(|c| chans[c].iter().map(|v| -v).collect());
        let s = select_informative(&negated, &[true; 6], 30.0, &SelectConfig::default()).unwrap();
        for c in 0..6 {
            assert!((s.indices[c].unwrap() - r.indices[c].unwrap()).abs() < 1e-12);
        }
    }
}
