//! Per-channel cleanup: gap and outlier repair, least-squares detrending,
//! zero-phase Butterworth bandpass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::butter_bandpass;
use crate::types::{ChannelId, CleanChannels, RawChannels};

/// Breathing passband in Hz.
pub const BAND_LOW_HZ: f64 = 0.167;
pub const BAND_HIGH_HZ: f64 = 0.667;

/// Scale turning a median absolute deviation into a normal-consistent σ.
const MAD_SCALE: f64 = 1.4826;
/// Same for the mean absolute deviation, used when the MAD is zero.
const MEAN_AD_SCALE: f64 = 1.253_314;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub z_thresh: f64,
    /// Total bandpass order (two poles per biquad).
    pub order: usize,
    /// Odd-reflection padding per side, seconds.
    pub pad_seconds: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            z_thresh: 3.5,
            order: 4,
            pad_seconds: 3.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z_thresh.is_finite() && self.z_thresh > 0.0) {
            return Err(Error::parameter("z_thresh", "must be a positive number"));
        }
        if self.order == 0 || !self.order.is_multiple_of(2) {
            return Err(Error::parameter("order", "must be even and positive"));
        }
        if !(self.pad_seconds >= 0.0) {
            return Err(Error::parameter("pad_seconds", "must be >= 0"));
        }
        Ok(())
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Robust z-scores of `values` around their median (MAD, falling back to
/// the mean absolute deviation when the MAD vanishes). `None` when the
/// values are constant.
fn robust_scale(values: &[f64]) -> Option<(f64, f64)> {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = median(&s);
    let mut dev: Vec<f64> = s.iter().map(|v| (v - med).abs()).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mad = median(&dev);
    let scale = if mad > 0.0 {
        MAD_SCALE * mad
    } else {
        MEAN_AD_SCALE * dev.iter().sum::<f64>() / dev.len() as f64
    };
    (scale > 0.0).then_some((med, scale))
}

/// Fill every non-keep sample by linear interpolation between the nearest
/// kept neighbours; leading/trailing runs copy the nearest kept value.
fn interpolate(x: &[f64], keep: &[bool]) -> Vec<f64> {
    let idx: Vec<usize> = (0..x.len()).filter(|&i| keep[i]).collect();
    let mut out = x.to_vec();
    let (first, last) = (idx[0], *idx.last().unwrap());
    for v in out.iter_mut().take(first) {
        *v = x[first];
    }
    for v in out.iter_mut().skip(last + 1) {
        *v = x[last];
    }
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let span = (b - a) as f64;
        for (i, v) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let f = (i - a) as f64 / span;
            *v = x[a] + f * (x[b] - x[a]);
        }
    }
    out
}

/// Replace masked samples and robust-z outliers by linear interpolation.
///
/// Outlier detection is repeated on the repaired signal until no surviving
/// sample is flagged, so the result is a fixed point: applying the
/// function again changes nothing.
pub fn repair_outliers(x: &[f64], valid: &[bool], z_thresh: f64) -> Result<Vec<f64>> {
    if x.len() != valid.len() {
        return Err(Error::parameter("mask", "mask length differs from signal length"));
    }
    let mut keep: Vec<bool> = valid.iter().zip(x).map(|(&v, s)| v && s.is_finite()).collect();
    let too_few = || Error::UnusableChannel {
        channel: String::new(),
        message: "fewer than 2 usable samples".into(),
    };
    if keep.iter().filter(|&&k| k).count() < 2 {
        return Err(too_few());
    }

    // first pass: statistics over measured samples only
    let measured: Vec<f64> = (0..x.len()).filter(|&i| keep[i]).map(|i| x[i]).collect();
    if let Some((med, scale)) = robust_scale(&measured) {
        for i in 0..x.len() {
            if keep[i] && (x[i] - med).abs() / scale > z_thresh {
                keep[i] = false;
            }
        }
    }
    loop {
        if keep.iter().filter(|&&k| k).count() < 2 {
            return Err(too_few());
        }
        let y = interpolate(x, &keep);
        let Some((med, scale)) = robust_scale(&y) else {
            return Ok(y);
        };
        let mut changed = false;
        for i in 0..y.len() {
            if keep[i] && (y[i] - med).abs() / scale > z_thresh {
                keep[i] = false;
                changed = true;
            }
        }
        if !changed {
            return Ok(y);
        }
    }
}

/// Subtract the ordinary-least-squares line over `t = 0..n`.
pub fn detrend_least_squares(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::parameter("length", "detrending needs at least 2 samples"));
    }
    let nf = n as f64;
    let t_mean = (nf - 1.0) / 2.0;
    let x_mean = x.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxx += dt * dt;
        sxy += dt * (v - x_mean);
    }
    let slope = sxy / sxx;
    Ok(x.iter()
        .enumerate()
        .map(|(i, v)| (v - x_mean) - slope * (i as f64 - t_mean))
        .collect())
}

/// Zero-phase Butterworth bandpass over the breathing band.
pub fn bandpass(x: &[f64], fs: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    if !(fs > 2.0 * BAND_HIGH_HZ) {
        return Err(Error::parameter(
            "frame_rate",
            format!("{fs} Hz puts Nyquist below the {BAND_HIGH_HZ} Hz band edge"),
        ));
    }
    if x.len() < 10 * cfg.order {
        return Err(Error::parameter(
            "length",
            format!("{} samples is shorter than 10x the filter order {}", x.len(), cfg.order),
        ));
    }
    let sos = butter_bandpass(cfg.order, BAND_LOW_HZ, BAND_HIGH_HZ, fs)?;
    let pad = (cfg.pad_seconds * fs).round() as usize;
    Ok(sos.filtfilt(x, pad))
}

fn clean_one(x: &[f64], valid: &[bool], fs: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    let repaired = repair_outliers(x, valid, cfg.z_thresh)?;
    let detrended = detrend_least_squares(&repaired)?;
    bandpass(&detrended, fs, cfg)
}

/// Repair, detrend and bandpass every channel. A channel that cannot be
/// repaired is zero-filled and flagged; the sample fails only when every
/// channel is unusable. Configuration errors (sampling rate, length) fail
/// immediately.
pub fn preprocess_all(raw: &RawChannels, cfg: &PreprocessConfig) -> Result<CleanChannels> {
    cfg.validate()?;
    let n = raw.len();
    let mut channels: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
    let mut usable = [false; 6];
    let mut last_err = None;
    for id in ChannelId::ALL {
        let c = id.index();
        match clean_one(&raw.channels[c], &raw.valid[c], raw.frame_rate, cfg) {
            Ok(v) => {
                channels[c] = v;
                usable[c] = true;
            }
            Err(Error::UnusableChannel { message, .. }) => {
                last_err = Some(Error::UnusableChannel {
                    channel: id.name().into(),
                    message,
                });
            }
            Err(e) => return Err(e),
        }
    }
    if !usable.iter().any(|&u| u) {
        return Err(last_err.unwrap_or_else(|| Error::EmptySignal("no usable channel".into())));
    }
    Ok(CleanChannels {
        frame_rate: raw.frame_rate,
        channels,
        usable,
    })
}
