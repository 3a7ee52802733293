//! Digital Butterworth bandpass design and zero-phase second-order-section
//! filtering.
//!
//! Design follows the classical route: analog low-pass prototype poles,
//! low-pass to band-pass transform, bilinear transform with pre-warped
//! corners, then pairing into biquads.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = self.a[0] + zi * (self.a[1] + zi * self.a[2]);
        num / den
    }

    fn dc_gain(&self) -> f64 {
        let den = self.a[0] + self.a[1] + self.a[2];
        (self.b[0] + self.b[1] + self.b[2]) / den
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Complex response at `freq` Hz for sampling rate `fs`.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq / fs);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    /// Single-pass causal filtering, direct form II transposed, starting
    /// from the steady state of a constant input `x[0]`.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = x.first().copied().unwrap_or(0.0);
        for s in &self.sections {
            // steady-state state for a constant input `level`
            let g = s.dc_gain();
            let mut z1 = (g - s.b[0]) * level;
            let mut z2 = (s.b[2] - s.a[2] * g) * level;
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + z1;
                z1 = s.b[1] * xin - s.a[1] * out + z2;
                z2 = s.b[2] * xin - s.a[2] * out;
                *v = out;
            }
            level *= g;
        }
        y
    }

    /// Forward-backward filtering with odd-reflection padding of `pad`
    /// samples on each side (clamped to `len - 1`).
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = pad.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for k in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[k]);
        }
        ext.extend_from_slice(x);
        for k in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - k]);
        }
        let mut y = self.filter(&ext);
        y.reverse();
        let mut y = self.filter(&y);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

/// Butterworth bandpass of total order `order` (even; `order / 2` biquads)
/// with corners `low`..`high` Hz.
pub fn butter_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<Sos> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::parameter(
            "order",
            format!("bandpass order must be even and > 0, got {order}"),
        ));
    }
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::parameter("fs", format!("sampling rate must be > 0, got {fs}")));
    }
    if !(low > 0.0 && low < high && high < fs / 2.0) {
        return Err(Error::parameter(
            "fs",
            format!("passband [{low}, {high}] Hz needs 0 < low < high < fs/2 = {}", fs / 2.0),
        ));
    }
    let n = order / 2;
    let fs2 = 2.0 * fs;
    let w1 = fs2 * (PI * low / fs).tan();
    let w2 = fs2 * (PI * high / fs).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;

    // Analog prototype poles on the left half of the unit circle.
    let proto: Vec<Complex64> = (0..n)
        .map(|k| {
            let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect();

    // Low-pass → band-pass: each prototype pole splits into two.
    let mut poles = Vec::with_capacity(2 * n);
    for p in &proto {
        let half = p * (bw / 2.0);
        let disc = (half * half - w0sq).sqrt();
        poles.push(half + disc);
        poles.push(half - disc);
    }
    // n zeros at s = 0 and n at infinity; analog gain bw^n.
    let mut gain = bw.powi(n as i32);

    // Bilinear transform.
    let fs2c = Complex64::new(fs2, 0.0);
    let zpoles: Vec<Complex64> = poles.iter().map(|p| (fs2c + p) / (fs2c - p)).collect();
    let num: Complex64 = std::iter::repeat_n(fs2c, n).product();
    let den: Complex64 = poles.iter().map(|p| fs2c - p).product();
    gain *= (num / den).re;

    // Pair conjugate poles; every section gets one zero at +1 and one at −1.
    let mut upper: Vec<Complex64> = zpoles.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut real: Vec<f64> = zpoles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    upper.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    real.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sections = Vec::with_capacity(n);
    for p in upper {
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        });
    }
    for pair in real.chunks(2) {
        let (p, q) = (pair[0], pair.get(1).copied().unwrap_or(0.0));
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(p + q), p * q],
        });
    }
    if sections.len() != n {
        return Err(Error::Numerical("bandpass pole pairing failed".into()));
    }
    for c in sections[0].b.iter_mut() {
        *c *= gain;
    }
    Ok(Sos { sections })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center_gain(order: usize) -> f64 {
        let fs = 30.0;
        let sos = butter_bandpass(order, 0.167, 0.667, fs).unwrap();
        // geometric centre of the pre-warped band maps to unit gain
        let w1 = (PI * 0.167 / fs).tan();
        let w2 = (PI * 0.667 / fs).tan();
        let fc = (w1 * w2).sqrt().atan() * fs / PI;
        sos.response(fc, fs).norm()
    }

    #[test]
    fn unit_gain_at_band_centre() {
        for order in [2, 4, 6, 8] {
            assert!((center_gain(order) - 1.0).abs() < 1e-9, "order {order}");
        }
    }

    #[test]
    fn half_power_at_corners() {
        let fs = 30.0;
        let sos = butter_bandpass(4, 0.167, 0.667, fs).unwrap();
        for f in [0.167, 0.667] {
            let g = sos.response(f, fs).norm();
            assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "{f}: {g}");
        }
        assert_eq!(sos.sections.len(), 2);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(butter_bandpass(3, 0.167, 0.667, 30.0).is_err());
        assert!(butter_bandpass(4, 0.167, 0.667, 1.3).is_err());
        assert!(butter_bandpass(4, 0.667, 0.167, 30.0).is_err());
    }

    #[test]
    fn steady_state_start_has_no_transient_for_constant() {
        let sos = butter_bandpass(4, 0.167, 0.667, 30.0).unwrap();
        let y = sos.filter(&vec![3.0; 200]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }
}
