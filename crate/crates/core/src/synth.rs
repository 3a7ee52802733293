//! Synthetic walking-breath recordings with known ground truth.
//!
//! A torso approaches the camera from about 6 m to 1 m. Every body pixel
//! carries the (integer-millimetre) trunk distance plus a fixed surface
//! offset, the breathing displacement of its region, gait-induced
//! deformation and sensor noise; the final value is rounded to whole
//! millimetres. Stable points (nose, pelvis) carry no breathing term.
//! Surface offsets include a per-pixel sub-millimetre texture so region
//! means are not stuck on the millimetre grid.
//!
//! Gait model: a vertical bob common to the whole body (cancelled by
//! differencing), plus zone-specific deformation at stride and step
//! frequency with random phases for chest, abdomen, the lateral chest wall,
//! head and pelvis. Each zone also sways slowly inside the breathing band;
//! the sway is a sum of a dozen random in-band tones, close to band-limited
//! noise, so no bandpass can remove it and a weakly breathing region looks
//! less periodic than a strongly breathing one.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_io;
use crate::error::{Error, Result};
use crate::preprocess::{BAND_HIGH_HZ, BAND_LOW_HZ};
use crate::types::{DepthFrameSequence, DepthSample, Joint, JointTrack, Label, Point};

pub const WIDTH: usize = 32;
pub const HEIGHT: usize = 48;

// joint layout in pixels (column, row)
const NOSE: (f64, f64) = (16.0, 6.0);
const LEFT_SHOULDER: (f64, f64) = (7.0, 14.0);
const RIGHT_SHOULDER: (f64, f64) = (25.0, 14.0);
const SPINE_CHEST: (f64, f64) = (16.0, 23.0);
const SPINE_NAVEL: (f64, f64) = (16.0, 32.0);
const PELVIS: (f64, f64) = (16.0, 40.0);

const BACKGROUND_MM: f64 = 7500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitConfig {
    /// Step frequency range, Hz; the stride runs at half of it.
    pub step_frequency: [f64; 2],
    /// Whole-body vertical bob amplitude, mm.
    pub bob_amplitude: f64,
    /// Zone-specific deformation amplitude at the stride frequency, mm.
    pub stride_deformation: f64,
    /// Zone-specific deformation amplitude at the step frequency, mm.
    pub step_deformation: f64,
    /// Zone-specific slow sway inside the breathing band (clothing, trunk
    /// twist, head nodding, pelvic tilt), RMS mm per zone.
    pub sway: f64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        GaitConfig {
            step_frequency: [1.4, 2.0],
            bob_amplitude: 25.0,
            stride_deformation: 6.0,
            step_deformation: 4.0,
            sway: 2.0,
        }
    }
}

impl GaitConfig {
    pub fn off() -> Self {
        GaitConfig {
            bob_amplitude: 0.0,
            stride_deformation: 0.0,
            step_deformation: 0.0,
            sway: 0.0,
            ..GaitConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: usize,
    pub walks_per_class: usize,
    pub fs: f64,
    /// Walk duration range, seconds.
    pub duration: [f64; 2],
    /// Per-subject breathing rate range, Hz.
    pub rate: [f64; 2],
    /// Per-subject normal-breath amplitude range, mm.
    pub normal_amplitude: [f64; 2],
    pub deep_multiplier: f64,
    /// Share of the breathing amplitude seen by the less active region
    /// (chest or abdomen) relative to the dominant one.
    pub secondary_weight: [f64; 2],
    /// Fraction of subjects breathing mainly with the abdomen.
    pub abdominal_fraction: f64,
    pub gait: GaitConfig,
    /// Per-pixel Gaussian sensor noise, mm.
    pub sensor_noise: f64,
    /// Per-pixel probability of a missing (zero) reading.
    pub dropout: f64,
    pub start_distance_mm: f64,
    pub end_distance_mm: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 15,
            walks_per_class: 3,
            fs: 30.0,
            duration: [6.0, 18.0],
            rate: [0.25, 0.45],
            normal_amplitude: [4.0, 5.0],
            deep_multiplier: 2.5,
            secondary_weight: [0.2, 0.5],
            abdominal_fraction: 0.5,
            gait: GaitConfig::default(),
            sensor_noise: 3.0,
            dropout: 0.01,
            start_distance_mm: 6000.0,
            end_distance_mm: 1000.0,
            seed: 7,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && lo <= r[0] && r[0] <= r[1] && r[1] <= hi) {
        return Err(Error::parameter(
            name,
            format!("range {r:?} must be ordered inside [{lo}, {hi}]"),
        ));
    }
    Ok(())
}

impl SynthConfig {
    /// No gait, no sensor noise, no dropout, and the same breathing
    /// amplitude in chest and abdomen. Without noise every channel is a
    /// scaled copy of one sine, the periodicity index ties across channels,
    /// and only uniform breathing makes the tie harmless.
    pub fn noise_free() -> Self {
        SynthConfig {
            gait: GaitConfig::off(),
            secondary_weight: [1.0, 1.0],
            sensor_noise: 0.0,
            dropout: 0.0,
            ..SynthConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.walks_per_class == 0 {
            return Err(Error::parameter(
                "subjects",
                "need at least one subject and one walk per class",
            ));
        }
        if !(self.fs.is_finite() && self.fs > 2.0 * BAND_HIGH_HZ) {
            return Err(Error::parameter("fs", "must exceed twice the upper band edge"));
        }
        check_range("duration", self.duration, 6.0, 18.0)?;
        check_range("rate", self.rate, BAND_LOW_HZ, BAND_HIGH_HZ)?;
        check_range("normal_amplitude", self.normal_amplitude, 0.0, 1000.0)?;
        check_range("secondary_weight", self.secondary_weight, 0.0, 1.0)?;
        check_range("gait.step_frequency", self.gait.step_frequency, 0.0, self.fs / 2.0)?;
        if !(self.deep_multiplier.is_finite() && self.deep_multiplier > 0.0) {
            return Err(Error::parameter("deep_multiplier", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.abdominal_fraction) {
            return Err(Error::parameter("abdominal_fraction", "must be in [0, 1]"));
        }
        for (name, v) in [
            ("gait.bob_amplitude", self.gait.bob_amplitude),
            ("gait.stride_deformation", self.gait.stride_deformation),
            ("gait.step_deformation", self.gait.step_deformation),
            ("gait.sway", self.gait.sway),
            ("sensor_noise", self.sensor_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::parameter(name, "must be finite and >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::parameter("dropout", "must be in [0, 1)"));
        }
        if !(self.end_distance_mm >= 500.0
            && self.start_distance_mm <= 7000.0
            && self.end_distance_mm <= self.start_distance_mm)
        {
            return Err(Error::parameter("distance", "need 500 <= end <= start <= 7000 mm"));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.subjects * self.walks_per_class * 2
    }
}

/// Ground truth for one walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTruth {
    pub id: String,
    pub subject_id: String,
    pub label: Label,
    pub frames: usize,
    pub rate_hz: f64,
    pub amplitude_mm: f64,
    pub phase: f64,
    pub chest_weight: f64,
    pub abdomen_weight: f64,
}

impl WalkTruth {
    /// Breathing displacement at frame `t` before region weighting.
    pub fn breath(&self, t: usize, fs: f64) -> f64 {
        self.amplitude_mm * (2.0 * PI * self.rate_hz * t as f64 / fs + self.phase).sin()
    }
}

fn subject_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Index of a sample in dataset order: subject-major, normal walks first.
pub fn sample_index(cfg: &SynthConfig, subject: usize, label: Label, walk: usize) -> usize {
    let class = usize::from(label == Label::Deep);
    (subject * 2 + class) * cfg.walks_per_class + walk
}

/// Ground truth of every walk in dataset order.
pub fn plan(cfg: &SynthConfig) -> Result<Vec<WalkTruth>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.sample_count());
    for s in 0..cfg.subjects {
        let mut rng = subject_rng(cfg.seed, 2 * s as u64);
        let rate = uniform(&mut rng, cfg.rate);
        let amp = uniform(&mut rng, cfg.normal_amplitude);
        let secondary = uniform(&mut rng, cfg.secondary_weight);
        let abdominal = rng.random::<f64>() < cfg.abdominal_fraction;
        let (chest_weight, abdomen_weight) = if abdominal { (secondary, 1.0) } else { (1.0, secondary) };
        for label in [Label::Normal, Label::Deep] {
            for w in 0..cfg.walks_per_class {
                let duration = uniform(&mut rng, cfg.duration);
                let frames = ((duration * cfg.fs).round() as usize).max(2);
                // small walk-to-walk variation around the subject's habits
                let rate_hz = (rate * rng.random_range(0.95..1.05)).clamp(cfg.rate[0], cfg.rate[1]);
                let mult = if label == Label::Deep { cfg.deep_multiplier } else { 1.0 };
                out.push(WalkTruth {
                    id: format!("s{:02}_{}_{}", s + 1, label.as_str(), w + 1),
                    subject_id: format!("s{:02}", s + 1),
                    label,
                    frames,
                    rate_hz,
                    amplitude_mm: amp * mult,
                    phase: rng.random_range(0.0..2.0 * PI),
                    chest_weight,
                    abdomen_weight,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Wave {
    fn at(&self, t: f64) -> f64 {
        self.amp * (2.0 * PI * self.freq * t + self.phase).sin()
    }
}

/// Deformation zones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Zone {
    Chest,
    Abdomen,
    Lateral,
    Head,
    Pelvis,
}

const ZONES: [Zone; 5] = [Zone::Chest, Zone::Abdomen, Zone::Lateral, Zone::Head, Zone::Pelvis];

/// Body part under a pixel, or `None` for background.
fn body_part(x: usize, y: usize) -> Option<Zone> {
    let (x, y) = (x as f64, y as f64);
    let head = (x - NOSE.0).abs() <= 5.0 && (y - NOSE.1).abs() <= 5.0;
    if head {
        return Some(Zone::Head);
    }
    let in_torso =
        x >= LEFT_SHOULDER.0 - 2.0 && x <= RIGHT_SHOULDER.0 + 2.0 && y >= LEFT_SHOULDER.1 - 1.0 && y <= PELVIS.1 + 4.0;
    if !in_torso {
        return None;
    }
    Some(if y <= SPINE_CHEST.1 {
        Zone::Chest
    } else if y <= SPINE_NAVEL.1 {
        Zone::Abdomen
    } else {
        Zone::Pelvis
    })
}

/// Render one walk.
pub fn render(cfg: &SynthConfig, truth: &WalkTruth, index: usize) -> Result<DepthSample> {
    let mut rng = subject_rng(cfg.seed, 2 * cfg.subjects as u64 + index as u64 + 1);
    let fs = cfg.fs;
    let n = truth.frames;
    let npx = WIDTH * HEIGHT;

    // static surface: gentle curvature plus sub-millimetre texture
    let surface: Vec<f64> = (0..npx)
        .map(|p| {
            let (x, y) = ((p % WIDTH) as f64, (p / WIDTH) as f64);
            let curv = 0.04 * (x - 16.0).powi(2) + 0.01 * (y - 24.0).powi(2);
            curv + rng.random::<f64>()
        })
        .collect();
    let parts: Vec<Option<Zone>> = (0..npx).map(|p| body_part(p % WIDTH, p / WIDTH)).collect();
    let lateral: Vec<bool> = (0..npx)
        .map(|p| {
            let (x, y) = (p % WIDTH, p / WIDTH);
            x as f64 > SPINE_CHEST.0 && y as f64 >= RIGHT_SHOULDER.1 && y as f64 <= SPINE_NAVEL.1
        })
        .collect();

    let g = &cfg.gait;
    let step = uniform(&mut rng, g.step_frequency);
    let stride = step / 2.0;
    let bob = Wave {
        amp: g.bob_amplitude,
        freq: step,
        phase: rng.random_range(0.0..2.0 * PI),
    };
    let mut zone_waves = [[Wave {
        amp: 0.0,
        freq: 0.0,
        phase: 0.0,
    }; 2]; 5];
    for waves in zone_waves.iter_mut() {
        waves[0] = Wave {
            amp: g.stride_deformation * rng.random_range(0.5..1.0),
            freq: stride,
            phase: rng.random_range(0.0..2.0 * PI),
        };
        waves[1] = Wave {
            amp: g.step_deformation * rng.random_range(0.5..1.0),
            freq: step,
            phase: rng.random_range(0.0..2.0 * PI),
        };
    }
    const SWAY_TONES: usize = 12;
    let mut sway_waves = [[Wave {
        amp: 0.0,
        freq: 0.0,
        phase: 0.0,
    }; SWAY_TONES]; 5];
    for waves in sway_waves.iter_mut() {
        for w in waves.iter_mut() {
            *w = Wave {
                // each tone carries an equal share of the sway power
                amp: g.sway * (2.0 / SWAY_TONES as f64).sqrt(),
                freq: rng.random_range(BAND_LOW_HZ..BAND_HIGH_HZ),
                phase: rng.random_range(0.0..2.0 * PI),
            };
        }
    }
    let zone_index = |z: Zone| ZONES.iter().position(|&q| q == z).unwrap();
    let noise =
        Normal::new(0.0, cfg.sensor_noise.max(0.0)).map_err(|e| Error::parameter("sensor_noise", e.to_string()))?;

    let mut data = vec![0u16; n * npx];
    let mut zone_now = [0.0; 5];
    for t in 0..n {
        let time = t as f64 / fs;
        let progress = if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 };
        let distance = cfg.start_distance_mm + (cfg.end_distance_mm - cfg.start_distance_mm) * progress;
        let trunk = (distance + bob.at(time)).round();
        for ((z, waves), sway) in zone_now.iter_mut().zip(&zone_waves).zip(&sway_waves) {
            *z = waves[0].at(time) + waves[1].at(time) + sway.iter().map(|w| w.at(time)).sum::<f64>();
        }
        let b = truth.breath(t, fs);
        let frame = &mut data[t * npx..(t + 1) * npx];
        for p in 0..npx {
            let value = match parts[p] {
                None => BACKGROUND_MM,
                Some(zone) => {
                    let breath = match zone {
                        Zone::Chest => truth.chest_weight * b,
                        Zone::Abdomen => truth.abdomen_weight * b,
                        _ => 0.0,
                    };
                    let mut deform = zone_now[zone_index(zone)];
                    if lateral[p] {
                        deform += zone_now[zone_index(Zone::Lateral)];
                    }
                    let sensor = if cfg.sensor_noise > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    trunk - (surface[p] + breath + deform + sensor).round()
                }
            };
            let dropped = cfg.dropout > 0.0 && rng.random::<f64>() < cfg.dropout;
            frame[p] = if dropped {
                0
            } else {
                value.clamp(1.0, u16::MAX as f64) as u16
            };
        }
    }

    let mut joints = JointTrack::with_frames(n);
    for t in 0..n {
        for (joint, (x, y)) in [
            (Joint::Nose, NOSE),
            (Joint::Pelvis, PELVIS),
            (Joint::LeftShoulder, LEFT_SHOULDER),
            (Joint::RightShoulder, RIGHT_SHOULDER),
            (Joint::SpineChest, SPINE_CHEST),
            (Joint::SpineNavel, SPINE_NAVEL),
        ] {
            joints.set(t, joint, Some(Point::new(x, y)));
        }
    }
    let sample = DepthSample {
        id: truth.id.clone(),
        subject_id: truth.subject_id.clone(),
        label: truth.label,
        depth: DepthFrameSequence::new(WIDTH, HEIGHT, fs, data)?,
        joints,
    };
    sample.validate()?;
    Ok(sample)
}

/// Render the whole dataset in memory, in dataset order.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<DepthSample>> {
    use rayon::prelude::*;
    let truths = plan(cfg)?;
    truths.par_iter().enumerate().map(|(i, t)| render(cfg, t, i)).collect()
}

pub const TRUTH_FILE: &str = "truth.json";
pub const SYNTH_CONFIG_FILE: &str = "synth_config.json";

/// Render the dataset straight to disk: one directory per sample, a
/// `manifest.json` listing them, the ground truth and the generating
/// config. Returns the manifest entries.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<Vec<String>> {
    use rayon::prelude::*;
    let truths = plan(cfg)?;
    data_io::create_dir(dir)?;
    truths
        .par_iter()
        .enumerate()
        .try_for_each(|(i, t)| data_io::write_depth_sample(&render(cfg, t, i)?, &dir.join(&t.id)))?;
    let entries: Vec<String> = truths.iter().map(|t| t.id.clone()).collect();
    data_io::write_manifest(&dir.join(data_io::MANIFEST_FILE), &entries)?;
    data_io::write_json(&dir.join(TRUTH_FILE), &truths)?;
    data_io::write_json(&dir.join(SYNTH_CONFIG_FILE), cfg)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::{build_rois, extract_raw_channels, ChestwallSide};
    use crate::types::ChannelId;

    fn small(cfg: SynthConfig) -> SynthConfig {
        SynthConfig {
            subjects: 2,
            walks_per_class: 1,
            ..cfg
        }
    }

    #[test]
    fn deterministic() {
        let cfg = small(SynthConfig::default());
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_dataset(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a[0].depth, other[0].depth);
    }

    #[test]
    fn plan_shape() {
        let cfg = SynthConfig::default();
        let p = plan(&cfg).unwrap();
        assert_eq!(p.len(), 90);
        assert!(p.iter().all(|w| (180..=540).contains(&w.frames)));
        assert!(p.iter().all(|w| (0.167..=0.667).contains(&w.rate_hz)));
        assert_eq!(p[sample_index(&cfg, 3, Label::Deep, 1)].id, "s04_deep_2");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn noise_free_channel_recovers_breathing() {
        let cfg = small(SynthConfig::noise_free());
        let truths = plan(&cfg).unwrap();
        for (i, truth) in truths.iter().enumerate() {
            let s = render(&cfg, truth, i).unwrap();
            let rois = build_rois(&s.joints, s.depth.width, s.depth.height, ChestwallSide::Right);
            let raw = extract_raw_channels(&s.depth, &rois).unwrap();
            let id = if truth.chest_weight >= truth.abdomen_weight {
                "chest_pelvis"
            } else {
                "abdomen_pelvis"
            };
            let ch = raw.channel(ChannelId::from_name(id).unwrap());
            let expected: Vec<f64> = (0..truth.frames).map(|t| -truth.breath(t, cfg.fs)).collect();
            let r = correlation(ch, &expected);
            assert!(r > 0.999, "{}: {r}", truth.id);
        }
    }

    #[test]
    fn deep_peak_to_peak_ratio() {
        let cfg = SynthConfig {
            subjects: 1,
            walks_per_class: 1,
            ..SynthConfig::noise_free()
        };
        let truths = plan(&cfg).unwrap();
        let p2p: Vec<f64> = truths
            .iter()
            .enumerate()
            .map(|(i, truth)| {
                let s = render(&cfg, truth, i).unwrap();
                let rois = build_rois(&s.joints, s.depth.width, s.depth.height, ChestwallSide::Right);
                let raw = extract_raw_channels(&s.depth, &rois).unwrap();
                let ch = raw.channel(ChannelId::from_name("chestwall_pelvis").unwrap());
                ch.iter().cloned().fold(f64::MIN, f64::max) - ch.iter().cloned().fold(f64::MAX, f64::min)
            })
            .collect();
        let ratio = p2p[1] / p2p[0];
        assert!((ratio / 2.5 - 1.0).abs() <= 0.1, "{ratio}");
    }

    #[test]
    fn rejects_bad_ranges() {
        let bad = SynthConfig {
            duration: [5.0, 10.0],
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            rate: [0.1, 0.3],
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
