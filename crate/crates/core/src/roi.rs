//! Torso ROIs from joint tracks, and the six raw channels.
//!
//! Each channel is the mean non-zero depth inside one region minus the
//! depth of one stable point, so whole-body motion toward the camera
//! cancels and chest-wall motion remains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ChannelId, DepthFrameSequence, Joint, JointTrack, RawChannels, Region, StablePoint};

/// Which lateral half of the torso forms the chest-wall ROI (larger column
/// indices are `Right`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChestwallSide {
    Left,
    #[default]
    Right,
}

impl std::str::FromStr for ChestwallSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(ChestwallSide::Left),
            "right" => Ok(ChestwallSide::Right),
            _ => Err(Error::parameter(
                "chestwall_side",
                format!("expected left|right, got {s:?}"),
            )),
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub col0: usize,
    pub col1: usize,
    pub row0: usize,
    pub row1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.col1 - self.col0 + 1) * (self.row1 - self.row0 + 1)
    }

    /// Clip an unclipped rectangle to the frame; `None` if nothing remains.
    fn clipped(col0: i64, col1: i64, row0: i64, row1: i64, width: usize, height: usize) -> Option<Rect> {
        let c0 = col0.max(0);
        let c1 = col1.min(width as i64 - 1);
        let r0 = row0.max(0);
        let r1 = row1.min(height as i64 - 1);
        if c0 > c1 || r0 > r1 {
            return None;
        }
        Some(Rect {
            col0: c0 as usize,
            col1: c1 as usize,
            row0: r0 as usize,
            row1: r1 as usize,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRois {
    pub chest: Rect,
    pub abdomen: Rect,
    pub chest_wall: Rect,
    /// (column, row)
    pub pelvis: (usize, usize),
    pub nose: (usize, usize),
}

impl FrameRois {
    pub fn region(&self, r: Region) -> &Rect {
        match r {
            Region::Chest => &self.chest,
            Region::Abdomen => &self.abdomen,
            Region::ChestWall => &self.chest_wall,
        }
    }

    pub fn stable(&self, s: StablePoint) -> (usize, usize) {
        match s {
            StablePoint::Pelvis => self.pelvis,
            StablePoint::Nose => self.nose,
        }
    }
}

/// Per-frame ROIs; `None` marks an invalid frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSet {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Option<FrameRois>>,
}

impl RoiSet {
    pub fn valid_count(&self) -> usize {
        self.frames.iter().filter(|f| f.is_some()).count()
    }
}

fn round_i(v: f64) -> i64 {
    v.round() as i64
}

/// Geometry per frame:
/// * chest: shoulder row down to the spine_chest row, over the inner 80% of
///   the shoulder column span;
/// * abdomen: spine_chest row down to the spine_navel row, same columns;
/// * chest wall: one lateral half (midline to the outer chest column) over
///   the chest and abdomen rows.
///
/// All bounds are inclusive. A frame missing any of the six joints, with
/// rows out of anatomical order, or with a rectangle clipped to nothing is
/// invalid.
pub fn build_rois(joints: &JointTrack, width: usize, height: usize, side: ChestwallSide) -> RoiSet {
    let frames = (0..joints.len())
        .map(|t| frame_rois(joints, t, width, height, side))
        .collect();
    RoiSet { width, height, frames }
}

fn frame_rois(joints: &JointTrack, t: usize, width: usize, height: usize, side: ChestwallSide) -> Option<FrameRois> {
    let ls = joints.get(t, Joint::LeftShoulder)?;
    let rs = joints.get(t, Joint::RightShoulder)?;
    let sc = joints.get(t, Joint::SpineChest)?;
    let sn = joints.get(t, Joint::SpineNavel)?;
    let pelvis = joints.get(t, Joint::Pelvis)?;
    let nose = joints.get(t, Joint::Nose)?;

    let (xl, xr) = (ls.x.min(rs.x), ls.x.max(rs.x));
    let span = xr - xl;
    if !(span > 0.0) {
        return None;
    }
    let c0 = round_i(xl + 0.1 * span);
    let c1 = round_i(xr - 0.1 * span);
    let mid = round_i(0.5 * (xl + xr));
    let shoulder_row = round_i(0.5 * (ls.y + rs.y));
    let chest_row = round_i(sc.y);
    let navel_row = round_i(sn.y);
    if !(shoulder_row < chest_row && chest_row < navel_row) {
        return None;
    }

    let chest = Rect::clipped(c0, c1, shoulder_row, chest_row, width, height)?;
    let abdomen = Rect::clipped(c0, c1, chest_row, navel_row, width, height)?;
    let (w0, w1) = match side {
        ChestwallSide::Right => (mid, c1),
        ChestwallSide::Left => (c0, mid),
    };
    let chest_wall = Rect::clipped(w0, w1, shoulder_row, navel_row, width, height)?;
    if chest.row0 >= abdomen.row0 {
        return None;
    }

    let pixel = |p: crate::types::Point| -> Option<(usize, usize)> {
        let (x, y) = (round_i(p.x), round_i(p.y));
        (x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height).then_some((x as usize, y as usize))
    };
    Some(FrameRois {
        chest,
        abdomen,
        chest_wall,
        pelvis: pixel(pelvis)?,
        nose: pixel(nose)?,
    })
}

fn region_mean(depth: &DepthFrameSequence, t: usize, r: &Rect) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in r.row0..=r.row1 {
        for x in r.col0..=r.col1 {
            let d = depth.at(t, x, y);
            if d != 0 {
                sum += d as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Median of the non-zero depths in the 3×3 patch around `(x, y)`.
fn stable_depth(depth: &DepthFrameSequence, t: usize, (x, y): (usize, usize)) -> Option<f64> {
    let mut vals: Vec<u16> = Vec::with_capacity(9);
    for yy in y.saturating_sub(1)..=(y + 1).min(depth.height - 1) {
        for xx in x.saturating_sub(1)..=(x + 1).min(depth.width - 1) {
            let d = depth.at(t, xx, yy);
            if d != 0 {
                vals.push(d);
            }
        }
    }
    if vals.is_empty() {
        return None;
    }
    vals.sort_unstable();
    let m = vals.len() / 2;
    Some(if vals.len() % 2 == 1 {
        vals[m] as f64
    } else {
        0.5 * (vals[m - 1] as f64 + vals[m] as f64)
    })
}

pub fn extract_raw_channels(depth: &DepthFrameSequence, rois: &RoiSet) -> Result<RawChannels> {
    let n = depth.frame_count();
    if rois.frames.len() != n {
        return Err(Error::parameter(
            "rois",
            format!("{} ROI frames for {n} depth frames", rois.frames.len()),
        ));
    }
    let mut channels: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; n]);
    let mut valid: [Vec<bool>; 6] = std::array::from_fn(|_| vec![false; n]);
    let mut any = false;
    for (t, frame) in rois.frames.iter().enumerate() {
        let Some(f) = frame else { continue };
        let means = [Region::Chest, Region::Abdomen, Region::ChestWall].map(|r| region_mean(depth, t, f.region(r)));
        let stables = [StablePoint::Pelvis, StablePoint::Nose].map(|s| stable_depth(depth, t, f.stable(s)));
        for id in ChannelId::ALL {
            let ri = id.index() / 2;
            let si = id.index() % 2;
            if let (Some(m), Some(s)) = (means[ri], stables[si]) {
                channels[id.index()][t] = m - s;
                valid[id.index()][t] = true;
                any = true;
            }
        }
    }
    if !any {
        return Err(Error::EmptySignal("no frame yields a valid ROI measurement".into()));
    }
    Ok(RawChannels {
        frame_rate: depth.frame_rate,
        channels,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Point;
    use proptest::prelude::*;

    fn reference_joints(frames: usize) -> JointTrack {
        let mut j = JointTrack::with_frames(frames);
        for t in 0..frames {
            j.set(t, Joint::LeftShoulder, Some(Point::new(40.0, 50.0)));
            j.set(t, Joint::RightShoulder, Some(Point::new(80.0, 50.0)));
            j.set(t, Joint::SpineChest, Some(Point::new(60.0, 70.0)));
            j.set(t, Joint::SpineNavel, Some(Point::new(60.0, 100.0)));
            j.set(t, Joint::Pelvis, Some(Point::new(60.0, 120.0)));
            j.set(t, Joint::Nose, Some(Point::new(60.0, 30.0)));
        }
        j
    }

    #[test]
    fn reference_geometry() {
        // Worked by hand: span 40 → inner 80% is [44, 76]; midline 60.
        let set = build_rois(&reference_joints(1), 160, 160, ChestwallSide::Right);
        let f = set.frames[0].unwrap();
        assert_eq!(
            f.chest,
            Rect {
                col0: 44,
                col1: 76,
                row0: 50,
                row1: 70
            }
        );
        assert_eq!(
            f.abdomen,
            Rect {
                col0: 44,
                col1: 76,
                row0: 70,
                row1: 100
            }
        );
        assert_eq!(
            f.chest_wall,
            Rect {
                col0: 60,
                col1: 76,
                row0: 50,
                row1: 100
            }
        );
        assert_eq!(f.pelvis, (60, 120));
        assert_eq!(f.nose, (60, 30));

        let left = build_rois(&reference_joints(1), 160, 160, ChestwallSide::Left);
        assert_eq!(
            left.frames[0].unwrap().chest_wall,
            Rect {
                col0: 44,
                col1: 60,
                row0: 50,
                row1: 100
            }
        );
    }

    #[test]
    fn missing_pelvis_invalidates_frame() {
        let mut j = reference_joints(3);
        j.set(1, Joint::Pelvis, None);
        let set = build_rois(&j, 160, 160, ChestwallSide::Right);
        assert!(set.frames[0].is_some());
        assert!(set.frames[1].is_none());
        assert_eq!(set.valid_count(), 2);
    }

    #[test]
    fn rectangles_clipped_to_frame() {
        // 72 columns: the chest columns [44, 76] clip to [44, 71].
        let set = build_rois(&reference_joints(1), 72, 160, ChestwallSide::Right);
        let f = set.frames[0].unwrap();
        assert_eq!(f.chest.col1, 71);
        assert_eq!(f.chest_wall.col1, 71);

        // Torso entirely right of a 30-column frame: nothing remains.
        let set = build_rois(&reference_joints(1), 30, 160, ChestwallSide::Right);
        assert!(set.frames[0].is_none());
    }

    fn uniform_depth(w: usize, h: usize, frames: usize, v: u16) -> DepthFrameSequence {
        DepthFrameSequence::new(w, h, 30.0, vec![v; w * h * frames]).unwrap()
    }

    #[test]
    fn constant_field_difference() {
        let mut depth = uniform_depth(160, 160, 2, 2000);
        for t in 0..2 {
            for y in 119..=121 {
                for x in 59..=61 {
                    depth.data_mut()[(t * 160 + y) * 160 + x] = 1950;
                }
            }
        }
        let rois = build_rois(&reference_joints(2), 160, 160, ChestwallSide::Right);
        let raw = extract_raw_channels(&depth, &rois).unwrap();
        for id in ChannelId::ALL {
            let expected = if id.stable == StablePoint::Pelvis { 50.0 } else { 0.0 };
            assert_eq!(raw.channel(id), &[expected, expected], "{id}");
        }
    }

    #[test]
    fn zero_pixels_excluded_from_mean() {
        // 3×1 ROI {1000, 0, 1002} → mean 1001; stable 901 → 100.
        let mut j = JointTrack::with_frames(2);
        for t in 0..2 {
            j.set(t, Joint::LeftShoulder, Some(Point::new(0.0, 0.0)));
            j.set(t, Joint::RightShoulder, Some(Point::new(2.5, 0.0)));
            j.set(t, Joint::SpineChest, Some(Point::new(1.0, 1.0)));
            j.set(t, Joint::SpineNavel, Some(Point::new(1.0, 2.0)));
            j.set(t, Joint::Pelvis, Some(Point::new(4.0, 4.0)));
            j.set(t, Joint::Nose, Some(Point::new(4.0, 4.0)));
        }
        let rois = build_rois(&j, 6, 6, ChestwallSide::Right);
        let f = rois.frames[0].unwrap();
        // inner 80% of [0, 2.5] is [0.25, 2.25] → columns [0, 2]; rows [0, 1]
        assert_eq!(
            f.chest,
            Rect {
                col0: 0,
                col1: 2,
                row0: 0,
                row1: 1
            }
        );
        let mut data = vec![0u16; 6 * 6 * 2];
        for t in 0..2 {
            let base = t * 36;
            data[base..base + 3].copy_from_slice(&[1000, 0, 1002]);
            for y in 3..6 {
                for x in 3..6 {
                    data[base + y * 6 + x] = 901;
                }
            }
        }
        let depth = DepthFrameSequence::new(6, 6, 30.0, data).unwrap();
        let raw = extract_raw_channels(&depth, &rois).unwrap();
        assert_eq!(raw.channel(ChannelId::ALL[0]), &[100.0, 100.0]);
    }

    #[test]
    fn all_invalid_frames_is_empty_signal() {
        let mut j = reference_joints(2);
        j.set(0, Joint::Nose, None);
        j.set(1, Joint::Nose, None);
        let rois = build_rois(&j, 160, 160, ChestwallSide::Right);
        let err = extract_raw_channels(&uniform_depth(160, 160, 2, 1000), &rois).unwrap_err();
        assert!(matches!(err, Error::EmptySignal(_)));
    }

    #[test]
    fn mask_marks_invalid_frames() {
        let mut j = reference_joints(4);
        j.set(2, Joint::SpineNavel, None);
        let rois = build_rois(&j, 160, 160, ChestwallSide::Right);
        let raw = extract_raw_channels(&uniform_depth(160, 160, 4, 1500), &rois).unwrap();
        for c in 0..6 {
            assert_eq!(raw.valid[c], vec![true, true, false, true]);
            assert_eq!(raw.channels[c].len(), 4);
        }
    }

    proptest! {
        #[test]
        fn constant_offset_leaves_channels_unchanged(
            seed_vals in proptest::collection::vec(500u16..3000, 160 * 160 / 64),
            offset in 1u16..2000,
        ) {
            // coarse 8×8 blocks so the field is non-trivial but cheap
            let mut data = vec![0u16; 160 * 160 * 2];
            for t in 0..2 {
                for y in 0..160 {
                    for x in 0..160 {
                        data[(t * 160 + y) * 160 + x] = seed_vals[(y / 8) * 20 + x / 8] + t as u16;
                    }
                }
            }
            let shifted: Vec<u16> = data.iter().map(|v| v + offset).collect();
            let rois = build_rois(&reference_joints(2), 160, 160, ChestwallSide::Right);
            let a = extract_raw_channels(&DepthFrameSequence::new(160, 160, 30.0, data).unwrap(), &rois).unwrap();
            let b = extract_raw_channels(&DepthFrameSequence::new(160, 160, 30.0, shifted).unwrap(), &rois).unwrap();
            for c in 0..6 {
                for t in 0..2 {
                    prop_assert!((a.channels[c][t] - b.channels[c][t]).abs() < 1e-9);
                    prop_assert!(a.channels[c][t].is_finite());
                }
            }
        }
    }
}
