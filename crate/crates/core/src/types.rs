//! Domain types shared by every stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Breathing class. `Deep` is the positive class for all metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Deep,
}

impl Label {
    /// +1 for deep, −1 for normal.
    pub fn sign(self) -> f64 {
        match self {
            Label::Normal => -1.0,
            Label::Deep => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Deep => "deep",
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "deep" => Ok(Label::Deep),
            other => Err(Error::format("label", format!("expected normal|deep, got {other:?}"))),
        }
    }
}

/// Tracked body joints consumed from the skeleton tracker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Joint {
    Nose,
    Pelvis,
    LeftShoulder,
    RightShoulder,
    SpineChest,
    SpineNavel,
}

impl Joint {
    pub const ALL: [Joint; 6] = [
        Joint::Nose,
        Joint::Pelvis,
        Joint::LeftShoulder,
        Joint::RightShoulder,
        Joint::SpineChest,
        Joint::SpineNavel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Nose => "nose",
            Joint::Pelvis => "pelvis",
            Joint::LeftShoulder => "left_shoulder",
            Joint::RightShoulder => "right_shoulder",
            Joint::SpineChest => "spine_chest",
            Joint::SpineNavel => "spine_navel",
        }
    }

    pub fn from_name(name: &str) -> Option<Joint> {
        Joint::ALL.into_iter().find(|j| j.name() == name)
    }
}

/// A 2D pixel location: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Per-frame joint locations; `None` marks a tracking dropout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointTrack {
    pub frames: Vec<[Option<Point>; 6]>,
}

impl JointTrack {
    pub fn with_frames(n: usize) -> Self {
        JointTrack {
            frames: vec![[None; 6]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, frame: usize, joint: Joint) -> Option<Point> {
        self.frames[frame][joint.index()]
    }

    pub fn set(&mut self, frame: usize, joint: Joint, p: Option<Point>) {
        self.frames[frame][joint.index()] = p;
    }

    /// Every present location must lie inside a `width`×`height` frame.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        for (t, frame) in self.frames.iter().enumerate() {
            for joint in Joint::ALL {
                if let Some(p) = frame[joint.index()] {
                    let inside = p.x.is_finite()
                        && p.y.is_finite()
                        && p.x >= 0.0
                        && p.y >= 0.0
                        && p.x <= (width - 1) as f64
                        && p.y <= (height - 1) as f64;
                    if !inside {
                        return Err(Error::format(
                            format!("joints.{}", joint.name()),
                            format!("frame {t}: ({}, {}) outside {width}x{height}", p.x, p.y),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Depth video: `frame_count` frames of `height` rows × `width` columns,
/// millimetres, 0 meaning no reading. Stored frame-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrameSequence {
    pub width: usize,
    pub height: usize,
    pub frame_rate: f64,
    data: Vec<u16>,
}

impl DepthFrameSequence {
    pub fn new(width: usize, height: usize, frame_rate: f64, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::format("width", "frame dimensions must be positive"));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::format("frame_rate", format!("must be > 0, got {frame_rate}")));
        }
        let frame_len = width * height;
        if !data.len().is_multiple_of(frame_len) {
            return Err(Error::format(
                "depth",
                format!("{} values is not a multiple of {width}x{height}", data.len()),
            ));
        }
        if data.len() / frame_len < 2 {
            return Err(Error::format("frame_count", "at least 2 frames required"));
        }
        Ok(DepthFrameSequence {
            width,
            height,
            frame_rate,
            data,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.data.len() / (self.width * self.height)
    }

    pub fn frame(&self, t: usize) -> &[u16] {
        let n = self.width * self.height;
        &self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn at(&self, t: usize, x: usize, y: usize) -> u16 {
        self.data[(t * self.height + y) * self.width + x]
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }
}

/// One recorded walk.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSample {
    pub id: String,
    pub subject_id: String,
    pub label: Label,
    pub depth: DepthFrameSequence,
    pub joints: JointTrack,
}

impl DepthSample {
    pub fn validate(&self) -> Result<()> {
        if self.joints.len() != self.depth.frame_count() {
            return Err(Error::format(
                "joints.frame",
                format!(
                    "joint track has {} frames, depth has {}",
                    self.joints.len(),
                    self.depth.frame_count()
                ),
            ));
        }
        self.joints.validate(self.depth.width, self.depth.height)
    }
}

/// Breath-related torso region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Chest,
    Abdomen,
    ChestWall,
}

/// Reference landmark subtracted from a region's mean depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StablePoint {
    Pelvis,
    Nose,
}

/// One of the six (region, stable point) channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChannelId {
    pub region: Region,
    pub stable: StablePoint,
}

impl ChannelId {
    /// Fixed channel order; also the CSV column order and the selection
    /// tie-break order.
    pub const ALL: [ChannelId; 6] = [
        ChannelId::new(Region::Chest, StablePoint::Pelvis),
        ChannelId::new(Region::Chest, StablePoint::Nose),
        ChannelId::new(Region::Abdomen, StablePoint::Pelvis),
        ChannelId::new(Region::Abdomen, StablePoint::Nose),
        ChannelId::new(Region::ChestWall, StablePoint::Pelvis),
        ChannelId::new(Region::ChestWall, StablePoint::Nose),
    ];

    pub const fn new(region: Region, stable: StablePoint) -> Self {
        ChannelId { region, stable }
    }

    pub fn index(self) -> usize {
        let r = match self.region {
            Region::Chest => 0,
            Region::Abdomen => 1,
            Region::ChestWall => 2,
        };
        let s = match self.stable {
            StablePoint::Pelvis => 0,
            StablePoint::Nose => 1,
        };
        2 * r + s
    }

    pub fn from_index(i: usize) -> ChannelId {
        ChannelId::ALL[i]
    }

    pub fn name(self) -> &'static str {
        [
            "chest_pelvis",
            "chest_nose",
            "abdomen_pelvis",
            "abdomen_nose",
            "chestwall_pelvis",
            "chestwall_nose",
        ][self.index()]
    }

    pub fn from_name(name: &str) -> Option<ChannelId> {
        ChannelId::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ChannelId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ChannelId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ChannelId::from_name(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown channel {s:?}")))
    }
}

/// Six raw channels from ROI differencing. `valid[c][t]` is false where the
/// sample could not be measured.
#[derive(Debug, Clone, PartialEq)]
pub struct RawChannels {
    pub frame_rate: f64,
    pub channels: [Vec<f64>; 6],
    pub valid: [Vec<bool>; 6],
}

impl RawChannels {
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, id: ChannelId) -> &[f64] {
        &self.channels[id.index()]
    }
}

/// Six preprocessed channels. Channels that could not be repaired are
/// zero-filled and marked `usable = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanChannels {
    pub frame_rate: f64,
    pub channels: [Vec<f64>; 6],
    pub usable: [bool; 6],
}

impl CleanChannels {
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn usable_ids(&self) -> impl Iterator<Item = ChannelId> + '_ {
        ChannelId::ALL.into_iter().filter(|c| self.usable[c.index()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_index_roundtrip() {
        for (i, c) in ChannelId::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ChannelId::from_name(c.name()), Some(*c));
        }
    }

    #[test]
    fn depth_sequence_rejects_single_frame() {
        assert!(DepthFrameSequence::new(2, 2, 30.0, vec![0; 4]).is_err());
        assert!(DepthFrameSequence::new(2, 2, 0.0, vec![0; 8]).is_err());
        let d = DepthFrameSequence::new(2, 2, 30.0, (0..8).collect()).unwrap();
        assert_eq!(d.frame_count(), 2);
        assert_eq!(d.at(1, 1, 0), 5);
    }

    #[test]
    fn joint_outside_frame_rejected() {
        let mut j = JointTrack::with_frames(1);
        j.set(0, Joint::Nose, Some(Point::new(4.0, 1.0)));
        assert!(j.validate(4, 4).is_err());
        j.set(0, Joint::Nose, Some(Point::new(3.0, 3.0)));
        assert!(j.validate(4, 4).is_ok());
    }
}
