//! On-disk formats.
//!
//! A sample directory holds three files:
//!
//! * `meta.json`: `{"width","height","frame_rate","frame_count","subject_id","label"}`
//! * `depth.bin`: `frame_count × height × width` little-endian `u16`
//!   millimetres, frame-major then row-major; 0 is a missing reading.
//! * `joints.csv`: `frame,joint,x,y`, one row per joint per frame, with
//!   empty `x,y` cells where the tracker lost the joint.
//!
//! The sample id is the directory name. Channel signals are CSV with a `t`
//! column in seconds followed by the six channel columns; an empty cell is a
//! masked sample.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    ChannelId, CleanChannels, DepthFrameSequence, DepthSample, Joint, JointTrack, Label, Point, RawChannels,
};

pub const META_FILE: &str = "meta.json";
pub const DEPTH_FILE: &str = "depth.bin";
pub const JOINTS_FILE: &str = "joints.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    width: usize,
    height: usize,
    frame_rate: f64,
    frame_count: usize,
    subject_id: String,
    label: Label,
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value))
}

/// Identity and label of a sample directory, without loading the depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub subject_id: String,
    pub label: Label,
}

pub fn read_sample_meta(dir: &Path) -> Result<SampleMeta> {
    let text = read_text(&dir.join(META_FILE))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::format(META_FILE, e.to_string()))?;
    Ok(SampleMeta {
        id: dir_name(dir),
        subject_id: meta.subject_id,
        label: meta.label,
    })
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn read_depth_sample(dir: &Path) -> Result<DepthSample> {
    let meta: Meta = {
        let text = read_text(&dir.join(META_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::format(META_FILE, e.to_string()))?
    };
    if meta.frame_count < 2 {
        return Err(Error::format("frame_count", "at least 2 frames required"));
    }

    let depth_path = dir.join(DEPTH_FILE);
    let bytes = fs::read(&depth_path).map_err(|e| Error::io(&depth_path, e))?;
    let expected = meta.width * meta.height * meta.frame_count * 2;
    if bytes.len() < expected {
        return Err(Error::format(
            DEPTH_FILE,
            format!("truncated: {} bytes, expected {expected}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            DEPTH_FILE,
            format!("{} trailing bytes beyond {expected}", bytes.len() - expected),
        ));
    }
    let data: Vec<u16> = bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    let depth = DepthFrameSequence::new(meta.width, meta.height, meta.frame_rate, data)?;

    let joints_text = read_text(&dir.join(JOINTS_FILE))?;
    let joints = parse_joints(&joints_text, meta.frame_count)?;

    let sample = DepthSample {
        id: dir_name(dir),
        subject_id: meta.subject_id,
        label: meta.label,
        depth,
        joints,
    };
    sample.validate()?;
    Ok(sample)
}

pub fn write_depth_sample(sample: &DepthSample, dir: &Path) -> Result<()> {
    sample.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        width: sample.depth.width,
        height: sample.depth.height,
        frame_rate: sample.depth.frame_rate,
        frame_count: sample.depth.frame_count(),
        subject_id: sample.subject_id.clone(),
        label: sample.label,
    };
    write_json(&dir.join(META_FILE), &meta)?;

    let mut bytes = Vec::with_capacity(sample.depth.data().len() * 2);
    for v in sample.depth.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let depth_path = dir.join(DEPTH_FILE);
    fs::write(&depth_path, bytes).map_err(|e| Error::io(&depth_path, e))?;

    write_text(&dir.join(JOINTS_FILE), &format_joints(&sample.joints))
}

pub fn format_joints(track: &JointTrack) -> String {
    let mut out = String::from("frame,joint,x,y\n");
    for (t, frame) in track.frames.iter().enumerate() {
        for joint in Joint::ALL {
            match frame[joint.index()] {
                Some(p) => out.push_str(&format!("{t},{},{},{}\n", joint.name(), p.x, p.y)),
                None => out.push_str(&format!("{t},{},,\n", joint.name())),
            }
        }
    }
    out
}

/// Rows may be sparse (absent joints omitted) or dense (empty cells), but
/// every frame `0..frame_count` must be mentioned at least once.
pub fn parse_joints(text: &str, frame_count: usize) -> Result<JointTrack> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(JOINTS_FILE, e.to_string()))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(format!("joints.{name}"), "missing column"))
    };
    let (cf, cj, cx, cy) = (col("frame")?, col("joint")?, col("x")?, col("y")?);

    let mut track = JointTrack::with_frames(frame_count);
    let mut seen_frame = vec![false; frame_count];
    let mut seen = vec![[false; 6]; frame_count];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(JOINTS_FILE, e.to_string()))?;
        let line = row + 2;
        let frame: usize = rec
            .get(cf)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::format("joints.frame", format!("line {line}: not a frame index")))?;
        if frame >= frame_count {
            return Err(Error::format(
                "joints.frame",
                format!("line {line}: frame {frame} but depth has {frame_count} frames (frame-count mismatch)"),
            ));
        }
        let name = rec.get(cj).unwrap_or("").trim();
        let joint = Joint::from_name(name)
            .ok_or_else(|| Error::format("joints.joint", format!("line {line}: unknown joint {name:?}")))?;
        if seen[frame][joint.index()] {
            return Err(Error::format(
                "joints.joint",
                format!("line {line}: duplicate {name} in frame {frame}"),
            ));
        }
        seen[frame][joint.index()] = true;
        seen_frame[frame] = true;

        let xs = rec.get(cx).unwrap_or("").trim();
        let ys = rec.get(cy).unwrap_or("").trim();
        let point = match (xs.is_empty(), ys.is_empty()) {
            (true, true) => None,
            (false, false) => {
                let x: f64 = xs
                    .parse()
                    .map_err(|_| Error::format("joints.x", format!("line {line}: {xs:?}")))?;
                let y: f64 = ys
                    .parse()
                    .map_err(|_| Error::format("joints.y", format!("line {line}: {ys:?}")))?;
                Some(Point::new(x, y))
            }
            _ => {
                return Err(Error::format(
                    "joints.x",
                    format!("line {line}: x and y must both be present or both empty"),
                ))
            }
        };
        track.set(frame, joint, point);
    }
    if let Some(missing) = seen_frame.iter().position(|s| !s) {
        return Err(Error::format(
            "joints.frame",
            format!("frame {missing} has no rows (frame-count mismatch with {frame_count} depth frames)"),
        ));
    }
    Ok(track)
}

fn channel_header() -> String {
    let mut h = String::from("t");
    for c in ChannelId::ALL {
        h.push(',');
        h.push_str(c.name());
    }
    h.push('\n');
    h
}

/// Serialise six equal-length columns; `valid(c, t) == false` writes an
/// empty cell.
fn format_channel_table(fs: f64, columns: &[Vec<f64>; 6], valid: impl Fn(usize, usize) -> bool) -> String {
    let n = columns[0].len();
    let mut out = channel_header();
    for t in 0..n {
        out.push_str(&format!("{}", t as f64 / fs));
        for (c, col) in columns.iter().enumerate() {
            out.push(',');
            if valid(c, t) {
                out.push_str(&format!("{}", col[t]));
            }
        }
        out.push('\n');
    }
    out
}

/// Prefix a CSV body with a `# config_hash=...` comment line. Readers in
/// this module skip `#` lines.
pub fn stamp_csv(config_hash: &str, body: &str) -> String {
    format!("# config_hash={config_hash}\n{body}")
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

struct ChannelTable {
    frame_rate: f64,
    columns: [Vec<f64>; 6],
    valid: [Vec<bool>; 6],
}

/// Sampling rate recovered from the time column, snapped to 1e-6 Hz.
fn frame_rate_from_times(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::format(
            "t",
            "at least 2 rows required to recover the sampling rate",
        ));
    }
    let span = times[times.len() - 1] - times[0];
    if !(span > 0.0) {
        return Err(Error::format("t", "time column must be increasing"));
    }
    let fs = (times.len() - 1) as f64 / span;
    Ok((fs * 1e6).round() / 1e6)
}

fn parse_channel_table(text: &str) -> Result<ChannelTable> {
    let mut rdr = csv_reader(text);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format("channels.csv", e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let t_col = find("t").ok_or_else(|| Error::format("t", "missing column"))?;
    let mut cols = [0usize; 6];
    for c in ChannelId::ALL {
        cols[c.index()] = find(c.name()).ok_or_else(|| Error::format(c.name(), "missing column"))?;
    }

    let mut times = Vec::new();
    let mut columns: [Vec<f64>; 6] = Default::default();
    let mut valid: [Vec<bool>; 6] = Default::default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("channels.csv", e.to_string()))?;
        let line = row + 2;
        let t: f64 = rec
            .get(t_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::format("t", format!("line {line}: not a number")))?;
        times.push(t);
        for c in ChannelId::ALL {
            let cell = rec.get(cols[c.index()]).unwrap_or("").trim();
            if cell.is_empty() {
                columns[c.index()].push(0.0);
                valid[c.index()].push(false);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::format(c.name(), format!("line {line}: {cell:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(Error::format(c.name(), format!("line {line}: non-finite value")));
                }
                columns[c.index()].push(v);
                valid[c.index()].push(true);
            }
        }
    }
    Ok(ChannelTable {
        frame_rate: frame_rate_from_times(&times)?,
        columns,
        valid,
    })
}

pub fn format_raw_channels(raw: &RawChannels) -> String {
    format_channel_table(raw.frame_rate, &raw.channels, |c, t| raw.valid[c][t])
}

pub fn parse_raw_channels(text: &str) -> Result<RawChannels> {
    let table = parse_channel_table(text)?;
    Ok(RawChannels {
        frame_rate: table.frame_rate,
        channels: table.columns,
        valid: table.valid,
    })
}

pub fn read_channels(path: &Path) -> Result<RawChannels> {
    parse_raw_channels(&read_text(path)?)
}

pub fn write_channels(path: &Path, raw: &RawChannels) -> Result<()> {
    write_text(path, &format_raw_channels(raw))
}

/// Unusable channels are written as empty columns.
pub fn format_clean_channels(clean: &CleanChannels) -> String {
    format_channel_table(clean.frame_rate, &clean.channels, |c, _| clean.usable[c])
}

/// A column is usable only when every cell is present; partially masked
/// columns are rejected because clean signals carry no mask.
pub fn parse_clean_channels(text: &str) -> Result<CleanChannels> {
    let table = parse_channel_table(text)?;
    let mut usable = [false; 6];
    for c in ChannelId::ALL {
        let v = &table.valid[c.index()];
        let present = v.iter().filter(|&&b| b).count();
        if present != 0 && present != v.len() {
            return Err(Error::format(c.name(), "clean channel has missing cells"));
        }
        usable[c.index()] = present == v.len() && !v.is_empty();
    }
    Ok(CleanChannels {
        frame_rate: table.frame_rate,
        channels: table.columns,
        usable,
    })
}

pub fn read_clean_channels(path: &Path) -> Result<CleanChannels> {
    parse_clean_channels(&read_text(path)?)
}

pub fn write_clean_channels(path: &Path, clean: &CleanChannels) -> Result<()> {
    write_text(path, &format_clean_channels(clean))
}

/// Single selected signal: `t,value`.
pub fn format_signal(fs: f64, values: &[f64]) -> String {
    let mut out = String::from("t,value\n");
    for (t, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", t as f64 / fs, v));
    }
    out
}

pub fn parse_signal(text: &str) -> Result<(f64, Vec<f64>)> {
    let mut rdr = csv_reader(text);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format("selected.csv", e.to_string()))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::format(name, "missing column"))
    };
    let (tc, vc) = (find("t")?, find("value")?);
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("selected.csv", e.to_string()))?;
        let parse = |col: usize, field: &str| -> Result<f64> {
            rec.get(col)
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::format(field, format!("line {}: not a number", row + 2)))
        };
        times.push(parse(tc, "t")?);
        values.push(parse(vc, "value")?);
    }
    Ok((frame_rate_from_times(&times)?, values))
}

/// Dataset manifest: JSON list of sample directories. Relative entries are
/// resolved against the manifest's own directory.
pub fn read_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let entries: Vec<String> = read_json(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(entries
        .into_iter()
        .map(|e| {
            let p = PathBuf::from(&e);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect())
}

pub fn write_manifest(path: &Path, entries: &[String]) -> Result<()> {
    write_json(path, &entries)
}

/// Resolve `--dataset` arguments: either a manifest file or a directory
/// containing `manifest.json`.
pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_sample() -> DepthSample {
        let data: Vec<u16> = (0..32).map(|v| v as u16 * 100 + 1).collect();
        let depth = DepthFrameSequence::new(4, 4, 30.0, data).unwrap();
        let mut joints = JointTrack::with_frames(2);
        for t in 0..2 {
            for (k, j) in Joint::ALL.into_iter().enumerate() {
                joints.set(t, j, Some(Point::new(k as f64 % 4.0, 1.5)));
            }
        }
        DepthSample {
            id: "walk_a".into(),
            subject_id: "s01".into(),
            label: Label::Deep,
            depth,
            joints,
        }
    }

    #[test]
    fn depth_sample_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walk_a");
        let s = tiny_sample();
        write_depth_sample(&s, &path).unwrap();
        assert_eq!(read_depth_sample(&path).unwrap(), s);
    }

    #[test]
    fn depth_max_value_is_little_endian_ffff() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walk_a");
        let mut s = tiny_sample();
        s.depth.data_mut()[0] = 65535;
        s.depth.data_mut()[1] = 0x0102;
        write_depth_sample(&s, &path).unwrap();
        let bytes = fs::read(path.join(DEPTH_FILE)).unwrap();
        assert_eq!(&bytes[..4], &[0xFF, 0xFF, 0x02, 0x01]);
        assert_eq!(bytes.len(), 4 * 4 * 2 * 2);
    }

    #[test]
    fn truncated_depth_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walk_a");
        write_depth_sample(&tiny_sample(), &path).unwrap();
        let bytes = fs::read(path.join(DEPTH_FILE)).unwrap();
        fs::write(path.join(DEPTH_FILE), &bytes[..bytes.len() - 2]).unwrap();
        let err = read_depth_sample(&path).unwrap_err();
        assert!(
            matches!(&err, Error::Format { field, message } if field == DEPTH_FILE && message.contains("truncated"))
        );
    }

    #[test]
    fn joints_with_extra_frame_rejected() {
        let text = "frame,joint,x,y\n0,nose,1,1\n1,nose,1,1\n2,nose,1,1\n";
        let err = parse_joints(text, 2).unwrap_err();
        assert!(
            matches!(&err, Error::Format { field, message } if field == "joints.frame" && message.contains("mismatch"))
        );
        let err = parse_joints("frame,joint,x,y\n0,nose,1,1\n", 2).unwrap_err();
        assert!(err.to_string().contains("mismatch"));
    }

    #[test]
    fn absent_joint_written_as_empty_cells() {
        let mut track = JointTrack::with_frames(6);
        for t in 0..6 {
            for j in Joint::ALL {
                track.set(t, j, Some(Point::new(2.0, 3.0)));
            }
        }
        track.set(5, Joint::Nose, None);
        let text = format_joints(&track);
        assert!(text.lines().any(|l| l == "5,nose,,"));
        assert!(text.lines().any(|l| l == "4,nose,2,3"));
        assert_eq!(parse_joints(&text, 6).unwrap(), track);
    }

    #[test]
    fn sparse_joint_rows_accepted() {
        let text = "frame,joint,x,y\n0,nose,1,1\n1,pelvis,2,2\n";
        let t = parse_joints(text, 2).unwrap();
        assert_eq!(t.get(0, Joint::Nose), Some(Point::new(1.0, 1.0)));
        assert_eq!(t.get(0, Joint::Pelvis), None);
    }

    #[test]
    fn bad_meta_label_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("walk_a");
        write_depth_sample(&tiny_sample(), &path).unwrap();
        let meta = read_text(&path.join(META_FILE))
            .unwrap()
            .replace("\"deep\"", "\"shallow\"");
        fs::write(path.join(META_FILE), meta).unwrap();
        let err = read_depth_sample(&path).unwrap_err();
        assert!(err.to_string().contains(META_FILE), "{err}");
    }

    fn raw_from(values: Vec<f64>) -> RawChannels {
        let n = values.len() / 6;
        let channels: [Vec<f64>; 6] = std::array::from_fn(|c| values[c * n..(c + 1) * n].to_vec());
        RawChannels {
            frame_rate: 30.0,
            valid: std::array::from_fn(|_| vec![true; n]),
            channels,
        }
    }

    #[test]
    fn channels_csv_line_count() {
        let raw = raw_from((0..60).map(|v| v as f64 * 0.5).collect());
        let text = format_raw_channels(&raw);
        assert_eq!(text.lines().count(), 11);
        assert!(
            text.starts_with("t,chest_pelvis,chest_nose,abdomen_pelvis,abdomen_nose,chestwall_pelvis,chestwall_nose\n")
        );
    }

    #[test]
    fn missing_channel_column_named() {
        let text = "t,chest_pelvis,chest_nose,abdomen_pelvis,chestwall_pelvis,chestwall_nose\n0,1,1,1,1,1\n";
        let err = parse_raw_channels(text).unwrap_err();
        assert!(matches!(&err, Error::Format { field, .. } if field == "abdomen_nose"));
    }

    #[test]
    fn masked_cells_roundtrip() {
        let mut raw = raw_from((0..60).map(|v| v as f64).collect());
        raw.valid[3][4] = false;
        raw.channels[3][4] = 0.0;
        let back = parse_raw_channels(&format_raw_channels(&raw)).unwrap();
        assert_eq!(back, raw);
    }

    proptest! {
        #[test]
        fn channels_roundtrip(values in proptest::collection::vec(-1e4f64..1e4, 60..600), fs in 1.0f64..120.0) {
            let n = values.len() / 6;
            let mut raw = raw_from(values[..n * 6].to_vec());
            raw.frame_rate = (fs * 1e3).round() / 1e3;
            let back = parse_raw_channels(&format_raw_channels(&raw)).unwrap();
            prop_assert!((back.frame_rate - raw.frame_rate).abs() < 1e-9);
            for c in 0..6 {
                for t in 0..n {
                    prop_assert!((back.channels[c][t] - raw.channels[c][t]).abs() < 1e-9);
                }
            }
        }
    }
}
