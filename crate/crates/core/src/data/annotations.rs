//! VATIC-style text dumps.
//!
//! One entry per line:
//!
//! ```text
//! track_id xmin ymin xmax ymax frame lost occluded generated "label"
//! ```
//!
//! An optional first line `# video <id> frames <n> fps <f> width <w> height <h>`
//! carries clip metadata. Without it the id comes from the file name and the
//! frame count and canvas size are inferred from the boxes. Accident events
//! live in a sibling `events.txt`, one `start end` pair per line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageSize};

pub const ANNOTATION_FILE: &str = "annotations.txt";
pub const EVENTS_FILE: &str = "events.txt";
pub const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub lost: bool,
    pub occluded: bool,
    pub generated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub category: Category,
    /// Strictly increasing in `frame`.
    pub entries: Vec<TrackEntry>,
}

/// Inclusive frame interval of one collision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccidentEvent {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub frame_count: usize,
    /// `None` when the source did not say.
    pub fps: Option<f64>,
    pub width: usize,
    pub height: usize,
    pub tracks: Vec<Track>,
    pub events: Vec<AccidentEvent>,
}

pub const DEFAULT_FPS: f64 = 10.0;

impl VideoRecord {
    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    /// Frame rate, falling back to [`DEFAULT_FPS`] with a warning.
    pub fn fps_or_default(&self) -> f64 {
        self.fps.unwrap_or_else(|| {
            log::warn!("video {}: no frame rate recorded, assuming {DEFAULT_FPS}", self.id);
            DEFAULT_FPS
        })
    }

    /// Training targets at `frame`: every non-lost entry.
    pub fn boxes_at(&self, frame: usize) -> Vec<(BoundingBox, Category)> {
        self.tracks
            .iter()
            .filter_map(|t| {
                let i = t.entries.binary_search_by_key(&frame, |e| e.frame).ok()?;
                let e = &t.entries[i];
                (!e.lost).then_some((e.bbox, t.category))
            })
            .collect()
    }

    pub fn object_count(&self) -> usize {
        self.tracks.len()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tracks {
            for w in t.entries.windows(2) {
                if w[1].frame <= w[0].frame {
                    return Err(Error::invalid(format!(
                        "video {}: track {} frames not strictly increasing",
                        self.id, t.id
                    )));
                }
            }
            if let Some(e) = t.entries.iter().find(|e| e.frame >= self.frame_count) {
                return Err(Error::invalid(format!(
                    "video {}: track {} has frame {} beyond frame count {}",
                    self.id, t.id, e.frame, self.frame_count
                )));
            }
        }
        for e in &self.events {
            if e.start > e.end || e.end >= self.frame_count {
                return Err(Error::invalid(format!(
                    "video {}: accident event {}..{} outside 0..{}",
                    self.id, e.start, e.end, self.frame_count
                )));
            }
        }
        Ok(())
    }
}

struct Header {
    id: String,
    frames: Option<usize>,
    fps: Option<f64>,
    width: Option<usize>,
    height: Option<usize>,
}

fn parse_header(line: &str, path: &Path) -> Result<Header> {
    let err = |message: String| Error::Parse { path: path.to_path_buf(), line: 1, message };
    let toks: Vec<&str> = line.trim_start_matches('#').split_whitespace().collect();
    if !toks.len().is_multiple_of(2) {
        return Err(err("header must be key/value pairs".into()));
    }
    let mut h = Header { id: String::new(), frames: None, fps: None, width: None, height: None };
    for kv in toks.chunks(2) {
        let (k, v) = (kv[0], kv[1]);
        let num = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad {k} value {v:?}")));
        match k {
            "video" => h.id = v.to_string(),
            "frames" => h.frames = Some(num(v)?),
            "width" => h.width = Some(num(v)?),
            "height" => h.height = Some(num(v)?),
            "fps" => {
                let f: f64 = v.parse().map_err(|_| err(format!("bad fps value {v:?}")))?;
                if !(f > 0.0 && f.is_finite()) {
                    return Err(err(format!("fps must be positive, got {v}")));
                }
                h.fps = Some(f);
            }
            _ => return Err(err(format!("unknown header key {k:?}"))),
        }
    }
    Ok(h)
}

fn flag(tok: &str) -> Option<bool> {
    match tok {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

/// Parses an annotation dump. `path` is used for error context and as the
/// fallback video id.
pub fn parse_annotations_str(text: &str, path: &Path) -> Result<VideoRecord> {
    let mut header = None;
    let mut tracks: Vec<Track> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if line_no == 1 {
                header = Some(parse_header(line, path)?);
            }
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: line_no, message };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 10 {
            return Err(err(format!("expected 10 fields, found {}", toks.len())));
        }
        let label = toks[9..].join(" ");
        let label = label.trim_matches('"');
        let category: Category = label.parse().map_err(|_| Error::UnknownCategory {
            path: path.to_path_buf(),
            line: line_no,
            token: label.to_string(),
        })?;
        let id: u64 = toks[0].parse().map_err(|_| err(format!("bad track id {:?}", toks[0])))?;
        let mut coords = [0.0; 4];
        for (c, tok) in coords.iter_mut().zip(&toks[1..5]) {
            *c = tok.parse().map_err(|_| err(format!("bad coordinate {tok:?}")))?;
        }
        let bbox =
            BoundingBox::new(coords[0], coords[1], coords[2], coords[3]).map_err(|e| err(e.to_string()))?;
        let frame: usize = toks[5].parse().map_err(|_| err(format!("bad frame {:?}", toks[5])))?;
        let flags: Vec<bool> = toks[6..9]
            .iter()
            .map(|t| flag(t).ok_or_else(|| err(format!("flag must be 0 or 1, got {t:?}"))))
            .collect::<Result<_>>()?;
        let entry = TrackEntry { frame, bbox, lost: flags[0], occluded: flags[1], generated: flags[2] };
        match tracks.iter_mut().find(|t| t.id == id) {
            Some(t) => {
                if t.category != category {
                    return Err(err(format!("track {id} changes label from {} to {category}", t.category)));
                }
                if t.entries.last().is_some_and(|e| e.frame >= frame) {
                    return Err(err(format!("track {id}: frame {frame} is not after the previous entry")));
                }
                t.entries.push(entry);
            }
            None => tracks.push(Track { id, category, entries: vec![entry] }),
        }
    }
    let fallback_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let entries = || tracks.iter().flat_map(|t| t.entries.iter());
    let header =
        header.unwrap_or(Header { id: String::new(), frames: None, fps: None, width: None, height: None });
    let record = VideoRecord {
        id: if header.id.is_empty() { fallback_id } else { header.id },
        frame_count: header.frames.unwrap_or_else(|| entries().map(|e| e.frame + 1).max().unwrap_or(0)),
        fps: header.fps,
        width: header
            .width
            .unwrap_or_else(|| entries().map(|e| e.bbox.x2.ceil() as usize).max().unwrap_or(0)),
        height: header
            .height
            .unwrap_or_else(|| entries().map(|e| e.bbox.y2.ceil() as usize).max().unwrap_or(0)),
        tracks,
        events: Vec::new(),
    };
    record.validate()?;
    Ok(record)
}

pub fn parse_events_str(text: &str, path: &Path) -> Result<Vec<AccidentEvent>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.to_path_buf(), line: n + 1, message };
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(format!("bad frame index {t:?}"))))
            .collect::<Result<_>>()?;
        let [start, end] = nums[..] else {
            return Err(err(format!("expected `start end`, found {} fields", nums.len())));
        };
        if start > end {
            return Err(err(format!("event starts at {start} after it ends at {end}")));
        }
        out.push(AccidentEvent { start, end });
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a video's annotations. `path` is either a video directory holding
/// `annotations.txt` (and optionally `events.txt`) or an annotation file
/// whose sibling `events.txt` is picked up if present.
pub fn parse_annotations(path: &Path) -> Result<VideoRecord> {
    let (file, events) = if path.is_dir() {
        (path.join(ANNOTATION_FILE), path.join(EVENTS_FILE))
    } else {
        let dir = path.parent().unwrap_or(Path::new("."));
        (path.to_path_buf(), dir.join(EVENTS_FILE))
    };
    let mut record = parse_annotations_str(&read(&file)?, &file)?;
    if path.is_dir() && record.id == "annotations" {
        record.id = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    if events.exists() {
        record.events = parse_events_str(&read(&events)?, &events)?;
        record.validate()?;
    }
    Ok(record)
}

pub fn serialize_annotations(record: &VideoRecord) -> String {
    let mut s = format!("# video {} frames {}", record.id, record.frame_count);
    if let Some(fps) = record.fps {
        write!(s, " fps {fps}").unwrap();
    }
    writeln!(s, " width {} height {}", record.width, record.height).unwrap();
    for t in &record.tracks {
        for e in &t.entries {
            writeln!(
                s,
                "{} {} {} {} {} {} {} {} {} \"{}\"",
                t.id,
                e.bbox.x1,
                e.bbox.y1,
                e.bbox.x2,
                e.bbox.y2,
                e.frame,
                e.lost as u8,
                e.occluded as u8,
                e.generated as u8,
                t.category
            )
            .unwrap();
        }
    }
    s
}

pub fn serialize_events(events: &[AccidentEvent]) -> String {
    events.iter().map(|e| format!("{} {}\n", e.start, e.end)).collect()
}

/// Writes `annotations.txt` and `events.txt` into `dir`.
pub fn write_video_annotations(dir: &Path, record: &VideoRecord) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (name, text) in
        [(ANNOTATION_FILE, serialize_annotations(record)), (EVENTS_FILE, serialize_events(&record.events))]
    {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p.display().to_string(), e))?;
    }
    Ok(())
}

/// Video directories under `root`: `root` itself if it holds an annotation
/// file, else every immediate subdirectory that does, sorted by name.
pub fn find_video_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(ANNOTATION_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let rd = std::fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))?;
    let mut dirs = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(root.display().to_string(), e))?;
        let p = entry.path();
        if p.join(ANNOTATION_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn frame_path(video_dir: &Path, frame: usize) -> PathBuf {
    video_dir.join(FRAMES_DIR).join(format!("{frame:06}.png"))
}
