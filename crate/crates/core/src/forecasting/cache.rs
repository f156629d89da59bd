//! Segment cache: CBOR records with a format version.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::segment::SegmentSample;

pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format_version: u32,
    segments: Vec<SegmentSample>,
}

pub fn write_segments(path: &Path, segments: &[SegmentSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let data = CacheFile { format_version: CACHE_VERSION, segments: segments.to_vec() };
    ciborium::into_writer(&data, BufWriter::new(file)).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn read_segments(path: &Path) -> Result<Vec<SegmentSample>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let data: CacheFile = ciborium::from_reader(BufReader::new(file))
        .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
    if data.format_version != CACHE_VERSION {
        return Err(Error::Serialization(format!(
            "{}: segment cache version {} (expected {CACHE_VERSION})",
            path.display(),
            data.format_version
        )));
    }
    for s in &data.segments {
        s.validate()?;
    }
    Ok(data.segments)
}
