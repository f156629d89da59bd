//! Named tensor files and TOML manifests for model checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Param;

const MAGIC: &[u8; 4] = b"CCW1";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub format_version: u32,
    pub kind: String,
    pub config: C,
}

pub fn write_manifest<C: Serialize>(dir: &Path, kind: &str, config: &C) -> Result<()> {
    let m = Manifest { format_version: FORMAT_VERSION, kind: kind.to_string(), config };
    let text = toml::to_string(&m).map_err(|e| Error::Serialization(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_manifest<C: DeserializeOwned>(dir: &Path, kind: &str) -> Result<C> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let m: Manifest<C> =
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    if m.kind != kind {
        return Err(Error::Checkpoint(format!("expected a {kind} checkpoint, found {}", m.kind)));
    }
    Ok(m.config)
}

pub fn write_tensors(path: &Path, tensors: &[(String, &Param)]) -> Result<()> {
    let ctx = || path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (name, p) in tensors {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(p.shape().len() as u32)?;
            for &d in p.shape() {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &v in p.value.iter() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(ctx(), e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn read_tensors(path: &Path) -> Result<Vec<StoredTensor>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let bad = |e: std::io::Error| Error::Checkpoint(format!("{}: {e}", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a weights file", path.display())));
    }
    let count = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(bad)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
        let shape = (0..ndim)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(bad)?;
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(bad)?;
        out.push(StoredTensor { name, shape, data });
    }
    Ok(out)
}

/// Copies stored tensors into `params` by name; every parameter must be
/// present with a matching shape.
pub fn assign(names: &[String], params: Vec<&mut Param>, stored: Vec<StoredTensor>) -> Result<()> {
    let mut by_name: std::collections::HashMap<String, StoredTensor> =
        stored.into_iter().map(|t| (t.name.clone(), t)).collect();
    for (name, p) in names.iter().zip(params) {
        let t = by_name.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape != p.shape() {
            return Err(Error::ShapeMismatch { expected: p.shape().to_vec(), actual: t.shape });
        }
        p.set_value(t.data)?;
    }
    if let Some(extra) = by_name.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn tensors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let a = Param::from_value(
            ArrayD::from_shape_vec(vec![2, 3], (0..6).map(|i| i as f64 * 0.5).collect()).unwrap(),
        );
        let b = Param::from_value(ArrayD::from_elem(vec![4], -1.25));
        write_tensors(&path, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let stored = read_tensors(&path).unwrap();
        let mut a2 = Param::zeros(&[2, 3]);
        let mut b2 = Param::zeros(&[4]);
        assign(&["a".into(), "b".into()], vec![&mut a2, &mut b2], stored).unwrap();
        assert_eq!(a2.value, a.value);
        assert_eq!(b2.value, b.value);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let a = Param::zeros(&[2, 3]);
        write_tensors(&path, &[("a".into(), &a)]).unwrap();
        let mut wrong = Param::zeros(&[3, 2]);
        let err = assign(&["a".into()], vec![&mut wrong], read_tensors(&path).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }
}
