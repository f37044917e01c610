//! Flat parameter archives: named segments of one `f64` array, written as
//! a JSON manifest plus little-endian bytes by the front end.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub len: usize,
}

/// Receives named runs of values; consecutive writes under one name extend
/// the same segment.
pub trait SegmentSink {
    fn write(&mut self, name: &str, values: &[f64]) -> Result<()>;
}

/// Appends to `segments`, merging a write into the last segment when the
/// names match.
pub fn record_segment(segments: &mut Vec<Segment>, name: &str, len: usize) {
    match segments.last_mut() {
        Some(last) if last.name == name => last.len += len,
        _ => segments.push(Segment { name: name.to_string(), len }),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlatArchive {
    pub segments: Vec<Segment>,
    pub data: Vec<f64>,
}

impl FlatArchive {
    pub fn push(&mut self, name: &str, values: &[f64]) {
        record_segment(&mut self.segments, name, values.len());
        self.data.extend_from_slice(values);
    }

    /// Rebuilds an archive from its layout and data, checking the total.
    pub fn from_parts(segments: Vec<Segment>, data: Vec<f64>) -> Result<Self> {
        let total: usize = segments.iter().map(|s| s.len).sum();
        if total != data.len() {
            return Err(Error::ShapeMismatch { expected: total, got: data.len() });
        }
        Ok(FlatArchive { segments, data })
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let mut offset = 0;
        for s in &self.segments {
            if s.name == name {
                return Ok(&self.data[offset..offset + s.len]);
            }
            offset += s.len;
        }
        Err(Error::Config(alloc::format!("archive has no segment `{name}`")))
    }

    /// Segment `name`, required to hold exactly `len` values.
    pub fn get_len(&self, name: &str, len: usize) -> Result<&[f64]> {
        let v = self.get(name)?;
        if v.len() != len {
            return Err(Error::ShapeMismatch { expected: len, got: v.len() });
        }
        Ok(v)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn data_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
        if bytes.len() % 8 != 0 {
            return Err(Error::ShapeMismatch { expected: bytes.len() / 8 * 8 + 8, got: bytes.len() });
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl SegmentSink for FlatArchive {
    fn write(&mut self, name: &str, values: &[f64]) -> Result<()> {
        self.push(name, values);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut a = FlatArchive::default();
        a.push("w", &[1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0]);
        a.push("empty", &[]);
        a.push("b", &[f64::MAX]);
        a.push("b", &[5e-324]);
        assert_eq!(a.segments.len(), 3);
        let data = FlatArchive::data_from_le_bytes(&a.to_le_bytes()).unwrap();
        let b = FlatArchive::from_parts(a.segments.clone(), data).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(b.get("b").unwrap(), &[f64::MAX, 5e-324]);
        assert!(b.get("empty").unwrap().is_empty());
        assert!(b.get("missing").is_err());
        assert!(b.get_len("w", 3).is_err());
    }

    #[test]
    fn length_mismatch_rejected() {
        let seg = alloc::vec![Segment { name: "x".into(), len: 3 }];
        assert!(FlatArchive::from_parts(seg, alloc::vec![0.0; 2]).is_err());
        assert!(FlatArchive::data_from_le_bytes(&[0u8; 7]).is_err());
    }
}
