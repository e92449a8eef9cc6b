//! `PulseFrame`: the universal network input, and its `SPKT` file format.
//!
//! ```text
//! "SPKT" | version: u16 LE | rank: u16 LE | dims: rank x u32 LE | payload
//! ```
//!
//! The payload is `prod(dims)` little-endian `f32` spike times in row-major
//! order. A quiet NaN (`0x7FC00000`) marks a channel without a spike.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spike::ZVector;

pub const SPKT_MAGIC: &[u8; 4] = b"SPKT";
pub const SPKT_VERSION: u16 = 1;
const QUIET_NAN: u32 = 0x7FC0_0000;

/// Rank-2 or rank-3 array of first-spike times, `None` where nothing fired.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseFrame {
    shape: Vec<usize>,
    times: Vec<Option<f32>>,
}

impl PulseFrame {
    pub fn new(shape: Vec<usize>, times: Vec<Option<f32>>) -> Result<Self> {
        if shape.is_empty() || shape.len() > u16::MAX as usize {
            return Err(Error::Shape(format!("unsupported frame rank {}", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != times.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                times.len()
            )));
        }
        if let Some((i, t)) = times
            .iter()
            .enumerate()
            .find_map(|(i, t)| t.filter(|t| !t.is_finite() || *t < 0.0).map(|t| (i, t)))
        {
            return Err(Error::InvalidSpikes(format!("channel {i} has time {t}")));
        }
        Ok(Self { shape, times })
    }

    pub fn silent(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, times: vec![None; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[Option<f32>] {
        &self.times
    }

    pub fn times_mut(&mut self) -> &mut [Option<f32>] {
        &mut self.times
    }

    pub fn spike_count(&self) -> usize {
        self.times.iter().filter(|t| t.is_some()).count()
    }

    /// Row-major index for a 2-D frame.
    pub fn at(&self, row: usize, col: usize) -> Option<f32> {
        self.times[row * self.shape[1] + col]
    }

    /// Converts spike times to the z-domain in the requested precision.
    pub fn to_z<T: Scalar>(&self) -> ZVector<T> {
        self.to_z_scaled(1.0)
    }

    /// `z = exp(scale * t)`.
    pub fn to_z_scaled<T: Scalar>(&self, scale: f64) -> ZVector<T> {
        ZVector::new(self.times.iter().map(|t| t.map(|t| (T::lit(t as f64) * T::lit(scale)).exp())).collect())
    }

    /// Affinely rescales the spike times so the earliest is 0 and the latest
    /// is 1. A frame with a single distinct time maps every spike to 0.
    pub fn normalize(&mut self) {
        let (lo, hi) = self
            .times
            .iter()
            .flatten()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
        if !lo.is_finite() {
            return;
        }
        let span = hi - lo;
        for t in self.times.iter_mut().flatten() {
            *t = if span > 0.0 { ((*t - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
        }
    }

    /// Binary PGM of a 2-D frame for eyeballing: early spikes bright, silent
    /// channels black. Higher ranks are flattened to `H x (W*C)`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let h = self.shape[0];
        let w = self.len() / h.max(1);
        let hi = self.times.iter().flatten().copied().fold(0.0f32, f32::max);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend(self.times.iter().map(|t| match t {
            None => 0,
            Some(t) if hi > 0.0 => 255 - ((t / hi) * 223.0).round() as u8,
            Some(_) => 255,
        }));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + 4 * self.times.len());
        out.extend_from_slice(SPKT_MAGIC);
        out.extend_from_slice(&SPKT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u16).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for t in &self.times {
            let bits = match t {
                Some(t) => t.to_bits(),
                None => QUIET_NAN,
            };
            out.extend_from_slice(&bits.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != SPKT_MAGIC {
            return Err(Error::format(0, "missing SPKT magic"));
        }
        let version = r.u16()?;
        if version != SPKT_VERSION {
            return Err(Error::format(4, format!("unsupported SPKT version {version}")));
        }
        let rank = r.u16()? as usize;
        if rank == 0 {
            return Err(Error::format(6, "rank 0 frame"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
            Error::format(8, "frame dimensions overflow")
        })?;
        let expected = r.pos + n.checked_mul(4).ok_or_else(|| Error::format(8, "frame too large"))?;
        if bytes.len() != expected {
            return Err(Error::format(
                bytes.len().min(expected),
                format!("payload needs {expected} bytes in total, file has {}", bytes.len()),
            ));
        }
        let mut times = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.pos;
            let v = f32::from_bits(r.u32()?);
            if v.is_nan() {
                times.push(None);
            } else if !v.is_finite() || v < 0.0 {
                return Err(Error::format(at, format!("invalid spike time {v}")));
            } else {
                times.push(Some(v));
            }
        }
        Ok(Self { shape, times })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.in_file(path))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.pos, format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
