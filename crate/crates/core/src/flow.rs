//! Dense flow fields and the Middlebury `.flo` format.

use std::fs;
use std::path::Path;

use sdff_autograd::Tensor;

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;
/// Components above this magnitude mark unknown flow in `.flo` files.
pub const FLO_UNKNOWN_THRESH: f32 = 1e9;
const FLO_UNKNOWN: f32 = 1e10;
/// Largest accepted `width·height` when decoding.
const FLO_MAX_PIXELS: u64 = 1 << 28;

/// Per-pixel `(u, v)` in pixels per frame with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n || valid.len() != n {
            return Err(Error::Invalid(format!(
                "flow {width}x{height} needs {n} entries, got {}/{}/{}",
                u.len(),
                v.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| valid[i] && !(u[i].is_finite() && v[i].is_finite())) {
            return Err(Error::Invalid(format!("non-finite flow at valid pixel {i}")));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
            valid,
        })
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            u: vec![u; n],
            v: vec![v; n],
            valid: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `[2, H, W]` (u plane then v plane).
    pub fn to_tensor(&self) -> Tensor {
        let mut d = self.u.clone();
        d.extend_from_slice(&self.v);
        Tensor::new(d, &[2, self.height, self.width]).expect("consistent flow")
    }

    /// From `[2, H, W]`, all pixels valid.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[0] != 2 {
            return Err(Error::Invalid(format!("flow tensor must be [2, H, W], got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let d = t.data();
        Self::new(w, h, d[..h * w].to_vec(), d[h * w..].to_vec(), vec![true; h * w])
    }

    /// `[1, H, W]` mask with 1 at valid pixels.
    pub fn mask_tensor(&self) -> Tensor {
        let m = self.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        Tensor::new(m, &[1, self.height, self.width]).expect("consistent mask")
    }

    pub fn to_flo_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 8 * self.len());
        buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        buf.extend_from_slice(&(self.width as i32).to_le_bytes());
        buf.extend_from_slice(&(self.height as i32).to_le_bytes());
        for i in 0..self.len() {
            let (u, v) = if self.valid[i] { (self.u[i], self.v[i]) } else { (FLO_UNKNOWN, FLO_UNKNOWN) };
            buf.extend_from_slice(&u.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Pixels with non-finite or above-threshold components are invalid.
    pub fn from_flo_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format("flo", format!("truncated header ({} bytes)", bytes.len())));
        }
        let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
        if f32::from_le_bytes(word(0)) != FLO_MAGIC {
            return Err(Error::format("flo", "bad magic"));
        }
        let w = i32::from_le_bytes(word(4));
        let h = i32::from_le_bytes(word(8));
        if w <= 0 || h <= 0 || (w as u64) * (h as u64) > FLO_MAX_PIXELS {
            return Err(Error::format("flo", format!("unsupported size {w}x{h}")));
        }
        let (w, h) = (w as usize, h as usize);
        let n = w * h;
        if bytes.len() != 12 + 8 * n {
            return Err(Error::format(
                "flo",
                format!("{w}x{h} needs {} data bytes, found {}", 8 * n, bytes.len() - 12),
            ));
        }
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for px in bytes[12..].chunks_exact(8) {
            let a = f32::from_le_bytes(px[..4].try_into().expect("4 bytes"));
            let b = f32::from_le_bytes(px[4..].try_into().expect("4 bytes"));
            let ok = a.is_finite() && b.is_finite() && a.abs() < FLO_UNKNOWN_THRESH && b.abs() < FLO_UNKNOWN_THRESH;
            u.push(if ok { a } else { 0.0 });
            v.push(if ok { b } else { 0.0 });
            valid.push(ok);
        }
        Self::new(w, h, u, v, valid)
    }

    pub fn read_flo(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_flo_bytes(&bytes)
    }

    pub fn write_flo(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_flo_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flo_roundtrip_with_invalid_pixels() {
        let f = FlowField::new(3, 2, vec![1.0, -2.5, 0.0, 3.0, 4.0, 5.0], vec![0.5, 0.0, 0.0, -1.0, 2.0, 9.0], vec![
            true, true, false, true, true, true,
        ])
        .unwrap();
        let bytes = f.to_flo_bytes();
        assert_eq!(bytes.len(), 12 + 48);
        assert_eq!(&bytes[..4], &FLO_MAGIC.to_le_bytes());
        assert_eq!(FlowField::from_flo_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn flo_rejects_malformed() {
        let f = FlowField::constant(2, 2, 1.0, 0.0);
        let bytes = f.to_flo_bytes();
        assert!(FlowField::from_flo_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(FlowField::from_flo_bytes(&bytes[..8]).is_err());
        let mut bad = bytes.clone();
        bad[0] ^= 1;
        assert!(FlowField::from_flo_bytes(&bad).is_err());
        let mut neg = bytes.clone();
        neg[4..8].copy_from_slice(&(-2i32).to_le_bytes());
        assert!(FlowField::from_flo_bytes(&neg).is_err());
        let mut huge = bytes[..12].to_vec();
        huge[4..8].copy_from_slice(&i32::MAX.to_le_bytes());
        huge[8..12].copy_from_slice(&i32::MAX.to_le_bytes());
        assert!(FlowField::from_flo_bytes(&huge).is_err());
    }

    #[test]
    fn tensor_roundtrip() {
        let f = FlowField::new(2, 1, vec![1.0, 2.0], vec![3.0, 4.0], vec![true; 2]).unwrap();
        let t = f.to_tensor();
        assert_eq!(t.shape(), &[2, 1, 2]);
        assert_eq!(FlowField::from_tensor(&t).unwrap(), f);
    }

    #[test]
    fn rejects_non_finite_valid_pixels() {
        assert!(FlowField::new(1, 1, vec![f32::NAN], vec![0.0], vec![true]).is_err());
        assert!(FlowField::new(1, 1, vec![f32::NAN], vec![0.0], vec![false]).is_ok());
    }
}
