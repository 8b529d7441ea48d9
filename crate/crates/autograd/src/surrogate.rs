use std::f32::consts::PI;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateKind {
    /// Derivative of `(1/π)·atan(π·α·v/2) + 1/2`.
    Atan,
}

/// Smooth stand-in derivative used by the backward pass of the spike function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogate {
    kind: SurrogateKind,
    width: f32,
}

impl Surrogate {
    pub fn new(kind: SurrogateKind, width: f32) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(invalid("surrogate", format!("width must be > 0, got {width}")));
        }
        Ok(Self { kind, width })
    }

    pub fn atan(width: f32) -> Result<Self> {
        Self::new(SurrogateKind::Atan, width)
    }

    pub fn kind(&self) -> SurrogateKind {
        self.kind
    }

    pub fn width(&self) -> f32 {
        self.width
    }

    /// Surrogate derivative evaluated at `v = x - threshold`.
    #[inline]
    pub fn derivative(&self, v: f32) -> f32 {
        match self.kind {
            SurrogateKind::Atan => {
                let a = self.width;
                let z = PI * a * v / 2.0;
                a / (2.0 * (1.0 + z * z))
            }
        }
    }
}

impl Default for Surrogate {
    /// Inverse tangent with width 2, so the derivative peaks at exactly 1.
    fn default() -> Self {
        Self {
            kind: SurrogateKind::Atan,
            width: 2.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_is_half_width() {
        let s = Surrogate::default();
        assert_eq!(s.derivative(0.0), 1.0);
        let s = Surrogate::atan(4.0).unwrap();
        assert_eq!(s.derivative(0.0), 2.0);
    }

    #[test]
    fn symmetric_and_decaying() {
        let s = Surrogate::default();
        for v in [0.1f32, 0.5, 2.0] {
            assert_eq!(s.derivative(v), s.derivative(-v));
            assert!(s.derivative(v) < s.derivative(v / 2.0));
        }
    }

    #[test]
    fn rejects_bad_width() {
        assert!(Surrogate::atan(0.0).is_err());
        assert!(Surrogate::atan(-1.0).is_err());
        assert!(Surrogate::atan(f32::NAN).is_err());
    }
}
