use crate::error::{shape_err, Result};
use crate::tensor::{GradFn, Tensor};

/// Source taps for one output coordinate (half-pixel centers, edge clamped).
#[derive(Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    w1: f32,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f32 / dst as f32;
    (0..dst)
        .map(|o| {
            let pos = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            Tap { i0, i1, w1: pos - i0 as f32 }
        })
        .collect()
}

struct Bilinear {
    inputs: [Tensor; 1],
    ty: Vec<Tap>,
    tx: Vec<Tap>,
}

impl GradFn for Bilinear {
    fn name(&self) -> &'static str {
        "upsample_bilinear"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let s = self.inputs[0].shape();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (self.ty.len(), self.tx.len());
        let mut gx = vec![0.0f32; planes * h * w];
        for p in 0..planes {
            let src = &mut gx[p * h * w..(p + 1) * h * w];
            let go = &g[p * oh * ow..(p + 1) * oh * ow];
            for (oy, ty) in self.ty.iter().enumerate() {
                for (ox, tx) in self.tx.iter().enumerate() {
                    let v = go[oy * ow + ox];
                    let (wy1, wx1) = (ty.w1, tx.w1);
                    src[ty.i0 * w + tx.i0] += v * (1.0 - wy1) * (1.0 - wx1);
                    src[ty.i0 * w + tx.i1] += v * (1.0 - wy1) * wx1;
                    src[ty.i1 * w + tx.i0] += v * wy1 * (1.0 - wx1);
                    src[ty.i1 * w + tx.i1] += v * wy1 * wx1;
                }
            }
        }
        vec![Some(gx)]
    }
}

impl Tensor {
    /// Bilinear resize of `[N, C, h, w]` to `[N, C, out_h, out_w]` with
    /// half-pixel sample centers.
    pub fn upsample_bilinear(&self, out_h: usize, out_w: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 || s[2] == 0 || s[3] == 0 || out_h == 0 || out_w == 0 {
            return Err(shape_err("upsample_bilinear", format!("cannot resize {s:?} to {out_h}x{out_w}")));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let ty = taps(h, out_h);
        let tx = taps(w, out_w);
        let mut out = vec![0.0f32; planes * out_h * out_w];
        {
            let x = self.data();
            for p in 0..planes {
                let src = &x[p * h * w..(p + 1) * h * w];
                let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
                for (oy, a) in ty.iter().enumerate() {
                    for (ox, b) in tx.iter().enumerate() {
                        let top = src[a.i0 * w + b.i0] * (1.0 - b.w1) + src[a.i0 * w + b.i1] * b.w1;
                        let bot = src[a.i1 * w + b.i0] * (1.0 - b.w1) + src[a.i1 * w + b.i1] * b.w1;
                        dst[oy * out_w + ox] = top * (1.0 - a.w1) + bot * a.w1;
                    }
                }
            }
        }
        Ok(Tensor::output_with(out, vec![s[0], s[1], out_h, out_w], &[self], || {
            Box::new(Bilinear {
                inputs: [self.clone()],
                ty,
                tx,
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[1, 2, 3, 4], 2.5);
        let y = x.upsample_bilinear(6, 8).unwrap();
        assert!(y.to_vec().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn identity_size_is_identity() {
        let x = Tensor::new((0..12).map(|v| v as f32).collect(), &[1, 1, 3, 4]).unwrap();
        assert_eq!(x.upsample_bilinear(3, 4).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn grad_mass_is_preserved() {
        let x = Tensor::parameter(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        x.upsample_bilinear(4, 4).unwrap().sum_all().backward().unwrap();
        let total: f32 = x.grad().unwrap().iter().sum();
        assert!((total - 16.0).abs() < 1e-5);
    }
}
