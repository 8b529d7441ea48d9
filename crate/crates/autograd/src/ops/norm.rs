use crate::error::{shape_err, Error, Result};
use crate::shape::split_at_axis;
use crate::tensor::{GradFn, Tensor};

/// Batch normalization using the statistics of the current batch.
struct BatchNorm {
    inputs: [Tensor; 3],
    axis: usize,
    /// Normalized activations `x̂`.
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

impl GradFn for BatchNorm {
    fn name(&self) -> &'static str {
        "batch_norm"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let [x, gamma, beta] = &self.inputs;
        let (outer, ch, inner) = split_at_axis(x.shape(), self.axis);
        let m = (outer * inner) as f32;
        let mut sum_g = vec![0.0f32; ch];
        let mut sum_gx = vec![0.0f32; ch];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * self.xhat[i];
                }
            }
        }
        let gx = x.requires_grad().then(|| {
            let gd = gamma.data();
            let mut gx = vec![0.0f32; x.numel()];
            for o in 0..outer {
                for c in 0..ch {
                    let k = gd[c] * self.inv_std[c] / m;
                    let base = (o * ch + c) * inner;
                    for i in base..base + inner {
                        gx[i] = k * (m * g[i] - sum_g[c] - self.xhat[i] * sum_gx[c]);
                    }
                }
            }
            gx
        });
        vec![
            gx,
            gamma.requires_grad().then_some(sum_gx),
            beta.requires_grad().then_some(sum_g),
        ]
    }
}

impl Tensor {
    /// Normalize over every axis except `axis`, then scale by `gamma` and
    /// shift by `beta` (both of length `shape[axis]`).
    pub fn batch_norm(&self, gamma: &Tensor, beta: &Tensor, axis: usize, eps: f32) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err("batch_norm", format!("axis {axis} out of range for {:?}", self.shape())));
        }
        let (outer, ch, inner) = split_at_axis(self.shape(), axis);
        if gamma.shape() != [ch] || beta.shape() != [ch] {
            return Err(shape_err(
                "batch_norm",
                format!("affine params {:?}/{:?} for {ch} channels", gamma.shape(), beta.shape()),
            ));
        }
        if outer * inner == 0 {
            return Err(Error::EmptyBatch { op: "batch_norm" });
        }
        let m = (outer * inner) as f32;
        let x = self.data();
        let mut mean = vec![0.0f32; ch];
        for o in 0..outer {
            for (c, mu) in mean.iter_mut().enumerate() {
                let base = (o * ch + c) * inner;
                *mu += x[base..base + inner].iter().sum::<f32>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        let mut var = vec![0.0f32; ch];
        for o in 0..outer {
            for (c, s) in var.iter_mut().enumerate() {
                let base = (o * ch + c) * inner;
                *s += x[base..base + inner].iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f32>();
            }
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v / m + eps).sqrt()).collect();
        let (gd, bd) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0f32; x.len()];
        let mut out = vec![0.0f32; x.len()];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    xhat[i] = (x[i] - mean[c]) * inv_std[c];
                    out[i] = gd[c] * xhat[i] + bd[c];
                }
            }
        }
        drop((x, gd, bd));
        Ok(Tensor::output_with(out, self.shape().to_vec(), &[self, gamma, beta], || {
            Box::new(BatchNorm {
                inputs: [self.clone(), gamma.clone(), beta.clone()],
                axis,
                xhat,
                inv_std,
            })
        }))
    }
}
