use crate::error::{shape_err, Result};
use crate::shape::{broadcast_shape, broadcast_strides, for_each_broadcast2, numel};
use crate::surrogate::Surrogate;
use crate::tensor::{GradFn, Tensor};

struct Heaviside {
    inputs: [Tensor; 2],
    surrogate: Surrogate,
}

impl GradFn for Heaviside {
    fn name(&self) -> &'static str {
        "heaviside"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let [x, th] = &self.inputs;
        let (xd, td) = (x.data(), th.data());
        let shape = out.shape();
        let sx = broadcast_strides(x.shape(), shape);
        let st = broadcast_strides(th.shape(), shape);
        let mut gx = x.requires_grad().then(|| vec![0.0f32; x.numel()]);
        let mut gt = th.requires_grad().then(|| vec![0.0f32; th.numel()]);
        for_each_broadcast2(shape, &sx, &st, |o, ix, it| {
            let d = g[o] * self.surrogate.derivative(xd[ix] - td[it]);
            if let Some(gx) = gx.as_mut() {
                gx[ix] += d;
            }
            if let Some(gt) = gt.as_mut() {
                gt[it] -= d;
            }
        });
        vec![gx, gt]
    }
}

impl Tensor {
    /// Spike function: 1 where `x >= threshold`, else 0.
    ///
    /// `threshold` broadcasts against `x`, and the result has the shape of
    /// `x`. The backward pass multiplies the incoming gradient by the
    /// surrogate derivative at `x − threshold`; the threshold receives the
    /// negated contribution.
    pub fn heaviside(&self, threshold: &Tensor, surrogate: Surrogate) -> Result<Tensor> {
        let shape = broadcast_shape(self.shape(), threshold.shape())?;
        if shape != self.shape() {
            return Err(shape_err(
                "heaviside",
                format!("threshold {:?} does not broadcast to {:?}", threshold.shape(), self.shape()),
            ));
        }
        let mut out = vec![0.0f32; numel(&shape)];
        {
            let (xd, td) = (self.data(), threshold.data());
            let sx = broadcast_strides(self.shape(), &shape);
            let st = broadcast_strides(threshold.shape(), &shape);
            for_each_broadcast2(&shape, &sx, &st, |o, ix, it| {
                out[o] = if xd[ix] >= td[it] { 1.0 } else { 0.0 };
            });
        }
        Ok(Tensor::output_with(out, shape, &[self, threshold], || {
            Box::new(Heaviside {
                inputs: [self.clone(), threshold.clone()],
                surrogate,
            })
        }))
    }

    pub fn heaviside_scalar(&self, threshold: f32, surrogate: Surrogate) -> Tensor {
        self.heaviside(&Tensor::scalar(threshold), surrogate)
            .expect("scalar threshold always broadcasts")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_at_and_above_threshold() {
        let x = Tensor::new(vec![0.15, 0.1, 0.05, -1.0], &[4]).unwrap();
        let s = x.heaviside_scalar(0.1, Surrogate::default());
        assert_eq!(s.to_vec(), vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn surrogate_grad_at_threshold_is_one() {
        let x = Tensor::parameter(vec![0.1], &[1]).unwrap();
        x.heaviside_scalar(0.1, Surrogate::default()).sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn per_row_threshold_grad() {
        let x = Tensor::parameter(vec![0.0, 1.0, 0.5, 0.5], &[2, 2]).unwrap();
        let th = Tensor::parameter(vec![0.5, 0.5], &[2, 1]).unwrap();
        let s = x.heaviside(&th, Surrogate::default()).unwrap();
        assert_eq!(s.to_vec(), vec![0.0, 1.0, 1.0, 1.0]);
        s.sum_all().backward().unwrap();
        let sg = Surrogate::default();
        let gx = x.grad().unwrap();
        assert!((gx[0] - sg.derivative(-0.5)).abs() < 1e-7);
        let gt = th.grad().unwrap();
        assert!((gt[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn threshold_must_not_grow_output() {
        let x = Tensor::zeros(&[2]);
        assert!(x.heaviside(&Tensor::zeros(&[3, 2]), Surrogate::default()).is_err());
    }
}
