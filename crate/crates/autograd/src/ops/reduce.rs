use crate::error::{shape_err, Result};
use crate::shape::split_at_axis;
use crate::tensor::{GradFn, Tensor};

struct SumAxis {
    inputs: [Tensor; 1],
    axis: usize,
    scale: f32,
}

impl GradFn for SumAxis {
    fn name(&self) -> &'static str {
        "sum_axis"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let x = &self.inputs[0];
        let (outer, len, inner) = split_at_axis(x.shape(), self.axis);
        let mut gx = vec![0.0f32; x.numel()];
        for o in 0..outer {
            let src = &g[o * inner..(o + 1) * inner];
            for l in 0..len {
                let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s * self.scale;
                }
            }
        }
        vec![Some(gx)]
    }
}

struct SumAll {
    inputs: [Tensor; 1],
    scale: f32,
}

impl GradFn for SumAll {
    fn name(&self) -> &'static str {
        "sum_all"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(vec![g[0] * self.scale; self.inputs[0].numel()])]
    }
}

impl Tensor {
    fn reduce_axis(&self, axis: usize, keepdim: bool, mean: bool) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(shape_err(
                "sum_axis",
                format!("axis {axis} out of range for shape {:?}", self.shape()),
            ));
        }
        let (outer, len, inner) = split_at_axis(self.shape(), axis);
        let scale = if mean && len > 0 { 1.0 / len as f32 } else { 1.0 };
        let mut out = vec![0.0f32; outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for l in 0..len {
                    let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                if mean {
                    dst.iter_mut().for_each(|d| *d *= scale);
                }
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(Tensor::output_with(out, shape, &[self], || {
            Box::new(SumAxis {
                inputs: [self.clone()],
                axis,
                scale,
            })
        }))
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.reduce_axis(axis, keepdim, false)
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.reduce_axis(axis, keepdim, true)
    }

    fn reduce_all(&self, mean: bool) -> Tensor {
        let n = self.numel();
        let scale = if mean && n > 0 { 1.0 / n as f32 } else { 1.0 };
        let s: f32 = self.data().iter().sum::<f32>() * scale;
        Tensor::output_with(vec![s], vec![], &[self], || {
            Box::new(SumAll {
                inputs: [self.clone()],
                scale,
            })
        })
    }

    pub fn sum_all(&self) -> Tensor {
        self.reduce_all(false)
    }

    pub fn mean_all(&self) -> Tensor {
        self.reduce_all(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_last_axis_of_ones() {
        let x = Tensor::ones(&[2, 3]);
        let y = x.sum_axis(1, false).unwrap();
        assert_eq!(y.shape(), &[2]);
        assert_eq!(y.to_vec(), vec![3.0, 3.0]);
    }

    #[test]
    fn sum_all_linearity_grad() {
        let x = Tensor::parameter(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        x.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_axis_middle() {
        let x = Tensor::parameter((0..12).map(|v| v as f32).collect(), &[2, 3, 2]).unwrap();
        let y = x.mean_axis(1, true).unwrap();
        assert_eq!(y.shape(), &[2, 1, 2]);
        assert_eq!(y.to_vec(), vec![2.0, 3.0, 8.0, 9.0]);
        y.sum_all().backward().unwrap();
        for g in x.grad().unwrap() {
            assert!((g - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn bad_axis() {
        assert!(Tensor::ones(&[2]).sum_axis(1, false).is_err());
    }
}
