use std::rc::Rc;

use crate::error::{invalid, shape_err, Result};
use crate::shape::{contiguous_strides, numel, split_at_axis};
use crate::tensor::{GradFn, Tensor};
use crate::GATHER_ZERO;

struct Reshape {
    inputs: [Tensor; 1],
}

impl GradFn for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.to_vec())]
    }
}

/// `out[i] = x[index[i]]`, or zero where the index is [`GATHER_ZERO`].
struct Gather {
    inputs: [Tensor; 1],
    index: Rc<[u32]>,
}

impl GradFn for Gather {
    fn name(&self) -> &'static str {
        "gather"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let mut gx = vec![0.0f32; self.inputs[0].numel()];
        for (&i, &gv) in self.index.iter().zip(g) {
            if i != GATHER_ZERO {
                gx[i as usize] += gv;
            }
        }
        vec![Some(gx)]
    }
}

struct Concat {
    inputs: Vec<Tensor>,
    axis: usize,
}

impl GradFn for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (outer, total, inner) = split_at_axis(out.shape(), self.axis);
        let mut offset = 0;
        self.inputs
            .iter()
            .map(|t| {
                let len = t.shape()[self.axis];
                let res = t.requires_grad().then(|| {
                    let mut gx = Vec::with_capacity(t.numel());
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gx.extend_from_slice(&g[start..start + len * inner]);
                    }
                    gx
                });
                offset += len;
                res
            })
            .collect()
    }
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape()),
            ));
        }
        Ok(Tensor::output_with(self.to_vec(), shape.to_vec(), &[self], || {
            Box::new(Reshape {
                inputs: [self.clone()],
            })
        }))
    }

    /// General index gather into a new contiguous tensor of `shape`.
    ///
    /// Every entry of `index` is either a flat offset into `self` or
    /// [`GATHER_ZERO`]. Backward scatter-adds into the source, so the same
    /// op implements permutes, padding, cropping, rolls and window
    /// partitions.
    pub fn gather(&self, index: Rc<[u32]>, shape: &[usize]) -> Result<Tensor> {
        if index.len() != numel(shape) {
            return Err(shape_err(
                "gather",
                format!("index has {} entries, shape {shape:?} needs {}", index.len(), numel(shape)),
            ));
        }
        let n = self.numel() as u32;
        let data = {
            let x = self.data();
            let mut out = Vec::with_capacity(index.len());
            for &i in index.iter() {
                if i == GATHER_ZERO {
                    out.push(0.0);
                } else if i < n {
                    out.push(x[i as usize]);
                } else {
                    return Err(invalid("gather", format!("index {i} out of range for {n} elements")));
                }
            }
            out
        };
        Ok(Tensor::output_with(data, shape.to_vec(), &[self], || {
            Box::new(Gather {
                inputs: [self.clone()],
                index,
            })
        }))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err(
                "permute",
                format!("{axes:?} is not a permutation of {rank} axes"),
            ));
        }
        let in_strides = contiguous_strides(self.shape());
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape()[a]).collect();
        let n = self.numel();
        let mut index = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        for _ in 0..n {
            let off: usize = idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum();
            index.push(off as u32);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        self.gather(index.into(), &out_shape)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape()[axis] {
            return Err(shape_err(
                "narrow",
                format!("[{start}, {}) out of range on axis {axis} of {:?}", start + len, self.shape()),
            ));
        }
        let (outer, total, inner) = split_at_axis(self.shape(), axis);
        let mut index = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            index.extend((base..base + len * inner).map(|v| v as u32));
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        self.gather(index.into(), &shape)
    }

    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| invalid("concat", "no tensors given"))?;
        if axis >= first.rank() {
            return Err(shape_err("concat", format!("axis {axis} out of range for {:?}", first.shape())));
        }
        for t in tensors {
            let ok = t.rank() == first.rank()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err(
                    "concat",
                    format!("{:?} incompatible with {:?} along axis {axis}", t.shape(), first.shape()),
                ));
            }
        }
        let total: usize = tensors.iter().map(|t| t.shape()[axis]).sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for t in tensors {
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let refs: Vec<&Tensor> = tensors.iter().collect();
        Ok(Tensor::output_with(data, shape, &refs, || {
            Box::new(Concat {
                inputs: tensors.to_vec(),
                axis,
            })
        }))
    }
}
