use crate::error::{shape_err, Result};
use crate::kernels::gemm;
use crate::tensor::{GradFn, Tensor};

/// Batched product `[b, m, k] × [b?, k, n]`; a missing batch axis on the
/// right operand means the same matrix is shared by every batch entry.
struct MatMul {
    inputs: [Tensor; 2],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

impl GradFn for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let [a, b] = &self.inputs;
        let (m, k, n) = (self.m, self.k, self.n);
        let (ad, bd) = (a.data(), b.data());
        let ga = a.requires_grad().then(|| {
            let mut ga = vec![0.0f32; a.numel()];
            for i in 0..self.batch {
                let bm = if self.shared_rhs { &bd[..] } else { &bd[i * k * n..(i + 1) * k * n] };
                // dA = dC · Bᵀ
                gemm(m, n, k, &g[i * m * n..(i + 1) * m * n], false, bm, true, &mut ga[i * m * k..(i + 1) * m * k], 0.0);
            }
            ga
        });
        let gb = b.requires_grad().then(|| {
            let mut gb = vec![0.0f32; b.numel()];
            if self.shared_rhs {
                // all batch rows stacked: dB = Aᵀ · dC over (batch·m) rows
                gemm(k, self.batch * m, n, &ad, true, g, false, &mut gb, 0.0);
            } else {
                for i in 0..self.batch {
                    gemm(k, m, n, &ad[i * m * k..(i + 1) * m * k], true, &g[i * m * n..(i + 1) * m * n], false, &mut gb[i * k * n..(i + 1) * k * n], 0.0);
                }
            }
            gb
        });
        vec![ga, gb]
    }
}

impl Tensor {
    /// Matrix product.
    ///
    /// Supported forms: `[m,k]×[k,n]`, `[b,m,k]×[b,k,n]` and
    /// `[b,m,k]×[k,n]` (right operand shared across the batch).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        let err = || shape_err("matmul", format!("cannot multiply {a:?} by {b:?}"));
        let (batch, m, k, shared, out_shape) = match (a.len(), b.len()) {
            (2, 2) => (1, a[0], a[1], true, vec![a[0], b[1]]),
            (3, 3) if a[0] == b[0] => (a[0], a[1], a[2], false, vec![a[0], a[1], b[2]]),
            (3, 2) => (a[0], a[1], a[2], true, vec![a[0], a[1], b[1]]),
            _ => return Err(err()),
        };
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        if kb != k {
            return Err(err());
        }
        let mut out = vec![0.0f32; batch * m * n];
        {
            let (ad, bd) = (self.data(), other.data());
            if shared {
                gemm(batch * m, k, n, &ad, false, &bd, false, &mut out, 0.0);
            } else {
                for i in 0..batch {
                    gemm(m, k, n, &ad[i * m * k..(i + 1) * m * k], false, &bd[i * k * n..(i + 1) * k * n], false, &mut out[i * m * n..(i + 1) * m * n], 0.0);
                }
            }
        }
        Ok(Tensor::output_with(out, out_shape, &[self, other], || {
            Box::new(MatMul {
                inputs: [self.clone(), other.clone()],
                batch,
                m,
                k,
                n,
                shared_rhs: shared,
            })
        }))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(shape_err("transpose", format!("need rank >= 2, got {:?}", self.shape())));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }
}
