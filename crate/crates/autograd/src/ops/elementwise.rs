use crate::error::Result;
use crate::shape::{broadcast_shape, broadcast_strides, for_each_broadcast2, numel};
use crate::tensor::{GradFn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

struct Binary {
    kind: BinKind,
    inputs: [Tensor; 2],
    out_shape: Vec<usize>,
}

impl GradFn for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        }
    }

    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let [a, b] = &self.inputs;
        let (wa, wb) = (a.requires_grad(), b.requires_grad());
        let mut ga = wa.then(|| vec![0.0f32; a.numel()]);
        let mut gb = wb.then(|| vec![0.0f32; b.numel()]);
        let same = a.shape() == b.shape();
        match self.kind {
            BinKind::Add | BinKind::Sub => {
                let sign = if self.kind == BinKind::Sub { -1.0 } else { 1.0 };
                if same {
                    if let Some(ga) = ga.as_mut() {
                        ga.copy_from_slice(g);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb.iter_mut().zip(g).for_each(|(d, &s)| *d = sign * s);
                    }
                } else {
                    let sa = broadcast_strides(a.shape(), &self.out_shape);
                    let sb = broadcast_strides(b.shape(), &self.out_shape);
                    for_each_broadcast2(&self.out_shape, &sa, &sb, |o, ia, ib| {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += g[o];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += sign * g[o];
                        }
                    });
                }
            }
            BinKind::Mul => {
                let (ad, bd) = (a.data(), b.data());
                if same {
                    if let Some(ga) = ga.as_mut() {
                        for i in 0..g.len() {
                            ga[i] = g[i] * bd[i];
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        for i in 0..g.len() {
                            gb[i] = g[i] * ad[i];
                        }
                    }
                } else {
                    let sa = broadcast_strides(a.shape(), &self.out_shape);
                    let sb = broadcast_strides(b.shape(), &self.out_shape);
                    for_each_broadcast2(&self.out_shape, &sa, &sb, |o, ia, ib| {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += g[o] * bd[ib];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += g[o] * ad[ia];
                        }
                    });
                }
            }
        }
        vec![ga, gb]
    }
}

fn binary(kind: BinKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let f = |x: f32, y: f32| match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
    };
    let data = {
        let (ad, bd) = (a.data(), b.data());
        if a.shape() == b.shape() {
            ad.iter().zip(bd.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = vec![0.0f32; numel(&out_shape)];
            let sa = broadcast_strides(a.shape(), &out_shape);
            let sb = broadcast_strides(b.shape(), &out_shape);
            for_each_broadcast2(&out_shape, &sa, &sb, |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
            out
        }
    };
    Ok(Tensor::output_with(data, out_shape.clone(), &[a, b], || {
        Box::new(Binary {
            kind,
            inputs: [a.clone(), b.clone()],
            out_shape,
        })
    }))
}

/// `y = scale * x + shift`
struct Affine {
    inputs: [Tensor; 1],
    scale: f32,
}

impl GradFn for Affine {
    fn name(&self) -> &'static str {
        "affine"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.iter().map(|v| v * self.scale).collect())]
    }
}

struct Abs {
    inputs: [Tensor; 1],
}

impl GradFn for Abs {
    fn name(&self) -> &'static str {
        "abs"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let x = self.inputs[0].data();
        // subgradient 0 at the kink
        let gx = x
            .iter()
            .zip(g)
            .map(|(&v, &gv)| {
                if v > 0.0 {
                    gv
                } else if v < 0.0 {
                    -gv
                } else {
                    0.0
                }
            })
            .collect();
        vec![Some(gx)]
    }
}

struct Square {
    inputs: [Tensor; 1],
}

impl GradFn for Square {
    fn name(&self) -> &'static str {
        "square"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let x = self.inputs[0].data();
        vec![Some(x.iter().zip(g).map(|(&v, &gv)| 2.0 * v * gv).collect())]
    }
}

impl Tensor {
    /// Broadcasting elementwise sum.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(BinKind::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(BinKind::Sub, self, other)
    }

    /// Broadcasting Hadamard product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(BinKind::Mul, self, other)
    }

    pub fn affine(&self, scale: f32, shift: f32) -> Tensor {
        let data = self.data().iter().map(|&v| scale * v + shift).collect();
        Tensor::output_with(data, self.shape().to_vec(), &[self], || {
            Box::new(Affine {
                inputs: [self.clone()],
                scale,
            })
        })
    }

    pub fn mul_scalar(&self, s: f32) -> Tensor {
        self.affine(s, 0.0)
    }

    pub fn add_scalar(&self, s: f32) -> Tensor {
        self.affine(1.0, s)
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    pub fn abs(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.abs()).collect();
        Tensor::output_with(data, self.shape().to_vec(), &[self], || {
            Box::new(Abs {
                inputs: [self.clone()],
            })
        })
    }

    pub fn square(&self) -> Tensor {
        let data = self.data().iter().map(|v| v * v).collect();
        Tensor::output_with(data, self.shape().to_vec(), &[self], || {
            Box::new(Square {
                inputs: [self.clone()],
            })
        })
    }
}
