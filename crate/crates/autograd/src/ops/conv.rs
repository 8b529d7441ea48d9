use crate::error::{shape_err, Result};
use crate::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::tensor::{GradFn, Tensor};

/// Stride/padding of a 2-D convolution. `output_padding` only applies to
/// the transposed form, where it resolves the output-size ambiguity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl Conv2dParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            output_padding: 0,
        }
    }

    pub fn with_output_padding(mut self, op: usize) -> Self {
        self.output_padding = op;
        self
    }
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(shape_err(op, format!("bias shape {:?}, expected [{channels}]", b.shape())));
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f32], bias: &[f32], batch: usize, plane: usize) {
    let ch = bias.len();
    for n in 0..batch {
        for (c, &b) in bias.iter().enumerate() {
            let start = (n * ch + c) * plane;
            out[start..start + plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad(g: &[f32], batch: usize, ch: usize, plane: usize) -> Vec<f32> {
    let mut gb = vec![0.0f32; ch];
    for n in 0..batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            let start = (n * ch + c) * plane;
            *acc += g[start..start + plane].iter().sum::<f32>();
        }
    }
    gb
}

struct Conv2d {
    inputs: Vec<Tensor>,
    geom: ConvGeom,
    batch: usize,
    out_ch: usize,
}

impl GradFn for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (x, w) = (&self.inputs[0], &self.inputs[1]);
        let geo = &self.geom;
        let (rows, cols_n) = (geo.col_rows(), geo.col_cols());
        let in_plane = geo.channels * geo.in_h * geo.in_w;
        let out_plane = self.out_ch * cols_n;
        let xd = x.data();
        let wd = w.data();
        let mut gx = x.requires_grad().then(|| vec![0.0f32; x.numel()]);
        let mut gw = w.requires_grad().then(|| vec![0.0f32; w.numel()]);
        let mut cols = vec![0.0f32; rows * cols_n];
        for n in 0..self.batch {
            let go = &g[n * out_plane..(n + 1) * out_plane];
            if let Some(gw) = gw.as_mut() {
                im2col(&xd[n * in_plane..(n + 1) * in_plane], geo, &mut cols);
                // dW += dY · colsᵀ
                gemm(self.out_ch, cols_n, rows, go, false, &cols, true, gw, 1.0);
            }
            if let Some(gx) = gx.as_mut() {
                // dcols = Wᵀ · dY
                gemm(rows, self.out_ch, cols_n, &wd, true, go, false, &mut cols, 0.0);
                col2im(&cols, geo, &mut gx[n * in_plane..(n + 1) * in_plane]);
            }
        }
        let mut res = vec![gx, gw];
        if let Some(b) = self.inputs.get(2) {
            res.push(b.requires_grad().then(|| bias_grad(g, self.batch, self.out_ch, cols_n)));
        }
        res
    }
}

struct ConvTranspose2d {
    inputs: Vec<Tensor>,
    /// Geometry of the equivalent forward convolution (output → input).
    geom: ConvGeom,
    batch: usize,
    in_ch: usize,
}

impl GradFn for ConvTranspose2d {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }
    fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
    fn backward(&self, _out: &Tensor, g: &[f32]) -> Vec<Option<Vec<f32>>> {
        let (x, w) = (&self.inputs[0], &self.inputs[1]);
        let geo = &self.geom;
        let (rows, cols_n) = (geo.col_rows(), geo.col_cols());
        let in_plane = self.in_ch * cols_n;
        let out_plane = geo.channels * geo.in_h * geo.in_w;
        let xd = x.data();
        let wd = w.data();
        let mut gx = x.requires_grad().then(|| vec![0.0f32; x.numel()]);
        let mut gw = w.requires_grad().then(|| vec![0.0f32; w.numel()]);
        let mut cols = vec![0.0f32; rows * cols_n];
        for n in 0..self.batch {
            im2col(&g[n * out_plane..(n + 1) * out_plane], geo, &mut cols);
            let xn = &xd[n * in_plane..(n + 1) * in_plane];
            if let Some(gx) = gx.as_mut() {
                // dX = W · im2col(dY)   with W viewed as [Ci, Co·k·k]
                gemm(self.in_ch, rows, cols_n, &wd, false, &cols, false, &mut gx[n * in_plane..(n + 1) * in_plane], 0.0);
            }
            if let Some(gw) = gw.as_mut() {
                // dW += X · im2col(dY)ᵀ
                gemm(self.in_ch, cols_n, rows, xn, false, &cols, true, gw, 1.0);
            }
        }
        let mut res = vec![gx, gw];
        if let Some(b) = self.inputs.get(2) {
            res.push(b.requires_grad().then(|| bias_grad(g, self.batch, geo.channels, geo.in_h * geo.in_w)));
        }
        res
    }
}

impl Tensor {
    /// 2-D convolution of `[N, C, H, W]` by weights `[O, C, kh, kw]`.
    pub fn conv2d(&self, weight: &Tensor, bias: Option<&Tensor>, p: Conv2dParams) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err("conv2d", format!("input {xs:?} incompatible with weight {ws:?}")));
        }
        if p.stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive"));
        }
        let (batch, ch, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * p.padding < kh || w + 2 * p.padding < kw {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        check_bias("conv2d", bias, oc)?;
        let geom = ConvGeom {
            channels: ch,
            in_h: h,
            in_w: w,
            k_h: kh,
            k_w: kw,
            stride: p.stride,
            pad: p.padding,
            out_h: (h + 2 * p.padding - kh) / p.stride + 1,
            out_w: (w + 2 * p.padding - kw) / p.stride + 1,
        };
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let mut out = vec![0.0f32; batch * oc * cols_n];
        {
            let xd = self.data();
            let wd = weight.data();
            let mut cols = vec![0.0f32; rows * cols_n];
            let in_plane = ch * h * w;
            for n in 0..batch {
                im2col(&xd[n * in_plane..(n + 1) * in_plane], &geom, &mut cols);
                gemm(oc, rows, cols_n, &wd, false, &cols, false, &mut out[n * oc * cols_n..(n + 1) * oc * cols_n], 0.0);
            }
            if let Some(b) = bias {
                add_bias(&mut out, &b.data(), batch, cols_n);
            }
        }
        let shape = vec![batch, oc, geom.out_h, geom.out_w];
        let mut refs = vec![self, weight];
        refs.extend(bias);
        Ok(Tensor::output_with(out, shape, &refs, || {
            Box::new(Conv2d {
                inputs: refs.iter().map(|t| (*t).clone()).collect(),
                geom,
                batch,
                out_ch: oc,
            })
        }))
    }

    /// Transposed 2-D convolution of `[N, Ci, H, W]` by weights
    /// `[Ci, Co, kh, kw]`; output side is `(H−1)·s − 2p + k + output_padding`.
    pub fn conv_transpose2d(&self, weight: &Tensor, bias: Option<&Tensor>, p: Conv2dParams) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[0] {
            return Err(shape_err(
                "conv_transpose2d",
                format!("input {xs:?} incompatible with weight {ws:?}"),
            ));
        }
        if p.stride == 0 || p.output_padding >= p.stride {
            return Err(shape_err("conv_transpose2d", "output_padding must be smaller than stride"));
        }
        let (batch, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, kh, kw) = (ws[1], ws[2], ws[3]);
        let out_h = ((h - 1) * p.stride + kh + p.output_padding)
            .checked_sub(2 * p.padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| shape_err("conv_transpose2d", "padding exceeds output extent"))?;
        let out_w = ((w - 1) * p.stride + kw + p.output_padding)
            .checked_sub(2 * p.padding)
            .filter(|&v| v > 0)
            .ok_or_else(|| shape_err("conv_transpose2d", "padding exceeds output extent"))?;
        check_bias("conv_transpose2d", bias, co)?;
        let geom = ConvGeom {
            channels: co,
            in_h: out_h,
            in_w: out_w,
            k_h: kh,
            k_w: kw,
            stride: p.stride,
            pad: p.padding,
            out_h: h,
            out_w: w,
        };
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let out_plane = co * out_h * out_w;
        let mut out = vec![0.0f32; batch * out_plane];
        {
            let xd = self.data();
            let wd = weight.data();
            let mut cols = vec![0.0f32; rows * cols_n];
            for n in 0..batch {
                // cols = Wᵀ · X   with W viewed as [Ci, Co·k·k]
                gemm(rows, ci, cols_n, &wd, true, &xd[n * ci * cols_n..(n + 1) * ci * cols_n], false, &mut cols, 0.0);
                col2im(&cols, &geom, &mut out[n * out_plane..(n + 1) * out_plane]);
            }
            if let Some(b) = bias {
                add_bias(&mut out, &b.data(), batch, out_h * out_w);
            }
        }
        let shape = vec![batch, co, out_h, out_w];
        let mut refs = vec![self, weight];
        refs.extend(bias);
        Ok(Tensor::output_with(out, shape, &refs, || {
            Box::new(ConvTranspose2d {
                inputs: refs.iter().map(|t| (*t).clone()).collect(),
                geom,
                batch,
                in_ch: ci,
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_conv_is_channel_mix() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0], &[1, 2, 2, 2]).unwrap();
        let w = Tensor::new(vec![1.0, 1.0, 2.0, -1.0], &[2, 2, 1, 1]).unwrap();
        let b = Tensor::new(vec![0.5, 0.0], &[2]).unwrap();
        let y = x.conv2d(&w, Some(&b), Conv2dParams::default()).unwrap();
        assert_eq!(y.to_vec(), vec![11.5, 22.5, 33.5, 44.5, -8.0, -16.0, -24.0, -32.0]);
    }

    #[test]
    fn strided_output_shape() {
        let x = Tensor::zeros(&[2, 3, 9, 8]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let y = x.conv2d(&w, None, Conv2dParams::new(2, 1)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5, 4]);
    }

    #[test]
    fn transpose_doubles_with_output_padding() {
        let x = Tensor::zeros(&[1, 4, 5, 6]);
        let w = Tensor::zeros(&[4, 2, 3, 3]);
        let p = Conv2dParams::new(2, 1).with_output_padding(1);
        let y = x.conv_transpose2d(&w, None, p).unwrap();
        assert_eq!(y.shape(), &[1, 2, 10, 12]);
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_transpose(y)> for matching geometry
        let x = Tensor::new((0..2 * 6 * 6).map(|i| ((i * 7 % 13) as f32) - 6.0).collect(), &[1, 2, 6, 6]).unwrap();
        let w = Tensor::new((0..3 * 2 * 9).map(|i| ((i * 5 % 7) as f32) * 0.25 - 0.5).collect(), &[3, 2, 3, 3]).unwrap();
        let p = Conv2dParams::new(2, 1);
        let cx = x.conv2d(&w, None, p).unwrap();
        let y = Tensor::new((0..cx.numel()).map(|i| (i % 5) as f32 - 2.0).collect(), cx.shape()).unwrap();
        let ty = y.conv_transpose2d(&w, None, p.with_output_padding(1)).unwrap();
        assert_eq!(ty.shape(), x.shape());
        let lhs: f32 = cx.to_vec().iter().zip(y.to_vec()).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.to_vec().iter().zip(ty.to_vec()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        assert!(x.conv2d(&w, None, Conv2dParams::default()).is_err());
    }
}
