use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::gemm;

/// Patch matrix produced by [`unfold`] / [`im2col`].
///
/// Stored row-major as `patch_dim × positions`. Row `(c·N + ky)·N + kx` holds
/// input channel `c` at kernel offset `(ky, kx)`; column `u = y·W' + x` is the
/// flattened patch feeding output position `(y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedTensor {
    pub patch_dim: usize,
    pub positions: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub data: Vec<f64>,
}

impl UnfoldedTensor {
    /// Column `u` as an owned vector of length `patch_dim`.
    pub fn column(&self, u: usize) -> Vec<f64> {
        (0..self.patch_dim)
            .map(|r| self.data[r * self.positions + u])
            .collect()
    }
}

fn out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    if size + 2 * pad < kernel {
        return Err(Error::dim(format!(
            "kernel {kernel} larger than padded extent {}",
            size + 2 * pad
        )));
    }
    Ok((size + 2 * pad - kernel) / stride + 1)
}

/// General patch extraction with arbitrary stride and zero padding.
pub fn im2col(input: &Tensor, n: usize, stride: usize, pad: usize) -> Result<UnfoldedTensor> {
    let (k, h, w) = input.chw()?;
    let oh = out_extent(h, n, stride, pad)?;
    let ow = out_extent(w, n, stride, pad)?;
    let positions = oh * ow;
    let patch_dim = k * n * n;
    let src = input.data();
    let mut data = vec![0.0; patch_dim * positions];
    for c in 0..k {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..n {
            for kx in 0..n {
                let row = (c * n + ky) * n + kx;
                let dst = &mut data[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(UnfoldedTensor {
        patch_dim,
        positions,
        out_h: oh,
        out_w: ow,
        data,
    })
}

/// Same-size patch extraction: `N` odd, `pad = (N-1)/2`, stride 1.
pub fn unfold(input: &Tensor, n: usize, pad: usize) -> Result<UnfoldedTensor> {
    if n.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "unfold needs an odd kernel size, got {n}"
        )));
    }
    if pad != (n - 1) / 2 {
        return Err(Error::invalid(format!(
            "unfold of N={n} requires pad {}, got {pad}",
            (n - 1) / 2
        )));
    }
    im2col(input, n, 1, pad)
}

/// Overlap-add inverse of [`im2col`]: scatters every column entry back to
/// its source pixel, summing contributions.
pub fn col2im(
    cols: &UnfoldedTensor,
    shape: (usize, usize, usize),
    n: usize,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (k, h, w) = shape;
    let (oh, ow) = (cols.out_h, cols.out_w);
    let positions = cols.positions;
    let mut out = vec![0.0; k * h * w];
    for c in 0..k {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..n {
            for kx in 0..n {
                let row = (c * n + ky) * n + kx;
                let src = &cols.data[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![k, h, w], out).expect("col2im shape")
}

fn check_conv_shapes(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let (k, _, _) = input.chw()?;
    let &[kout, kin, n1, n2] = weights.shape() else {
        return Err(Error::dim(format!(
            "weights must be K'×K×N×N, got {:?}",
            weights.shape()
        )));
    };
    if n1 != n2 {
        return Err(Error::dim(format!("non-square kernel {n1}×{n2}")));
    }
    if kin != k {
        return Err(Error::dim(format!(
            "weights expect {kin} input channels (axis 1), input has {k} (axis 0)"
        )));
    }
    if bias.len() != kout {
        return Err(Error::dim(format!(
            "bias has {} entries (axis 0), weights have {kout} output channels (axis 0)",
            bias.len()
        )));
    }
    Ok((kout, n1))
}

/// Convolution as `W̃ · unfold(x) + b`.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    conv2d_forward_cols(input, weights, bias, stride, pad).map(|(out, _)| out)
}

/// [`conv2d_forward`] that also returns the patch matrix for reuse in the backward pass.
pub fn conv2d_forward_cols(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, UnfoldedTensor)> {
    let (kout, n) = check_conv_shapes(input, weights, bias)?;
    let cols = im2col(input, n, stride, pad)?;
    let p = cols.positions;
    let mut out = vec![0.0; kout * p];
    for (o, row) in out.chunks_mut(p.max(1)).enumerate().take(kout) {
        row.fill(bias.data()[o]);
    }
    gemm(
        kout,
        cols.patch_dim,
        p,
        weights.data(),
        false,
        &cols.data,
        false,
        1.0,
        &mut out,
    );
    let t = Tensor::new(vec![kout, cols.out_h, cols.out_w], out)?;
    Ok((t, cols))
}

/// Gradients of a convolution with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Backward pass of [`conv2d_forward`].
///
/// `grad_weights = Σ_u g_u · x_uᵀ` (one outer product per output position,
/// summed as a single matrix product); `grad_input` is the transposed
/// convolution of the upstream gradient.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let kout = weights.shape().first().copied().unwrap_or(0);
    let bias = Tensor::zeros(&[kout]);
    let (_, n) = check_conv_shapes(input, weights, &bias)?;
    let cols = im2col(input, n, stride, pad)?;
    conv2d_backward_cols(&cols, input.chw()?, weights, upstream, stride, pad)
}

/// [`conv2d_backward`] from a cached patch matrix.
pub fn conv2d_backward_cols(
    cols: &UnfoldedTensor,
    input_shape: (usize, usize, usize),
    weights: &Tensor,
    upstream: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads> {
    let kout = weights.shape()[0];
    let n = weights.shape()[2];
    let expected = [kout, cols.out_h, cols.out_w];
    if upstream.shape() != expected {
        return Err(Error::dim(format!(
            "upstream gradient {:?} does not match forward output {:?}",
            upstream.shape(),
            expected
        )));
    }
    let p = cols.positions;
    let g = upstream.data();

    let mut gw = vec![0.0; kout * cols.patch_dim];
    gemm(
        kout,
        p,
        cols.patch_dim,
        g,
        false,
        &cols.data,
        true,
        0.0,
        &mut gw,
    );

    let gb: Vec<f64> = g
        .chunks(p.max(1))
        .take(kout)
        .map(|c| c.iter().sum())
        .collect();

    let mut gcols = vec![0.0; cols.patch_dim * p];
    gemm(
        cols.patch_dim,
        kout,
        p,
        weights.data(),
        true,
        g,
        false,
        0.0,
        &mut gcols,
    );
    let gcols = UnfoldedTensor {
        data: gcols,
        ..cols.clone_meta()
    };
    let gin = col2im(&gcols, input_shape, n, stride, pad);

    Ok(ConvGrads {
        input: gin,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![kout], gb)?,
    })
}

impl UnfoldedTensor {
    fn clone_meta(&self) -> UnfoldedTensor {
        UnfoldedTensor {
            patch_dim: self.patch_dim,
            positions: self.positions,
            out_h: self.out_h,
            out_w: self.out_w,
            data: Vec::new(),
        }
    }
}
