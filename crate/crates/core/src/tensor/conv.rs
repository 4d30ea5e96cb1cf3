// Copyright 2026 The IPLT Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! 2-D convolution as cross-correlation (the kernel is not flipped).
//!
//! Samples are lowered with im2col, a group of up to [`GROUP`] at a time,
//! into a `[I*K*K, n*H'*W']` column matrix that is multiplied by the
//! `[O, I*K*K]` filter matrix, so output channel `j` depends only on row `j`
//! of the weights. `per_filter_forward` runs the same lowering for a single
//! filter row.

use super::gemm::{gemm, MatRef};
use super::{dims4, shape_err, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[O, I, K, K]`
    pub weights: Tensor,
    /// `[O]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self, TensorError> {
        const OP: &str = "conv params";
        let (o, _, kh, kw) = dims4(&weights, OP)?;
        if kh != kw {
            return Err(shape_err(OP, format!("kernel must be square, got {kh}x{kw}")));
        }
        if bias.shape() != [o] {
            return Err(shape_err(
                OP,
                format!("bias shape {:?} does not match {o} filters", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(shape_err(OP, "stride must be positive"));
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weights.dim(2)
    }

    /// Flat `[I, K, K]` slice of filter `j`.
    pub fn filter(&self, j: usize) -> &[f64] {
        self.weights.row(j)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let k = self.kernel();
        Some((
            conv_output_size(h, k, self.stride, self.padding)?,
            conv_output_size(w, k, self.stride, self.padding)?,
        ))
    }
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_size(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Output positions `lo..hi` along one axis whose input coordinate
    /// `o * stride + t - pad` for kernel tap `t` lies inside `0..limit`.
    #[inline]
    fn valid(&self, t: usize, out: usize, limit: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if t >= self.pad { 0 } else { (self.pad - t).div_ceil(s) };
        let hi = if limit + self.pad > t {
            (limit + self.pad - t).div_ceil(s).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Samples lowered per matrix product.
pub const GROUP: usize = 4;

/// Writes the columns of one sample into `cols`, whose rows have stride `ld`;
/// the sample occupies columns `offset..offset + H'*W'` of every row.
fn im2col(input: &[f64], g: &Geometry, cols: &mut [f64], ld: usize, offset: usize) {
    let plane = g.col_cols();
    for ch in 0..g.c {
        let src = &input[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (ylo, yhi) = g.valid(ki, g.oh, g.h);
            for kj in 0..g.k {
                let (xlo, xhi) = g.valid(kj, g.ow, g.w);
                let row = (ch * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * ld + offset..row * ld + offset + plane];
                dst[..ylo * g.ow].fill(0.0);
                dst[yhi * g.ow..].fill(0.0);
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &src[iy * g.w..(iy + 1) * g.w];
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    out_row[..xlo].fill(0.0);
                    out_row[xhi..].fill(0.0);
                    if g.stride == 1 {
                        let start = xlo + kj - g.pad;
                        out_row[xlo..xhi].copy_from_slice(&src_row[start..start + xhi - xlo]);
                    } else {
                        for ox in xlo..xhi {
                            out_row[ox] = src_row[ox * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates one sample's column gradients into
/// `grad_input`.
fn col2im(cols: &[f64], g: &Geometry, grad_input: &mut [f64], ld: usize, offset: usize) {
    let plane = g.col_cols();
    for ch in 0..g.c {
        let dst = &mut grad_input[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (ylo, yhi) = g.valid(ki, g.oh, g.h);
            for kj in 0..g.k {
                let (xlo, xhi) = g.valid(kj, g.ow, g.w);
                let row = (ch * g.k + ki) * g.k + kj;
                let src = &cols[row * ld + offset..row * ld + offset + plane];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad;
                    let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    let dst_row = &mut dst[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        let start = xlo + kj - g.pad;
                        for (d, v) in dst_row[start..start + xhi - xlo].iter_mut().zip(&src_row[xlo..xhi]) {
                            *d += v;
                        }
                    } else {
                        for ox in xlo..xhi {
                            dst_row[ox * g.stride + kj - g.pad] += src_row[ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(input: &Tensor, params: &ConvParams, op: &'static str) -> Result<(usize, Geometry), TensorError> {
    let (b, c, h, w) = dims4(input, op)?;
    if c != params.in_channels() {
        return Err(shape_err(
            op,
            format!("input has {c} channels but filters expect {}", params.in_channels()),
        ));
    }
    let (oh, ow) = params.output_hw(h, w).ok_or_else(|| {
        shape_err(
            op,
            format!(
                "kernel {k} with padding {p} does not fit a {h}x{w} input",
                k = params.kernel(),
                p = params.padding
            ),
        )
    })?;
    Ok((
        b,
        Geometry {
            c,
            h,
            w,
            k: params.kernel(),
            stride: params.stride,
            pad: params.padding,
            oh,
            ow,
        },
    ))
}

/// `output[b, j] = F_j (*) input[b] + bias[j]`.
pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor, TensorError> {
    let (b, g) = geometry(input, params, "conv2d_forward")?;
    let o = params.out_channels();
    let (rows, plane) = (g.col_rows(), g.col_cols());
    let in_len = g.c * g.h * g.w;
    let mut out = vec![0.0; b * o * plane];
    let group = GROUP.min(b.max(1));
    let mut cols = vec![0.0; rows * group * plane];
    let mut prod = vec![0.0; o * group * plane];
    let weights = MatRef::row_major(params.weights.data(), o, rows);
    for n0 in (0..b).step_by(group) {
        let nb = group.min(b - n0);
        let ld = nb * plane;
        for s in 0..nb {
            let n = n0 + s;
            im2col(
                &input.data()[n * in_len..(n + 1) * in_len],
                &g,
                &mut cols,
                ld,
                s * plane,
            );
        }
        gemm(
            weights,
            MatRef::row_major(&cols[..rows * ld], rows, ld),
            0.0,
            &mut prod[..o * ld],
        );
        for s in 0..nb {
            for j in 0..o {
                let bias = params.bias.data()[j];
                let src = &prod[j * ld + s * plane..j * ld + (s + 1) * plane];
                let dst = &mut out[((n0 + s) * o + j) * plane..((n0 + s) * o + j + 1) * plane];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d = v + bias;
                }
            }
        }
    }
    Tensor::new(vec![b, o, g.oh, g.ow], out)
}

/// One filter's response map, without bias. `input` is a single sample
/// `[I, H, W]` and `filter` is `[I, K, K]`.
pub fn per_filter_forward(
    input: &Tensor,
    filter: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, TensorError> {
    const OP: &str = "per_filter_forward";
    let (ci, h, w) = match *input.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(shape_err(OP, format!("input must be [I,H,W], got {s:?}"))),
    };
    let (cf, k) = match *filter.shape() {
        [c, k1, k2] if k1 == k2 => (c, k1),
        ref s => return Err(shape_err(OP, format!("filter must be [I,K,K], got {s:?}"))),
    };
    if ci != cf {
        return Err(shape_err(
            OP,
            format!("input has {ci} channels but filter expects {cf}"),
        ));
    }
    let params = ConvParams::new(
        filter.clone().reshape(&[1, cf, k, k])?,
        Tensor::zeros(&[1]),
        stride,
        padding,
    )?;
    let batch = input.clone().reshape(&[1, ci, h, w])?;
    let (_, g) = geometry(&batch, &params, OP)?;
    let (rows, plane) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * plane];
    im2col(batch.data(), &g, &mut cols, plane, 0);
    let mut out = vec![0.0; plane];
    gemm(
        MatRef::row_major(filter.data(), 1, rows),
        MatRef::row_major(&cols, rows, plane),
        0.0,
        &mut out,
    );
    Tensor::new(vec![g.oh, g.ow], out)
}

fn backward_impl(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor), TensorError> {
    const OP: &str = "conv2d_backward";
    let (b, g) = geometry(input, params, OP)?;
    let o = params.out_channels();
    let expected = [b, o, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(shape_err(
            OP,
            format!(
                "grad_out shape {:?} does not match forward output {expected:?}",
                grad_out.shape()
            ),
        ));
    }
    let (rows, plane) = (g.col_rows(), g.col_cols());
    let in_len = g.c * g.h * g.w;
    let mut grad_w = vec![0.0; o * rows];
    let mut grad_b = vec![0.0; o];
    let mut grad_in = if need_input { vec![0.0; b * in_len] } else { Vec::new() };
    let group = GROUP.min(b.max(1));
    let mut cols = vec![0.0; rows * group * plane];
    let mut grad_cols = if need_input {
        vec![0.0; rows * group * plane]
    } else {
        Vec::new()
    };
    let mut dy = vec![0.0; o * group * plane];
    for n0 in (0..b).step_by(group) {
        let nb = group.min(b - n0);
        let ld = nb * plane;
        for s in 0..nb {
            let n = n0 + s;
            im2col(
                &input.data()[n * in_len..(n + 1) * in_len],
                &g,
                &mut cols,
                ld,
                s * plane,
            );
            let go = &grad_out.data()[n * o * plane..(n + 1) * o * plane];
            for (j, chan) in go.chunks_exact(plane).enumerate() {
                grad_b[j] += chan.iter().sum::<f64>();
                dy[j * ld + s * plane..j * ld + (s + 1) * plane].copy_from_slice(chan);
            }
        }
        // dW += dY [O, nP] * cols^T [nP, R]
        gemm(
            MatRef::row_major(&dy[..o * ld], o, ld),
            MatRef::transposed(&cols[..rows * ld], rows, ld),
            1.0,
            &mut grad_w,
        );
        if need_input {
            // dcols = W^T [R, O] * dY [O, nP]
            gemm(
                MatRef::transposed(params.weights.data(), o, rows),
                MatRef::row_major(&dy[..o * ld], o, ld),
                0.0,
                &mut grad_cols[..rows * ld],
            );
            for s in 0..nb {
                let n = n0 + s;
                col2im(
                    &grad_cols,
                    &g,
                    &mut grad_in[n * in_len..(n + 1) * in_len],
                    ld,
                    s * plane,
                );
            }
        }
    }
    let grad_input = if need_input {
        Some(Tensor::new(input.shape().to_vec(), grad_in)?)
    } else {
        None
    };
    Ok((
        grad_input,
        Tensor::new(params.weights.shape().to_vec(), grad_w)?,
        Tensor::new(vec![o], grad_b)?,
    ))
}

pub fn conv2d_backward(input: &Tensor, params: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads, TensorError> {
    let (gi, gw, gb) = backward_impl(input, params, grad_out, true)?;
    Ok(ConvGrads {
        input: gi.expect("input gradient requested"),
        weights: gw,
        bias: gb,
    })
}

/// Weight and bias gradients only, for the first layer of a network where
/// the input gradient is never consumed.
pub fn conv2d_backward_params(
    input: &Tensor,
    params: &ConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    let (_, gw, gb) = backward_impl(input, params, grad_out, false)?;
    Ok((gw, gb))
}
