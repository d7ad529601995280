//! 2-D and 3-D cross-correlation (the deep-learning "convolution": kernels
//! are not flipped) plus edge-replication padding.
//!
//! Inputs are channels-first: `(C_in, H, W)` and `(C_in, T, H, W)`. Padding
//! is zero-valued and symmetric per axis.

use super::tensor_like;
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

fn out_extent(op: &'static str, input: usize, pad: usize, kernel: usize, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid(op, "stride must be positive"));
    }
    if kernel == 0 {
        return Err(Error::invalid(op, "kernel extent must be positive"));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::invalid(
            op,
            format!("kernel extent {kernel} exceeds padded input extent {padded}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Clip a kernel axis to the offsets that land inside `[0, extent)` when the
/// window starts at `start` (may be negative under padding).
fn valid_range(start: isize, kernel: usize, extent: usize) -> (usize, usize) {
    let lo = (-start).max(0) as usize;
    let hi = (extent as isize - start).clamp(0, kernel as isize) as usize;
    (lo, hi.max(lo))
}

impl Tape {
    /// 2-D convolution: input `(C_in, H, W)`, kernel `(C_out, C_in, kh, kw)`,
    /// scalar stride and zero padding. Output `(C_out, OH, OW)`.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let in_shape = self.shape(input).to_vec();
        let k_shape = self.shape(kernel).to_vec();
        if in_shape.len() != 3 || k_shape.len() != 4 || in_shape[0] != k_shape[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: in_shape,
                rhs: k_shape,
            });
        }
        let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
        let (c_out, kh, kw) = (k_shape[0], k_shape[2], k_shape[3]);
        let oh = out_extent("conv2d", h, padding, kh, stride)?;
        let ow = out_extent("conv2d", w, padding, kw, stride)?;

        let mut data = vec![0.0; c_out * oh * ow];
        {
            let xv = self.data(input);
            let kv = self.data(kernel);
            forward2d(xv, kv, &mut data, c_in, h, w, c_out, kh, kw, oh, ow, stride, padding);
        }
        let out = tensor_like(&[c_out, oh, ow], data);
        Ok(self.push_op(
            out,
            &[input, kernel],
            Box::new(move |tape, g| {
                let xv = tape.data(input);
                let kv = tape.data(kernel);
                let mut dx = tape.needs_grad(input).then(|| vec![0.0; xv.len()]);
                let mut dk = tape.needs_grad(kernel).then(|| vec![0.0; kv.len()]);
                backward2d(
                    xv, kv, g, dx.as_deref_mut(), dk.as_deref_mut(),
                    c_in, h, w, c_out, kh, kw, oh, ow, stride, padding,
                );
                let mut contribs = Vec::new();
                if let Some(dx) = dx {
                    contribs.push((input, dx));
                }
                if let Some(dk) = dk {
                    contribs.push((kernel, dk));
                }
                contribs
            }),
        ))
    }

    /// 3-D convolution: input `(C_in, T, H, W)`, kernel
    /// `(C_out, C_in, kt, kh, kw)`, per-axis stride and zero padding.
    pub fn conv3d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<TensorId> {
        let in_shape = self.shape(input).to_vec();
        let k_shape = self.shape(kernel).to_vec();
        if in_shape.len() != 4 || k_shape.len() != 5 || in_shape[0] != k_shape[1] {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                lhs: in_shape,
                rhs: k_shape,
            });
        }
        let dims = Conv3dDims {
            c_in: in_shape[0],
            t: in_shape[1],
            h: in_shape[2],
            w: in_shape[3],
            c_out: k_shape[0],
            kt: k_shape[2],
            kh: k_shape[3],
            kw: k_shape[4],
            ot: out_extent("conv3d", in_shape[1], padding[0], k_shape[2], stride[0])?,
            oh: out_extent("conv3d", in_shape[2], padding[1], k_shape[3], stride[1])?,
            ow: out_extent("conv3d", in_shape[3], padding[2], k_shape[4], stride[2])?,
            stride,
            padding,
        };
        let mut data = vec![0.0; dims.c_out * dims.ot * dims.oh * dims.ow];
        {
            let xv = self.data(input);
            let kv = self.data(kernel);
            forward3d(xv, kv, &mut data, &dims);
        }
        let out = tensor_like(&[dims.c_out, dims.ot, dims.oh, dims.ow], data);
        Ok(self.push_op(
            out,
            &[input, kernel],
            Box::new(move |tape, g| {
                let xv = tape.data(input);
                let kv = tape.data(kernel);
                let mut dx = tape.needs_grad(input).then(|| vec![0.0; xv.len()]);
                let mut dk = tape.needs_grad(kernel).then(|| vec![0.0; kv.len()]);
                backward3d(xv, kv, g, dx.as_deref_mut(), dk.as_deref_mut(), &dims);
                let mut contribs = Vec::new();
                if let Some(dx) = dx {
                    contribs.push((input, dx));
                }
                if let Some(dk) = dk {
                    contribs.push((kernel, dk));
                }
                contribs
            }),
        ))
    }

    /// Depthwise 3-D convolution: input `(C, T, H, W)`, kernel
    /// `(C, kt, kh, kw)`, one filter per channel with no cross-channel
    /// mixing. Output `(C, OT, OH, OW)`.
    pub fn conv3d_depthwise(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<TensorId> {
        let in_shape = self.shape(input).to_vec();
        let k_shape = self.shape(kernel).to_vec();
        if in_shape.len() != 4 || k_shape.len() != 4 || in_shape[0] != k_shape[0] {
            return Err(Error::ShapeMismatch {
                op: "conv3d_depthwise",
                lhs: in_shape,
                rhs: k_shape,
            });
        }
        let dims = Conv3dDims {
            c_in: 1,
            t: in_shape[1],
            h: in_shape[2],
            w: in_shape[3],
            c_out: 1,
            kt: k_shape[1],
            kh: k_shape[2],
            kw: k_shape[3],
            ot: out_extent("conv3d_depthwise", in_shape[1], padding[0], k_shape[1], stride[0])?,
            oh: out_extent("conv3d_depthwise", in_shape[2], padding[1], k_shape[2], stride[1])?,
            ow: out_extent("conv3d_depthwise", in_shape[3], padding[2], k_shape[3], stride[2])?,
            stride,
            padding,
        };
        let channels = in_shape[0];
        let x_chan = dims.t * dims.h * dims.w;
        let k_chan = dims.kt * dims.kh * dims.kw;
        let o_chan = dims.ot * dims.oh * dims.ow;
        let mut data = vec![0.0; channels * o_chan];
        {
            let xv = self.data(input);
            let kv = self.data(kernel);
            for c in 0..channels {
                forward3d(
                    &xv[c * x_chan..(c + 1) * x_chan],
                    &kv[c * k_chan..(c + 1) * k_chan],
                    &mut data[c * o_chan..(c + 1) * o_chan],
                    &dims,
                );
            }
        }
        let out = tensor_like(&[channels, dims.ot, dims.oh, dims.ow], data);
        Ok(self.push_op(
            out,
            &[input, kernel],
            Box::new(move |tape, g| {
                let xv = tape.data(input);
                let kv = tape.data(kernel);
                let mut dx = tape.needs_grad(input).then(|| vec![0.0; xv.len()]);
                let mut dk = tape.needs_grad(kernel).then(|| vec![0.0; kv.len()]);
                for c in 0..channels {
                    let (xs, ks) = (c * x_chan, c * k_chan);
                    backward3d(
                        &xv[xs..xs + x_chan],
                        &kv[ks..ks + k_chan],
                        &g[c * o_chan..(c + 1) * o_chan],
                        dx.as_deref_mut().map(|d| &mut d[xs..xs + x_chan]),
                        dk.as_deref_mut().map(|d| &mut d[ks..ks + k_chan]),
                        &dims,
                    );
                }
                let mut contribs = Vec::new();
                if let Some(dx) = dx {
                    contribs.push((input, dx));
                }
                if let Some(dk) = dk {
                    contribs.push((kernel, dk));
                }
                contribs
            }),
        ))
    }

    /// Append `count` copies of the final slice along `axis` (edge
    /// replication). Gradients of the copies fold back onto that slice.
    pub fn pad_replicate_end(&mut self, x: TensorId, axis: usize, count: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::invalid(
                "pad_replicate_end",
                format!("axis {} unusable for shape {:?}", axis, shape),
            ));
        }
        if count == 0 {
            // Identity; still record a pass-through node for uniformity.
            return self.reshape(x, &shape);
        }
        let (outer, len, inner) = super::lane_extents(&shape, axis);
        let new_len = len + count;
        let mut out_shape = shape.clone();
        out_shape[axis] = new_len;
        let mut data = vec![0.0; outer * new_len * inner];
        {
            let xv = self.data(x);
            for o in 0..outer {
                let src = o * len * inner;
                let dst = o * new_len * inner;
                data[dst..dst + len * inner].copy_from_slice(&xv[src..src + len * inner]);
                let last = &xv[src + (len - 1) * inner..src + len * inner];
                for c in 0..count {
                    let at = dst + (len + c) * inner;
                    data[at..at + inner].copy_from_slice(last);
                }
            }
        }
        let out = tensor_like(&out_shape, data);
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |_, g| {
                let mut contrib = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = o * new_len * inner;
                    let dst = o * len * inner;
                    contrib[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                    for c in 0..count {
                        let at = src + (len + c) * inner;
                        for i in 0..inner {
                            contrib[dst + (len - 1) * inner + i] += g[at + i];
                        }
                    }
                }
                vec![(x, contrib)]
            }),
        ))
    }
}

#[allow(clippy::too_many_arguments)]
fn forward2d(
    x: &[f64], k: &[f64], out: &mut [f64],
    c_in: usize, h: usize, w: usize,
    c_out: usize, kh: usize, kw: usize,
    oh: usize, ow: usize, stride: usize, padding: usize,
) {
    for co in 0..c_out {
        let k_co = &k[co * c_in * kh * kw..(co + 1) * c_in * kh * kw];
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - padding as isize;
            let (kh_lo, kh_hi) = valid_range(iy0, kh, h);
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - padding as isize;
                let (kw_lo, kw_hi) = valid_range(ix0, kw, w);
                let mut acc = 0.0;
                for ci in 0..c_in {
                    let x_c = &x[ci * h * w..(ci + 1) * h * w];
                    let k_c = &k_co[ci * kh * kw..(ci + 1) * kh * kw];
                    for ky in kh_lo..kh_hi {
                        let iy = (iy0 + ky as isize) as usize;
                        let row = &x_c[iy * w..(iy + 1) * w];
                        let krow = &k_c[ky * kw..(ky + 1) * kw];
                        for kx in kw_lo..kw_hi {
                            acc += row[(ix0 + kx as isize) as usize] * krow[kx];
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward2d(
    x: &[f64], k: &[f64], g: &[f64],
    mut dx: Option<&mut [f64]>, mut dk: Option<&mut [f64]>,
    c_in: usize, h: usize, w: usize,
    c_out: usize, kh: usize, kw: usize,
    oh: usize, ow: usize, stride: usize, padding: usize,
) {
    for co in 0..c_out {
        for oy in 0..oh {
            let iy0 = (oy * stride) as isize - padding as isize;
            let (kh_lo, kh_hi) = valid_range(iy0, kh, h);
            for ox in 0..ow {
                let ix0 = (ox * stride) as isize - padding as isize;
                let (kw_lo, kw_hi) = valid_range(ix0, kw, w);
                let gv = g[(co * oh + oy) * ow + ox];
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..c_in {
                    let x_base = ci * h * w;
                    let k_base = (co * c_in + ci) * kh * kw;
                    for ky in kh_lo..kh_hi {
                        let iy = (iy0 + ky as isize) as usize;
                        for kx in kw_lo..kw_hi {
                            let ix = (ix0 + kx as isize) as usize;
                            if let Some(dx) = dx.as_mut() {
                                dx[x_base + iy * w + ix] += gv * k[k_base + ky * kw + kx];
                            }
                            if let Some(dk) = dk.as_mut() {
                                dk[k_base + ky * kw + kx] += gv * x[x_base + iy * w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv3dDims {
    c_in: usize,
    t: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    ot: usize,
    oh: usize,
    ow: usize,
    stride: [usize; 3],
    padding: [usize; 3],
}

fn forward3d(x: &[f64], k: &[f64], out: &mut [f64], d: &Conv3dDims) {
    let x_chan = d.t * d.h * d.w;
    let k_chan = d.kt * d.kh * d.kw;
    for co in 0..d.c_out {
        let k_co = &k[co * d.c_in * k_chan..(co + 1) * d.c_in * k_chan];
        for oz in 0..d.ot {
            let iz0 = (oz * d.stride[0]) as isize - d.padding[0] as isize;
            let (kt_lo, kt_hi) = valid_range(iz0, d.kt, d.t);
            for oy in 0..d.oh {
                let iy0 = (oy * d.stride[1]) as isize - d.padding[1] as isize;
                let (kh_lo, kh_hi) = valid_range(iy0, d.kh, d.h);
                for ox in 0..d.ow {
                    let ix0 = (ox * d.stride[2]) as isize - d.padding[2] as isize;
                    let (kw_lo, kw_hi) = valid_range(ix0, d.kw, d.w);
                    let mut acc = 0.0;
                    for ci in 0..d.c_in {
                        let x_c = &x[ci * x_chan..(ci + 1) * x_chan];
                        let k_c = &k_co[ci * k_chan..(ci + 1) * k_chan];
                        for kz in kt_lo..kt_hi {
                            let iz = (iz0 + kz as isize) as usize;
                            for ky in kh_lo..kh_hi {
                                let iy = (iy0 + ky as isize) as usize;
                                let row = &x_c[(iz * d.h + iy) * d.w..(iz * d.h + iy + 1) * d.w];
                                let krow = &k_c[(kz * d.kh + ky) * d.kw..(kz * d.kh + ky + 1) * d.kw];
                                for kx in kw_lo..kw_hi {
                                    acc += row[(ix0 + kx as isize) as usize] * krow[kx];
                                }
                            }
                        }
                    }
                    out[((co * d.ot + oz) * d.oh + oy) * d.ow + ox] = acc;
                }
            }
        }
    }
}

fn backward3d(
    x: &[f64], k: &[f64], g: &[f64],
    mut dx: Option<&mut [f64]>, mut dk: Option<&mut [f64]>,
    d: &Conv3dDims,
) {
    let x_chan = d.t * d.h * d.w;
    let k_chan = d.kt * d.kh * d.kw;
    for co in 0..d.c_out {
        for oz in 0..d.ot {
            let iz0 = (oz * d.stride[0]) as isize - d.padding[0] as isize;
            let (kt_lo, kt_hi) = valid_range(iz0, d.kt, d.t);
            for oy in 0..d.oh {
                let iy0 = (oy * d.stride[1]) as isize - d.padding[1] as isize;
                let (kh_lo, kh_hi) = valid_range(iy0, d.kh, d.h);
                for ox in 0..d.ow {
                    let ix0 = (ox * d.stride[2]) as isize - d.padding[2] as isize;
                    let (kw_lo, kw_hi) = valid_range(ix0, d.kw, d.w);
                    let gv = g[((co * d.ot + oz) * d.oh + oy) * d.ow + ox];
                    if gv == 0.0 {
                        continue;
                    }
                    for ci in 0..d.c_in {
                        let x_base = ci * x_chan;
                        let k_base = (co * d.c_in + ci) * k_chan;
                        for kz in kt_lo..kt_hi {
                            let iz = (iz0 + kz as isize) as usize;
                            for ky in kh_lo..kh_hi {
                                let iy = (iy0 + ky as isize) as usize;
                                let x_row = x_base + (iz * d.h + iy) * d.w;
                                let k_row = k_base + (kz * d.kh + ky) * d.kw;
                                for kx in kw_lo..kw_hi {
                                    let ix = (ix0 + kx as isize) as usize;
                                    if let Some(dx) = dx.as_mut() {
                                        dx[x_row + ix] += gv * k[k_row + kx];
                                    }
                                    if let Some(dk) = dk.as_mut() {
                                        dk[k_row + kx] += gv * x[x_row + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identity_kernel_preserves_input() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::new(vec![1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap());
        // 1x1 kernel with weight 1: pure copy.
        let k = tape.var(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).data, tape.value(x).data);
    }

    #[test]
    fn conv2d_matches_hand_computation() {
        let mut tape = Tape::new();
        // 2x2 input, 2x2 kernel, no padding: single dot product.
        let x = tape.var(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = tape.var(Tensor::new(vec![1, 1, 2, 2], vec![10.0, 20.0, 30.0, 40.0]).unwrap());
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).data, vec![10.0 + 40.0 + 90.0 + 160.0]);
    }

    #[test]
    fn conv2d_zero_padding_shapes() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2, 5, 7]));
        let k = tape.var(Tensor::zeros(&[3, 2, 3, 3]));
        let y = tape.conv2d(x, k, 2, 1).unwrap();
        // ceil(5/2)=3, ceil(7/2)=4 under k=3, p=1, s=2.
        assert_eq!(tape.shape(y), &[3, 3, 4]);
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[1, 2, 2]));
        let k = tape.var(Tensor::zeros(&[1, 1, 5, 5]));
        assert!(tape.conv2d(x, k, 1, 1).is_err());
    }

    #[test]
    fn conv3d_shape_law() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[3, 8, 16, 16]));
        let k = tape.var(Tensor::zeros(&[4, 3, 3, 3, 3]));
        let y = tape.conv3d(x, k, [2, 2, 2], [1, 1, 1]).unwrap();
        assert_eq!(tape.shape(y), &[4, 4, 8, 8]);
    }

    #[test]
    fn conv3d_sum_kernel_counts_window() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::ones(&[1, 2, 2, 2]));
        let k = tape.var(Tensor::ones(&[1, 1, 2, 2, 2]));
        let y = tape.conv3d(x, k, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(tape.value(y).data, vec![8.0]);
    }

    #[test]
    fn depthwise_matches_dense_conv_with_block_diagonal_kernel() {
        let mut rng = crate::rng::CounterRng::keyed(41, 0, "dw-oracle");
        let mut tape = Tape::new();
        let x = tape.var(Tensor::new(vec![3, 4, 5, 5], rng.normal_vec(300)).unwrap());
        let kd = Tensor::new(vec![3, 2, 3, 3], rng.normal_vec(54)).unwrap();
        // Dense kernel with one non-zero input channel per output channel.
        let mut dense = Tensor::zeros(&[3, 3, 2, 3, 3]);
        for c in 0..3 {
            for i in 0..18 {
                dense.data[(c * 3 + c) * 18 + i] = kd.data[c * 18 + i];
            }
        }
        let kd = tape.var(kd);
        let dense = tape.var(dense);
        let a = tape.conv3d_depthwise(x, kd, [1, 2, 2], [1, 1, 1]).unwrap();
        let b = tape.conv3d(x, dense, [1, 2, 2], [1, 1, 1]).unwrap();
        assert_eq!(tape.shape(a), tape.shape(b));
        for (u, v) in tape.value(a).data.iter().zip(&tape.value(b).data) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn depthwise_kernel_equal_stride_averages_blocks() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..8).map(|i| (i / 4) as f64).collect();
        let x = tape.var(Tensor::new(vec![1, 2, 2, 2], data).unwrap());
        let k = tape.var(Tensor::full(&[1, 2, 2, 2], 0.125));
        let y = tape.conv3d_depthwise(x, k, [2, 2, 2], [0, 0, 0]).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        // Mean of {0, 1} over the leading axis.
        assert!((tape.value(y).data[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn depthwise_gradient_check() {
        use crate::gradcheck::check_gradients;
        let mut rng = crate::rng::CounterRng::keyed(42, 0, "dw-grad");
        let x = Tensor::new(vec![2, 3, 4, 4], rng.normal_vec(96)).unwrap();
        let k = Tensor::new(vec![2, 2, 2, 2], rng.normal_vec(16)).unwrap();
        let report = check_gradients(
            &|tape, xs| {
                let y = tape.conv3d_depthwise(xs[0], xs[1], [1, 2, 2], [1, 0, 0])?;
                Ok(tape.sum_all(y))
            },
            &[x, k],
            0.0,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn pad_replicate_extends_last_slice() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = tape.pad_replicate_end(x, 0, 2).unwrap();
        assert_eq!(tape.shape(y), &[5, 2]);
        assert_eq!(
            tape.value(y).data,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 5.0, 6.0, 5.0, 6.0]
        );
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        // The replicated rows fold their gradient onto the source row.
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0, 3.0, 3.0]);
    }
}
