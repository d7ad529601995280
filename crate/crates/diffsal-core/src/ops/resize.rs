//! Spatial and temporal resampling ops.

use super::tensor_like;
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

/// Nearest-neighbor source index for resizing `in_len` -> `out_len`.
/// Pixel-center convention: src = floor((dst + 0.5) * in/out).
fn nearest_src(dst: usize, in_len: usize, out_len: usize) -> usize {
    let src = ((dst as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize;
    src.min(in_len - 1)
}

/// Linear-interpolation sample positions mapping `out_len` points onto
/// `[0, in_len-1]` with aligned endpoints. A single output samples the middle.
fn linear_positions(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|j| {
            let pos = if out_len == 1 {
                (in_len - 1) as f64 / 2.0
            } else {
                j as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
            };
            let lo = (pos.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

impl Tape {
    /// Nearest-neighbor upsampling of the last two axes by an integer factor.
    pub fn upsample_nearest(&mut self, x: TensorId, factor: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::invalid("upsample_nearest", "needs rank >= 2"));
        }
        if factor == 0 {
            return Err(Error::invalid("upsample_nearest", "factor must be positive"));
        }
        let (ah, aw) = (shape.len() - 2, shape.len() - 1);
        self.resize_nearest_axes(x, ah, aw, shape[ah] * factor, shape[aw] * factor)
    }

    /// Nearest-neighbor resize of two axes to explicit output extents.
    /// Handles both enlargement and reduction.
    pub fn resize_nearest_axes(
        &mut self,
        x: TensorId,
        axis_h: usize,
        axis_w: usize,
        out_h: usize,
        out_w: usize,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let rank = shape.len();
        if axis_h + 1 != axis_w || axis_w >= rank {
            return Err(Error::invalid(
                "resize_nearest_axes",
                format!("axes ({axis_h}, {axis_w}) must be adjacent and in range for rank {rank}"),
            ));
        }
        let (in_h, in_w) = (shape[axis_h], shape[axis_w]);
        if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
            return Err(Error::invalid("resize_nearest_axes", "zero extent"));
        }
        let outer: usize = shape[..axis_h].iter().product();
        let inner: usize = shape[axis_w + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis_h] = out_h;
        out_shape[axis_w] = out_w;

        let src_h: Vec<usize> = (0..out_h).map(|y| nearest_src(y, in_h, out_h)).collect();
        let src_w: Vec<usize> = (0..out_w).map(|xcol| nearest_src(xcol, in_w, out_w)).collect();

        let mut data = vec![0.0; outer * out_h * out_w * inner];
        {
            let xv = self.data(x);
            for o in 0..outer {
                for (y, &sy) in src_h.iter().enumerate() {
                    for (xcol, &sx) in src_w.iter().enumerate() {
                        let dst = ((o * out_h + y) * out_w + xcol) * inner;
                        let src = ((o * in_h + sy) * in_w + sx) * inner;
                        data[dst..dst + inner].copy_from_slice(&xv[src..src + inner]);
                    }
                }
            }
        }
        let out = tensor_like(&out_shape, data);
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |tape, g| {
                let mut contrib = vec![0.0; tape.value(x).len()];
                for o in 0..outer {
                    for (y, &sy) in src_h.iter().enumerate() {
                        for (xcol, &sx) in src_w.iter().enumerate() {
                            let dst = ((o * out_h + y) * out_w + xcol) * inner;
                            let src = ((o * in_h + sy) * in_w + sx) * inner;
                            for i in 0..inner {
                                contrib[src + i] += g[dst + i];
                            }
                        }
                    }
                }
                vec![(x, contrib)]
            }),
        ))
    }

    /// Bilinear upsampling of the leading two axes of an `(H, W, C)` tensor
    /// by an integer factor, pixel-center (half-pixel offset) convention.
    pub fn upsample_bilinear(&mut self, x: TensorId, factor: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::invalid("upsample_bilinear", "expects (H, W, C)"));
        }
        if factor == 0 {
            return Err(Error::invalid("upsample_bilinear", "factor must be positive"));
        }
        let (h, w, c) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = (h * factor, w * factor);
        // Per output row/col: two source indices and the hi-side weight.
        let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
            (0..out_len)
                .map(|j| {
                    let pos = (j as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
                    let pos = pos.clamp(0.0, (in_len - 1) as f64);
                    let lo = pos.floor() as usize;
                    let hi = (lo + 1).min(in_len - 1);
                    (lo, hi, pos - lo as f64)
                })
                .collect()
        };
        let ty = taps(oh, h);
        let tx = taps(ow, w);

        let mut data = vec![0.0; oh * ow * c];
        {
            let xv = self.data(x);
            for (y, &(ylo, yhi, wy)) in ty.iter().enumerate() {
                for (xc, &(xlo, xhi, wx)) in tx.iter().enumerate() {
                    let dst = (y * ow + xc) * c;
                    for ch in 0..c {
                        let v00 = xv[(ylo * w + xlo) * c + ch];
                        let v01 = xv[(ylo * w + xhi) * c + ch];
                        let v10 = xv[(yhi * w + xlo) * c + ch];
                        let v11 = xv[(yhi * w + xhi) * c + ch];
                        let top = v00 + (v01 - v00) * wx;
                        let bot = v10 + (v11 - v10) * wx;
                        data[dst + ch] = top + (bot - top) * wy;
                    }
                }
            }
        }
        let out = tensor_like(&[oh, ow, c], data);
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |tape, g| {
                let mut contrib = vec![0.0; tape.value(x).len()];
                for (y, &(ylo, yhi, wy)) in ty.iter().enumerate() {
                    for (xc, &(xlo, xhi, wx)) in tx.iter().enumerate() {
                        let dst = (y * ow + xc) * c;
                        for ch in 0..c {
                            let gv = g[dst + ch];
                            contrib[(ylo * w + xlo) * c + ch] += gv * (1.0 - wy) * (1.0 - wx);
                            contrib[(ylo * w + xhi) * c + ch] += gv * (1.0 - wy) * wx;
                            contrib[(yhi * w + xlo) * c + ch] += gv * wy * (1.0 - wx);
                            contrib[(yhi * w + xhi) * c + ch] += gv * wy * wx;
                        }
                    }
                }
                vec![(x, contrib)]
            }),
        ))
    }

    /// Linear interpolation along axis 0 to a new length, endpoints aligned.
    pub fn interp_linear_axis0(&mut self, x: TensorId, new_len: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || shape[0] == 0 || new_len == 0 {
            return Err(Error::invalid(
                "interp_linear_axis0",
                format!("cannot interpolate shape {:?} to length {}", shape, new_len),
            ));
        }
        let in_len = shape[0];
        let inner: usize = shape[1..].iter().product();
        let taps = linear_positions(in_len, new_len);
        let mut out_shape = shape.clone();
        out_shape[0] = new_len;
        let mut data = vec![0.0; new_len * inner];
        {
            let xv = self.data(x);
            for (j, &(lo, hi, frac)) in taps.iter().enumerate() {
                let dst = j * inner;
                let a = &xv[lo * inner..(lo + 1) * inner];
                let b = &xv[hi * inner..(hi + 1) * inner];
                for i in 0..inner {
                    data[dst + i] = a[i] + (b[i] - a[i]) * frac;
                }
            }
        }
        let out = tensor_like(&out_shape, data);
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |_, g| {
                let mut contrib = vec![0.0; in_len * inner];
                for (j, &(lo, hi, frac)) in taps.iter().enumerate() {
                    let src = j * inner;
                    for i in 0..inner {
                        contrib[lo * inner + i] += g[src + i] * (1.0 - frac);
                        contrib[hi * inner + i] += g[src + i] * frac;
                    }
                }
                vec![(x, contrib)]
            }),
        ))
    }
}
