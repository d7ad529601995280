//! Shape-rearranging ops: reshape, permute, concatenation, slicing.

use super::tensor_like;
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::strides_for;

impl Tape {
    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let value = self.value(x).reshaped(shape)?;
        let old_len = self.value(x).len();
        Ok(self.push_op(
            value,
            &[x],
            Box::new(move |_, g| {
                debug_assert_eq!(g.len(), old_len);
                vec![(x, g.to_vec())]
            }),
        ))
    }

    /// Permute axes: output axis `i` takes input axis `perm[i]`.
    pub fn permute(&mut self, x: TensorId, perm: &[usize]) -> Result<TensorId> {
        let in_shape = self.shape(x).to_vec();
        let rank = in_shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(
                "permute",
                format!("{:?} is not a permutation of rank {}", perm, rank),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let perm = perm.to_vec();
        let forward_map = permutation_map(&in_shape, &perm);
        let mut data = vec![0.0; self.value(x).len()];
        {
            let xv = self.data(x);
            for (out_i, &in_i) in forward_map.iter().enumerate() {
                data[out_i] = xv[in_i];
            }
        }
        let out = tensor_like(&out_shape, data);
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |tape, g| {
                let mut contrib = vec![0.0; tape.value(x).len()];
                for (out_i, &in_i) in forward_map.iter().enumerate() {
                    contrib[in_i] = g[out_i];
                }
                vec![(x, contrib)]
            }),
        ))
    }

    /// Concatenate along an existing axis. All other extents must agree.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no tensors given"));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid(
                "concat",
                format!("axis {} out of range for rank {}", axis, first.len()),
            ));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * axis_total * inner];
        let mut extents = Vec::with_capacity(parts.len());
        {
            let mut offset = 0;
            for &p in parts {
                let ext = self.shape(p)[axis];
                extents.push(ext);
                let pv = self.data(p);
                for o in 0..outer {
                    let dst = (o * axis_total + offset) * inner;
                    let src = o * ext * inner;
                    data[dst..dst + ext * inner].copy_from_slice(&pv[src..src + ext * inner]);
                }
                offset += ext;
            }
        }
        let out = tensor_like(&out_shape, data);
        let parts = parts.to_vec();
        Ok(self.push_op(
            out,
            &parts.clone(),
            Box::new(move |_, g| {
                let mut contribs = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for (&p, &ext) in parts.iter().zip(&extents) {
                    let mut contrib = vec![0.0; outer * ext * inner];
                    for o in 0..outer {
                        let src = (o * axis_total + offset) * inner;
                        let dst = o * ext * inner;
                        contrib[dst..dst + ext * inner].copy_from_slice(&g[src..src + ext * inner]);
                    }
                    contribs.push((p, contrib));
                    offset += ext;
                }
                contribs
            }),
        ))
    }

    /// Contiguous slice `[start, start+len)` along one axis.
    pub fn slice_axis(&mut self, x: TensorId, axis: usize, start: usize, len: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::invalid(
                "slice_axis",
                format!(
                    "slice [{start}, {}) on axis {axis} of shape {:?}",
                    start + len,
                    shape
                ),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let ext = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        {
            let xv = self.data(x);
            for o in 0..outer {
                let src = (o * ext + start) * inner;
                let dst = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&xv[src..src + len * inner]);
            }
        }
        let out = tensor_like(&out_shape, data);
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |_, g| {
                let mut contrib = vec![0.0; outer * ext * inner];
                for o in 0..outer {
                    let dst = (o * ext + start) * inner;
                    let src = o * len * inner;
                    contrib[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![(x, contrib)]
            }),
        ))
    }
}

/// For each row-major output offset of the permuted tensor, the source offset.
fn permutation_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_for(in_shape);
    let out_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n: usize = in_shape.iter().product();
    let mut map = vec![0usize; n];
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for slot in map.iter_mut() {
        *slot = src;
        let mut axis = rank;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            src += out_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
            src -= out_strides[axis] * out_shape[axis];
        }
    }
    map
}
