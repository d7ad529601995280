//! Differentiable operations, implemented as methods on [`crate::tape::Tape`].
//!
//! Each op computes its forward value eagerly and records a backward rule.
//! All kernels are single-threaded with a fixed accumulation order, so
//! identical inputs produce bit-identical outputs.

mod attention;
mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod resize;
mod shape;

pub use attention::{attention_weights, dense_attention_reference};

use crate::tensor::Tensor;

/// Visit every cell of `out_shape` in row-major order together with the flat
/// offsets into two operands broadcast against it (trailing alignment).
pub(crate) fn for_each_broadcast2(
    out_shape: &[usize],
    a_shape: &[usize],
    b_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let stride_a = broadcast_strides(a_shape, out_shape);
    let stride_b = broadcast_strides(b_shape, out_shape);
    let n: usize = out_shape.iter().product();
    if n == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let (mut off_a, mut off_b) = (0usize, 0usize);
    for flat in 0..n {
        f(flat, off_a, off_b);
        let mut axis = rank;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            off_a += stride_a[axis];
            off_b += stride_b[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
            off_a -= stride_a[axis] * out_shape[axis];
            off_b -= stride_b[axis] * out_shape[axis];
        }
    }
}

/// Row-major strides of `shape` right-aligned inside `out_shape`, with zero
/// stride on broadcast axes.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut stride = 1usize;
    for axis in (0..shape.len()).rev() {
        strides[offset + axis] = if shape[axis] == 1 { 0 } else { stride };
        stride *= shape[axis];
    }
    strides
}

/// Sum `contrib` (shaped `out_shape`) down to `target_shape` under trailing
/// broadcast alignment. Used by backward rules of broadcasting binary ops.
pub(crate) fn reduce_to_shape(contrib: &[f64], out_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    let n: usize = target_shape.iter().product();
    let mut out = vec![0.0; n];
    for_each_broadcast2(out_shape, target_shape, target_shape, |flat, t_off, _| {
        out[t_off] += contrib[flat];
    });
    out
}

/// Split a shape at `axis` into (outer, len, inner) extents for lane walks.
pub(crate) fn lane_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

pub(crate) fn tensor_like(shape: &[usize], data: Vec<f64>) -> Tensor {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    Tensor {
        shape: shape.to_vec(),
        data,
        requires_grad: false,
        grad: None,
    }
}
