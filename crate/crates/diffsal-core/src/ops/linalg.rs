//! Batched matrix multiplication.

use super::{broadcast_strides, tensor_like};
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::broadcast_shapes;

/// `c[m,n] += a[m,k] * b[k,n]` over contiguous row-major blocks.
fn matmul_block(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (c_ij, &b_kj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_ik * b_kj;
            }
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`.
fn matmul_at_b(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == 0.0 {
                continue;
            }
            let c_row = &mut c[kk * n..(kk + 1) * n];
            for (c_kj, &b_ij) in c_row.iter_mut().zip(b_row) {
                *c_kj += a_ik * b_ij;
            }
        }
    }
}

/// `c[m,k] += a[m,n] * b[k,n]^T`.
fn matmul_a_bt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (kk, c_ik) in c_row.iter_mut().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0;
            for (&a_ij, &b_kj) in a_row.iter().zip(b_row) {
                acc += a_ij * b_kj;
            }
            *c_ik += acc;
        }
    }
}

impl Tape {
    /// Matrix product over the two trailing axes; leading axes broadcast
    /// under trailing alignment.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let a_shape = self.shape(a).to_vec();
        let b_shape = self.shape(b).to_vec();
        if a_shape.len() < 2 || b_shape.len() < 2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a_shape,
                rhs: b_shape,
            });
        }
        let (m, ka) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (kb, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a_shape,
                rhs: b_shape,
            });
        }
        let k = ka;
        let a_lead = &a_shape[..a_shape.len() - 2];
        let b_lead = &b_shape[..b_shape.len() - 2];
        let lead = broadcast_shapes(a_lead, b_lead).map_err(|_| Error::ShapeMismatch {
            op: "matmul",
            lhs: a_shape.clone(),
            rhs: b_shape.clone(),
        })?;
        let batches: usize = lead.iter().product();
        let a_batch_offsets = batch_offsets(&lead, a_lead, m * k);
        let b_batch_offsets = batch_offsets(&lead, b_lead, k * n);

        let mut out_shape = lead.clone();
        out_shape.push(m);
        out_shape.push(n);
        let mut data = vec![0.0; batches * m * n];
        {
            let av = self.data(a);
            let bv = self.data(b);
            for batch in 0..batches {
                matmul_block(
                    &av[a_batch_offsets[batch]..a_batch_offsets[batch] + m * k],
                    &bv[b_batch_offsets[batch]..b_batch_offsets[batch] + k * n],
                    &mut data[batch * m * n..(batch + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let out = tensor_like(&out_shape, data);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(move |tape, g| {
                let av = tape.data(a);
                let bv = tape.data(b);
                let mut contribs = Vec::with_capacity(2);
                if tape.needs_grad(a) {
                    let mut da = vec![0.0; av.len()];
                    for batch in 0..batches {
                        matmul_a_bt(
                            &g[batch * m * n..(batch + 1) * m * n],
                            &bv[b_batch_offsets[batch]..b_batch_offsets[batch] + k * n],
                            &mut da[a_batch_offsets[batch]..a_batch_offsets[batch] + m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    contribs.push((a, da));
                }
                if tape.needs_grad(b) {
                    let mut db = vec![0.0; bv.len()];
                    for batch in 0..batches {
                        matmul_at_b(
                            &av[a_batch_offsets[batch]..a_batch_offsets[batch] + m * k],
                            &g[batch * m * n..(batch + 1) * m * n],
                            &mut db[b_batch_offsets[batch]..b_batch_offsets[batch] + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    contribs.push((b, db));
                }
                contribs
            }),
        ))
    }
}

/// Flat starting offset of each broadcast batch inside an operand whose
/// leading shape is `lead_shape` and whose matrix block is `block` long.
fn batch_offsets(out_lead: &[usize], lead_shape: &[usize], block: usize) -> Vec<usize> {
    let batches: usize = out_lead.iter().product();
    if out_lead.is_empty() {
        return vec![0];
    }
    let strides = broadcast_strides(lead_shape, out_lead);
    let rank = out_lead.len();
    let mut offsets = Vec::with_capacity(batches);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..batches {
        offsets.push(off * block);
        let mut axis = rank;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            off += strides[axis];
            if idx[axis] < out_lead[axis] {
                break;
            }
            idx[axis] = 0;
            off -= strides[axis] * out_lead[axis];
        }
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn two_by_two_matches_hand_result() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.var(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn mismatched_inner_dims_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 3]));
        let b = tape.var(Tensor::zeros(&[4, 2]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[4, 2]"), "{err}");
    }

    #[test]
    fn batched_broadcasts_leading_axes() {
        let mut tape = Tape::new();
        // a: (2, 1, 2, 2) broadcast against b: (3, 2, 2) -> out (2, 3, 2, 2)
        let a = tape.var(Tensor::new(vec![2, 1, 2, 2], (1..=8).map(|v| v as f64).collect()).unwrap());
        let b = tape.var(Tensor::new(vec![3, 2, 2], (1..=12).map(|v| v as f64).collect()).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 3, 2, 2]);
        // Spot-check block (1, 2): a block [[5,6],[7,8]] x b block [[9,10],[11,12]].
        let got = &tape.value(c).data[(1 * 3 + 2) * 4..(1 * 3 + 2) * 4 + 4];
        assert_eq!(got, &[111.0, 122.0, 151.0, 166.0]);
    }

    #[test]
    fn gradients_match_transposed_products() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 2.0, -1.0]).unwrap());
        let b = tape.var(Tensor::new(vec![3, 2], vec![2.0, 1.0, 0.0, -1.0, 1.0, 3.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum_all(c);
        tape.backward(s).unwrap();
        // d/dA sum(AB) = ones * B^T; row i = column sums of B^T rows = B row sums.
        assert_eq!(tape.grad(a).unwrap(), &[3.0, -1.0, 4.0, 3.0, -1.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap(), &[1.5, 1.5, 0.0, 0.0, 2.0, 2.0]);
    }
}
