//! Fused multi-head scaled dot-product attention.
//!
//! The forward pass streams over keys with an online softmax (running max
//! and running sum), so the full score matrix is never materialized; memory
//! stays O(tokens * channels) even when query and key counts are large. The
//! backward pass replays scores row by row from the saved per-row max and
//! normalizer.
//!
//! A dense reference implementation is exported for tests; it materializes
//! the weight matrix and must agree with the fused kernel.

use super::tensor_like;
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

struct AttnDims {
    batches: usize,
    n: usize, // query tokens
    m: usize, // key/value tokens
    c: usize,
    heads: usize,
    d: usize, // channels per head
    scale: f64,
}

fn check_shapes(op: &'static str, q: &[usize], k: &[usize], v: &[usize], heads: usize) -> Result<AttnDims> {
    let (batches, n, c) = match q {
        [n, c] => (1, *n, *c),
        [b, n, c] => (*b, *n, *c),
        _ => {
            return Err(Error::invalid(op, format!("query rank {} not 2 or 3", q.len())));
        }
    };
    let (kb, m, kc) = match k {
        [m, c] => (1, *m, *c),
        [b, m, c] => (*b, *m, *c),
        _ => {
            return Err(Error::invalid(op, format!("key rank {} not 2 or 3", k.len())));
        }
    };
    if v != k {
        return Err(Error::ShapeMismatch {
            op,
            lhs: k.to_vec(),
            rhs: v.to_vec(),
        });
    }
    if kb != batches || kc != c {
        return Err(Error::ShapeMismatch {
            op,
            lhs: q.to_vec(),
            rhs: k.to_vec(),
        });
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::invalid(
            op,
            format!("channel count {c} not divisible by {heads} heads"),
        ));
    }
    if n == 0 || m == 0 || c == 0 {
        return Err(Error::invalid(op, "empty token sequence"));
    }
    let d = c / heads;
    Ok(AttnDims {
        batches,
        n,
        m,
        c,
        heads,
        d,
        scale: 1.0 / (d as f64).sqrt(),
    })
}

impl Tape {
    /// Multi-head attention over packed channels.
    ///
    /// `q: (N, C)` or `(B, N, C)`; `k`, `v`: same rank with M tokens. The C
    /// axis is split into `heads` independent slices; per head the output is
    /// `softmax(q k^T / sqrt(C/heads)) v`. Output has the query's shape.
    pub fn attention(&mut self, q: TensorId, k: TensorId, v: TensorId, heads: usize) -> Result<TensorId> {
        let dims = check_shapes("attention", self.shape(q), self.shape(k), self.shape(v), heads)?;
        let out_shape = self.shape(q).to_vec();

        let AttnDims { batches, n, m, c, d, scale, .. } = dims;
        let heads = dims.heads;
        let mut out = vec![0.0; batches * n * c];
        // Per (batch, head, row): the running max and softmax normalizer,
        // saved for the backward replay.
        let mut row_max = vec![f64::NEG_INFINITY; batches * heads * n];
        let mut row_sum = vec![0.0; batches * heads * n];
        {
            let qv = self.data(q);
            let kv = self.data(k);
            let vv = self.data(v);
            for b in 0..batches {
                let qb = &qv[b * n * c..(b + 1) * n * c];
                let kb = &kv[b * m * c..(b + 1) * m * c];
                let vb = &vv[b * m * c..(b + 1) * m * c];
                let ob = &mut out[b * n * c..(b + 1) * n * c];
                for h in 0..heads {
                    let off = h * d;
                    for i in 0..n {
                        let q_row = &qb[i * c + off..i * c + off + d];
                        let mut max = f64::NEG_INFINITY;
                        let mut sum = 0.0;
                        let mut acc = vec![0.0; d];
                        for j in 0..m {
                            let k_row = &kb[j * c + off..j * c + off + d];
                            let mut s = 0.0;
                            for (a, b2) in q_row.iter().zip(k_row) {
                                s += a * b2;
                            }
                            s *= scale;
                            if s > max {
                                // Rescale the running state to the new max.
                                let shift = if max.is_finite() { (max - s).exp() } else { 0.0 };
                                sum *= shift;
                                for a in acc.iter_mut() {
                                    *a *= shift;
                                }
                                max = s;
                            }
                            let w = (s - max).exp();
                            sum += w;
                            let v_row = &vb[j * c + off..j * c + off + d];
                            for (a, val) in acc.iter_mut().zip(v_row) {
                                *a += w * val;
                            }
                        }
                        let idx = (b * heads + h) * n + i;
                        row_max[idx] = max;
                        row_sum[idx] = sum;
                        let o_row = &mut ob[i * c + off..i * c + off + d];
                        for (o, a) in o_row.iter_mut().zip(&acc) {
                            *o = a / sum;
                        }
                    }
                }
            }
        }
        let out = tensor_like(&out_shape, out);
        Ok(self.push_op(
            out,
            &[q, k, v],
            Box::new(move |tape, g| {
                let qv = tape.data(q);
                let kv = tape.data(k);
                let vv = tape.data(v);
                let need_q = tape.needs_grad(q);
                let need_k = tape.needs_grad(k);
                let need_v = tape.needs_grad(v);
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut dv = vec![0.0; vv.len()];
                let mut p_row = vec![0.0; m];
                for b in 0..batches {
                    let qb = &qv[b * n * c..(b + 1) * n * c];
                    let kb = &kv[b * m * c..(b + 1) * m * c];
                    let vb = &vv[b * m * c..(b + 1) * m * c];
                    let gb = &g[b * n * c..(b + 1) * n * c];
                    for h in 0..heads {
                        let off = h * d;
                        for i in 0..n {
                            let idx = (b * heads + h) * n + i;
                            let (max, sum) = (row_max[idx], row_sum[idx]);
                            let q_row = &qb[i * c + off..i * c + off + d];
                            let g_row = &gb[i * c + off..i * c + off + d];
                            // Replay the probability row from saved stats.
                            let mut d_i = 0.0; // sum_j p_ij * (g . v_j)
                            for j in 0..m {
                                let k_row = &kb[j * c + off..j * c + off + d];
                                let mut s = 0.0;
                                for (a, b2) in q_row.iter().zip(k_row) {
                                    s += a * b2;
                                }
                                let p = (s * scale - max).exp() / sum;
                                p_row[j] = p;
                                let v_row = &vb[j * c + off..j * c + off + d];
                                let mut gv = 0.0;
                                for (a, b2) in g_row.iter().zip(v_row) {
                                    gv += a * b2;
                                }
                                d_i += p * gv;
                            }
                            for j in 0..m {
                                let p = p_row[j];
                                if p == 0.0 {
                                    continue;
                                }
                                let v_row = &vb[j * c + off..j * c + off + d];
                                let mut gv = 0.0;
                                for (a, b2) in g_row.iter().zip(v_row) {
                                    gv += a * b2;
                                }
                                let coeff = p * (gv - d_i) * scale;
                                if need_q {
                                    let k_row = &kb[j * c + off..j * c + off + d];
                                    let dq_row = &mut dq[b * n * c + i * c + off..];
                                    for (t, &kx) in k_row.iter().enumerate() {
                                        dq_row[t] += coeff * kx;
                                    }
                                }
                                if need_k {
                                    let dk_row = &mut dk[b * m * c + j * c + off..];
                                    for (t, &qx) in q_row.iter().enumerate() {
                                        dk_row[t] += coeff * qx;
                                    }
                                }
                                if need_v {
                                    let dv_row = &mut dv[b * m * c + j * c + off..];
                                    for (t, &gx) in g_row.iter().enumerate() {
                                        dv_row[t] += p * gx;
                                    }
                                }
                            }
                        }
                    }
                }
                let mut contribs = Vec::new();
                if need_q {
                    contribs.push((q, dq));
                }
                if need_k {
                    contribs.push((k, dk));
                }
                if need_v {
                    contribs.push((v, dv));
                }
                contribs
            }),
        ))
    }
}

/// Dense single-pass attention on plain tensors, for testing the fused
/// kernel. Materializes the full weight matrix.
pub fn dense_attention_reference(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let dims = check_shapes("dense_attention", &q.shape, &k.shape, &v.shape, heads)?;
    let AttnDims { batches, n, m, c, d, .. } = dims;
    let heads = dims.heads;
    let mut out = vec![0.0; batches * n * c];
    for b in 0..batches {
        for h in 0..heads {
            let off = h * d;
            let weights = head_weights(q, k, b, h, &dims);
            for i in 0..n {
                for j in 0..m {
                    let w = weights[i * m + j];
                    for t in 0..d {
                        out[b * n * c + i * c + off + t] += w * v.data[b * m * c + j * c + off + t];
                    }
                }
            }
        }
    }
    Tensor::new(q.shape.clone(), out)
}

/// Dense per-head attention weights (rows: queries, columns: keys) for one
/// batch and head. Rows sum to 1.
pub fn attention_weights(q: &Tensor, k: &Tensor, batch: usize, head: usize, heads: usize) -> Result<Vec<f64>> {
    let dims = check_shapes("attention_weights", &q.shape, &k.shape, &k.shape, heads)?;
    Ok(head_weights(q, k, batch, head, &dims))
}

fn head_weights(q: &Tensor, k: &Tensor, b: usize, h: usize, dims: &AttnDims) -> Vec<f64> {
    let AttnDims { n, m, c, d, scale, .. } = *dims;
    let off = h * d;
    let mut weights = vec![0.0; n * m];
    for i in 0..n {
        let q_row = &q.data[b * n * c + i * c + off..b * n * c + i * c + off + d];
        let row = &mut weights[i * m..(i + 1) * m];
        let mut max = f64::NEG_INFINITY;
        for (j, w) in row.iter_mut().enumerate() {
            let k_row = &k.data[b * m * c + j * c + off..b * m * c + j * c + off + d];
            let s: f64 = q_row.iter().zip(k_row).map(|(a, b2)| a * b2).sum();
            *w = s * scale;
            max = max.max(*w);
        }
        let mut sum = 0.0;
        for w in row.iter_mut() {
            *w = (*w - max).exp();
            sum += *w;
        }
        for w in row.iter_mut() {
            *w /= sum;
        }
    }
    weights
}
