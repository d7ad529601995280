//! Softmax and layer normalization.

use super::{lane_extents, tensor_like};
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

impl Tape {
    /// Softmax along one axis, computed with max subtraction so large inputs
    /// stay finite. Each lane of the output sums to 1.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::invalid(
                "softmax",
                format!("axis {} unusable for shape {:?}", axis, shape),
            ));
        }
        let (outer, len, inner) = lane_extents(&shape, axis);
        let mut data = vec![0.0; self.value(x).len()];
        {
            let xv = self.data(x);
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        max = max.max(xv[at(j)]);
                    }
                    let mut total = 0.0;
                    for j in 0..len {
                        let e = (xv[at(j)] - max).exp();
                        data[at(j)] = e;
                        total += e;
                    }
                    for j in 0..len {
                        data[at(j)] /= total;
                    }
                }
            }
        }
        let out = tensor_like(&shape, data);
        let y_data = out.data.clone();
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |_, g| {
                let mut contrib = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let mut dot = 0.0;
                        for j in 0..len {
                            dot += g[at(j)] * y_data[at(j)];
                        }
                        for j in 0..len {
                            contrib[at(j)] = y_data[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                vec![(x, contrib)]
            }),
        ))
    }

    /// Layer normalization over the trailing `norm_axes` axes.
    ///
    /// Each group is standardized with its own mean and population variance;
    /// optional gain/bias must have exactly the trailing-axes shape.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        norm_axes: usize,
        gain: Option<TensorId>,
        bias: Option<TensorId>,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if norm_axes == 0 || norm_axes > shape.len() {
            return Err(Error::invalid(
                "layer_norm",
                format!("cannot normalize {} trailing axes of shape {:?}", norm_axes, shape),
            ));
        }
        let split = shape.len() - norm_axes;
        let groups: usize = shape[..split].iter().product();
        let n: usize = shape[split..].iter().product();
        if n == 0 {
            return Err(Error::invalid("layer_norm", "normalized group is empty"));
        }
        let tail = shape[split..].to_vec();
        for (name, id) in [("gain", gain), ("bias", bias)] {
            if let Some(id) = id {
                if self.shape(id) != tail.as_slice() {
                    return Err(Error::invalid(
                        "layer_norm",
                        format!("{name} shape {:?} != trailing {:?}", self.shape(id), tail),
                    ));
                }
            }
        }

        let mut data = vec![0.0; self.value(x).len()];
        let mut xhat = vec![0.0; self.value(x).len()];
        let mut inv_std = vec![0.0; groups];
        {
            let xv = self.data(x);
            let gv = gain.map(|g| self.data(g).to_vec());
            let bv = bias.map(|b| self.data(b).to_vec());
            for grp in 0..groups {
                let base = grp * n;
                let lane = &xv[base..base + n];
                let mean = lane.iter().sum::<f64>() / n as f64;
                let var = lane.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std[grp] = istd;
                for i in 0..n {
                    let h = (lane[i] - mean) * istd;
                    xhat[base + i] = h;
                    let mut y = h;
                    if let Some(gv) = &gv {
                        y *= gv[i];
                    }
                    if let Some(bv) = &bv {
                        y += bv[i];
                    }
                    data[base + i] = y;
                }
            }
        }
        let out = tensor_like(&shape, data);
        let mut parents = vec![x];
        parents.extend(gain);
        parents.extend(bias);
        Ok(self.push_op(
            out,
            &parents,
            Box::new(move |tape, g| {
                let gv = gain.map(|id| tape.data(id));
                let mut contribs = Vec::new();
                if tape.needs_grad(x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for grp in 0..groups {
                        let base = grp * n;
                        // dy scaled by gain, then the two mean-removal terms.
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for i in 0..n {
                            let dyg = g[base + i] * gv.map_or(1.0, |gv| gv[i]);
                            sum_dy += dyg;
                            sum_dy_xhat += dyg * xhat[base + i];
                        }
                        let istd = inv_std[grp];
                        let inv_n = 1.0 / n as f64;
                        for i in 0..n {
                            let dyg = g[base + i] * gv.map_or(1.0, |gv| gv[i]);
                            dx[base + i] = istd
                                * (dyg - sum_dy * inv_n - xhat[base + i] * sum_dy_xhat * inv_n);
                        }
                    }
                    contribs.push((x, dx));
                }
                if let Some(gid) = gain {
                    if tape.needs_grad(gid) {
                        let mut dg = vec![0.0; n];
                        for grp in 0..groups {
                            let base = grp * n;
                            for i in 0..n {
                                dg[i] += g[base + i] * xhat[base + i];
                            }
                        }
                        contribs.push((gid, dg));
                    }
                }
                if let Some(bid) = bias {
                    if tape.needs_grad(bid) {
                        let mut db = vec![0.0; n];
                        for grp in 0..groups {
                            let base = grp * n;
                            for i in 0..n {
                                db[i] += g[base + i];
                            }
                        }
                        contribs.push((bid, db));
                    }
                }
                contribs
            }),
        ))
    }
}
