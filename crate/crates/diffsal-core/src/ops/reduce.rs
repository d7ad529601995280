//! Reductions over a single axis or the whole tensor.

use super::{lane_extents, tensor_like};
use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

impl Tape {
    fn reduce_axis(&mut self, x: TensorId, axis: usize, mean: bool) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        let op = if mean { "mean_axis" } else { "sum_axis" };
        if axis >= shape.len() {
            return Err(Error::invalid(
                op,
                format!("axis {} out of range for shape {:?}", axis, shape),
            ));
        }
        if shape[axis] == 0 {
            return Err(Error::invalid(
                op,
                format!("axis {} of shape {:?} has zero extent", axis, shape),
            ));
        }
        let (outer, len, inner) = lane_extents(&shape, axis);
        let norm = if mean { 1.0 / len as f64 } else { 1.0 };
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut data = vec![0.0; outer * inner];
        {
            let xv = self.data(x);
            for o in 0..outer {
                for j in 0..len {
                    let base = (o * len + j) * inner;
                    let out_base = o * inner;
                    for i in 0..inner {
                        data[out_base + i] += xv[base + i];
                    }
                }
            }
            if mean {
                for v in &mut data {
                    *v *= norm;
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
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        let g_base = o * inner;
                        for i in 0..inner {
                            contrib[base + i] = g[g_base + i] * norm;
                        }
                    }
                }
                vec![(x, contrib)]
            }),
        ))
    }

    /// Sum over one axis; the axis is removed from the shape.
    pub fn sum_axis(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce_axis(x, axis, false)
    }

    /// Arithmetic mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        self.reduce_axis(x, axis, true)
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let total: f64 = self.data(x).iter().sum();
        let n = self.value(x).len();
        self.push_op(
            Tensor::scalar(total),
            &[x],
            Box::new(move |_, g| vec![(x, vec![g[0]; n])]),
        )
    }

    /// Mean of all elements as a scalar.
    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.value(x).len().max(1);
        let total: f64 = self.data(x).iter().sum();
        let norm = 1.0 / n as f64;
        self.push_op(
            Tensor::scalar(total * norm),
            &[x],
            Box::new(move |_, g| vec![(x, vec![g[0] * norm; n])]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_axis_drops_the_axis() {
        let mut tape = Tape::new();
        let x = tape.var(
            Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        );
        let y = tape.sum_axis(x, 0).unwrap();
        assert_eq!(tape.shape(y), &[3]);
        assert_eq!(tape.value(y).data, vec![5.0, 7.0, 9.0]);
        let z = tape.sum_axis(x, 1).unwrap();
        assert_eq!(tape.value(z).data, vec![6.0, 15.0]);
    }

    #[test]
    fn mean_axis_gradient_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.mean_axis(x, 0).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn empty_axis_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::zeros(&[2, 0]));
        assert!(tape.sum_axis(x, 1).is_err());
        assert!(tape.sum_axis(x, 5).is_err());
    }
}
