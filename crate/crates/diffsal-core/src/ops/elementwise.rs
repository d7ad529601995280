//! Elementwise unary and binary ops with trailing-dimension broadcasting.

use super::{for_each_broadcast2, reduce_to_shape, tensor_like};
use crate::error::Result;
use crate::tape::{Tape, TensorId};
use crate::tensor::{broadcast_shapes, Tensor};

/// Tanh-form Gaussian error linear unit, differentiable everywhere.
pub(crate) fn gelu_value(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

fn sigmoid_value(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    fn binary_broadcast(
        &mut self,
        a: TensorId,
        b: TensorId,
        forward: fn(f64, f64) -> f64,
        // Partial derivatives with respect to each operand, as f(a_i, b_i).
        dfda: fn(f64, f64) -> f64,
        dfdb: fn(f64, f64) -> f64,
    ) -> Result<TensorId> {
        let out_shape = broadcast_shapes(self.shape(a), self.shape(b))?;
        let n: usize = out_shape.iter().product();
        let mut data = vec![0.0; n];
        {
            let av = self.data(a);
            let bv = self.data(b);
            for_each_broadcast2(&out_shape, self.shape(a), self.shape(b), |o, ai, bi| {
                data[o] = forward(av[ai], bv[bi]);
            });
        }
        let out = tensor_like(&out_shape, data);
        let (a_shape, b_shape) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(move |tape, g| {
                let av = tape.data(a);
                let bv = tape.data(b);
                let mut contribs = Vec::with_capacity(2);
                if tape.needs_grad(a) {
                    let mut raw = vec![0.0; g.len()];
                    for_each_broadcast2(&out_shape, &a_shape, &b_shape, |o, ai, bi| {
                        raw[o] = g[o] * dfda(av[ai], bv[bi]);
                    });
                    contribs.push((a, reduce_to_shape(&raw, &out_shape, &a_shape)));
                }
                if tape.needs_grad(b) {
                    let mut raw = vec![0.0; g.len()];
                    for_each_broadcast2(&out_shape, &a_shape, &b_shape, |o, ai, bi| {
                        raw[o] = g[o] * dfdb(av[ai], bv[bi]);
                    });
                    contribs.push((b, reduce_to_shape(&raw, &out_shape, &b_shape)));
                }
                contribs
            }),
        ))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_broadcast(a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_broadcast(a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_broadcast(a, b, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Elementwise quotient. The caller is responsible for keeping the
    /// divisor away from zero.
    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_broadcast(a, b, |x, y| x / y, |_, y| 1.0 / y, |x, y| -x / (y * y))
    }

    fn unary(
        &mut self,
        x: TensorId,
        forward: impl Fn(f64) -> f64,
        derivative: impl Fn(f64) -> f64 + 'static,
    ) -> TensorId {
        let value = self.value(x).map(&forward);
        self.push_op(
            value,
            &[x],
            Box::new(move |tape, g| {
                let xv = tape.data(x);
                let contrib = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| gi * derivative(xi))
                    .collect();
                vec![(x, contrib)]
            }),
        )
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        self.unary(x, |v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        self.unary(x, gelu_value, gelu_derivative)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        self.unary(x, sigmoid_value, |v| {
            let s = sigmoid_value(v);
            s * (1.0 - s)
        })
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        self.unary(x, f64::tanh, |v| {
            let t = v.tanh();
            1.0 - t * t
        })
    }

    /// Natural log. Inputs must be strictly positive; callers floor first.
    pub fn log(&mut self, x: TensorId) -> TensorId {
        debug_assert!(
            self.data(x).iter().all(|&v| v > 0.0),
            "log requires positive inputs"
        );
        self.unary(x, f64::ln, |v| 1.0 / v)
    }

    /// Square root. Inputs must be strictly positive; callers floor first.
    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        debug_assert!(
            self.data(x).iter().all(|&v| v > 0.0),
            "sqrt requires positive inputs"
        );
        self.unary(x, f64::sqrt, |v| 0.5 / v.sqrt())
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        self.unary(x, move |v| v * c, move |_| c)
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f64) -> TensorId {
        self.unary(x, move |v| v + c, |_| 1.0)
    }

    /// Convenience: register a constant and add it.
    pub fn add_const(&mut self, x: TensorId, t: Tensor) -> Result<TensorId> {
        let c = self.constant(t);
        self.add(x, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_broadcasts_trailing() {
        let mut tape = Tape::new();
        let a = tape.var(tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.var(tensor(&[3], &[10.0, 20.0, 30.0]));
        let y = tape.add(a, b).unwrap();
        assert_eq!(tape.value(y).data, vec![11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        // Broadcast operand accumulates over the expanded axis.
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 2.0, 2.0]);
        assert_eq!(tape.grad(a).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn mul_gradient_swaps_operands() {
        let mut tape = Tape::new();
        let a = tape.var(tensor(&[2], &[3.0, -2.0]));
        let b = tape.var(tensor(&[2], &[5.0, 7.0]));
        let y = tape.mul(a, b).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[5.0, 7.0]);
        assert_eq!(tape.grad(b).unwrap(), &[3.0, -2.0]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let mut tape = Tape::new();
        let a = tape.var(tensor(&[3, 2], &[0.0; 6]));
        let b = tape.var(tensor(&[4, 2], &[0.0; 8]));
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn relu_kinks_at_zero() {
        let mut tape = Tape::new();
        let x = tape.var(tensor(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data, vec![0.0, 0.0, 2.0]);
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn gelu_matches_known_values() {
        // gelu(0) = 0, gelu(large) -> x, gelu(-large) -> 0.
        assert_eq!(gelu_value(0.0), 0.0);
        assert!((gelu_value(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu_value(-10.0).abs() < 1e-9);
        // gelu(x) - gelu(-x) = x: the tanh gate is odd.
        let x = 0.73;
        assert!((gelu_value(x) - gelu_value(-x) - x).abs() < 1e-12);
    }
}
