//! Pyramid encoder for the noisy saliency map.
//!
//! Produces one feature map per decoder stage, spatially matched to the
//! video pyramid (level i is `(h_i, w_i, C_i)` with the same ceil-halving
//! law). The timestep embedding is injected additively at the input of
//! every stage. The stack is deliberately normalization-free: with
//! zero-initialized biases, a zero map and zero embedding stay exactly zero
//! through every stage, so the encoder contributes nothing until training
//! moves it.

use crate::encoders::PYRAMID_LEVELS;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Linear};
use crate::params::ParamStore;
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};

struct NoiseStage {
    inject: Linear,
    down: Conv2d,
    res_a: Conv2d,
    res_b: Conv2d,
}

/// Strided conv2d pyramid over a single-channel `(H, W, 1)` map.
pub struct NoiseEncoder {
    stages: Vec<NoiseStage>,
    pub t_dim: usize,
}

impl NoiseEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_base: usize,
        t_dim: usize,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        let mut stages = Vec::with_capacity(PYRAMID_LEVELS);
        let mut c_in = 1;
        for i in 1..=PYRAMID_LEVELS {
            let c_out = c_base << (i - 1);
            // Stage 1 quarters space in one hop; later stages halve.
            let (k, stride, pad) = if i == 1 { (5, 4, 2) } else { (3, 2, 1) };
            let p = format!("{prefix}.stage{i}");
            stages.push(NoiseStage {
                inject: Linear::new(store, &format!("{p}.inject"), t_dim, c_in, true, rng)?,
                down: Conv2d::new(store, &format!("{p}.down"), c_in, c_out, k, stride, pad, true, rng)?,
                res_a: Conv2d::new(store, &format!("{p}.res_a"), c_out, c_out, 3, 1, 1, true, rng)?,
                res_b: Conv2d::new(store, &format!("{p}.res_b"), c_out, c_out, 3, 1, 1, true, rng)?,
            });
            c_in = c_out;
        }
        Ok(NoiseEncoder { stages, t_dim })
    }

    /// Encode `map` `(H, W, 1)` under timestep row `t_emb` `(1, t_dim)` into
    /// channels-last levels `(h_i, w_i, C_i)`, finest first.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        map: TensorId,
        t_emb: TensorId,
    ) -> Result<Vec<TensorId>> {
        let shape = tape.shape(map).to_vec();
        if shape.len() != 3 || shape[2] != 1 {
            return Err(Error::invalid(
                "noise_encode",
                format!("expected (H, W, 1) map, got {shape:?}"),
            ));
        }
        let mut x = tape.permute(map, &[2, 0, 1])?; // (1, H, W)
        let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
        for stage in &self.stages {
            let c_in = tape.shape(x)[0];
            let shift = stage.inject.forward(tape, store, t_emb)?;
            let shift = tape.reshape(shift, &[c_in, 1, 1])?;
            let x_t = tape.add(x, shift)?;
            let d = stage.down.forward(tape, store, x_t)?;
            let d = tape.relu(d);
            let r = stage.res_a.forward(tape, store, d)?;
            let r = tape.relu(r);
            let r = stage.res_b.forward(tape, store, r)?;
            let s = tape.add(d, r)?;
            x = tape.relu(s);
            levels.push(tape.permute(x, &[1, 2, 0])?);
        }
        Ok(levels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::pyramid_extent;
    use crate::tensor::Tensor;

    fn build(c_base: usize) -> (ParamStore, NoiseEncoder) {
        let mut store = ParamStore::new();
        let mut rng = CounterRng::keyed(3, 0, "noise-enc");
        let enc = NoiseEncoder::new(&mut store, "n", c_base, 8, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn levels_follow_the_video_pyramid_shape_law() {
        let (store, enc) = build(2);
        for &(h, w) in &[(32usize, 48usize), (8, 8), (20, 12)] {
            let mut tape = Tape::new();
            let map = tape.leaf(Tensor::new(
                vec![h, w, 1],
                CounterRng::keyed(9, (h * w) as u64, "noise-in").normal_vec(h * w),
            ).unwrap());
            let temb = tape.leaf(Tensor::new(vec![1, 8], vec![0.1; 8]).unwrap());
            let levels = enc.forward(&mut tape, &store, map, temb).unwrap();
            assert_eq!(levels.len(), PYRAMID_LEVELS);
            for (i, &lvl) in levels.iter().enumerate() {
                let expect = vec![pyramid_extent(h, i + 1), pyramid_extent(w, i + 1), 2usize << i];
                assert_eq!(tape.shape(lvl), &expect[..], "level {} of {}x{}", i + 1, h, w);
            }
        }
    }

    #[test]
    fn zero_map_and_zero_embedding_stay_zero() {
        // Freshly initialized biases are zero and the stack has no
        // normalization, so zero input is a fixed point.
        let (store, enc) = build(4);
        let mut tape = Tape::new();
        let map = tape.leaf(Tensor::zeros(&[16, 16, 1]));
        let temb = tape.leaf(Tensor::zeros(&[1, 8]));
        let levels = enc.forward(&mut tape, &store, map, temb).unwrap();
        for &lvl in &levels {
            assert!(tape.value(lvl).data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn timestep_shift_changes_the_features() {
        let (store, enc) = build(2);
        let mut tape = Tape::new();
        let map = tape.leaf(Tensor::new(
            vec![8, 8, 1],
            CounterRng::keyed(11, 0, "noise-t").normal_vec(64),
        ).unwrap());
        let ta = tape.leaf(Tensor::zeros(&[1, 8]));
        let tb = tape.leaf(Tensor::new(vec![1, 8], vec![1.0; 8]).unwrap());
        let la = enc.forward(&mut tape, &store, map, ta).unwrap();
        let lb = enc.forward(&mut tape, &store, map, tb).unwrap();
        let d: f64 = tape
            .value(la[0])
            .data
            .iter()
            .zip(&tape.value(lb[0]).data)
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(d > 1e-6, "embedding had no effect: {d}");
    }

    #[test]
    fn gradient_flows_to_first_stage_kernel() {
        let (store, enc) = build(2);
        let mut tape = Tape::new();
        let map = tape.leaf(Tensor::new(
            vec![8, 8, 1],
            CounterRng::keyed(13, 0, "noise-g").normal_vec(64),
        ).unwrap());
        let temb = tape.leaf(Tensor::new(vec![1, 8], vec![0.5; 8]).unwrap());
        let levels = enc.forward(&mut tape, &store, map, temb).unwrap();
        let loss = tape.sum_all(levels[3]);
        tape.backward(loss).unwrap();
        let kid = store.lookup("n.stage1.down.kernel").unwrap();
        let g = store.grad_on(&tape, kid).expect("stage 1 kernel got no gradient");
        assert!(g.iter().any(|&v| v != 0.0));
    }
}
