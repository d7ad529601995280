//! Audio-visual fusion inside a decoder stage.
//!
//! `AudioAlign` first brings the audio feature map onto a stage's grid:
//! nearest-neighbor spatial resize, a 3x3 conv from audio channels to stage
//! channels, then linear interpolation along time. Fusion then combines the
//! aligned audio with the query stream. The default is the multi-modal
//! interaction gate: a spatial softmax mask computed from the query-audio
//! product, applied back onto the audio. The three alternatives (addition,
//! channel concatenation, bilinear outer product) exist for ablations.

use crate::error::{Error, Result};
use crate::layers::{Conv2d, Linear};
use crate::params::ParamStore;
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Maps audio features `(T_a, h_a, w_a, C_a)` to a stage grid
/// `(t_out, h_out, w_out, C_out)`.
pub struct AudioAlign {
    conv: Conv2d,
}

impl AudioAlign {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        c_audio: usize,
        c_out: usize,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        Ok(AudioAlign {
            conv: Conv2d::new(store, &format!("{prefix}.conv"), c_audio, c_out, 3, 1, 1, true, rng)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        audio: TensorId,
        t_out: usize,
        h_out: usize,
        w_out: usize,
    ) -> Result<TensorId> {
        let shape = tape.shape(audio).to_vec();
        if shape.len() != 4 {
            return Err(Error::invalid(
                "audio_align",
                format!("expected (T_a, h, w, C) features, got {shape:?}"),
            ));
        }
        let t_a = shape[0];
        let resized = tape.resize_nearest_axes(audio, 1, 2, h_out, w_out)?;
        let mut frames = Vec::with_capacity(t_a);
        for t in 0..t_a {
            let f = tape.slice_axis(resized, 0, t, 1)?;
            let f = tape.reshape(f, &[h_out, w_out, shape[3]])?;
            let f = tape.permute(f, &[2, 0, 1])?;
            let f = self.conv.forward(tape, store, f)?;
            let f = tape.permute(f, &[1, 2, 0])?;
            let c = tape.shape(f)[2];
            frames.push(tape.reshape(f, &[1, h_out, w_out, c])?);
        }
        let stacked = tape.concat(&frames, 0)?;
        tape.interp_linear_axis0(stacked, t_out)
    }
}

// ---------------------------------------------------------------------------
// Fusion variants
// ---------------------------------------------------------------------------

/// Which combiner a stage uses. `Mim` is the default; the rest are
/// ablation baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    Mim,
    Addition,
    Concatenation,
    Bilinear,
}

impl FusionKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mim" => Ok(FusionKind::Mim),
            "addition" | "add" => Ok(FusionKind::Addition),
            "concatenation" | "concat" => Ok(FusionKind::Concatenation),
            "bilinear" => Ok(FusionKind::Bilinear),
            other => Err(Error::invalid(
                "fusion",
                format!("unknown fusion kind '{other}' (mim|addition|concatenation|bilinear)"),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Mim => "mim",
            FusionKind::Addition => "addition",
            FusionKind::Concatenation => "concatenation",
            FusionKind::Bilinear => "bilinear",
        }
    }
}

/// A built combiner; both inputs are `(T, h, w, C)` and so is the output.
pub enum Fusion {
    Mim,
    Addition,
    Concatenation(Linear),
    Bilinear(Linear),
}

impl Fusion {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kind: FusionKind,
        channels: usize,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        Ok(match kind {
            FusionKind::Mim => Fusion::Mim,
            FusionKind::Addition => Fusion::Addition,
            FusionKind::Concatenation => Fusion::Concatenation(Linear::new(
                store, &format!("{prefix}.proj"), 2 * channels, channels, true, rng,
            )?),
            FusionKind::Bilinear => Fusion::Bilinear(Linear::new(
                store, &format!("{prefix}.proj"), channels * channels, channels, true, rng,
            )?),
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            Fusion::Mim => FusionKind::Mim,
            Fusion::Addition => FusionKind::Addition,
            Fusion::Concatenation(_) => FusionKind::Concatenation,
            Fusion::Bilinear(_) => FusionKind::Bilinear,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: TensorId,
        audio: TensorId,
    ) -> Result<TensorId> {
        let qs = tape.shape(query).to_vec();
        if qs.len() != 4 || tape.shape(audio) != &qs[..] {
            return Err(Error::ShapeMismatch {
                op: "fusion",
                lhs: qs,
                rhs: tape.shape(audio).to_vec(),
            });
        }
        let (h, w, c) = (qs[1], qs[2], qs[3]);
        match self {
            Fusion::Mim => {
                // Agreement energy per site, softmaxed over space into a
                // single attention mask shared by all frames and channels.
                let prod = tape.mul(query, audio)?;
                let t_mean = tape.mean_axis(prod, 0)?; // (h, w, C)
                let site = tape.mean_axis(t_mean, 2)?; // (h, w)
                let flat = tape.reshape(site, &[h * w])?;
                let soft = tape.softmax(flat, 0)?;
                let mask = tape.reshape(soft, &[1, h, w, 1])?;
                tape.mul(audio, mask)
            }
            Fusion::Addition => tape.add(query, audio),
            Fusion::Concatenation(proj) => {
                let cat = tape.concat(&[query, audio], 3)?;
                proj.forward(tape, store, cat)
            }
            Fusion::Bilinear(proj) => {
                let t = qs[0];
                let ql = tape.reshape(query, &[t, h, w, c, 1])?;
                let ar = tape.reshape(audio, &[t, h, w, 1, c])?;
                let outer = tape.mul(ql, ar)?;
                let flat = tape.reshape(outer, &[t, h, w, c * c])?;
                proj.forward(tape, store, flat)
            }
        }
    }
}

/// Recompute the interaction mask of [`Fusion::Mim`] as plain numbers, for
/// inspection and tests.
pub fn mim_mask(tape: &Tape, query: TensorId, audio: TensorId) -> Vec<f64> {
    let qs = tape.shape(query).to_vec();
    let (t, h, w, c) = (qs[0], qs[1], qs[2], qs[3]);
    let qv = &tape.value(query).data;
    let av = &tape.value(audio).data;
    let mut site = vec![0.0; h * w];
    for ti in 0..t {
        for s in 0..h * w {
            for ch in 0..c {
                let i = (ti * h * w + s) * c + ch;
                site[s] += qv[i] * av[i];
            }
        }
    }
    let scale = 1.0 / (t * c) as f64;
    let max = site
        .iter()
        .map(|v| v * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = site.iter().map(|v| (v * scale - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), CounterRng::keyed(seed, 0, "fusion-test").normal_vec(n)).unwrap()
    }

    #[test]
    fn align_produces_requested_grid() {
        let mut store = ParamStore::new();
        let mut rng = CounterRng::keyed(1, 0, "align");
        let align = AudioAlign::new(&mut store, "a", 6, 4, &mut rng).unwrap();
        let mut tape = Tape::new();
        let fa = tape.leaf(rand(&[3, 10, 10, 6], 2));
        let out = align.forward(&mut tape, &store, fa, 5, 4, 7).unwrap();
        assert_eq!(tape.shape(out), &[5, 4, 7, 4]);
    }

    #[test]
    fn mim_mask_is_uniform_for_constant_inputs() {
        let store = ParamStore::new();
        let fusion = Fusion::Mim;
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::ones(&[2, 3, 4, 5]));
        let a = tape.leaf(Tensor::ones(&[2, 3, 4, 5]));
        let out = fusion.forward(&mut tape, &store, q, a).unwrap();
        // Constant agreement -> uniform mask 1/(h*w); output is audio/12.
        for &v in &tape.value(out).data {
            assert!((v - 1.0 / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mim_mask_sums_to_one_and_matches_reference() {
        let fusion = Fusion::Mim;
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let q = tape.leaf(rand(&[3, 4, 5, 6], 10));
        let a = tape.leaf(rand(&[3, 4, 5, 6], 11));
        let out = fusion.forward(&mut tape, &store, q, a).unwrap();
        let mask = mim_mask(&tape, q, a);
        let total: f64 = mask.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // output[t,s,c] = audio[t,s,c] * mask[s]
        let av = &tape.value(a).data;
        let ov = &tape.value(out).data;
        for t in 0..3 {
            for s in 0..20 {
                for c in 0..6 {
                    let i = (t * 20 + s) * 6 + c;
                    assert!((ov[i] - av[i] * mask[s]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mim_mask_localizes_a_sharp_agreement_peak() {
        let fusion = Fusion::Mim;
        let store = ParamStore::new();
        let mut tape = Tape::new();
        // Strong query-audio agreement at exactly one site.
        let mut qd = Tensor::zeros(&[1, 4, 4, 2]);
        let mut ad = Tensor::zeros(&[1, 4, 4, 2]);
        let site = 2 * 4 + 1;
        for c in 0..2 {
            qd.data[site * 2 + c] = 30.0;
            ad.data[site * 2 + c] = 30.0;
        }
        let q = tape.leaf(qd);
        let a = tape.leaf(ad);
        fusion.forward(&mut tape, &store, q, a).unwrap();
        let mask = mim_mask(&tape, q, a);
        assert!(mask[site] > 0.99, "peak weight {}", mask[site]);
    }

    #[test]
    fn addition_with_zero_audio_is_identity_on_query() {
        let fusion = Fusion::Addition;
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let q = tape.leaf(rand(&[2, 3, 3, 4], 20));
        let a = tape.leaf(Tensor::zeros(&[2, 3, 3, 4]));
        let out = fusion.forward(&mut tape, &store, q, a).unwrap();
        assert_eq!(tape.value(out).data, tape.value(q).data);
    }

    #[test]
    fn concatenation_projects_back_to_stage_width() {
        let mut store = ParamStore::new();
        let mut rng = CounterRng::keyed(4, 0, "concat");
        let fusion = Fusion::new(&mut store, "f", FusionKind::Concatenation, 6, &mut rng).unwrap();
        let mut tape = Tape::new();
        let q = tape.leaf(rand(&[2, 3, 3, 6], 30));
        let a = tape.leaf(rand(&[2, 3, 3, 6], 31));
        let out = fusion.forward(&mut tape, &store, q, a).unwrap();
        assert_eq!(tape.shape(out), &[2, 3, 3, 6]);
    }

    #[test]
    fn bilinear_matches_hand_outer_product() {
        let mut store = ParamStore::new();
        let mut rng = CounterRng::keyed(5, 0, "bilinear");
        let fusion = Fusion::new(&mut store, "f", FusionKind::Bilinear, 2, &mut rng).unwrap();
        let proj = match &fusion {
            Fusion::Bilinear(p) => p,
            _ => unreachable!(),
        };
        // Weight picks out entry (i, j) = (1, 0) of the outer product.
        let w = store.get_mut(proj.w);
        w.data.iter_mut().for_each(|v| *v = 0.0);
        w.data[2 * 2] = 1.0; // row index 2 of flattened (C, C) = (1, 0)
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::new(vec![1, 1, 1, 2], vec![3.0, 5.0]).unwrap());
        let a = tape.leaf(Tensor::new(vec![1, 1, 1, 2], vec![7.0, 11.0]).unwrap());
        let out = fusion.forward(&mut tape, &store, q, a).unwrap();
        // outer[1][0] = q[1] * a[0] = 35; first output channel sees it.
        let v = &tape.value(out).data;
        assert!((v[0] - 35.0).abs() < 1e-12);
        assert!((v[1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn fusion_rejects_mismatched_grids() {
        let fusion = Fusion::Addition;
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let q = tape.leaf(Tensor::zeros(&[2, 3, 3, 4]));
        let a = tape.leaf(Tensor::zeros(&[2, 3, 4, 4]));
        assert!(fusion.forward(&mut tape, &store, q, a).is_err());
    }
}
