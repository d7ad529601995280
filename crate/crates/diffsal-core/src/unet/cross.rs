//! Cross-attention between the query stream and the fused audio-visual
//! stream, in two interchangeable forms.
//!
//! The efficient form compresses the key and value streams with a strided
//! spatio-temporal convolution before attending, shrinking the token count
//! by the cube of the stage's compression factor. The standard form attends
//! over the uncompressed streams and is kept as an exact reference: with an
//! identity compression the two produce the same numbers from the same
//! projection weights, which is what the equivalence tests pin down.
//!
//! The compression convolution is depthwise (one filter per channel). A
//! dense kernel at factor 16 would cost `C^2 * 4096` weights per stage;
//! channel mixing is instead left to the key/value projections that follow.

use crate::error::{Error, Result};
use crate::layers::{LayerNorm, Linear};
use crate::params::{ParamId, ParamStore};
use crate::rng::CounterRng;
use crate::tape::{Tape, TensorId};

// ---------------------------------------------------------------------------
// Spatio-temporal compression
// ---------------------------------------------------------------------------

/// Token extents after compressing `(t, h, w)` by factor `k` with
/// end-replication padding to a multiple of `k` per axis.
pub fn compressed_extents(t: usize, h: usize, w: usize, k: usize) -> (usize, usize, usize) {
    (t.div_ceil(k), h.div_ceil(k), w.div_ceil(k))
}

/// Key/value token count after compression by `k`.
pub fn compressed_tokens(t: usize, h: usize, w: usize, k: usize) -> usize {
    let (ct, ch, cw) = compressed_extents(t, h, w, k);
    ct * ch * cw
}

/// Token count of the padded grid that compression actually consumes. The
/// ratio of this to [`compressed_tokens`] is exactly `k^3`.
pub fn padded_tokens(t: usize, h: usize, w: usize, k: usize) -> usize {
    t.div_ceil(k) * k * h.div_ceil(k) * k * w.div_ceil(k) * k
}

/// Strided depthwise conv3d over `(T, h, w, C)` features, kernel equal to
/// stride, with optional layer norm on the compressed tokens.
pub struct Stc {
    pub kernel: ParamId,
    norm: Option<LayerNorm>,
    pub k: usize,
}

impl Stc {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        k: usize,
        normalize: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("stc", "compression factor must be positive"));
        }
        let kernel = store.kaiming_uniform(&format!("{prefix}.kernel"), &[channels, k, k, k], rng)?;
        let norm = if normalize {
            Some(LayerNorm::new(store, &format!("{prefix}.ln"), &[channels])?)
        } else {
            None
        };
        Ok(Stc { kernel, norm, k })
    }

    /// Overwrite the kernel so that `k = 1` compression copies its input.
    pub fn make_identity(&self, store: &mut ParamStore) {
        let t = store.get_mut(self.kernel);
        debug_assert_eq!(t.shape[1..], [1, 1, 1]);
        t.data.iter_mut().for_each(|v| *v = 1.0);
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: TensorId) -> Result<TensorId> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::invalid(
                "stc",
                format!("expected (T, h, w, C) features, got {shape:?}"),
            ));
        }
        let k = self.k;
        let mut padded = x;
        for axis in 0..3 {
            let extra = (k - shape[axis] % k) % k;
            if extra > 0 {
                padded = tape.pad_replicate_end(padded, axis, extra)?;
            }
        }
        let cf = tape.permute(padded, &[3, 0, 1, 2])?;
        let kernel = store.bind(tape, self.kernel);
        let y = tape.conv3d_depthwise(cf, kernel, [k, k, k], [0, 0, 0])?;
        let y = tape.permute(y, &[1, 2, 3, 0])?;
        match &self.norm {
            Some(ln) => ln.forward(tape, store, y),
            None => Ok(y),
        }
    }
}

// ---------------------------------------------------------------------------
// Projections shared by both attention forms
// ---------------------------------------------------------------------------

/// Query norm plus the four attention projections. By default keys come
/// from the fused stream and values from the query stream; `swap_kv`
/// exchanges the two sources.
pub struct CrossAttention {
    pub ln_q: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub swap_kv: bool,
}

impl CrossAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        heads: usize,
        swap_kv: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::invalid(
                "cross_attention",
                format!("{heads} heads must divide {channels} channels"),
            ));
        }
        Ok(CrossAttention {
            ln_q: LayerNorm::new(store, &format!("{prefix}.ln_q"), &[channels])?,
            wq: Linear::new(store, &format!("{prefix}.wq"), channels, channels, true, rng)?,
            wk: Linear::new(store, &format!("{prefix}.wk"), channels, channels, true, rng)?,
            wv: Linear::new(store, &format!("{prefix}.wv"), channels, channels, true, rng)?,
            wo: Linear::new(store, &format!("{prefix}.wo"), channels, channels, true, rng)?,
            heads,
            swap_kv,
        })
    }

    /// Key and value source streams for a (query, fused) pair.
    fn streams(&self, query: TensorId, fused: TensorId) -> (TensorId, TensorId) {
        if self.swap_kv {
            (query, fused)
        } else {
            (fused, query)
        }
    }
}

fn flatten_tokens(tape: &mut Tape, x: TensorId) -> Result<TensorId> {
    let s = tape.shape(x).to_vec();
    let tokens: usize = s[..3].iter().product();
    tape.reshape(x, &[tokens, s[3]])
}

// ---------------------------------------------------------------------------
// Efficient form
// ---------------------------------------------------------------------------

/// Cross-attention with compressed keys and values, plus the residual back
/// onto the query stream.
pub struct Eca {
    pub proj: CrossAttention,
    pub stc: Stc,
}

impl Eca {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        heads: usize,
        k: usize,
        swap_kv: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        Ok(Eca {
            proj: CrossAttention::new(store, &format!("{prefix}.proj"), channels, heads, swap_kv, rng)?,
            stc: Stc::new(store, &format!("{prefix}.stc"), channels, k, k > 1, rng)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: TensorId,
        fused: TensorId,
    ) -> Result<TensorId> {
        let q_shape = tape.shape(query).to_vec();
        let normed = self.proj.ln_q.forward(tape, store, query)?;
        let q_tokens = flatten_tokens(tape, normed)?;
        let q = self.proj.wq.forward(tape, store, q_tokens)?;

        let (k_src, v_src) = self.proj.streams(query, fused);
        let k_comp = self.stc.forward(tape, store, k_src)?;
        let v_comp = self.stc.forward(tape, store, v_src)?;
        let k_tokens = flatten_tokens(tape, k_comp)?;
        let v_tokens = flatten_tokens(tape, v_comp)?;
        let k = self.proj.wk.forward(tape, store, k_tokens)?;
        let v = self.proj.wv.forward(tape, store, v_tokens)?;

        let mixed = tape.attention(q, k, v, self.proj.heads)?;
        let out = self.proj.wo.forward(tape, store, mixed)?;
        let out = tape.reshape(out, &q_shape)?;
        tape.add(out, query)
    }
}

// ---------------------------------------------------------------------------
// Standard form
// ---------------------------------------------------------------------------

/// Dense multi-head cross-attention over uncompressed streams, written with
/// explicit reshapes, batched matrix products, and a softmax rather than the
/// fused attention kernel. Serves both as the `standard` attention setting
/// and as an independent reference for the efficient form.
pub fn sca_forward(
    tape: &mut Tape,
    store: &ParamStore,
    proj: &CrossAttention,
    query: TensorId,
    fused: TensorId,
) -> Result<TensorId> {
    let q_shape = tape.shape(query).to_vec();
    if q_shape.len() != 4 {
        return Err(Error::invalid(
            "sca",
            format!("expected (T, h, w, C) features, got {q_shape:?}"),
        ));
    }
    let c = q_shape[3];
    let heads = proj.heads;
    let d = c / heads;

    let normed = proj.ln_q.forward(tape, store, query)?;
    let q_tokens = flatten_tokens(tape, normed)?;
    let q = proj.wq.forward(tape, store, q_tokens)?;
    let (k_src, v_src) = proj.streams(query, fused);
    let k_tokens = flatten_tokens(tape, k_src)?;
    let v_tokens = flatten_tokens(tape, v_src)?;
    let k = proj.wk.forward(tape, store, k_tokens)?;
    let v = proj.wv.forward(tape, store, v_tokens)?;

    let n = tape.shape(q)[0];
    let m = tape.shape(k)[0];
    let split = |tape: &mut Tape, x: TensorId, len: usize| -> Result<TensorId> {
        let r = tape.reshape(x, &[len, heads, d])?;
        tape.permute(r, &[1, 0, 2]) // (heads, tokens, d)
    };
    let qh = split(tape, q, n)?;
    let kh = split(tape, k, m)?;
    let vh = split(tape, v, m)?;
    let kt = tape.permute(kh, &[0, 2, 1])?;
    let scores = tape.matmul(qh, kt)?; // (heads, N, M)
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
    let probs = tape.softmax(scaled, 2)?;
    let ctx = tape.matmul(probs, vh)?; // (heads, N, d)
    let merged = tape.permute(ctx, &[1, 0, 2])?;
    let packed = tape.reshape(merged, &[n, c])?;
    let out = proj.wo.forward(tape, store, packed)?;
    let out = tape.reshape(out, &q_shape)?;
    tape.add(out, query)
}

/// Standard cross-attention as a stage module.
pub struct Sca {
    pub proj: CrossAttention,
}

impl Sca {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        heads: usize,
        swap_kv: bool,
        rng: &mut CounterRng,
    ) -> Result<Self> {
        Ok(Sca {
            proj: CrossAttention::new(store, &format!("{prefix}.proj"), channels, heads, swap_kv, rng)?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: TensorId,
        fused: TensorId,
    ) -> Result<TensorId> {
        sca_forward(tape, store, &self.proj, query, fused)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), CounterRng::keyed(seed, 1, "cross-test").normal_vec(n)).unwrap()
    }

    #[test]
    fn compression_counts_follow_the_cube_law() {
        for i in 1..=4usize {
            let k = 1 << i;
            // Extents divisible by k: the raw/compressed ratio is exactly k^3.
            let (t, h, w) = (2 * k, k, 4 * k);
            assert_eq!(t * h * w, compressed_tokens(t, h, w, k) * k * k * k);
            // Ragged extents: the padded grid keeps the exact ratio.
            let (t, h, w) = (2 * k + 1, k + 3, w - 1);
            assert_eq!(padded_tokens(t, h, w, k), compressed_tokens(t, h, w, k) * k * k * k);
        }
    }

    #[test]
    fn stc_identity_configuration_copies_input() {
        let mut store = ParamStore::new();
        let mut rng = CounterRng::keyed(2, 0, "stc-id");
        let stc = Stc::new(&mut store, "s", 5, 1, false, &mut rng).unwrap();
        stc.make_identity(&mut store);
        let mut tape = Tape::new();
        let x = tape.leaf(rand(&[3, 4, 4, 5], 3));
        let y = stc.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data, tape.value(x).data);
    }

    #[test]
    fn stc_compresses_ragged_extents_with_replication() {
        let mut store = ParamStore::new();
        let mut rng = CounterRng::keyed(3, 0, "stc-rag");
        let stc = Stc::new(&mut store, "s", 4, 2, true, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(rand(&[3, 5, 4, 4], 4));
        let y = stc.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 2, 4]);
    }

    #[test]
    fn efficient_equals_standard_under_identity_compression() {
        let mut worst = 0.0f64;
        for trial in 0..20 {
            let mut rng = CounterRng::keyed(100 + trial, 0, "eca-sca");
            let heads = [1, 2, 4][(trial % 3) as usize];
            let c = heads * (1 + (trial as usize % 3));
            let mut store = ParamStore::new();
            let eca = Eca::new(&mut store, "a", c, heads, 1, false, &mut rng).unwrap();
            eca.stc.make_identity(&mut store);
            let mut tape = Tape::new();
            let q = tape.leaf(rand(&[2, 3, 2, c], 50 + trial));
            let f = tape.leaf(rand(&[2, 3, 2, c], 80 + trial));
            let a = eca.forward(&mut tape, &store, q, f).unwrap();
            let b = sca_forward(&mut tape, &store, &eca.proj, q, f).unwrap();
            for (x, y) in tape.value(a).data.iter().zip(&tape.value(b).data) {
                worst = worst.max((x - y).abs());
            }
        }
        assert!(worst < 1e-9, "max abs diff {worst}");
    }

    #[test]
    fn swap_kv_changes_which_stream_feeds_values() {
        let mut rng = CounterRng::keyed(7, 0, "swap");
        let mut store = ParamStore::new();
        let plain = Sca::new(&mut store, "p", 4, 2, false, &mut rng).unwrap();
        let mut rng2 = CounterRng::keyed(7, 0, "swap");
        let mut store2 = ParamStore::new();
        let swapped = Sca::new(&mut store2, "p", 4, 2, true, &mut rng2).unwrap();
        let mut tape = Tape::new();
        let q = tape.leaf(rand(&[1, 2, 2, 4], 8));
        let f = tape.leaf(rand(&[1, 2, 2, 4], 9));
        let a = plain.forward(&mut tape, &store, q, f).unwrap();
        let b = swapped.forward(&mut tape, &store2, q, f).unwrap();
        let d: f64 = tape
            .value(a)
            .data
            .iter()
            .zip(&tape.value(b).data)
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(d > 1e-9, "swapping K/V sources changed nothing");
    }

    #[test]
    fn compressed_attention_shrinks_key_tokens() {
        let mut rng = CounterRng::keyed(9, 0, "eca-small");
        let mut store = ParamStore::new();
        let eca = Eca::new(&mut store, "e", 4, 2, 2, false, &mut rng).unwrap();
        let mut tape = Tape::new();
        let q = tape.leaf(rand(&[4, 4, 4, 4], 10));
        let f = tape.leaf(rand(&[4, 4, 4, 4], 11));
        let out = eca.forward(&mut tape, &store, q, f).unwrap();
        // Output keeps the query grid; 64 query tokens attended over 8.
        assert_eq!(tape.shape(out), &[4, 4, 4, 4]);
        assert_eq!(compressed_tokens(4, 4, 4, 2), 8);
    }

    #[test]
    fn gradients_reach_all_attention_projections() {
        let mut rng = CounterRng::keyed(12, 0, "eca-grad");
        let mut store = ParamStore::new();
        let eca = Eca::new(&mut store, "e", 4, 2, 2, false, &mut rng).unwrap();
        let mut tape = Tape::new();
        let q = tape.leaf(rand(&[2, 4, 4, 4], 13));
        let f = tape.leaf(rand(&[2, 4, 4, 4], 14));
        let out = eca.forward(&mut tape, &store, q, f).unwrap();
        let loss = tape.sum_all(out);
        tape.backward(loss).unwrap();
        for name in ["e.proj.wq.w", "e.proj.wk.w", "e.proj.wv.w", "e.proj.wo.w", "e.stc.kernel"] {
            let id = store.lookup(name).unwrap();
            let g = store.grad_on(&tape, id).unwrap_or_else(|| panic!("{name} missing grad"));
            assert!(g.iter().any(|&v| v != 0.0), "{name} gradient all zero");
        }
    }
}
