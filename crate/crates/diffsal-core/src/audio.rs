//! Audio frontend: waveform -> STFT -> log-mel spectrogram -> slices.
//!
//! The output is a stack of (H_a, W_a, 1) log-mel tiles, one per time slice,
//! which the audio encoder treats like a short video of spectrogram images.
//! All transforms here are pure and deterministic.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::wav;
use crate::tensor::Tensor;

pub const LOG_FLOOR: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::Audio(format!("non-finite sample {bad}")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// One-sided complex spectrogram: `bins = window/2 + 1` per frame.
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub window: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrogram {
    pub fn real(&self, frame: usize, bin: usize) -> f64 {
        self.re[frame * self.bins + bin]
    }

    pub fn imag(&self, frame: usize, bin: usize) -> f64 {
        self.im[frame * self.bins + bin]
    }

    pub fn power(&self, frame: usize, bin: usize) -> f64 {
        let r = self.real(frame, bin);
        let i = self.imag(frame, bin);
        r * r + i * i
    }

    pub fn magnitude(&self, frame: usize, bin: usize) -> f64 {
        self.power(frame, bin).sqrt()
    }
}

/// Sliced log-mel stack of shape (T_a, H_a, W_a, 1).
pub struct LogMelSlices {
    pub slices: Tensor,
    pub hop_ms: f64,
}

impl LogMelSlices {
    pub fn count(&self) -> usize {
        self.slices.shape[0]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum WindowShape {
    Hann,
    Rectangular,
}

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

/// In-place iterative radix-2 FFT. Lengths must be powers of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) -> Result<()> {
    let n = re.len();
    if n == 0 || n & (n - 1) != 0 {
        return Err(Error::Audio(format!("FFT length {n} is not a power of two")));
    }
    if im.len() != n {
        return Err(Error::Audio("FFT real/imag length mismatch".into()));
    }
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let step = -2.0 * PI / len as f64;
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                // Direct twiddle evaluation keeps round-off independent of k.
                let (wi, wr) = (step * k as f64).sin_cos();
                let (er, ei) = (re[start + k], im[start + k]);
                let (xr, xi) = (re[start + k + half], im[start + k + half]);
                let or = xr * wr - xi * wi;
                let oi = xr * wi + xi * wr;
                re[start + k] = er + or;
                im[start + k] = ei + oi;
                re[start + k + half] = er - or;
                im[start + k + half] = ei - oi;
            }
        }
        len <<= 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// STFT
// ---------------------------------------------------------------------------

/// Periodic Hann coefficient for position `n` of an `size`-sample window.
fn hann(n: usize, size: usize) -> f64 {
    0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos()
}

pub fn stft(w: &Waveform, window_size: usize, hop: usize) -> Result<Spectrogram> {
    stft_windowed(w, window_size, hop, WindowShape::Hann)
}

/// STFT with an explicit analysis window; frame count is
/// `floor((len - window)/hop) + 1`.
pub fn stft_windowed(
    w: &Waveform,
    window_size: usize,
    hop: usize,
    shape: WindowShape,
) -> Result<Spectrogram> {
    if window_size == 0 || window_size & (window_size - 1) != 0 {
        return Err(Error::Audio(format!("window size {window_size} is not a power of two")));
    }
    if hop == 0 || hop > window_size {
        return Err(Error::Audio(format!("hop {hop} must be in 1..={window_size}")));
    }
    if w.samples.len() < window_size {
        return Err(Error::Audio(format!(
            "signal of {} samples is shorter than one {window_size}-sample window",
            w.samples.len()
        )));
    }
    let frames = (w.samples.len() - window_size) / hop + 1;
    let bins = window_size / 2 + 1;
    let window: Vec<f64> = (0..window_size)
        .map(|n| match shape {
            WindowShape::Hann => hann(n, window_size),
            WindowShape::Rectangular => 1.0,
        })
        .collect();
    let mut out_re = Vec::with_capacity(frames * bins);
    let mut out_im = Vec::with_capacity(frames * bins);
    let mut re = vec![0.0; window_size];
    let mut im = vec![0.0; window_size];
    for f in 0..frames {
        let start = f * hop;
        for n in 0..window_size {
            re[n] = w.samples[start + n] * window[n];
            im[n] = 0.0;
        }
        fft_in_place(&mut re, &mut im)?;
        out_re.extend_from_slice(&re[..bins]);
        out_im.extend_from_slice(&im[..bins]);
    }
    Ok(Spectrogram { frames, bins, window: window_size, re: out_re, im: out_im })
}

// ---------------------------------------------------------------------------
// Mel filterbank
// ---------------------------------------------------------------------------

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over FFT bins, stored sparsely as (first_bin, weights).
pub struct MelFilterbank {
    pub n_mels: usize,
    pub bins: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(
        n_mels: usize,
        window: usize,
        sample_rate: u32,
        f_min: f64,
        f_max: f64,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels < 2 {
            return Err(Error::Audio(format!("need at least 2 mel bands, got {n_mels}")));
        }
        if !(0.0..nyquist).contains(&f_min) || f_max <= f_min || f_max > nyquist {
            return Err(Error::Audio(format!(
                "invalid mel range [{f_min}, {f_max}] for sample rate {sample_rate}"
            )));
        }
        let bins = window / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / window as f64;
        let mut rows = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut weights = Vec::new();
            let mut first = None;
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f <= left || f >= right {
                    0.0
                } else if f <= center {
                    (f - left) / (center - left)
                } else {
                    (right - f) / (right - center)
                };
                if w > 0.0 {
                    if first.is_none() {
                        first = Some(k);
                    }
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            rows.push((first.unwrap_or(0), weights));
        }
        Ok(MelFilterbank { n_mels, bins, rows })
    }

    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (first, ref weights) = self.rows[m];
        if k >= first && k < first + weights.len() {
            weights[k - first]
        } else {
            0.0
        }
    }

    /// Dot product of filter `m` with a full power-spectrum row.
    pub fn apply_row(&self, m: usize, power: &[f64]) -> f64 {
        let (first, ref weights) = self.rows[m];
        weights.iter().zip(&power[first..]).map(|(w, p)| w * p).sum()
    }
}

/// Mel-filtered, log-compressed spectrogram of shape (frames, n_mels).
pub fn log_mel(
    spec: &Spectrogram,
    n_mels: usize,
    f_min: f64,
    f_max: f64,
    sample_rate: u32,
) -> Result<Tensor> {
    let fb = MelFilterbank::new(n_mels, spec.window, sample_rate, f_min, f_max)?;
    let mut data = Vec::with_capacity(spec.frames * n_mels);
    let mut power = vec![0.0; spec.bins];
    for f in 0..spec.frames {
        for (k, p) in power.iter_mut().enumerate() {
            *p = spec.power(f, k);
        }
        for m in 0..n_mels {
            data.push((fb.apply_row(m, &power) + LOG_FLOOR).ln());
        }
    }
    Tensor::new(vec![spec.frames, n_mels], data)
}

// ---------------------------------------------------------------------------
// Slicing
// ---------------------------------------------------------------------------

/// Cut a (frames, n_mels) map into `count` slices of `slice_frames` rows,
/// starting every `hop_frames`. Rows past the end replicate the last frame.
/// `hop_ms` is carried as metadata only.
pub fn slice(
    mel: &Tensor,
    slice_frames: usize,
    hop_frames: usize,
    count: usize,
    hop_ms: f64,
) -> Result<LogMelSlices> {
    if count < 1 {
        return Err(Error::Audio("slice count must be at least 1".into()));
    }
    if mel.rank() != 2 {
        return Err(Error::Audio(format!("expected (frames, mels) map, got {:?}", mel.shape)));
    }
    if slice_frames == 0 || hop_frames == 0 {
        return Err(Error::Audio("slice length and hop must be positive".into()));
    }
    let (frames, mels) = (mel.shape[0], mel.shape[1]);
    let last_start = (count - 1) * hop_frames;
    if last_start >= frames {
        return Err(Error::Audio(format!(
            "{count} slices at hop {hop_frames} need more than {frames} frames"
        )));
    }
    let mut data = Vec::with_capacity(count * slice_frames * mels);
    for s in 0..count {
        for r in 0..slice_frames {
            let frame = (s * hop_frames + r).min(frames - 1);
            data.extend_from_slice(&mel.data[frame * mels..(frame + 1) * mels]);
        }
    }
    let slices = Tensor::new(vec![count, slice_frames, mels, 1], data)?;
    Ok(LogMelSlices { slices, hop_ms })
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Frontend settings. `hop_ms` paces STFT frames; `slice_hop_ms` paces the
/// coarser slice starts and must be a multiple of the frame period to land on
/// frame boundaries (it is rounded to the nearest frame).
#[derive(Debug, Clone)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub slice_frames: usize,
    pub slice_hop_ms: f64,
    pub slices: usize,
}

impl FrontendConfig {
    /// Desk-scale default: 4 slices of 40x40 from a ~1 s clip at 16 kHz.
    pub fn desk() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            window: 512,
            hop_ms: 11.0,
            n_mels: 40,
            f_min: 0.0,
            f_max: 7_900.0,
            slice_frames: 40,
            slice_hop_ms: 200.0,
            slices: 4,
        }
    }

    /// Full-scale preset: 9 contiguous slices of 112x192 (shape tests only).
    pub fn full_scale() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            window: 512,
            hop_ms: 11.0,
            n_mels: 192,
            f_min: 0.0,
            f_max: 7_900.0,
            slice_frames: 112,
            slice_hop_ms: 112.0 * 11.0,
            slices: 9,
        }
    }

    pub fn stft_hop(&self) -> usize {
        ((self.hop_ms / 1000.0) * self.sample_rate as f64).round() as usize
    }

    pub fn slice_hop_frames(&self) -> usize {
        (self.slice_hop_ms / self.hop_ms).round().max(1.0) as usize
    }
}

/// Full frontend: STFT, mel projection, log compression, slicing.
pub fn log_mel_slices(w: &Waveform, cfg: &FrontendConfig) -> Result<LogMelSlices> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Audio(format!(
            "waveform rate {} does not match configured {}",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let spec = stft(w, cfg.window, cfg.stft_hop())?;
    let mel = log_mel(&spec, cfg.n_mels, cfg.f_min, cfg.f_max, cfg.sample_rate)?;
    slice(&mel, cfg.slice_frames, cfg.slice_hop_frames(), cfg.slices, cfg.slice_hop_ms)
}

/// Reads `.wav` files as PCM-16; any other extension is raw little-endian
/// f32 samples at `raw_sample_rate`.
pub fn load_waveform(path: &Path, raw_sample_rate: u32) -> Result<Waveform> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
        let data = wav::load(path)?;
        Waveform::new(data.samples, data.sample_rate)
    } else {
        let bytes = crate::io::read_bytes(path)?;
        if bytes.len() % 4 != 0 {
            return Err(Error::format(path, "raw f32 file length is not a multiple of 4"));
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Waveform::new(samples, raw_sample_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn sine(freq: f64, len: usize, sr: u32) -> Waveform {
        let samples = (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / sr as f64).sin())
            .collect();
        Waveform::new(samples, sr).unwrap()
    }

    /// Full-spectrum energy of a one-sided frame via conjugate symmetry.
    fn frame_energy(spec: &Spectrogram, f: usize) -> f64 {
        let mut total = spec.power(f, 0) + spec.power(f, spec.bins - 1);
        for k in 1..spec.bins - 1 {
            total += 2.0 * spec.power(f, k);
        }
        total
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = CounterRng::keyed(2, 0, "fft-test");
        let n = 64;
        let xs = rng.normal_vec(n);
        let mut re = xs.clone();
        let mut im = vec![0.0; n];
        fft_in_place(&mut re, &mut im).unwrap();
        for k in 0..n {
            let (mut dr, mut di) = (0.0, 0.0);
            for (t, &x) in xs.iter().enumerate() {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                dr += x * ang.cos();
                di += x * ang.sin();
            }
            assert!((re[k] - dr).abs() < 1e-9, "bin {k} real {dr} vs {}", re[k]);
            assert!((im[k] - di).abs() < 1e-9, "bin {k} imag {di} vs {}", im[k]);
        }
    }

    #[test]
    fn zero_signal_gives_zero_magnitudes() {
        let w = Waveform::new(vec![0.0; 2048], 16_000).unwrap();
        let spec = stft(&w, 512, 176).unwrap();
        assert_eq!(spec.frames, (2048 - 512) / 176 + 1);
        for f in 0..spec.frames {
            for k in 0..spec.bins {
                assert_eq!(spec.magnitude(f, k), 0.0);
            }
        }
    }

    #[test]
    fn bin_aligned_sine_concentrates_energy() {
        // Bin 20 of a 512-point DFT at 16 kHz is exactly 625 Hz.
        let sr = 16_000;
        let k = 20;
        let freq = k as f64 * sr as f64 / 512.0;
        let w = sine(freq, 2048, sr);
        let spec = stft_windowed(&w, 512, 512, WindowShape::Rectangular).unwrap();
        for f in 0..spec.frames {
            let total = frame_energy(&spec, f);
            let at_k = 2.0 * spec.power(f, k);
            assert!(at_k / total >= 0.99, "frame {f}: {}", at_k / total);
        }
    }

    #[test]
    fn parseval_holds_per_frame() {
        let mut rng = CounterRng::keyed(3, 0, "parseval");
        let w = Waveform::new(rng.normal_vec(4096), 16_000).unwrap();
        let spec = stft(&w, 512, 176).unwrap();
        for f in 0..spec.frames {
            let windowed_sq: f64 = (0..512)
                .map(|n| {
                    let v = w.samples[f * 176 + n] * hann(n, 512);
                    v * v
                })
                .sum();
            let freq_energy = frame_energy(&spec, f);
            let expect = 512.0 * windowed_sq;
            assert!(
                (freq_energy - expect).abs() <= 1e-9 * expect.abs().max(1.0),
                "frame {f}: {freq_energy} vs {expect}"
            );
        }
    }

    #[test]
    fn silence_prefix_shifts_frames() {
        let mut rng = CounterRng::keyed(4, 0, "shift");
        let body = rng.normal_vec(2000);
        let hop = 176;
        let shift_frames = 3;
        let mut padded = vec![0.0; hop * shift_frames];
        padded.extend_from_slice(&body);
        let a = stft(&Waveform::new(body.clone(), 16_000).unwrap(), 512, hop).unwrap();
        let b = stft(&Waveform::new(padded, 16_000).unwrap(), 512, hop).unwrap();
        for f in 0..a.frames {
            for k in 0..a.bins {
                assert_eq!(a.real(f, k), b.real(f + shift_frames, k));
                assert_eq!(a.imag(f, k), b.imag(f + shift_frames, k));
            }
        }
    }

    #[test]
    fn filterbank_rows_are_triangular_with_positive_mass() {
        let fb = MelFilterbank::new(40, 512, 16_000, 0.0, 7_900.0).unwrap();
        for m in 0..fb.n_mels {
            let weights: Vec<f64> = (0..fb.bins).map(|k| fb.weight(m, k)).collect();
            let sum: f64 = weights.iter().sum();
            assert!(sum > 0.0, "row {m} has no mass");
            // Support is one contiguous run, rising then falling.
            let nonzero: Vec<usize> =
                (0..fb.bins).filter(|&k| weights[k] > 0.0).collect();
            let (first, last) = (nonzero[0], *nonzero.last().unwrap());
            assert_eq!(nonzero.len(), last - first + 1, "row {m} support has holes");
            let peak = (first..=last).max_by(|&a, &b| weights[a].total_cmp(&weights[b])).unwrap();
            for k in first..peak {
                assert!(weights[k] <= weights[k + 1] + 1e-12, "row {m} not rising at {k}");
            }
            for k in peak..last {
                assert!(weights[k] >= weights[k + 1] - 1e-12, "row {m} not falling at {k}");
            }
        }
    }

    #[test]
    fn mel_energies_match_dense_matrix_oracle() {
        let mut rng = CounterRng::keyed(5, 0, "mel-noise");
        let w = Waveform::new(rng.normal_vec(4096), 16_000).unwrap();
        let spec = stft(&w, 512, 176).unwrap();
        let (n_mels, f_min, f_max) = (40, 0.0, 7_900.0);
        let mel = log_mel(&spec, n_mels, f_min, f_max, 16_000).unwrap();

        // Independent dense route: rebuild every weight from the mel-scale
        // formula and multiply the full matrix.
        let m_lo = 2595.0 * (1.0f64 + f_min / 700.0).log10();
        let m_hi = 2595.0 * (1.0f64 + f_max / 700.0).log10();
        let hz: Vec<f64> = (0..n_mels + 2)
            .map(|i| {
                let m = m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64;
                700.0 * (10f64.powf(m / 2595.0) - 1.0)
            })
            .collect();
        for f in 0..spec.frames {
            for m in 0..n_mels {
                let mut acc = 0.0;
                for k in 0..spec.bins {
                    let fk = k as f64 * 16_000.0 / 512.0;
                    let weight = if fk <= hz[m] || fk >= hz[m + 2] {
                        0.0
                    } else if fk <= hz[m + 1] {
                        (fk - hz[m]) / (hz[m + 1] - hz[m])
                    } else {
                        (hz[m + 2] - fk) / (hz[m + 2] - hz[m + 1])
                    };
                    acc += weight * spec.power(f, k);
                }
                let expect = (acc + LOG_FLOOR).ln();
                let got = mel.at(&[f, m]);
                assert!(
                    (got - expect).abs() <= 1e-9 * expect.abs().max(1.0),
                    "frame {f} mel {m}: {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn zero_spectrum_hits_the_log_floor() {
        let w = Waveform::new(vec![0.0; 1024], 16_000).unwrap();
        let spec = stft(&w, 512, 176).unwrap();
        let mel = log_mel(&spec, 40, 0.0, 7_900.0, 16_000).unwrap();
        for &v in &mel.data {
            assert_eq!(v, LOG_FLOOR.ln());
        }
    }

    #[test]
    fn amplitude_scaling_never_decreases_log_mel() {
        let mut rng = CounterRng::keyed(6, 0, "mono");
        let base = rng.normal_vec(2048);
        let scaled: Vec<f64> = base.iter().map(|v| v * 2.5).collect();
        let a = log_mel(
            &stft(&Waveform::new(base, 16_000).unwrap(), 512, 176).unwrap(),
            40, 0.0, 7_900.0, 16_000,
        )
        .unwrap();
        let b = log_mel(
            &stft(&Waveform::new(scaled, 16_000).unwrap(), 512, 176).unwrap(),
            40, 0.0, 7_900.0, 16_000,
        )
        .unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!(y >= x, "{y} < {x}");
        }
    }

    #[test]
    fn single_slice_spanning_everything_is_the_full_map() {
        let mel = Tensor::new(vec![6, 3], (0..18).map(|v| v as f64).collect()).unwrap();
        let out = slice(&mel, 6, 6, 1, 66.0).unwrap();
        assert_eq!(out.slices.shape, vec![1, 6, 3, 1]);
        assert_eq!(out.slices.data, mel.data);
    }

    #[test]
    fn uniquely_covered_frames_reconstruct_exactly() {
        // Slices of 4 frames every 2: frames covered once by exactly one
        // slice are recoverable from that slice at the right offset.
        let frames = 10;
        let mel = Tensor::new(vec![frames, 2], (0..frames * 2).map(|v| v as f64).collect()).unwrap();
        let out = slice(&mel, 4, 2, 4, 22.0).unwrap();
        assert_eq!(out.slices.shape, vec![4, 4, 2, 1]);
        for s in 0..4 {
            for r in 0..4 {
                let frame = (s * 2 + r).min(frames - 1);
                for c in 0..2 {
                    assert_eq!(out.slices.at(&[s, r, c, 0]), mel.at(&[frame, c]));
                }
            }
        }
    }

    #[test]
    fn too_few_frames_for_requested_slices_is_an_error() {
        let mel = Tensor::new(vec![3, 2], vec![0.0; 6]).unwrap();
        assert!(slice(&mel, 2, 2, 3, 22.0).is_err());
    }

    #[test]
    fn full_scale_preset_yields_nine_large_slices() {
        let cfg = FrontendConfig::full_scale();
        let hop = cfg.stft_hop();
        // Enough samples for 9 contiguous 112-frame slices.
        let need_frames = 9 * 112;
        let len = (need_frames - 1) * hop + cfg.window;
        let w = sine(440.0, len, cfg.sample_rate);
        let out = log_mel_slices(&w, &cfg).unwrap();
        assert_eq!(out.slices.shape, vec![9, 112, 192, 1]);
    }

    #[test]
    fn desk_preset_covers_a_short_clip() {
        let cfg = FrontendConfig::desk();
        let w = sine(600.0, 17_600, cfg.sample_rate); // 1.1 s
        let out = log_mel_slices(&w, &cfg).unwrap();
        assert_eq!(out.slices.shape, vec![4, 40, 40, 1]);
        assert!(out.slices.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn raw_f32_loader_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.f32");
        let samples = [0.25f32, -0.5, 1.0];
        let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        std::fs::write(&path, bytes).unwrap();
        let w = load_waveform(&path, 16_000).unwrap();
        assert_eq!(w.sample_rate, 16_000);
        assert_eq!(w.samples, vec![0.25, -0.5, 1.0]);
    }
}
