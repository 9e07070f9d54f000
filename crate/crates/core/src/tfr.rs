//! Three-channel log spectrogram front end: a shared STFT feeding mel,
//! gammatone and constant-Q filterbanks, plus frequency warping, masking
//! and per-row normalization.

use std::sync::Arc;

use num_complex::Complex;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfrConfig {
    pub sample_rate: f64,
    pub n_fft: usize,
    pub win_len: usize,
    pub hop: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub n_filters: usize,
    /// Dynamic range kept below each channel's maximum, in dB.
    pub log_floor_db: f64,
}

impl Default for TfrConfig {
    fn default() -> Self {
        TfrConfig {
            sample_rate: 10_000.0,
            n_fft: 1024,
            win_len: 1000,
            hop: 128,
            f_min: 32.7,
            f_max: 3000.0,
            n_filters: 84,
            log_floor_db: 80.0,
        }
    }
}

impl TfrConfig {
    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Frames produced for `len` samples under centered padding.
    pub fn frames_for(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate / self.n_fft as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_len > self.n_fft || self.hop == 0 || self.n_filters < 2 {
            return Err(Error::Config("tfr: need win_len <= n_fft, hop > 0, n_filters >= 2".into()));
        }
        if !(self.f_min > 0.0 && self.f_max > self.f_min && self.f_max <= self.sample_rate / 2.0) {
            return Err(Error::Config("tfr: need 0 < f_min < f_max <= sample_rate/2".into()));
        }
        Ok(())
    }
}

/// Complex STFT frames, stored frame-major: `data[frame * bins + bin]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StftFrames<T> {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Scalar> StftFrames<T> {
    pub fn frame(&self, t: usize) -> &[Complex<T>] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// `|X|²`, frame-major.
    pub fn power(&self) -> Vec<T> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Periodic Hann window of `win_len` points, centered inside `n_fft`.
pub fn analysis_window<T: Scalar>(n_fft: usize, win_len: usize) -> Vec<T> {
    let mut w = vec![T::zero(); n_fft];
    let off = (n_fft - win_len) / 2;
    for i in 0..win_len {
        let v = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win_len as f64).cos();
        w[off + i] = s(v);
    }
    w
}

/// Index into `x` after reflect padding on both sides (no edge repeat).
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Samples of one centered analysis frame (before windowing).
pub(crate) fn frame_samples<T: Scalar>(x: &[T], t: usize, cfg: &TfrConfig) -> Vec<T> {
    let start = (t * cfg.hop) as isize - (cfg.n_fft / 2) as isize;
    (0..cfg.n_fft).map(|n| x[reflect_index(start + n as isize, x.len())]).collect()
}

/// Power spectrum to `10·log10(p + 1e-10)`, clamped at `floor_db` below the max.
pub fn log_compress<T: Scalar>(p: &mut [T], floor_db: f64) {
    let ten = s::<T>(10.0);
    let tiny = s::<T>(1e-10);
    let mut mx = T::neg_infinity();
    for v in p.iter_mut() {
        *v = ten * (*v + tiny).log10();
        mx = mx.max(*v);
    }
    let lo = mx - s::<T>(floor_db);
    p.iter_mut().for_each(|v| *v = v.max(lo));
}

/// Lowest value `log_compress` can emit for any input.
pub const LOG_FLOOR_DB: f64 = -100.0;

pub fn hz_to_mel(f: f64) -> Result<f64> {
    if !(f >= 0.0) {
        return Err(Error::InvalidArgument(format!("frequency must be non-negative, got {f}")));
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Equivalent rectangular bandwidth (Glasberg & Moore), Hz.
pub fn erb_hz(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

pub fn hz_to_erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// Dense real filterbank applied to the power spectrum.
#[derive(Clone, Debug)]
pub struct Filterbank<T> {
    pub n_filters: usize,
    pub bins: usize,
    /// `weights[filter * bins + bin]`.
    pub weights: Vec<T>,
    pub centers_hz: Vec<f64>,
}

impl<T: Scalar> Filterbank<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.weights[i * self.bins..(i + 1) * self.bins]
    }

    /// `[n_filters, frames]` filter energies from frame-major power.
    pub fn apply(&self, power: &[T], frames: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_filters * frames];
        T::gemm(self.n_filters, self.bins, frames, T::one(), &self.weights, false, power, true, T::zero(), &mut out);
        out
    }

    /// Triangular filters with mel-uniform centers, each scaled to peak at 1.
    pub fn mel(cfg: &TfrConfig) -> Self {
        let bins = cfg.bins();
        let n = cfg.n_filters;
        let lo = hz_to_mel(cfg.f_min).unwrap();
        let hi = hz_to_mel(cfg.f_max).unwrap();
        let edges: Vec<f64> = (0..n + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n + 1) as f64)).collect();
        let mut weights = vec![T::zero(); n * bins];
        for m in 0..n {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * bins..(m + 1) * bins];
            let mut peak = 0.0f64;
            let mut vals = vec![0.0f64; bins];
            for (b, v) in vals.iter_mut().enumerate() {
                let f = cfg.bin_hz(b);
                *v = ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0);
                peak = peak.max(*v);
            }
            if peak == 0.0 {
                // narrower than one bin: fall back to the nearest bin
                let b = (c / cfg.bin_hz(1)).round() as usize;
                vals[b.min(bins - 1)] = 1.0;
                peak = 1.0;
            }
            for (w, v) in row.iter_mut().zip(vals) {
                *w = s(v / peak);
            }
        }
        Filterbank { n_filters: n, bins, weights, centers_hz: edges[1..=n].to_vec() }
    }

    /// 4th-order gammatone power responses at ERB-rate-uniform centers.
    pub fn gammatone(cfg: &TfrConfig) -> Self {
        let bins = cfg.bins();
        let n = cfg.n_filters;
        let lo = hz_to_erb_rate(cfg.f_min);
        let hi = hz_to_erb_rate(cfg.f_max);
        let centers: Vec<f64> = (0..n).map(|i| erb_rate_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect();
        let mut weights = vec![T::zero(); n * bins];
        for (m, &fc) in centers.iter().enumerate() {
            let b = 1.019 * erb_hz(fc);
            for bin in 0..bins {
                let x = (cfg.bin_hz(bin) - fc) / b;
                // |H|² of an order-4 gammatone: (1 + x²)^-4
                weights[m * bins + bin] = s((1.0 + x * x).powi(-4));
            }
        }
        Filterbank { n_filters: n, bins, weights, centers_hz: centers }
    }
}

/// Sparse frequency-domain constant-Q kernels evaluated on STFT frames.
///
/// Bin `k` approximates `Σ_n x_w[n]·w_k[n]·exp(-2πi f_k (n - n_fft/2)/sr)`
/// where `x_w` is the Hann-windowed frame and `w_k` a Hann window of length
/// `min(Q·sr/f_k, win_len)` centered on the frame. The kernel holds both the
/// positive and the mirrored negative-frequency coefficients so the sum is
/// exact for real input up to the sparsity threshold.
#[derive(Clone, Debug)]
pub struct CqtKernel<T> {
    pub freqs: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub window_lengths: Vec<usize>,
    pub ratio: f64,
    pub q: f64,
    /// Per bin: `(fft_bin, coef for X[f], coef for conj(X[f]))`.
    pub taps: Vec<Vec<(usize, Complex<T>, Complex<T>)>>,
}

impl<T: Scalar> CqtKernel<T> {
    pub fn new(cfg: &TfrConfig) -> Self {
        let n = cfg.n_filters;
        let nfft = cfg.n_fft;
        let ratio = (cfg.f_max / cfg.f_min).powf(1.0 / (n - 1) as f64);
        let q = 1.0 / (ratio - 1.0);
        let freqs: Vec<f64> = (0..n).map(|k| cfg.f_min * ratio.powi(k as i32)).collect();
        let bandwidths: Vec<f64> = freqs.iter().map(|f| f * (ratio - 1.0)).collect();
        let frame_win: Vec<f64> = analysis_window::<f64>(nfft, cfg.win_len);
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(nfft);
        let mut taps = Vec::with_capacity(n);
        let mut window_lengths = Vec::with_capacity(n);
        let half = nfft / 2;
        for &fk in &freqs {
            let nk = ((q * cfg.sample_rate / fk).round() as usize).clamp(2, cfg.win_len);
            window_lengths.push(nk);
            let wk = centered_hann(nfft, nk);
            let norm: f64 = wk.iter().zip(&frame_win).map(|(a, b)| a * b).sum();
            let mut buf: Vec<Complex<f64>> = (0..nfft)
                .map(|i| {
                    let ph = -2.0 * std::f64::consts::PI * fk * (i as f64 - half as f64) / cfg.sample_rate;
                    Complex::from_polar(wk[i] / norm, ph)
                })
                .collect();
            ifft.process(&mut buf);
            buf.iter_mut().for_each(|c| *c /= nfft as f64);
            let mx = buf.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let thresh = mx * 1e-7;
            let mut row = Vec::new();
            for f in 0..=half {
                let pos = buf[f];
                let neg = if f == 0 || f == half { Complex::new(0.0, 0.0) } else { buf[nfft - f] };
                if pos.norm() > thresh || neg.norm() > thresh {
                    row.push((f, Complex::new(s(pos.re), s(pos.im)), Complex::new(s(neg.re), s(neg.im))));
                }
            }
            taps.push(row);
        }
        CqtKernel { freqs, bandwidths, window_lengths, ratio, q, taps }
    }

    /// Complex response `[n_bins, frames]`.
    pub fn response(&self, stft: &StftFrames<T>) -> Vec<Complex<T>> {
        let n = self.freqs.len();
        let mut out = vec![Complex::new(T::zero(), T::zero()); n * stft.frames];
        for t in 0..stft.frames {
            let fr = stft.frame(t);
            for (k, row) in self.taps.iter().enumerate() {
                let mut acc = Complex::new(T::zero(), T::zero());
                for &(f, pos, neg) in row {
                    acc = acc + pos * fr[f] + neg * fr[f].conj();
                }
                out[k * stft.frames + t] = acc;
            }
        }
        out
    }

    /// `[n_bins, frames]` power.
    pub fn power(&self, stft: &StftFrames<T>) -> Vec<T> {
        self.response(stft).iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Periodic Hann of length `len` placed symmetrically in `total` points.
pub(crate) fn centered_hann(total: usize, len: usize) -> Vec<f64> {
    let mut w = vec![0.0; total];
    let off = (total - len) / 2;
    for i in 0..len {
        w[off + i] = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos();
    }
    w
}

/// Normalized 3×F×T log-spectrogram stack (channel order mel, gammatone, CQT).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramStack<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> SpectrogramStack<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.shape().len() != 3 || tensor.dim(0) != 3 {
            return Err(Error::Shape(format!("spectrogram stack must be 3×F×T, got {:?}", tensor.shape())));
        }
        Ok(SpectrogramStack { tensor })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn bins(&self) -> usize {
        self.tensor.dim(1)
    }

    pub fn frames(&self) -> usize {
        self.tensor.dim(2)
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.bins() * self.frames();
        &self.tensor.data()[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, f: usize, t: usize) -> T {
        self.tensor.data()[(c * self.bins() + f) * self.frames() + t]
    }

    fn data_mut(&mut self) -> &mut [T] {
        self.tensor.data_mut()
    }
}

/// Concatenate three `[F, T]` channels.
pub fn stack_channels<T: Scalar>(s0: &[T], s1: &[T], s2: &[T], bins: usize, frames: usize) -> Result<SpectrogramStack<T>> {
    let n = bins * frames;
    if s0.len() != n || s1.len() != n || s2.len() != n {
        return Err(Error::Shape(format!(
            "channels must all be {bins}×{frames}, got {} / {} / {} elements",
            s0.len(),
            s1.len(),
            s2.len()
        )));
    }
    let mut data = Vec::with_capacity(3 * n);
    data.extend_from_slice(s0);
    data.extend_from_slice(s1);
    data.extend_from_slice(s2);
    SpectrogramStack::new(Tensor::from_vec(&[3, bins, frames], data)?)
}

pub const ROW_NORM_EPS: f64 = 1e-6;

/// Zero-mean, unit-std each (channel, frequency) row; constant rows become 0.
pub fn row_normalize<T: Scalar>(mut stack: SpectrogramStack<T>) -> SpectrogramStack<T> {
    let t = stack.frames();
    let tf = s::<T>(t as f64);
    let eps = s::<T>(ROW_NORM_EPS);
    for row in stack.data_mut().chunks_mut(t) {
        let mean = row.iter().copied().sum::<T>() / tf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / tf;
        let sd = var.sqrt();
        if sd <= s::<T>(1e-12) * (T::one() + mean.abs()) {
            row.iter_mut().for_each(|v| *v = T::zero());
        } else {
            row.iter_mut().for_each(|v| *v = (*v - mean) / (sd + eps));
        }
    }
    stack
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskAxis {
    Time,
    Frequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskTag {
    pub axis: MaskAxis,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    pub prob: f64,
    pub fraction: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig { prob: 0.5, fraction: 0.3 }
    }
}

/// Draw a mask decision: with probability `prob`, one contiguous band
/// covering `fraction` of a uniformly chosen axis.
pub fn draw_mask<R: Rng + ?Sized>(bins: usize, frames: usize, cfg: &MaskConfig, rng: &mut R) -> Option<MaskTag> {
    if !(rng.random::<f64>() < cfg.prob) {
        return None;
    }
    let axis = if rng.random::<bool>() { MaskAxis::Time } else { MaskAxis::Frequency };
    let extent = match axis {
        MaskAxis::Time => frames,
        MaskAxis::Frequency => bins,
    };
    let len = ((cfg.fraction * extent as f64).round() as usize).min(extent);
    let start = rng.random_range(0..=extent - len);
    Some(MaskTag { axis, start, len })
}

/// Zero the band described by `tag` in all three channels.
pub fn apply_mask<T: Scalar>(mut stack: SpectrogramStack<T>, tag: &MaskTag) -> SpectrogramStack<T> {
    let (f, t) = (stack.bins(), stack.frames());
    let data = stack.data_mut();
    for c in 0..3 {
        match tag.axis {
            MaskAxis::Time => {
                for r in 0..f {
                    let base = (c * f + r) * t;
                    data[base + tag.start..base + tag.start + tag.len].iter_mut().for_each(|v| *v = T::zero());
                }
            }
            MaskAxis::Frequency => {
                for r in tag.start..tag.start + tag.len {
                    let base = (c * f + r) * t;
                    data[base..base + t].iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
    }
    stack
}

/// Random spectrogram masking; returns the stack and the applied band.
pub fn spec_mask<T: Scalar, R: Rng + ?Sized>(
    stack: SpectrogramStack<T>,
    cfg: &MaskConfig,
    rng: &mut R,
) -> (SpectrogramStack<T>, Option<MaskTag>) {
    match draw_mask(stack.bins(), stack.frames(), cfg, rng) {
        Some(tag) => (apply_mask(stack, &tag), Some(tag)),
        None => (stack, None),
    }
}

pub const VTLP_RANGE: (f64, f64) = (0.8, 1.25);

/// Piecewise-linear frequency warp of an STFT.
///
/// `f ↦ α f` below the boundary `0.8·f_max·min(α,1)/α`, then linear up to
/// the Nyquist frequency. Each output bin takes the linearly interpolated
/// magnitude at the inverse-warped input position and the phase of the
/// nearest input bin.
pub fn vtlp_warp<T: Scalar>(stft: &StftFrames<T>, factor: f64, cfg: &TfrConfig) -> Result<StftFrames<T>> {
    if !(VTLP_RANGE.0..=VTLP_RANGE.1).contains(&factor) {
        return Err(Error::InvalidArgument(format!("warp factor {factor} outside [0.8, 1.25]")));
    }
    if factor == 1.0 {
        return Ok(stft.clone());
    }
    let nyq = cfg.sample_rate / 2.0;
    let boundary = 0.8 * cfg.f_max * factor.min(1.0) / factor;
    let warped_boundary = boundary * factor;
    // inverse warp: output frequency -> source frequency
    let inv = |fo: f64| -> f64 {
        if fo <= warped_boundary {
            fo / factor
        } else {
            boundary + (fo - warped_boundary) * (nyq - boundary) / (nyq - warped_boundary)
        }
    };
    let bins = stft.bins;
    let hz_per_bin = cfg.sample_rate / cfg.n_fft as f64;
    let mut out = vec![Complex::new(T::zero(), T::zero()); stft.data.len()];
    let src_pos: Vec<f64> = (0..bins).map(|b| (inv(b as f64 * hz_per_bin) / hz_per_bin).min((bins - 1) as f64)).collect();
    for t in 0..stft.frames {
        let fr = stft.frame(t);
        for (b, &p) in src_pos.iter().enumerate() {
            let lo = p.floor() as usize;
            let hi = (lo + 1).min(bins - 1);
            let w = s::<T>(p - lo as f64);
            let mag = fr[lo].norm() * (T::one() - w) + fr[hi].norm() * w;
            let near = if p - (lo as f64) < 0.5 { lo } else { hi };
            let ph = fr[near].arg();
            out[t * bins + b] = Complex::from_polar(mag, ph);
        }
    }
    Ok(StftFrames { bins, frames: stft.frames, data: out })
}

/// Shared STFT plan plus the three filterbanks; immutable after construction.
pub struct FeatureExtractor<T: Scalar> {
    pub cfg: TfrConfig,
    window: Vec<T>,
    fft: Arc<dyn Fft<T>>,
    pub mel: Filterbank<T>,
    pub gammatone: Filterbank<T>,
    pub cqt: CqtKernel<T>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(cfg: TfrConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.n_fft);
        Ok(FeatureExtractor {
            window: analysis_window(cfg.n_fft, cfg.win_len),
            fft,
            mel: Filterbank::mel(&cfg),
            gammatone: Filterbank::gammatone(&cfg),
            cqt: CqtKernel::new(&cfg),
            cfg,
        })
    }

    pub fn stft(&self, x: &[T]) -> Result<StftFrames<T>> {
        if x.is_empty() {
            return Err(Error::InvalidArgument("stft of empty signal".into()));
        }
        let frames = self.cfg.frames_for(x.len());
        let bins = self.cfg.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.cfg.n_fft];
        for t in 0..frames {
            let fr = frame_samples(x, t, &self.cfg);
            for ((b, &v), &w) in buf.iter_mut().zip(&fr).zip(&self.window) {
                *b = Complex::new(v * w, T::zero());
            }
            self.fft.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
        Ok(StftFrames { bins, frames, data })
    }

    pub fn mel_channel(&self, stft: &StftFrames<T>) -> Vec<T> {
        let mut m = self.mel.apply(&stft.power(), stft.frames);
        log_compress(&mut m, self.cfg.log_floor_db);
        m
    }

    pub fn gammatone_channel(&self, stft: &StftFrames<T>) -> Vec<T> {
        let mut m = self.gammatone.apply(&stft.power(), stft.frames);
        log_compress(&mut m, self.cfg.log_floor_db);
        m
    }

    pub fn cqt_channel(&self, stft: &StftFrames<T>) -> Vec<T> {
        let mut m = self.cqt.power(stft);
        log_compress(&mut m, self.cfg.log_floor_db);
        m
    }

    /// Un-normalized log stack for a signal, with optional frequency warp.
    pub fn log_stack(&self, x: &[T], vtlp: Option<f64>) -> Result<SpectrogramStack<T>> {
        let mut st = self.stft(x)?;
        if let Some(f) = vtlp {
            st = vtlp_warp(&st, f, &self.cfg)?;
        }
        let power = st.power();
        let mut s0 = self.mel.apply(&power, st.frames);
        let mut s1 = self.gammatone.apply(&power, st.frames);
        let mut s2 = self.cqt.power(&st);
        for ch in [&mut s0, &mut s1, &mut s2] {
            log_compress(ch, self.cfg.log_floor_db);
        }
        stack_channels(&s0, &s1, &s2, self.cfg.n_filters, st.frames)
    }

    /// Row-normalized stack: the model's input representation.
    pub fn features(&self, x: &[T], vtlp: Option<f64>) -> Result<SpectrogramStack<T>> {
        Ok(row_normalize(self.log_stack(x, vtlp)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tone(freq: f64, len: usize, sr: f64) -> Vec<f64> {
        (0..len).map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / sr).cos()).collect()
    }

    fn fx() -> FeatureExtractor<f64> {
        FeatureExtractor::new(TfrConfig::default()).unwrap()
    }

    fn argmax(x: &[f64]) -> usize {
        x.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0
    }

    fn column(m: &[f64], rows: usize, frames: usize, t: usize) -> Vec<f64> {
        (0..rows).map(|r| m[r * frames + t]).collect()
    }

    #[test]
    fn frame_count_follows_centered_formula() {
        let e = fx();
        for len in [1usize, 100, 511, 512, 1000, 12_345, 80_000] {
            let x = vec![0.1; len];
            assert_eq!(e.stft(&x).unwrap().frames, len / 128 + 1, "len {len}");
        }
        assert_eq!(TfrConfig::default().frames_for(80_000), 626);
    }

    #[test]
    fn zero_signal_gives_zero_stft() {
        let st = fx().stft(&vec![0.0; 80_000]).unwrap();
        assert_eq!((st.bins, st.frames), (513, 626));
        assert!(st.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn tone_peaks_at_expected_fft_bin() {
        let st = fx().stft(&tone(440.0, 80_000, 10_000.0)).unwrap();
        for t in [0, 100, 313, 625] {
            let mags: Vec<f64> = st.frame(t).iter().map(|c| c.norm()).collect();
            assert_eq!(argmax(&mags), 45, "frame {t}");
        }
    }

    #[test]
    fn mel_scale_values() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        assert!((hz_to_mel(700.0).unwrap() - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0).unwrap() - 781.17).abs() < 1e-2);
        assert!((hz_to_mel(3000.0).unwrap() - 1876.5).abs() < 0.1);
        assert!(hz_to_mel(-1.0).is_err());
        assert!((mel_to_hz(hz_to_mel(1234.5).unwrap()) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn mel_triangles_peak_at_one_with_positive_mass() {
        let fb = Filterbank::<f64>::mel(&TfrConfig::default());
        for i in 0..84 {
            let row = fb.row(i);
            assert!(row.iter().sum::<f64>() > 0.0, "row {i}");
            let mx = row.iter().copied().fold(0.0, f64::max);
            assert!((mx - 1.0).abs() < 1e-12, "row {i} peak {mx}");
        }
    }

    #[test]
    fn gammatone_peaks_near_center() {
        let cfg = TfrConfig::default();
        let fb = Filterbank::<f64>::gammatone(&cfg);
        let hz = cfg.bin_hz(1);
        for i in 0..84 {
            let pk = argmax(fb.row(i));
            assert!((pk as f64 - fb.centers_hz[i] / hz).abs() <= 1.0, "filter {i}");
        }
        assert!((fb.centers_hz[0] - 32.7).abs() < 1e-9 && (fb.centers_hz[83] - 3000.0).abs() < 1e-6);
    }

    #[test]
    fn cqt_has_constant_quality_factor() {
        let k = CqtKernel::<f64>::new(&TfrConfig::default());
        let q0 = k.freqs[0] / k.bandwidths[0];
        for i in 0..84 {
            assert!(((k.freqs[i] / k.bandwidths[i]) - q0).abs() / q0 < 1e-9);
        }
        assert!((k.freqs[83] - 3000.0).abs() < 1e-6);
    }

    #[test]
    fn each_channel_resolves_a_tone_on_its_own_filter() {
        let e = fx();
        let frames = 626;
        let cases: [(&str, f64, usize); 3] =
            [("mel", e.mel.centers_hz[40], 40), ("gammatone", e.gammatone.centers_hz[40], 40), ("cqt", e.cqt.freqs[20], 20)];
        for (name, f, row) in cases {
            let st = e.stft(&tone(f, 80_000, 10_000.0)).unwrap();
            let m = match name {
                "mel" => e.mel_channel(&st),
                "gammatone" => e.gammatone_channel(&st),
                _ => e.cqt_channel(&st),
            };
            // the CQT's long low-frequency windows reach into the reflected
            // padding at the final frames, so only full-support frames count there
            let span = if name == "cqt" { 4..frames - 4 } else { 0..frames };
            for t in span {
                assert_eq!(argmax(&column(&m, 84, frames, t)), row, "{name} frame {t}");
            }
        }
    }

    #[test]
    fn silent_input_normalizes_to_exact_zero() {
        let e = fx();
        let raw = e.log_stack(&vec![0.0; 80_000], None).unwrap();
        assert_eq!(raw.tensor().shape(), &[3, 84, 626]);
        assert!(raw.tensor().data().iter().all(|&v| (v - LOG_FLOOR_DB).abs() < 1e-9));
        let st = row_normalize(raw);
        assert!(st.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn log_floor_holds_and_output_is_finite() {
        let mut v: Vec<f64> = vec![0.0, 1e-30, 1.0, 1e6, 3.0];
        log_compress(&mut v, 80.0);
        assert!(v.iter().all(|x| x.is_finite() && *x >= LOG_FLOOR_DB));
        assert!((v[3] - 60.0).abs() < 1e-9);
        assert!(v.iter().all(|&x| x >= 60.0 - 80.0 - 1e-9));
    }

    #[test]
    fn channels_shift_with_hop_aligned_delay() {
        let e = fx();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = 7;
        let mut delayed = vec![0.0; h * 128];
        delayed.extend_from_slice(&base[..n - h * 128]);
        let a = e.log_stack(&base, None).unwrap();
        let b = e.log_stack(&delayed, None).unwrap();
        let frames = a.frames();
        for c in 0..3 {
            for f in 0..84 {
                for t in 10..frames - h - 10 {
                    let d = (a.get(c, f, t) - b.get(c, f, t + h)).abs();
                    assert!(d < 1e-4, "c{c} f{f} t{t} diff {d}");
                }
            }
        }
    }

    #[test]
    fn row_normalize_statistics() {
        let frames = 626;
        let mut data = vec![5.0; 3 * 84 * frames];
        for t in 0..frames {
            data[t] = t as f64;
        }
        let st = row_normalize(SpectrogramStack::new(Tensor::from_vec(&[3, 84, frames], data).unwrap()).unwrap());
        let row = &st.channel(0)[..frames];
        let mean = row.iter().sum::<f64>() / frames as f64;
        let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / frames as f64).sqrt();
        assert!(mean.abs() < 1e-5 && (sd - 1.0).abs() < 1e-5);
        assert!(st.channel(0)[frames..2 * frames].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stack_preserves_channel_order_and_checks_shape() {
        let n = 84 * 626;
        let st = stack_channels(&vec![1.0; n], &vec![2.0; n], &vec![3.0; n], 84, 626).unwrap();
        assert_eq!(st.tensor().shape(), &[3, 84, 626]);
        for c in 0..3 {
            let m = st.channel(c).iter().sum::<f64>() / n as f64;
            assert_eq!(m, (c + 1) as f64);
        }
        assert!(stack_channels(&vec![1.0; n], &vec![2.0; n - 1], &vec![3.0; n], 84, 626).is_err());
    }

    #[test]
    fn mask_counts() {
        let frames = 626;
        let base = SpectrogramStack::new(Tensor::full(&[3, 84, frames], 1.0)).unwrap();
        let never = MaskConfig { prob: 0.0, fraction: 0.3 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (same, tag) = spec_mask(base.clone(), &never, &mut rng);
        assert!(tag.is_none() && same == base);
        let tt = MaskTag { axis: MaskAxis::Time, start: 100, len: 188 };
        let m = apply_mask(base.clone(), &tt);
        let zero_cols = (0..frames).filter(|&t| (0..3).all(|c| (0..84).all(|f| m.get(c, f, t) == 0.0))).count();
        assert_eq!(zero_cols, 188);
        let always = MaskConfig { prob: 1.0, fraction: 0.3 };
        let mut seen = (false, false);
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let (m, tag) = spec_mask(base.clone(), &always, &mut r);
            let tag = tag.unwrap();
            match tag.axis {
                MaskAxis::Time => {
                    seen.0 = true;
                    assert_eq!(tag.len, 188);
                }
                MaskAxis::Frequency => {
                    seen.1 = true;
                    assert_eq!(tag.len, 25);
                    let zero_rows = (0..84).filter(|&f| (0..frames).all(|t| m.get(2, f, t) == 0.0)).count();
                    assert_eq!(zero_rows, 25);
                }
            }
        }
        assert!(seen.0 && seen.1);
    }

    #[test]
    fn vtlp_identity_peak_shift_and_energy() {
        let cfg = TfrConfig::default();
        let e = fx();
        let x = tone(cfg.bin_hz(100), 8_000, 10_000.0);
        let st = e.stft(&x).unwrap();
        assert_eq!(vtlp_warp(&st, 1.0, &cfg).unwrap(), st);
        assert!(vtlp_warp(&st, 1.3, &cfg).is_err());
        assert!(vtlp_warp(&st, 0.7, &cfg).is_err());
        let w = vtlp_warp(&st, 1.1, &cfg).unwrap();
        let mags: Vec<f64> = w.frame(30).iter().map(|c| c.norm()).collect();
        assert_eq!(argmax(&mags), 110);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise: Vec<f64> = (0..40_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let st = e.stft(&noise).unwrap();
        for f in [0.9, 1.1] {
            let w = vtlp_warp(&st, f, &cfg).unwrap();
            let ein: f64 = st.power().iter().sum();
            let eout: f64 = w.power().iter().sum();
            let db = 10.0 * (eout / ein).log10();
            assert!(db.abs() < 1.0, "factor {f}: {db} dB");
        }
    }
}
