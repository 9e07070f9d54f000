//! Resampling, fixed-length alignment and waveform augmentation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};

pub const TARGET_RATE: u32 = 10_000;
pub const TARGET_SECONDS: f64 = 8.0;
pub const TARGET_LEN: usize = 80_000;

/// Kaiser-windowed sinc resampler parameters.
const KAISER_BETA: f64 = 8.0;
const TAPS_AT_LOW_RATE: f64 = 64.0;
const CUTOFF_FRACTION: f64 = 0.945;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited rate conversion; output length is `round(len·dst/src)`.
pub fn resample<T: Scalar>(x: &[T], src_rate: f64, dst_rate: f64) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot resample an empty signal".into()));
    }
    if !(src_rate > 0.0 && dst_rate > 0.0) {
        return Err(Error::InvalidArgument(format!("sample rates must be positive, got {src_rate} -> {dst_rate}")));
    }
    if src_rate == dst_rate {
        return Ok(x.to_vec());
    }
    let out_len = ((x.len() as f64) * dst_rate / src_rate).round() as usize;
    let low = src_rate.min(dst_rate);
    // cutoff and half-width expressed in input-sample units
    let fc = CUTOFF_FRACTION * low / 2.0 / src_rate;
    let half = TAPS_AT_LOW_RATE / 2.0 * src_rate / low;
    let step = src_rate / dst_rate;
    let xf: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let n = x.len() as isize;
    let out = (0..out_len)
        .map(|j| {
            let p = j as f64 * step;
            let lo = ((p - half).ceil() as isize).max(0);
            let hi = ((p + half).floor() as isize).min(n - 1);
            let (mut acc, mut wsum) = (0.0, 0.0);
            for i in lo..=hi {
                let d = i as f64 - p;
                let h = 2.0 * fc * sinc(2.0 * fc * d) * kaiser(d / half);
                acc += h * xf[i as usize];
                wsum += h;
            }
            s(if wsum.abs() > 1e-12 { acc / wsum } else { acc })
        })
        .collect();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AugTag {
    Noise { snr_db: f64 },
    Shift { samples: i64 },
    Stretch { factor: f64 },
    Vtlp { factor: f64 },
}

/// Fixed-length audio at the working rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedAudio<T> {
    pub samples: Vec<T>,
    pub rate: u32,
    pub source_id: String,
    pub aug_applied: Vec<AugTag>,
}

impl<T: Scalar> AlignedAudio<T> {
    /// Frequency-warp factor requested from the spectrogram stage, if any.
    pub fn vtlp_factor(&self) -> Option<f64> {
        self.aug_applied.iter().find_map(|t| match t {
            AugTag::Vtlp { factor } => Some(*factor),
            _ => None,
        })
    }
}

/// Where one piece of the aligned output came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub src_start: usize,
    pub out_start: usize,
    pub len: usize,
    /// Leading samples blended with the previous segment.
    pub crossfade: usize,
}

pub const MIN_CROP_S: f64 = 0.5;
pub const CROSSFADE_S: f64 = 0.01;

/// Fit `x` to exactly `target` samples.
///
/// Longer input keeps its first `target` samples. Shorter input is the
/// whole source followed by random contiguous crops of it, each at least
/// `MIN_CROP_S` long where the source allows, joined by a short linear
/// crossfade.
pub fn align_with_plan<T: Scalar, R: Rng + ?Sized>(
    x: &[T],
    rate: u32,
    target: usize,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<Segment>)> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cannot align an empty signal".into()));
    }
    let l = x.len();
    if l >= target {
        return Ok((x[..target].to_vec(), vec![Segment { src_start: 0, out_start: 0, len: target, crossfade: 0 }]));
    }
    let min_crop = ((MIN_CROP_S * rate as f64).round() as usize).clamp(1, l);
    let xfade = ((CROSSFADE_S * rate as f64).round() as usize).min(min_crop / 4);
    let mut out = Vec::with_capacity(target + l);
    out.extend_from_slice(x);
    let mut plan = vec![Segment { src_start: 0, out_start: 0, len: l, crossfade: 0 }];
    while out.len() < target {
        let remaining = target - out.len();
        let crop = rng.random_range(min_crop..=l).min(remaining + xfade);
        let start = rng.random_range(0..=l - crop);
        let piece = &x[start..start + crop];
        let out_start = out.len() - xfade;
        for (i, &v) in piece[..xfade].iter().enumerate() {
            let w = s::<T>((i + 1) as f64 / (xfade + 1) as f64);
            let o = &mut out[out_start + i];
            *o = *o * (T::one() - w) + v * w;
        }
        out.extend_from_slice(&piece[xfade..]);
        plan.push(Segment { src_start: start, out_start, len: crop, crossfade: xfade });
    }
    out.truncate(target);
    Ok((out, plan))
}

pub fn align_length<T: Scalar, R: Rng + ?Sized>(x: &[T], source_id: &str, rng: &mut R) -> Result<AlignedAudio<T>> {
    let (samples, _) = align_with_plan(x, TARGET_RATE, TARGET_LEN, rng)?;
    Ok(AlignedAudio { samples, rate: TARGET_RATE, source_id: source_id.to_string(), aug_applied: Vec::new() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub prob: f64,
    pub noise_snr_db_range: (f64, f64),
    pub shift_s_max: f64,
    pub stretch_range: (f64, f64),
    pub vtlp_range: (f64, f64),
    /// Master switch for the additive-noise augmentation.
    pub noise_enabled: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            prob: 0.5,
            noise_snr_db_range: (15.0, 30.0),
            shift_s_max: 1.0,
            stretch_range: (0.9, 1.1),
            vtlp_range: (0.9, 1.1),
            noise_enabled: true,
        }
    }
}

/// Augmentations chosen once per batch and applied to all its members.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentPlan {
    pub noise_snr_db: Option<f64>,
    pub shift: Option<i64>,
    pub stretch: Option<f64>,
    pub vtlp: Option<f64>,
}

impl AugmentPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, rate: u32, rng: &mut R) -> Self {
        let coin = |r: &mut R| r.random::<f64>() < cfg.prob;
        let uni = |r: &mut R, (a, b): (f64, f64)| if b > a { r.random_range(a..b) } else { a };
        let noise = coin(rng);
        let noise_snr_db = noise.then(|| uni(rng, cfg.noise_snr_db_range)).filter(|_| cfg.noise_enabled);
        let shift = coin(rng).then(|| {
            let m = (cfg.shift_s_max * rate as f64).round() as i64;
            rng.random_range(-m..=m)
        });
        let stretch = coin(rng).then(|| uni(rng, cfg.stretch_range));
        let vtlp = coin(rng).then(|| uni(rng, cfg.vtlp_range));
        AugmentPlan { noise_snr_db, shift, stretch, vtlp }
    }
}

pub fn circular_shift<T: Copy>(x: &[T], k: i64) -> Vec<T> {
    let n = x.len() as i64;
    (0..n).map(|i| x[(i - k).rem_euclid(n) as usize]).collect()
}

/// Add white Gaussian noise at the given SNR relative to the signal power.
pub fn add_noise<T: Scalar, R: Rng + ?Sized>(x: &[T], snr_db: f64, rng: &mut R) -> Vec<T> {
    let p = x.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / x.len().max(1) as f64;
    let sd = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    x.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + s::<T>(sd * z)
        })
        .collect()
}

/// Apply a batch plan to one aligned signal.
pub fn apply_plan<T: Scalar, R: Rng + ?Sized>(
    audio: &AlignedAudio<T>,
    plan: &AugmentPlan,
    rng: &mut R,
) -> Result<AlignedAudio<T>> {
    let mut x = audio.samples.clone();
    let mut tags = audio.aug_applied.clone();
    let n = x.len();
    if let Some(f) = plan.stretch {
        // playing at rate·f and re-sampling to rate shortens by 1/f
        let y = resample(&x, audio.rate as f64 * f, audio.rate as f64)?;
        x = align_with_plan(&y, audio.rate, n, rng)?.0;
        tags.push(AugTag::Stretch { factor: f });
    }
    if let Some(k) = plan.shift {
        x = circular_shift(&x, k);
        tags.push(AugTag::Shift { samples: k });
    }
    if let Some(snr) = plan.noise_snr_db {
        x = add_noise(&x, snr, rng);
        tags.push(AugTag::Noise { snr_db: snr });
    }
    if let Some(f) = plan.vtlp {
        tags.push(AugTag::Vtlp { factor: f });
    }
    Ok(AlignedAudio { samples: x, rate: audio.rate, source_id: audio.source_id.clone(), aug_applied: tags })
}

/// Draw one plan for the batch and apply it to every member, in order.
pub fn augment_batch<T: Scalar, R: Rng + ?Sized>(
    batch: &[AlignedAudio<T>],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<AlignedAudio<T>>, AugmentPlan)> {
    let rate = batch.first().map(|a| a.rate).unwrap_or(TARGET_RATE);
    let plan = AugmentPlan::draw(cfg, rate, rng);
    let out = batch.iter().map(|a| apply_plan(a, &plan, rng)).collect::<Result<_>>()?;
    Ok((out, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn tone(f: f64, sr: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / sr).sin()).collect()
    }

    fn spectrum(x: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..x.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    #[test]
    fn resample_lengths_and_identity() {
        let x = vec![0.25f64; 44_100];
        assert_eq!(resample(&x, 44_100.0, 10_000.0).unwrap().len(), 10_000);
        assert_eq!(resample(&x[..1234], 4_000.0, 10_000.0).unwrap().len(), 3085);
        let y = tone(300.0, 10_000.0, 5000);
        assert_eq!(resample(&y, 10_000.0, 10_000.0).unwrap(), y);
        assert!(resample::<f64>(&[], 44_100.0, 10_000.0).is_err());
        assert!(resample(&y, 0.0, 10_000.0).is_err());
    }

    #[test]
    fn resampled_tone_keeps_its_frequency() {
        let y = resample(&tone(1000.0, 44_100.0, 44_100), 44_100.0, 10_000.0).unwrap();
        let sp = spectrum(&y);
        let peak = sp.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        // 10000-point FFT at 10 kHz: 1 Hz per bin
        assert!((peak as f64 - 1000.0).abs() < 1.0, "peak at {peak}");
    }

    #[test]
    fn content_above_output_nyquist_is_suppressed() {
        let x = tone(7000.0, 44_100.0, 44_100);
        let y = resample(&x, 44_100.0, 10_000.0).unwrap();
        let py = y[200..9800].iter().map(|v| v * v).sum::<f64>() / 9600.0;
        assert!(10.0 * (py / 0.5).log10() < -60.0, "alias power {py}");
    }

    #[test]
    fn align_truncates_or_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let long: Vec<f64> = (0..162_000).map(|i| i as f64).collect();
        let a = align_length(&long, "x", &mut rng).unwrap();
        assert_eq!(a.samples, long[..80_000]);
        let exact: Vec<f64> = (0..80_000).map(|i| (i as f64).sin()).collect();
        let b = align_length(&exact, "x", &mut rng).unwrap();
        assert_eq!(b.samples, exact);
        let again = align_length(&b.samples, "x", &mut rng).unwrap();
        assert_eq!(again.samples, b.samples);
        assert!(align_length::<f64, _>(&[], "x", &mut rng).is_err());
    }

    #[test]
    fn padded_pieces_are_verbatim_source_crops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let src: Vec<f64> = (0..27_000).map(|i| ((i * 7919) % 10007) as f64 / 10007.0 - 0.5).collect();
        let (out, plan) = align_with_plan(&src, 10_000, 80_000, &mut rng).unwrap();
        assert_eq!(out.len(), 80_000);
        assert!(plan.len() >= 3);
        for (i, seg) in plan.iter().enumerate() {
            // the tail is blended into the next segment's crossfade
            let end = plan.get(i + 1).map_or(80_000, |n| n.out_start);
            let body = &out[seg.out_start + seg.crossfade..end];
            let from = &src[seg.src_start + seg.crossfade..seg.src_start + seg.crossfade + body.len()];
            let dot: f64 = body.iter().zip(from).map(|(a, b)| a * b).sum();
            let na = body.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb = from.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((dot / (na * nb) - 1.0).abs() < 1e-12, "segment {seg:?}");
            assert_eq!(body, from);
            if i > 0 && i + 1 < plan.len() {
                assert!(seg.len >= 5000, "crop shorter than 0.5 s: {seg:?}");
            }
        }
    }

    #[test]
    fn tiny_inputs_still_align() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1usize, 3, 101, 4999] {
            let src: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let a = align_length(&src, "t", &mut rng).unwrap();
            assert_eq!(a.samples.len(), 80_000);
            assert!(a.samples.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn empty_plan_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = AlignedAudio { samples: tone(200.0, 1e4, 80_000), rate: 10_000, source_id: "a".into(), aug_applied: vec![] };
        let b = apply_plan(&a, &AugmentPlan::none(), &mut rng).unwrap();
        assert_eq!(a, b);
        let never = AugmentConfig { prob: 0.0, ..Default::default() };
        let (out, plan) = augment_batch(&[a.clone(), a.clone()], &never, &mut rng).unwrap();
        assert_eq!(plan, AugmentPlan::none());
        assert!(out.iter().all(|o| o == &a && o.aug_applied.is_empty()));
    }

    #[test]
    fn shift_peaks_at_its_lag() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..80_000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = AlignedAudio { samples: x.clone(), rate: 10_000, source_id: "a".into(), aug_applied: vec![] };
        let plan = AugmentPlan { shift: Some(4000), ..Default::default() };
        let y = apply_plan(&a, &plan, &mut rng).unwrap().samples;
        let corr = |lag: usize| (0..80_000).map(|i| x[i] * y[(i + lag) % 80_000]).sum::<f64>();
        let best = (3990..4010).max_by(|&p, &q| corr(p).partial_cmp(&corr(q)).unwrap()).unwrap();
        assert_eq!(best, 4000);
        assert!(corr(4000) > 10.0 * corr(1234).abs());
    }

    #[test]
    fn noise_is_white_at_requested_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = tone(500.0, 1e4, 80_000);
        let y = add_noise(&x, 20.0, &mut rng);
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let ps = x.iter().map(|v| v * v).sum::<f64>();
        let pn = d.iter().map(|v| v * v).sum::<f64>();
        assert!((10.0 * (ps / pn).log10() - 20.0).abs() < 0.2);
        let sp = spectrum(&d);
        let bands: Vec<f64> = sp[1..].chunks(sp.len() / 16).take(16).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let mean = bands.iter().sum::<f64>() / bands.len() as f64;
        for b in bands {
            assert!((10.0 * (b / mean).log10()).abs() < 3.0);
        }
    }

    #[test]
    fn batch_shares_one_plan_and_is_reproducible() {
        let cfg = AugmentConfig { prob: 1.0, ..Default::default() };
        let a = AlignedAudio { samples: tone(300.0, 1e4, 80_000), rate: 10_000, source_id: "a".into(), aug_applied: vec![] };
        let batch = vec![a.clone(), a.clone(), a];
        let run = |seed| augment_batch(&batch, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (o1, p1) = run(11);
        let (o2, p2) = run(11);
        assert_eq!(p1, p2);
        assert_eq!(o1, o2);
        for o in &o1 {
            assert_eq!(o.samples.len(), 80_000);
            assert!(o.samples.iter().all(|v| v.is_finite()));
            assert_eq!(o.aug_applied.len(), 4);
            assert_eq!(o.aug_applied, o1[0].aug_applied);
        }
    }

    #[test]
    fn kaiser_window_endpoints() {
        assert!((kaiser(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(kaiser(1.0), 0.0);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
    }
}
