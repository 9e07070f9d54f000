//! Synthetic four-class lung-sound corpus for desk-scale runs.
//!
//! Every cycle carries band-limited breath noise under a slow breathing
//! envelope. Wheeze cycles add sustained tone bursts near 400 Hz, crackle
//! cycles add trains of short damped clicks, and "both" cycles add the two.
//! A faint white floor keeps every frequency band populated.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::io::write_wav;
use crate::scalar::{s, Scalar};
use crate::trainer::{Dataset, Example};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seconds: f64,
    pub rate: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_samples: 200, seconds: 8.0, rate: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct SynthSample<T> {
    pub id: String,
    pub label: Label,
    pub samples: Vec<T>,
}

const NOISE_BAND_HZ: (f64, f64) = (100.0, 1000.0);
/// Broadband sensor floor, so no frequency row is empty.
const FLOOR_RMS: f64 = 0.002;
const WHEEZE_HZ: f64 = 400.0;
const CLICK_HZ: (f64, f64) = (350.0, 650.0);
const CLICK_MS: (f64, f64) = (5.0, 15.0);

fn band_noise(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(StandardNormal.sample(rng), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (i, c) in buf.iter_mut().enumerate() {
        let f = i.min(n - i) as f64 * rate / n as f64;
        if f < NOISE_BAND_HZ.0 || f > NOISE_BAND_HZ.1 {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
    x.iter_mut().for_each(|v| *v /= rms);
    x
}

fn add_wheeze(x: &mut [f64], rate: f64, amp: f64, rng: &mut ChaCha8Rng) {
    let n = x.len();
    for _ in 0..rng.random_range(2..=4) {
        let len = (rng.random_range(0.3..1.0) * rate) as usize;
        let start = rng.random_range(0..n.saturating_sub(len).max(1));
        let f = WHEEZE_HZ * rng.random_range(0.97..1.03);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        for i in 0..len.min(n - start) {
            let env = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / len as f64).cos();
            x[start + i] += amp * env * (std::f64::consts::TAU * f * i as f64 / rate + phase).sin();
        }
    }
}

fn add_crackles(x: &mut [f64], rate: f64, amp: f64, rng: &mut ChaCha8Rng) {
    let n = x.len();
    for _ in 0..rng.random_range(3..=5) {
        let mut t = rng.random_range(0.1 * rate..(n as f64 - 0.8 * rate).max(0.2 * rate)) as usize;
        for _ in 0..rng.random_range(4..=10) {
            let dur = (rng.random_range(CLICK_MS.0..CLICK_MS.1) * 1e-3 * rate) as usize;
            let f = rng.random_range(CLICK_HZ.0..CLICK_HZ.1);
            let a = amp * rng.random_range(0.7..1.3);
            for i in 0..dur.min(n.saturating_sub(t)) {
                let u = i as f64 / dur as f64;
                let env = (1.0 - u) * (std::f64::consts::PI * u.min(0.2) / 0.4).sin();
                x[t + i] += a * env * (std::f64::consts::TAU * f * i as f64 / rate).sin();
            }
            t += dur + (rng.random_range(0.02..0.08) * rate) as usize;
            if t >= n {
                break;
            }
        }
    }
}

/// One cycle of the given class from its own seed.
pub fn synth_cycle(label: Label, cfg: &SynthConfig, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = cfg.rate as f64;
    let n = (cfg.seconds * rate).round() as usize;
    let gain = rng.random_range(0.5..1.5);
    let noise = band_noise(n, rate, &mut rng);
    let period = rng.random_range(3.0..5.0);
    let ph = rng.random_range(0.0..std::f64::consts::TAU);
    let mut x: Vec<f64> = noise
        .iter()
        .enumerate()
        .map(|(i, v)| 0.05 * v * (0.6 + 0.4 * (std::f64::consts::TAU * i as f64 / (period * rate) + ph).sin()))
        .collect();
    for v in x.iter_mut() {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v += FLOOR_RMS * n;
    }
    let (crackle, wheeze) = label.flags();
    if wheeze {
        add_wheeze(&mut x, rate, 0.1, &mut rng);
    }
    if crackle {
        add_crackles(&mut x, rate, 0.5, &mut rng);
    }
    x.iter_mut().for_each(|v| *v *= gain);
    x
}

/// Balanced corpus: sample `i` has class `i mod 4`.
pub fn generate<T: Scalar>(cfg: &SynthConfig) -> Vec<SynthSample<T>> {
    (0..cfg.n_samples)
        .map(|i| {
            let label = Label::ALL[i % 4];
            let seed = cfg.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(i as u64);
            SynthSample {
                id: format!("synth_{i:04}"),
                label,
                samples: synth_cycle(label, cfg, seed).into_iter().map(s).collect(),
            }
        })
        .collect()
}

pub fn to_dataset<T: Scalar>(samples: &[SynthSample<T>], rate: u32) -> Result<Dataset<T>> {
    let examples = samples
        .iter()
        .map(|sm| {
            Ok(Example {
                id: sm.id.clone(),
                label4: sm.label.index(),
                audio: crate::trainer::prepare_audio(&sm.samples, rate, &sm.id, 0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { examples })
}

/// Recording stem for synthetic sample `i`: one patient per four samples.
pub fn stem_for(i: usize) -> String {
    format!("{}_{}b1_Al_sc_Meditron", 100 + i / 4, 1 + i % 4)
}

/// Write samples as ICBHI-style recordings, one annotated cycle each.
pub fn write_icbhi_dir<T: Scalar>(dir: &Path, samples: &[SynthSample<T>], rate: u32) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::with_capacity(samples.len());
    for (i, sm) in samples.iter().enumerate() {
        let stem = stem_for(i);
        write_wav(&dir.join(format!("{stem}.wav")), &sm.samples, rate)?;
        let (c, w) = sm.label.flags();
        let dur = sm.samples.len() as f64 / rate as f64;
        let txt = format!("0.000\t{dur:.3}\t{}\t{}\n", u8::from(c), u8::from(w));
        let p = dir.join(format!("{stem}.txt"));
        std::fs::write(&p, txt).map_err(|e| Error::io(&p, e))?;
        stems.push(stem);
    }
    Ok(stems)
}
