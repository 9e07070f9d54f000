//! Clustering algebra on plain buffers: Student-t soft assignment, the
//! sharpened target distribution, KL divergence, soft cosine similarity and
//! k-means++ centroid seeding.
//!
//! The differentiable counterparts used in training live on
//! [`crate::nn::Graph`]; these functions are the reference semantics and are
//! also used for the non-differentiated pieces of a training step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{sq_dists, student_t_from_dists};
use crate::scalar::{s, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// `S = I`, not learnable: plain cosine similarity.
    Identity,
    /// `S = AᵀA + εI` with learnable `A`.
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub alpha_dof: f64,
    pub sim_mode: SimMode,
    /// Batches between target-distribution refreshes; 1 refreshes every batch.
    pub p_update_interval: usize,
    /// Reconstruction warm-up epochs before centroid initialization.
    pub warmup_epochs: usize,
    /// Block the clustering loss from reaching the group encoder.
    pub stop_grad_at_groups: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k: 5,
            alpha_dof: 1.0,
            sim_mode: SimMode::Learned,
            p_update_interval: 1,
            warmup_epochs: 0,
            stop_grad_at_groups: false,
        }
    }
}

pub const SIM_EPS: f64 = 1e-4;

/// Row-stochastic `[n, k]` assignment of `e: [n, d]` to `mu: [k, d]`.
pub fn soft_assign<T: Scalar>(e: &[T], mu: &[T], d: usize, alpha: T) -> Vec<T> {
    let (n, k) = (e.len() / d, mu.len() / d);
    student_t_from_dists(&sq_dists(e, mu, n, k, d), n, k, alpha)
}

pub fn hard_assign<T: Scalar>(q: &[T], k: usize) -> Vec<usize> {
    q.chunks(k)
        .map(|row| row.iter().enumerate().fold((0, T::neg_infinity()), |b, (j, &v)| if v > b.1 { (j, v) } else { b }).0)
        .collect()
}

/// `p_ij ∝ q_ij² / f_j` with `f_j = Σ_i q_ij`. Clusters with zero frequency
/// contribute nothing; their indices are returned alongside `p`.
pub fn target_distribution<T: Scalar>(q: &[T], k: usize) -> (Vec<T>, Vec<usize>) {
    let mut f = vec![T::zero(); k];
    for row in q.chunks(k) {
        for (fj, &v) in f.iter_mut().zip(row) {
            *fj += v;
        }
    }
    let absent: Vec<usize> = (0..k).filter(|&j| f[j] <= T::zero()).collect();
    if !absent.is_empty() {
        log::warn!("target distribution: clusters {absent:?} have zero frequency");
    }
    let mut p = vec![T::zero(); q.len()];
    for (prow, qrow) in p.chunks_mut(k).zip(q.chunks(k)) {
        for j in 0..k {
            if f[j] > T::zero() {
                prow[j] = qrow[j] * qrow[j] / f[j];
            }
        }
        let z: T = prow.iter().copied().sum();
        if z > T::zero() {
            prow.iter_mut().for_each(|v| *v /= z);
        }
    }
    (p, absent)
}

/// `Σ p ln(p/q)`, with `0 ln 0 = 0`.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter().zip(q).filter(|(&a, _)| a > T::zero()).map(|(&a, &b)| a * (a / b).ln()).sum()
}

fn bilinear<T: Scalar>(x: &[T], sim: &[T], y: &[T]) -> T {
    let d = x.len();
    (0..d).map(|p| x[p] * (0..d).map(|q| sim[p * d + q] * y[q]).sum::<T>()).sum()
}

/// `|xᵀSy| / sqrt((xᵀSx)(yᵀSy))`, defined as 0 when either side is zero.
pub fn abs_soft_cos<T: Scalar>(x: &[T], y: &[T], sim: &[T]) -> T {
    let (xx, yy) = (bilinear(x, sim, x), bilinear(y, sim, y));
    if xx <= T::zero() || yy <= T::zero() {
        return T::zero();
    }
    let v = bilinear(x, sim, y).abs() / (xx * yy).sqrt();
    v.min(T::one())
}

/// Sum over distinct present pairs `i < j` of `abs_soft_cos(c_i, c_j)`.
pub fn pairwise_soft_cos<T: Scalar>(c: &[T], d: usize, sim: &[T], present: &[bool]) -> T {
    let k = c.len() / d;
    let mut acc = T::zero();
    for i in 0..k {
        for j in i + 1..k {
            if present[i] && present[j] {
                acc += abs_soft_cos(&c[i * d..(i + 1) * d], &c[j * d..(j + 1) * d], sim);
            }
        }
    }
    acc
}

/// Mean over present pairs, or `None` when fewer than two are present.
pub fn mean_pairwise_soft_cos<T: Scalar>(c: &[T], d: usize, sim: &[T], present: &[bool]) -> Option<T> {
    let m = present.iter().filter(|&&p| p).count();
    if m < 2 {
        return None;
    }
    let pairs = s::<T>((m * (m - 1) / 2) as f64);
    Some(pairwise_soft_cos(c, d, sim, present) / pairs)
}

/// `AᵀA + εI`.
pub fn spd_from_factor<T: Scalar>(a: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * d];
    T::gemm(d, d, d, T::one(), a, true, a, false, T::zero(), &mut out);
    for i in 0..d {
        out[i * d + i] += s::<T>(SIM_EPS);
    }
    out
}

pub const LLOYD_ITERATIONS: usize = 20;

/// k-means++ seeding followed by Lloyd iterations. `points: [n, d]`.
pub fn init_centroids<T: Scalar>(points: &[T], d: usize, k: usize, seed: u64) -> Result<Vec<T>> {
    let n = points.len() / d;
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let mut distinct: Vec<usize> = Vec::new();
    for i in 0..n {
        if distinct.len() >= k {
            break;
        }
        if distinct.iter().all(|&j| row(i) != row(j)) {
            distinct.push(i);
        }
    }
    if k == 0 || distinct.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need at least {k} distinct embeddings to seed {k} clusters, found {}",
            distinct.len()
        )));
    }
    let sq = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| (x - y).powi(2)).sum::<T>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<T> = row(rng.random_range(0..n)).to_vec();
    let mut best = vec![T::infinity(); n];
    while centers.len() < k * d {
        let last = &centers[centers.len() - d..];
        for i in 0..n {
            best[i] = best[i].min(sq(row(i), last));
        }
        let total: f64 = best.iter().map(|v| v.as_f64()).sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, b) in best.iter().enumerate() {
                u -= b.as_f64();
                if u <= 0.0 && b.as_f64() > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            distinct[centers.len() / d]
        };
        centers.extend_from_slice(row(pick));
    }
    let mut assign = vec![0usize; n];
    for _ in 0..LLOYD_ITERATIONS {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = (0..k)
                .map(|j| (j, sq(row(i), &centers[j * d..(j + 1) * d])))
                .fold((0, T::infinity()), |b, (j, v)| if v < b.1 { (j, v) } else { b })
                .0;
        }
        let mut sums = vec![T::zero(); k * d];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for t in 0..d {
                sums[a * d + t] += row(i)[t];
            }
        }
        for j in 0..k {
            // an emptied cluster keeps its previous centroid
            if counts[j] > 0 {
                for t in 0..d {
                    centers[j * d + t] = sums[j * d + t] / s::<T>(counts[j] as f64);
                }
            }
        }
    }
    Ok(centers)
}
