//! Group-level mixing between batch members and the contrastive objective
//! that ties a mixed sample's global feature to its two sources.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub beta_a: f64,
    pub beta_b: f64,
    pub tau: f64,
    pub per_sample_lambda: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig { beta_a: 2.0, beta_b: 2.0, tau: 0.1, per_sample_lambda: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixPlan {
    /// Mixing weight of each sample's own groups.
    pub lambda: Vec<f64>,
    pub donor: Vec<usize>,
    /// Sorted group positions taken from the donor, per sample.
    pub replaced: Vec<Vec<usize>>,
    pub n_groups: usize,
}

pub fn replaced_count(lambda: f64, n_groups: usize) -> usize {
    (((1.0 - lambda) * n_groups as f64).round() as usize).min(n_groups)
}

impl MixPlan {
    /// Plan with explicit per-sample weights.
    pub fn with_lambdas<R: Rng + ?Sized>(lambda: Vec<f64>, n_groups: usize, rng: &mut R) -> Result<Self> {
        let b = lambda.len();
        if lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidArgument("mixing weight must lie in [0, 1]".into()));
        }
        if b < 2 && lambda.iter().any(|&l| l < 1.0) {
            return Err(Error::InvalidArgument("group mixing needs at least two samples in the batch".into()));
        }
        let mut donor = Vec::with_capacity(b);
        let mut replaced = Vec::with_capacity(b);
        for (i, &l) in lambda.iter().enumerate() {
            let m = if b < 2 {
                i
            } else {
                let r = rng.random_range(0..b - 1);
                if r >= i {
                    r + 1
                } else {
                    r
                }
            };
            donor.push(m);
            let mut idx = sample(rng, n_groups, replaced_count(l, n_groups)).into_vec();
            idx.sort_unstable();
            replaced.push(idx);
        }
        Ok(MixPlan { lambda, donor, replaced, n_groups })
    }

    pub fn with_lambda<R: Rng + ?Sized>(lambda: f64, batch: usize, n_groups: usize, rng: &mut R) -> Result<Self> {
        Self::with_lambdas(vec![lambda; batch], n_groups, rng)
    }

    /// Draw weights from `Beta(a, b)`: one per batch, or one per sample.
    pub fn draw<R: Rng + ?Sized>(cfg: &MixConfig, batch: usize, n_groups: usize, rng: &mut R) -> Result<Self> {
        let beta = Beta::new(cfg.beta_a, cfg.beta_b)
            .map_err(|e| Error::Config(format!("mix beta parameters: {e}")))?;
        let lambda = if cfg.per_sample_lambda {
            (0..batch).map(|_| beta.sample(rng)).collect()
        } else {
            vec![beta.sample(rng); batch]
        };
        Self::with_lambdas(lambda, n_groups, rng)
    }

    pub fn identity(batch: usize, n_groups: usize) -> Self {
        MixPlan {
            lambda: vec![1.0; batch],
            donor: (0..batch).map(|i| if batch > 1 { (i + 1) % batch } else { i }).collect(),
            replaced: vec![Vec::new(); batch],
            n_groups,
        }
    }

    pub fn batch(&self) -> usize {
        self.lambda.len()
    }

    /// For every mixed row `b·N_g + g`, the row of the source batch it copies.
    pub fn source_rows(&self) -> Vec<usize> {
        let n = self.n_groups;
        let mut rows: Vec<usize> = (0..self.batch() * n).collect();
        for (i, idx) in self.replaced.iter().enumerate() {
            for &g in idx {
                rows[i * n + g] = self.donor[i] * n + g;
            }
        }
        rows
    }
}

/// Mix row-major group features `[B·N_g, D]`.
pub fn group_mix<T: Copy>(features: &[T], d: usize, plan: &MixPlan) -> Result<Vec<T>> {
    if features.len() != plan.batch() * plan.n_groups * d {
        return Err(Error::Shape(format!(
            "expected {}×{}×{d} group features, got {} values",
            plan.batch(),
            plan.n_groups,
            features.len()
        )));
    }
    let mut out = Vec::with_capacity(features.len());
    for r in plan.source_rows() {
        out.extend_from_slice(&features[r * d..(r + 1) * d]);
    }
    Ok(out)
}

/// `-(1/B) Σ_i [λ_i h_iᵀz_i + (1-λ_i) h_iᵀz_{m_i}] / τ` on already
/// normalized rows `[B, D]`.
pub fn contrastive_loss<T: Scalar>(h: &[T], z: &[T], d: usize, plan: &MixPlan, tau: f64) -> Result<T> {
    if tau <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let b = plan.batch();
    let dot = |i: usize, j: usize| (0..d).map(|t| h[i * d + t] * z[j * d + t]).sum::<T>();
    let mut acc = T::zero();
    for i in 0..b {
        let l = s::<T>(plan.lambda[i]);
        acc += l * dot(i, i) + (T::one() - l) * dot(i, plan.donor[i]);
    }
    Ok(-acc / s::<T>(tau * b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feats(b: usize, n: usize, d: usize) -> Vec<f64> {
        (0..b * n * d).map(|i| i as f64).collect()
    }

    #[test]
    fn identity_and_full_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = feats(3, 41, 4);
        let keep = MixPlan::with_lambda(1.0, 3, 41, &mut rng).unwrap();
        assert_eq!(group_mix(&x, 4, &keep).unwrap(), x);
        let all = MixPlan::with_lambda(0.0, 2, 41, &mut rng).unwrap();
        assert_eq!(all.donor, vec![1, 0]);
        let y = group_mix(&feats(2, 41, 4), 4, &all).unwrap();
        assert_eq!(&y[..41 * 4], &feats(2, 41, 4)[41 * 4..]);
    }

    #[test]
    fn replacement_counts_and_donors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MixPlan::with_lambda(0.7, 6, 41, &mut rng).unwrap();
        for (i, r) in p.replaced.iter().enumerate() {
            assert_eq!(r.len(), 12);
            assert_ne!(p.donor[i], i);
            assert!(r.windows(2).all(|w| w[0] < w[1]) && r.iter().all(|&g| g < 41));
        }
        let x = feats(6, 41, 2);
        let y = group_mix(&x, 2, &p).unwrap();
        for i in 0..6 {
            for g in 0..41 {
                let src = if p.replaced[i].contains(&g) { p.donor[i] } else { i };
                assert_eq!(y[(i * 41 + g) * 2], x[(src * 41 + g) * 2]);
            }
        }
    }

    #[test]
    fn single_sample_cannot_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(MixPlan::with_lambda(0.5, 1, 10, &mut rng).is_err());
        assert!(MixPlan::with_lambda(1.0, 1, 10, &mut rng).is_ok());
        assert!(MixPlan::with_lambda(1.5, 4, 10, &mut rng).is_err());
    }

    #[test]
    fn beta_draws_share_or_split_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shared = MixPlan::draw(&MixConfig::default(), 5, 41, &mut rng).unwrap();
        assert!(shared.lambda.windows(2).all(|w| w[0] == w[1]));
        let cfg = MixConfig { per_sample_lambda: true, ..Default::default() };
        let split = MixPlan::draw(&cfg, 5, 41, &mut rng).unwrap();
        assert!(split.lambda.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn loss_worked_examples() {
        let one = MixPlan::identity(1, 4);
        assert!((contrastive_loss::<f64>(&[1.0, 0.0], &[1.0, 0.0], 2, &one, 0.1).unwrap() + 10.0).abs() < 1e-12);
        // both samples see similarity 0.8 to themselves and 0.4 to their donor
        let two = MixPlan { lambda: vec![0.5, 0.5], donor: vec![1, 0], replaced: vec![vec![], vec![]], n_groups: 1 };
        let y = 0.4 / 3.0;
        let h = [0.8, 0.6, 0.4, (0.8 - 0.16) / y];
        let z = [1.0, 0.0, 0.4, y];
        let l: f64 = contrastive_loss(&h, &z, 2, &two, 1.0).unwrap();
        assert!((l + 0.6).abs() < 1e-12, "{l}");
        let orth = contrastive_loss::<f64>(&[0.0, 1.0], &[1.0, 0.0], 2, &one, 0.1).unwrap();
        assert_eq!(orth, 0.0);
        assert!(contrastive_loss(&h, &z, 2, &two, 0.0).is_err());
    }
}
