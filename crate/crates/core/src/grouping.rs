//! Overlapping frame groups over a spectrogram stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tfr::SpectrogramStack;

pub const DEFAULT_GROUP_FRAMES: usize = 20;
pub const DEFAULT_OVERLAP: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupIndexPlan {
    pub t_frames: usize,
    pub g_frames: usize,
    pub stride: usize,
    pub n_groups: usize,
    pub starts: Vec<usize>,
}

pub fn plan_groups(t_frames: usize, g_frames: usize, stride: usize) -> Result<GroupIndexPlan> {
    if stride == 0 || stride >= g_frames || g_frames > t_frames {
        return Err(Error::InvalidArgument(format!(
            "group plan needs 0 < stride < group frames <= total frames (got T={t_frames}, G={g_frames}, stride={stride})"
        )));
    }
    let n_groups = (t_frames - g_frames) / stride + 1;
    let starts = (0..n_groups).map(|i| i * stride).collect();
    Ok(GroupIndexPlan { t_frames, g_frames, stride, n_groups, starts })
}

/// Plan from a group length and an overlap; stride is clamped to at least 1.
pub fn plan_with_overlap(t_frames: usize, g_frames: usize, overlap: usize) -> Result<GroupIndexPlan> {
    plan_groups(t_frames, g_frames, g_frames.saturating_sub(overlap).max(1))
}

/// Group tensor `[N_g, C, F, G]` for one stack.
pub fn slice_groups<T: Scalar>(stack: &SpectrogramStack<T>, plan: &GroupIndexPlan) -> Result<Tensor<T>> {
    let (f, t) = (stack.bins(), stack.frames());
    if t != plan.t_frames {
        return Err(Error::Shape(format!("stack has {t} frames, plan expects {}", plan.t_frames)));
    }
    let g = plan.g_frames;
    let src = stack.tensor().data();
    let mut out = Vec::with_capacity(plan.n_groups * 3 * f * g);
    for &s0 in &plan.starts {
        for row in 0..3 * f {
            out.extend_from_slice(&src[row * t + s0..row * t + s0 + g]);
        }
    }
    Tensor::from_vec(&[plan.n_groups, 3, f, g], out)
}

/// Frames `[0, starts[last] + G)` rebuilt from the first `stride` columns of
/// every group plus the tail of the last one. `[C, F, covered]`.
pub fn reconstruct<T: Scalar>(groups: &Tensor<T>, plan: &GroupIndexPlan) -> Vec<T> {
    let (c, f, g) = (groups.dim(1), groups.dim(2), groups.dim(3));
    let covered = plan.starts.last().map_or(0, |s| s + g);
    let mut out = vec![T::zero(); c * f * covered];
    let per_group = c * f * g;
    for (i, &s0) in plan.starts.iter().enumerate() {
        let take = if i + 1 == plan.n_groups { g } else { plan.stride };
        for row in 0..c * f {
            let src = &groups.data()[i * per_group + row * g..i * per_group + row * g + take];
            out[row * covered + s0..row * covered + s0 + take].copy_from_slice(src);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column_stack(frames: usize) -> SpectrogramStack<f64> {
        let mut d = Vec::with_capacity(3 * 84 * frames);
        for c in 0..3 {
            for f in 0..84 {
                for t in 0..frames {
                    d.push(t as f64 + 1000.0 * f as f64 + 1e6 * c as f64);
                }
            }
        }
        SpectrogramStack::new(Tensor::from_vec(&[3, 84, frames], d).unwrap()).unwrap()
    }

    #[test]
    fn plan_counts() {
        assert_eq!(plan_groups(626, 20, 15).unwrap().n_groups, 41);
        let single = plan_groups(20, 20, 15).unwrap();
        assert_eq!((single.n_groups, single.starts.clone()), (1, vec![0]));
        assert_eq!(plan_groups(626, 20, 5).unwrap().n_groups, 122);
        assert!(plan_groups(626, 20, 20).is_err());
        assert!(plan_groups(626, 20, 0).is_err());
        assert!(plan_groups(10, 20, 5).is_err());
        assert_eq!(plan_with_overlap(626, 2, 5).unwrap().stride, 1);
    }

    #[test]
    fn slices_start_on_stride_and_overlap() {
        let st = column_stack(626);
        let plan = plan_groups(626, 20, 15).unwrap();
        let g = slice_groups(&st, &plan).unwrap();
        assert_eq!(g.shape(), &[41, 3, 84, 20]);
        let per = 3 * 84 * 20;
        for i in 0..41 {
            assert_eq!(g.data()[i * per], 15.0 * i as f64);
        }
        for i in 0..40 {
            for row in 0..3 * 84 {
                let a = &g.data()[i * per + row * 20 + 15..i * per + row * 20 + 20];
                let b = &g.data()[(i + 1) * per + row * 20..(i + 1) * per + row * 20 + 5];
                assert_eq!(a, b);
            }
        }
        assert!(slice_groups(&column_stack(600), &plan).is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_is_exact(t in 20usize..200, g in 2usize..20, stride_off in 1usize..19) {
            let stride = stride_off.min(g - 1);
            let plan = plan_groups(t, g, stride).unwrap();
            let st = column_stack(t);
            let groups = slice_groups(&st, &plan).unwrap();
            let covered = plan.starts.last().unwrap() + g;
            prop_assert!(covered <= t);
            let rec = reconstruct(&groups, &plan);
            for row in 0..3 * 84 {
                prop_assert_eq!(&rec[row * covered..(row + 1) * covered], &st.tensor().data()[row * t..row * t + covered]);
            }
        }

        #[test]
        fn more_frames_never_fewer_groups(t in 20usize..2000, g in 2usize..20, stride_off in 1usize..19) {
            let stride = stride_off.min(g - 1);
            let a = plan_groups(t, g, stride).unwrap().n_groups;
            let b = plan_groups(t + 1, g, stride).unwrap().n_groups;
            prop_assert!(b >= a);
        }
    }
}
