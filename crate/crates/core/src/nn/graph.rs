//! Taped reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Each node keeps
//! its value and a closure mapping the output gradient to input gradients.
//! Nodes that do not depend on a trainable parameter carry no closure, so
//! constant inputs (spectrograms, targets) cost nothing on the way back.

use crate::error::{Error, Result};
use crate::nn::params::{ParamId, ParamStore};
use crate::scalar::{s, Scalar};
use crate::tensor::Tensor;

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type Backward<T> = Box<dyn Fn(&[T], &[&Tensor<T>], &Tensor<T>, &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    backward: Option<Backward<T>>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Running-statistics update emitted by a batch-norm layer in training mode.
#[derive(Clone, Debug)]
pub struct NormStatUpdate<T> {
    pub mean_id: ParamId,
    pub var_id: ParamId,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    training: bool,
    stat_updates: Vec<NormStatUpdate<T>>,
}

/// Gradients of a scalar with respect to every parameter used in the pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    pub by_param: Vec<(ParamId, Vec<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.by_param.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }
}

const NORM_EPS: f64 = 1e-5;

impl<T: Scalar> Graph<T> {
    pub fn new(training: bool) -> Self {
        Graph { nodes: Vec::new(), training, stat_updates: Vec::new() }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_stat_updates(&mut self) -> Vec<NormStatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    pub(crate) fn push_stat_update(&mut self, u: NormStatUpdate<T>) {
        self.stat_updates.push(u);
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, inputs: vec![], backward: None, needs_grad: false, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding a copy of a stored parameter. Frozen parameters and
    /// buffers enter as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        let needs = p.is_trainable();
        self.nodes.push(Node {
            value: p.value.clone(),
            inputs: vec![],
            backward: None,
            needs_grad: needs,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, inputs: &[Var], backward: Backward<T>) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: if needs { Some(backward) } else { None },
            needs_grad: needs,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar, got {:?}", lv.shape())));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::default();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Some(pid) = node.param {
                out.by_param.push((pid, g));
                continue;
            }
            let Some(bw) = &node.backward else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].needs_grad).collect();
            let in_grads = bw(&g, &inputs, &node.value, &needs);
            for ((&i, ig), need) in node.inputs.iter().zip(in_grads).zip(needs) {
                if !need {
                    continue;
                }
                if let Some(ig) = ig {
                    match &mut grads[i] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += *b),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }
        // parameters used more than once land in separate leaves; merge them
        out.by_param.sort_by_key(|(p, _)| p.0);
        let mut merged: Vec<(ParamId, Vec<T>)> = Vec::with_capacity(out.by_param.len());
        for (p, g) in out.by_param {
            match merged.last_mut() {
                Some((q, acc)) if *q == p => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                _ => merged.push((p, g)),
            }
        }
        Ok(Gradients { by_param: merged })
    }

    // ---- shape ----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, &[x], Box::new(|g, _, _, _| vec![Some(g.to_vec())])))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = (t.dim(0), t.dim(1));
        let v = Tensor::from_vec(&[c, r], transpose_buf(r, c, t.data())).unwrap();
        self.push(v, &[x], Box::new(move |g, _, _, _| vec![Some(transpose_buf(c, r, g))]))
    }

    /// Rows of a 2-D tensor picked by index; repeated indices allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let t = self.value(x);
        let (n, d) = (t.dim(0), t.dim(1));
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::from_vec(&[idx.len(), d], data).unwrap();
        let idx = idx.to_vec();
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| {
                let mut gx = vec![T::zero(); n * d];
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        gx[i * d + c] += g[r * d + c];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean of the rows sharing a segment id; empty segments give zero rows.
    pub fn segment_mean(&mut self, x: Var, seg: &[usize], n_seg: usize) -> Var {
        let t = self.value(x);
        let (n, d) = (t.dim(0), t.dim(1));
        assert_eq!(seg.len(), n);
        let mut counts = vec![0usize; n_seg];
        for &s in seg {
            counts[s] += 1;
        }
        let mut data = vec![T::zero(); n_seg * d];
        for (r, &sg) in seg.iter().enumerate() {
            for c in 0..d {
                data[sg * d + c] += t.data()[r * d + c];
            }
        }
        for sg in 0..n_seg {
            if counts[sg] > 0 {
                let inv = T::one() / s::<T>(counts[sg] as f64);
                data[sg * d..(sg + 1) * d].iter_mut().for_each(|v| *v *= inv);
            }
        }
        let v = Tensor::from_vec(&[n_seg, d], data).unwrap();
        let seg = seg.to_vec();
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| {
                let mut gx = vec![T::zero(); n * d];
                for (r, &sg) in seg.iter().enumerate() {
                    let inv = T::one() / s::<T>(counts[sg] as f64);
                    for c in 0..d {
                        gx[r * d + c] = g[sg * d + c] * inv;
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Scale row `i` by the constant `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: &[T]) -> Var {
        let t = self.value(x);
        let d = t.dim(1);
        let mut v = t.clone();
        for (i, &wi) in w.iter().enumerate() {
            v.data_mut()[i * d..(i + 1) * d].iter_mut().for_each(|a| *a *= wi);
        }
        let w = w.to_vec();
        self.push(
            v,
            &[x],
            Box::new(move |g, _, _, _| {
                let mut gx = g.to_vec();
                for (i, &wi) in w.iter().enumerate() {
                    gx[i * d..(i + 1) * d].iter_mut().for_each(|a| *a *= wi);
                }
                vec![Some(gx)]
            }),
        )
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, &[a, b], Box::new(|g, _, _, _| vec![Some(g.to_vec()), Some(g.to_vec())]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(
            v,
            &[a, b],
            Box::new(|g, _, _, _| vec![Some(g.to_vec()), Some(g.iter().map(|&x| -x).collect())]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(
            v,
            &[a, b],
            Box::new(|g, xs, _, need| {
                let ga = need[0].then(|| g.iter().zip(xs[1].data()).map(|(&g, &y)| g * y).collect());
                let gb = need[1].then(|| g.iter().zip(xs[0].data()).map(|(&g, &x)| g * x).collect());
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|a| a * c);
        self.push(v, &[x], Box::new(move |g, _, _, _| vec![Some(g.iter().map(|&a| a * c).collect())]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a < T::zero() { T::zero() } else { a });
        self.push(
            v,
            &[x],
            Box::new(|g, xs, _, _| {
                vec![Some(
                    g.iter()
                        .zip(xs[0].data())
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu_fwd);
        self.push(
            v,
            &[x],
            Box::new(|g, xs, _, _| {
                vec![Some(g.iter().zip(xs[0].data()).map(|(&g, &x)| g * gelu_grad(x)).collect())]
            }),
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: T = self.value(x).data().iter().copied().sum();
        let n = self.value(x).len();
        self.push(Tensor::scalar(total), &[x], Box::new(move |g, _, _, _| vec![Some(vec![g[0]; n])]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let sm = self.sum(x);
        self.scale(sm, T::one() / s::<T>(n as f64))
    }

    // ---- linear algebra ----

    /// `[m,k] × [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.dim(0), ta.dim(1), tb.dim(1));
        assert_eq!(tb.dim(0), k, "matmul inner dims");
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), ta.data(), false, tb.data(), false, T::zero(), &mut out);
        let v = Tensor::from_vec(&[m, n], out).unwrap();
        self.push(
            v,
            &[a, b],
            Box::new(move |g, xs, _, need| {
                let ga = need[0].then(|| {
                    let mut ga = vec![T::zero(); m * k];
                    T::gemm(m, n, k, T::one(), g, false, xs[1].data(), true, T::zero(), &mut ga);
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = vec![T::zero(); k * n];
                    T::gemm(k, m, n, T::one(), xs[0].data(), true, g, false, T::zero(), &mut gb);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Broadcast-add a `[d]` bias to every row of `[n,d]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        let d = tb.len();
        assert_eq!(tx.dim(tx.shape().len() - 1), d);
        let mut v = tx.clone();
        for row in v.data_mut().chunks_mut(d) {
            row.iter_mut().zip(tb.data()).for_each(|(a, &c)| *a += c);
        }
        self.push(
            v,
            &[x, b],
            Box::new(move |g, _, _, need| {
                let gb = need[1].then(|| {
                    let mut gb = vec![T::zero(); d];
                    for row in g.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(a, &c)| *a += c);
                    }
                    gb
                });
                vec![Some(g.to_vec()), gb]
            }),
        )
    }

    /// 2-D convolution, `x: [N,C,H,W]`, `w: [O,C,kh,kw]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, c, h, wd) = (tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3));
        let (o, kh, kw) = (tw.dim(0), tw.dim(2), tw.dim(3));
        assert_eq!(tw.dim(1), c, "conv2d channels");
        let geo = ConvGeom { n, c, h, w: wd, kh, kw, stride, pad };
        let (ho, wo) = geo.out_hw();
        let cols = geo.im2col(tx.data());
        let ckk = c * kh * kw;
        let ncols = n * ho * wo;
        let mut tmp = vec![T::zero(); o * ncols];
        T::gemm(o, ckk, ncols, T::one(), tw.data(), false, &cols, false, T::zero(), &mut tmp);
        let bias = self.value(b).data().to_vec();
        let hw = ho * wo;
        let mut out = vec![T::zero(); n * o * hw];
        for oc in 0..o {
            for ni in 0..n {
                let src = &tmp[oc * ncols + ni * hw..oc * ncols + (ni + 1) * hw];
                let dst = &mut out[(ni * o + oc) * hw..(ni * o + oc + 1) * hw];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d = s + bias[oc]);
            }
        }
        let v = Tensor::from_vec(&[n, o, ho, wo], out).unwrap();
        self.push(
            v,
            &[x, w, b],
            Box::new(move |g, xs, _, need| {
                // g: [N,O,hw] -> gt: [O, N*hw]
                let mut gt = vec![T::zero(); o * ncols];
                for ni in 0..n {
                    for oc in 0..o {
                        let src = &g[(ni * o + oc) * hw..(ni * o + oc + 1) * hw];
                        gt[oc * ncols + ni * hw..oc * ncols + (ni + 1) * hw].copy_from_slice(src);
                    }
                }
                let gw = need[1].then(|| {
                    let mut gw = vec![T::zero(); o * ckk];
                    T::gemm(o, ncols, ckk, T::one(), &gt, false, &cols, true, T::zero(), &mut gw);
                    gw
                });
                let gb = need[2].then(|| (0..o).map(|oc| gt[oc * ncols..(oc + 1) * ncols].iter().copied().sum()).collect());
                let gx = need[0].then(|| {
                    let mut gcols = vec![T::zero(); ckk * ncols];
                    T::gemm(ckk, o, ncols, T::one(), xs[1].data(), true, &gt, false, T::zero(), &mut gcols);
                    geo.col2im(&gcols)
                });
                vec![gx, gw, gb]
            }),
        )
    }

    /// Batch normalization over every axis except 1 (`[N,C]` or `[N,C,H,W]`).
    ///
    /// Training mode normalizes with batch statistics and records a
    /// running-stat update; eval mode uses the stored running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (ParamId, ParamId),
        store: &ParamStore<T>,
    ) -> Var {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let m = n * inner;
        let eps = s::<T>(NORM_EPS);
        let (mean, var) = if self.training {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    let sl = &tx.data()[(ni * c + ci) * inner..(ni * c + ci + 1) * inner];
                    mean[ci] += sl.iter().copied().sum::<T>();
                }
            }
            let mf = s::<T>(m as f64);
            mean.iter_mut().for_each(|v| *v /= mf);
            for ni in 0..n {
                for ci in 0..c {
                    let sl = &tx.data()[(ni * c + ci) * inner..(ni * c + ci + 1) * inner];
                    var[ci] += sl.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<T>();
                }
            }
            var.iter_mut().for_each(|v| *v /= mf);
            (mean, var)
        } else {
            (store.get(running.0).value.data().to_vec(), store.get(running.1).value.data().to_vec())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gm = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let mut xhat = vec![T::zero(); tx.len()];
        let mut out = vec![T::zero(); tx.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * inner;
                for k in 0..inner {
                    let xh = (tx.data()[base + k] - mean[ci]) * inv_std[ci];
                    xhat[base + k] = xh;
                    out[base + k] = gm[ci] * xh + bt[ci];
                }
            }
        }
        if self.training {
            // unbiased variance for the running estimate
            let corr = if m > 1 { s::<T>(m as f64 / (m - 1) as f64) } else { T::one() };
            self.push_stat_update(NormStatUpdate {
                mean_id: running.0,
                var_id: running.1,
                batch_mean: mean,
                batch_var: var.iter().map(|&v| v * corr).collect(),
            });
        }
        let training = self.training;
        let v = Tensor::from_vec(&shape, out).unwrap();
        self.push(
            v,
            &[x, gamma, beta],
            Box::new(move |g, _, _, need| {
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * inner;
                        for k in 0..inner {
                            sum_g[ci] += g[base + k];
                            sum_gx[ci] += g[base + k] * xhat[base + k];
                        }
                    }
                }
                let gx = need[0].then(|| {
                    let mf = s::<T>(m as f64);
                    let mut gx = vec![T::zero(); g.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * inner;
                            let sc = gm[ci] * inv_std[ci];
                            for k in 0..inner {
                                gx[base + k] = if training {
                                    sc * (g[base + k] - sum_g[ci] / mf - xhat[base + k] * sum_gx[ci] / mf)
                                } else {
                                    sc * g[base + k]
                                };
                            }
                        }
                    }
                    gx
                });
                vec![gx, need[1].then(|| sum_gx.clone()), need[2].then(|| sum_g.clone())]
            }),
        )
    }

    /// Layer normalization over the last axis of `[n,d]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let tx = self.value(x);
        let d = tx.dim(tx.shape().len() - 1);
        let rows = tx.len() / d;
        let eps = s::<T>(NORM_EPS);
        let df = s::<T>(d as f64);
        let gm = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let mut xhat = vec![T::zero(); tx.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for k in 0..d {
                let xh = (row[k] - mean) * is;
                xhat[r * d + k] = xh;
                out[r * d + k] = gm[k] * xh + bt[k];
            }
        }
        let v = Tensor::from_vec(tx.shape(), out).unwrap();
        self.push(
            v,
            &[x, gamma, beta],
            Box::new(move |g, _, _, need| {
                let mut gg = vec![T::zero(); d];
                let mut gb = vec![T::zero(); d];
                let mut gx = vec![T::zero(); g.len()];
                for r in 0..rows {
                    let gr = &g[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for k in 0..d {
                        gg[k] += gr[k] * xr[k];
                        gb[k] += gr[k];
                        let gh = gr[k] * gm[k];
                        s1 += gh;
                        s2 += gh * xr[k];
                    }
                    for k in 0..d {
                        let gh = gr[k] * gm[k];
                        gx[r * d + k] = inv_std[r] * (gh - s1 / df - xr[k] * s2 / df);
                    }
                }
                vec![need[0].then_some(gx), need[1].then_some(gg), need[2].then_some(gb)]
            }),
        )
    }

    /// Rows scaled to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let d = tx.dim(tx.shape().len() - 1);
        let rows = tx.len() / d;
        let tiny = s::<T>(1e-12);
        let norms: Vec<T> = (0..rows)
            .map(|r| tx.data()[r * d..(r + 1) * d].iter().map(|&v| v * v).sum::<T>().sqrt().max(tiny))
            .collect();
        let mut out = tx.data().to_vec();
        for r in 0..rows {
            out[r * d..(r + 1) * d].iter_mut().for_each(|v| *v /= norms[r]);
        }
        let v = Tensor::from_vec(tx.shape(), out).unwrap();
        self.push(
            v,
            &[x],
            Box::new(move |g, _, y, _| {
                let mut gx = vec![T::zero(); g.len()];
                for r in 0..rows {
                    let yr = &y.data()[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for k in 0..d {
                        gx[r * d + k] = (gr[k] - yr[k] * dot) / norms[r];
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Row-wise dot products of two `[n,d]` tensors.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape());
        let d = ta.dim(ta.shape().len() - 1);
        let rows = ta.len() / d;
        let out: Vec<T> = (0..rows)
            .map(|r| ta.data()[r * d..(r + 1) * d].iter().zip(&tb.data()[r * d..(r + 1) * d]).map(|(&x, &y)| x * y).sum())
            .collect();
        let v = Tensor::from_vec(&[rows], out).unwrap();
        self.push(
            v,
            &[a, b],
            Box::new(move |g, xs, _, need| {
                let spread = |other: &Tensor<T>| {
                    let mut gx = vec![T::zero(); rows * d];
                    for r in 0..rows {
                        for k in 0..d {
                            gx[r * d + k] = g[r] * other.data()[r * d + k];
                        }
                    }
                    gx
                };
                vec![need[0].then(|| spread(xs[1])), need[1].then(|| spread(xs[0]))]
            }),
        )
    }

    /// `z[b] = Σ_j softmax(w)_j · c[b·k + j]` for `c: [B·k, D]`, `w: [k]`.
    pub fn softmax_fuse(&mut self, c: Var, w: Var) -> Var {
        let (tc, tw) = (self.value(c), self.value(w));
        let k = tw.len();
        let d = tc.dim(1);
        let b = tc.dim(0) / k;
        let sm = softmax(tw.data());
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            for j in 0..k {
                let row = tc.row(bi * k + j);
                for t in 0..d {
                    out[bi * d + t] += sm[j] * row[t];
                }
            }
        }
        let v = Tensor::from_vec(&[b, d], out).unwrap();
        self.push(
            v,
            &[c, w],
            Box::new(move |g, xs, _, need| {
                let gc = need[0].then(|| {
                    let mut gc = vec![T::zero(); b * k * d];
                    for bi in 0..b {
                        for j in 0..k {
                            for t in 0..d {
                                gc[(bi * k + j) * d + t] = sm[j] * g[bi * d + t];
                            }
                        }
                    }
                    gc
                });
                let gw = need[1].then(|| {
                    let mut gs = vec![T::zero(); k];
                    for bi in 0..b {
                        for (j, gsj) in gs.iter_mut().enumerate() {
                            let row = xs[0].row(bi * k + j);
                            *gsj += (0..d).map(|t| g[bi * d + t] * row[t]).sum::<T>();
                        }
                    }
                    let inner: T = sm.iter().zip(&gs).map(|(&a, &b)| a * b).sum();
                    sm.iter().zip(&gs).map(|(&a, &b)| a * (b - inner)).collect()
                });
                vec![gc, gw]
            }),
        )
    }

    // ---- losses ----

    /// Mean (optionally weighted) softmax cross-entropy of `[n,C]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], weights: Option<&[T]>) -> Var {
        let tl = self.value(logits);
        let (n, cc) = (tl.dim(0), tl.dim(1));
        assert_eq!(labels.len(), n);
        let w: Vec<T> = match weights {
            Some(cw) => labels.iter().map(|&l| cw[l]).collect(),
            None => vec![T::one(); n],
        };
        let wsum: T = w.iter().copied().sum();
        let mut probs = vec![T::zero(); n * cc];
        let mut loss = T::zero();
        for i in 0..n {
            let row = tl.row(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            loss += w[i] * (lse - row[labels[i]]);
            probs[i * cc..(i + 1) * cc].copy_from_slice(&softmax(row));
        }
        let v = Tensor::scalar(loss / wsum);
        let labels = labels.to_vec();
        self.push(
            v,
            &[logits],
            Box::new(move |g, _, _, _| {
                let mut gl = probs.clone();
                for i in 0..n {
                    gl[i * cc + labels[i]] -= T::one();
                    for c in 0..cc {
                        gl[i * cc + c] *= w[i] * g[0] / wsum;
                    }
                }
                vec![Some(gl)]
            }),
        )
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    /// Student-t soft assignment of `e: [n,D]` to centroids `mu: [k,D]`.
    pub fn soft_assign(&mut self, e: Var, mu: Var, alpha: T) -> Var {
        let (te, tm) = (self.value(e), self.value(mu));
        let (n, d, k) = (te.dim(0), te.dim(1), tm.dim(0));
        let dist = sq_dists(te.data(), tm.data(), n, k, d);
        let q = student_t_from_dists(&dist, n, k, alpha);
        let v = Tensor::from_vec(&[n, k], q).unwrap();
        let expo = (alpha + T::one()) / (s::<T>(2.0) * alpha);
        self.push(
            v,
            &[e, mu],
            Box::new(move |g, xs, q, need| {
                let q = q.data();
                let (ed, md) = (xs[0].data(), xs[1].data());
                let mut ge = vec![T::zero(); n * d];
                let mut gm = vec![T::zero(); k * d];
                for i in 0..n {
                    let gq: T = (0..k).map(|j| g[i * k + j] * q[i * k + j]).sum();
                    for l in 0..k {
                        let h = q[i * k + l] * (g[i * k + l] - gq);
                        let a = -expo / (T::one() + dist[i * k + l] / alpha);
                        let gd = h * a;
                        for t in 0..d {
                            let diff = ed[i * d + t] - md[l * d + t];
                            let two = s::<T>(2.0) * gd * diff;
                            ge[i * d + t] += two;
                            gm[l * d + t] -= two;
                        }
                    }
                }
                vec![need[0].then_some(ge), need[1].then_some(gm)]
            }),
        )
    }

    /// `Σ p ln(p/q)` with `p` a constant target.
    pub fn kl_to_target(&mut self, p: &Tensor<T>, q: Var) -> Var {
        let tq = self.value(q);
        assert_eq!(p.shape(), tq.shape());
        let val: T = p
            .data()
            .iter()
            .zip(tq.data())
            .filter(|(&pv, _)| pv > T::zero())
            .map(|(&pv, &qv)| pv * (pv / qv).ln())
            .sum();
        let p = p.data().to_vec();
        self.push(
            Tensor::scalar(val),
            &[q],
            Box::new(move |g, xs, _, _| {
                vec![Some(p.iter().zip(xs[0].data()).map(|(&pv, &qv)| -g[0] * pv / qv).collect())]
            }),
        )
    }

    /// Per-sample sum of `|c_iᵀ S c_j| / sqrt((c_iᵀ S c_i)(c_jᵀ S c_j))` over
    /// distinct present pairs. `c: [B·k, D]`, `sim: [D, D]`, `present[b·k+j]`.
    pub fn soft_cos_pairs(&mut self, c: Var, sim: Var, present: &[bool], k: usize) -> Var {
        let (tc, ts) = (self.value(c), self.value(sim));
        let d = tc.dim(1);
        let b = tc.dim(0) / k;
        let rows = b * k;
        let mut cs = vec![T::zero(); rows * d];
        T::gemm(rows, d, d, T::one(), tc.data(), false, ts.data(), false, T::zero(), &mut cs);
        let bil = |i: usize, j: usize| -> T {
            // c_iᵀ S c_j = (c_i S) · c_j
            (0..d).map(|t| cs[i * d + t] * tc.data()[j * d + t]).sum()
        };
        let mut out = vec![T::zero(); b];
        let mut pairs = Vec::new();
        let mut selfs = vec![T::zero(); rows];
        for (r, sv) in selfs.iter_mut().enumerate() {
            if present[r] {
                *sv = bil(r, r);
            }
        }
        for bi in 0..b {
            for i in 0..k {
                for j in (i + 1)..k {
                    let (ri, rj) = (bi * k + i, bi * k + j);
                    if !present[ri] || !present[rj] {
                        continue;
                    }
                    let (aa, bb) = (selfs[ri], selfs[rj]);
                    if aa <= T::zero() || bb <= T::zero() {
                        continue;
                    }
                    let nij = bil(ri, rj);
                    let den = (aa * bb).sqrt();
                    let f = nij.abs() / den;
                    out[bi] += f;
                    pairs.push((bi, ri, rj, nij, aa, bb, f));
                }
            }
        }
        let v = Tensor::from_vec(&[b], out).unwrap();
        self.push(
            v,
            &[c, sim],
            Box::new(move |g, xs, _, need| {
                let (cd, sd) = (xs[0].data(), xs[1].data());
                let mut gc = vec![T::zero(); rows * d];
                let mut gs = vec![T::zero(); d * d];
                // S x and Sᵀ x products
                let mut sx = vec![T::zero(); rows * d];
                let mut stx = vec![T::zero(); rows * d];
                T::gemm(rows, d, d, T::one(), cd, false, sd, true, T::zero(), &mut sx);
                T::gemm(rows, d, d, T::one(), cd, false, sd, false, T::zero(), &mut stx);
                let half = s::<T>(0.5);
                for &(bi, ri, rj, nij, aa, bb, f) in &pairs {
                    let gf = g[bi];
                    let den = (aa * bb).sqrt();
                    let dn = gf * nij.signum() / den;
                    let da = -gf * f * half / aa;
                    let db = -gf * f * half / bb;
                    for t in 0..d {
                        // n = c_iᵀ S c_j: dn/dc_i = S c_j, dn/dc_j = Sᵀ c_i
                        gc[ri * d + t] += dn * sx[rj * d + t] + da * (sx[ri * d + t] + stx[ri * d + t]);
                        gc[rj * d + t] += dn * stx[ri * d + t] + db * (sx[rj * d + t] + stx[rj * d + t]);
                    }
                    if need[1] {
                        for p in 0..d {
                            let (cip, cjp) = (cd[ri * d + p], cd[rj * d + p]);
                            for q in 0..d {
                                let (ciq, cjq) = (cd[ri * d + q], cd[rj * d + q]);
                                gs[p * d + q] += dn * cip * cjq + da * cip * ciq + db * cjp * cjq;
                            }
                        }
                    }
                }
                vec![need[0].then_some(gc), need[1].then_some(gs)]
            }),
        )
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    /// `[C·kh·kw, N·Ho·Wo]` patch matrix.
    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let (ho, wo) = self.out_hw();
        let ncols = self.n * ho * wo;
        let mut cols = vec![T::zero(); self.c * self.kh * self.kw * ncols];
        self.walk(|row, col, src| cols[row * ncols + col] = x[src]);
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &[T]) -> Vec<T> {
        let (ho, wo) = self.out_hw();
        let ncols = self.n * ho * wo;
        let mut x = vec![T::zero(); self.n * self.c * self.h * self.w];
        self.walk(|row, col, src| x[src] += cols[row * ncols + col]);
        x
    }

    fn walk(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = self.out_hw();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    for ni in 0..self.n {
                        for oh in 0..ho {
                            let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                            if ih < 0 || ih >= self.h as isize {
                                continue;
                            }
                            for ow in 0..wo {
                                let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                                if iw < 0 || iw >= self.w as isize {
                                    continue;
                                }
                                let src = ((ni * self.c + ci) * self.h + ih as usize) * self.w + iw as usize;
                                f(row, (ni * ho + oh) * wo + ow, src);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::from_vec(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()).unwrap()
}

fn transpose_buf<T: Scalar>(r: usize, c: usize, x: &[T]) -> Vec<T> {
    let mut t = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = x[i * c + j];
        }
    }
    t
}

pub(crate) fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let mx = x.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = x.iter().map(|&v| (v - mx).exp()).collect();
    let sm: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / sm).collect()
}

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let c = s::<T>((2.0 / std::f64::consts::PI).sqrt());
    let a = s::<T>(0.044715);
    let u = c * (x + a * x * x * x);
    s::<T>(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = s::<T>((2.0 / std::f64::consts::PI).sqrt());
    let a = s::<T>(0.044715);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + s::<T>(3.0) * a * x * x);
    s::<T>(0.5) * (T::one() + th) + s::<T>(0.5) * x * (T::one() - th * th) * du
}

pub(crate) fn sq_dists<T: Scalar>(e: &[T], mu: &[T], n: usize, k: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        for j in 0..k {
            out[i * k + j] = (0..d).map(|t| (e[i * d + t] - mu[j * d + t]).powi(2)).sum();
        }
    }
    out
}

/// Row-normalized `(1 + d/α)^(-(α+1)/2)` kernel over squared distances.
pub(crate) fn student_t_from_dists<T: Scalar>(dist: &[T], n: usize, k: usize, alpha: T) -> Vec<T> {
    let expo = -(alpha + T::one()) / s::<T>(2.0);
    let mut q = vec![T::zero(); n * k];
    for i in 0..n {
        // work in log-space so far-away rows do not underflow to 0/0
        let logs: Vec<T> = (0..k).map(|j| expo * (T::one() + dist[i * k + j] / alpha).ln()).collect();
        let p = softmax(&logs);
        q[i * k..(i + 1) * k].copy_from_slice(&p);
    }
    q
}
