//! The full network: group encoder, clustering module with cluster
//! projection fusion, projection head and classifier, evaluated on an
//! original and a group-mixed branch that share one parameter registry.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{plan_with_overlap, GroupIndexPlan, DEFAULT_GROUP_FRAMES, DEFAULT_OVERLAP};
use crate::idec::{self, ClusterConfig, SimMode, SIM_EPS};
use crate::mixcl::{MixConfig, MixPlan};
use crate::nn::checkpoint;
use crate::nn::graph::softmax;
use crate::nn::{GfeShape, GfeUnit, Graph, LayerNorm, Lgl, Linear, ParamId, ParamKind, ParamStore, ProjectionHead, Var};
use crate::scalar::{s, Scalar};
use crate::tensor::Tensor;
use crate::tfr::TfrConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    FourClass,
    TwoClass,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::FourClass => 4,
            Task::TwoClass => 2,
        }
    }

    /// Class index of a four-way label under this task.
    pub fn class_of(self, label4: usize) -> usize {
        match self {
            Task::FourClass => label4,
            Task::TwoClass => usize::from(label4 > 0),
        }
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::FourClass => &["normal", "crackle", "wheeze", "both"],
            Task::TwoClass => &["normal", "abnormal"],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub tfr: TfrConfig,
    /// Frames of the whole spectrogram (626 for 8 s).
    pub total_frames: usize,
    pub group_frames: usize,
    pub group_overlap: usize,
    pub gfe_widths: [usize; 3],
    pub d_g: usize,
    pub d_e: usize,
    pub d_z: usize,
    pub task: Task,
    pub cluster: ClusterConfig,
    pub mix: MixConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tfr: TfrConfig::default(),
            total_frames: 626,
            group_frames: DEFAULT_GROUP_FRAMES,
            group_overlap: DEFAULT_OVERLAP,
            gfe_widths: [16, 32, 64],
            d_g: 128,
            d_e: 32,
            d_z: 128,
            task: Task::FourClass,
            cluster: ClusterConfig::default(),
            mix: MixConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn group_plan(&self) -> Result<GroupIndexPlan> {
        plan_with_overlap(self.total_frames, self.group_frames, self.group_overlap)
    }

    pub fn n_groups(&self) -> Result<usize> {
        Ok(self.group_plan()?.n_groups)
    }

    pub fn freq_bins(&self) -> usize {
        self.tfr.n_filters
    }

    pub fn validate(&self) -> Result<()> {
        self.group_plan()?;
        if self.cluster.k == 0 || self.d_g == 0 || self.d_e == 0 || self.d_z == 0 {
            return Err(Error::Config("cluster count and feature sizes must be positive".into()));
        }
        if self.cluster.alpha_dof <= 0.0 {
            return Err(Error::Config("cluster.alpha_dof must be positive".into()));
        }
        if self.mix.tau <= 0.0 {
            return Err(Error::Config("mix.tau must be positive".into()));
        }
        Ok(())
    }
}

/// Per-term weights of the joint objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub con: f64,
    pub clu: f64,
    pub cos: f64,
    pub cls: f64,
    pub class_weights: Option<Vec<f64>>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { con: 1.0, clu: 0.1, cos: 0.01, cls: 1.0, class_weights: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub con: f64,
    pub clu: f64,
    pub cos: f64,
    pub cls: f64,
    pub total: f64,
}

/// `L_total = w_con·L_con + α·L_clu + γ·L_cos + w_cls·L_cls`.
pub fn total_loss(con: f64, clu: f64, cos: f64, cls: f64, alpha: f64, gamma: f64) -> f64 {
    con + alpha * clu + gamma * cos + cls
}

#[derive(Clone, Debug)]
struct Reducer {
    hidden: Lgl,
    out: Linear,
}

impl Reducer {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let h = self.hidden.forward(g, store, x);
        self.out.forward(g, store, h)
    }
}

/// Shared `F_θ`: linear, GELU, layer norm, linear.
#[derive(Clone, Debug)]
struct Cpf {
    fc1: Linear,
    norm: LayerNorm,
    fc2: Linear,
}

impl Cpf {
    fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let h = self.fc1.forward(g, store, x);
        let h = g.gelu(h);
        let h = self.norm.forward(g, store, h);
        self.fc2.forward(g, store, h)
    }
}

/// Intermediate results of one clustering branch.
pub struct Branch {
    pub q: Var,
    pub hard: Vec<usize>,
    /// `present[b·k + j]`: sample `b` has at least one group in cluster `j`.
    pub present: Vec<bool>,
    /// `[B·k, D_z]` cluster features.
    pub c: Var,
    /// `[B, D_z]` fused global feature.
    pub z: Var,
}

/// Knobs of a single training forward.
pub struct StepOptions<'a, T> {
    pub plan: &'a MixPlan,
    pub weights: &'a LossWeights,
    /// Fixed clustering target; computed from the batch when absent.
    pub target: Option<&'a Tensor<T>>,
    pub assign_upper: Option<&'a [usize]>,
    pub assign_lower: Option<&'a [usize]>,
    /// Fixed contrastive anchor `[B, D_z]` standing in for the detached
    /// normalized upper-branch projection.
    pub anchor: Option<&'a Tensor<T>>,
}

pub struct StepOutput<T> {
    pub graph: Graph<T>,
    pub total: Var,
    pub values: LossValues,
    /// Upper-branch soft assignment values `[B·N_g, k]`.
    pub q: Tensor<T>,
    pub hard_upper: Vec<usize>,
    pub hard_lower: Vec<usize>,
    /// Normalized upper-branch projection `[B, D_z]`.
    pub anchor: Tensor<T>,
}

#[derive(Clone)]
pub struct Model<T: Scalar> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    gfe: GfeUnit,
    reducer: Reducer,
    decoder: Reducer,
    centroids: ParamId,
    cpf: Cpf,
    fusion: ParamId,
    sim_factor: ParamId,
    head: ProjectionHead,
    classifier: Linear,
}

pub const PARAM_GROUPS: [&str; 9] =
    ["gfe.", "reducer.", "decoder.", "cluster.centroids", "cpf.", "fusion.", "sim.", "head.", "classifier."];

impl<T: Scalar> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let shape = GfeShape {
            in_channels: 3,
            freq_bins: cfg.freq_bins(),
            frames: cfg.group_frames,
            widths: cfg.gfe_widths,
            out_dim: cfg.d_g,
        };
        let gfe = GfeUnit::new(&mut store, "gfe", shape, &mut rng);
        let reducer = Reducer {
            hidden: Lgl::new(&mut store, "reducer.hidden", cfg.d_g, cfg.d_g, &mut rng),
            out: Linear::new(&mut store, "reducer.out", cfg.d_g, cfg.d_e, &mut rng),
        };
        let decoder = Reducer {
            hidden: Lgl::new(&mut store, "decoder.hidden", cfg.d_e, cfg.d_g, &mut rng),
            out: Linear::new(&mut store, "decoder.out", cfg.d_g, cfg.d_g, &mut rng),
        };
        let k = cfg.cluster.k;
        let mu = crate::nn::params::kaiming_uniform(&[k, cfg.d_e], cfg.d_e, &mut rng);
        let centroids = store.register("cluster.centroids", mu, ParamKind::Trainable);
        let cpf = Cpf {
            fc1: Linear::new(&mut store, "cpf.fc1", cfg.d_g, cfg.d_z, &mut rng),
            norm: LayerNorm::new(&mut store, "cpf.norm", cfg.d_z),
            fc2: Linear::new(&mut store, "cpf.fc2", cfg.d_z, cfg.d_z, &mut rng),
        };
        let fusion = store.register("fusion.logits", Tensor::zeros(&[k]), ParamKind::Trainable);
        let sim_kind = match cfg.cluster.sim_mode {
            SimMode::Learned => ParamKind::Trainable,
            SimMode::Identity => ParamKind::Frozen,
        };
        let sim_factor = store.register("sim.factor", Tensor::eye(cfg.d_z), sim_kind);
        let head = ProjectionHead::new(&mut store, "head", cfg.d_z, &mut rng);
        let classifier = Linear::new(&mut store, "classifier", cfg.d_z, cfg.task.n_classes(), &mut rng);
        Ok(Model { cfg, store, gfe, reducer, decoder, centroids, cpf, fusion, sim_factor, head, classifier })
    }

    pub fn k(&self) -> usize {
        self.cfg.cluster.k
    }

    pub fn n_classes(&self) -> usize {
        self.cfg.task.n_classes()
    }

    pub fn centroids_id(&self) -> ParamId {
        self.centroids
    }

    pub fn sim_factor_id(&self) -> ParamId {
        self.sim_factor
    }

    /// Names of every parameter under one of [`PARAM_GROUPS`].
    pub fn group_members(&self, prefix: &str) -> Vec<ParamId> {
        self.store.iter().filter(|(_, p)| p.name.starts_with(prefix)).map(|(id, _)| id).collect()
    }

    fn group_shape_check(&self, x: &Tensor<T>) -> Result<usize> {
        let n_g = self.cfg.n_groups()?;
        let want = [3, self.cfg.freq_bins(), self.cfg.group_frames];
        if x.shape().len() != 4 || x.shape()[1..] != want || x.dim(0) % n_g != 0 {
            return Err(Error::Shape(format!(
                "expected [B·{n_g}, 3, {}, {}] group slices, got {:?}",
                want[1],
                want[2],
                x.shape()
            )));
        }
        Ok(x.dim(0) / n_g)
    }

    /// Current `S`: `AᵀA + εI`, or the identity.
    pub fn sim_matrix(&self) -> Vec<T> {
        let d = self.cfg.d_z;
        match self.cfg.cluster.sim_mode {
            SimMode::Identity => Tensor::<T>::eye(d).into_data(),
            SimMode::Learned => idec::spd_from_factor(self.store.get(self.sim_factor).value.data(), d),
        }
    }

    fn sim_var(&self, g: &mut Graph<T>) -> Var {
        let d = self.cfg.d_z;
        match self.cfg.cluster.sim_mode {
            SimMode::Identity => g.constant(Tensor::eye(d)),
            SimMode::Learned => {
                let a = g.param(&self.store, self.sim_factor);
                let at = g.transpose(a);
                let ata = g.matmul(at, a);
                let mut eps = Tensor::<T>::eye(d);
                eps.data_mut().iter_mut().for_each(|v| *v *= s::<T>(SIM_EPS));
                let e = g.constant(eps);
                g.add(ata, e)
            }
        }
    }

    fn encode(&self, g: &mut Graph<T>, x: &Tensor<T>) -> Result<Var> {
        let xv = g.constant(x.clone());
        self.gfe.forward(g, &self.store, xv)
    }

    /// Reduce, assign and fuse group features `gf: [B·N_g, D_g]`.
    fn branch(&self, g: &mut Graph<T>, gf: Var, batch: usize, assign: Option<&[usize]>) -> Result<Branch> {
        let k = self.k();
        let n = g.value(gf).dim(0);
        let n_g = n / batch;
        let gin = if self.cfg.cluster.stop_grad_at_groups { g.detach(gf) } else { gf };
        let e = self.reducer.forward(g, &self.store, gin);
        let mu = g.param(&self.store, self.centroids);
        let q = g.soft_assign(e, mu, s(self.cfg.cluster.alpha_dof));
        let hard = match assign {
            Some(a) => {
                if a.len() != n || a.iter().any(|&j| j >= k) {
                    return Err(Error::InvalidArgument("assignment override has wrong length or range".into()));
                }
                a.to_vec()
            }
            None => idec::hard_assign(g.value(q).data(), k),
        };
        let seg: Vec<usize> = hard.iter().enumerate().map(|(r, &j)| (r / n_g) * k + j).collect();
        let mut present = vec![false; batch * k];
        seg.iter().for_each(|&sj| present[sj] = true);
        let pooled = g.segment_mean(gf, &seg, batch * k);
        let craw = self.cpf.forward(g, &self.store, pooled);
        let mask: Vec<T> = present.iter().map(|&p| if p { T::one() } else { T::zero() }).collect();
        let c = g.scale_rows(craw, &mask);
        let w = g.param(&self.store, self.fusion);
        let z = g.softmax_fuse(c, w);
        Ok(Branch { q, hard, present, c, z })
    }

    /// Both branches and every enabled loss term for one batch.
    ///
    /// `x: [B·N_g, 3, F, G]`, `labels` are task class indices.
    pub fn train_step_forward(&self, x: &Tensor<T>, labels: &[usize], opts: &StepOptions<T>) -> Result<StepOutput<T>> {
        let b = self.group_shape_check(x)?;
        if labels.len() != b || labels.iter().any(|&y| y >= self.n_classes()) {
            return Err(Error::InvalidArgument(format!("need {b} labels in [0, {})", self.n_classes())));
        }
        if opts.plan.batch() != b {
            return Err(Error::InvalidArgument("mix plan batch size differs from input".into()));
        }
        let w = opts.weights;
        let mut g = Graph::new(true);
        let gf = self.encode(&mut g, x)?;
        let up = self.branch(&mut g, gf, b, opts.assign_upper)?;
        let zn = g.l2_normalize_rows(up.z);
        let mut terms: Vec<Var> = Vec::new();
        let mut values = LossValues::default();

        // classification
        let logits = self.classifier.forward(&mut g, &self.store, zn);
        let cw: Option<Vec<T>> = w.class_weights.as_ref().map(|v| v.iter().map(|&x| s(x)).collect());
        let l_cls = g.cross_entropy(logits, labels, cw.as_deref());
        values.cls = g.value(l_cls).data()[0].as_f64();
        if w.cls != 0.0 {
            terms.push(g.scale(l_cls, s(w.cls)));
        }

        // clustering
        let qv = g.value(up.q).clone();
        let k = self.k();
        let p = match opts.target {
            Some(p) => p.clone(),
            None => Tensor::from_vec(qv.shape(), idec::target_distribution(qv.data(), k).0)?,
        };
        let kl = g.kl_to_target(&p, up.q);
        let l_clu = g.scale(kl, s(1.0 / b as f64));
        values.clu = g.value(l_clu).data()[0].as_f64();
        if w.clu != 0.0 {
            terms.push(g.scale(l_clu, s(w.clu)));
        }

        // cluster separation
        if w.cos != 0.0 {
            let sim = self.sim_var(&mut g);
            let per = g.soft_cos_pairs(up.c, sim, &up.present, k);
            let l_cos = g.mean(per);
            values.cos = g.value(l_cos).data()[0].as_f64();
            terms.push(g.scale(l_cos, s(w.cos)));
        } else {
            values.cos = self.soft_cos_value(g.value(up.c).data(), &up.present, b);
        }

        // contrastive, lower branch
        let mut hard_lower = Vec::new();
        if w.con != 0.0 {
            let rows = opts.plan.source_rows();
            let gm = g.gather_rows(gf, &rows);
            let lo = self.branch(&mut g, gm, b, opts.assign_lower)?;
            hard_lower = lo.hard;
            let h = self.head.forward(&mut g, &self.store, lo.z);
            let hn = g.l2_normalize_rows(h);
            let zt = match opts.anchor {
                Some(a) if a.shape() == g.value(zn).shape() => g.constant(a.clone()),
                Some(_) => return Err(Error::Shape("contrastive anchor shape differs from the projection".into())),
                None => g.detach(zn),
            };
            let zm = g.gather_rows(zt, &opts.plan.donor);
            let own = g.row_dot(hn, zt);
            let other = g.row_dot(hn, zm);
            let lam: Vec<T> = opts.plan.lambda.iter().map(|&l| s(l)).collect();
            let rest: Vec<T> = opts.plan.lambda.iter().map(|&l| s(1.0 - l)).collect();
            let own = g.reshape(own, &[b, 1])?;
            let other = g.reshape(other, &[b, 1])?;
            let a = g.scale_rows(own, &lam);
            let c = g.scale_rows(other, &rest);
            let sum = g.add(a, c);
            let tot = g.sum(sum);
            let l_con = g.scale(tot, s(-1.0 / (self.cfg.mix.tau * b as f64)));
            values.con = g.value(l_con).data()[0].as_f64();
            terms.push(g.scale(l_con, s(w.con)));
        }

        for (name, v) in [("L_con", values.con), ("L_clu", values.clu), ("L_cos", values.cos), ("L_cls", values.cls)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name.into()));
            }
        }
        let total = match terms.split_first() {
            Some((&first, rest)) => rest.iter().fold(first, |acc, &t| g.add(acc, t)),
            None => g.constant(Tensor::scalar(T::zero())),
        };
        values.total = g.value(total).data()[0].as_f64();
        let anchor = g.value(zn).clone();
        Ok(StepOutput { graph: g, total, values, q: qv, hard_upper: up.hard, hard_lower, anchor })
    }

    /// Mean over samples of the summed pairwise soft cosine among cluster features.
    fn soft_cos_value(&self, c: &[T], present: &[bool], b: usize) -> f64 {
        let (k, d) = (self.k(), self.cfg.d_z);
        let sim = self.sim_matrix();
        let total: f64 = (0..b)
            .map(|i| idec::pairwise_soft_cos(&c[i * k * d..(i + 1) * k * d], d, &sim, &present[i * k..(i + 1) * k]).as_f64())
            .sum();
        total / b as f64
    }

    /// Reconstruction objective for the optional reducer warm-up.
    pub fn reconstruction_forward(&self, x: &Tensor<T>) -> Result<(Graph<T>, Var)> {
        self.group_shape_check(x)?;
        let mut g = Graph::new(true);
        let gf = self.encode(&mut g, x)?;
        let target = g.detach(gf);
        let e = self.reducer.forward(&mut g, &self.store, target);
        let r = self.decoder.forward(&mut g, &self.store, e);
        let loss = g.mse(r, target);
        Ok((g, loss))
    }

    /// Reduced embeddings `[B·N_g, D_e]`. With `batch_stats` the encoder's
    /// batch norms normalize with this batch's statistics, as in training,
    /// without updating their running estimates.
    pub fn embeddings(&self, x: &Tensor<T>, batch_stats: bool) -> Result<Tensor<T>> {
        self.group_shape_check(x)?;
        let mut g = Graph::new(batch_stats);
        let gf = self.encode(&mut g, x)?;
        let e = self.reducer.forward(&mut g, &self.store, gf);
        Ok(g.value(e).clone())
    }

    /// Soft assignment `[B·N_g, k]`.
    pub fn assignments(&self, x: &Tensor<T>, batch_stats: bool) -> Result<Tensor<T>> {
        let e = self.embeddings(x, batch_stats)?;
        let q = idec::soft_assign(e.data(), self.store.get(self.centroids).value.data(), self.cfg.d_e, s(self.cfg.cluster.alpha_dof));
        Tensor::from_vec(&[e.dim(0), self.k()], q)
    }

    pub fn set_centroids(&mut self, mu: Vec<T>) -> Result<()> {
        let t = Tensor::from_vec(&[self.k(), self.cfg.d_e], mu)?;
        self.store.get_mut(self.centroids).value = t;
        Ok(())
    }

    /// Upper-branch outputs in evaluation mode: `(logits [B, C], c [B·k, D_z], present)`.
    pub fn eval_forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Vec<bool>)> {
        let b = self.group_shape_check(x)?;
        let mut g = Graph::new(false);
        let gf = self.encode(&mut g, x)?;
        let up = self.branch(&mut g, gf, b, None)?;
        let zn = g.l2_normalize_rows(up.z);
        let logits = self.classifier.forward(&mut g, &self.store, zn);
        Ok((g.value(logits).clone(), g.value(up.c).clone(), up.present))
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.eval_forward(x)?.0)
    }

    /// Class probabilities per sample.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        let l = self.logits(x)?;
        Ok(l.data().chunks(self.n_classes()).map(softmax).collect())
    }

    /// Per-sample mean pairwise `abs_soft_cos` among present cluster features,
    /// measured under the model's own `S`. Samples with fewer than two
    /// present clusters are skipped.
    pub fn cluster_separation(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        let (_, c, present) = self.eval_forward(x)?;
        let (k, d) = (self.k(), self.cfg.d_z);
        let sim = self.sim_matrix();
        let b = present.len() / k;
        Ok((0..b)
            .filter_map(|i| {
                idec::mean_pairwise_soft_cos(&c.data()[i * k * d..(i + 1) * k * d], d, &sim, &present[i * k..(i + 1) * k])
            })
            .map(|v| v.as_f64())
            .collect())
    }

    pub fn checkpoint_meta(&self, extra: serde_json::Value) -> serde_json::Value {
        serde_json::json!({
            "model": self.cfg,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "extra": extra,
        })
    }

    pub fn to_bytes(&self, extra: serde_json::Value) -> Vec<u8> {
        checkpoint::encode(&self.store, &self.checkpoint_meta(extra))
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<u64> {
        checkpoint::save(path, &self.store, &self.checkpoint_meta(extra))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        Self::from_decoded(checkpoint::decode(bytes)?)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        Self::from_decoded(checkpoint::read_file(path)?)
    }

    fn from_decoded(dec: checkpoint::Decoded) -> Result<(Self, serde_json::Value)> {
        let cfg: ModelConfig = serde_json::from_value(dec.meta["model"].clone())
            .map_err(|e| Error::Checkpoint(format!("model config in header: {e}")))?;
        let mut m = Model::new(cfg, 0)?;
        dec.load_into(&mut m.store)?;
        Ok((m, dec.meta["extra"].clone()))
    }

    pub fn info(&self) -> ModelInfo {
        let groups = PARAM_GROUPS
            .iter()
            .map(|p| {
                let n = self.group_members(p).iter().map(|&id| self.store.get(id)).filter(|t| t.kind != ParamKind::Buffer).map(|t| t.value.len()).sum();
                (p.trim_end_matches('.').to_string(), n)
            })
            .collect();
        let bytes = self.to_bytes(serde_json::Value::Null).len() as u64;
        ModelInfo {
            parameters: self.store.parameter_count(),
            trainable: self.store.iter().filter(|(_, p)| p.is_trainable()).map(|(_, p)| p.value.len()).sum(),
            tensors: self.store.len(),
            checkpoint_bytes: bytes,
            groups,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    pub parameters: usize,
    pub trainable: usize,
    pub tensors: usize,
    pub checkpoint_bytes: u64,
    pub groups: Vec<(String, usize)>,
}

pub const CHECKPOINT_SOFT_LIMIT: u64 = 40 * 1024 * 1024;
