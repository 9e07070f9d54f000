//! Datasets, preprocessing, the joint training loop and inference.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::RespiratoryCycle;
use crate::error::{Error, Result};
use crate::evaluation::{icbhi_score, ConfusionMatrix, IcbhiScore, Prediction};
use crate::grouping::{slice_groups, GroupIndexPlan};
use crate::idec;
use crate::mixcl::MixPlan;
use crate::model::{LossValues, LossWeights, Model, StepOptions};
use crate::nn::Adam;
use crate::scalar::{s, Scalar};
use crate::signal::{align_length, augment_batch, resample, AlignedAudio, AugmentConfig, TARGET_RATE};
use crate::tensor::Tensor;
use crate::tfr::{apply_mask, draw_mask, FeatureExtractor, MaskConfig, SpectrogramStack, TfrConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Inverse-frequency class weights in the cross-entropy.
    pub class_weighting: bool,
    pub augment_audio: bool,
    pub augment: AugmentConfig,
    pub spec_mask: bool,
    pub mask: MaskConfig,
    pub bn_momentum: f64,
    /// Sequential preprocessing and evaluation.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            lr0: 0.01,
            lr_decay: 0.33,
            lr_step_epochs: 150,
            batch: 32,
            seed: 0,
            weights: LossWeights::default(),
            class_weighting: false,
            augment_audio: true,
            augment: AugmentConfig::default(),
            spec_mask: true,
            mask: MaskConfig::default(),
            bn_momentum: 0.1,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    /// Step schedule `lr0 · decay^⌊epoch / step⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.lr_step_epochs.max(1)) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.con, w.clu, w.cos, w.cls].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.batch < 2 {
            return Err(Error::Config("train.batch must be at least 2 for group mixing".into()));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("learning rate and decay must be positive".into()));
        }
        Ok(())
    }
}

/// One labelled, length-aligned cycle at the working rate.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub id: String,
    /// Four-way label index.
    pub label4: usize,
    pub audio: AlignedAudio<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset<T> {
    pub examples: Vec<Example<T>>,
}

/// FNV-1a, stable across platforms and runs.
pub fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Resample to the working rate and fit to the working length with a
/// crop stream keyed by the sample id.
pub fn prepare_audio<T: Scalar>(samples: &[T], rate: u32, id: &str, seed: u64) -> Result<AlignedAudio<T>> {
    let x = resample(samples, rate as f64, TARGET_RATE as f64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(id));
    align_length(&x, id, &mut rng)
}

impl<T: Scalar> Dataset<T> {
    pub fn from_cycles<'a>(cycles: impl IntoIterator<Item = &'a RespiratoryCycle<T>>, seed: u64) -> Result<Self> {
        let examples = cycles
            .into_iter()
            .map(|c| {
                Ok(Example {
                    id: c.id.clone(),
                    label4: c.label.index(),
                    audio: prepare_audio(&c.audio, c.meta.sample_rate, &c.id, seed)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Dataset { examples: idx.iter().map(|&i| self.examples[i].clone()).collect() }
    }
}

/// Spectrogram front end plus grouping for one model configuration.
pub struct Preprocessor<T: Scalar> {
    pub fx: FeatureExtractor<T>,
    pub plan: GroupIndexPlan,
}

impl<T: Scalar> Preprocessor<T> {
    pub fn new(model: &Model<T>) -> Result<Self> {
        Ok(Preprocessor { fx: FeatureExtractor::new(model.cfg.tfr.clone())?, plan: model.cfg.group_plan()? })
    }

    pub fn stack(&self, audio: &AlignedAudio<T>) -> Result<SpectrogramStack<T>> {
        self.fx.features(&audio.samples, audio.vtlp_factor())
    }

    pub fn stacks(&self, audio: &[&AlignedAudio<T>], sequential: bool) -> Result<Vec<SpectrogramStack<T>>> {
        if sequential {
            audio.iter().map(|a| self.stack(a)).collect()
        } else {
            audio.par_iter().map(|a| self.stack(a)).collect()
        }
    }

    /// Concatenated group slices `[B·N_g, 3, F, G]`.
    pub fn batch_groups(&self, stacks: &[&SpectrogramStack<T>]) -> Result<Tensor<T>> {
        let mut data = Vec::new();
        let mut rows = 0;
        let mut shape = Vec::new();
        for st in stacks {
            let g = slice_groups(st, &self.plan)?;
            rows += g.dim(0);
            shape = g.shape().to_vec();
            data.extend_from_slice(g.data());
        }
        if stacks.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        shape[0] = rows;
        Tensor::from_vec(&shape, data)
    }
}

/// Mean loss terms and validation metrics of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossValues,
    pub valid: Option<IcbhiScore>,
}

pub const LOG_HEADER: &str = "epoch,lr,L_con,L_clu,L_cos,L_cls,L_total,Sp,Se,Score";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let l = &self.losses;
        let mut row = format!("{},{:.6e},{:.6},{:.6},{:.6},{:.6},{:.6}", self.epoch, self.lr, l.con, l.clu, l.cos, l.cls, l.total);
        match self.valid {
            Some(v) => {
                let _ = write!(row, ",{:.4},{:.4},{:.4}", v.sp, v.se, v.score);
            }
            None => row.push_str(",,,"),
        }
        row
    }
}

/// Inverse-frequency weights `N / (C · n_c)`; absent classes get 0.
pub fn inverse_frequency_weights(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    labels.iter().for_each(|&y| counts[y] += 1);
    let n = labels.len() as f64;
    counts.iter().map(|&c| if c == 0 { 0.0 } else { n / (n_classes as f64 * c as f64) }).collect()
}

/// Optimizer state and data of one training run.
pub struct Trainer<'a, T: Scalar> {
    pub model: Model<T>,
    pub cfg: TrainConfig,
    pub pre: Preprocessor<T>,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    train: &'a Dataset<T>,
    cache: Option<Vec<SpectrogramStack<T>>>,
    snapshot: Option<Model<T>>,
    weights: LossWeights,
    batches: u64,
    /// Every optimizer step's loss values, in order.
    pub step_log: Vec<LossValues>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(model: Model<T>, cfg: TrainConfig, train: &'a Dataset<T>) -> Result<Self> {
        Self::with_stacks(model, cfg, train, None)
    }

    /// Like [`Trainer::new`], reusing precomputed feature stacks of `train`
    /// when audio augmentation is off.
    pub fn with_stacks(model: Model<T>, cfg: TrainConfig, train: &'a Dataset<T>, stacks: Option<Vec<SpectrogramStack<T>>>) -> Result<Self> {
        cfg.validate()?;
        let pre = Preprocessor::new(&model)?;
        let cache = match (cfg.augment_audio, stacks) {
            (true, _) => None,
            (false, Some(st)) if st.len() == train.len() => Some(st),
            (false, Some(st)) => {
                return Err(Error::InvalidArgument(format!("{} cached stacks for {} training examples", st.len(), train.len())))
            }
            (false, None) => Some(cache_stacks(&pre, train, cfg.deterministic)?),
        };
        let mut weights = cfg.weights.clone();
        if cfg.class_weighting {
            let labels: Vec<usize> = train.examples.iter().map(|e| model.cfg.task.class_of(e.label4)).collect();
            weights.class_weights = Some(inverse_frequency_weights(&labels, model.n_classes()));
        }
        let adam = Adam::new(&model.store);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer { model, cfg, pre, adam, rng, train, cache, snapshot: None, weights, batches: 0, step_log: Vec::new() })
    }

    fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.model.cfg.task.class_of(self.train.examples[i].label4)).collect()
    }

    /// Group tensor for training examples `idx`, with the batch's shared
    /// audio and spectrogram augmentation.
    fn train_batch(&mut self, idx: &[usize]) -> Result<Tensor<T>> {
        let mut stacks: Vec<SpectrogramStack<T>> = match &self.cache {
            Some(c) => idx.iter().map(|&i| c[i].clone()).collect(),
            None => {
                let audio: Vec<AlignedAudio<T>> = idx.iter().map(|&i| self.train.examples[i].audio.clone()).collect();
                let (aug, _) = augment_batch(&audio, &self.cfg.augment, &mut self.rng)?;
                let refs: Vec<&AlignedAudio<T>> = aug.iter().collect();
                self.pre.stacks(&refs, self.cfg.deterministic)?
            }
        };
        if self.cfg.spec_mask {
            let (f, t) = (stacks[0].bins(), stacks[0].frames());
            if let Some(tag) = draw_mask(f, t, &self.cfg.mask, &mut self.rng) {
                stacks = stacks.into_iter().map(|s| apply_mask(s, &tag)).collect();
            }
        }
        let refs: Vec<&SpectrogramStack<T>> = stacks.iter().collect();
        self.pre.batch_groups(&refs)
    }

    fn batches_of_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.cfg.batch).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
    }

    /// Optional reconstruction warm-up of the reducer, then k-means
    /// initialization of the centroids on training embeddings.
    pub fn initialize(&mut self) -> Result<()> {
        let warm = self.model.cfg.cluster.warmup_epochs;
        if warm > 0 {
            let mut adam = Adam::new(&self.model.store);
            for epoch in 0..warm {
                let lr = self.cfg.lr_at(epoch);
                for idx in self.batches_of_epoch() {
                    let x = self.train_batch(&idx)?;
                    let (mut g, loss) = self.model.reconstruction_forward(&x)?;
                    let v = g.value(loss).data()[0];
                    if !v.is_finite() {
                        return Err(Error::NonFinite("reconstruction warm-up".into()));
                    }
                    let grads = g.backward(loss)?;
                    self.model.store.zero_grad();
                    self.model.store.accumulate(&grads);
                    adam.step(&mut self.model.store, lr);
                    let stats = g.take_stat_updates();
                    self.model.store.apply_stat_updates(&stats, s(self.cfg.bn_momentum));
                }
            }
        }
        let mut points = Vec::new();
        let all: Vec<usize> = (0..self.train.len()).collect();
        for idx in all.chunks(self.cfg.batch) {
            let stacks: Vec<SpectrogramStack<T>> = match &self.cache {
                Some(c) => idx.iter().map(|&i| c[i].clone()).collect(),
                None => {
                    let refs: Vec<&AlignedAudio<T>> = idx.iter().map(|&i| &self.train.examples[i].audio).collect();
                    self.pre.stacks(&refs, self.cfg.deterministic)?
                }
            };
            let refs: Vec<&SpectrogramStack<T>> = stacks.iter().collect();
            let x = self.pre.batch_groups(&refs)?;
            points.extend_from_slice(self.model.embeddings(&x, idx.len() > 1)?.data());
        }
        let mu = idec::init_centroids(&points, self.model.cfg.d_e, self.model.k(), self.cfg.seed)?;
        self.model.set_centroids(mu)?;
        self.adam = Adam::new(&self.model.store);
        Ok(())
    }

    /// One optimizer step on a prepared batch.
    pub fn step(&mut self, x: &Tensor<T>, labels: &[usize], lr: f64) -> Result<LossValues> {
        let n_g = self.pre.plan.n_groups;
        let b = labels.len();
        let plan = if self.weights.con != 0.0 {
            MixPlan::draw(&self.model.cfg.mix, b, n_g, &mut self.rng)?
        } else {
            MixPlan::identity(b, n_g)
        };
        let interval = self.model.cfg.cluster.p_update_interval.max(1) as u64;
        let target = if interval > 1 {
            if self.batches % interval == 0 || self.snapshot.is_none() {
                self.snapshot = Some(self.model.clone());
            }
            let snap = self.snapshot.as_ref().expect("set above");
            let q = snap.assignments(x, true)?;
            let (p, _) = idec::target_distribution(q.data(), self.model.k());
            Some(Tensor::from_vec(q.shape(), p)?)
        } else {
            None
        };
        let opts = StepOptions { plan: &plan, weights: &self.weights, target: target.as_ref(), assign_upper: None, assign_lower: None, anchor: None };
        let mut out = self.model.train_step_forward(x, labels, &opts)?;
        if !out.values.total.is_finite() {
            return Err(Error::NonFinite("L_total".into()));
        }
        let grads = out.graph.backward(out.total)?;
        self.model.store.zero_grad();
        self.model.store.accumulate(&grads);
        self.adam.step(&mut self.model.store, lr);
        let stats = out.graph.take_stat_updates();
        self.model.store.apply_stat_updates(&stats, s(self.cfg.bn_momentum));
        self.batches += 1;
        self.step_log.push(out.values);
        Ok(out.values)
    }

    /// One pass over the training split; returns mean loss terms.
    pub fn train_epoch(&mut self, epoch: usize) -> Result<LossValues> {
        let lr = self.cfg.lr_at(epoch);
        let mut acc = LossValues::default();
        let batches = self.batches_of_epoch();
        if batches.is_empty() {
            return Err(Error::InvalidArgument("training split needs at least two examples".into()));
        }
        for idx in &batches {
            let x = self.train_batch(idx)?;
            let y = self.labels_of(idx);
            let v = self.step(&x, &y, lr)?;
            acc.con += v.con;
            acc.clu += v.clu;
            acc.cos += v.cos;
            acc.cls += v.cls;
            acc.total += v.total;
        }
        let n = batches.len() as f64;
        Ok(LossValues { con: acc.con / n, clu: acc.clu / n, cos: acc.cos / n, cls: acc.cls / n, total: acc.total / n })
    }
}

/// What `fit` hands the epoch observer.
pub struct EpochEvent<'m, T: Scalar> {
    pub log: EpochLog,
    pub model: &'m Model<T>,
    pub is_best: bool,
    pub is_last: bool,
}

#[derive(Clone, Debug)]
pub struct FitSummary {
    pub logs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
}

/// Full training run: initialization, `cfg.epochs` epochs, validation
/// after each epoch. The observer sees every epoch and may persist
/// checkpoints; an error from it aborts the run.
pub fn fit<T, F>(model: Model<T>, train: &Dataset<T>, valid: &Dataset<T>, cfg: &TrainConfig, observe: F) -> Result<(Model<T>, FitSummary)>
where
    T: Scalar,
    F: FnMut(&EpochEvent<T>) -> Result<()>,
{
    fit_cached(model, train, valid, cfg, None, observe)
}

/// [`fit`] with feature stacks read from and written to an on-disk cache.
pub fn fit_cached<T, F>(
    model: Model<T>,
    train: &Dataset<T>,
    valid: &Dataset<T>,
    cfg: &TrainConfig,
    cache: Option<&FeatureCache>,
    mut observe: F,
) -> Result<(Model<T>, FitSummary)>
where
    T: Scalar,
    F: FnMut(&EpochEvent<T>) -> Result<()>,
{
    let pre = Preprocessor::new(&model)?;
    let stacks_of = |data: &Dataset<T>| match cache {
        Some(c) => c.stacks(&pre, data, cfg.deterministic),
        None => cache_stacks(&pre, data, cfg.deterministic),
    };
    let train_stacks = if cfg.augment_audio { None } else { Some(stacks_of(train)?) };
    let valid_cache = if valid.is_empty() { Vec::new() } else { stacks_of(valid)? };
    let mut tr = Trainer::with_stacks(model, cfg.clone(), train, train_stacks)?;
    tr.initialize()?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let (mut best_epoch, mut best_score) = (None, None::<f64>);
    for epoch in 0..cfg.epochs {
        let losses = tr.train_epoch(epoch)?;
        let valid_score = if valid.is_empty() {
            None
        } else {
            let (cm, _) = evaluate_cached(&tr.model, &tr.pre, valid, &valid_cache, cfg.batch)?;
            Some(icbhi_score(&cm))
        };
        let score = valid_score.map(|v| v.score).filter(|v| v.is_finite());
        let is_best = match (score, best_score) {
            (Some(s), Some(b)) => s > b,
            (Some(_), None) => true,
            _ => false,
        };
        if is_best {
            best_epoch = Some(epoch);
            best_score = score;
        }
        let log = EpochLog { epoch, lr: cfg.lr_at(epoch), losses, valid: valid_score };
        log::info!("{}", log.csv_row());
        observe(&EpochEvent { log, model: &tr.model, is_best, is_last: epoch + 1 == cfg.epochs })?;
        logs.push(log);
    }
    Ok((tr.model, FitSummary { logs, best_epoch, best_score }))
}

pub fn cache_stacks<T: Scalar>(pre: &Preprocessor<T>, data: &Dataset<T>, sequential: bool) -> Result<Vec<SpectrogramStack<T>>> {
    let refs: Vec<&AlignedAudio<T>> = data.examples.iter().map(|e| &e.audio).collect();
    pre.stacks(&refs, sequential)
}

const CACHE_MAGIC: &[u8; 4] = b"CGFS";

/// Feature stacks on disk, one file per example, keyed by the front-end
/// settings, the example id and the exact audio content.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(root: &Path, tfr: &TfrConfig) -> Result<Self> {
        let tag = stable_hash(&serde_json::to_string(tfr).map_err(|e| Error::Config(e.to_string()))?);
        let dir = root.join(format!("tfr_{tag:016x}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(FeatureCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for<T: Scalar>(&self, ex: &Example<T>) -> PathBuf {
        let mut h = stable_hash(&format!("{}|{:?}", ex.id, ex.audio.vtlp_factor()));
        for v in &ex.audio.samples {
            h = (h ^ v.as_f64().to_bits()).wrapping_mul(0x100000001b3);
        }
        self.dir.join(format!("{h:016x}.bin"))
    }

    fn read<T: Scalar>(path: &Path) -> Option<SpectrogramStack<T>> {
        let bytes = std::fs::read(path).ok()?;
        if bytes.len() < 12 || &bytes[..4] != CACHE_MAGIC {
            return None;
        }
        let bins = u32::from_le_bytes(bytes[4..8].try_into().ok()?) as usize;
        let frames = u32::from_le_bytes(bytes[8..12].try_into().ok()?) as usize;
        let body = &bytes[12..];
        if body.len() != 3 * bins * frames * 8 {
            return None;
        }
        let data = body.chunks_exact(8).map(|c| s(f64::from_le_bytes(c.try_into().unwrap()))).collect();
        SpectrogramStack::new(Tensor::from_vec(&[3, bins, frames], data).ok()?).ok()
    }

    fn write<T: Scalar>(path: &Path, st: &SpectrogramStack<T>) -> Result<()> {
        let mut bytes = Vec::with_capacity(12 + st.tensor().len() * 8);
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(&(st.bins() as u32).to_le_bytes());
        bytes.extend_from_slice(&(st.frames() as u32).to_le_bytes());
        for v in st.tensor().data() {
            bytes.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Stacks for every example in order, computing and storing misses.
    pub fn stacks<T: Scalar>(&self, pre: &Preprocessor<T>, data: &Dataset<T>, sequential: bool) -> Result<Vec<SpectrogramStack<T>>> {
        let paths: Vec<PathBuf> = data.examples.iter().map(|e| self.path_for(e)).collect();
        let mut out: Vec<Option<SpectrogramStack<T>>> = paths.iter().map(|p| Self::read(p)).collect();
        let missing: Vec<usize> = (0..out.len()).filter(|&i| out[i].is_none()).collect();
        log::debug!("feature cache {}: {} hits, {} misses", self.dir.display(), out.len() - missing.len(), missing.len());
        let refs: Vec<&AlignedAudio<T>> = missing.iter().map(|&i| &data.examples[i].audio).collect();
        for (i, st) in missing.iter().zip(pre.stacks(&refs, sequential)?) {
            Self::write(&paths[*i], &st)?;
            out[*i] = Some(st);
        }
        Ok(out.into_iter().map(|s| s.expect("every miss was filled")).collect())
    }
}

fn argmax<T: Scalar>(p: &[T]) -> usize {
    p.iter().enumerate().fold(0, |best, (i, v)| if *v > p[best] { i } else { best })
}

/// Predictions on precomputed stacks, in dataset order.
pub fn evaluate_cached<T: Scalar>(
    model: &Model<T>,
    pre: &Preprocessor<T>,
    data: &Dataset<T>,
    stacks: &[SpectrogramStack<T>],
    batch: usize,
) -> Result<(ConfusionMatrix, Vec<Prediction>)> {
    let task = model.cfg.task;
    let mut preds = Vec::with_capacity(data.len());
    for (chunk, exs) in stacks.chunks(batch.max(1)).zip(data.examples.chunks(batch.max(1))) {
        let refs: Vec<&SpectrogramStack<T>> = chunk.iter().collect();
        let x = pre.batch_groups(&refs)?;
        for (p, e) in model.predict_proba(&x)?.into_iter().zip(exs) {
            preds.push(Prediction {
                id: e.id.clone(),
                truth: task.class_of(e.label4),
                pred: argmax(&p),
                probs: p.iter().map(|v| v.as_f64()).collect(),
            });
        }
    }
    let truth: Vec<usize> = preds.iter().map(|p| p.truth).collect();
    let pred: Vec<usize> = preds.iter().map(|p| p.pred).collect();
    let cm = ConfusionMatrix::from_predictions(&truth, &pred, model.n_classes())?;
    Ok((cm, preds))
}

pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset<T>, batch: usize, sequential: bool) -> Result<(ConfusionMatrix, Vec<Prediction>)> {
    let pre = Preprocessor::new(model)?;
    let stacks = cache_stacks(&pre, data, sequential)?;
    evaluate_cached(model, &pre, data, &stacks, batch)
}

/// Class probabilities for one recording of any length and rate.
pub fn infer<T: Scalar>(model: &Model<T>, pre: &Preprocessor<T>, samples: &[T], rate: u32, id: &str) -> Result<Vec<T>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("{id}: empty audio")));
    }
    let audio = prepare_audio(samples, rate, id, 0)?;
    let st = pre.stack(&audio)?;
    let x = pre.batch_groups(&[&st])?;
    Ok(model.predict_proba(&x)?.remove(0))
}
