//! Flat `key = value` configuration with dotted keys.
//!
//! ```text
//! # comments start with '#'
//! train.epochs = 50
//! cluster.sim_mode = identity
//! augment.stretch_range = 0.9,1.1
//! ```

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idec::SimMode;
use crate::model::{ModelConfig, Task};
use crate::signal::TARGET_LEN;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: Display,
{
    value.trim().parse().map_err(|e| Error::Config(format!("{key} = {value}: {e}")))
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("{key} expects two comma-separated numbers, got `{value}`")));
    }
    let lo: f64 = parse(key, parts[0])?;
    let hi: f64 = parse(key, parts[1])?;
    if lo > hi {
        return Err(Error::Config(format!("{key}: lower bound {lo} exceeds upper bound {hi}")));
    }
    Ok((lo, hi))
}

fn parse_widths(key: &str, value: &str) -> Result<[usize; 3]> {
    let v: Vec<usize> = value.split(',').map(|p| parse(key, p)).collect::<Result<_>>()?;
    v.try_into().map_err(|_| Error::Config(format!("{key} expects three comma-separated widths, got `{value}`")))
}

pub fn parse_task(value: &str) -> Result<Task> {
    match value.trim() {
        "four_class" => Ok(Task::FourClass),
        "two_class" => Ok(Task::TwoClass),
        other => Err(Error::Config(format!("task must be four_class or two_class, got `{other}`"))),
    }
}

pub fn parse_sim_mode(value: &str) -> Result<SimMode> {
    match value.trim() {
        "identity" => Ok(SimMode::Identity),
        "learned" => Ok(SimMode::Learned),
        other => Err(Error::Config(format!("cluster.sim_mode must be identity or learned, got `{other}`"))),
    }
}

fn task_name(t: Task) -> &'static str {
    match t {
        Task::FourClass => "four_class",
        Task::TwoClass => "two_class",
    }
}

fn sim_name(m: SimMode) -> &'static str {
    match m {
        SimMode::Identity => "identity",
        SimMode::Learned => "learned",
    }
}

impl RunConfig {
    /// Every recognised key.
    pub fn keys() -> Vec<String> {
        RunConfig::default().entries().into_keys().collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "tfr.n_fft" => m.tfr.n_fft = parse(key, value)?,
            "tfr.win_len" => m.tfr.win_len = parse(key, value)?,
            "tfr.hop" => m.tfr.hop = parse(key, value)?,
            "tfr.f_min" => m.tfr.f_min = parse(key, value)?,
            "tfr.f_max" => m.tfr.f_max = parse(key, value)?,
            "tfr.n_filters" => m.tfr.n_filters = parse(key, value)?,
            "tfr.log_floor_db" => m.tfr.log_floor_db = parse(key, value)?,
            "group.frames" => m.group_frames = parse(key, value)?,
            "group.overlap" => m.group_overlap = parse(key, value)?,
            "model.gfe_widths" => m.gfe_widths = parse_widths(key, value)?,
            "model.d_g" => m.d_g = parse(key, value)?,
            "model.d_e" => m.d_e = parse(key, value)?,
            "model.d_z" => m.d_z = parse(key, value)?,
            "task" => m.task = parse_task(value)?,
            "cluster.k" => m.cluster.k = parse(key, value)?,
            "cluster.alpha_dof" => m.cluster.alpha_dof = parse(key, value)?,
            "cluster.sim_mode" => m.cluster.sim_mode = parse_sim_mode(value)?,
            "cluster.p_update_interval" => m.cluster.p_update_interval = parse(key, value)?,
            "cluster.warmup_epochs" => m.cluster.warmup_epochs = parse(key, value)?,
            "cluster.stop_grad_at_groups" => m.cluster.stop_grad_at_groups = parse(key, value)?,
            "mix.beta_a" => m.mix.beta_a = parse(key, value)?,
            "mix.beta_b" => m.mix.beta_b = parse(key, value)?,
            "mix.tau" => m.mix.tau = parse(key, value)?,
            "mix.per_sample_lambda" => m.mix.per_sample_lambda = parse(key, value)?,
            "loss.alpha" => t.weights.clu = parse(key, value)?,
            "loss.gamma" => t.weights.cos = parse(key, value)?,
            "loss.con" => t.weights.con = parse(key, value)?,
            "loss.cls" => t.weights.cls = parse(key, value)?,
            "loss.class_weights" => t.class_weighting = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch" => t.batch = parse(key, value)?,
            "train.lr0" => t.lr0 = parse(key, value)?,
            "train.lr_decay" => t.lr_decay = parse(key, value)?,
            "train.lr_step_epochs" => t.lr_step_epochs = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            "train.bn_momentum" => t.bn_momentum = parse(key, value)?,
            "train.deterministic" => t.deterministic = parse(key, value)?,
            "augment.enabled" => t.augment_audio = parse(key, value)?,
            "augment.prob" => t.augment.prob = parse(key, value)?,
            "augment.noise" => t.augment.noise_enabled = parse(key, value)?,
            "augment.noise_snr_db_range" => t.augment.noise_snr_db_range = parse_pair(key, value)?,
            "augment.shift_s_max" => t.augment.shift_s_max = parse(key, value)?,
            "augment.stretch_range" => t.augment.stretch_range = parse_pair(key, value)?,
            "augment.vtlp_range" => t.augment.vtlp_range = parse_pair(key, value)?,
            "mask.enabled" => t.spec_mask = parse(key, value)?,
            "mask.prob" => t.mask.prob = parse(key, value)?,
            "mask.fraction" => t.mask.fraction = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Current value of every key, as it would be written in a file.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let (m, t) = (&self.model, &self.train);
        let pair = |p: (f64, f64)| format!("{},{}", p.0, p.1);
        let w = m.gfe_widths;
        [
            ("tfr.n_fft", m.tfr.n_fft.to_string()),
            ("tfr.win_len", m.tfr.win_len.to_string()),
            ("tfr.hop", m.tfr.hop.to_string()),
            ("tfr.f_min", m.tfr.f_min.to_string()),
            ("tfr.f_max", m.tfr.f_max.to_string()),
            ("tfr.n_filters", m.tfr.n_filters.to_string()),
            ("tfr.log_floor_db", m.tfr.log_floor_db.to_string()),
            ("group.frames", m.group_frames.to_string()),
            ("group.overlap", m.group_overlap.to_string()),
            ("model.gfe_widths", format!("{},{},{}", w[0], w[1], w[2])),
            ("model.d_g", m.d_g.to_string()),
            ("model.d_e", m.d_e.to_string()),
            ("model.d_z", m.d_z.to_string()),
            ("task", task_name(m.task).to_string()),
            ("cluster.k", m.cluster.k.to_string()),
            ("cluster.alpha_dof", m.cluster.alpha_dof.to_string()),
            ("cluster.sim_mode", sim_name(m.cluster.sim_mode).to_string()),
            ("cluster.p_update_interval", m.cluster.p_update_interval.to_string()),
            ("cluster.warmup_epochs", m.cluster.warmup_epochs.to_string()),
            ("cluster.stop_grad_at_groups", m.cluster.stop_grad_at_groups.to_string()),
            ("mix.beta_a", m.mix.beta_a.to_string()),
            ("mix.beta_b", m.mix.beta_b.to_string()),
            ("mix.tau", m.mix.tau.to_string()),
            ("mix.per_sample_lambda", m.mix.per_sample_lambda.to_string()),
            ("loss.alpha", t.weights.clu.to_string()),
            ("loss.gamma", t.weights.cos.to_string()),
            ("loss.con", t.weights.con.to_string()),
            ("loss.cls", t.weights.cls.to_string()),
            ("loss.class_weights", t.class_weighting.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch", t.batch.to_string()),
            ("train.lr0", t.lr0.to_string()),
            ("train.lr_decay", t.lr_decay.to_string()),
            ("train.lr_step_epochs", t.lr_step_epochs.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.bn_momentum", t.bn_momentum.to_string()),
            ("train.deterministic", t.deterministic.to_string()),
            ("augment.enabled", t.augment_audio.to_string()),
            ("augment.prob", t.augment.prob.to_string()),
            ("augment.noise", t.augment.noise_enabled.to_string()),
            ("augment.noise_snr_db_range", pair(t.augment.noise_snr_db_range)),
            ("augment.shift_s_max", t.augment.shift_s_max.to_string()),
            ("augment.stretch_range", pair(t.augment.stretch_range)),
            ("augment.vtlp_range", pair(t.augment.vtlp_range)),
            ("mask.enabled", t.spec_mask.to_string()),
            ("mask.prob", t.mask.prob.to_string()),
            ("mask.fraction", t.mask.fraction.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Apply every assignment of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.finalize()?;
        Ok(c)
    }

    /// Derive dependent fields and validate.
    pub fn finalize(&mut self) -> Result<()> {
        self.model.total_frames = self.model.tfr.frames_for(TARGET_LEN);
        self.model.tfr.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_roundtrip_through_text() {
        let c = RunConfig::from_text("").unwrap();
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(c.model.n_groups().unwrap(), 41);
    }

    #[test]
    fn overrides_comments_and_errors() {
        let c = RunConfig::from_text("# header\ntrain.epochs = 2 # inline\n\ncluster.sim_mode=identity\ntask = two_class\n").unwrap();
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.model.cluster.sim_mode, SimMode::Identity);
        assert_eq!(c.model.task.n_classes(), 2);
        let err = RunConfig::from_text("train.epochs = 2\nbogus.key = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(RunConfig::from_text("train.epochs\n").is_err());
        assert!(RunConfig::from_text("augment.stretch_range = 1.2,0.9\n").is_err());
        assert!(RunConfig::from_text("train.batch = 1\n").is_err());
    }

    proptest! {
        #[test]
        fn set_then_dump_roundtrips(epochs in 1usize..1000, k in 1usize..10, gamma in 0.0f64..1.0, g in 6usize..40) {
            let mut c = RunConfig::default();
            c.set("train.epochs", &epochs.to_string()).unwrap();
            c.set("cluster.k", &k.to_string()).unwrap();
            c.set("loss.gamma", &gamma.to_string()).unwrap();
            c.set("group.frames", &g.to_string()).unwrap();
            c.finalize().unwrap();
            prop_assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        }
    }
}
