//! One-factor-at-a-time ablation grids over a base run configuration.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::IcbhiScore;
use crate::idec::SimMode;

pub const GROUP_FRAMES_RANGE: std::ops::RangeInclusive<usize> = 2..=25;

/// Similarity weight used by module variants that enable the constraint
/// when the base configuration has it switched off.
const FALLBACK_GAMMA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugMode {
    None,
    Audio,
    Spec,
    AudioSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModuleSet {
    BaseDec,
    Idec,
    Gcl,
    IdecGclCos,
    IdecGclSoftCos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Augmentation(AugMode),
    Modules(ModuleSet),
    GroupFrames(usize),
    Noise(bool),
}

const AUG_VALUES: [(&str, AugMode); 4] =
    [("none", AugMode::None), ("audio", AugMode::Audio), ("spec", AugMode::Spec), ("audio+spec", AugMode::AudioSpec)];

const MODULE_VALUES: [(&str, ModuleSet); 5] = [
    ("base_dec", ModuleSet::BaseDec),
    ("idec", ModuleSet::Idec),
    ("gcl", ModuleSet::Gcl),
    ("idec_gcl_cos", ModuleSet::IdecGclCos),
    ("idec_gcl_softcos", ModuleSet::IdecGclSoftCos),
];

impl Variant {
    pub fn axis(&self) -> &'static str {
        match self {
            Variant::Augmentation(_) => "augmentation",
            Variant::Modules(_) => "modules",
            Variant::GroupFrames(_) => "group_frames",
            Variant::Noise(_) => "noise",
        }
    }

    pub fn value(&self) -> String {
        match self {
            Variant::Augmentation(a) => AUG_VALUES.iter().find(|(_, v)| v == a).map(|(n, _)| n.to_string()).unwrap_or_default(),
            Variant::Modules(m) => MODULE_VALUES.iter().find(|(_, v)| v == m).map(|(n, _)| n.to_string()).unwrap_or_default(),
            Variant::GroupFrames(g) => g.to_string(),
            Variant::Noise(on) => if *on { "on" } else { "off" }.to_string(),
        }
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        match *self {
            Variant::Augmentation(a) => {
                t.augment_audio = matches!(a, AugMode::Audio | AugMode::AudioSpec);
                t.spec_mask = matches!(a, AugMode::Spec | AugMode::AudioSpec);
            }
            Variant::Modules(m) => {
                let gamma = if t.weights.cos > 0.0 { t.weights.cos } else { FALLBACK_GAMMA };
                let con = if t.weights.con > 0.0 { t.weights.con } else { 1.0 };
                let (sim, g, c) = match m {
                    ModuleSet::BaseDec => (SimMode::Identity, 0.0, 0.0),
                    ModuleSet::Idec => (SimMode::Identity, gamma, 0.0),
                    ModuleSet::Gcl => (SimMode::Identity, 0.0, con),
                    ModuleSet::IdecGclCos => (SimMode::Identity, gamma, con),
                    ModuleSet::IdecGclSoftCos => (SimMode::Learned, gamma, con),
                };
                cfg.model.cluster.sim_mode = sim;
                t.weights.cos = g;
                t.weights.con = c;
            }
            Variant::GroupFrames(g) => cfg.model.group_frames = g,
            Variant::Noise(on) => t.augment.noise_enabled = on,
        }
    }
}

/// Parse `axis` (all values) or `axis=v1,v2,...`.
pub fn parse_axis(text: &str) -> Result<Vec<Variant>> {
    let (axis, values) = match text.split_once('=') {
        Some((a, v)) => (a.trim(), Some(v)),
        None => (text.trim(), None),
    };
    let list = |v: Option<&str>| -> Vec<String> {
        v.map(|s| s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()).unwrap_or_default()
    };
    let bad = |v: &str| Error::Config(format!("invalid value `{v}` for ablation axis `{axis}`"));
    let out: Vec<Variant> = match axis {
        "augmentation" => match values {
            None => AUG_VALUES.iter().map(|(_, a)| Variant::Augmentation(*a)).collect(),
            v => list(v)
                .iter()
                .map(|x| AUG_VALUES.iter().find(|(n, _)| n == x).map(|(_, a)| Variant::Augmentation(*a)).ok_or_else(|| bad(x)))
                .collect::<Result<_>>()?,
        },
        "modules" => match values {
            None => MODULE_VALUES.iter().map(|(_, m)| Variant::Modules(*m)).collect(),
            v => list(v)
                .iter()
                .map(|x| MODULE_VALUES.iter().find(|(n, _)| n == x).map(|(_, m)| Variant::Modules(*m)).ok_or_else(|| bad(x)))
                .collect::<Result<_>>()?,
        },
        "group_frames" => match values {
            None => GROUP_FRAMES_RANGE.map(Variant::GroupFrames).collect(),
            v => list(v)
                .iter()
                .map(|x| match x.parse::<usize>() {
                    Ok(g) if GROUP_FRAMES_RANGE.contains(&g) => Ok(Variant::GroupFrames(g)),
                    _ => Err(bad(x)),
                })
                .collect::<Result<_>>()?,
        },
        "noise" => match values {
            None => vec![Variant::Noise(false), Variant::Noise(true)],
            v => list(v)
                .iter()
                .map(|x| match x.as_str() {
                    "on" | "true" => Ok(Variant::Noise(true)),
                    "off" | "false" => Ok(Variant::Noise(false)),
                    _ => Err(bad(x)),
                })
                .collect::<Result<_>>()?,
        },
        other => return Err(Error::Config(format!("unknown ablation axis `{other}` (augmentation, modules, group_frames, noise)"))),
    };
    Ok(out)
}

/// Concatenate axes into one list of runs; every configuration is
/// validated against `base` before anything runs.
pub fn build_grid(base: &RunConfig, axes: &[String]) -> Result<Vec<Variant>> {
    let mut grid = Vec::new();
    for a in axes {
        grid.extend(parse_axis(a)?);
    }
    if grid.is_empty() {
        return Err(Error::Config("no configurations".into()));
    }
    for v in &grid {
        let mut c = base.clone();
        v.apply(&mut c);
        c.finalize().map_err(|e| Error::Config(format!("{}={}: {e}", v.axis(), v.value())))?;
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub score: IcbhiScore,
    pub seconds: f64,
}

pub fn run_grid<F>(base: &RunConfig, grid: &[Variant], mut run: F) -> Result<Vec<AblationRow>>
where
    F: FnMut(&Variant, &RunConfig) -> Result<IcbhiScore>,
{
    grid.iter()
        .map(|v| {
            let mut c = base.clone();
            v.apply(&mut c);
            c.finalize()?;
            let t0 = Instant::now();
            let score = run(v, &c)?;
            Ok(AblationRow { axis: v.axis().into(), value: v.value(), score, seconds: t0.elapsed().as_secs_f64() })
        })
        .collect()
}

pub fn rows_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("axis,value,Sp,Se,Score,seconds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{:.4},{:.4},{:.4},{:.1}", r.axis, r.value, r.score.sp, r.score.se, r.score.score, r.seconds);
    }
    out
}
