//! Recordings, annotations and dataset splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_wav;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Crackle,
    Wheeze,
    Both,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Normal, Label::Crackle, Label::Wheeze, Label::Both];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Crackle => "crackle",
            Label::Wheeze => "wheeze",
            Label::Both => "both",
        }
    }

    pub fn flags(self) -> (bool, bool) {
        match self {
            Label::Normal => (false, false),
            Label::Crackle => (true, false),
            Label::Wheeze => (false, true),
            Label::Both => (true, true),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown label {s:?}")))
    }
}

pub fn label_of(crackle: bool, wheeze: bool) -> Label {
    match (crackle, wheeze) {
        (false, false) => Label::Normal,
        (true, false) => Label::Crackle,
        (false, true) => Label::Wheeze,
        (true, true) => Label::Both,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Device {
    Meditron,
    LittC2SE,
    Litt3200,
    AKGC417L,
    Other(String),
}

impl Device {
    pub fn parse(token: &str) -> Device {
        match token {
            "Meditron" => Device::Meditron,
            "LittC2SE" => Device::LittC2SE,
            "Litt3200" => Device::Litt3200,
            "AKGC417L" => Device::AKGC417L,
            other => Device::Other(other.to_string()),
        }
    }

    pub fn token(&self) -> &str {
        match self {
            Device::Meditron => "Meditron",
            Device::LittC2SE => "LittC2SE",
            Device::Litt3200 => "Litt3200",
            Device::AKGC417L => "AKGC417L",
            Device::Other(s) => s,
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub stem: String,
    pub patient_id: u32,
    pub recording_index: String,
    pub chest_location: String,
    pub acquisition_mode: String,
    pub device: Device,
    pub sample_rate: u32,
}

/// Parse `patient_recidx_location_mode_device`. Returns `None` for names
/// that do not follow the pattern.
pub fn parse_stem(stem: &str) -> Option<RecordingMeta> {
    let f: Vec<&str> = stem.split('_').collect();
    if f.len() != 5 {
        return None;
    }
    let patient_id = f[0].parse().ok()?;
    Some(RecordingMeta {
        stem: stem.to_string(),
        patient_id,
        recording_index: f[1].into(),
        chest_location: f[2].into(),
        acquisition_mode: f[3].into(),
        device: Device::parse(f[4]),
        sample_rate: 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CycleAnnotation {
    pub start_s: f64,
    pub end_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
}

fn parse_flag(tok: &str, line: usize) -> Result<bool> {
    match tok {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Parse { line, msg: format!("flag must be 0 or 1, got {tok:?}") }),
    }
}

/// One annotation per non-blank line: `start end crackle wheeze`.
pub fn parse_annotation_file(text: &str) -> Result<Vec<CycleAnnotation>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse { line, msg: format!("expected 4 fields, found {}", fields.len()) });
        }
        let num = |t: &str| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { line, msg: format!("not a number: {t:?}") })
        };
        let (start_s, end_s) = (num(fields[0])?, num(fields[1])?);
        if end_s <= start_s {
            return Err(Error::Interval { line, start: start_s, end: end_s });
        }
        out.push(CycleAnnotation {
            start_s,
            end_s,
            crackle: parse_flag(fields[2], line)?,
            wheeze: parse_flag(fields[3], line)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RespiratoryCycle<T> {
    pub id: String,
    /// Mono samples at `meta.sample_rate`.
    pub audio: Vec<T>,
    pub start_s: f64,
    pub end_s: f64,
    pub crackle: bool,
    pub wheeze: bool,
    pub label: Label,
    pub meta: RecordingMeta,
    /// Interval overlaps the previous annotation of the same recording.
    pub overlaps_previous: bool,
}

impl<T: Scalar> RespiratoryCycle<T> {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn key(&self) -> CycleKey {
        CycleKey {
            id: self.id.clone(),
            stem: self.meta.stem.clone(),
            patient_id: self.meta.patient_id,
            device: self.meta.device.clone(),
        }
    }
}

/// Identity and grouping metadata of one cycle, enough to compute splits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleKey {
    pub id: String,
    pub stem: String,
    pub patient_id: u32,
    pub device: Device,
}

pub fn cycle_id(stem: &str, index: usize) -> String {
    format!("{stem}_{index:03}")
}

#[derive(Clone, Debug, Default)]
pub struct Corpus<T> {
    pub cycles: Vec<RespiratoryCycle<T>>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> Corpus<T> {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn keys(&self) -> Vec<CycleKey> {
        self.cycles.iter().map(|c| c.key()).collect()
    }

    pub fn class_counts(&self) -> [usize; 4] {
        let mut n = [0; 4];
        for c in &self.cycles {
            n[c.label.index()] += 1;
        }
        n
    }

    /// One JSON object per line, in corpus order.
    pub fn manifest_jsonl(&self) -> String {
        let mut s = String::new();
        for c in &self.cycles {
            let rec = serde_json::json!({
                "id": c.id,
                "label": c.label.name(),
                "patient": c.meta.patient_id,
                "device": c.meta.device.token(),
                "duration": c.duration(),
                "start_s": c.start_s,
                "end_s": c.end_s,
                "overlap": c.overlaps_previous,
            });
            s.push_str(&rec.to_string());
            s.push('\n');
        }
        s
    }
}

fn cycles_of_recording<T: Scalar>(dir: &Path, meta: RecordingMeta) -> Result<(Vec<RespiratoryCycle<T>>, Vec<String>)> {
    let txt = dir.join(format!("{}.txt", meta.stem));
    let text = fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?;
    let anns = parse_annotation_file(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", txt.display()) },
        other => other,
    })?;
    let audio = read_wav::<T>(&dir.join(format!("{}.wav", meta.stem)))?;
    let meta = RecordingMeta { sample_rate: audio.sample_rate, ..meta };
    let sr = audio.sample_rate as f64;
    let mut warnings = Vec::new();
    if let Device::Other(d) = &meta.device {
        warnings.push(format!("{}: unknown device token {d:?} kept verbatim", meta.stem));
    }
    let mut cycles = Vec::with_capacity(anns.len());
    let mut prev_end = f64::NEG_INFINITY;
    for (i, a) in anns.iter().enumerate() {
        let lo = ((a.start_s * sr).round().max(0.0) as usize).min(audio.samples.len());
        let hi = ((a.end_s * sr).round() as usize).min(audio.samples.len());
        let overlaps_previous = a.start_s < prev_end;
        prev_end = prev_end.max(a.end_s);
        if hi <= lo {
            warnings.push(format!("{}: cycle {i} lies outside the audio, skipped", meta.stem));
            continue;
        }
        if overlaps_previous {
            warnings.push(format!("{}: cycle {i} overlaps an earlier interval", meta.stem));
        }
        cycles.push(RespiratoryCycle {
            id: cycle_id(&meta.stem, i),
            audio: audio.samples[lo..hi].to_vec(),
            start_s: a.start_s,
            end_s: a.end_s,
            crackle: a.crackle,
            wheeze: a.wheeze,
            label: label_of(a.crackle, a.wheeze),
            meta: meta.clone(),
            overlaps_previous,
        });
    }
    Ok((cycles, warnings))
}

/// Load every paired `<stem>.wav` / `<stem>.txt` under `dir`.
pub fn build_corpus<T: Scalar>(dir: &Path) -> Result<Corpus<T>> {
    let mut wavs = BTreeSet::new();
    let mut txts = BTreeSet::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let (Some(stem), Some(ext)) = (p.file_stem().and_then(|s| s.to_str()), p.extension().and_then(|s| s.to_str()))
        else {
            continue;
        };
        if parse_stem(stem).is_none() {
            continue;
        }
        match ext {
            "wav" => wavs.insert(stem.to_string()),
            "txt" => txts.insert(stem.to_string()),
            _ => false,
        };
    }
    let unpaired: Vec<String> = wavs.symmetric_difference(&txts).cloned().collect();
    if !unpaired.is_empty() {
        return Err(Error::MissingPair(unpaired));
    }
    let mut corpus = Corpus { cycles: Vec::new(), warnings: Vec::new() };
    if wavs.is_empty() {
        let w = format!("{}: no recordings found", dir.display());
        log::warn!("{w}");
        corpus.warnings.push(w);
        return Ok(corpus);
    }
    let stems: Vec<String> = wavs.into_iter().collect();
    let parts: Vec<_> = stems
        .par_iter()
        .map(|s| cycles_of_recording::<T>(dir, parse_stem(s).expect("filtered above")))
        .collect::<Result<_>>()?;
    for (cycles, warnings) in parts {
        for w in &warnings {
            log::warn!("{w}");
        }
        corpus.cycles.extend(cycles);
        corpus.warnings.extend(warnings);
    }
    Ok(corpus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Valid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regime {
    /// Externally supplied `stem → train/test` list.
    Official(BTreeMap<String, Side>),
    Ratio8020,
    PatientFold { fold: usize, folds: usize },
    DeviceHoldout(Device),
}

impl Regime {
    pub fn describe(&self) -> String {
        match self {
            Regime::Official(_) => "official_60_40".into(),
            Regime::Ratio8020 => "ratio_80_20".into(),
            Regime::PatientFold { fold, folds } => format!("patient_fold({fold} of {folds})"),
            Regime::DeviceHoldout(d) => format!("device_holdout({d})"),
        }
    }
}

/// Parse `stem<TAB>train|test` lines (any whitespace accepted).
pub fn parse_split_list(text: &str) -> Result<BTreeMap<String, Side>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let f: Vec<&str> = raw.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let side = match f.as_slice() {
            [_, "train"] => Side::Train,
            [_, "test"] | [_, "valid"] => Side::Valid,
            _ => return Err(Error::Parse { line: i + 1, msg: "expected `stem<TAB>train|test`".into() }),
        };
        if out.insert(f[0].to_string(), side).is_some() {
            return Err(Error::Parse { line: i + 1, msg: format!("stem {} listed twice", f[0]) });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub regime: String,
    pub assignment: BTreeMap<String, Side>,
}

impl SplitSpec {
    pub fn ids(&self, side: Side) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &s)| s == side).map(|(k, _)| k.as_str()).collect()
    }

    pub fn side_of(&self, id: &str) -> Option<Side> {
        self.assignment.get(id).copied()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (id, side) in &self.assignment {
            s.push_str(id);
            s.push('\t');
            s.push_str(if *side == Side::Train { "train" } else { "valid" });
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(regime: &str, text: &str) -> Result<Self> {
        Ok(SplitSpec { regime: regime.to_string(), assignment: parse_split_list(text)? })
    }
}

pub const PATIENT_FOLDS: usize = 5;

/// Patient ids in fold order: sorted, shuffled with `seed`, dealt round-robin.
pub fn patient_folds(keys: &[CycleKey], folds: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut patients: Vec<u32> = keys.iter().map(|k| k.patient_id).collect::<BTreeSet<_>>().into_iter().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, p) in patients.into_iter().enumerate() {
        out[i % folds].push(p);
    }
    out
}

pub fn make_split(keys: &[CycleKey], regime: &Regime, seed: u64) -> Result<SplitSpec> {
    let mut assignment = BTreeMap::new();
    match regime {
        Regime::Official(list) => {
            let stems: BTreeSet<&str> = keys.iter().map(|k| k.stem.as_str()).collect();
            if let Some(unknown) = list.keys().find(|s| !stems.contains(s.as_str())) {
                return Err(Error::Split(format!("split list names unknown recording {unknown}")));
            }
            for k in keys {
                let side = list
                    .get(&k.stem)
                    .ok_or_else(|| Error::Split(format!("recording {} missing from split list", k.stem)))?;
                assignment.insert(k.id.clone(), *side);
            }
        }
        Regime::Ratio8020 => {
            let mut ids: Vec<&str> = keys.iter().map(|k| k.id.as_str()).collect();
            ids.sort_unstable();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_train = (ids.len() as f64 * 0.8).round() as usize;
            for (i, id) in ids.into_iter().enumerate() {
                assignment.insert(id.to_string(), if i < n_train { Side::Train } else { Side::Valid });
            }
        }
        Regime::PatientFold { fold, folds } => {
            if *folds < 2 || fold >= folds {
                return Err(Error::Split(format!("fold {fold} out of range for {folds} folds")));
            }
            let held: BTreeSet<u32> = patient_folds(keys, *folds, seed)[*fold].iter().copied().collect();
            for k in keys {
                assignment.insert(k.id.clone(), if held.contains(&k.patient_id) { Side::Valid } else { Side::Train });
            }
        }
        Regime::DeviceHoldout(d) => {
            for k in keys {
                assignment.insert(k.id.clone(), if &k.device == d { Side::Valid } else { Side::Train });
            }
        }
    }
    if assignment.len() != keys.len() {
        return Err(Error::Split("duplicate cycle ids in corpus".into()));
    }
    Ok(SplitSpec { regime: regime.describe(), assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::write_wav;

    #[test]
    fn annotation_lines() {
        let a = parse_annotation_file("0.036 0.579 0 0\n1.2\t2.9 1 1\n\n").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0], CycleAnnotation { start_s: 0.036, end_s: 0.579, crackle: false, wheeze: false });
        assert_eq!(a[1], CycleAnnotation { start_s: 1.2, end_s: 2.9, crackle: true, wheeze: true });
        assert!(matches!(parse_annotation_file("0 1 0 0\n2.0 1.0 0 1"), Err(Error::Interval { line: 2, .. })));
        assert!(matches!(parse_annotation_file("0 1 0\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_annotation_file("0 1 0 0\n0 x 0 0"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_annotation_file("0 1 2 0"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn label_mapping_is_a_bijection() {
        let mut seen = BTreeSet::new();
        for c in [false, true] {
            for w in [false, true] {
                let l = label_of(c, w);
                assert_eq!(l.flags(), (c, w));
                seen.insert(l);
            }
        }
        assert_eq!(seen.len(), 4);
        assert_eq!(label_of(false, false), Label::Normal);
        assert_eq!(label_of(true, false), Label::Crackle);
        assert_eq!(label_of(true, true), Label::Both);
    }

    #[test]
    fn stem_fields() {
        let m = parse_stem("101_1b1_Al_sc_Meditron").unwrap();
        assert_eq!((m.patient_id, m.chest_location.as_str(), m.device.clone()), (101, "Al", Device::Meditron));
        assert_eq!(parse_stem("226_1b1_Pl_sc_NewScope").unwrap().device, Device::Other("NewScope".into()));
        assert!(parse_stem("README").is_none());
        assert!(parse_stem("abc_1b1_Al_sc_Meditron").is_none());
    }

    fn fixture(dir: &Path, stem: &str, lines: &str, secs: f64) {
        let n = (secs * 4000.0) as usize;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin() * 0.3).collect();
        write_wav(&dir.join(format!("{stem}.wav")), &x, 4000).unwrap();
        fs::write(dir.join(format!("{stem}.txt")), lines).unwrap();
    }

    #[test]
    fn corpus_from_directory() {
        let d = tempfile::tempdir().unwrap();
        fixture(d.path(), "101_1b1_Al_sc_Meditron", "0.0 1.0 0 0\n1.0 2.5 1 0\n2.4 3.0 1 1\n", 3.0);
        fs::write(d.path().join("notes.txt"), "not an annotation").unwrap();
        let c = build_corpus::<f32>(d.path()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.cycles[1].id, "101_1b1_Al_sc_Meditron_001");
        assert_eq!(c.cycles[1].audio.len(), 6000);
        assert_eq!(c.cycles[2].label, Label::Both);
        assert!(c.cycles[2].overlaps_previous && !c.cycles[1].overlaps_previous);
        assert_eq!(c.class_counts(), [1, 1, 0, 1]);
        let m = c.manifest_jsonl();
        assert_eq!(m.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(m.lines().next().unwrap()).unwrap();
        assert_eq!(first["label"], "normal");
        assert_eq!(first["device"], "Meditron");
    }

    #[test]
    fn unpaired_and_empty_directories() {
        let d = tempfile::tempdir().unwrap();
        let c = build_corpus::<f32>(d.path()).unwrap();
        assert!(c.is_empty() && !c.warnings.is_empty());
        fixture(d.path(), "102_1b1_Ar_sc_Meditron", "0 1 0 0\n", 1.0);
        fs::write(d.path().join("103_1b1_Ar_sc_Litt3200.txt"), "0 1 0 0\n").unwrap();
        match build_corpus::<f32>(d.path()) {
            Err(Error::MissingPair(s)) => assert_eq!(s, vec!["103_1b1_Ar_sc_Litt3200".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    fn keys() -> Vec<CycleKey> {
        let devices = [Device::Meditron, Device::LittC2SE, Device::Litt3200, Device::AKGC417L];
        (0..120)
            .map(|i| {
                let p = 100 + (i % 23) as u32;
                let stem = format!("{p}_1b1_Al_sc_{}", devices[p as usize % 4]);
                CycleKey { id: cycle_id(&stem, i), stem, patient_id: p, device: devices[p as usize % 4].clone() }
            })
            .collect()
    }

    fn partition_holds(keys: &[CycleKey], s: &SplitSpec) {
        assert_eq!(s.assignment.len(), keys.len());
        for k in keys {
            assert!(s.side_of(&k.id).is_some());
        }
        assert_eq!(s.ids(Side::Train).len() + s.ids(Side::Valid).len(), keys.len());
    }

    #[test]
    fn patient_folds_are_disjoint_and_deterministic() {
        let k = keys();
        let mut valid_union = BTreeSet::new();
        for f in 0..5 {
            let r = Regime::PatientFold { fold: f, folds: 5 };
            let a = make_split(&k, &r, 7).unwrap();
            assert_eq!(a, make_split(&k, &r, 7).unwrap());
            partition_holds(&k, &a);
            let side_of = |p: u32| k.iter().filter(|c| c.patient_id == p).map(|c| a.side_of(&c.id).unwrap()).collect::<BTreeSet<_>>();
            for c in &k {
                assert_eq!(side_of(c.patient_id).len(), 1);
            }
            for id in a.ids(Side::Valid) {
                assert!(valid_union.insert(id.to_string()), "cycle in two validation folds");
            }
        }
        assert_eq!(valid_union.len(), k.len());
        assert!(make_split(&k, &Regime::PatientFold { fold: 5, folds: 5 }, 7).is_err());
    }

    #[test]
    fn ratio_and_device_splits() {
        let k = keys();
        let r = make_split(&k, &Regime::Ratio8020, 1).unwrap();
        partition_holds(&k, &r);
        assert_eq!(r.ids(Side::Train).len(), 96);
        assert_ne!(r, make_split(&k, &Regime::Ratio8020, 2).unwrap());
        let d = make_split(&k, &Regime::DeviceHoldout(Device::Meditron), 0).unwrap();
        partition_holds(&k, &d);
        let train_meditron = k.iter().filter(|c| d.side_of(&c.id) == Some(Side::Train) && c.device == Device::Meditron).count();
        assert_eq!(train_meditron, 0);
        assert!(!d.ids(Side::Valid).is_empty());
    }

    #[test]
    fn official_list_must_cover_corpus_exactly() {
        let k = keys();
        let stems: BTreeSet<&str> = k.iter().map(|c| c.stem.as_str()).collect();
        let mut text: String = stems.iter().enumerate().map(|(i, s)| format!("{s}\t{}\n", if i % 3 == 0 { "test" } else { "train" })).collect();
        let list = parse_split_list(&text).unwrap();
        let s = make_split(&k, &Regime::Official(list), 0).unwrap();
        partition_holds(&k, &s);
        text.push_str("999_1b1_Al_sc_Meditron\ttrain\n");
        assert!(matches!(make_split(&k, &Regime::Official(parse_split_list(&text).unwrap()), 0), Err(Error::Split(_))));
        let partial = parse_split_list(&format!("{}\ttrain\n", stems.iter().next().unwrap())).unwrap();
        assert!(make_split(&k, &Regime::Official(partial), 0).is_err());
        assert!(parse_split_list("a\tmaybe\n").is_err());
    }

    #[test]
    fn split_tsv_roundtrip() {
        let k = keys();
        let s = make_split(&k, &Regime::Ratio8020, 3).unwrap();
        assert_eq!(SplitSpec::from_tsv(&s.regime, &s.to_tsv()).unwrap(), s);
    }
}
