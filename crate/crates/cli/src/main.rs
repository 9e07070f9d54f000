//! `cycleguardian` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cycleguardian::ablation::{build_grid, rows_csv, run_grid};
use cycleguardian::config::RunConfig;
use cycleguardian::corpus::{build_corpus, make_split, parse_split_list, Corpus, Device, Regime, Side, SplitSpec};
use cycleguardian::evaluation::{predictions_csv, ScoreReport};
use cycleguardian::io::{read_wav, write_wav};
use cycleguardian::model::{Model, CHECKPOINT_SOFT_LIMIT};
use cycleguardian::trainer::{evaluate_cached, fit_cached, infer, Dataset, FeatureCache, Preprocessor, LOG_HEADER};
use cycleguardian::{Error, ModelF32};
use serde_json::{json, Value};

const CACHE_ENV: &str = "CG_CACHE_DIR";

#[derive(Parser, Debug)]
#[command(name = "cycleguardian", version, about = "Respiratory-cycle classifier: prepare data, train, evaluate, infer, ablate")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index an ICBHI-style directory and write corpus and split files.
    Prepare(PrepareArgs),
    /// Train a model; writes checkpoints, train.csv and a validation report.
    Train(TrainArgs),
    /// Score a checkpoint on a prepared split.
    Eval(EvalArgs),
    /// Predict class probabilities for a WAV file or a directory of them.
    Infer(InferArgs),
    /// Run a one-factor ablation grid and tabulate validation scores.
    Ablate(AblateArgs),
    /// Print parameter counts and configuration of a checkpoint or config.
    ModelInfo(ModelInfoArgs),
}

/// Configuration sources, applied in order: defaults, `--config` file,
/// `--set` / dotted flags, then the convenience flags.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Any dotted key may also be
    /// given directly, as in `--cluster.sim_mode identity`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// four_class or two_class.
    #[arg(long)]
    task: Option<String>,
    /// Sequential preprocessing and evaluation for bit-reproducible runs.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegimeArg {
    Official,
    Ratio,
    PatientFold,
    Device,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Directory of paired `<stem>.wav` / `<stem>.txt` files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split regime; `official` needs `--split-list`.
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    /// `stem<TAB>train|test` list for the official split.
    #[arg(long)]
    split_list: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = cycleguardian::corpus::PATIENT_FOLDS)]
    folds: usize,
    /// Device token held out by the `device` regime.
    #[arg(long)]
    device: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write each cycle's length-aligned 8 s audio under `<out>/audio`.
    #[arg(long)]
    cache_audio: bool,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Split file written by `prepare` (split.json or split.tsv).
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum SideArg {
    Train,
    Valid,
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Which side of the split to score; defaults to `valid` with a split, `all` without.
    #[arg(long, value_enum)]
    side: Option<SideArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A WAV file or a directory of WAV files (read in filename order).
    input: PathBuf,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Axis to sweep, as `name` or `name=v1,v2`; repeatable. Axes:
    /// augmentation, modules, group_frames, noise.
    #[arg(long = "axis")]
    axes: Vec<String>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
struct ModelInfoArgs {
    /// Inspect a checkpoint; without it the model is built from the config.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

/// Failure caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonFinite(_) => 3,
                Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    2
}

/// Rewrite `--a.b value` and `--a.b=value` into `--set a.b=value`.
fn expand_dotted_flags(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = args.into_iter().peekable();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--").filter(|b| b.split('=').next().is_some_and(|k| k.contains('.'))) else {
            out.push(a);
            continue;
        };
        let pair = if body.contains('=') {
            body.to_string()
        } else {
            match it.next_if(|n| !n.starts_with("--")) {
                Some(v) => format!("{body}={v}"),
                None => format!("{body}=true"),
            }
        };
        out.push("--set".into());
        out.push(pair);
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse_from(expand_dotted_flags(std::env::args())) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let res = match cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::ModelInfo(a) => cmd_model_info(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run_config(a: &ConfigArgs) -> Result<RunConfig> {
    let mut rc = RunConfig::default();
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        rc.apply_text(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        rc.set(k.trim(), v.trim()).map_err(|e| usage(e.to_string()))?;
    }
    let mut quick = Vec::new();
    if let Some(v) = a.epochs {
        quick.push(("train.epochs", v.to_string()));
    }
    if let Some(v) = a.batch {
        quick.push(("train.batch", v.to_string()));
    }
    if let Some(v) = a.seed {
        quick.push(("train.seed", v.to_string()));
    }
    if let Some(v) = &a.task {
        quick.push(("task", v.clone()));
    }
    if a.deterministic {
        quick.push(("train.deterministic", "true".into()));
    }
    for (k, v) in quick {
        rc.set(k, &v).map_err(|e| usage(e.to_string()))?;
    }
    rc.finalize().map_err(|e| usage(e.to_string()))?;
    Ok(rc)
}

fn feature_cache(rc: &RunConfig) -> Result<Option<FeatureCache>> {
    match std::env::var_os(CACHE_ENV) {
        Some(dir) if !dir.is_empty() => Ok(Some(FeatureCache::new(Path::new(&dir), &rc.model.tfr)?)),
        _ => Ok(None),
    }
}

/// One `manifest.json` per artifact-producing command.
struct Manifest {
    command: &'static str,
    out: PathBuf,
    started: Instant,
    timings: BTreeMap<String, f64>,
    fields: serde_json::Map<String, Value>,
}

impl Manifest {
    fn new(command: &'static str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Manifest { command, out: out.to_path_buf(), started: Instant::now(), timings: BTreeMap::new(), fields: Default::default() })
    }

    fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.fields.insert(key.to_string(), v.into());
    }

    fn config(&mut self, rc: &RunConfig) {
        self.set("config", json!(rc.entries()));
        self.set("seed", rc.train.seed);
    }

    fn time<R>(&mut self, phase: &str, f: impl FnOnce() -> R) -> R {
        let t0 = Instant::now();
        let r = f();
        self.timings.insert(phase.to_string(), t0.elapsed().as_secs_f64());
        r
    }

    fn write(&mut self, status: &str) -> Result<()> {
        self.timings.insert("total".into(), self.started.elapsed().as_secs_f64());
        let mut m = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "args": std::env::args().skip(1).collect::<Vec<_>>(),
            "out_dir": self.out.display().to_string(),
            "status": status,
            "timings_s": self.timings,
        });
        for (k, v) in &self.fields {
            m[k] = v.clone();
        }
        let p = self.out.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", p.display()))?;
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_split(path: &Path) -> Result<SplitSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading split {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing split {}", path.display()))?)
    } else {
        Ok(SplitSpec::from_tsv("custom", &text)?)
    }
}

struct Loaded {
    train: Dataset<f32>,
    valid: Dataset<f32>,
    regime: Option<String>,
}

/// Build the corpus and partition it by the split file; without a split
/// every cycle is training data.
fn load_data(a: &DataArgs, seed: u64) -> Result<Loaded> {
    let corpus: Corpus<f32> = build_corpus(&a.data)?;
    for w in &corpus.warnings {
        log::warn!("{w}");
    }
    let all = Dataset::from_cycles(&corpus.cycles, seed)?;
    let Some(sp) = &a.split else {
        return Ok(Loaded { train: all, valid: Dataset::default(), regime: None });
    };
    let spec = load_split(sp)?;
    let mut tr = Vec::new();
    let mut va = Vec::new();
    for (i, e) in all.examples.iter().enumerate() {
        match spec.side_of(&e.id) {
            Some(Side::Train) => tr.push(i),
            Some(Side::Valid) => va.push(i),
            None => return Err(Error::Split(format!("cycle {} is not in {}", e.id, sp.display())).into()),
        }
    }
    if tr.len() + va.len() != spec.assignment.len() {
        return Err(Error::Split(format!("{} names cycles missing from {}", sp.display(), a.data.display())).into());
    }
    Ok(Loaded { train: all.subset(&tr), valid: all.subset(&va), regime: Some(spec.regime) })
}

fn cmd_prepare(a: PrepareArgs) -> Result<()> {
    let mut man = Manifest::new("prepare", &a.out)?;
    let corpus: Corpus<f32> = man.time("load", || build_corpus(&a.data))?;
    for w in &corpus.warnings {
        log::warn!("{w}");
    }
    let regime = match (a.regime, &a.split_list) {
        (Some(RegimeArg::Official) | None, Some(list)) => {
            let text = fs::read_to_string(list).with_context(|| format!("reading {}", list.display()))?;
            Regime::Official(parse_split_list(&text)?)
        }
        (Some(RegimeArg::Official), None) => bail!(usage("--regime official needs --split-list")),
        (Some(RegimeArg::Ratio) | None, None) => Regime::Ratio8020,
        (Some(RegimeArg::PatientFold), _) => Regime::PatientFold { fold: a.fold, folds: a.folds },
        (Some(RegimeArg::Device), _) => {
            Regime::DeviceHoldout(Device::parse(a.device.as_deref().ok_or_else(|| usage("--regime device needs --device"))?))
        }
        (Some(RegimeArg::Ratio), Some(_)) => bail!(usage("--split-list only applies to the official regime")),
    };
    let split = make_split(&corpus.keys(), &regime, a.seed)?;
    write_file(&a.out.join("corpus.jsonl"), &corpus.manifest_jsonl())?;
    write_file(&a.out.join("split.tsv"), &split.to_tsv())?;
    write_file(&a.out.join("split.json"), &(serde_json::to_string_pretty(&split)? + "\n"))?;
    let mut artifacts = vec!["corpus.jsonl", "split.tsv", "split.json"];
    if a.cache_audio {
        let dir = a.out.join("audio");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let data = man.time("align", || Dataset::from_cycles(&corpus.cycles, a.seed))?;
        for e in &data.examples {
            write_wav(&dir.join(format!("{}.wav", e.id)), &e.audio.samples, cycleguardian::signal::TARGET_RATE)?;
        }
        artifacts.push("audio/");
    }
    let counts = corpus.class_counts();
    let (n_tr, n_va) = (split.ids(Side::Train).len(), split.ids(Side::Valid).len());
    man.set("seed", a.seed);
    man.set("regime", split.regime.clone());
    man.set("inputs", json!({ "data": a.data.display().to_string(), "split_list": a.split_list.as_ref().map(|p| p.display().to_string()) }));
    man.set("cycles", corpus.len());
    man.set("class_counts", json!({ "normal": counts[0], "crackle": counts[1], "wheeze": counts[2], "both": counts[3] }));
    man.set("split_sizes", json!({ "train": n_tr, "valid": n_va }));
    man.set("warnings", corpus.warnings.clone());
    man.set("artifacts", artifacts);
    man.write("ok")?;
    println!(
        "{} cycles (normal {}, crackle {}, wheeze {}, both {}); {}: {} train / {} valid -> {}",
        corpus.len(),
        counts[0],
        counts[1],
        counts[2],
        counts[3],
        split.regime,
        n_tr,
        n_va,
        a.out.display()
    );
    Ok(())
}

fn checkpoint_extra(rc: &RunConfig, epoch: Option<usize>, score: Option<f64>) -> Value {
    json!({ "config": rc.to_text(), "seed": rc.train.seed, "epoch": epoch, "score": score })
}

/// Validation report next to the training artifacts.
fn write_report(model: &ModelF32, data: &Dataset<f32>, stacks: &[cycleguardian::tfr::SpectrogramStack<f32>], batch: usize, dir: &Path) -> Result<ScoreReport> {
    let pre = Preprocessor::new(model)?;
    let (cm, preds) = evaluate_cached(model, &pre, data, stacks, batch)?;
    let names = model.cfg.task.class_names();
    let report = ScoreReport::build(&cm, names);
    report.write_to(dir)?;
    write_file(&dir.join("predictions.csv"), &predictions_csv(&preds, names))?;
    Ok(report)
}

fn stacks_for(model: &ModelF32, data: &Dataset<f32>, cache: Option<&FeatureCache>, sequential: bool) -> Result<Vec<cycleguardian::tfr::SpectrogramStack<f32>>> {
    let pre = Preprocessor::new(model)?;
    Ok(match cache {
        Some(c) => c.stacks(&pre, data, sequential)?,
        None => cycleguardian::trainer::cache_stacks(&pre, data, sequential)?,
    })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let rc = run_config(&a.cfg)?;
    let mut man = Manifest::new("train", &a.out)?;
    man.config(&rc);
    let data = man.time("load", || load_data(&a.data, rc.train.seed))?;
    man.set("regime", data.regime.clone());
    man.set("inputs", json!({ "data": a.data.data.display().to_string(), "split": a.data.split.as_ref().map(|p| p.display().to_string()) }));
    man.set("sizes", json!({ "train": data.train.len(), "valid": data.valid.len() }));
    if data.train.len() < 2 {
        return Err(Error::Split(format!("need at least 2 training cycles, found {}", data.train.len())).into());
    }
    let cache = feature_cache(&rc)?;
    let model = ModelF32::new(rc.model.clone(), rc.train.seed)?;
    let info = model.info();
    if info.checkpoint_bytes > CHECKPOINT_SOFT_LIMIT {
        log::warn!("checkpoint size {} bytes exceeds the {} byte soft limit", info.checkpoint_bytes, CHECKPOINT_SOFT_LIMIT);
    }
    let csv_path = a.out.join("train.csv");
    let mut csv = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    writeln!(csv, "{LOG_HEADER}")?;
    let (best, last) = (a.out.join("best.ckpt"), a.out.join("last.ckpt"));
    let t0 = Instant::now();
    let res = fit_cached(model, &data.train, &data.valid, &rc.train, cache.as_ref(), |ev| {
        writeln!(csv, "{}", ev.log.csv_row()).and_then(|_| csv.flush()).map_err(|e| Error::io(&csv_path, e))?;
        let score = ev.log.valid.map(|v| v.score);
        if ev.is_best {
            ev.model.save(&best, checkpoint_extra(&rc, Some(ev.log.epoch), score))?;
        }
        ev.model.save(&last, checkpoint_extra(&rc, Some(ev.log.epoch), score))?;
        eprintln!(
            "epoch {:>4}  L_total {:.4}  L_cls {:.4}{}",
            ev.log.epoch + 1,
            ev.log.losses.total,
            ev.log.losses.cls,
            ev.log.valid.map(|v| format!("  Sp {:.3} Se {:.3} Score {:.3}", v.sp, v.se, v.score)).unwrap_or_default()
        );
        Ok(())
    });
    man.timings.insert("fit".into(), t0.elapsed().as_secs_f64());
    let (model, summary) = match res {
        Ok(r) => r,
        Err(e) => {
            man.set("error", e.to_string());
            man.set("last_good_checkpoint", last.exists().then(|| last.display().to_string()));
            man.write("aborted")?;
            return Err(e.into());
        }
    };
    let final_path = a.out.join("final.ckpt");
    if last.exists() {
        fs::rename(&last, &final_path).with_context(|| format!("renaming {}", last.display()))?;
    } else {
        model.save(&final_path, checkpoint_extra(&rc, None, None))?;
    }
    let mut artifacts = vec!["train.csv", "final.ckpt"];
    if best.exists() {
        artifacts.push("best.ckpt");
    }
    man.set("best_epoch", summary.best_epoch);
    man.set("best_score", summary.best_score);
    if !data.valid.is_empty() {
        let stacks = man.time("report", || stacks_for(&model, &data.valid, cache.as_ref(), rc.train.deterministic))?;
        let report = write_report(&model, &data.valid, &stacks, rc.train.batch, &a.out)?;
        artifacts.extend(["report.json", "confusion.csv", "confusion.txt", "predictions.csv"]);
        man.set("final_score", json!({ "sp": report.sp, "se": report.se, "score": report.score }));
        println!("final validation ({}): Sp {:.2}%  Se {:.2}%  Score {:.2}%", report.classes.len(), report.sp, report.se, report.score);
    }
    man.set("artifacts", artifacts);
    man.write("ok")?;
    println!("trained {} epochs -> {}", summary.logs.len(), a.out.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(ModelF32, Value)> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mut man = Manifest::new("eval", &a.out)?;
    let (model, extra) = load_checkpoint(&a.checkpoint)?;
    let seed = extra["seed"].as_u64().unwrap_or(0);
    let data = man.time("load", || load_data(&a.data, seed))?;
    let side = a.side.unwrap_or(if a.data.split.is_some() { SideArg::Valid } else { SideArg::All });
    let set = match side {
        SideArg::Train => data.train,
        SideArg::Valid => data.valid,
        SideArg::All => Dataset { examples: data.train.examples.into_iter().chain(data.valid.examples).collect() },
    };
    if set.is_empty() {
        bail!(Error::Split(format!("no cycles on the {side:?} side")));
    }
    let mut rc = RunConfig { model: model.cfg.clone(), ..RunConfig::default() };
    if let Some(text) = extra["config"].as_str() {
        rc.apply_text(text)?;
    }
    let cache = feature_cache(&rc)?;
    let stacks = man.time("features", || stacks_for(&model, &set, cache.as_ref(), a.deterministic))?;
    let report = man.time("score", || write_report(&model, &set, &stacks, a.batch.max(1), &a.out))?;
    man.config(&rc);
    man.set("regime", data.regime);
    man.set("side", format!("{side:?}").to_lowercase());
    man.set("inputs", json!({ "checkpoint": a.checkpoint.display().to_string(), "data": a.data.data.display().to_string() }));
    man.set("score", json!({ "sp": report.sp, "se": report.se, "score": report.score }));
    man.set("artifacts", vec!["report.json", "confusion.csv", "confusion.txt", "predictions.csv"]);
    man.write("ok")?;
    println!("{} cycles: Sp {:.2}%  Se {:.2}%  Score {:.2}%", report.samples, report.sp, report.se, report.score);
    print!("{}", report.confusion_grid());
    Ok(())
}

fn wav_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        v.sort();
        if v.is_empty() {
            bail!(Error::Split(format!("no .wav files in {}", input.display())));
        }
        Ok(v)
    } else if input.exists() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(Error::io(input, std::io::Error::from(std::io::ErrorKind::NotFound)).into())
    }
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let pre = Preprocessor::new(&model)?;
    let names = model.cfg.task.class_names();
    let mut csv = String::from("id,pred");
    for c in names {
        csv.push_str(&format!(",p_{c}"));
    }
    csv.push('\n');
    for path in wav_inputs(&a.input)? {
        let audio = read_wav::<f32>(&path)?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let p = infer(&model, &pre, &audio.samples, audio.sample_rate, &id)?;
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        csv.push_str(&format!("{id},{}", names[best]));
        for v in &p {
            csv.push_str(&format!(",{v:.6}"));
        }
        csv.push('\n');
    }
    match &a.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let base = run_config(&a.cfg)?;
    let grid = build_grid(&base, &a.axes).map_err(|e| usage(e.to_string()))?;
    if a.data.split.is_none() {
        bail!(usage("ablate needs --split so every configuration is scored on held-out cycles"));
    }
    let mut man = Manifest::new("ablate", &a.out)?;
    man.config(&base);
    let data = man.time("load", || load_data(&a.data, base.train.seed))?;
    if data.valid.is_empty() || data.train.len() < 2 {
        bail!(Error::Split("ablation needs a non-empty validation side and two or more training cycles".into()));
    }
    let cache = feature_cache(&base)?;
    let rows = run_grid(&base, &grid, |v, rc| {
        eprintln!("ablation {}={}", v.axis(), v.value());
        let model = ModelF32::new(rc.model.clone(), rc.train.seed)?;
        let cache = match &cache {
            Some(_) => feature_cache(rc).map_err(|e| Error::Config(e.to_string()))?,
            None => None,
        };
        let (_, summary) = fit_cached(model, &data.train, &data.valid, &rc.train, cache.as_ref(), |_| Ok(()))?;
        summary.logs.last().and_then(|l| l.valid).ok_or_else(|| Error::InvalidArgument("run produced no validation score".into()))
    })?;
    let table = rows_csv(&rows);
    write_file(&a.out.join("ablation.csv"), &table)?;
    man.set("regime", data.regime);
    man.set("axes", a.axes.clone());
    man.set("rows", serde_json::to_value(&rows)?);
    man.set("artifacts", vec!["ablation.csv"]);
    man.write("ok")?;
    print!("{table}");
    Ok(())
}

fn cmd_model_info(a: ModelInfoArgs) -> Result<()> {
    let (model, config) = match &a.checkpoint {
        Some(p) => {
            let (m, extra) = load_checkpoint(p)?;
            let cfg = extra.get("config").cloned().unwrap_or(Value::Null);
            (m, cfg)
        }
        None => {
            let rc = run_config(&a.cfg)?;
            (ModelF32::new(rc.model.clone(), rc.train.seed)?, json!(rc.entries()))
        }
    };
    let info = model.info();
    let out = json!({
        "parameters": info.parameters,
        "trainable": info.trainable,
        "tensors": info.tensors,
        "checkpoint_bytes": info.checkpoint_bytes,
        "within_size_limit": info.checkpoint_bytes <= CHECKPOINT_SOFT_LIMIT,
        "groups": info.groups,
        "groups_of_frames": model.cfg.n_groups()?,
        "classes": model.cfg.task.class_names(),
        "config": config,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dotted_flags_become_set_pairs() {
        let got = expand_dotted_flags(strs(&["cg", "train", "--cluster.sim_mode", "identity", "--loss.gamma=0.1", "--mask.enabled", "--epochs", "2"]));
        assert_eq!(
            got,
            strs(&["cg", "train", "--set", "cluster.sim_mode=identity", "--set", "loss.gamma=0.1", "--set", "mask.enabled=true", "--epochs", "2"])
        );
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&usage("x")), 1);
        assert_eq!(exit_code(&anyhow::Error::from(Error::NonFinite("L_cls".into()))), 3);
        assert_eq!(exit_code(&anyhow::Error::from(Error::Split("x".into())).context("loading")), 2);
        assert_eq!(exit_code(&anyhow::Error::from(Error::Config("x".into()))), 1);
    }
}
