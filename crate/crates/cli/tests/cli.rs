use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cycleguardian::io::write_wav;
use cycleguardian::synth::{self, SynthConfig};
use serde_json::Value;

/// Small model settings that keep each CLI run to a few seconds.
const SMALL: [&str; 10] = [
    "--set",
    "model.gfe_widths=4,8,16",
    "--set",
    "model.d_g=32",
    "--set",
    "model.d_e=8",
    "--set",
    "model.d_z=32",
    "--set",
    "augment.enabled=false",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cycleguardian"));
    c.env_remove("CG_CACHE_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cycleguardian")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(dir: &Path, n: usize) -> PathBuf {
    let data = dir.join("data");
    let samples = synth::generate::<f32>(&SynthConfig { n_samples: n, seed: 4, ..Default::default() });
    synth::write_icbhi_dir(&data, &samples, 10_000).unwrap();
    data
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn prepare_writes_manifests_and_reproducible_splits() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture(tmp.path(), 3);
    let out = tmp.path().join("prep");
    let stdout = ok(&["prepare", "--data", p(&data), "--out", p(&out)]);
    assert!(stdout.starts_with("3 cycles"), "{stdout}");
    assert_eq!(fs::read_to_string(out.join("corpus.jsonl")).unwrap().lines().count(), 3);
    let man = json(&out.join("manifest.json"));
    assert_eq!(man["command"], "prepare");
    assert_eq!(man["cycles"], 3);
    assert_eq!(man["regime"], "ratio_80_20");
    let first = fs::read_to_string(out.join("split.tsv")).unwrap();
    ok(&["prepare", "--data", p(&data), "--out", p(&out)]);
    assert_eq!(fs::read_to_string(out.join("split.tsv")).unwrap(), first);
}

#[test]
fn prepare_official_list_and_missing_stems() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture(tmp.path(), 4);
    let list = tmp.path().join("list.txt");
    let stems: Vec<String> = (0..4).map(synth::stem_for).collect();
    fs::write(&list, format!("{}\ttrain\n{}\ttrain\n{}\ttest\n{}\ttrain\n", stems[0], stems[1], stems[2], stems[3])).unwrap();
    let out = tmp.path().join("prep");
    ok(&["prepare", "--data", p(&data), "--out", p(&out), "--split-list", p(&list)]);
    let man = json(&out.join("manifest.json"));
    assert_eq!(man["split_sizes"]["train"], 3);
    assert_eq!(man["split_sizes"]["valid"], 1);

    fs::remove_file(data.join(format!("{}.txt", stems[1]))).unwrap();
    let bad = run(&["prepare", "--data", p(&data), "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains(&stems[1]));
}

#[test]
fn train_eval_infer_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture(tmp.path(), 12);
    let prep = tmp.path().join("prep");
    // hold out one cycle of each class so Sp and Se are both defined
    let list = tmp.path().join("list.txt");
    let rows: String = (0..12).map(|i| format!("{}\t{}\n", synth::stem_for(i), if i >= 8 { "test" } else { "train" })).collect();
    fs::write(&list, rows).unwrap();
    ok(&["prepare", "--data", p(&data), "--out", p(&prep), "--split-list", p(&list)]);
    let split = prep.join("split.json");
    let run_dir = tmp.path().join("run");
    let mut args = vec!["train", "--data", p(&data), "--split", p(&split), "--out", p(&run_dir), "--epochs", "2", "--batch", "4"];
    args.extend(SMALL);
    args.extend(["--cluster.sim_mode", "identity"]);
    ok(&args);
    let csv = fs::read_to_string(run_dir.join("train.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.starts_with("epoch,lr,L_con,L_clu,L_cos,L_cls,L_total,Sp,Se,Score"));
    for f in ["final.ckpt", "best.ckpt", "report.json", "confusion.csv", "predictions.csv", "manifest.json"] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }
    let man = json(&run_dir.join("manifest.json"));
    assert_eq!(man["status"], "ok");
    assert_eq!(man["config"]["cluster.sim_mode"], "identity");
    assert_eq!(man["config"]["train.epochs"], "2");
    assert!(man["timings_s"]["fit"].as_f64().unwrap() > 0.0);

    let eval_dir = tmp.path().join("eval");
    let ck = run_dir.join("final.ckpt");
    let stdout = ok(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--split", p(&split), "--out", p(&eval_dir)]);
    assert!(stdout.contains("Score"), "{stdout}");
    let preds = fs::read_to_string(eval_dir.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("id,true,pred,p_normal,p_crackle,p_wheeze,p_both\n"));
    let report = json(&eval_dir.join("report.json"));
    assert_eq!(report["classes"].as_array().unwrap().len(), 4);
    assert_eq!(report["samples"].as_u64().unwrap() as usize, preds.lines().count() - 1);

    // one file, a short file, and a directory in filename order
    let wavs = tmp.path().join("wavs");
    fs::create_dir_all(&wavs).unwrap();
    let samples = synth::generate::<f32>(&SynthConfig { n_samples: 10, seed: 8, ..Default::default() });
    for (i, s) in samples.iter().enumerate() {
        write_wav(&wavs.join(format!("rec_{:02}.wav", 9 - i)), &s.samples, 10_000).unwrap();
    }
    let single = ok(&["infer", "--checkpoint", p(&ck), p(&wavs.join("rec_03.wav"))]);
    let lines: Vec<&str> = single.lines().collect();
    assert_eq!(lines[0], "id,pred,p_normal,p_crackle,p_wheeze,p_both");
    assert_eq!(lines.len(), 2);
    let probs: f64 = lines[1].split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((probs - 1.0).abs() < 1e-4, "{probs}");

    let short = tmp.path().join("short.wav");
    write_wav(&short, &samples[0].samples[..30_000], 10_000).unwrap();
    let out = ok(&["infer", "--checkpoint", p(&ck), p(&short)]);
    assert!(out.lines().nth(1).unwrap().starts_with("short,"));

    let csv_path = tmp.path().join("infer.csv");
    ok(&["infer", "--checkpoint", p(&ck), p(&wavs), "--out", p(&csv_path)]);
    let rows: Vec<String> = fs::read_to_string(&csv_path).unwrap().lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    let want: Vec<String> = (0..10).map(|i| format!("rec_{i:02}")).collect();
    assert_eq!(rows, want);

    let info = ok(&["model-info", "--checkpoint", p(&ck)]);
    let info: Value = serde_json::from_str(&info).unwrap();
    assert!(info["parameters"].as_u64().unwrap() > 0);
    assert_eq!(info["within_size_limit"], true);
}

#[test]
fn two_class_task_reports_two_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture(tmp.path(), 8);
    let prep = tmp.path().join("prep");
    ok(&["prepare", "--data", p(&data), "--out", p(&prep)]);
    let run_dir = tmp.path().join("run");
    let split = prep.join("split.tsv");
    let mut args = vec!["train", "--data", p(&data), "--split", p(&split), "--out", p(&run_dir), "--epochs", "1", "--batch", "4", "--task", "two_class"];
    args.extend(SMALL);
    ok(&args);
    let report = json(&run_dir.join("report.json"));
    assert_eq!(report["classes"], serde_json::json!(["normal", "abnormal"]));
    let preds = fs::read_to_string(run_dir.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("id,true,pred,p_normal,p_abnormal\n"));
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let missing = tmp.path().join("nothing-here");
    let out = tmp.path().join("o");
    assert_eq!(run(&["prepare", "--data", p(&missing), "--out", p(&out)]).status.code(), Some(2));

    let bad_ck = tmp.path().join("bad.ckpt");
    fs::write(&bad_ck, b"not a checkpoint").unwrap();
    let r = run(&["infer", "--checkpoint", p(&bad_ck), p(&bad_ck)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("checkpoint"));

    let r = run(&["model-info", "--set", "train.epochs=many"]);
    assert_eq!(r.status.code(), Some(1));
    let r = run(&["model-info", "--no.such.key", "3"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn ablate_validates_grid_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture(tmp.path(), 4);
    let out = tmp.path().join("abl");
    let r = run(&["ablate", "--data", p(&data), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("no configurations"));
    let r = run(&["ablate", "--data", p(&data), "--out", p(&out), "--axis", "group_frames=5,40"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.join("ablation.csv").exists());
}

#[test]
fn ablate_runs_one_row_per_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture(tmp.path(), 8);
    let prep = tmp.path().join("prep");
    ok(&["prepare", "--data", p(&data), "--out", p(&prep)]);
    let out = tmp.path().join("abl");
    let split = prep.join("split.json");
    let mut args = vec!["ablate", "--data", p(&data), "--split", p(&split), "--out", p(&out), "--axis", "noise", "--epochs", "1", "--batch", "4"];
    args.extend(SMALL);
    let stdout = ok(&args);
    assert!(stdout.starts_with("axis,value,Sp,Se,Score,seconds\n"));
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap().lines().count(), 3);
    assert_eq!(json(&out.join("manifest.json"))["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn feature_cache_directory_is_used() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture(tmp.path(), 4);
    let cache = tmp.path().join("cache");
    let run_dir = tmp.path().join("run");
    let mut args = vec!["train", "--data", p(&data), "--out", p(&run_dir), "--epochs", "1", "--batch", "2"];
    args.extend(SMALL);
    let out = bin().args(&args).env("CG_CACHE_DIR", &cache).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sub: Vec<_> = fs::read_dir(&cache).unwrap().collect();
    assert_eq!(sub.len(), 1);
    let files = fs::read_dir(sub[0].as_ref().unwrap().path()).unwrap().count();
    assert_eq!(files, 4);
}
