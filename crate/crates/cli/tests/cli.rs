use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use phonograph::tensor::{read_ptns, write_ptns};
use phonograph::Tensor;
use serde_json::Value;

const TINY: &str = r#"
[synth]
phonemes = 4
channels = 4
min_duration = 3
max_duration = 6
min_frames = 40
max_frames = 60
transition_width = 2
bonafide = 12
fake = 12

[recognizer]
input_channels = 4
conv_kernels = [3]
conv_strides = [2]
conv_channels = [8]
width = 8
blocks = 1
heads = 2
phonemes = 4

[pretrain]
epochs = 2
batch_size = 4

[training]
epochs = 2
batch_size = 4
clip_frames = 40
"#;

fn phonograph() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_phonograph"));
    cmd.env_remove("PHONOGRAPH_THREADS");
    cmd
}

fn run(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    phonograph().args(args.iter().map(|a| a.as_ref())).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn events(out: &Output) -> Vec<Value> {
    stdout(out)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{l:?}: {e}")))
        .collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn default_synth_is_a_quick_200_sample_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("corpus");
    let start = Instant::now();
    let r = run(&[&"synth", &"--out", &out]);
    assert!(start.elapsed() < Duration::from_secs(10));
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let ev = &events(&r)[0];
    assert_eq!(ev["event"], "synth");
    assert_eq!(ev["samples"], 200);
    assert_eq!((ev["train"].as_u64(), ev["val"].as_u64(), ev["test"].as_u64()), (Some(160), Some(20), Some(20)));
    assert!(out.join("config.toml").is_file());
    assert_eq!(fs::read_dir(out.join("features")).unwrap().count(), 200);
}

#[test]
fn synth_is_reproducible_and_guards_its_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let r = run(&[&"synth", &"--config", &cfg, &"--seed", &"7", &"--out", dir]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
    }
    assert_eq!(
        fs::read(a.join("manifest.tsv")).unwrap(),
        fs::read(b.join("manifest.tsv")).unwrap()
    );
    let echoed = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echoed.contains("seed = 7"));

    let again = run(&[&"synth", &"--config", &cfg, &"--out", &a]);
    assert_eq!(code(&again), 2);
    assert!(stderr(&again).contains("--force"));
    let forced = run(&[&"synth", &"--config", &cfg, &"--seed", &"8", &"--out", &a, &"--force"]);
    assert_eq!(code(&forced), 0);
    assert_ne!(
        fs::read(a.join("manifest.tsv")).unwrap(),
        fs::read(b.join("manifest.tsv")).unwrap()
    );
}

#[test]
fn input_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = write_config(tmp.path(), "[synth]\nbonafide = 0\nfake = 0\n");
    let r = run(&[&"synth", &"--config", &empty, &"--out", &tmp.path().join("x")]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("empty corpus"));

    let unknown = write_config(tmp.path(), "[synth]\nbonafied = 3\n");
    let r = run(&[&"synth", &"--config", &unknown, &"--out", &tmp.path().join("y")]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("bonafied"));

    let missing = tmp.path().join("nowhere/manifest.tsv");
    let r = run(&[&"pretrain", &"--manifest", &missing, &"--out", &tmp.path().join("z")]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("nowhere/manifest.tsv"), "{}", stderr(&r));
    assert!(!tmp.path().join("z").exists());

    let r = run(&[&"eval", &"--manifest", &missing, &"--checkpoint", &tmp.path(), &"--stage", &"pca"]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("post-gat"));

    let r = phonograph()
        .env("PHONOGRAPH_THREADS", "0")
        .args(["gradcheck"])
        .output()
        .unwrap();
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("PHONOGRAPH_THREADS"));
}

#[test]
fn pool_averages_label_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("frames.ptns");
    let labels = tmp.path().join("labels.txt");
    let out = tmp.path().join("pooled.ptns");
    let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
    write_ptns(&input, &x).unwrap();

    fs::write(&labels, "labels: 2 2 2 2\n").unwrap();
    let r = run(&[&"pool", &"--input", &input, &"--labels", &labels, &"--out", &out]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let pooled = read_ptns(&out).unwrap();
    assert_eq!(pooled.shape(), &[1, 2]);
    assert_eq!(pooled.data(), &[4.0, 5.0]);

    fs::write(&labels, "0 0 1 0").unwrap();
    let r = run(&[&"pool", &"--input", &input, &"--labels", &labels, &"--out", &out]);
    assert_eq!(code(&r), 2, "existing output needs --force");
    let r = run(&[&"pool", &"--input", &input, &"--labels", &labels, &"--out", &out, &"--force"]);
    assert_eq!(code(&r), 0);
    assert_eq!(events(&r)[0]["phonemes"], serde_json::json!([0, 1, 0]));
    assert_eq!(read_ptns(&out).unwrap().data(), &[2.0, 3.0, 5.0, 6.0, 7.0, 8.0]);

    fs::write(&labels, "0 0 1").unwrap();
    let r = run(&[&"pool", &"--input", &input, &"--labels", &labels, &"--out", &out, &"--force"]);
    assert_eq!(code(&r), 2);
}

#[test]
fn gradcheck_passes_on_the_default_config() {
    let r = phonograph().env("PHONOGRAPH_THREADS", "1").args(["gradcheck"]).output().unwrap();
    assert_eq!(code(&r), 0, "{}{}", stdout(&r), stderr(&r));
    let table = stdout(&r);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|l| l.ends_with("PASS")), "{table}");
}

fn pipeline(root: &Path, cfg: &Path, tag: &str) -> (PathBuf, PathBuf, String) {
    let corpus = root.join(format!("corpus-{tag}"));
    let rec = root.join(format!("rec-{tag}"));
    let det = root.join(format!("det-{tag}"));
    let r = run(&[&"synth", &"--config", &cfg, &"--seed", &"3", &"--out", &corpus]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let manifest = corpus.join("manifest.tsv");
    let r = run(&[&"pretrain", &"--manifest", &manifest, &"--out", &rec]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let ev = events(&r);
    assert_eq!(ev.iter().filter(|e| e["event"] == "pretrain").count(), 2);
    assert!(rec.join("config.txt").is_file() && rec.join("pretrain_log.jsonl").is_file());
    let r = run(&[&"train", &"--manifest", &manifest, &"--checkpoint", &rec, &"--out", &det]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let log = fs::read_to_string(det.join("train_log.jsonl")).unwrap();
    (manifest, det, log)
}

#[test]
fn commands_chain_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let (manifest, det, log) = pipeline(tmp.path(), &cfg, "a");
    let (_, _, log_again) = pipeline(tmp.path(), &cfg, "b");
    assert_eq!(log, log_again);

    let records: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    for key in ["epoch", "step", "l_cls", "l_clip", "l_aug", "val_auc", "val_eer"] {
        assert!(records[0].get(key).is_some(), "{key}");
    }
    // the seed given to synth travels with the echoed configuration
    assert!(fs::read_to_string(det.join("config.toml")).unwrap().contains("seed = 3"));

    let out = tmp.path().join("eval");
    let r = run(&[
        &"eval",
        &"--manifest",
        &manifest,
        &"--checkpoint",
        &det,
        &"--out",
        &out,
        &"--stage",
        &"post-gat",
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let report = stdout(&r);
    assert!(report.starts_with("split"));
    assert_eq!(report, fs::read_to_string(out.join("report.txt")).unwrap());
    for split in ["train", "val", "test"] {
        assert!(report.lines().any(|l| l.starts_with(split)), "{report}");
    }
    let csv = fs::read_to_string(out.join("embeddings-post-gat.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "id,label,dim0,dim1,dim2,dim3,dim4,dim5,dim6,dim7");
    assert_eq!(lines.count(), 2);
}

#[test]
fn untrained_detector_is_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &TINY
            .replace("bonafide = 12\nfake = 12", "bonafide = 100\nfake = 100")
            .replace("epochs = 2\nbatch_size = 4\nclip_frames", "epochs = 0\nbatch_size = 4\nclip_frames"),
    );
    let (manifest, det, log) = pipeline(tmp.path(), &cfg, "u");
    assert!(log.is_empty());
    let r = run(&[&"eval", &"--manifest", &manifest, &"--checkpoint", &det]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let report = stdout(&r);
    let train_row = report.lines().find(|l| l.starts_with("train")).unwrap();
    let auc: f64 = train_row.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((30.0..=70.0).contains(&auc), "{report}");
}

#[test]
fn non_finite_training_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &TINY.replace("[training]\n", "[training]\nlr_other = 1e300\nlr_encoder = 1e300\n"),
    );
    let corpus = tmp.path().join("corpus");
    let rec = tmp.path().join("rec");
    assert_eq!(code(&run(&[&"synth", &"--config", &cfg, &"--out", &corpus])), 0);
    let manifest = corpus.join("manifest.tsv");
    assert_eq!(code(&run(&[&"pretrain", &"--manifest", &manifest, &"--out", &rec])), 0);
    let r = run(&[
        &"train",
        &"--manifest",
        &manifest,
        &"--checkpoint",
        &rec,
        &"--out",
        &tmp.path().join("det"),
    ]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
    assert!(stderr(&r).contains("non-finite"));
}
