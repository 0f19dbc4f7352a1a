use std::cell::RefCell;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use phonograph::check::{gradient_suite, render_checks};
use phonograph::config::CONFIG_ECHO;
use phonograph::eval::{render_report, write_embeddings_csv};
use phonograph::phoneme::{pool_tensor, segment};
use phonograph::pipeline::{embed_split, pretrain_recognizer, score_split, train_detector};
use phonograph::tensor::{read_ptns, write_ptns};
use phonograph::{
    build_corpus, ClassLabel, DetectorModel, Manifest, RecognizerModel, RunConfig, Split, SplitMetrics, Stage,
};
use serde::Serialize;

use crate::output::{emit, event_line, json_lines, prepare_dir, write_file, Failure};
use crate::Common;

pub const PRETRAIN_LOG: &str = "pretrain_log.jsonl";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const REPORT: &str = "report.txt";
pub const SCORES: &str = "scores.tsv";

/// `--config` if given, else the configuration echoed next to `fallback`,
/// else the defaults; `--seed` then overrides every seed.
fn load_config(common: &Common, fallback: Option<&Path>) -> Result<RunConfig, Failure> {
    let echoed = fallback.map(|d| d.join(CONFIG_ECHO)).filter(|p| p.is_file());
    let mut cfg = match common.config.as_deref().or(echoed.as_deref()) {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn manifest_dir(path: &Path) -> Option<&Path> {
    path.parent().map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
}

#[derive(Serialize)]
struct SynthSummary {
    samples: usize,
    bonafide: usize,
    fake: usize,
    train: usize,
    val: usize,
    test: usize,
}

pub fn synth(common: &Common, out: &Path, force: bool) -> Result<(), Failure> {
    let cfg = load_config(common, None)?;
    cfg.validate()?;
    prepare_dir(out, force)?;
    let manifest = build_corpus(&cfg.synth, out)?;
    cfg.echo(out)?;
    let count = |f: &dyn Fn(&phonograph::data::ManifestEntry) -> bool| manifest.entries.iter().filter(|e| f(e)).count();
    emit(
        "synth",
        &SynthSummary {
            samples: manifest.entries.len(),
            bonafide: count(&|e| e.label == ClassLabel::Bonafide),
            fake: count(&|e| e.label == ClassLabel::Fake),
            train: count(&|e| e.split == Split::Train),
            val: count(&|e| e.split == Split::Val),
            test: count(&|e| e.split == Split::Test),
        },
    );
    Ok(())
}

#[derive(Serialize)]
struct PretrainSummary {
    epochs: usize,
    best_val_per: f64,
}

pub fn pretrain(common: &Common, manifest_path: &Path, out: &Path, force: bool) -> Result<(), Failure> {
    let manifest = Manifest::read(manifest_path)?;
    let cfg = load_config(common, manifest_dir(manifest_path))?;
    cfg.validate()?;
    prepare_dir(out, force)?;
    cfg.echo(out)?;
    let (model, log) = pretrain_recognizer(&cfg, &manifest)?;
    model.save(out)?;
    write_file(&out.join(PRETRAIN_LOG), &json_lines(&log))?;
    for r in &log {
        emit("pretrain", r);
    }
    let best = log.iter().map(|r| r.val_per).fold(f64::INFINITY, f64::min);
    emit(
        "pretrained",
        &PretrainSummary {
            epochs: log.len(),
            best_val_per: best,
        },
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    best_epoch: usize,
    best_val_auc: f64,
}

pub fn train(common: &Common, manifest_path: &Path, checkpoint: &Path, out: &Path, force: bool) -> Result<(), Failure> {
    let manifest = Manifest::read(manifest_path)?;
    let recognizer = RecognizerModel::load(checkpoint)?;
    let cfg = load_config(common, Some(checkpoint))?;
    cfg.training.validate()?;
    cfg.detector.validate()?;
    prepare_dir(out, force)?;
    cfg.echo(out)?;
    let log = RefCell::new(String::new());
    let result = train_detector(&cfg, recognizer, &manifest, |r| {
        println!("{}", event_line("epoch", r));
        log.borrow_mut()
            .push_str(&(serde_json::to_string(r).expect("records serialize") + "\n"));
    });
    write_file(&out.join(TRAIN_LOG), &log.borrow())?;
    let (model, outcome) = result?;
    model.save(out)?;
    emit(
        "trained",
        &TrainSummary {
            epochs: outcome.log.len(),
            best_epoch: outcome.best_epoch,
            best_val_auc: outcome.best_auc,
        },
    );
    Ok(())
}

pub fn eval(
    common: &Common,
    manifest_path: &Path,
    checkpoint: &Path,
    out: Option<&Path>,
    stage: Option<Stage>,
    force: bool,
) -> Result<(), Failure> {
    if stage.is_some() && out.is_none() {
        return Err(Failure::Input("--stage needs --out for the embedding file".into()));
    }
    let manifest = Manifest::read(manifest_path)?;
    let model = DetectorModel::load(checkpoint)?;
    let cfg = load_config(common, Some(checkpoint))?;
    let clip_frames = cfg.training.clip_frames;
    if let Some(dir) = out {
        prepare_dir(dir, force)?;
        cfg.echo(dir)?;
    }

    let mut rows = Vec::new();
    let mut scores_tsv = String::from("split\tid\tlabel\tscore\n");
    for split in Split::ALL {
        let entries: Vec<_> = manifest.split(split).collect();
        let has = |c| entries.iter().any(|e| e.label == c);
        if entries.is_empty() {
            continue;
        }
        let scores = score_split(&model, &manifest, split, clip_frames)?;
        for s in scores.entries() {
            let _ = writeln!(scores_tsv, "{split}\t{}\t{}\t{}", s.id, s.label, s.score);
        }
        if has(ClassLabel::Bonafide) && has(ClassLabel::Fake) {
            rows.push(SplitMetrics::compute(split.as_str(), &scores)?);
        }
    }
    let report = render_report(&rows);
    print!("{report}");

    if let Some(dir) = out {
        write_file(&dir.join(REPORT), &report)?;
        write_file(&dir.join(SCORES), &scores_tsv)?;
        if let Some(stage) = stage {
            let split = if manifest.split(Split::Test).next().is_some() {
                Split::Test
            } else {
                Split::Train
            };
            let embeddings = embed_split(&model, &manifest, split, clip_frames, stage)?;
            write_embeddings_csv(&dir.join(format!("embeddings-{stage}.csv")), &embeddings)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PoolSummary {
    frames: usize,
    phonemes: Vec<usize>,
}

/// Parses whitespace-separated frame labels with an optional `labels:` prefix.
pub fn parse_labels(text: &str) -> Result<Vec<usize>, Failure> {
    let body = text.trim();
    let body = body.strip_prefix("labels:").unwrap_or(body);
    body.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Failure::Input(format!("label {t:?} is not a non-negative integer")))
        })
        .collect()
}

pub fn pool(input: &Path, labels_path: &Path, out: &Path, force: bool) -> Result<(), Failure> {
    let features = read_ptns(input)?;
    let text = fs::read_to_string(labels_path).map_err(|e| Failure::Input(format!("{}: {e}", labels_path.display())))?;
    let labels = parse_labels(&text)?;
    if features.rank() != 2 || labels.len() != features.rows() {
        return Err(Failure::Input(format!(
            "{} labels for a feature file of shape {:?}",
            labels.len(),
            features.shape()
        )));
    }
    if out.exists() && !force {
        return Err(Failure::Input(format!("{} exists; pass --force to overwrite", out.display())));
    }
    let seg = segment(&labels)?;
    write_ptns(out, &pool_tensor(&features, &seg)?)?;
    emit(
        "pool",
        &PoolSummary {
            frames: labels.len(),
            phonemes: seg.phonemes(),
        },
    );
    Ok(())
}

pub fn gradcheck(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common, None)?;
    cfg.recognizer.validate()?;
    let checks = gradient_suite(&cfg.recognizer, cfg.detector.seed)?;
    print!("{}", render_checks(&checks));
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Numerical(format!("{failed} of {} blocks failed", checks.len())));
    }
    Ok(())
}
