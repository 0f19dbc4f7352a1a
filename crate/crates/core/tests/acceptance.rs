//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Criterion numbers may be passed as arguments
//! to run a subset.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phonograph::check::gradient_suite;
use phonograph::data::{build_corpus, Manifest, Split, SynthConfig};
use phonograph::detector::{train_with_validator, DetectorConfig, DetectorModel, TrainingConfig};
use phonograph::eval::{auc, eer, ScoreSet};
use phonograph::gat::{build_edges, Gal, ATTENTION_SLOPE, DEFAULT_SPAN};
use phonograph::nn::{Ctx, ParamGroup, ParamStore};
use phonograph::phoneme::{adaptive_phoneme_pool, rpsa, segment, ClassLabel, FrameSequence};
use phonograph::pipeline::{evaluate_split, pretrain_recognizer, train_detector, utterances};
use phonograph::recognizer::{ctc_loss, evaluate_per, per, pretrain, PretrainConfig, RecognizerConfig, RecognizerModel};
use phonograph::tensor::{Tape, Tensor};
use phonograph::RunConfig;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

// ---------------------------------------------------------------- 1

fn gradient_suite_check() -> Check {
    let start = Instant::now();
    let cfg = RecognizerConfig::default();
    let mut worst = (0.0f64, String::new());
    let mut blocks = 0;
    for seed in 0..20 {
        let checks = gradient_suite(&cfg, seed).map_err(|e| e.to_string())?;
        blocks = checks.len();
        for c in &checks {
            if c.max_rel_err > worst.0 {
                worst = (c.max_rel_err, format!("{} (seed {seed})", c.block));
            }
            ensure(
                c.passed && c.max_rel_err < 1e-4 && c.coords > 0,
                format!("{} at seed {seed}: max rel err {:.3e}", c.block, c.max_rel_err),
            )?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{blocks} blocks x 20 seeds, worst {:.2e} in {}, {:.1?}",
        worst.0, worst.1, elapsed
    ))
}

// ---------------------------------------------------------------- 2

/// Sums the probability of every frame path that collapses to `target`.
fn ctc_by_enumeration(logits: &[Vec<f64>], target: &[usize]) -> f64 {
    let classes = logits[0].len();
    let blank = classes - 1;
    let probs: Vec<Vec<f64>> = logits
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter().map(|v| (v - m).exp() / z).collect()
        })
        .collect();
    let frames = logits.len();
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    loop {
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &c in &path {
            if Some(c) != prev && c != blank {
                collapsed.push(c);
            }
            prev = Some(c);
        }
        if collapsed == target {
            total += path.iter().enumerate().map(|(t, &c)| probs[t][c]).product::<f64>();
        }
        // next path in odometer order
        let mut t = 0;
        while t < frames {
            path[t] += 1;
            if path[t] < classes {
                break;
            }
            path[t] = 0;
            t += 1;
        }
        if t == frames {
            break;
        }
    }
    -total.ln()
}

fn ctc_oracle_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut cases, mut worst) = (0, 0.0f64);
    while cases < 1200 {
        let frames = rng.random_range(1..=8);
        let classes = rng.random_range(2..=4);
        let len = rng.random_range(1..=3);
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(0..classes - 1)).collect();
        let needed = target.len() + target.windows(2).filter(|w| w[0] == w[1]).count();
        if needed > frames {
            continue;
        }
        let logits = Tensor::randn(&[frames, classes], 1.5, &mut rng);
        let tape = Tape::new();
        let got = ctc_loss(tape.constant(logits.clone()), &target)
            .map_err(|e| e.to_string())?
            .item();
        let want = ctc_by_enumeration(&rows(&logits), &target);
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure(err <= 1e-9, format!("T={frames} C={classes} target={target:?}: {got} vs {want}"))?;
        cases += 1;
    }
    Ok(format!("{cases} instances, max abs err {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn pooling_oracle_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let frames = rng.random_range(1..=40);
        let width = rng.random_range(1..=6);
        let labels: Vec<usize> = (0..frames).map(|_| rng.random_range(0..3)).collect();
        let x = Tensor::randn(&[frames, width], 1.0, &mut rng);
        let seg = segment(&labels).map_err(|e| e.to_string())?;
        let tape = Tape::new();
        let pooled = adaptive_phoneme_pool(tape.constant(x.clone()), &seg)
            .map_err(|e| e.to_string())?
            .to_tensor();

        // naive loop over runs of equal labels
        let mut expect: Vec<Vec<f64>> = Vec::new();
        let mut lengths = Vec::new();
        let mut t = 0;
        while t < frames {
            let mut end = t;
            while end < frames && labels[end] == labels[t] {
                end += 1;
            }
            let mut mean = vec![0.0; width];
            for r in t..end {
                for c in 0..width {
                    mean[c] += x.get(r, c);
                }
            }
            mean.iter_mut().for_each(|v| *v /= (end - t) as f64);
            expect.push(mean);
            lengths.push(end - t);
            t = end;
        }
        ensure(pooled.rows() == expect.len(), "segment count differs")?;
        for (r, e) in expect.iter().enumerate() {
            for c in 0..width {
                worst = worst.max((pooled.get(r, c) - e[c]).abs());
            }
        }
        ensure(worst <= 1e-10, format!("pooling differs by {worst}"))?;
        for c in 0..width {
            let mass: f64 = (0..pooled.rows()).map(|r| pooled.get(r, c) * lengths[r] as f64).sum();
            let direct: f64 = (0..frames).map(|r| x.get(r, c)).sum();
            ensure((mass - direct).abs() <= 1e-10 * (1.0 + direct.abs()), "mass not conserved")?;
        }
    }
    Ok(format!("1000 instances, max abs err {worst:.1e}, mass conserved"))
}

// ---------------------------------------------------------------- 4

fn gal_oracle_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_coef, mut worst_out, mut worst_sum) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let c_in = rng.random_range(1..=6);
        let c_out = rng.random_range(1..=6);
        let span = rng.random_range(1..=12);
        let mut store = ParamStore::new();
        let gal = Gal::new(&mut store, "g", c_in, c_out, ParamGroup::Main, &mut rng);
        let x = Tensor::randn(&[n, c_in], 1.0, &mut rng);
        let graph = build_edges(n, span);
        let tape = Tape::new();
        let ctx = Ctx::inference(&tape, &store);
        let coef = gal.coefficients(&ctx, ctx.constant(x.clone()), &graph).map_err(|e| e.to_string())?.to_tensor();
        let out = gal.forward(&ctx, ctx.constant(x.clone()), &graph).map_err(|e| e.to_string())?.to_tensor();

        let w = store.value(gal.weight);
        let a = store.value(gal.attention).data();
        let wh: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..c_out).map(|k| (0..c_in).map(|c| w.get(k, c) * x.get(i, c)).sum()).collect())
            .collect();
        let leaky = |v: f64| if v >= 0.0 { v } else { ATTENTION_SLOPE * v };
        let elu = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        for i in 0..n {
            let neighbours: Vec<usize> = (i..=(i + span).min(n - 1)).collect();
            let e: Vec<f64> = neighbours
                .iter()
                .map(|&j| {
                    let s: f64 = (0..c_out).map(|k| a[k] * wh[i][k] + a[c_out + k] * wh[j][k]).sum();
                    leaky(s)
                })
                .collect();
            let z: f64 = e.iter().map(|v| v.exp()).sum();
            let alpha: Vec<f64> = e.iter().map(|v| v.exp() / z).collect();
            for j in 0..n {
                let want = neighbours.iter().position(|&m| m == j).map_or(0.0, |p| alpha[p]);
                worst_coef = worst_coef.max((coef.get(i, j) - want).abs());
            }
            let sum: f64 = (0..n).map(|j| coef.get(i, j)).sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            for k in 0..c_out {
                let agg: f64 = neighbours.iter().zip(&alpha).map(|(&j, al)| al * wh[j][k]).sum();
                worst_out = worst_out.max((out.get(i, k) - elu(agg)).abs());
            }
        }
    }
    ensure(worst_coef <= 1e-9, format!("coefficients off by {worst_coef}"))?;
    ensure(worst_out <= 1e-9, format!("layer output off by {worst_out}"))?;
    ensure(worst_sum <= 1e-10, format!("coefficient rows sum off by {worst_sum}"))?;
    Ok(format!(
        "100 instances, coef err {worst_coef:.1e}, output err {worst_out:.1e}, row-sum err {worst_sum:.1e}"
    ))
}

// ---------------------------------------------------------------- 5

fn edge_check() -> Check {
    for nodes in 1..=20 {
        for span in 1..=12 {
            let mut expect = std::collections::BTreeSet::new();
            for i in 0..nodes {
                expect.insert((i, i));
                for k in 1..=span {
                    expect.insert((i, (i + k).min(nodes - 1)));
                }
            }
            let got: std::collections::BTreeSet<_> = build_edges(nodes, span).edges().iter().copied().collect();
            ensure(
                got.len() == build_edges(nodes, span).edges().len(),
                format!("duplicate edges at T'={nodes} N={span}"),
            )?;
            ensure(got == expect, format!("edge sets differ at T'={nodes} N={span}"))?;
        }
    }
    ensure(DEFAULT_SPAN == 10, format!("default span is {DEFAULT_SPAN}"))?;
    ensure(
        DetectorConfig::default().span == 10,
        "detector default span is not 10",
    )?;
    Ok("T' 1..20 x N 1..12 match, default span 10".into())
}

// ---------------------------------------------------------------- 6

fn mann_whitney(pairs: &[(f64, bool)]) -> f64 {
    let (mut wins, mut pos, mut neg) = (0.0, 0usize, 0usize);
    for &(p, lp) in pairs {
        if lp {
            pos += 1;
        } else {
            neg += 1;
        }
        for &(q, lq) in pairs {
            if lp && !lq {
                wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
            }
        }
    }
    wins / (pos * neg) as f64
}

/// Sweeps `grid + 1` evenly spaced thresholds from the top, counting scores
/// at or above each threshold, and interpolates at the first point where the
/// false-positive rate reaches the false-negative rate.
fn swept_eer(pairs: &[(f64, bool)], grid: usize) -> f64 {
    let mut pos: Vec<f64> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
    let mut neg: Vec<f64> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let above = |v: &[f64], thr: f64| v.len() - v.partition_point(|&s| s < thr);
    let rates = |thr: f64| {
        (
            above(&neg, thr) as f64 / neg.len() as f64,
            1.0 - above(&pos, thr) as f64 / pos.len() as f64,
        )
    };
    let mut prev = (0.0, 1.0);
    for m in 0..=grid {
        let cur = rates(1.0 - m as f64 / grid as f64);
        if cur == prev {
            continue;
        }
        if cur.0 - cur.1 >= 0.0 {
            let (d0, d1) = (prev.0 - prev.1, cur.0 - cur.1);
            return prev.0 + (-d0 / (d1 - d0)) * (cur.0 - prev.0);
        }
        prev = cur;
    }
    f64::NAN
}

fn metric_check() -> Check {
    const GRID: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_auc, mut worst_eer) = (0.0f64, 0.0f64);
    for set in 0..100 {
        let n = rng.random_range(2..=200);
        // scores sit on the sweep grid; a coarse grid for some sets forces ties
        let levels = if set % 3 == 0 { 20 } else { GRID };
        let mut pairs: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let k = rng.random_range(0..=levels) * (GRID / levels);
                (k as f64 / GRID as f64, rng.random::<bool>())
            })
            .collect();
        pairs[0].1 = true;
        pairs[1].1 = false;
        let scores = ScoreSet::from_pairs(&pairs).map_err(|e| e.to_string())?;
        let a = auc(&scores).map_err(|e| e.to_string())?;
        let e = eer(&scores).map_err(|e| e.to_string())?;
        worst_auc = worst_auc.max((a - mann_whitney(&pairs)).abs());
        worst_eer = worst_eer.max((e - swept_eer(&pairs, GRID)).abs());
    }
    ensure(worst_auc <= 1e-12, format!("AUC off by {worst_auc}"))?;
    ensure(worst_eer <= 1e-9, format!("EER off by {worst_eer}"))?;
    Ok(format!("100 score sets, AUC err {worst_auc:.1e}, EER err {worst_eer:.1e}"))
}

// ---------------------------------------------------------------- 7

fn levenshtein(a: &[usize], b: &[usize]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn per_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let alphabet = rng.random_range(1..=5);
        let r: Vec<usize> = (0..rng.random_range(1..=12)).map(|_| rng.random_range(0..alphabet)).collect();
        let h: Vec<usize> = (0..rng.random_range(0..=12)).map(|_| rng.random_range(0..alphabet)).collect();
        let got = per(&r, &h).map_err(|e| e.to_string())?;
        let want = levenshtein(&r, &h) as f64 / r.len() as f64;
        ensure(got == want, format!("{r:?} vs {h:?}: {got} != {want}"))?;
    }
    Ok("1000 pairs match exactly".into())
}

// ---------------------------------------------------------------- 8

fn seq(id: &str, rows: &[f64], labels: &[usize], class: ClassLabel) -> FrameSequence {
    let f = Tensor::matrix(rows.len(), 1, rows.to_vec()).unwrap();
    FrameSequence::new(id, f, Some(labels.to_vec()), class).unwrap()
}

fn rpsa_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let batch: Vec<FrameSequence> = (0..rng.random_range(2..6))
            .map(|i| {
                let frames = rng.random_range(1..20);
                let labels: Vec<usize> = (0..frames).map(|_| rng.random_range(0..4)).collect();
                let x = Tensor::randn(&[frames, 3], 1.0, &mut rng);
                FrameSequence::new(format!("s{i}"), x, Some(labels), ClassLabel::Bonafide).unwrap()
            })
            .collect();
        let seed = rng.random();
        let out = rpsa(&batch, 0.0, seed).map_err(|e| e.to_string())?;
        for (o, b) in out.iter().zip(&batch) {
            ensure(
                o.features == b.features && o.labels == b.labels && o.class_label == ClassLabel::Fake,
                "p = 0 changed a sample",
            )?;
        }
        let p = rng.random_range(0.0..1.0);
        let a = rpsa(&batch, p, seed).map_err(|e| e.to_string())?;
        let b = rpsa(&batch, p, seed).map_err(|e| e.to_string())?;
        let bits = |v: &[FrameSequence]| -> Vec<u64> {
            v.iter().flat_map(|s| s.features.data().iter().map(|x| x.to_bits())).collect()
        };
        ensure(bits(&a) == bits(&b) && a == b, "same seed gave different output")?;
    }

    // every phoneme has exactly one donor in the other sample
    let batch = vec![
        seq("a", &[1.0, 2.0, 3.0], &[0, 0, 1], ClassLabel::Bonafide),
        seq("b", &[10.0, 20.0, 30.0, 40.0], &[1, 0, 0, 0], ClassLabel::Fake),
    ];
    let out = rpsa(&batch, 1.0, 123).map_err(|e| e.to_string())?;
    let expect = [
        seq("a", &[20.0, 30.0, 40.0, 10.0], &[0, 0, 0, 1], ClassLabel::Fake),
        seq("b", &[3.0, 1.0, 2.0], &[1, 0, 0], ClassLabel::Fake),
    ];
    ensure(out == expect, format!("swap gave {out:?}"))?;
    Ok("p=0 identity on 100 batches, unique-donor swap, bit-exact replay".into())
}

// ---------------------------------------------------------------- 9

fn recognizer_overfit_check() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let synth = SynthConfig {
        bonafide: 20,
        fake: 0,
        splits: [1.0, 0.0, 0.0],
        ..Default::default()
    };
    let manifest = build_corpus(&synth, dir.path()).map_err(|e| e.to_string())?;
    let clip = TrainingConfig::default().clip_frames;
    let data = utterances(&manifest, Split::Train, clip, None).map_err(|e| e.to_string())?;
    ensure(data.len() == 20, format!("{} utterances", data.len()))?;
    let cfg = PretrainConfig {
        epochs: 200,
        ..Default::default()
    };
    let mut model = RecognizerModel::new(RecognizerConfig::default(), cfg.seed).map_err(|e| e.to_string())?;
    let log = pretrain(&mut model, &data, &[], &cfg).map_err(|e| e.to_string())?;
    let final_per = evaluate_per(&model, &data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(final_per == 0.0, format!("training PER {final_per} after {} epochs", log.len()))?;
    ensure(log.len() <= 200, "more than 200 epochs")?;
    ensure(elapsed < Duration::from_secs(300), format!("took {elapsed:?}"))?;
    Ok(format!("PER 0 after {} epochs, {:.1?}", log.len(), elapsed))
}

// ---------------------------------------------------------------- 10, 11

const FULL: &str = "full";
const VARIANTS: [&str; 4] = [FULL, "no-gat", "no-rpsa", "no-clip"];

fn experiment_config(seed: u64, intensity: f64, variant: &str) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synth.bonafide = 500;
    cfg.synth.fake = 500;
    cfg.synth.intensity = intensity;
    cfg.training.batch_size = 4;
    cfg.set_seed(seed);
    match variant {
        "no-gat" => cfg.detector.use_gat = false,
        "no-rpsa" => cfg.training.use_rpsa = false,
        "no-clip" => cfg.training.use_clip = false,
        _ => {}
    }
    cfg
}

#[derive(Clone, Debug)]
struct RunResult {
    auc: f64,
    eer: f64,
    best_epoch: usize,
    /// Corpus, pretraining and detector training together.
    elapsed: Duration,
}

/// Corpora and pretrained recognizers are built once per (seed, intensity)
/// and shared by every detector variant.
struct Lab {
    root: tempfile::TempDir,
    prepared: HashMap<(u64, u64), (Manifest, RecognizerModel, Duration)>,
    runs: HashMap<(u64, u64, &'static str), RunResult>,
}

impl Lab {
    fn new() -> Self {
        Self {
            root: tempfile::tempdir().expect("temporary directory"),
            prepared: HashMap::new(),
            runs: HashMap::new(),
        }
    }

    fn prepare(&mut self, seed: u64, intensity: f64) -> Result<(), String> {
        let key = (seed, intensity.to_bits());
        if self.prepared.contains_key(&key) {
            return Ok(());
        }
        let start = Instant::now();
        let cfg = experiment_config(seed, intensity, FULL);
        let dir: PathBuf = self.root.path().join(format!("corpus-{seed}-{intensity}"));
        let manifest = build_corpus(&cfg.synth, &dir).map_err(|e| e.to_string())?;
        let (recognizer, _) = pretrain_recognizer(&cfg, &manifest).map_err(|e| e.to_string())?;
        self.prepared.insert(key, (manifest, recognizer, start.elapsed()));
        Ok(())
    }

    fn run(&mut self, seed: u64, intensity: f64, variant: &'static str) -> Result<RunResult, String> {
        let key = (seed, intensity.to_bits(), variant);
        if let Some(r) = self.runs.get(&key) {
            return Ok(r.clone());
        }
        self.prepare(seed, intensity)?;
        let (manifest, recognizer, prep) = &self.prepared[&(seed, intensity.to_bits())];
        let cfg = experiment_config(seed, intensity, variant);
        let start = Instant::now();
        let (model, outcome) = train_detector(&cfg, recognizer.clone(), manifest, |_| {}).map_err(|e| e.to_string())?;
        let test = evaluate_split(&model, manifest, Split::Test, cfg.training.clip_frames).map_err(|e| e.to_string())?;
        let result = RunResult {
            auc: test.auc,
            eer: test.eer,
            best_epoch: outcome.best_epoch,
            elapsed: *prep + start.elapsed(),
        };
        println!(
            "    seed {seed} intensity {intensity} {variant:<8} test AUC {:.4} EER {:.4} (best epoch {}, {:.0?})",
            result.auc, result.eer, result.best_epoch, result.elapsed
        );
        self.runs.insert(key, result.clone());
        Ok(result)
    }
}

fn separation_check(lab: &mut Lab) -> Check {
    let budget = Duration::from_secs(15 * 60);
    let full = lab.run(7, 0.7, FULL)?;
    let null = lab.run(7, 0.0, FULL)?;
    let mut problems = Vec::new();
    if full.auc < 0.90 {
        problems.push(format!("AUC {:.4} < 0.90", full.auc));
    }
    if full.eer > 0.15 {
        problems.push(format!("EER {:.4} > 0.15", full.eer));
    }
    if full.elapsed > budget {
        problems.push(format!("took {:?}", full.elapsed));
    }
    if !(0.4..=0.6).contains(&null.auc) {
        problems.push(format!("null AUC {:.4} outside [0.4, 0.6]", null.auc));
    }
    if null.elapsed > budget {
        problems.push(format!("null run took {:?}", null.elapsed));
    }
    let summary = format!(
        "AUC {:.4}, EER {:.4} ({:.0?}); null AUC {:.4} ({:.0?})",
        full.auc, full.eer, full.elapsed, null.auc, null.elapsed
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", problems.join(", ")))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn ablation_check(lab: &mut Lab) -> Check {
    let seeds = [7u64, 8, 9];
    let mut medians = Vec::new();
    for variant in VARIANTS {
        let eers = seeds
            .iter()
            .map(|&s| lab.run(s, 0.7, variant).map(|r| r.eer))
            .collect::<Result<Vec<_>, _>>()?;
        medians.push((variant, median(eers)));
    }
    let full = medians[0].1;
    let summary = medians
        .iter()
        .map(|(v, m)| format!("{v} {m:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    let worse: Vec<_> = medians[1..].iter().filter(|(_, m)| *m < full).map(|(v, _)| *v).collect();
    if worse.is_empty() {
        Ok(format!("median test EER: {summary}"))
    } else {
        Err(format!("{} beat the full model; median test EER: {summary}", worse.join(", ")))
    }
}

// ---------------------------------------------------------------- 12

fn early_stopping_check() -> Check {
    let recognizer = RecognizerModel::new(
        RecognizerConfig {
            input_channels: 3,
            conv_kernels: vec![3],
            conv_strides: vec![2],
            conv_channels: vec![6],
            width: 6,
            blocks: 1,
            heads: 2,
            phonemes: 3,
        },
        1,
    )
    .map_err(|e| e.to_string())?;
    let mut model = DetectorModel::new(recognizer, DetectorConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let train_set: Vec<FrameSequence> = (0..6)
        .map(|i| {
            let class = if i % 2 == 0 { ClassLabel::Bonafide } else { ClassLabel::Fake };
            FrameSequence::new(format!("t{i}"), Tensor::randn(&[20, 3], 1.0, &mut rng), None, class).unwrap()
        })
        .collect();
    let cfg = TrainingConfig {
        epochs: 10,
        batch_size: 3,
        clip_frames: 20,
        lr_other: 1e-2,
        lr_encoder: 1e-2,
        ..Default::default()
    };
    let aucs = [0.70, 0.71, 0.70, 0.70, 0.70, 0.80, 0.90];
    let mut snapshots = Vec::new();
    let outcome = train_with_validator(
        &mut model,
        &train_set,
        &cfg,
        |m, epoch| {
            snapshots.push(m.store.clone());
            Ok((aucs[epoch - 1], 0.0))
        },
        |_| {},
    )
    .map_err(|e| e.to_string())?;
    ensure(outcome.log.len() == 5, format!("ran {} epochs", outcome.log.len()))?;
    ensure(outcome.best_epoch == 2, format!("best epoch {}", outcome.best_epoch))?;
    ensure(snapshots[1] != snapshots[4], "weights did not move after the best epoch")?;
    ensure(model.store == snapshots[1], "restored weights are not those of epoch 2")?;
    Ok("stopped after epoch 5, restored epoch 2".into())
}

// ----------------------------------------------------------------

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut lab = Lab::new();
    type Criterion<'a> = (usize, &'a str, Box<dyn FnMut() -> Check + 'a>);
    let lab_ref = std::cell::RefCell::new(&mut lab);
    let criteria: Vec<Criterion> = vec![
        (1, "gradient suite", Box::new(gradient_suite_check)),
        (2, "CTC oracle", Box::new(ctc_oracle_check)),
        (3, "pooling oracle", Box::new(pooling_oracle_check)),
        (4, "attention formula oracle", Box::new(gal_oracle_check)),
        (5, "edge construction", Box::new(edge_check)),
        (6, "metric oracles", Box::new(metric_check)),
        (7, "PER oracle", Box::new(per_check)),
        (8, "substitution contract", Box::new(rpsa_check)),
        (9, "recognizer overfit", Box::new(recognizer_overfit_check)),
        (10, "end-to-end separation", Box::new(|| separation_check(&mut lab_ref.borrow_mut()))),
        (11, "ablation direction", Box::new(|| ablation_check(&mut lab_ref.borrow_mut()))),
        (12, "early stopping", Box::new(early_stopping_check)),
    ];
    let mut failed = 0;
    for (n, name, mut f) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(&mut f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let (status, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{status} criterion {n:>2} {name}: {detail} [{:.1?}]", start.elapsed());
    }
    let _ = Path::new(".");
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
