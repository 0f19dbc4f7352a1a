//! Synthetic corpora, manifests and the clip/pad policy.

mod clip;
mod manifest;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use clip::{clip_indices, clip_or_pad, ClipMode};
pub use manifest::{Manifest, ManifestEntry, Split, MANIFEST_FILE};
pub use synth::{synth_sample, transition_windows, Defects, SynthConfig, SynthSample};

use crate::error::{Error, Result};
use crate::phoneme::ClassLabel;
use crate::tensor::write_ptns;

/// SplitMix64 finaliser applied to `seed + index`; gives every sample its own
/// independent stream.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Partitions `n` items by `fractions` with largest-remainder rounding; ties
/// go to the earlier part.
pub fn split_sizes(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n.saturating_sub(sizes.iter().sum());
    for &k in order.iter().take(short) {
        sizes[k] += 1;
    }
    sizes
}

fn split_of(index: usize, sizes: &[usize; 3]) -> Split {
    if index < sizes[0] {
        Split::Train
    } else if index < sizes[0] + sizes[1] {
        Split::Val
    } else {
        Split::Test
    }
}

/// Generates the corpus described by `cfg` under `out`: one PTNS1 file per
/// sample in `features/` and `manifest.tsv`. Splits are assigned per class.
pub fn build_corpus(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if cfg.bonafide + cfg.fake == 0 {
        return Err(Error::Invalid("empty corpus: both class counts are 0".into()));
    }
    let feature_dir = out.join("features");
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
    let prototypes = cfg.prototypes();
    let plan: Vec<(String, ClassLabel, Split)> = [(ClassLabel::Bonafide, cfg.bonafide), (ClassLabel::Fake, cfg.fake)]
        .iter()
        .flat_map(|&(class, count)| {
            let sizes = split_sizes(count, &cfg.splits);
            (0..count).map(move |i| (format!("{class}-{i:05}"), class, split_of(i, &sizes)))
        })
        .collect();

    let entries = plan
        .par_iter()
        .enumerate()
        .map(|(index, (id, class, split))| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, index as u64));
            let sample = synth_sample(cfg, &prototypes, id.clone(), *class, &mut rng)?;
            let rel = PathBuf::from("features").join(format!("{id}.ptns"));
            write_ptns(&out.join(&rel), &sample.sequence.features)?;
            Ok(ManifestEntry {
                id: id.clone(),
                path: rel,
                label: *class,
                split: *split,
                phonemes: sample.phonemes,
                frame_labels: sample.sequence.labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        root: out.to_path_buf(),
        entries,
    };
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
