//! CTC loss and greedy decoding. The blank is always the last class.

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Minimum frames needed to emit `target`: one per label plus a blank
/// between every pair of equal neighbours.
pub fn required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-probability of `target` summed over all alignments, from
/// `T x (P + 1)` logits. Evaluated with the log-space forward recursion; the
/// gradient comes from the matching backward recursion.
pub fn ctc_loss<'t>(logits: Var<'t>, target: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(Error::shape("ctc_loss", &shape, &[0, 2]));
    }
    let (frames, classes) = (shape[0], shape[1]);
    let blank = classes - 1;
    if let Some(&bad) = target.iter().find(|&&l| l >= blank) {
        return Err(Error::Invalid(format!(
            "CTC target label {bad} is the blank or outside 0..{blank}"
        )));
    }
    let required = required_frames(target);
    if required > frames {
        return Err(Error::InfeasibleTarget {
            target_len: target.len(),
            required,
            frames,
        });
    }
    logits.log_softmax_rows()?.ctc_nll(target, blank)
}

/// Removes repeats, then blanks.
pub fn collapse(frame_labels: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &l in frame_labels {
        if Some(l) != prev && l != blank {
            out.push(l);
        }
        prev = Some(l);
    }
    out
}

/// Per-frame argmax (ties go to the lowest index) and its collapsed phoneme
/// sequence. Returns `(phonemes, frame_labels)`.
pub fn greedy_decode(logits: &Tensor) -> (Vec<usize>, Vec<usize>) {
    let classes = logits.cols();
    let frame_labels: Vec<usize> = (0..logits.rows())
        .map(|t| {
            let row = logits.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    (collapse(&frame_labels, classes - 1), frame_labels)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, GradcheckOptions, Tape};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss_of(rows: &[Vec<f64>], target: &[usize]) -> f64 {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(rows).unwrap());
        ctc_loss(x, target).unwrap().item()
    }

    #[test]
    fn two_frames_uniform() {
        // paths aa, a-, -a each with probability 1/4
        let l = loss_of(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0]);
        assert!((l - 0.287682072451781).abs() < 1e-12);
        assert!((l + 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn certain_single_frame() {
        let l = loss_of(&[vec![0.0, -1e4]], &[0]);
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_invalid_targets() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            ctc_loss(x, &[1, 1]),
            Err(Error::InfeasibleTarget { required: 3, frames: 2, .. })
        ));
        assert!(ctc_loss(x, &[0, 1, 0]).is_err());
        assert!(ctc_loss(x, &[2]).is_err());
        assert!(ctc_loss(x, &[0, 1]).is_ok());
        assert!(ctc_loss(x, &[]).is_ok());
    }

    #[test]
    fn matches_enumeration_on_six_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let target = vec![rng.random_range(0..3), rng.random_range(0..3)];
            let l = loss_of(&rows, &target);
            let o = oracle::brute_force_nll(&rows, &target);
            assert!((l - o).abs() < 1e-9, "{l} vs {o}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(&[6, 4], 1.0, &mut rng);
        let report = gradcheck(
            |_, x| ctc_loss(x, &[0, 2, 2]),
            &x,
            &GradcheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn long_sequences_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::randn(&[200, 17], 5.0, &mut rng);
        let target: Vec<usize> = (0..60).map(|i| i % 16).collect();
        let tape = Tape::new();
        let l = ctc_loss(tape.constant(x), &target).unwrap().item();
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn greedy_examples() {
        let (a, b, blank) = (0.0, 1.0, 2.0);
        let onehot = |k: f64| {
            let mut r = vec![0.0; 3];
            r[k as usize] = 5.0;
            r
        };
        let logits = Tensor::from_rows(&[onehot(a), onehot(a), onehot(blank), onehot(b)]).unwrap();
        let (ph, frames) = greedy_decode(&logits);
        assert_eq!(frames, vec![0, 0, 2, 1]);
        assert_eq!(ph, vec![0, 1]);
        let all_blank = Tensor::from_rows(&[onehot(blank), onehot(blank)]).unwrap();
        let (ph, frames) = greedy_decode(&all_blank);
        assert!(ph.is_empty());
        assert_eq!(frames, vec![2, 2]);
        // ties resolve to the lowest index
        let tie = Tensor::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(greedy_decode(&tie).1, vec![0]);
    }

    proptest! {
        #[test]
        fn greedy_matches_argmax_collapse(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..20)) {
            let t = Tensor::from_rows(&rows).unwrap();
            let (ph, frames) = greedy_decode(&t);
            let mut expect_frames = Vec::new();
            for r in &rows {
                let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                expect_frames.push(r.iter().position(|&v| v == m).unwrap());
            }
            let mut expect = Vec::new();
            for (i, &l) in expect_frames.iter().enumerate() {
                if l != 3 && (i == 0 || expect_frames[i - 1] != l) {
                    expect.push(l);
                }
            }
            prop_assert_eq!(frames, expect_frames);
            prop_assert_eq!(ph, expect);
        }

        #[test]
        fn loss_is_a_valid_negative_log_probability(seed in any::<u64>(), frames in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..frames).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let mut target: Vec<usize> = (0..rng.random_range(0..=frames.min(3))).map(|_| rng.random_range(0..2)).collect();
            while required_frames(&target) > frames {
                target.pop();
            }
            let l = loss_of(&rows, &target);
            prop_assert!(l >= 0.0);
            prop_assert!((-l).exp() <= 1.0 && (-l).exp() > 0.0);
        }
    }
}
