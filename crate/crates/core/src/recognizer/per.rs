use crate::error::{Error, Result};

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Phoneme error rate: edit distance over reference length.
pub fn per(reference: &[usize], hypothesis: &[usize]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Invalid("phoneme error rate needs a non-empty reference".into()));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Corpus-level rate: total edits over total reference phonemes.
pub fn corpus_per<'a, I>(pairs: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
{
    let (mut edits, mut total) = (0, 0);
    for (r, h) in pairs {
        edits += edit_distance(r, h);
        total += r.len();
    }
    if total == 0 {
        return Err(Error::Invalid("phoneme error rate needs a non-empty reference".into()));
    }
    Ok(edits as f64 / total as f64)
}
