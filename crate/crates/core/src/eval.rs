//! ROC, AUC and EER over detector scores, the summary report and embedding
//! export. Bonafide is the positive class; a higher score means more likely
//! bonafide.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phoneme::ClassLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: String,
    pub score: f64,
    pub label: ClassLabel,
}

/// Scores of a labelled evaluation set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreSet {
    entries: Vec<Scored>,
}

impl ScoreSet {
    pub fn new(entries: Vec<Scored>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(Error::Invalid(format!("score of {} is not finite: {}", bad.id, bad.score)));
        }
        Ok(Self { entries })
    }

    /// `(score, is_bonafide)` pairs with generated ids.
    pub fn from_pairs(pairs: &[(f64, bool)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(score, pos))| Scored {
                    id: i.to_string(),
                    score,
                    label: if pos { ClassLabel::Bonafide } else { ClassLabel::Fake },
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[Scored] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn counts(&self) -> Result<(usize, usize)> {
        let pos = self.entries.iter().filter(|e| e.label == ClassLabel::Bonafide).count();
        let neg = self.entries.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::Invalid(format!(
                "ROC needs both classes, got {pos} bonafide and {neg} fake"
            )));
        }
        Ok((pos, neg))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// Samples scoring at least this are called bonafide.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Operating points at every distinct score, from the highest threshold down,
/// preceded by the `(0, 0)` point at threshold `+inf`.
pub fn roc(scores: &ScoreSet) -> Result<Vec<RocPoint>> {
    let (pos, neg) = scores.counts()?;
    let mut sorted: Vec<(f64, bool)> = scores
        .entries
        .iter()
        .map(|e| (e.score, e.label == ClassLabel::Bonafide))
        .collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the ROC curve.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    let pts = roc(scores)?;
    Ok(pts
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum())
}

/// Equal error rate: the ROC sweep is scanned for the first point where the
/// false-positive rate reaches the false-negative rate, and the crossing is
/// interpolated linearly from the previous point.
pub fn eer(scores: &ScoreSet) -> Result<f64> {
    let pts = roc(scores)?;
    Ok(eer_from_points(pts.iter().map(|p| (p.fpr, 1.0 - p.tpr))))
}

/// EER over a sequence of `(fpr, fnr)` operating points ordered by
/// decreasing threshold.
pub fn eer_from_points(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let mut prev: Option<(f64, f64)> = None;
    for (fpr, fnr) in points {
        let d = fpr - fnr;
        if d >= 0.0 {
            return match prev {
                None => (fpr + fnr) / 2.0,
                Some((pf, pn)) => {
                    let pd = pf - pn;
                    let t = -pd / (d - pd);
                    pf + t * (fpr - pf)
                }
            };
        }
        prev = Some((fpr, fnr));
    }
    // unreachable for a complete sweep, which ends at (1, 0)
    prev.map_or(0.0, |(f, n)| (f + n) / 2.0)
}

/// AUC and EER of one split, as fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub samples: usize,
    pub auc: f64,
    pub eer: f64,
}

impl SplitMetrics {
    pub fn compute(split: impl Into<String>, scores: &ScoreSet) -> Result<Self> {
        Ok(Self {
            split: split.into(),
            samples: scores.len(),
            auc: auc(scores)?,
            eer: eer(scores)?,
        })
    }
}

/// Plain-text `AUC / EER (%)` table.
pub fn render_report(rows: &[SplitMetrics]) -> String {
    let mut out = String::from("split      samples   AUC (%)   EER (%)\n");
    for r in rows {
        writeln!(
            out,
            "{:<10} {:>7}   {:>7.2}   {:>7.2}",
            r.split,
            r.samples,
            100.0 * r.auc,
            100.0 * r.eer
        )
        .expect("writing to a string");
    }
    out
}

/// One exported embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub label: ClassLabel,
    pub values: Vec<f64>,
}

/// CSV with header `id,label,dim0,dim1,...`.
pub fn render_embeddings_csv(rows: &[EmbeddingRow]) -> Result<String> {
    let dims = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("id,label");
    for d in 0..dims {
        write!(out, ",dim{d}").expect("writing to a string");
    }
    out.push('\n');
    for r in rows {
        if r.values.len() != dims {
            return Err(Error::shape("embedding export", &[dims], &[r.values.len()]));
        }
        if r.id.contains([',', '"', '\n', '\r']) {
            return Err(Error::Invalid(format!("id {:?} cannot be written to CSV unquoted", r.id)));
        }
        write!(out, "{},{}", r.id, r.label).expect("writing to a string");
        for v in &r.values {
            write!(out, ",{v}").expect("writing to a string");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    fs::write(path, render_embeddings_csv(rows)?).map_err(|e| Error::io(path, e))
}
