use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phoneme::{ClassLabel, FrameSequence};
use crate::tensor::read_ptns;

pub const MANIFEST_FILE: &str = "manifest.tsv";
const HEADER: &str = "# id\tpath\tlabel\tsplit\tphonemes\tframe_labels";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

/// One manifest line. `path` is relative to the manifest's directory unless
/// absolute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: ClassLabel,
    pub split: Split,
    /// Reference phoneme sequence; empty when unknown.
    pub phonemes: Vec<usize>,
    pub frame_labels: Option<Vec<usize>>,
}

/// Tab-separated corpus index. Lines starting with `#` and blank lines are
/// ignored; list fields are space-separated integers and may be empty. Paths
/// must not contain tabs or line breaks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

fn format_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        what: "manifest",
        detail: format!("line {line}: {}", detail.into()),
    }
}

fn parse_list(field: &str, line: usize) -> Result<Vec<usize>> {
    field
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| format_err(line, format!("bad integer {v:?}"))))
        .collect()
}

fn join(list: &[usize]) -> String {
    list.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 6 {
                return Err(format_err(n, format!("expected 6 tab-separated fields, got {}", fields.len())));
            }
            let id = fields[0].to_string();
            if id.is_empty() || !seen.insert(id.clone()) {
                return Err(format_err(n, format!("missing or duplicate id {id:?}")));
            }
            let frame_labels = parse_list(fields[5], n)?;
            entries.push(ManifestEntry {
                id,
                path: PathBuf::from(fields[1]),
                label: fields[2].parse().map_err(|e: Error| format_err(n, e.to_string()))?,
                split: fields[3].parse().map_err(|e: Error| format_err(n, e.to_string()))?,
                phonemes: parse_list(fields[4], n)?,
                frame_labels: (!frame_labels.is_empty()).then_some(frame_labels),
            });
        }
        Ok(Self {
            root: root.into(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root)
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::from(HEADER);
        out.push('\n');
        for e in &self.entries {
            let path = e.path.to_string_lossy();
            if path.contains(['\t', '\n', '\r']) || e.id.contains(['\t', '\n', '\r']) {
                return Err(Error::Invalid(format!("manifest id or path of {:?} contains a tab or newline", e.id)));
            }
            let labels = e.frame_labels.as_deref().map(join).unwrap_or_default();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.id,
                path,
                e.label,
                e.split,
                join(&e.phonemes),
                labels
            )
            .expect("writing to a string");
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn feature_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Reads the entry's feature file and attaches its labels.
    pub fn load(&self, entry: &ManifestEntry) -> Result<FrameSequence> {
        let features = read_ptns(&self.feature_path(entry))?;
        FrameSequence::new(entry.id.clone(), features, entry.frame_labels.clone(), entry.label)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<FrameSequence>> {
        self.split(split).map(|e| self.load(e)).collect()
    }
}
