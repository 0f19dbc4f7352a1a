use std::fs;
use std::path::Path;

use serde::Serialize;

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "PHONOGRAPH_THREADS";

/// A failed command; the variant decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, missing or malformed files (exit 2).
    Input(String),
    /// Non-finite training or failed gradient checks (exit 3).
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<phonograph::Error> for Failure {
    fn from(e: phonograph::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

pub fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Input(format!("{THREADS_VAR} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Input(format!("thread pool: {e}")))
}

/// Creates `dir`, refusing a non-empty one unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<(), Failure> {
    if !force {
        if let Ok(mut entries) = fs::read_dir(dir) {
            if entries.next().is_some() {
                return Err(Failure::Input(format!(
                    "output directory {} is not empty; pass --force to write into it",
                    dir.display()
                )));
            }
        } else if dir.exists() {
            return Err(Failure::Input(format!("{} exists and is not a directory", dir.display())));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))
}

/// One JSON object with an `event` field followed by the fields of `record`.
pub fn event_line(event: &str, record: &impl Serialize) -> String {
    let head = format!("{{\"event\":{}", serde_json::to_string(event).expect("strings serialize"));
    let body = serde_json::to_string(record).expect("records serialize");
    match body.strip_prefix('{') {
        Some("}") => head + "}",
        Some(rest) => format!("{head},{rest}"),
        None => format!("{head},\"value\":{body}}}"),
    }
}

pub fn emit(event: &str, record: &impl Serialize) {
    println!("{}", event_line(event, record));
}

/// Serializes records one per line.
pub fn json_lines<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}
