//! Dataset manifests: one `<split> <relative path>` line per feature file.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::path::{Path, PathBuf};

use vqflow_core::sample::FeatureSample;

use crate::error::{self, Error, Result};
use crate::vqft::{read_feature_file, write_feature_file};

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub split: Split,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (tag, path) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::Config(format!("manifest line {}: expected `<split> <path>`", n + 1)))?;
        let split = match tag {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Config(format!(
                    "manifest line {}: unknown split `{other}`",
                    n + 1
                )))
            }
        };
        out.push(Entry { split, path: PathBuf::from(path.trim()) });
    }
    Ok(out)
}

pub fn render(entries: &[Entry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&format!("{} {}\n", e.split, e.path.display()));
    }
    s
}

/// A manifest path, or a directory holding `manifest.txt`.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(FILE_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Writes every sample as a VQFT file under `dir` plus the manifest, and
/// returns the manifest path. Sample ids are not stored; they are the line
/// index on reading, which matches the order written here.
pub fn write_dataset(
    dir: &Path,
    train: &[FeatureSample<f32>],
    test: &[FeatureSample<f32>],
) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(train.len() + test.len());
    for (split, set) in [(Split::Train, train), (Split::Test, test)] {
        for (j, s) in set.iter().enumerate() {
            let rel = PathBuf::from(format!("{split}/{j:05}.vqft"));
            write_feature_file(s, &dir.join(&rel))?;
            entries.push(Entry { split, path: rel });
        }
    }
    let path = dir.join(FILE_NAME);
    error::write(&path, render(&entries).as_bytes())?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<FeatureSample<f32>>,
    pub test: Vec<FeatureSample<f32>>,
}

/// Reads every listed file. Ids follow the line order. A training split
/// containing an anomalous sample is rejected.
pub fn load_dataset(manifest: &Path) -> Result<Dataset> {
    let manifest = resolve(manifest);
    let text = String::from_utf8(error::read(&manifest)?)
        .map_err(|_| Error::Config(format!("{} is not UTF-8", manifest.display())))?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut ds = Dataset { train: Vec::new(), test: Vec::new() };
    for (id, e) in parse(&text)?.into_iter().enumerate() {
        let path = root.join(&e.path);
        let s = read_feature_file(&path, id as u32).map_err(|err| match err {
            Error::Format { offset, message } => Error::Format {
                offset,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        match e.split {
            Split::Train if s.label.is_anomalous() => {
                return Err(Error::Core(vqflow_core::Error::Contract(format!(
                    "{} is anomalous but listed in the training split",
                    path.display()
                ))))
            }
            Split::Train => ds.train.push(s),
            Split::Test => ds.test.push(s),
        }
    }
    Ok(ds)
}
