//! Datasets on disk: a directory holding `manifest.txt` and one `MFRV` file
//! per sample. Each manifest line reads `sample_id class_id file_name`;
//! `#` starts a comment.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mfcd_core::synth::LabeledVideo;
use thiserror::Error;

use crate::bytes::{LimitError, ParseError};
use crate::video;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: ParseError },
    #[error(transparent)]
    Limit(#[from] LimitError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn file_name(sample_id: u32) -> String {
    format!("sample_{sample_id:05}.mfrv")
}

/// Writes the dataset into `dir`, creating it if needed.
pub fn save(dir: &Path, samples: &[LabeledVideo]) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut manifest = String::from("# sample_id class_id file\n");
    for s in samples {
        let name = file_name(s.sample_id);
        let path = dir.join(&name);
        fs::write(&path, video::to_bytes(&s.video)?).map_err(io_err(&path))?;
        manifest.push_str(&format!("{} {} {name}\n", s.sample_id, s.class_id));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(io_err(&path))
}

/// Reads every sample listed in the manifest, in manifest order.
pub fn load(dir: &Path) -> Result<Vec<LabeledVideo>, DatasetError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| DatasetError::Manifest {
            path: path.clone(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [id, class, name] = fields[..] else {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        };
        let sample_id: u32 = id.parse().map_err(|_| bad(format!("bad sample id `{id}`")))?;
        let class_id: usize = class.parse().map_err(|_| bad(format!("bad class id `{class}`")))?;
        if !ids.insert(sample_id) {
            return Err(bad(format!("sample {sample_id} listed twice")));
        }
        if Path::new(name).components().count() != 1 {
            return Err(bad(format!("`{name}` must be a plain file name")));
        }
        let file = dir.join(name);
        let bytes = fs::read(&file).map_err(io_err(&file))?;
        let video = video::from_bytes(&bytes).map_err(|source| DatasetError::Parse { path: file, source })?;
        out.push(LabeledVideo {
            sample_id,
            class_id,
            video,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfcd_core::synth::{generate, SynthConfig};

    #[test]
    fn save_then_load_is_identity() {
        let data = generate(&SynthConfig {
            samples_per_class: 2,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &data).unwrap();
        assert_eq!(load(dir.path()).unwrap(), data);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.lines().nth(1).unwrap().starts_with("0 0 sample_00000.mfrv"));
    }

    #[test]
    fn manifest_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST), "# header\n0 0\n").unwrap();
        match load(dir.path()).unwrap_err() {
            DatasetError::Manifest { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        fs::write(dir.path().join(MANIFEST), "0 0 ../escape.mfrv\n").unwrap();
        assert!(matches!(
            load(dir.path()).unwrap_err(),
            DatasetError::Manifest { line: 1, .. }
        ));
    }
}
