//! Dataset directories and atomic file output.
//!
//! A dataset directory holds, for each modality `v` (numbered from 1):
//!
//! * `modality{v}_features.csv`: one comma-separated observation per line,
//! * `modality{v}_ids.txt`: the sample ID of each line,
//! * `modality{v}_labels.csv`: the class of each line,
//!
//! plus `labels.csv` (`id,label` for every sample) and `meta.cfg` with the
//! class and modality counts. Generated datasets also carry `synth.cfg`, the
//! generator settings needed to draw fresh samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mnse_core::dataset::MultiModalDataset;
use mnse_core::{DMatrix, SampleId};

use crate::config::{parse_flat, ConfigError};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("invalid dataset: {0}")]
    Dataset(#[from] mnse_core::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Feature matrix as CSV, values in shortest round-trip form.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

fn parse_matrix(path: &Path, text: &str) -> Result<(Vec<Vec<f64>>, usize), IoError> {
    let mut rows = Vec::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    reason: format!("expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok((rows, width.unwrap_or(0)))
}

fn parse_lines<T: std::str::FromStr>(path: &Path, text: &str) -> Result<Vec<T>, IoError>
where
    T::Err: std::fmt::Display,
{
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse().map_err(|e: T::Err| IoError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Writes every file of a dataset directory except `synth.cfg`.
pub fn write_dataset(dir: &Path, ds: &MultiModalDataset) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (v, m) in ds.modalities().iter().enumerate() {
        let n = v + 1;
        write_atomic(&dir.join(format!("modality{n}_features.csv")), matrix_csv(m.features()).as_bytes())?;
        let ids: String = m.ids().iter().map(|id| format!("{id}\n")).collect();
        write_atomic(&dir.join(format!("modality{n}_ids.txt")), ids.as_bytes())?;
        let labels: String = ds.modality_labels(v).iter().map(|l| format!("{l}\n")).collect();
        write_atomic(&dir.join(format!("modality{n}_labels.csv")), labels.as_bytes())?;
    }
    let mut labels = String::from("id,label\n");
    for (id, l) in ds.labels() {
        let _ = writeln!(labels, "{id},{l}");
    }
    write_atomic(&dir.join("labels.csv"), labels.as_bytes())?;
    let meta = format!("classes = {}\nmodalities = {}\n", ds.num_classes(), ds.num_modalities());
    write_atomic(&dir.join("meta.cfg"), meta.as_bytes())
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<MultiModalDataset, IoError> {
    let meta_path = dir.join("meta.cfg");
    let meta = parse_flat(&read(&meta_path)?)?;
    let count = |key: &str| -> Result<usize, IoError> {
        let entry = meta.get(key).ok_or_else(|| IoError::Parse {
            path: meta_path.clone(),
            line: 0,
            reason: format!("missing key `{key}`"),
        })?;
        entry.value.parse().map_err(|_| IoError::Parse {
            path: meta_path.clone(),
            line: entry.line,
            reason: format!("`{key}` must be a non-negative integer"),
        })
    };
    let num_classes = count("classes")?;
    let num_modalities = count("modalities")?;

    let labels_path = dir.join("labels.csv");
    let mut labels = BTreeMap::new();
    for (n, line) in read(&labels_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("id")) {
            continue;
        }
        let bad = |reason: String| IoError::Parse {
            path: labels_path.clone(),
            line: n + 1,
            reason,
        };
        let (id, label) = line.split_once(',').ok_or_else(|| bad("expected `id,label`".into()))?;
        let id: SampleId = id.trim().parse().map_err(|e| bad(format!("{e}")))?;
        let label: usize = label.trim().parse().map_err(|e| bad(format!("{e}")))?;
        labels.insert(id, label);
    }

    let mut modalities = Vec::with_capacity(num_modalities);
    for n in 1..=num_modalities {
        let fpath = dir.join(format!("modality{n}_features.csv"));
        let (rows, width) = parse_matrix(&fpath, &read(&fpath)?)?;
        let ipath = dir.join(format!("modality{n}_ids.txt"));
        let ids: Vec<SampleId> = parse_lines(&ipath, &read(&ipath)?)?;
        let lpath = dir.join(format!("modality{n}_labels.csv"));
        let row_labels: Vec<usize> = parse_lines(&lpath, &read(&lpath)?)?;
        if ids.len() != rows.len() || row_labels.len() != rows.len() {
            return Err(IoError::Parse {
                path: fpath,
                line: 0,
                reason: format!(
                    "{} feature rows, {} ids, {} labels",
                    rows.len(),
                    ids.len(),
                    row_labels.len()
                ),
            });
        }
        for (r, (id, l)) in ids.iter().zip(&row_labels).enumerate() {
            if labels.get(id).is_some_and(|g| g != l) {
                return Err(IoError::Parse {
                    path: lpath.clone(),
                    line: r + 1,
                    reason: format!("sample {id} is labelled {l} here but {} in labels.csv", labels[id]),
                });
            }
        }
        let features = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
        modalities.push((features, ids));
    }
    Ok(MultiModalDataset::new(num_classes, modalities, labels)?)
}
