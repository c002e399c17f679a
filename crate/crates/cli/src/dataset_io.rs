//! Dataset directories: one tensor file per image and label plus a text
//! manifest recording ids, domain tags, split assignment, and the generator
//! seed.

use crate::error::{io_err, CliError, CliResult};
use crate::tensorfile;
use alseg_core::alloop::RunConfig;
use alseg_core::synthdata::{Domain, PoolState, Sample, SampleId};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const MANIFEST_HEADER: &str = "alseg-dataset v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Annotated,
    Pool,
    Validation,
    Test,
}

impl Split {
    fn as_str(&self) -> &'static str {
        match self {
            Split::Annotated => "annotated",
            Split::Pool => "pool",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> CliResult<Split> {
        match s {
            "annotated" => Ok(Split::Annotated),
            "pool" => Ok(Split::Pool),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(CliError::runtime(format!("manifest: unknown split {:?}", other))),
        }
    }
}

pub fn image_path(dir: &Path, id: SampleId) -> PathBuf {
    dir.join(format!("img_{:06}.altn", id.0))
}

pub fn label_path(dir: &Path, id: SampleId) -> PathBuf {
    dir.join(format!("lbl_{:06}.altn", id.0))
}

/// Write all samples, their labels, and the manifest.
pub fn write_dataset(
    dir: &Path,
    config: &RunConfig,
    samples: &[Sample],
    state: &PoolState,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut manifest = String::new();
    writeln!(manifest, "{}", MANIFEST_HEADER).unwrap();
    writeln!(manifest, "seed = {}", config.seed).unwrap();
    writeln!(manifest, "n_samples = {}", samples.len()).unwrap();
    writeln!(manifest, "height = {}", config.height).unwrap();
    writeln!(manifest, "width = {}", config.width).unwrap();
    writeln!(manifest, "n_classes = {}", config.n_cl).unwrap();
    writeln!(manifest, "columns = id domain split").unwrap();
    for s in samples {
        let split = if state.annotated.contains(&s.id) {
            Split::Annotated
        } else if state.pool.contains(&s.id) {
            Split::Pool
        } else if state.validation.contains(&s.id) {
            Split::Validation
        } else {
            Split::Test
        };
        writeln!(manifest, "{} {} {}", s.id, s.domain.as_str(), split.as_str()).unwrap();
        tensorfile::write_file(&image_path(dir, s.id), &s.image)?;
        tensorfile::write_file(&label_path(dir, s.id), &s.label)?;
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| io_err(&path, e))
}

/// Everything read back from a dataset directory.
pub struct StoredDataset {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_cl: usize,
    pub samples: Vec<Sample>,
    pub state: PoolState,
}

pub fn read_dataset(dir: &Path) -> CliResult<StoredDataset> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(CliError::runtime(format!(
            "{}: not an alseg dataset manifest",
            path.display()
        )));
    }
    let mut seed = None;
    let mut height = None;
    let mut width = None;
    let mut n_cl = None;
    let mut n_samples = None;
    let mut rows: Vec<(SampleId, Domain, Split)> = Vec::new();
    let mut in_rows = false;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !in_rows {
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::runtime(format!(
                    "manifest: expected 'key = value', got {:?}",
                    line
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad(key))?),
                "n_samples" => n_samples = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                "height" => height = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                "width" => width = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                "n_classes" => n_cl = Some(value.parse::<usize>().map_err(|_| bad(key))?),
                "columns" => {
                    if value != "id domain split" {
                        return Err(CliError::runtime("manifest: unexpected columns"));
                    }
                    in_rows = true;
                }
                other => {
                    return Err(CliError::runtime(format!(
                        "manifest: unknown key {:?}",
                        other
                    )))
                }
            }
        } else {
            let mut parts = line.split_whitespace();
            let id = parts
                .next()
                .and_then(|v| v.parse::<u32>().ok())
                .ok_or_else(|| bad("id"))?;
            let domain = Domain::parse(parts.next().ok_or_else(|| bad("domain"))?)
                .map_err(CliError::from)?;
            let split = Split::parse(parts.next().ok_or_else(|| bad("split"))?)?;
            if parts.next().is_some() {
                return Err(CliError::runtime("manifest: trailing fields in row"));
            }
            rows.push((SampleId(id), domain, split));
        }
    }
    let (Some(seed), Some(height), Some(width), Some(n_cl), Some(n_samples)) =
        (seed, height, width, n_cl, n_samples)
    else {
        return Err(CliError::runtime("manifest: missing header fields"));
    };
    if rows.len() != n_samples {
        return Err(CliError::runtime(format!(
            "manifest: {} rows but n_samples = {}",
            rows.len(),
            n_samples
        )));
    }

    let mut samples = Vec::with_capacity(rows.len());
    let mut state = PoolState {
        annotated: BTreeSet::new(),
        pool: BTreeSet::new(),
        validation: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    for (id, domain, split) in rows {
        let image = tensorfile::read_file(&image_path(dir, id))?;
        let label = tensorfile::read_file(&label_path(dir, id))?;
        if image.dims() != [1, height, width] {
            return Err(CliError::runtime(format!(
                "sample {}: image dims {:?} do not match manifest",
                id,
                image.dims()
            )));
        }
        if label.dims() != [height, width] {
            return Err(CliError::runtime(format!(
                "sample {}: label dims {:?} do not match manifest",
                id,
                label.dims()
            )));
        }
        samples.push(Sample { id, image, label, domain });
        match split {
            Split::Annotated => state.annotated.insert(id),
            Split::Pool => state.pool.insert(id),
            Split::Validation => state.validation.insert(id),
            Split::Test => state.test.insert(id),
        };
    }
    Ok(StoredDataset {
        seed,
        height,
        width,
        n_cl,
        samples,
        state,
    })
}

fn bad(key: &str) -> CliError {
    CliError::runtime(format!("manifest: invalid {}", key))
}
