//! On-disk descriptions of curated datasets and of the runs that produced artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, DirDataset, Region, ShotThresholds, Split, TaskData};
use crate::error::{Error, Result};
use crate::io::{self, read_json, resolve, sha256_file};
use crate::olgen::{self, Mix, Operator, RegionBands};

/// A file and the digest it had when recorded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    pub fn record(path: &Path) -> Result<Self> {
        Ok(FileRef { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }

    /// Fails with a schema error when the file changed since it was recorded.
    pub fn verify(&self, base: &Path) -> Result<PathBuf> {
        let p = resolve(base, &self.path);
        let actual = sha256_file(&p)?;
        if actual != self.sha256 {
            return Err(Error::Schema {
                path: p,
                reason: format!("digest {actual} differs from recorded {}", self.sha256),
            });
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowRecord {
    pub split: Split,
    pub bin: usize,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UciManifest {
    pub csv: FileRef,
    pub target: String,
    pub bin_width: f64,
    pub thresholds: ShotThresholds,
    pub seed: u64,
    pub test_per_bin: usize,
    pub val_per_bin: usize,
    pub dropped: usize,
    pub rows: Vec<RowRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlManifest {
    pub operator: Operator,
    pub seed: u64,
    pub bands: RegionBands,
    pub mix: Mix,
    pub train: FileRef,
    pub val: Option<FileRef>,
    pub test: FileRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetManifest {
    Uci(UciManifest),
    Oldir(OlManifest),
}

impl DatasetManifest {
    pub fn for_uci(csv: FileRef, ds: &DirDataset, target: &str, seed: u64, quotas: (usize, usize)) -> Self {
        let rows = (0..ds.split.len())
            .map(|r| RowRecord { split: ds.split[r], bin: ds.binning.ids[r], region: ds.region_of_row(r) })
            .collect();
        DatasetManifest::Uci(UciManifest {
            csv,
            target: target.to_owned(),
            bin_width: ds.binning.width,
            thresholds: ds.regions.thresholds,
            seed,
            test_per_bin: quotas.0,
            val_per_bin: quotas.1,
            dropped: ds.dropped,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Input files this manifest depends on, resolved against `base`.
    pub fn inputs(&self, base: &Path) -> Vec<FileRef> {
        let fix = |f: &FileRef| FileRef { path: resolve(base, &f.path), sha256: f.sha256.clone() };
        match self {
            DatasetManifest::Uci(m) => vec![fix(&m.csv)],
            DatasetManifest::Oldir(m) => {
                let mut v = vec![fix(&m.train), fix(&m.test)];
                v.extend(m.val.as_ref().map(fix));
                v
            }
        }
    }

    /// Rebuilds the training task after checking every input digest.
    pub fn task(&self, base: &Path) -> Result<TaskData> {
        match self {
            DatasetManifest::Uci(m) => {
                let csv = m.csv.verify(base)?;
                let table = data::load_csv(&csv, &m.target)?;
                let schema = |reason: String| Error::Schema { path: csv.clone(), reason };
                if table.len() != m.rows.len() {
                    return Err(schema(format!("{} usable rows, manifest lists {}", table.len(), m.rows.len())));
                }
                let binning = data::bin_labels(&table.targets, m.bin_width)?;
                if binning.ids.iter().zip(&m.rows).any(|(b, r)| *b != r.bin) {
                    return Err(schema("bin assignment differs from the manifest".into()));
                }
                let split = m.rows.iter().map(|r| r.split).collect();
                DirDataset::assemble(&table, binning, split, m.thresholds)?.task()
            }
            DatasetManifest::Oldir(m) => {
                let (_, train) = olgen::read_split(&m.train.verify(base)?)?;
                let (_, test) = olgen::read_split(&m.test.verify(base)?)?;
                let val = match &m.val {
                    Some(v) => Some(olgen::read_split(&v.verify(base)?)?.1),
                    None => None,
                };
                olgen::task(&train, val.as_deref(), &test, &m.bands)
            }
        }
    }
}

/// Everything needed to rerun an artifact-producing command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the subcommand, minus `--out`, with input paths absolute.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    pub inputs: Vec<FileRef>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileRef>,
}

pub const RUN_MANIFEST: &str = "run.json";

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            args,
            seed: None,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let abs = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(FileRef::record(&abs)?);
        Ok(())
    }

    /// Records `name` inside `dir` as an output.
    pub fn output(&mut self, dir: &Path, name: &str) -> Result<()> {
        let sha256 = sha256_file(&dir.join(name))?;
        self.outputs.push(FileRef { path: PathBuf::from(name), sha256 });
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_json(&dir.join(RUN_MANIFEST), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn verify_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            f.verify(Path::new("/"))?;
        }
        Ok(())
    }

    /// Output names whose digests differ from `other`'s, or are missing there.
    pub fn diff_outputs(&self, other: &RunManifest) -> Vec<String> {
        let theirs: BTreeMap<&Path, &str> = other.outputs.iter().map(|f| (f.path.as_path(), f.sha256.as_str())).collect();
        self.outputs
            .iter()
            .filter(|f| theirs.get(f.path.as_path()) != Some(&f.sha256.as_str()))
            .map(|f| f.path.display().to_string())
            .collect()
    }
}
