//! Tabular ingestion, label binning, shot regions and balanced-test curation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Many,
    Med,
    Few,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Many, Region::Med, Region::Few];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Many => "many",
            Region::Med => "med",
            Region::Few => "few",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Parsed CSV: every non-target column is a feature.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// `rows x features`
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Rows dropped for holding a non-numeric cell.
    pub dropped: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

pub fn load_csv(path: &Path, target_column: &str) -> Result<RawTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(f, target_column)
}

pub fn parse_csv<R: Read>(reader: R, target_column: &str) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::Data(format!("no column named {target_column:?} in {headers:?}")))?;

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let parsed: Option<Vec<f64>> = rec
            .iter()
            .map(|cell| cell.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(vals) if vals.len() == headers.len() => {
                targets.push(vals[target_idx]);
                features.push(
                    vals.iter().enumerate().filter(|&(i, _)| i != target_idx).map(|(_, &v)| v).collect(),
                );
            }
            _ => dropped += 1,
        }
    }
    Ok(RawTable {
        feature_names: headers.iter().enumerate().filter(|&(i, _)| i != target_idx).map(|(_, h)| h.clone()).collect(),
        target_name: target_column.to_owned(),
        features,
        targets,
        dropped,
    })
}

pub fn write_csv(path: &Path, table: &RawTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = table.feature_names.clone();
    header.push(table.target_name.clone());
    w.write_record(&header)?;
    for (x, y) in table.features.iter().zip(&table.targets) {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(y.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Fixed-width binning anchored at the smallest target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub t_min: f64,
    pub width: f64,
    /// Bin id per row.
    pub ids: Vec<usize>,
    /// Occupied ids, ascending.
    pub unique: Vec<usize>,
}

impl Binning {
    pub fn center(&self, id: usize) -> f64 {
        self.t_min + (id as f64 + 0.5) * self.width
    }

    /// Centers of the occupied bins, ascending.
    pub fn values(&self) -> Vec<f64> {
        self.unique.iter().map(|&id| self.center(id)).collect()
    }

    pub fn counts(&self, rows: impl IntoIterator<Item = usize>) -> BTreeMap<usize, usize> {
        let mut c = BTreeMap::new();
        for r in rows {
            *c.entry(self.ids[r]).or_insert(0) += 1;
        }
        c
    }
}

pub fn bin_id(target: f64, t_min: f64, width: f64) -> usize {
    ((target - t_min) / width).floor().max(0.0) as usize
}

pub fn bin_labels(targets: &[f64], width: f64) -> Result<Binning> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::invalid(format!("bin width must be positive, got {width}")));
    }
    if targets.is_empty() {
        return Err(Error::Data("no targets to bin".into()));
    }
    let t_min = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let ids: Vec<usize> = targets.iter().map(|&t| bin_id(t, t_min, width)).collect();
    let mut unique = ids.clone();
    unique.sort_unstable();
    unique.dedup();
    Ok(Binning { t_min, width, ids, unique })
}

/// Count thresholds: few below `few_max`, many above `med_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotThresholds {
    pub few_max: usize,
    pub med_max: usize,
}

impl ShotThresholds {
    pub const AIRFOIL: ShotThresholds = ShotThresholds { few_max: 10, med_max: 40 };
    pub const ABALONE: ShotThresholds = ShotThresholds { few_max: 100, med_max: 400 };
    pub const REAL_ESTATE: ShotThresholds = ShotThresholds { few_max: 3, med_max: 10 };
    pub const CONCRETE: ShotThresholds = ShotThresholds { few_max: 5, med_max: 15 };

    pub fn new(few_max: usize, med_max: usize) -> Result<Self> {
        if few_max == 0 || few_max >= med_max {
            return Err(Error::invalid(format!(
                "thresholds need 0 < few_max < med_max, got ({few_max}, {med_max})"
            )));
        }
        Ok(ShotThresholds { few_max, med_max })
    }

    pub fn region(&self, count: usize) -> Region {
        if count < self.few_max {
            Region::Few
        } else if count > self.med_max {
            Region::Many
        } else {
            Region::Med
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRegions {
    pub thresholds: ShotThresholds,
    pub map: BTreeMap<usize, Region>,
}

impl ShotRegions {
    /// Region of a bin; bins absent from training count as few-shot.
    pub fn of(&self, bin: usize) -> Region {
        self.map.get(&bin).copied().unwrap_or(Region::Few)
    }
}

pub fn shot_regions(train_bin_counts: &BTreeMap<usize, usize>, thresholds: ShotThresholds) -> Result<ShotRegions> {
    let thresholds = ShotThresholds::new(thresholds.few_max, thresholds.med_max)?;
    let map = train_bin_counts.iter().map(|(&b, &c)| (b, thresholds.region(c))).collect();
    Ok(ShotRegions { thresholds, map })
}

/// Per bin, draws up to `test_per_bin` rows for test and `val_per_bin` for
/// validation, always leaving at least one training row.
pub fn curate_split(binning: &Binning, seed: u64, test_per_bin: usize, val_per_bin: usize) -> Result<Vec<Split>> {
    if test_per_bin == 0 || val_per_bin == 0 {
        return Err(Error::invalid("per-bin quotas must be at least 1"));
    }
    if binning.ids.is_empty() {
        return Err(Error::Data("dataset too small to leave any training rows".into()));
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &b) in binning.ids.iter().enumerate() {
        members.entry(b).or_default().push(row);
    }
    let mut rng = rng::rng_for(seed, rng::stream::CURATE);
    let mut split = vec![Split::Train; binning.ids.len()];
    for rows in members.values_mut() {
        rows.shuffle(&mut rng);
        let spare = rows.len() - 1;
        let n_test = test_per_bin.min(spare);
        let n_val = val_per_bin.min(spare - n_test);
        for &r in &rows[..n_test] {
            split[r] = Split::Test;
        }
        for &r in &rows[n_test..n_test + n_val] {
            split[r] = Split::Val;
        }
    }
    Ok(split)
}

/// Per-column standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean/std over the given rows; constant columns get std 1.
    pub fn fit(rows: &[&[f64]]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            var.iter_mut().zip(*r).zip(&mean).for_each(|((v, x), m)| *v += (x - m) * (x - m) / n);
        }
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Curated tabular dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DirDataset {
    /// Standardized with train-row statistics.
    pub features: Tensor,
    pub targets: Vec<f64>,
    pub binning: Binning,
    pub split: Vec<Split>,
    pub regions: ShotRegions,
    pub standardizer: Standardizer,
    pub dropped: usize,
}

impl DirDataset {
    pub fn build(
        table: &RawTable,
        bin_width: f64,
        thresholds: ShotThresholds,
        seed: u64,
        test_per_bin: usize,
        val_per_bin: usize,
    ) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Data("dataset too small to leave any training rows".into()));
        }
        let binning = bin_labels(&table.targets, bin_width)?;
        let split = curate_split(&binning, seed, test_per_bin, val_per_bin)?;
        DirDataset::assemble(table, binning, split, thresholds)
    }

    /// Rebuilds a dataset from a stored split assignment.
    pub fn assemble(table: &RawTable, binning: Binning, split: Vec<Split>, thresholds: ShotThresholds) -> Result<Self> {
        if split.len() != table.len() || binning.ids.len() != table.len() {
            return Err(Error::Data(format!(
                "split covers {} rows, binning {}, table has {}",
                split.len(),
                binning.ids.len(),
                table.len()
            )));
        }
        let train_rows: Vec<usize> = (0..table.len()).filter(|&i| split[i] == Split::Train).collect();
        if train_rows.is_empty() {
            return Err(Error::Data("dataset too small to leave any training rows".into()));
        }
        let standardizer =
            Standardizer::fit(&train_rows.iter().map(|&i| table.features[i].as_slice()).collect::<Vec<_>>());
        let regions = shot_regions(&binning.counts(train_rows.iter().copied()), thresholds)?;
        let d = table.feature_names.len();
        let data = table.features.iter().flat_map(|r| standardizer.apply(r)).collect();
        Ok(DirDataset {
            features: Tensor::matrix(table.len(), d, data)?,
            targets: table.targets.clone(),
            binning,
            split,
            regions,
            standardizer,
            dropped: table.dropped,
        })
    }

    pub fn rows(&self, which: Split) -> Vec<usize> {
        (0..self.split.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn region_of_row(&self, row: usize) -> Region {
        self.regions.of(self.binning.ids[row])
    }

    pub fn split_data(&self, which: Split) -> Option<SplitData> {
        let rows = self.rows(which);
        if rows.is_empty() {
            return None;
        }
        Some(SplitData {
            x: self.features.select_rows(&rows),
            y: rows.iter().map(|&r| self.targets[r]).collect(),
            bins: rows.iter().map(|&r| self.binning.ids[r]).collect(),
            regions: rows.iter().map(|&r| self.region_of_row(r)).collect(),
        })
    }

    pub fn task(&self) -> Result<TaskData> {
        let train = self.split_data(Split::Train).ok_or_else(|| Error::Data("no training rows".into()))?;
        let test = self.split_data(Split::Test).ok_or_else(|| Error::Data("no test rows".into()))?;
        let mut ids: Vec<usize> = train.bins.clone();
        ids.sort_unstable();
        ids.dedup();
        Ok(TaskData {
            bin_values: ids.iter().map(|&b| self.binning.center(b)).collect(),
            bin_regions: ids.iter().map(|&b| self.regions.of(b)).collect(),
            bin_ids: ids,
            bin_origin: self.binning.t_min,
            bin_width: self.binning.width,
            train,
            val: self.split_data(Split::Val),
            test,
        })
    }
}

/// Rows of one split as the trainer sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub x: Tensor,
    pub y: Vec<f64>,
    /// Global bin id per row.
    pub bins: Vec<usize>,
    pub regions: Vec<Region>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// A training task: splits plus the surrogate's bin layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: SplitData,
    pub val: Option<SplitData>,
    pub test: SplitData,
    /// Global ids of the training bins, ascending; position = surrogate index.
    pub bin_ids: Vec<usize>,
    /// Label value (bin center) per surrogate index.
    pub bin_values: Vec<f64>,
    pub bin_regions: Vec<Region>,
    /// Bin `b` is centered at `bin_origin + (b + 0.5)·bin_width`.
    pub bin_origin: f64,
    pub bin_width: f64,
}

impl TaskData {
    pub fn surrogate_index(&self, global: usize) -> Option<usize> {
        self.bin_ids.binary_search(&global).ok()
    }

    pub fn input_dim(&self) -> usize {
        self.train.x.cols()
    }

    pub fn bin_center(&self, global: usize) -> f64 {
        self.bin_origin + (global as f64 + 0.5) * self.bin_width
    }

    pub fn split(&self, which: Split) -> Option<&SplitData> {
        match which {
            Split::Train => Some(&self.train),
            Split::Val => self.val.as_ref(),
            Split::Test => Some(&self.test),
        }
    }
}

/// Synthetic stand-in for the UCI airfoil self-noise table: the same five
/// inputs on their published grids, with the sound pressure level produced
/// by a turbulent-boundary-layer trailing-edge noise model plus Gaussian
/// noise, rescaled to the real table's mean and spread.
pub fn airfoil_like(seed: u64, rows: usize) -> RawTable {
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    const FREQS: [f64; 21] = [
        200.0, 250.0, 315.0, 400.0, 500.0, 630.0, 800.0, 1000.0, 1250.0, 1600.0, 2000.0, 2500.0, 3150.0,
        4000.0, 5000.0, 6300.0, 8000.0, 10000.0, 12500.0, 16000.0, 20000.0,
    ];
    const CHORDS: [f64; 6] = [0.0254, 0.0508, 0.1016, 0.1524, 0.2286, 0.3048];
    const SPEEDS: [f64; 4] = [31.7, 39.6, 55.5, 71.3];
    const ANGLES: [f64; 27] = [
        0.0, 1.5, 2.0, 2.7, 3.0, 3.3, 4.0, 4.2, 4.8, 5.3, 5.4, 6.7, 7.2, 7.3, 8.4, 8.9, 9.5, 9.9, 11.2, 12.3,
        12.6, 12.7, 15.4, 15.6, 17.4, 19.7, 22.2,
    ];

    let mut rng = rng::rng(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut features = Vec::with_capacity(rows);
    let mut raw = Vec::with_capacity(rows);
    for _ in 0..rows {
        let f = FREQS[rng.random_range(0..FREQS.len())];
        let chord = CHORDS[rng.random_range(0..CHORDS.len())];
        let u = SPEEDS[rng.random_range(0..SPEEDS.len())];
        let alpha = ANGLES[rng.random_range(0..ANGLES.len())];

        let re = u * chord / 1.5e-5;
        let lr = re.log10();
        let delta0 = chord * 10f64.powf(3.0187 - 1.5397 * lr + 0.1059 * lr * lr);
        let delta = delta0 * 10f64.powf(0.0679 * alpha.min(12.5));
        let mach = u / 340.0;
        let st = f * delta / u;
        let st_peak = 0.02 * mach.powf(-0.6) * 10f64.powf(0.0054 * (alpha - 1.33).powi(2)).min(4.0);
        let a = (st / st_peak).log10().abs();
        let shape = if a < 0.204 {
            (67.552 - 886.788 * a * a).max(0.0).sqrt() - 8.219
        } else if a <= 0.244 {
            -32.665 * a + 3.981
        } else {
            -142.795 * a.powi(3) + 103.656 * a * a - 57.757 * a + 6.006
        };
        let level = 10.0 * (delta * mach.powi(5) * 0.4572 / (1.22 * 1.22)).log10() + shape.max(-60.0);
        features.push(vec![f, alpha, chord, u, delta]);
        raw.push(level + 1.5 * noise.sample(&mut rng));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let targets = raw.iter().map(|v| 124.836 + 6.899 * (v - mean) / std).map(|v| (v * 1000.0).round() / 1000.0).collect();
    RawTable {
        feature_names: ["frequency", "angle_of_attack", "chord_length", "free_stream_velocity", "displacement_thickness"]
            .map(str::to_owned)
            .to_vec(),
        target_name: "sound_pressure".into(),
        features,
        targets,
        dropped: 0,
    }
}
