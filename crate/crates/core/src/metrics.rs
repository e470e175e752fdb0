//! Imbalanced-regression metrics over All/Many/Med/Few partitions.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::data::Region;
use crate::error::{Error, Result};

pub const EPS_GM: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub mae: f64,
    pub gm: f64,
    pub mse: f64,
    /// Absent with fewer than two rows or a constant side.
    pub pearson: Option<f64>,
    pub count: usize,
}

impl RegionStats {
    pub fn compute(preds: &[f64], targets: &[f64]) -> Option<Self> {
        let n = preds.len();
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let (mut abs, mut log, mut sq) = (0.0, 0.0, 0.0);
        for (p, t) in preds.iter().zip(targets) {
            let e = p - t;
            abs += e.abs();
            log += (e.abs() + EPS_GM).ln();
            sq += e * e;
        }
        Some(RegionStats { mae: abs / nf, gm: (log / nf).exp(), mse: sq / nf, pearson: pearson(preds, targets), count: n })
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub all: Option<RegionStats>,
    pub many: Option<RegionStats>,
    pub med: Option<RegionStats>,
    pub few: Option<RegionStats>,
}

impl RegionReport {
    pub fn get(&self, r: Region) -> Option<&RegionStats> {
        match r {
            Region::Many => self.many.as_ref(),
            Region::Med => self.med.as_ref(),
            Region::Few => self.few.as_ref(),
        }
    }

    pub fn all_mae(&self) -> f64 {
        self.all.map_or(f64::NAN, |s| s.mae)
    }

    pub fn few_mae(&self) -> f64 {
        self.few.map_or(f64::NAN, |s| s.mae)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table: one row per partition, MAE/GM/MSE/Pearson columns.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<6} {:>7} {:>12} {:>12} {:>12} {:>9}", "shot", "count", "MAE", "GM", "MSE", "Pearson");
        let rows = [("All", self.all), ("Many", self.many), ("Med", self.med), ("Few", self.few)];
        for (name, stats) in rows {
            match stats {
                Some(s) => {
                    let p = s.pearson.map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
                    let _ = writeln!(
                        out,
                        "{name:<6} {:>7} {:>12.6} {:>12.6} {:>12.6} {p:>9}",
                        s.count, s.mae, s.gm, s.mse
                    );
                }
                None => {
                    let _ = writeln!(out, "{name:<6} {:>7} {:>12} {:>12} {:>12} {:>9}", 0, "-", "-", "-", "-");
                }
            }
        }
        out
    }
}

impl fmt::Display for RegionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table())
    }
}

pub fn region_metrics(preds: &[f64], targets: &[f64], regions: &[Region]) -> Result<RegionReport> {
    if preds.is_empty() || preds.len() != targets.len() || preds.len() != regions.len() {
        return Err(Error::shape(format!(
            "metrics need equal non-empty lengths, got {} preds, {} targets, {} regions",
            preds.len(),
            targets.len(),
            regions.len()
        )));
    }
    let part = |r: Region| {
        let (p, t): (Vec<f64>, Vec<f64>) =
            (0..preds.len()).filter(|&i| regions[i] == r).map(|i| (preds[i], targets[i])).unzip();
        RegionStats::compute(&p, &t)
    };
    Ok(RegionReport {
        all: RegionStats::compute(preds, targets),
        many: part(Region::Many),
        med: part(Region::Med),
        few: part(Region::Few),
    })
}
