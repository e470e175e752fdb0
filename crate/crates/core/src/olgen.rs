//! Synthetic imbalanced operator-learning data.
//!
//! Input functions are Gaussian random fields on a fixed sensor grid. The
//! linear task maps `u` to its antiderivative, the nonlinear task maps a
//! log-coefficient field `b` to the solution of
//! `(e^b u')' = f` with `u(0) = u(1) = 0`. Query locations are drawn
//! unevenly across few/med/many bands of `[0, 1]` for training and
//! uniformly for testing.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::data::{Region, SplitData, TaskData};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, Rng};

pub const DEFAULT_SENSORS: usize = 100;
pub const DEFAULT_LENGTH_SCALE: f64 = 0.2;
pub const ELLIPTIC_RHS: f64 = 10.0;
const MAX_JITTER: f64 = 1e-6;

/// `m` equispaced points on `[0, 1]`, endpoints included.
pub fn grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub grid: Vec<f64>,
    pub length_scale: f64,
    pub variance: f64,
}

impl GrfSpec {
    pub fn new(grid: Vec<f64>, length_scale: f64, variance: f64) -> Result<Self> {
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("GRF grid must hold 2+ strictly increasing points"));
        }
        if !(length_scale > 0.0) || !(variance > 0.0) {
            return Err(Error::invalid(format!(
                "GRF needs positive length scale and variance, got {length_scale}, {variance}"
            )));
        }
        Ok(GrfSpec { grid, length_scale, variance })
    }

    pub fn standard() -> Self {
        GrfSpec { grid: grid(DEFAULT_SENSORS), length_scale: DEFAULT_LENGTH_SCALE, variance: 1.0 }
    }
}

/// Draws GRF samples as `L·g` with `L` the Cholesky factor of the RBF kernel.
#[derive(Clone, Debug)]
pub struct GrfSampler {
    m: usize,
    chol: Vec<f64>,
    pub jitter: f64,
}

/// Lower Cholesky factor, row-major; `None` if a pivot is not positive.
fn cholesky(a: &[f64], m: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * m + k] * l[j * m + k]).sum();
            if i == j {
                let d = a[i * m + i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i * m + i] = d.sqrt();
            } else {
                l[i * m + j] = (a[i * m + j] - s) / l[j * m + j];
            }
        }
    }
    Some(l)
}

impl GrfSampler {
    pub fn new(spec: &GrfSpec) -> Result<Self> {
        let m = spec.grid.len();
        let two_l2 = 2.0 * spec.length_scale * spec.length_scale;
        let mut k = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let d = spec.grid[i] - spec.grid[j];
                k[i * m + j] = spec.variance * (-d * d / two_l2).exp();
            }
        }
        let trace: f64 = (0..m).map(|i| k[i * m + i]).sum();
        let mut jitter = 1e-10 * trace / m as f64;
        loop {
            let mut kj = k.clone();
            (0..m).for_each(|i| kj[i * m + i] += jitter);
            if let Some(chol) = cholesky(&kj, m) {
                return Ok(GrfSampler { m, chol, jitter });
            }
            if jitter >= MAX_JITTER {
                return Err(Error::Numeric(format!("Cholesky failed with jitter {jitter:e}")));
            }
            jitter = (jitter * 10.0).min(MAX_JITTER);
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let g: Vec<f64> = (0..self.m).map(|_| StandardNormal.sample(rng)).collect();
        (0..self.m)
            .map(|i| (0..=i).map(|j| self.chol[i * self.m + j] * g[j]).sum())
            .collect()
    }
}

pub fn sample_grf(spec: &GrfSpec, seed: u64) -> Result<Vec<f64>> {
    Ok(GrfSampler::new(spec)?.sample(&mut rng::rng(seed)))
}

/// Piecewise-linear interpolation of grid values at `y`.
pub fn interpolate(grid: &[f64], values: &[f64], y: f64) -> f64 {
    let last = grid.len() - 1;
    if y <= grid[0] {
        return values[0];
    }
    if y >= grid[last] {
        return values[last];
    }
    let hi = grid.partition_point(|&g| g <= y).min(last);
    let lo = hi - 1;
    let t = (y - grid[lo]) / (grid[hi] - grid[lo]);
    values[lo] + t * (values[hi] - values[lo])
}

/// `s(x_i) = ∫₀^{x_i} u` by the cumulative trapezoid rule.
pub fn cumulative_trapezoid(u: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut s = Vec::with_capacity(u.len());
    s.push(0.0);
    for i in 1..u.len() {
        let prev = s[i - 1];
        s.push(prev + 0.5 * (u[i] + u[i - 1]) * (grid[i] - grid[i - 1]));
    }
    s
}

pub fn antiderivative(u: &[f64], grid: &[f64], y: f64) -> Result<f64> {
    if u.len() != grid.len() || grid.len() < 2 {
        return Err(Error::shape(format!("{} values on a {}-point grid", u.len(), grid.len())));
    }
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::invalid(format!("query location {y} outside [0, 1]")));
    }
    Ok(interpolate(grid, &cumulative_trapezoid(u, grid), y))
}

/// Solves `(e^b u')' = f` with `u = 0` at both ends by a conservative
/// three-point scheme; face coefficients are `e^b` at cell midpoints.
pub fn solve_elliptic(b: &[f64], grid: &[f64], f: f64) -> Result<Vec<f64>> {
    let m = grid.len();
    if b.len() != m || m < 3 {
        return Err(Error::shape(format!("{} coefficients on a {m}-point grid", b.len())));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite coefficient field"));
    }
    let h: Vec<f64> = grid.windows(2).map(|w| w[1] - w[0]).collect();
    let face: Vec<f64> = b.windows(2).map(|w| (0.5 * (w[0] + w[1])).exp()).collect();

    // Interior unknowns u_1..u_{m-2}; row i:
    //   [a_{i-1/2}/h_{i-1} u_{i-1} − (a_{i-1/2}/h_{i-1} + a_{i+1/2}/h_i) u_i + a_{i+1/2}/h_i u_{i+1}]
    //   / ((h_{i-1} + h_i)/2) = f
    let n = m - 2;
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for r in 0..n {
        let i = r + 1;
        let wl = face[i - 1] / h[i - 1];
        let wr = face[i] / h[i];
        let scale = 0.5 * (h[i - 1] + h[i]);
        lower[r] = wl;
        diag[r] = -(wl + wr);
        upper[r] = wr;
        rhs[r] = f * scale;
    }
    let interior = thomas(&lower, &diag, &upper, &rhs)?;
    let mut u = Vec::with_capacity(m);
    u.push(0.0);
    u.extend(interior);
    u.push(0.0);
    Ok(u)
}

/// Tridiagonal solve; `lower[0]` and `upper[n-1]` are ignored.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    for i in 0..n {
        if i > 0 {
            denom = diag[i] - lower[i] * c[i - 1];
        }
        if denom.abs() < 1e-300 {
            return Err(Error::Numeric(format!("singular tridiagonal system at row {i}")));
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - if i > 0 { lower[i] * d[i - 1] } else { 0.0 }) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Few/med/many geography of query locations on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionBands {
    pub few: Vec<(f64, f64)>,
    pub med: Vec<(f64, f64)>,
    pub many: Vec<(f64, f64)>,
}

impl Default for RegionBands {
    fn default() -> Self {
        RegionBands {
            few: vec![(0.0, 0.2), (0.8, 1.0)],
            med: vec![(0.2, 0.4), (0.6, 0.8)],
            many: vec![(0.4, 0.6)],
        }
    }
}

impl RegionBands {
    fn intervals(&self, r: Region) -> &[(f64, f64)] {
        match r {
            Region::Few => &self.few,
            Region::Med => &self.med,
            Region::Many => &self.many,
        }
    }

    /// Intervals are half-open `[a, b)` except that `1.0` belongs to the band ending there.
    pub fn region_of(&self, y: f64) -> Region {
        for r in Region::ALL {
            if self.intervals(r).iter().any(|&(a, b)| y >= a && (y < b || (b >= 1.0 && y <= b))) {
                return r;
            }
        }
        Region::Few
    }

    /// Uniform draw over the union of a region's intervals.
    pub fn sample_in(&self, r: Region, rng: &mut Rng) -> f64 {
        let iv = self.intervals(r);
        let total: f64 = iv.iter().map(|(a, b)| b - a).sum();
        let mut t = rng.random_range(0.0..total);
        for &(a, b) in iv {
            if t < b - a {
                return a + t;
            }
            t -= b - a;
        }
        iv.last().map_or(0.0, |&(a, _)| a)
    }
}

/// Percentages of training queries drawn from each band.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub few: f64,
    pub med: f64,
    pub many: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Mix { few: 10.0, med: 30.0, many: 60.0 }
    }
}

impl Mix {
    pub fn validate(self) -> Result<Self> {
        let parts = [self.few, self.med, self.many];
        if parts.iter().any(|p| !(*p >= 0.0)) || (parts.iter().sum::<f64>() - 100.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mix must be non-negative and sum to 100, got {parts:?}")));
        }
        Ok(self)
    }

    fn draw(&self, rng: &mut Rng) -> Region {
        let t = rng.random_range(0.0..100.0);
        if t < self.few {
            Region::Few
        } else if t < self.few + self.med {
            Region::Med
        } else {
            Region::Many
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Linear,
    Nonlinear,
}

impl std::str::FromStr for Operator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Operator::Linear),
            "nonlinear" => Ok(Operator::Nonlinear),
            other => Err(Error::invalid(format!("unknown operator {other:?}"))),
        }
    }
}

/// One `([u, y], G(u)(y))` example, stored at 32-bit precision.
#[derive(Clone, Debug, PartialEq)]
pub struct OlSample {
    pub u: Vec<f32>,
    pub y: f32,
    pub target: f32,
    pub region: Region,
}

/// Evaluates the operator at `y` for an input already rounded to `f32`.
pub fn operator_target(op: Operator, u: &[f32], grid: &[f64], y: f32) -> Result<f32> {
    let u64s: Vec<f64> = u.iter().map(|&v| v as f64).collect();
    let y = y as f64;
    let t = match op {
        Operator::Linear => antiderivative(&u64s, grid, y)?,
        Operator::Nonlinear => interpolate(grid, &solve_elliptic(&u64s, grid, ELLIPTIC_RHS)?, y),
    };
    Ok(t as f32)
}

/// Draws `n` examples. `mix = None` means uniform query locations.
pub fn generate_split(
    op: Operator,
    sampler: &GrfSampler,
    grid: &[f64],
    bands: &RegionBands,
    mix: Option<Mix>,
    n: usize,
    seed: u64,
) -> Result<Vec<OlSample>> {
    if let Some(m) = mix {
        m.validate()?;
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::rng(rng::derive(seed, i as u64));
            let u: Vec<f32> = sampler.sample(&mut rng).into_iter().map(|v| v as f32).collect();
            let y = match mix {
                Some(m) => bands.sample_in(m.draw(&mut rng), &mut rng),
                None => rng.random_range(0.0..=1.0),
            } as f32;
            let target = operator_target(op, &u, grid, y)?;
            Ok(OlSample { region: bands.region_of(y as f64), u, y, target })
        })
        .collect()
}

pub const OL_FORMAT: &str = "srl-oldir/1";
pub const Y_BIN_WIDTH: f64 = 0.01;
pub const Y_BINS: usize = 100;

/// Header of one OL-DIR split file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlHeader {
    pub operator: Operator,
    pub m: usize,
    pub grid: Vec<f64>,
    pub bands: RegionBands,
    pub mix: Option<Mix>,
    pub seed: u64,
    pub count: usize,
    pub regions: Vec<Region>,
}

pub fn write_split(path: &Path, header: &OlHeader, samples: &[OlSample]) -> Result<()> {
    let payload: Vec<f32> = samples
        .iter()
        .flat_map(|s| s.u.iter().copied().chain([s.y, s.target]))
        .collect();
    io::write_container(path, OL_FORMAT, header, &payload)
}

pub fn read_split(path: &Path) -> Result<(OlHeader, Vec<OlSample>)> {
    let (h, payload): (OlHeader, Vec<f32>) = io::read_container(path, OL_FORMAT)?;
    let width = h.m + 2;
    if h.grid.len() != h.m || h.regions.len() != h.count || payload.len() != h.count * width {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            reason: format!("m={}, count={}, {} floats", h.m, h.count, payload.len()),
        });
    }
    let samples = payload
        .chunks_exact(width)
        .zip(&h.regions)
        .map(|(row, &region)| OlSample { u: row[..h.m].to_vec(), y: row[h.m], target: row[h.m + 1], region })
        .collect();
    Ok((h, samples))
}

/// Bin of a query location among 100 equal bins on `[0, 1]`.
pub fn y_bin(y: f64) -> usize {
    ((y / Y_BIN_WIDTH).floor().max(0.0) as usize).min(Y_BINS - 1)
}

pub fn y_bin_center(bin: usize) -> f64 {
    (bin as f64 + 0.5) * Y_BIN_WIDTH
}

/// Trainer view of OL samples: inputs `[u, y]`, target `G(u)(y)`.
pub fn split_data(samples: &[OlSample]) -> Result<SplitData> {
    let m = samples.first().map_or(0, |s| s.u.len());
    if m == 0 {
        return Err(Error::Data("empty OL-DIR split".into()));
    }
    let data = samples.iter().flat_map(|s| s.u.iter().chain([&s.y]).map(|&v| v as f64)).collect();
    Ok(SplitData {
        x: Tensor::matrix(samples.len(), m + 1, data)?,
        y: samples.iter().map(|s| s.target as f64).collect(),
        bins: samples.iter().map(|s| y_bin(s.y as f64)).collect(),
        regions: samples.iter().map(|s| s.region).collect(),
    })
}

pub fn task(train: &[OlSample], val: Option<&[OlSample]>, test: &[OlSample], bands: &RegionBands) -> Result<TaskData> {
    let train = split_data(train)?;
    let mut ids = train.bins.clone();
    ids.sort_unstable();
    ids.dedup();
    Ok(TaskData {
        bin_values: ids.iter().map(|&b| y_bin_center(b)).collect(),
        bin_regions: ids.iter().map(|&b| bands.region_of(y_bin_center(b))).collect(),
        bin_ids: ids,
        bin_origin: 0.0,
        bin_width: Y_BIN_WIDTH,
        val: val.map(split_data).transpose()?,
        test: split_data(test)?,
        train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grf_is_deterministic() {
        let spec = GrfSpec::standard();
        assert_eq!(sample_grf(&spec, 3).unwrap(), sample_grf(&spec, 3).unwrap());
        assert_ne!(sample_grf(&spec, 3).unwrap(), sample_grf(&spec, 4).unwrap());
    }

    #[test]
    fn standard_kernel_needs_little_jitter() {
        let s = GrfSampler::new(&GrfSpec::standard()).unwrap();
        assert!(s.jitter <= 1e-8, "{}", s.jitter);
    }

    #[test]
    fn long_length_scale_gives_flat_functions() {
        let spec = GrfSpec::new(grid(100), 100.0, 1.0).unwrap();
        let sampler = GrfSampler::new(&spec).unwrap();
        let mut rng = rng::rng(9);
        for _ in 0..20 {
            let u = sampler.sample(&mut rng);
            let (lo, hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            assert!(hi - lo < 0.05, "spread {}", hi - lo);
        }
    }

    #[test]
    fn antiderivative_cases() {
        let g = grid(100);
        let ones = vec![1.0; 100];
        for y in [0.0, 0.13, 0.5, 0.987, 1.0] {
            assert!((antiderivative(&ones, &g, y).unwrap() - y).abs() < 1e-14);
        }
        assert_eq!(antiderivative(&g, &g, 0.0).unwrap(), 0.0);
        assert!((antiderivative(&g, &g, 1.0).unwrap() - 0.5).abs() < 1e-4);
        assert!(antiderivative(&ones, &g, 1.5).is_err());
        assert!(antiderivative(&ones, &g, -0.1).is_err());
    }

    #[test]
    fn elliptic_constant_coefficient() {
        let g = grid(100);
        let u = solve_elliptic(&vec![0.0; 100], &g, 10.0).unwrap();
        assert_eq!(u[0], 0.0);
        assert_eq!(u[99], 0.0);
        let err = g.iter().zip(&u).map(|(x, v)| (v - 5.0 * x * (x - 1.0)).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn bands_partition() {
        let b = RegionBands::default();
        assert_eq!(b.region_of(0.0), Region::Few);
        assert_eq!(b.region_of(0.2), Region::Med);
        assert_eq!(b.region_of(0.5), Region::Many);
        assert_eq!(b.region_of(0.6), Region::Med);
        assert_eq!(b.region_of(0.8), Region::Few);
        assert_eq!(b.region_of(1.0), Region::Few);
        let mut rng = rng::rng(0);
        for r in Region::ALL {
            for _ in 0..200 {
                assert_eq!(b.region_of(b.sample_in(r, &mut rng)), r);
            }
        }
    }

    #[test]
    fn split_file_roundtrip() {
        let spec = GrfSpec::standard();
        let sampler = GrfSampler::new(&spec).unwrap();
        let bands = RegionBands::default();
        let samples = generate_split(Operator::Linear, &sampler, &spec.grid, &bands, Some(Mix::default()), 20, 1).unwrap();
        let header = OlHeader {
            operator: Operator::Linear,
            m: 100,
            grid: spec.grid.clone(),
            bands,
            mix: Some(Mix::default()),
            seed: 1,
            count: 20,
            regions: samples.iter().map(|s| s.region).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.ol");
        write_split(&path, &header, &samples).unwrap();
        let (h, back) = read_split(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, samples);
        for s in &back {
            assert_eq!(operator_target(Operator::Linear, &s.u, &spec.grid, s.y).unwrap(), s.target);
        }
    }

    #[test]
    fn y_bins() {
        assert_eq!(y_bin(0.0), 0);
        assert_eq!(y_bin(0.015), 1);
        assert_eq!(y_bin(1.0), 99);
        assert!((y_bin_center(99) - 0.995).abs() < 1e-12);
    }

    #[test]
    fn mix_validation() {
        assert!(Mix { few: 10.0, med: 30.0, many: 50.0 }.validate().is_err());
        assert!(Mix { few: -10.0, med: 50.0, many: 60.0 }.validate().is_err());
        assert!(Mix::default().validate().is_ok());
    }
}
