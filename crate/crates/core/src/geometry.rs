//! Hypersphere sampling and the two geometric constraints on the latent
//! trace: enveloping (coverage of the sphere) and homogeneity (even spacing
//! along the trace).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::{argmax, gemm, norm, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Monte-Carlo points on the unit sphere in `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereSample {
    pub points: Tensor,
    pub seed: u64,
}

impl SphereSample {
    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn d(&self) -> usize {
        self.points.cols()
    }
}

/// Normalized i.i.d. standard Gaussian vectors.
pub fn sample_hypersphere(n: usize, d: usize, seed: u64) -> Result<SphereSample> {
    if d < 2 {
        return Err(Error::invalid(format!("sphere dimension must be >= 2, got {d}")));
    }
    if n == 0 {
        return Err(Error::invalid("sphere sample needs at least one point"));
    }
    let mut rng = rng::rng(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut row = vec![0.0; d];
    while data.len() < n * d {
        for x in row.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        let r = norm(&row);
        // Zero-norm draws have probability zero; resample if one shows up.
        if r > 0.0 {
            data.extend(row.iter().map(|x| x / r));
        }
    }
    Ok(SphereSample { points: Tensor::matrix(n, d, data)?, seed })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomWeights {
    pub lambda_e: f64,
    pub lambda_h: f64,
}

impl GeomWeights {
    pub fn new(lambda_e: f64, lambda_h: f64) -> Result<Self> {
        if !(lambda_e.is_finite() && lambda_h.is_finite() && lambda_e >= 0.0 && lambda_h >= 0.0) {
            return Err(Error::invalid(format!(
                "geometric weights must be finite and non-negative, got ({lambda_e}, {lambda_h})"
            )));
        }
        Ok(GeomWeights { lambda_e, lambda_h })
    }
}

/// Cosine threshold of the hard tubular neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonTube(f64);

impl EpsilonTube {
    pub const DEFAULT: f64 = 0.95;

    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        Ok(EpsilonTube(epsilon))
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }
}

fn check_centroids(sample: &SphereSample, centroids: &Tensor) -> Result<()> {
    if centroids.is_empty() || centroids.rows() == 0 {
        return Err(Error::invalid("empty centroid set"));
    }
    if centroids.cols() != sample.d() {
        return Err(Error::shape(format!(
            "centroids are {}-dimensional, sphere sample is {}-dimensional",
            centroids.cols(),
            sample.d()
        )));
    }
    Ok(())
}

/// For every sample point, the index of its best-matching centroid and the
/// cosine to it. The winner's cosine is re-evaluated as `1 − ‖p − c‖²/2`,
/// which is exact when `p == c`.
fn nearest(sample: &SphereSample, centroids: &Tensor) -> Vec<(usize, f64)> {
    let (n, d) = sample.points.dims();
    let k = centroids.rows();
    let mut sims = vec![0.0; n * k];
    gemm(n, d, k, sample.points.data(), (d, 1), centroids.data(), (1, d), 0.0, &mut sims);
    sims.chunks_exact(k)
        .zip(sample.points.iter_rows())
        .map(|(row, p)| {
            let (j, _) = argmax(row);
            let dist2: f64 = p.iter().zip(centroids.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            (j, 1.0 - 0.5 * dist2)
        })
        .collect()
}

/// Soft enveloping objective `−(1/N) Σ_i max_k p_i·c_k` on the tape.
///
/// `points` is normally a constant leaf; gradient reaches only each point's
/// best-matching centroid.
pub fn enveloping_on(tape: &mut Tape, points: Var, centroids: Var) -> Result<Var> {
    let sims = tape.matmul_nt(points, centroids)?;
    let best = tape.row_max(sims)?;
    let m = tape.mean(best)?;
    tape.scale(m, -1.0)
}

pub fn enveloping_loss(sample: &SphereSample, centroids: &Tensor) -> Result<f64> {
    check_centroids(sample, centroids)?;
    let best = nearest(sample, centroids);
    Ok(-best.iter().map(|&(_, s)| s).sum::<f64>() / best.len() as f64)
}

fn check_labels(labels: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::invalid(format!("homogeneity needs at least 2 centroids, got {k}")));
    }
    if labels.len() != k {
        return Err(Error::shape(format!("{} labels for {k} centroids", labels.len())));
    }
    labels
        .windows(2)
        .map(|w| {
            let gap = w[1] - w[0];
            if gap > 0.0 && gap.is_finite() {
                Ok(1.0 / gap)
            } else {
                Err(Error::invalid(format!("labels must be strictly increasing: {} then {}", w[0], w[1])))
            }
        })
        .collect()
}

/// `Σ_k ‖c_{k+1} − c_k‖² / (y_{k+1} − y_k)` on the tape.
pub fn homogeneity_on(tape: &mut Tape, centroids: Var, labels: &[f64]) -> Result<Var> {
    let inv_gaps = check_labels(labels, tape.dims(centroids).0)?;
    let diff = tape.row_diff(centroids)?;
    let sq = tape.square(diff)?;
    let weighted = tape.scale_rows(sq, inv_gaps)?;
    tape.sum(weighted)
}

pub fn homogeneity_loss(centroids: &Tensor, labels: &[f64]) -> Result<f64> {
    let inv_gaps = check_labels(labels, centroids.rows())?;
    let rows: Vec<&[f64]> = centroids.iter_rows().collect();
    Ok(rows
        .windows(2)
        .zip(&inv_gaps)
        .map(|(w, g)| w[1].iter().zip(w[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * g)
        .sum())
}

/// `λ_e·L_env + λ_h·L_homo` on the tape.
pub fn geometric_on(
    tape: &mut Tape,
    points: Var,
    centroids: Var,
    labels: &[f64],
    w: GeomWeights,
) -> Result<Var> {
    let env = enveloping_on(tape, points, centroids)?;
    let homo = homogeneity_on(tape, centroids, labels)?;
    let a = tape.scale(env, w.lambda_e)?;
    let b = tape.scale(homo, w.lambda_h)?;
    tape.add(a, b)
}

pub fn geometric_loss(sample: &SphereSample, centroids: &Tensor, labels: &[f64], w: GeomWeights) -> Result<f64> {
    let env = enveloping_loss(sample, centroids)?;
    let homo = homogeneity_loss(centroids, labels)?;
    Ok(w.lambda_e * env + w.lambda_h * homo)
}

/// Fraction of sample points whose best cosine to the trace exceeds ε.
pub fn coverage_at_epsilon(sample: &SphereSample, centroids: &Tensor, tube: EpsilonTube) -> Result<f64> {
    check_centroids(sample, centroids)?;
    let best = nearest(sample, centroids);
    let hit = best.iter().filter(|&&(_, s)| s > tube.epsilon()).count();
    Ok(hit as f64 / best.len() as f64)
}

/// Fraction of sample points whose nearest centroid is flagged few-shot.
/// Ties go to the lowest centroid index.
pub fn few_shot_proportion(sample: &SphereSample, centroids: &Tensor, is_few: &[bool]) -> Result<f64> {
    check_centroids(sample, centroids)?;
    if is_few.len() != centroids.rows() {
        return Err(Error::shape(format!(
            "{} region flags for {} centroids",
            is_few.len(),
            centroids.rows()
        )));
    }
    let best = nearest(sample, centroids);
    let few = best.iter().filter(|&&(k, _)| is_few[k]).count();
    Ok(few as f64 / best.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle(k: usize) -> Tensor {
        let data = (0..k)
            .flat_map(|i| {
                let a = 2.0 * PI * i as f64 / k as f64;
                [a.cos(), a.sin()]
            })
            .collect();
        Tensor::matrix(k, 2, data).unwrap()
    }

    #[test]
    fn sample_is_unit_and_deterministic() {
        let a = sample_hypersphere(500, 7, 11).unwrap();
        let b = sample_hypersphere(500, 7, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.points.row_norms().iter().all(|n| (n - 1.0).abs() < 1e-12));
        assert!(sample_hypersphere(10, 1, 0).is_err());
    }

    #[test]
    fn sample_mean_is_near_zero() {
        let s = sample_hypersphere(100_000, 3, 5).unwrap();
        let mut mean = [0.0; 3];
        for row in s.points.iter_rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / 100_000.0;
            }
        }
        assert!(norm(&mean) < 0.02, "{mean:?}");
    }

    #[test]
    fn single_centroid_envelope_is_zero_mean() {
        let s = sample_hypersphere(100_000, 2, 1).unwrap();
        let c = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        // Max over one centroid is just p·c, whose mean over the circle is 0.
        let l = enveloping_loss(&s, &c).unwrap();
        assert!(l.abs() <= 0.01, "{l}");
        let cov = coverage_at_epsilon(&s, &c, EpsilonTube(1e-300)).unwrap();
        assert!((cov - 0.5).abs() < 0.01, "{cov}");
    }

    #[test]
    fn dense_circle_envelope_near_minus_one() {
        let s = sample_hypersphere(100_000, 2, 2).unwrap();
        let c = circle(256);
        assert!(enveloping_loss(&s, &c).unwrap() <= -0.9999);
        let cov = coverage_at_epsilon(&s, &c, EpsilonTube::new(0.99).unwrap()).unwrap();
        assert!(cov >= 0.99);
    }

    #[test]
    fn self_match_is_exactly_minus_one() {
        let s = sample_hypersphere(64, 5, 3).unwrap();
        assert_eq!(enveloping_loss(&s, &s.points).unwrap(), -1.0);
        let cov = coverage_at_epsilon(&s, &s.points, EpsilonTube::new(0.999).unwrap()).unwrap();
        assert_eq!(cov, 1.0);
    }

    #[test]
    fn envelope_rejects_bad_centroids() {
        let s = sample_hypersphere(4, 3, 0).unwrap();
        assert!(enveloping_loss(&s, &Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap()).is_err());
    }

    #[test]
    fn homogeneity_values() {
        let c = Tensor::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8]]).unwrap();
        assert_eq!(homogeneity_loss(&c, &[3.0, 7.5]).unwrap(), 0.0);
        let c = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(homogeneity_loss(&c, &[0.0, 1.0]).unwrap(), 2.0);
        assert!(homogeneity_loss(&c, &[1.0, 1.0]).is_err());
        assert!(homogeneity_loss(&c, &[2.0, 1.0]).is_err());
        let one = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(homogeneity_loss(&one, &[0.0]).is_err());
    }

    #[test]
    fn tape_and_direct_forms_agree() {
        let s = sample_hypersphere(300, 4, 9).unwrap();
        let c = sample_hypersphere(6, 4, 10).unwrap().points;
        let labels = [0.0, 0.5, 1.7, 2.0, 3.1, 4.0];
        let w = GeomWeights::new(0.3, 0.7).unwrap();
        let mut t = Tape::new();
        let p = t.constant(&s.points);
        let cv = t.param(&c);
        let g = geometric_on(&mut t, p, cv, &labels, w).unwrap();
        let direct = geometric_loss(&s, &c, &labels, w).unwrap();
        assert!((t.scalar(g) - direct).abs() < 1e-12);
    }

    #[test]
    fn few_shot_all_few() {
        let s = sample_hypersphere(1000, 3, 4).unwrap();
        let c = sample_hypersphere(5, 3, 8).unwrap().points;
        assert_eq!(few_shot_proportion(&s, &c, &[true; 5]).unwrap(), 1.0);
        assert_eq!(few_shot_proportion(&s, &c, &[false; 5]).unwrap(), 0.0);
        assert!(few_shot_proportion(&s, &c, &[true; 4]).is_err());
    }

    #[test]
    fn few_shot_antipodal_halves() {
        let s = sample_hypersphere(100_000, 2, 6).unwrap();
        let c = Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let p = few_shot_proportion(&s, &c, &[true, false]).unwrap();
        assert!((p - 0.5).abs() < 0.01, "{p}");
    }

    #[test]
    fn weights_and_tube_validate() {
        assert!(GeomWeights::new(-1.0, 0.0).is_err());
        assert!(GeomWeights::new(f64::NAN, 0.0).is_err());
        assert!(EpsilonTube::new(1.0).is_err());
        assert!(EpsilonTube::new(0.0).is_err());
    }
}
