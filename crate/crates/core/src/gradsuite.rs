//! Finite-difference checks of every training loss on random configurations.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::diff::{grad_check, Tape, Tensor, Var};
use crate::error::Result;
use crate::geometry;
use crate::nn::{mse_on, Activation, Model};
use crate::rng::{self, Rng};
use crate::surrogate;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
pub const DIMS: [usize; 3] = [2, 8, 32];
pub const BINS: [usize; 3] = [2, 5, 20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Enveloping,
    Homogeneity,
    Contrastive,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Mse, LossKind::Enveloping, LossKind::Homogeneity, LossKind::Contrastive];
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub loss: LossKind,
    pub d: usize,
    pub k: usize,
    pub seed: u64,
    pub max_rel_error: f64,
}

fn gaussian(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("sizes agree")
}

pub fn check_case(loss: LossKind, d: usize, k: usize, seed: u64) -> Result<CaseResult> {
    let mut rng = rng::rng(seed);
    let m = 8;
    let err = match loss {
        LossKind::Mse => {
            let model = Model::new(&[3, 6, d], Activation::Tanh, rng.random())?;
            let x = gaussian(&mut rng, m, 3);
            let y: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
            let n_enc = model.encoder.num_tensors();
            grad_check(
                |t: &mut Tape, p: &[Var]| {
                    let vars = crate::nn::ModelVars { encoder: p[..n_enc].to_vec(), head: p[n_enc..].to_vec() };
                    let xv = t.constant(&x);
                    let z = model.encode_on(t, &vars, xv)?;
                    let pred = model.regress_on(t, &vars, z)?;
                    mse_on(t, pred, &y)
                },
                &params,
                STEP,
            )?
        }
        LossKind::Enveloping => {
            let sphere = geometry::sample_hypersphere(100, d, rng.random())?;
            let c = gaussian(&mut rng, k, d);
            grad_check(
                |t: &mut Tape, p: &[Var]| {
                    let pts = t.constant(&sphere.points);
                    let cn = t.l2_normalize(p[0])?;
                    geometry::enveloping_on(t, pts, cn)
                },
                &[c],
                STEP,
            )?
        }
        LossKind::Homogeneity => {
            let c = gaussian(&mut rng, k, d);
            let mut labels = vec![0.0];
            for _ in 1..k {
                let last = *labels.last().expect("non-empty");
                labels.push(last + rng.random_range(0.1..1.0));
            }
            grad_check(
                |t: &mut Tape, p: &[Var]| {
                    let cn = t.l2_normalize(p[0])?;
                    geometry::homogeneity_on(t, cn, &labels)
                },
                &[c],
                STEP,
            )?
        }
        LossKind::Contrastive => {
            let z = gaussian(&mut rng, m, d);
            let c = gaussian(&mut rng, k, d);
            let bins: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
            grad_check(
                |t: &mut Tape, p: &[Var]| {
                    let zn = t.l2_normalize(p[0])?;
                    let cn = t.l2_normalize(p[1])?;
                    surrogate::contrastive_on(t, zn, &bins, cn, 0.1)
                },
                &[z, c],
                STEP,
            )?
        }
    };
    Ok(CaseResult { loss, d, k, seed, max_rel_error: err })
}

/// Every loss on every `(d, K)` pair, `repeats` random draws each.
pub fn run_suite(seed: u64, repeats: usize) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    let mut i = 0;
    for _ in 0..repeats {
        for loss in LossKind::ALL {
            for d in DIMS {
                for k in BINS {
                    out.push(check_case(loss, d, k, rng::derive(seed, i))?);
                    i += 1;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pass_is_within_tolerance() {
        let results = run_suite(11, 1).unwrap();
        assert_eq!(results.len(), 36);
        for r in results {
            assert!(r.max_rel_error <= TOLERANCE, "{r:?}");
        }
    }
}
