//! The surrogate-driven training loop and its vanilla-MSE baseline.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Region, SplitData, TaskData};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, SphereSample};
use crate::io::{self, Checkpoint, Embeddings};
use crate::metrics::{region_metrics, RegionReport};
use crate::nn::{adamw_step, mse_on, Activation, AdamWConfig, AdamWState, Model};
use crate::rng;
use crate::surrogate::{self, BatchCentroids, RunningMean, Surrogate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Srl,
    Vanilla,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "srl" => Ok(Mode::Srl),
            "vanilla" => Ok(Mode::Vanilla),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda_e: f64,
    pub lambda_h: f64,
    /// Switches the unweighted contrastive term on or off.
    pub contrastive: bool,
    pub tau: f64,
    pub alpha: f64,
    pub sphere_points: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub rep_dim: usize,
    pub activation: Activation,
}

impl TrainConfig {
    pub fn uci() -> Self {
        TrainConfig {
            mode: Mode::Srl,
            lambda_e: 1e-2,
            lambda_h: 1e-2,
            contrastive: true,
            tau: 0.1,
            alpha: 0.9,
            sphere_points: 1000,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 256,
            epochs: 400,
            seed: 0,
            hidden: vec![20, 30],
            rep_dim: 10,
            activation: Activation::Relu,
        }
    }

    pub fn oldir() -> Self {
        TrainConfig {
            lambda_e: 1e-1,
            lambda_h: 1e-1,
            batch_size: 1000,
            epochs: 300,
            hidden: vec![128, 128],
            rep_dim: 128,
            activation: Activation::Tanh,
            ..TrainConfig::uci()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("tau", self.tau), ("lr", self.lr)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be positive, got {v}")));
        }
        let non_negative = [("lambda_e", self.lambda_e), ("lambda_h", self.lambda_h), ("weight_decay", self.weight_decay)];
        if let Some((name, v)) = non_negative.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.rep_dim == 0 || self.sphere_points == 0 {
            return Err(Error::invalid("batch_size, epochs, rep_dim and sphere_points must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid(format!("zero-width hidden layer in {:?}", self.hidden)));
        }
        Ok(())
    }

    pub fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(self.rep_dim);
        dims
    }
}

/// Batch-averaged loss components of one epoch. Geometric and contrastive
/// parts are absent when they were not evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reg: f64,
    pub env: Option<f64>,
    pub homo: Option<f64>,
    /// `λe·env + λh·homo` as it entered the loss.
    pub geom: Option<f64>,
    pub con: Option<f64>,
    pub total: f64,
    pub val: Option<RegionReport>,
    /// SHA-256 of the surrogate in force after this epoch.
    pub surrogate_sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub config: TrainConfig,
    pub target_mean: f64,
    pub target_std: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("history serializes");
        s.push('\n');
        s
    }
}

pub struct TrainOutput {
    /// The model at the best validation epoch (the last epoch without validation rows).
    pub checkpoint: Checkpoint,
    pub surrogate: Option<Surrogate>,
    pub history: TrainHistory,
}

#[derive(Default)]
struct Sums {
    reg: f64,
    env: f64,
    homo: f64,
    geom: f64,
    con: f64,
    total: f64,
    batches: usize,
}

pub fn surrogate_sha256(s: &Surrogate) -> String {
    let bytes: Vec<u8> = s.centroids.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    io::sha256_hex(&bytes)
}

fn mean_std(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

pub fn train(config: &TrainConfig, task: &TaskData) -> Result<TrainOutput> {
    config.validate()?;
    let train = &task.train;
    if train.is_empty() {
        return Err(Error::Data("no training rows".into()));
    }
    let local: Vec<usize> = train
        .bins
        .iter()
        .map(|&b| task.surrogate_index(b).ok_or_else(|| Error::Data(format!("train bin {b} missing from the layout"))))
        .collect::<Result<_>>()?;
    let k = task.bin_ids.len();
    let (target_mean, target_std) = mean_std(&train.y);
    let y_std: Vec<f64> = train.y.iter().map(|v| (v - target_mean) / target_std).collect();

    let mut model = Model::new(
        &config.encoder_dims(task.input_dim()),
        config.activation,
        rng::derive(config.seed, rng::stream::INIT),
    )?;
    let adam = AdamWConfig { lr: config.lr, weight_decay: config.weight_decay, ..AdamWConfig::default() };
    let mut opt = AdamWState::new(adam, model.params());
    let mut shuffle_rng = rng::rng_for(config.seed, rng::stream::SHUFFLE);
    let srl = config.mode == Mode::Srl;
    let sphere = if srl {
        Some(geometry::sample_hypersphere(config.sphere_points, config.rep_dim, rng::derive(config.seed, rng::stream::SPHERE))?)
    } else {
        None
    };

    // Homogeneity is measured in units of bin width.
    let labels: Vec<f64> = task.bin_values.iter().map(|v| v / task.bin_width).collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut current: Option<Surrogate> = None;
    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut running = RunningMean::new(k, config.rep_dim);
        let mut sums = Sums::default();
        for (b, rows) in order.chunks(config.batch_size).enumerate() {
            let ctx = |e: Error| -> Error {
                if e.is_numeric() {
                    Error::Numeric(format!("epoch {epoch}, batch {b}: {e}"))
                } else {
                    e
                }
            };
            let x = train.x.select_rows(rows);
            let y: Vec<f64> = rows.iter().map(|&r| y_std[r]).collect();
            let bins: Vec<usize> = rows.iter().map(|&r| local[r]).collect();
            let step = Step { config, model: &model, labels: &labels, sphere: sphere.as_ref(), surrogate: current.as_ref() };
            let out = step.run(&x, &y, &bins).map_err(ctx)?;
            if srl {
                running.update(&out.centroids).map_err(ctx)?;
            }
            adamw_step(&mut model.params_mut(), &out.grads, &mut opt).map_err(ctx)?;
            sums.reg += out.reg;
            sums.env += out.env.unwrap_or(0.0);
            sums.homo += out.homo.unwrap_or(0.0);
            sums.geom += out.geom.unwrap_or(0.0);
            sums.con += out.con.unwrap_or(0.0);
            sums.total += out.total;
            sums.batches += 1;
        }

        if srl {
            let next = match &current {
                None => running.finalize(&task.bin_values, None)?,
                Some(cur) => {
                    let hat = running.finalize(&task.bin_values, Some(cur))?;
                    surrogate::momentum_update(cur, &hat, config.alpha)?
                }
            };
            current = Some(Surrogate { epoch: epoch + 1, ..next });
        }

        let val = match &task.val {
            Some(v) => Some(evaluate_model(&model, target_mean, target_std, v)?),
            None => None,
        };
        let score = val.as_ref().map_or(0.0, |r| r.all_mae());
        if best.as_ref().is_none_or(|(s, _, _)| score <= *s) {
            best = Some((score, epoch, model.clone()));
        }

        let n = sums.batches as f64;
        let geometric_seen = srl && epoch > 0;
        records.push(EpochRecord {
            epoch,
            reg: sums.reg / n,
            env: geometric_seen.then_some(sums.env / n),
            homo: geometric_seen.then_some(sums.homo / n),
            geom: geometric_seen.then_some(sums.geom / n),
            con: (geometric_seen && config.contrastive).then_some(sums.con / n),
            total: sums.total / n,
            val,
            surrogate_sha256: current.as_ref().map(surrogate_sha256),
        });
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch");
    Ok(TrainOutput {
        checkpoint: Checkpoint { model: best_model, seed: config.seed, epoch: best_epoch, target_mean, target_std },
        surrogate: current,
        history: TrainHistory { config: config.clone(), target_mean, target_std, epochs: records, best_epoch },
    })
}

struct Step<'a> {
    config: &'a TrainConfig,
    model: &'a Model,
    labels: &'a [f64],
    sphere: Option<&'a SphereSample>,
    surrogate: Option<&'a Surrogate>,
}

struct StepOut {
    grads: Vec<Tensor>,
    centroids: BatchCentroids,
    reg: f64,
    env: Option<f64>,
    homo: Option<f64>,
    geom: Option<f64>,
    con: Option<f64>,
    total: f64,
}

impl Step<'_> {
    fn run(&self, x: &Tensor, y: &[f64], bins: &[usize]) -> Result<StepOut> {
        let mut tape = Tape::new();
        let vars = self.model.leaves(&mut tape);
        let xv = tape.constant(x);
        let z = self.model.encode_on(&mut tape, &vars, xv)?;
        let pred = self.model.regress_on(&mut tape, &vars, z)?;
        let reg = mse_on(&mut tape, pred, y)?;
        let mut loss = reg;
        let mut out = StepOut {
            grads: Vec::new(),
            centroids: BatchCentroids { bins: Vec::new(), centroids: Tensor::zeros(&[0, 0]), counts: Vec::new() },
            reg: tape.scalar(reg),
            env: None,
            homo: None,
            geom: None,
            con: None,
            total: 0.0,
        };

        match (self.sphere, self.surrogate) {
            (Some(sphere), Some(prev)) => {
                let (bc, present) = surrogate::batch_centroids_on(&mut tape, z, bins)?;
                out.centroids = batch_record(&tape, bc, present.clone(), bins);
                let s = surrogate::refill_on(&mut tape, bc, &present, prev)?;
                let points = tape.constant(&sphere.points);
                let env = geometry::enveloping_on(&mut tape, points, s)?;
                let homo = geometry::homogeneity_on(&mut tape, s, self.labels)?;
                out.env = Some(tape.scalar(env));
                out.homo = Some(tape.scalar(homo));
                let mut geom_val = 0.0;
                for (term, lambda) in [(env, self.config.lambda_e), (homo, self.config.lambda_h)] {
                    if lambda > 0.0 {
                        let w = tape.scale(term, lambda)?;
                        geom_val += tape.scalar(w);
                        loss = tape.add(loss, w)?;
                    }
                }
                out.geom = Some(geom_val);
                if self.config.contrastive {
                    let con = surrogate::contrastive_on(&mut tape, z, bins, s, self.config.tau)?;
                    let con = tape.scale(con, 1.0 / bins.len() as f64)?;
                    out.con = Some(tape.scalar(con));
                    loss = tape.add(loss, con)?;
                }
            }
            (Some(_), None) => {
                out.centroids = surrogate::batch_centroids(&tape.tensor(z), bins)?;
            }
            _ => {}
        }

        out.total = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        out.grads = vars.all().zip(self.model.params()).map(|(v, p)| grads.tensor(v, p)).collect();
        Ok(out)
    }
}

fn batch_record(tape: &Tape, bc: Var, present: Vec<usize>, bins: &[usize]) -> BatchCentroids {
    let counts = present.iter().map(|p| bins.iter().filter(|&&b| b == *p).count()).collect();
    BatchCentroids { bins: present, centroids: tape.tensor(bc), counts }
}

fn evaluate_model(model: &Model, mean: f64, std: f64, split: &SplitData) -> Result<RegionReport> {
    let preds: Vec<f64> = model.predict(&split.x)?.into_iter().map(|p| p * std + mean).collect();
    region_metrics(&preds, &split.y, &split.regions)
}

pub fn evaluate(checkpoint: &Checkpoint, split: &SplitData) -> Result<RegionReport> {
    region_metrics(&checkpoint.predict(&split.x)?, &split.y, &split.regions)
}

pub fn export_embeddings(checkpoint: &Checkpoint, split: &SplitData, bin_value: impl Fn(usize) -> f64) -> Result<Embeddings> {
    if split.x.cols() != checkpoint.model.encoder.in_dim() {
        return Err(Error::shape(format!(
            "inputs have {} columns, checkpoint expects {}",
            split.x.cols(),
            checkpoint.model.encoder.in_dim()
        )));
    }
    Ok(Embeddings {
        z: checkpoint.model.encode(&split.x)?,
        bins: split.bins.clone(),
        bin_values: split.bins.iter().map(|&b| bin_value(b)).collect(),
        regions: split.regions.clone(),
    })
}

/// Few-shot proportion of a split's embedding centroids on a fresh sphere sample.
pub fn embedding_few_shot_proportion(emb: &Embeddings, sphere_points: usize, seed: u64) -> Result<f64> {
    let (s, regions) = emb.centroids()?;
    let sphere = geometry::sample_hypersphere(sphere_points, s.dim(), rng::derive(seed, rng::stream::PROBE))?;
    let is_few: Vec<bool> = regions.iter().map(|&r| r == Region::Few).collect();
    geometry::few_shot_proportion(&sphere, &s.centroids, &is_few)
}
