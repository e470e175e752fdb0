//! Worked examples with independently derived or published expected values.

use srl::data::{self, Region, ShotThresholds};
use srl::diff::{grad_check, value_and_grad, Tensor};
use srl::geometry::{self, EpsilonTube};
use srl::metrics::RegionStats;
use srl::nn::{init_mlp, Activation};
use srl::olgen::{self, GrfSampler, GrfSpec, Mix, Operator, RegionBands};
use srl::surrogate::{self, Surrogate};
use srl::trainer::{self, Mode, TrainConfig};

fn circle(k: usize) -> Tensor {
    let data = (0..k)
        .flat_map(|i| {
            let a = std::f64::consts::TAU * i as f64 / k as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    Tensor::matrix(k, 2, data).unwrap()
}

#[test]
fn value_and_grad_closed_forms() {
    let (v, g) = value_and_grad(|t, p| {
        let s = t.square(p[0])?;
        t.sum(s)
    }, &[Tensor::vector(vec![1.0, 2.0])])
    .unwrap();
    assert_eq!(v, 5.0);
    assert_eq!(g[0].data(), &[2.0, 4.0]);

    let e1 = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
    let (v, g) = value_and_grad(
        |t, p| {
            let n = t.l2_normalize(p[0])?;
            let c = t.constant(&e1);
            let d = t.sub(n, c)?;
            let s = t.square(d)?;
            t.sum(s)
        },
        std::slice::from_ref(&e1),
    )
    .unwrap();
    assert_eq!(v, 0.0);
    assert!(g[0].data().iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn enveloping_gradient_matches_differences() {
    let sample = geometry::sample_hypersphere(100, 4, 3).unwrap();
    let c = geometry::sample_hypersphere(3, 4, 4).unwrap().points;
    let err = grad_check(
        |t, p| {
            let pts = t.constant(&sample.points);
            let cn = t.l2_normalize(p[0])?;
            geometry::enveloping_on(t, pts, cn)
        },
        &[c],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn contrastive_gradient_eight_samples_five_centroids() {
    let z = geometry::sample_hypersphere(8, 6, 10).unwrap().points;
    let c = geometry::sample_hypersphere(5, 6, 11).unwrap().points;
    let bins = [0, 1, 2, 3, 4, 0, 2, 4];
    let err = grad_check(
        |t, p| {
            let zn = t.l2_normalize(p[0])?;
            let cn = t.l2_normalize(p[1])?;
            surrogate::contrastive_on(t, zn, &bins, cn, 0.1)
        },
        &[z, c],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn glorot_bound_for_the_oldir_encoder() {
    let mlp = init_mlp(&[105, 128, 128, 128], Activation::Tanh, 1).unwrap();
    let bound = (6.0f64 / 233.0).sqrt();
    assert!(mlp.layers.iter().all(|l| l.weight.data().iter().all(|w| w.abs() <= bound)));
    assert!(init_mlp(&[5], Activation::Tanh, 1).is_err());
}

#[test]
fn sphere_sample_mean_is_small() {
    let s = geometry::sample_hypersphere(100_000, 3, 0).unwrap();
    let mut mean = [0.0; 3];
    for row in s.points.iter_rows() {
        for j in 0..3 {
            mean[j] += row[j] / 100_000.0;
        }
    }
    assert!(mean.iter().map(|m| m * m).sum::<f64>().sqrt() < 0.02);
}

#[test]
fn coverage_examples() {
    let s = geometry::sample_hypersphere(100_000, 2, 5).unwrap();
    let one = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
    let half = geometry::coverage_at_epsilon(&s, &one, EpsilonTube::new(1e-12).unwrap()).unwrap();
    assert!((half - 0.5).abs() < 0.01, "{half}");
    let dense = geometry::coverage_at_epsilon(&s, &circle(256), EpsilonTube::new(0.99).unwrap()).unwrap();
    assert!(dense >= 0.99, "{dense}");
    let small = geometry::sample_hypersphere(300, 4, 6).unwrap();
    assert_eq!(geometry::coverage_at_epsilon(&small, &small.points, EpsilonTube::new(0.999).unwrap()).unwrap(), 1.0);
    assert!(EpsilonTube::new(0.0).is_err() && EpsilonTube::new(1.0).is_err());
}

#[test]
fn few_shot_proportion_of_antipodes() {
    let s = geometry::sample_hypersphere(100_000, 2, 9).unwrap();
    let c = Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
    let p = geometry::few_shot_proportion(&s, &c, &[true, false]).unwrap();
    assert!((p - 0.5).abs() < 0.01, "{p}");
    assert_eq!(geometry::few_shot_proportion(&s, &c, &[true, true]).unwrap(), 1.0);
}

#[test]
fn homogeneity_examples() {
    let c = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!((geometry::homogeneity_loss(&c, &[0.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
    let same = Tensor::matrix(2, 2, vec![0.6, 0.8, 0.6, 0.8]).unwrap();
    assert_eq!(geometry::homogeneity_loss(&same, &[3.0, 7.5]).unwrap(), 0.0);
    assert!(geometry::homogeneity_loss(&c, &[1.0, 1.0]).is_err());

    // Uniform angular spacing on a great circle beats random re-spacings.
    let k = 32;
    let arc: Vec<f64> = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
    let great = Tensor::matrix(
        k,
        3,
        arc.iter().flat_map(|&t| [(2.5 * t).cos(), (2.5 * t).sin(), 0.0]).collect(),
    )
    .unwrap();
    let best = geometry::homogeneity_loss(&great, &arc).unwrap();
    let mut rng = srl::rng::rng(3);
    for _ in 0..1000 {
        use rand::Rng as _;
        let mut cuts: Vec<f64> = (0..k - 2).map(|_| rng.random::<f64>()).collect();
        cuts.sort_by(f64::total_cmp);
        let labels: Vec<f64> = std::iter::once(0.0).chain(cuts).chain(std::iter::once(1.0)).collect();
        assert!(geometry::homogeneity_loss(&great, &labels).unwrap() > best + 1e-9);
    }
}

#[test]
fn momentum_and_contrastive_arithmetic() {
    let cur = Surrogate::new(vec![0.0], Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(), 0).unwrap();
    let run = Surrogate::new(vec![0.0], Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap(), 0).unwrap();
    let s = surrogate::momentum_update(&cur, &run, 0.9).unwrap();
    assert!((s.centroids.row(0)[0] - 0.9 / 0.82f64.sqrt()).abs() < 1e-12);
    assert!((s.centroids.row(0)[0] - 0.9939).abs() < 1e-4 && (s.centroids.row(0)[1] - 0.1104).abs() < 1e-4);

    let c = Surrogate::new(vec![0.0, 1.0], Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(), 1).unwrap();
    let z = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
    let l = surrogate::contrastive_loss(&z, &[0], &c, 0.1).unwrap();
    assert!((l - (1.0 + (-10.0f64).exp()).ln()).abs() < 1e-15);
    assert!((l - 4.54e-5).abs() < 1e-7);
    let lone = Surrogate::new(vec![0.0], Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap(), 1).unwrap();
    assert_eq!(surrogate::contrastive_loss(&z, &[0], &lone, 0.1).unwrap(), 0.0);
}

#[test]
fn metric_arithmetic() {
    let s = RegionStats::compute(&[1.0, 4.0], &[0.0, 0.0]).unwrap();
    assert_eq!(s.mae, 2.5);
    assert_eq!(s.mse, 8.5);
    assert!((s.gm - 2.0).abs() < 1e-5);
}

#[test]
fn published_thresholds_and_hyperparameters() {
    let pairs = [
        (ShotThresholds::AIRFOIL, (10, 40)),
        (ShotThresholds::CONCRETE, (5, 15)),
        (ShotThresholds::REAL_ESTATE, (3, 10)),
        (ShotThresholds::ABALONE, (100, 400)),
    ];
    for (t, (few, med)) in pairs {
        assert_eq!((t.few_max, t.med_max), (few, med));
    }
    assert_eq!(ShotThresholds::AIRFOIL.region(40), Region::Med);
    assert_eq!(ShotThresholds::AIRFOIL.region(9), Region::Few);
    assert_eq!(ShotThresholds::AIRFOIL.region(41), Region::Many);

    let uci = TrainConfig::uci();
    assert_eq!((uci.lambda_e, uci.lambda_h, uci.tau, uci.alpha), (1e-2, 1e-2, 0.1, 0.9));
    assert_eq!((uci.sphere_points, uci.lr, uci.batch_size), (1000, 1e-3, 256));
    let ol = TrainConfig::oldir();
    assert_eq!((ol.lambda_e, ol.lambda_h, ol.batch_size, ol.rep_dim), (1e-1, 1e-1, 1000, 128));
}

#[test]
fn grf_variance_matches_the_kernel_diagonal() {
    let spec = GrfSpec::standard();
    let sampler = GrfSampler::new(&spec).unwrap();
    let mut rng = srl::rng::rng(12);
    let n = 10_000;
    let mut sum = vec![0.0; spec.grid.len()];
    let mut sq = vec![0.0; spec.grid.len()];
    for _ in 0..n {
        for (i, v) in sampler.sample(&mut rng).into_iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let var: f64 = (0..spec.grid.len()).map(|i| sq[i] / n as f64 - (sum[i] / n as f64).powi(2)).sum::<f64>()
        / spec.grid.len() as f64;
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn trapezoid_of_identity() {
    let g = olgen::grid(100);
    let s = olgen::antiderivative(&g, &g, 1.0).unwrap();
    assert!((s - 0.5).abs() < 1e-4);
    assert_eq!(olgen::antiderivative(&g, &g, 0.0).unwrap(), 0.0);
    assert!(olgen::antiderivative(&g, &g, 1.01).is_err());
}

#[test]
fn oldir_sampling_quotas() {
    let spec = GrfSpec::standard();
    let sampler = GrfSampler::new(&spec).unwrap();
    let bands = RegionBands::default();
    let train = olgen::generate_split(Operator::Linear, &sampler, &spec.grid, &bands, Some(Mix::default()), 10_000, 1).unwrap();
    for (r, quota) in [(Region::Few, 0.1), (Region::Med, 0.3), (Region::Many, 0.6)] {
        let frac = train.iter().filter(|s| s.region == r).count() as f64 / 1e4;
        assert!((frac - quota).abs() <= 0.02, "{r}: {frac}");
    }
    for s in train.iter().take(200) {
        assert_eq!(bands.region_of(s.y as f64), s.region);
        assert_eq!(olgen::operator_target(Operator::Linear, &s.u, &spec.grid, s.y).unwrap(), s.target);
    }
    let test = olgen::generate_split(Operator::Linear, &sampler, &spec.grid, &bands, None, 100_000, 2).unwrap();
    let mid = test.iter().filter(|s| (0.4..0.6).contains(&s.y)).count() as f64 / 1e5;
    assert!((mid - 0.2).abs() <= 0.01, "{mid}");
}

#[test]
fn nonlinear_targets_solve_the_elliptic_problem() {
    let spec = GrfSpec::standard();
    let sampler = GrfSampler::new(&spec).unwrap();
    let samples = olgen::generate_split(Operator::Nonlinear, &sampler, &spec.grid, &RegionBands::default(), None, 50, 3).unwrap();
    assert!(samples.iter().all(|s| s.target.is_finite() && (0.0..=1.0).contains(&s.y)));
}

#[test]
fn curation_counts_on_the_stand_in() {
    let table = data::airfoil_like(0, 1503);
    let ds = data::DirDataset::build(&table, 1.0, ShotThresholds::AIRFOIL, 0, 3, 3).unwrap();
    let test = ds.binning.counts(ds.rows(data::Split::Test));
    let max = *test.values().max().unwrap();
    let min = *test.values().min().unwrap();
    assert!(max <= 3 && max - min <= 3);
    let hist = {
        let mut h = std::collections::BTreeMap::new();
        for t in &table.targets {
            *h.entry(((t - ds.binning.t_min) / 1.0).floor() as usize).or_insert(0usize) += 1;
        }
        h
    };
    assert_eq!(hist.keys().copied().collect::<Vec<_>>(), ds.binning.unique);
}

#[test]
fn overfit_toy_reaches_small_train_error() {
    let table = data::RawTable {
        feature_names: vec!["a".into(), "b".into()],
        target_name: "y".into(),
        features: (0..40).map(|i| vec![i as f64 / 40.0, ((i * 7) % 40) as f64 / 40.0]).collect(),
        targets: (0..40).map(|i| 0.5 * i as f64 / 40.0 + 0.2 * (((i * 7) % 40) as f64 / 40.0)).collect(),
        dropped: 0,
    };
    let ds = data::DirDataset::build(&table, 0.1, ShotThresholds::new(2, 5).unwrap(), 0, 1, 1).unwrap();
    let task = ds.task().unwrap();
    let cfg = TrainConfig { mode: Mode::Vanilla, epochs: 400, batch_size: 32, lr: 1e-2, ..TrainConfig::uci() };
    let out = trainer::train(&cfg, &task).unwrap();
    let a = trainer::evaluate(&out.checkpoint, &task.train).unwrap();
    let b = trainer::evaluate(&out.checkpoint, &task.train).unwrap();
    assert_eq!(a, b);
    assert!(a.all_mae() < 0.05, "{}", a.all_mae());
}
