//! The `srl` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::data::{self, DirDataset, Region, ShotThresholds, Split};
use crate::error::{Error, Result};
use crate::geometry::{self, EpsilonTube};
use crate::gradsuite;
use crate::io::{self, Checkpoint, Embeddings, SurrogateDump};
use crate::manifest::{DatasetManifest, FileRef, OlManifest, RunManifest, RUN_MANIFEST};
use crate::olgen::{self, GrfSampler, GrfSpec, Mix, OlHeader, Operator, RegionBands};
use crate::rng;
use crate::trainer::{self, Mode, TrainConfig};

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
    pub const SCHEMA: i32 = 5;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_) => exit::USAGE,
        Error::NonFinite { .. } | Error::Degenerate { .. } | Error::Numeric(_) => exit::NUMERIC,
        Error::Schema { .. } | Error::Json(_) => exit::SCHEMA,
        Error::Shape(_) | Error::Data(_) | Error::Io { .. } | Error::Csv(_) => exit::DATA,
    }
}

#[derive(Parser, Debug)]
#[command(name = "srl", version, about = "Surrogate-driven representation learning for imbalanced regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Curate a CSV into an imbalanced-train, balanced-test dataset.
    CurateUci(CurateArgs),
    /// Generate OL-DIR operator-learning splits.
    GenOldir(GenArgs),
    /// Write a synthetic stand-in for the airfoil self-noise table.
    SynthAirfoil(SynthArgs),
    /// Train a model on a curated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Export unit-norm representations of one split.
    Export(ExportArgs),
    /// Geometry report for embeddings or a surrogate dump.
    Probe(ProbeArgs),
    /// Finite-difference check of every training loss.
    Gradcheck(GradArgs),
    /// Rerun a command from its run manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct CurateArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    /// `airfoil`, `abalone`, `real-estate`, `concrete` or `FEW,MED`.
    #[arg(long, default_value = "airfoil")]
    thresholds: String,
    #[arg(long, default_value_t = 3)]
    test_per_bin: usize,
    #[arg(long, default_value_t = 3)]
    val_per_bin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value = "linear")]
    operator: String,
    #[arg(long, default_value_t = 10_000)]
    n_train: usize,
    #[arg(long, default_value_t = 10_000)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    n_val: usize,
    /// Few, med and many percentages of training queries.
    #[arg(long, default_value = "10,30,60")]
    mix: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 1503)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// JSON object overriding fields of the preset for the dataset kind.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long, conflicts_with = "surrogate", required_unless_present = "surrogate")]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    surrogate: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.9,0.95,0.99")]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Passes over the 36 (loss, d, K) combinations.
    #[arg(long, default_value_t = 2)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Runs one command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match dispatch(cli.command, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

const PATH_FLAGS: [&str; 7] = ["--csv", "--dataset", "--config", "--checkpoint", "--embeddings", "--surrogate", "--manifest"];

/// Subcommand arguments without `--out`, with input paths made absolute.
fn replay_args(argv: &[OsString]) -> Result<Vec<String>> {
    let raw: Vec<String> = argv.iter().skip(2).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let (flag, inline) = match raw[i].split_once('=') {
            Some((f, v)) if f.starts_with("--") => (f.to_owned(), Some(v.to_owned())),
            _ => (raw[i].clone(), None),
        };
        let value = match inline {
            Some(v) => Some(v),
            None if flag.starts_with("--") && i + 1 < raw.len() && !raw[i + 1].starts_with("--") => {
                i += 1;
                Some(raw[i].clone())
            }
            None => None,
        };
        i += 1;
        if flag == "--out" {
            continue;
        }
        out.push(flag.clone());
        if let Some(v) = value {
            if PATH_FLAGS.contains(&flag.as_str()) {
                let abs = std::path::absolute(&v).map_err(|e| Error::io(&v, e))?;
                out.push(abs.to_string_lossy().into_owned());
            } else {
                out.push(v);
            }
        }
    }
    Ok(out)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn dispatch(cmd: Command, argv: &[OsString]) -> Result<i32> {
    let name = argv.get(1).map(|a| a.to_string_lossy().into_owned()).unwrap_or_default();
    let mut run = RunManifest::new(&name, replay_args(argv)?);
    match cmd {
        Command::CurateUci(a) => curate(a, &mut run),
        Command::GenOldir(a) => gen_oldir(a, &mut run),
        Command::SynthAirfoil(a) => synth(a),
        Command::Train(a) => train(a, &mut run),
        Command::Eval(a) => eval(a, &mut run),
        Command::Export(a) => export(a, &mut run),
        Command::Probe(a) => probe(a, &mut run),
        Command::Gradcheck(a) => gradcheck(a, &mut run),
        Command::Replay(a) => replay(a),
    }
}

fn parse_thresholds(s: &str) -> Result<ShotThresholds> {
    match s {
        "airfoil" => Ok(ShotThresholds::AIRFOIL),
        "abalone" => Ok(ShotThresholds::ABALONE),
        "real-estate" => Ok(ShotThresholds::REAL_ESTATE),
        "concrete" => Ok(ShotThresholds::CONCRETE),
        other => {
            let parts: Vec<usize> = other
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| Error::invalid(format!("bad thresholds {other:?}"))))
                .collect::<Result<_>>()?;
            match parts[..] {
                [few, med] => ShotThresholds::new(few, med),
                _ => Err(Error::invalid(format!("thresholds need two counts, got {other:?}"))),
            }
        }
    }
}

fn curate(a: CurateArgs, run: &mut RunManifest) -> Result<i32> {
    let table = data::load_csv(&a.csv, &a.target)?;
    let thresholds = parse_thresholds(&a.thresholds)?;
    let ds = DirDataset::build(&table, a.bin_width, thresholds, a.seed, a.test_per_bin, a.val_per_bin)?;
    create_dir(&a.out)?;
    let csv = std::path::absolute(&a.csv).map_err(|e| Error::io(&a.csv, e))?;
    let manifest =
        DatasetManifest::for_uci(FileRef::record(&csv)?, &ds, &a.target, a.seed, (a.test_per_bin, a.val_per_bin));
    io::write_json(&a.out.join("dataset.json"), &manifest)?;
    run.seed = Some(a.seed);
    run.input(&csv)?;
    run.output(&a.out, "dataset.json")?;
    run.save(&a.out)?;

    let count = |s: Split| ds.split.iter().filter(|&&x| x == s).count();
    println!(
        "{} rows ({} dropped), {} bins: train {}, val {}, test {}",
        table.len(),
        table.dropped,
        ds.binning.unique.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    for r in Region::ALL {
        let bins = ds.regions.map.values().filter(|&&x| x == r).count();
        println!("{r:>5}: {bins} bins");
    }
    Ok(exit::OK)
}

fn parse_mix(s: &str) -> Result<Mix> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::invalid(format!("bad mix {s:?}"))))
        .collect::<Result<_>>()?;
    match parts[..] {
        [few, med, many] => Mix { few, med, many }.validate(),
        _ => Err(Error::invalid(format!("mix needs three percentages, got {s:?}"))),
    }
}

/// Writes the three OL-DIR splits and their dataset manifest into `out`.
pub fn generate_oldir(
    operator: Operator,
    counts: (usize, usize, usize),
    mix: Mix,
    seed: u64,
    out: &Path,
) -> Result<DatasetManifest> {
    let (n_train, n_val, n_test) = counts;
    let spec = GrfSpec::standard();
    let sampler = GrfSampler::new(&spec)?;
    let bands = RegionBands::default();
    create_dir(out)?;
    let write = |name: &str, n: usize, mix: Option<Mix>, stream: u64| -> Result<FileRef> {
        let sub = rng::derive(seed, stream);
        let samples = olgen::generate_split(operator, &sampler, &spec.grid, &bands, mix, n, sub)?;
        let header = OlHeader {
            operator,
            m: spec.grid.len(),
            grid: spec.grid.clone(),
            bands: bands.clone(),
            mix,
            seed: sub,
            count: n,
            regions: samples.iter().map(|s| s.region).collect(),
        };
        let path = out.join(name);
        olgen::write_split(&path, &header, &samples)?;
        Ok(FileRef { path: PathBuf::from(name), sha256: io::sha256_file(&path)? })
    };
    let train = write("train.ol", n_train, Some(mix), rng::stream::OL_TRAIN)?;
    let test = write("test.ol", n_test, None, rng::stream::OL_TEST)?;
    let val = if n_val > 0 { Some(write("val.ol", n_val, None, rng::stream::OL_VAL)?) } else { None };
    let manifest = DatasetManifest::Oldir(OlManifest { operator, seed, bands, mix, train, val, test });
    io::write_json(&out.join("dataset.json"), &manifest)?;
    Ok(manifest)
}

fn gen_oldir(a: GenArgs, run: &mut RunManifest) -> Result<i32> {
    let operator: Operator = a.operator.parse()?;
    let mix = parse_mix(&a.mix)?;
    if a.n_train == 0 || a.n_test == 0 {
        return Err(Error::invalid("train and test counts must be positive"));
    }
    let manifest = generate_oldir(operator, (a.n_train, a.n_val, a.n_test), mix, a.seed, &a.out)?;
    run.seed = Some(a.seed);
    for f in manifest.inputs(Path::new("")) {
        run.output(&a.out, &f.path.to_string_lossy())?;
    }
    run.output(&a.out, "dataset.json")?;
    run.save(&a.out)?;
    println!("wrote {} train, {} val, {} test samples to {}", a.n_train, a.n_val, a.n_test, a.out.display());
    Ok(exit::OK)
}

fn synth(a: SynthArgs) -> Result<i32> {
    let table = data::airfoil_like(a.seed, a.rows);
    data::write_csv(&a.out, &table)?;
    println!("wrote {} synthetic rows to {}", table.len(), a.out.display());
    Ok(exit::OK)
}

fn load_dataset(path: &Path, run: &mut RunManifest) -> Result<(DatasetManifest, data::TaskData)> {
    let manifest = DatasetManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let task = manifest.task(base)?;
    run.input(path)?;
    for f in manifest.inputs(base) {
        run.input(&f.path)?;
    }
    Ok((manifest, task))
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) -> Result<()> {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                b.insert(k, v);
            }
            Ok(())
        }
        _ => Err(Error::invalid("config file must hold a JSON object")),
    }
}

/// Preset for the dataset kind, then the config file, then flags.
pub fn resolve_config(
    kind: &DatasetManifest,
    file: Option<&Path>,
    mode: Option<Mode>,
    seed: Option<u64>,
    epochs: Option<usize>,
) -> Result<TrainConfig> {
    let preset = match kind {
        DatasetManifest::Uci(_) => TrainConfig::uci(),
        DatasetManifest::Oldir(_) => TrainConfig::oldir(),
    };
    let mut value = serde_json::to_value(&preset)?;
    if let Some(path) = file {
        let patch: serde_json::Value = io::read_json(path)?;
        merge(&mut value, patch)?;
    }
    let mut cfg: TrainConfig = serde_json::from_value(value).map_err(|e| Error::Schema {
        path: file.map(Path::to_path_buf).unwrap_or_default(),
        reason: e.to_string(),
    })?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs, run: &mut RunManifest) -> Result<i32> {
    let (manifest, task) = load_dataset(&a.dataset, run)?;
    if let Some(c) = &a.config {
        run.input(c)?;
    }
    let mode = a.mode.as_deref().map(str::parse).transpose()?;
    let cfg = resolve_config(&manifest, a.config.as_deref(), mode, a.seed, a.epochs)?;
    let out = trainer::train(&cfg, &task)?;
    create_dir(&a.out)?;
    out.checkpoint.save(&a.out.join("checkpoint.bin"))?;
    fs::write(a.out.join("history.json"), out.history.to_json()).map_err(|e| Error::io(&a.out, e))?;
    run.output(&a.out, "checkpoint.bin")?;
    run.output(&a.out, "history.json")?;
    if let Some(s) = out.surrogate {
        let dump = SurrogateDump { regions: Some(task.bin_regions.clone()), surrogate: s };
        dump.save(&a.out.join("surrogate.bin"))?;
        run.output(&a.out, "surrogate.bin")?;
    }
    run.seed = Some(cfg.seed);
    run.config = Some(serde_json::to_value(&cfg)?);
    run.save(&a.out)?;

    let report = trainer::evaluate(&out.checkpoint, &task.test)?;
    println!("{:?} mode, {} epochs, best epoch {}", cfg.mode, cfg.epochs, out.history.best_epoch);
    println!("test split:\n{}", report.table());
    Ok(exit::OK)
}

fn eval(a: EvalArgs, run: &mut RunManifest) -> Result<i32> {
    let (_, task) = load_dataset(&a.dataset, run)?;
    let which: Split = a.split.parse()?;
    let split = task.split(which).ok_or_else(|| Error::Data(format!("dataset has no {} rows", a.split)))?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    run.input(&a.checkpoint)?;
    let report = trainer::evaluate(&ck, split)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.table());
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        io::write_json(&dir.join("report.json"), &report)?;
        run.output(dir, "report.json")?;
        run.save(dir)?;
    }
    Ok(exit::OK)
}

fn export(a: ExportArgs, run: &mut RunManifest) -> Result<i32> {
    let (_, task) = load_dataset(&a.dataset, run)?;
    let which: Split = a.split.parse()?;
    let split = task.split(which).ok_or_else(|| Error::Data(format!("dataset has no {} rows", a.split)))?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    run.input(&a.checkpoint)?;
    let emb = trainer::export_embeddings(&ck, split, |b| task.bin_center(b))?;
    create_dir(&a.out)?;
    emb.save(&a.out.join("embeddings.bin"))?;
    run.output(&a.out, "embeddings.bin")?;
    run.save(&a.out)?;
    println!("exported {} x {} representations", emb.z.rows(), emb.z.cols());
    Ok(exit::OK)
}

#[derive(Debug, Serialize)]
pub struct Coverage {
    pub epsilon: f64,
    pub fraction: f64,
}

#[derive(Debug, Serialize)]
pub struct ProbeReport {
    pub k: usize,
    pub dim: usize,
    pub points: usize,
    pub enveloping: f64,
    pub homogeneity: f64,
    pub coverage: Vec<Coverage>,
    pub few_shot_proportion: Option<f64>,
}

impl ProbeReport {
    pub fn table(&self) -> String {
        let mut s = format!("K={} dim={} points={}\n", self.k, self.dim, self.points);
        s += &format!("enveloping   {:>12.6}\nhomogeneity  {:>12.6}\n", self.enveloping, self.homogeneity);
        for c in &self.coverage {
            s += &format!("coverage@{:<4} {:>11.6}\n", c.epsilon, c.fraction);
        }
        match self.few_shot_proportion {
            Some(p) => s += &format!("few-shot     {p:>12.6}\n"),
            None => s += "few-shot     -\n",
        }
        s
    }
}

pub fn probe_surrogate(
    s: &crate::surrogate::Surrogate,
    regions: Option<&[Region]>,
    epsilons: &[f64],
    points: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let sample = geometry::sample_hypersphere(points, s.dim(), rng::derive(seed, rng::stream::PROBE))?;
    let coverage = epsilons
        .iter()
        .map(|&e| {
            Ok(Coverage { epsilon: e, fraction: geometry::coverage_at_epsilon(&sample, &s.centroids, EpsilonTube::new(e)?)? })
        })
        .collect::<Result<_>>()?;
    let few_shot_proportion = match regions {
        Some(r) => {
            let is_few: Vec<bool> = r.iter().map(|&x| x == Region::Few).collect();
            Some(geometry::few_shot_proportion(&sample, &s.centroids, &is_few)?)
        }
        None => None,
    };
    Ok(ProbeReport {
        k: s.k(),
        dim: s.dim(),
        points,
        enveloping: geometry::enveloping_loss(&sample, &s.centroids)?,
        homogeneity: geometry::homogeneity_loss(&s.centroids, &s.bins)?,
        coverage,
        few_shot_proportion,
    })
}

fn probe(a: ProbeArgs, run: &mut RunManifest) -> Result<i32> {
    let (surrogate, regions) = match (&a.embeddings, &a.surrogate) {
        (Some(p), _) => {
            run.input(p)?;
            let (s, r) = Embeddings::load(p)?.centroids()?;
            (s, Some(r))
        }
        (None, Some(p)) => {
            run.input(p)?;
            let d = SurrogateDump::load(p)?;
            (d.surrogate, d.regions)
        }
        (None, None) => return Err(Error::invalid("probe needs --embeddings or --surrogate")),
    };
    let report = probe_surrogate(&surrogate, regions.as_deref(), &a.epsilon, a.points, a.seed)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.table());
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        io::write_json(&dir.join("probe.json"), &report)?;
        run.seed = Some(a.seed);
        run.output(dir, "probe.json")?;
        run.save(dir)?;
    }
    Ok(exit::OK)
}

fn gradcheck(a: GradArgs, run: &mut RunManifest) -> Result<i32> {
    let results = gradsuite::run_suite(a.seed, a.repeats)?;
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<_> = results.iter().filter(|r| !(r.max_rel_error <= gradsuite::TOLERANCE)).collect();
    for f in &failed {
        println!("FAIL {:?} d={} K={} seed={} rel.err {:e}", f.loss, f.d, f.k, f.seed, f.max_rel_error);
    }
    println!(
        "{} configurations, worst relative error {worst:e} (tolerance {:e}): {}",
        results.len(),
        gradsuite::TOLERANCE,
        if failed.is_empty() { "ok" } else { "FAILED" }
    );
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        io::write_json(&dir.join("gradcheck.json"), &results)?;
        run.seed = Some(a.seed);
        run.output(dir, "gradcheck.json")?;
        run.save(dir)?;
    }
    Ok(if failed.is_empty() { exit::OK } else { exit::NUMERIC })
}

fn replay(a: ReplayArgs) -> Result<i32> {
    let old = RunManifest::load(&a.manifest)?;
    old.verify_inputs()?;
    let mut argv: Vec<String> = vec!["srl".into(), old.command.clone()];
    argv.extend(old.args.iter().cloned());
    argv.push("--out".into());
    argv.push(a.out.to_string_lossy().into_owned());
    let code = run(&argv);
    if code != exit::OK {
        return Ok(code);
    }
    let new = RunManifest::load(&a.out.join(RUN_MANIFEST))?;
    let differing = old.diff_outputs(&new);
    if differing.is_empty() {
        println!("replay reproduced {} output(s) byte for byte", old.outputs.len());
        Ok(exit::OK)
    } else {
        println!("replay differs in: {}", differing.join(", "));
        Ok(exit::NUMERIC)
    }
}
