//! Experiment configuration, run directories, checkpoints and the `gen`,
//! `train` and `eval` subcommands.
//!
//! A run directory holds everything needed to reproduce it:
//!
//! ```text
//! config.json             resolved configuration, every default filled in
//! metrics-rep<k>.csv      epoch,train_acc,val_acc,train_cost,val_cost,seconds
//! model-rep<k>.bin        checkpoint payload
//! model-rep<k>.json       checkpoint shape manifest
//! summary.json            mean/std of the final metrics over repetitions
//! <kind>-<tag>.svg        figures
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    convergence_figures, emit_svg, figure_path, final_features, pca_fit, pca_project, plane_points,
    prediction_grid, Bounds, Figure,
};
use crate::data::{gen_point_dataset, load_csv, load_idx, save_csv, split, LabeledDataset, SplitDataset};
use crate::error::{Error, Result};
use crate::network::{augment_batch, forward, Activation, Architecture, ModelParams, ModelSpec};
use crate::numerics::{RngState, Vector};
use crate::tableau::ButcherTableau;
use crate::training::{evaluate, train, AdamConfig, EpochMetrics, Metrics, TrainConfig, TrainMetrics};

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSpec {
    /// One of the generated point sets.
    Generated {
        name: String,
        #[serde(default = "default_n")]
        n: usize,
    },
    Csv { csv: PathBuf },
    /// IDX image and label files; `limit` keeps the first images only.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

fn default_n() -> usize {
    1500
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Generated {
            name: "spiral".into(),
            n: default_n(),
        }
    }
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<LabeledDataset> {
        match self {
            DatasetSpec::Generated { name, n } => gen_point_dataset(name, *n, seed),
            DatasetSpec::Csv { csv } => load_csv(csv),
            DatasetSpec::Idx { images, labels, limit } => load_idx(images, labels, *limit),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchChoice {
    Standard,
    Euler,
    Rk4,
    Custom(ButcherTableau),
}

impl ArchChoice {
    pub fn architecture(&self) -> Architecture {
        match self {
            ArchChoice::Standard => Architecture::Standard,
            ArchChoice::Euler => Architecture::euler(),
            ArchChoice::Rk4 => Architecture::rk4(),
            ArchChoice::Custom(t) => Architecture::RungeKutta { tableau: t.clone() },
        }
    }
}

/// A complete experiment. Unset fields take the defaults below and are
/// written back out in the run's `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub architecture: ArchChoice,
    /// Feature width `d̂`. Defaults to `d + augmentation`, or 16.
    pub width: Option<usize>,
    /// Zero coordinates `d*` appended to each input; `width − d` if unset.
    pub augmentation: Option<usize>,
    pub depth: usize,
    /// Step size `h`. Defaults to `final_time / depth`.
    pub step: Option<f64>,
    /// Final time `T = L h` of the network ODE; `step · depth` if unset.
    pub final_time: Option<f64>,
    pub activation: Activation,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub split_ratio: f64,
    pub early_stopping: Option<usize>,
    pub train_metrics: TrainMetrics,
    pub eval_batch: usize,
    /// Permit RK architectures without augmentation.
    pub allow_node: bool,
    pub plots: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            architecture: ArchChoice::Rk4,
            width: None,
            augmentation: None,
            depth: 20,
            step: None,
            final_time: None,
            activation: Activation::Tanh,
            optimizer: AdamConfig {
                lr: DEFAULT_LR,
                ..AdamConfig::default()
            },
            batch_size: t.batch_size,
            epochs: DEFAULT_EPOCHS,
            repetitions: 1,
            seed: 0,
            split_ratio: 0.8,
            early_stopping: None,
            train_metrics: TrainMetrics::Full,
            eval_batch: t.eval_batch,
            allow_node: false,
            plots: true,
            output_dir: PathBuf::from("run"),
        }
    }
}

pub const DEFAULT_WIDTH: usize = 16;
pub const DEFAULT_FINAL_TIME: f64 = 2.0;
pub const DEFAULT_LR: f64 = 3e-3;
pub const DEFAULT_EPOCHS: usize = 80;

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fills `width`, `augmentation`, `step` and `final_time` for input
    /// dimension `d` and checks the whole configuration.
    pub fn resolve(&self, d: usize) -> Result<ExperimentConfig> {
        let width = match (self.width, self.augmentation) {
            (Some(w), Some(a)) if w != d + a => {
                return Err(Error::InvalidConfig(format!(
                    "width {w} disagrees with input dimension {d} plus augmentation {a}"
                )))
            }
            (Some(w), _) => w,
            (None, Some(a)) => d + a,
            (None, None) => DEFAULT_WIDTH.max(d),
        };
        if width < d {
            return Err(Error::InvalidConfig(format!("width {width} is below the input dimension {d}")));
        }
        let depth = self.depth.max(1) as f64;
        let (step, final_time) = match (self.step, self.final_time) {
            (Some(h), Some(t)) if (h * depth - t).abs() > 1e-12 * t.abs().max(1.0) => {
                return Err(Error::InvalidConfig(format!(
                    "step {h} times depth {depth} disagrees with final time {t}"
                )))
            }
            (Some(h), Some(t)) => (h, t),
            (Some(h), None) => (h, h * depth),
            (None, t) => {
                let t = t.unwrap_or(DEFAULT_FINAL_TIME);
                (t / depth, t)
            }
        };
        let resolved = ExperimentConfig {
            width: Some(width),
            augmentation: Some(width - d),
            step: Some(step),
            final_time: Some(final_time),
            ..self.clone()
        };
        resolved.check()?;
        Ok(resolved)
    }

    fn check(&self) -> Result<()> {
        let invalid = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1");
        }
        if self.repetitions == 0 {
            return invalid("repetitions must be at least 1");
        }
        if self.depth == 0 {
            return invalid("depth must be at least 1");
        }
        if self.eval_batch == 0 {
            return invalid("eval_batch must be at least 1");
        }
        if self.activation == Activation::Identity {
            return invalid("the identity activation is for testing only");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return invalid("split_ratio must lie in (0, 1)");
        }
        let rk = !matches!(self.architecture, ArchChoice::Standard);
        if rk && self.augmentation == Some(0) && !self.allow_node {
            return invalid(
                "RK architectures need width greater than the input dimension; set allow_node for the unaugmented baseline",
            );
        }
        if let ArchChoice::Custom(t) = &self.architecture {
            t.conjugate()?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: self.optimizer,
            early_stopping: self.early_stopping,
            train_metrics: self.train_metrics,
            eval_batch: self.eval_batch,
        }
    }

    pub fn model_spec(&self, data: &LabeledDataset) -> Result<ModelSpec> {
        let spec = ModelSpec {
            arch: self.architecture.architecture(),
            activation: self.activation,
            width: self
                .width
                .ok_or_else(|| Error::InvalidConfig("configuration is not resolved".into()))?,
            depth: self.depth,
            step: self.step.ok_or_else(|| Error::InvalidConfig("configuration is not resolved".into()))?,
            input_dim: data.dim,
            classes: data.classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Loads the data and splits it. The split seed is derived from `seed`.
    pub fn materialize(&self) -> Result<SplitDataset> {
        let ds = self.dataset.load(self.seed)?;
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        split(&ds, self.split_ratio, RngState::new(self.seed).child(0).seed())
    }

    /// Random stream of repetition `rep`: child 0 initialises, child 1 shuffles.
    pub fn repetition_rng(&self, rep: usize) -> RngState {
        RngState::new(self.seed).child(1 + rep as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
            values,
        }
    }
}

/// Final-epoch metrics over all repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub repetitions: usize,
    pub epochs_run: Vec<usize>,
    pub train_acc: Stat,
    pub val_acc: Stat,
    pub train_cost: Stat,
    pub val_cost: Stat,
}

impl Summary {
    pub fn of(runs: &[Metrics]) -> Self {
        let last: Vec<&EpochMetrics> = runs.iter().filter_map(Metrics::last).collect();
        let col = |f: fn(&EpochMetrics) -> f64| Stat::of(last.iter().map(|m| f(m)).collect());
        Summary {
            repetitions: runs.len(),
            epochs_run: last.iter().map(|m| m.epoch).collect(),
            train_acc: col(|m| m.train_acc),
            val_acc: col(|m| m.val_acc),
            train_cost: col(|m| m.train_cost),
            val_cost: col(|m| m.val_cost),
        }
    }
}

pub const METRICS_HEADER: &str = "epoch,train_acc,val_acc,train_cost,val_cost,seconds";

pub fn metrics_row(m: &EpochMetrics) -> String {
    format!(
        "{},{},{},{},{},{}",
        m.epoch, m.train_acc, m.val_acc, m.train_cost, m.val_cost, m.seconds
    )
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Metrics> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::MalformedData(format!("{}: unexpected header", path.display())));
    }
    let mut epochs = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::MalformedData(format!("{}: bad row '{line}'", path.display()));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        epochs.push(EpochMetrics {
            epoch: f[0].parse().map_err(|_| bad())?,
            train_acc: num(1)?,
            val_acc: num(2)?,
            train_cost: num(3)?,
            val_cost: num(4)?,
            seconds: num(5)?,
        });
    }
    Ok(Metrics { epochs })
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RKNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Shape manifest stored next to a checkpoint payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub spec: ModelSpec,
    pub parameter_count: usize,
    /// `(name, rows, cols)` of every block in payload order.
    pub blocks: Vec<(String, usize, usize)>,
}

fn manifest_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

/// Writes `<path>` (binary payload) and `<path>.json` (manifest).
///
/// Payload: 8-byte magic, `u32` version, `u64` value count, then every
/// parameter as a little-endian `f64` in the order K0, b0, K1, b1, …, W, μ.
pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let count = model.parameter_count();
    let mut bytes = Vec::with_capacity(20 + 8 * count);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(count as u64).to_le_bytes());
    for s in model.slices() {
        for x in s {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

    let (w, c) = (model.width(), model.spec.classes);
    let mut blocks = Vec::new();
    for l in 0..model.depth() {
        blocks.push((format!("K{l}"), w, w));
        blocks.push((format!("b{l}"), w, 1));
    }
    blocks.push(("W".into(), c, w));
    blocks.push(("mu".into(), c, 1));
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        spec: model.spec.clone(),
        parameter_count: count,
        blocks,
    };
    let mpath = manifest_path(path);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let bad = |m: String| Error::MalformedData(format!("{}: {m}", path.display()));
    if manifest.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported manifest version {}", manifest.version)));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let mut model = ModelParams::zeros(manifest.spec)?;
    if count != model.parameter_count() || count != manifest.parameter_count {
        return Err(Error::dims("checkpoint parameter count", model.parameter_count(), count));
    }
    if bytes.len() != 20 + 8 * count {
        return Err(bad(format!("payload has {} bytes, expected {}", bytes.len() - 20, 8 * count)));
    }
    let mut values = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for s in model.slices_mut() {
        for x in s.iter_mut() {
            *x = values.next().expect("length checked");
        }
    }
    Ok(model)
}

/// Result of [`run_experiment`].
#[derive(Clone, Debug)]
pub struct RunReport {
    pub run_dir: PathBuf,
    pub config: ExperimentConfig,
    pub metrics: Vec<Metrics>,
    pub summary: Summary,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains every repetition of `config` and writes the run directory.
///
/// Metrics rows are flushed as they are produced, so a run that aborts on a
/// non-finite cost leaves its partial outputs behind.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let data = config.materialize()?;
    let config = config.resolve(data.train.dim)?;
    let spec = config.model_spec(&data.train)?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;

    let train_config = config.train_config();
    let mut runs = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let rng = config.repetition_rng(rep);
        let model = ModelParams::init(spec.clone(), &mut rng.child(0))?;
        let csv_path = dir.join(format!("metrics-rep{rep}.csv"));
        let mut csv = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        writeln!(csv, "{METRICS_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
        let mut io_error = None;
        let outcome = train(model, &data, &train_config, &mut rng.child(1), |m| {
            if let Err(e) = writeln!(csv, "{}", metrics_row(m)).and_then(|_| csv.flush()) {
                io_error.get_or_insert(e);
            }
        });
        if let Some(e) = io_error {
            return Err(Error::io(&csv_path, e));
        }
        let (model, metrics) = outcome?;
        save_checkpoint(&model, dir.join(format!("model-rep{rep}.bin")))?;
        if config.plots {
            for (fig, what) in convergence_figures(&metrics.epochs).iter().zip(["acc", "cost"]) {
                emit_svg(fig, figure_path(&dir, fig.kind(), &format!("{what}-rep{rep}")))?;
            }
            if rep == 0 {
                model_figures(&model, &data.val, &dir, "rep0", true)?;
            }
        }
        runs.push(metrics);
    }
    if config.plots {
        data_figure(&data.train, &dir)?;
    }
    let summary = Summary::of(&runs);
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(RunReport {
        run_dir: dir,
        config,
        metrics: runs,
        summary,
    })
}

fn labels_of(ds: &LabeledDataset) -> Vec<usize> {
    ds.labels.clone()
}

fn to3(v: &[f64]) -> [f64; 3] {
    [
        v.first().copied().unwrap_or(0.0),
        v.get(1).copied().unwrap_or(0.0),
        v.get(2).copied().unwrap_or(0.0),
    ]
}

/// Scatter plot of the raw inputs.
pub fn data_figure(ds: &LabeledDataset, dir: &Path) -> Result<PathBuf> {
    let fig = match ds.dim {
        2 => Figure::Scatter2d {
            points: plane_points(&ds.samples, None)?,
            labels: labels_of(ds),
        },
        3 => Figure::Scatter3dProjected {
            points: ds.samples.iter().map(|s| to3(s)).collect(),
            labels: labels_of(ds),
        },
        _ => {
            let pm = pca_fit(&ds.samples, 2)?;
            Figure::Scatter2d {
                points: plane_points(&ds.samples, Some(&pm))?,
                labels: labels_of(ds),
            }
        }
    };
    let path = figure_path(dir, fig.kind(), "data");
    emit_svg(&fig, &path)?;
    Ok(path)
}

/// Samples drawn as trajectories.
const TRAJECTORY_SAMPLES: usize = 60;

/// Figures of a trained model on `ds`.
///
/// Two-dimensional inputs give the prediction background; otherwise the final
/// features, reduced to three principal components, are drawn through the
/// fixed camera. With `trajectories`, feature paths of a few samples are
/// added, projected on the principal plane of their points.
pub fn model_figures(
    model: &ModelParams,
    ds: &LabeledDataset,
    dir: &Path,
    tag: &str,
    trajectories: bool,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if ds.dim == 2 {
        let points = plane_points(&ds.samples, None)?;
        let grid = prediction_grid(model, Bounds::around(&points), 80, 80)?;
        let fig = Figure::Prediction {
            grid,
            points,
            labels: labels_of(ds),
        };
        let path = figure_path(dir, fig.kind(), tag);
        emit_svg(&fig, &path)?;
        written.push(path);
    } else {
        let feats = final_features(model, &ds.samples)?;
        let k = feats.first().map_or(0, Vec::len).min(3);
        let pm = pca_fit(&feats, k)?;
        let points = feats
            .iter()
            .map(|f| pca_project(&pm, f).map(|p| to3(&p)))
            .collect::<Result<Vec<_>>>()?;
        let fig = Figure::Scatter3dProjected {
            points,
            labels: labels_of(ds),
        };
        let path = figure_path(dir, fig.kind(), &format!("features-{tag}"));
        emit_svg(&fig, &path)?;
        written.push(path);
    }
    if trajectories && !ds.is_empty() {
        let n = ds.len().min(TRAJECTORY_SAMPLES);
        let trace = forward(model, &augment_batch(&ds.samples[..n], model.width())?)?;
        let paths: Vec<Vec<Vector>> = (0..n).map(|i| trace.trajectory(i)).collect();
        let all: Vec<&Vector> = paths.iter().flatten().collect();
        let pm = pca_fit(&all, model.width().min(2))?;
        let planar = paths
            .iter()
            .map(|p| plane_points(p, Some(&pm)))
            .collect::<Result<Vec<_>>>()?;
        let fig = Figure::Trajectories {
            paths: planar,
            labels: ds.labels[..n].to_vec(),
        };
        let path = figure_path(dir, fig.kind(), tag);
        emit_svg(&fig, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Accuracy (percent) and mean cost of a checkpoint on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub cost: f64,
    pub figures: Vec<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Val,
    All,
}

// ---- command line --------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "rknet", version, about = "Runge-Kutta networks for point and image classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a point dataset and save it as CSV.
    Gen(GenArgs),
    /// Train a configuration and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 1500)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchFlag {
    Standard,
    Euler,
    Rk4,
}

/// Flags override the values of `--config`.
#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generated dataset name.
    #[arg(long, conflicts_with = "csv")]
    pub dataset: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Dataset CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchFlag>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub augmentation: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Step size h; overrides --final-time.
    #[arg(long)]
    pub step: Option<f64>,
    /// Final time T, giving h = T / depth.
    #[arg(long)]
    pub final_time: Option<f64>,
    #[arg(long, value_parser = parse_activation)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub allow_node: bool,
    #[arg(long)]
    pub no_plots: bool,
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    match s {
        "relu" => Ok(Activation::Relu),
        "softplus" => Ok(Activation::Softplus),
        "sigmoid" => Ok(Activation::Sigmoid),
        "tanh" => Ok(Activation::Tanh),
        other => Err(format!("unknown activation '{other}' (relu, softplus, sigmoid, tanh)")),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint payload; the manifest is read from the same path with a
    /// `.json` extension.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run directory whose `config.json` defines the data and split.
    #[arg(long, conflicts_with = "csv")]
    pub run_dir: Option<PathBuf>,
    /// Dataset CSV file, evaluated whole.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Subset::Val)]
    pub subset: Subset,
    /// Write figures into this directory.
    #[arg(long)]
    pub plots: Option<PathBuf>,
}

impl TrainArgs {
    pub fn to_config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(name) = &self.dataset {
            let n = match (&c.dataset, self.n) {
                (_, Some(n)) => n,
                (DatasetSpec::Generated { n, .. }, None) => *n,
                _ => default_n(),
            };
            c.dataset = DatasetSpec::Generated { name: name.clone(), n };
        } else if let Some(path) = &self.csv {
            c.dataset = DatasetSpec::Csv { csv: path.clone() };
        } else if let (Some(new_n), DatasetSpec::Generated { n, .. }) = (self.n, &mut c.dataset) {
            *n = new_n;
        }
        if let Some(a) = self.arch {
            c.architecture = match a {
                ArchFlag::Standard => ArchChoice::Standard,
                ArchFlag::Euler => ArchChoice::Euler,
                ArchFlag::Rk4 => ArchChoice::Rk4,
            };
        }
        if self.width.is_some() || self.augmentation.is_some() {
            c.width = self.width;
            c.augmentation = self.augmentation;
        }
        macro_rules! set {
            ($($field:ident => $target:expr),*) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        if self.step.is_some() || self.final_time.is_some() {
            c.step = self.step;
            c.final_time = self.final_time;
        }
        set!(depth => c.depth, activation => c.activation, lr => c.optimizer.lr,
             batch_size => c.batch_size, epochs => c.epochs, repetitions => c.repetitions, seed => c.seed);
        if let Some(out) = &self.out {
            c.output_dir = out.clone();
        }
        c.allow_node |= self.allow_node;
        if self.no_plots {
            c.plots = false;
        }
        Ok(c)
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<LabeledDataset> {
    let ds = gen_point_dataset(&args.dataset, args.n, args.seed)?;
    save_csv(&ds, &args.out)?;
    Ok(ds)
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunReport> {
    run_experiment(&args.to_config()?)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let model = load_checkpoint(&args.checkpoint)?;
    let ds = match (&args.run_dir, &args.csv) {
        (Some(dir), _) => {
            let config = ExperimentConfig::from_json_file(dir.join("config.json"))?;
            let data = config.materialize()?;
            match args.subset {
                Subset::Train => data.train,
                Subset::Val => data.val,
                Subset::All => config.dataset.load(config.seed)?,
            }
        }
        (None, Some(csv)) => load_csv(csv)?,
        (None, None) => return Err(Error::InvalidConfig("eval needs --run-dir or --csv".into())),
    };
    evaluate_checkpoint(&model, &ds, args.plots.as_deref())
}

/// Accuracy and cost of `model` on `ds`, plus figures when `plots` is set.
pub fn evaluate_checkpoint(model: &ModelParams, ds: &LabeledDataset, plots: Option<&Path>) -> Result<EvalReport> {
    if ds.dim != model.spec.input_dim || ds.classes > model.spec.classes {
        return Err(Error::dims("checkpoint input dimension", model.spec.input_dim, ds.dim));
    }
    let (accuracy, cost) = evaluate(model, ds, 256)?;
    let figures = match plots {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            model_figures(model, ds, dir, "eval", false)?
        }
        None => Vec::new(),
    };
    Ok(EvalReport {
        samples: ds.len(),
        accuracy,
        cost,
        figures,
    })
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Process exit code of an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::UnknownDataset(_) | Error::InvalidTableau(_) | Error::ZeroWeight { .. } => {
            EXIT_USAGE
        }
        Error::Json(_) => EXIT_USAGE,
        Error::NonFinite { .. } => EXIT_NUMERICAL,
        Error::DimensionMismatch { .. }
        | Error::EmptyDataset
        | Error::MalformedData(_)
        | Error::Idx { .. }
        | Error::Io { .. } => EXIT_DATA,
    }
}

/// Runs a parsed command line, reporting on stdout and stderr. Returns the
/// process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|ds| {
            println!("wrote {} samples ({} classes, dim {}) to {}", ds.len(), ds.classes, ds.dim, a.out.display());
        }),
        Command::Train(a) => cmd_train(a).map(|r| {
            let s = &r.summary;
            println!(
                "{}: train acc {:.2} ± {:.2}, val acc {:.2} ± {:.2} over {} repetition(s)",
                r.run_dir.display(),
                s.train_acc.mean,
                s.train_acc.std,
                s.val_acc.mean,
                s.val_acc.std,
                s.repetitions
            );
        }),
        Command::Eval(a) => cmd_eval(a).map(|r| {
            let mut out = format!("samples={}\naccuracy={}\ncost={}\n", r.samples, r.accuracy, r.cost);
            for f in &r.figures {
                let _ = writeln!(out, "figure={}", f.display());
            }
            print!("{out}");
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSpec::Generated {
                name: "donut_2d".into(),
                n: 60,
            },
            width: Some(3),
            depth: 3,
            epochs: 2,
            repetitions: 2,
            seed: 5,
            output_dir: dir.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn defaults_are_echoed() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let r = c.resolve(2).unwrap();
        assert_eq!((r.width, r.augmentation), (Some(16), Some(14)));
        assert_eq!((r.step, r.final_time), (Some(0.1), Some(2.0)));
        let json = serde_json::to_value(&r).unwrap();
        for key in ["dataset", "architecture", "width", "augmentation", "depth", "step", "activation", "optimizer",
            "batch_size", "epochs", "repetitions", "seed", "split_ratio", "output_dir"]
        {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"widht": 3}"#).is_err());
    }

    #[test]
    fn config_json_shapes() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"dataset": {"name": "squares_2d_4c", "n": 100}, "architecture": "euler", "augmentation": 2}"#,
        )
        .unwrap();
        assert_eq!(c.architecture, ArchChoice::Euler);
        assert_eq!(c.resolve(2).unwrap().width, Some(4));
        let csv: ExperimentConfig = serde_json::from_str(r#"{"dataset": {"csv": "x.csv"}}"#).unwrap();
        assert_eq!(csv.dataset, DatasetSpec::Csv { csv: "x.csv".into() });
        let custom: ExperimentConfig = serde_json::from_str(
            r#"{"architecture": {"custom": {"s": 2, "A": [[0, 0], [0.5, 0]], "beta": [0, 1], "c": [0, 0.5]}}}"#,
        )
        .unwrap();
        // Zero weight: no adjoint.
        assert!(matches!(custom.resolve(2), Err(Error::ZeroWeight { index: 0 })));
    }

    #[test]
    fn resolve_checks_invariants() {
        let base = ExperimentConfig::default();
        let node = ExperimentConfig {
            width: Some(2),
            ..base.clone()
        };
        assert!(node.resolve(2).is_err());
        assert!(ExperimentConfig { allow_node: true, ..node.clone() }.resolve(2).is_ok());
        assert!(ExperimentConfig {
            architecture: ArchChoice::Standard,
            ..node
        }
        .resolve(2)
        .is_ok());
        assert!(ExperimentConfig { batch_size: 0, ..base.clone() }.resolve(2).is_err());
        assert!(ExperimentConfig { repetitions: 0, ..base.clone() }.resolve(2).is_err());
        assert!(ExperimentConfig {
            width: Some(5),
            augmentation: Some(1),
            ..base.clone()
        }
        .resolve(2)
        .is_err());
        let stepped = ExperimentConfig {
            step: Some(0.5),
            depth: 4,
            ..base.clone()
        };
        assert_eq!(stepped.resolve(2).unwrap().final_time, Some(2.0));
        assert!(ExperimentConfig {
            final_time: Some(3.0),
            ..stepped
        }
        .resolve(2)
        .is_err());
        assert!(ExperimentConfig {
            activation: Activation::Identity,
            ..base
        }
        .resolve(2)
        .is_err());
    }

    #[test]
    fn stat_uses_population_std() {
        let s = Stat::of(vec![1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
    }

    #[test]
    fn run_directory_contents() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&small_config(dir.path())).unwrap();
        for f in [
            "config.json",
            "metrics-rep0.csv",
            "metrics-rep1.csv",
            "model-rep0.bin",
            "model-rep0.json",
            "summary.json",
            "convergence-acc-rep0.svg",
            "convergence-cost-rep1.svg",
            "prediction-rep0.svg",
            "trajectories-rep0.svg",
            "scatter2d-data.svg",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let m = read_metrics_csv(dir.path().join("metrics-rep1.csv")).unwrap();
        assert_eq!(m.epochs.len(), 3);
        assert!(m.epochs.iter().zip(&report.metrics[1].epochs).all(|(a, b)| a == b));

        let vals: Vec<f64> = (0..2)
            .map(|k| read_metrics_csv(dir.path().join(format!("metrics-rep{k}.csv"))).unwrap().epochs[2].val_acc)
            .collect();
        let summary: Summary =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary.val_acc, Stat::of(vals));
    }

    #[test]
    fn zero_epochs_give_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            epochs: 0,
            repetitions: 1,
            plots: false,
            ..small_config(dir.path())
        };
        let report = run_experiment(&c).unwrap();
        assert_eq!(report.metrics[0].epochs.len(), 1);
        assert_eq!(report.metrics[0].epochs[0].epoch, 0);
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ModelSpec {
            arch: Architecture::rk4(),
            activation: Activation::Tanh,
            width: 4,
            depth: 3,
            step: 0.1,
            input_dim: 2,
            classes: 3,
        };
        let model = ModelParams::init(spec, &mut RngState::new(1)).unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(bytes.len(), 20 + 8 * model.parameter_count());

        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        fs::write(&path, wrong).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn eval_matches_last_metrics_row() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&small_config(dir.path())).unwrap();
        let r = cmd_eval(&EvalArgs {
            checkpoint: dir.path().join("model-rep1.bin"),
            run_dir: Some(dir.path().to_path_buf()),
            csv: None,
            subset: Subset::Val,
            plots: None,
        })
        .unwrap();
        let last = report.metrics[1].last().unwrap();
        assert!((r.accuracy - last.val_acc).abs() <= 1e-12);
        assert!((r.cost - last.val_cost).abs() <= 1e-12);
    }

    #[test]
    fn eval_plots_depend_on_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig {
            plots: false,
            repetitions: 1,
            ..small_config(dir.path())
        };
        run_experiment(&c).unwrap();
        let plots = dir.path().join("plots");
        let r = cmd_eval(&EvalArgs {
            checkpoint: dir.path().join("model-rep0.bin"),
            run_dir: Some(dir.path().to_path_buf()),
            csv: None,
            subset: Subset::All,
            plots: Some(plots.clone()),
        })
        .unwrap();
        assert_eq!(r.figures, vec![plots.join("prediction-eval.svg")]);

        let dir3 = tempfile::tempdir().unwrap();
        let c3 = ExperimentConfig {
            dataset: DatasetSpec::Generated {
                name: "donut_3d_3c".into(),
                n: 60,
            },
            width: Some(4),
            plots: false,
            repetitions: 1,
            ..small_config(dir3.path())
        };
        run_experiment(&c3).unwrap();
        let r3 = cmd_eval(&EvalArgs {
            checkpoint: dir3.path().join("model-rep0.bin"),
            run_dir: Some(dir3.path().to_path_buf()),
            csv: None,
            subset: Subset::Val,
            plots: Some(plots.clone()),
        })
        .unwrap();
        assert_eq!(r3.figures, vec![plots.join("scatter3d-projected-features-eval.svg")]);

        // A 2D checkpoint cannot read the 3D data.
        let err = cmd_eval(&EvalArgs {
            checkpoint: dir.path().join("model-rep0.bin"),
            run_dir: Some(dir3.path().to_path_buf()),
            csv: None,
            subset: Subset::Val,
            plots: None,
        })
        .unwrap_err();
        assert_eq!(exit_code(&err), EXIT_DATA);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::UnknownDataset("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::dims("x", 1, 2)), EXIT_DATA);
        assert_eq!(
            exit_code(&Error::NonFinite {
                epoch: 1,
                batch: 0,
                value: f64::NAN
            }),
            EXIT_NUMERICAL
        );
        let gen = GenArgs {
            dataset: "nope".into(),
            n: 10,
            seed: 0,
            out: PathBuf::from("/nonexistent/x.csv"),
        };
        assert_eq!(exit_code(&cmd_gen(&gen).unwrap_err()), EXIT_USAGE);
    }

    #[test]
    fn train_flags_override_config() {
        let args = TrainArgs {
            dataset: Some("spiral".into()),
            n: Some(200),
            arch: Some(ArchFlag::Standard),
            depth: Some(5),
            lr: Some(0.01),
            no_plots: true,
            ..TrainArgs::default()
        };
        let c = args.to_config().unwrap();
        assert_eq!(
            c.dataset,
            DatasetSpec::Generated {
                name: "spiral".into(),
                n: 200
            }
        );
        assert_eq!((c.architecture, c.depth, c.optimizer.lr, c.plots), (ArchChoice::Standard, 5, 0.01, false));
        let parsed = Cli::try_parse_from(["rknet", "train", "--activation", "relu", "--epochs", "3"]).unwrap();
        let Command::Train(t) = parsed.command else { panic!() };
        assert_eq!(t.activation, Some(Activation::Relu));
        assert!(Cli::try_parse_from(["rknet", "train", "--activation", "identity"]).is_err());
    }
}
