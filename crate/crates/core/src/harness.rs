//! Experiment orchestration: configuration, mode dispatch and artifacts.
//!
//! Every mode writes `metrics.json` and `metrics.csv` into the output
//! directory; `train` adds `checkpoint.json`, `characterize` and `fit` add
//! `contour.csv` (and `fit` an `activation.json`).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::{fit_activation, g, ActivationFit};
use crate::dataio::{self, Dataset, Encoded};
use crate::error::{Error, Result};
use crate::mtj::{characterize, simulate_spikes, BasisAngles, ContourMap, DeviceBundle, RunLength};
use crate::seed;
use crate::snn::{
    self, argmin, default_t_norm, evaluate_stochastic, Checkpoint, EpochMetrics, Network, Optimizer, SpikeBudget,
    TargetSpec, TrainConfig,
};

/// V2 that puts τ_AP at one timestep for the calibrated basis.
pub const OPERATING_V2: f64 = 0.02;

/// P persistence (s) the spike detector needs before it re-arms. Shorter P
/// runs are ringing between two halves of one AP excursion.
pub const SPIKE_REARM: f64 = 1e-9;

/// Fit of the nominal device along V1 at [`OPERATING_V2`]; regenerate with
/// the `fit` mode.
pub const CALIBRATED_ACTIVATION: ActivationFit = ActivationFit {
    tau0: 5.611791357539206e-8,
    vref: -0.05,
    vc: 0.03593173232003555,
    v_min: -0.12,
    v_max: 0.02,
    tau_ap_fixed: 2.6364380388692434e-10,
    residual: 0.06418120142822477,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Characterize,
    Fit,
    Train,
    Eval,
    Cosim,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Characterize => "characterize",
            Mode::Fit => "fit",
            Mode::Train => "train",
            Mode::Eval => "eval",
            Mode::Cosim => "cosim",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Behavioral,
    Llg,
}

/// How many dwells a hidden neuron integrates in stochastic inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenSpikes {
    /// First spike only.
    First,
    /// Same count as the output layer.
    MatchK,
}

impl HiddenSpikes {
    pub fn budget(self, k: usize) -> Result<SpikeBudget> {
        match self {
            HiddenSpikes::First => SpikeBudget::new(k, 1),
            HiddenSpikes::MatchK => SpikeBudget::new(k, k),
        }
    }
}

/// `n` evenly spaced values from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.start];
        }
        (0..self.n)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (self.n - 1) as f64)
            .collect()
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.n == 0 || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(Error::config(path, "need n ≥ 1 and finite endpoints"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub v1: Axis,
    /// Used by `characterize`; `fit` runs at `operating_v2` only.
    pub v2: Axis,
    pub max_time: f64,
    pub target_dwells: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            v1: Axis {
                start: -0.12,
                stop: 0.02,
                n: 8,
            },
            v2: Axis {
                start: 0.014,
                stop: 0.026,
                n: 4,
            },
            max_time: 1e-3,
            target_dwells: Some(2000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mnist_dir: PathBuf,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Pixel-to-voltage window; defaults to the activation's certified domain.
    pub input_window: Option<[f64; 2]>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            mnist_dir: PathBuf::from("data/mnist"),
            train_limit: None,
            test_limit: None,
            input_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    /// Number of independent sampling seeds per k.
    pub seeds: usize,
    pub hidden_spikes: HiddenSpikes,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_list: vec![1, 2, 3, 5],
            seeds: 5,
            hidden_spikes: HiddenSpikes::MatchK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CosimConfig {
    /// Leading test images to co-simulate.
    pub images: usize,
    pub k_list: Vec<usize>,
    /// Also run hidden neurons on LLG devices (expensive).
    pub llg_hidden: bool,
    /// Per-device cutoff in units of the slow target `t2`.
    pub timeout_factor: f64,
}

impl Default for CosimConfig {
    fn default() -> Self {
        CosimConfig {
            images: 200,
            k_list: vec![3],
            llg_hidden: false,
            timeout_factor: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub backend: Backend,
    pub device: DeviceBundle,
    pub operating_v2: f64,
    pub grid: GridConfig,
    /// Certified activation (from `fit`).
    pub activation: ActivationFit,
    /// Lifetime range `[tau_lo, tau_hi]` (s) the training clamp window is
    /// widened to by extrapolating the fit; `None` trains on the certified window.
    pub training_window: Option<[f64; 2]>,
    pub data: DataConfig,
    /// Hidden layer widths; empty for a single-layer network.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub targets: TargetSpec,
    pub eval: EvalConfig,
    pub cosim: CosimConfig,
    /// Checkpoint for `eval`/`cosim`; defaults to `out_dir/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut device = DeviceBundle::nominal();
        device.basis = BasisAngles::CALIBRATED;
        device.min_p_dwell = SPIKE_REARM;
        ExperimentConfig {
            mode: None,
            seed: 1,
            out_dir: PathBuf::from("runs/default"),
            backend: Backend::Behavioral,
            device,
            operating_v2: OPERATING_V2,
            grid: GridConfig::default(),
            activation: CALIBRATED_ACTIVATION,
            training_window: Some([0.3e-9, 3e-6]),
            data: DataConfig::default(),
            hidden: Vec::new(),
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 64,
                optimizer: Optimizer::adam(),
                ..TrainConfig::default()
            },
            targets: TargetSpec::default(),
            eval: EvalConfig::default(),
            cosim: CosimConfig::default(),
            checkpoint: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoint.json"))
    }

    /// Field-level checks for `mode`; file existence is checked here too.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        self.device
            .validate()
            .map_err(|e| Error::config("device", e.to_string()))?;
        if !self.operating_v2.is_finite() {
            return Err(Error::config("operating_v2", "must be finite"));
        }
        self.activation
            .validate()
            .map_err(|e| Error::config("activation", e.to_string()))?;
        self.targets
            .validate()
            .map_err(|e| Error::config("targets", e.to_string()))?;
        match mode {
            Mode::Characterize | Mode::Fit => {
                self.grid.v1.validate("grid.v1")?;
                self.grid.v2.validate("grid.v2")?;
                if !(self.grid.max_time > 0.0) {
                    return Err(Error::config("grid.max_time", "must be positive"));
                }
                if self.grid.target_dwells == Some(0) {
                    return Err(Error::config("grid.target_dwells", "must be at least 1"));
                }
            }
            Mode::Train => {
                self.train
                    .validate()
                    .map_err(|e| Error::config("train", e.to_string()))?;
                if self.hidden.contains(&0) {
                    return Err(Error::config("hidden", "layer widths must be positive"));
                }
                if let Some([lo, hi]) = self.training_window {
                    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                        return Err(Error::config("training_window", "need 0 < tau_lo < tau_hi"));
                    }
                }
                self.check_input_window()?;
                self.check_data_dir()?;
            }
            Mode::Eval | Mode::Cosim => {
                let (ks, path) = if mode == Mode::Eval {
                    (&self.eval.k_list, "eval.k_list")
                } else {
                    (&self.cosim.k_list, "cosim.k_list")
                };
                if ks.is_empty() || ks.contains(&0) {
                    return Err(Error::config(path, "must be nonempty with every k ≥ 1"));
                }
                if self.eval.seeds == 0 {
                    return Err(Error::config("eval.seeds", "must be at least 1"));
                }
                if mode == Mode::Cosim {
                    if self.cosim.images == 0 {
                        return Err(Error::config("cosim.images", "must be at least 1"));
                    }
                    if !(self.cosim.timeout_factor > 0.0) {
                        return Err(Error::config("cosim.timeout_factor", "must be positive"));
                    }
                }
                self.check_input_window()?;
                if !self.checkpoint_path().exists() {
                    return Err(Error::config(
                        "checkpoint",
                        format!("{} does not exist", self.checkpoint_path().display()),
                    ));
                }
                self.check_data_dir()?;
            }
        }
        Ok(())
    }

    fn check_input_window(&self) -> Result<()> {
        if let Some([lo, hi]) = self.data.input_window {
            if !(lo < hi) {
                return Err(Error::config("data.input_window", "need v_lo < v_hi"));
            }
        }
        Ok(())
    }

    fn check_data_dir(&self) -> Result<()> {
        if !self.data.mnist_dir.is_dir() {
            return Err(Error::config(
                "data.mnist_dir",
                format!("{} is not a directory", self.data.mnist_dir.display()),
            ));
        }
        Ok(())
    }

    fn input_window(&self) -> [f64; 2] {
        self.data
            .input_window
            .unwrap_or([self.activation.v_min, self.activation.v_max])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub backend: Backend,
    pub k: usize,
    pub hidden_spikes: usize,
    pub seed: u64,
    pub images: usize,
    pub accuracy: f64,
    /// Mean spikes per neuron per inference, per layer.
    pub spikes_per_neuron: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub backend: Backend,
    pub k: usize,
    pub mean: f64,
    /// Standard error over seeds (0 for a single seed).
    pub se: f64,
    pub spikes_per_neuron: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub config_hash: String,
    pub seed: u64,
    pub eval_seeds: Vec<u64>,
    pub software_accuracy: Option<f64>,
    pub accuracy: Vec<AccuracyRow>,
    pub summary: Vec<KSummary>,
    pub epochs: Vec<EpochMetrics>,
    pub activation: Option<ActivationFit>,
    pub notes: Vec<String>,
    pub wall_clock_s: f64,
}

impl MetricsReport {
    fn new(mode: Mode, config: &ExperimentConfig) -> Self {
        MetricsReport {
            mode,
            config_hash: config.hash(),
            seed: config.seed,
            eval_seeds: Vec::new(),
            software_accuracy: None,
            accuracy: Vec::new(),
            summary: Vec::new(),
            epochs: Vec::new(),
            activation: None,
            notes: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn summary_for(&self, backend: Backend, k: usize) -> Option<&KSummary> {
        self.summary.iter().find(|s| s.backend == backend && s.k == k)
    }
}

/// Run `mode` (or `config.mode`) and write its artifacts.
pub fn run(mode: Option<Mode>, config: &ExperimentConfig) -> Result<MetricsReport> {
    let mode = mode
        .or(config.mode)
        .ok_or_else(|| Error::config("mode", "no mode given"))?;
    config.validate(mode)?;
    fs::create_dir_all(&config.out_dir)?;
    let start = Instant::now();
    let mut report = MetricsReport::new(mode, config);
    match mode {
        Mode::Characterize => run_characterize(config, &mut report)?,
        Mode::Fit => run_fit(config, &mut report)?,
        Mode::Train => run_train(config, &mut report)?,
        Mode::Eval if config.backend == Backend::Llg => run_cosim(config, &config.eval.k_list, &mut report)?,
        Mode::Eval => run_eval(config, &mut report)?,
        Mode::Cosim => run_cosim(config, &config.cosim.k_list, &mut report)?,
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    write_json(&config.out_dir.join("metrics.json"), &report)?;
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_contour(config: &ExperimentConfig, map: &ContourMap) -> Result<()> {
    map.write_csv(File::create(config.out_dir.join("contour.csv"))?)
}

fn write_kv_csv(config: &ExperimentConfig, rows: &[(&str, String)]) -> Result<()> {
    let mut w = csv::Writer::from_path(config.out_dir.join("metrics.csv"))?;
    w.write_record(["name", "value"])?;
    for (k, v) in rows {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn run_length(config: &ExperimentConfig) -> RunLength {
    RunLength {
        max_time: config.grid.max_time,
        target_dwells: config.grid.target_dwells,
    }
}

fn run_characterize(config: &ExperimentConfig, report: &mut MetricsReport) -> Result<()> {
    let map = characterize(
        &config.device,
        &config.grid.v1.values(),
        &config.grid.v2.values(),
        run_length(config),
        config.seed,
    )?;
    write_contour(config, &map)?;
    let failed = map.points.iter().filter(|p| p.estimate.is_none()).count();
    let under = map
        .undersampled(config.grid.target_dwells.unwrap_or(crate::mtj::MIN_DWELLS))
        .len();
    report.notes.push(format!(
        "{} grid points, {failed} without estimate, {under} undersampled",
        map.points.len()
    ));
    write_kv_csv(
        config,
        &[
            ("points", map.points.len().to_string()),
            ("failed", failed.to_string()),
            ("undersampled", under.to_string()),
        ],
    )
}

fn run_fit(config: &ExperimentConfig, report: &mut MetricsReport) -> Result<()> {
    let v2 = config.operating_v2;
    let map = characterize(
        &config.device,
        &config.grid.v1.values(),
        &[v2],
        run_length(config),
        config.seed,
    )?;
    write_contour(config, &map)?;
    let fit = fit_activation(&map, v2)?;
    write_json(&config.out_dir.join("activation.json"), &fit)?;
    report.activation = Some(fit);
    let (lo, hi) = fit.range();
    write_kv_csv(
        config,
        &[
            ("tau0", format!("{:e}", fit.tau0)),
            ("vref", fit.vref.to_string()),
            ("vc", fit.vc.to_string()),
            ("v_min", fit.v_min.to_string()),
            ("v_max", fit.v_max.to_string()),
            ("tau_ap_fixed", format!("{:e}", fit.tau_ap_fixed)),
            ("residual", fit.residual.to_string()),
            ("tau_p_min", format!("{lo:e}")),
            ("tau_p_max", format!("{hi:e}")),
        ],
    )
}

fn load_split(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = dataio::load_mnist(&config.data.mnist_dir)?;
    let train = match config.data.train_limit {
        Some(n) => train.head(n),
        None => train,
    };
    let test = match config.data.test_limit {
        Some(n) => test.head(n),
        None => test,
    };
    Ok((train, test))
}

/// Activation the network is trained with.
pub fn training_activation(config: &ExperimentConfig) -> Result<ActivationFit> {
    match config.training_window {
        Some([lo, hi]) => config.activation.extended(lo, hi),
        None => Ok(config.activation),
    }
}

fn run_train(config: &ExperimentConfig, report: &mut MetricsReport) -> Result<()> {
    let (train_set, test_set) = load_split(config)?;
    let [v_lo, v_hi] = config.input_window();
    let train_data = dataio::normalize(&train_set, v_lo, v_hi)?;
    let test_data = dataio::normalize(&test_set, v_lo, v_hi)?;

    let fit = training_activation(config)?;
    let mut sizes = vec![train_set.pixels()];
    sizes.extend(&config.hidden);
    sizes.push(dataio::N_CLASSES);
    let mut train_cfg = config.train.clone();
    train_cfg.seed = seed::sub_seed(config.seed, "train", 0);
    let net = Network::init(
        &sizes,
        fit,
        default_t_norm(&fit, &config.targets),
        train_cfg.init_scale,
        seed::sub_seed(config.seed, "init", 0),
    )?;

    let mut csv = csv::Writer::from_path(config.out_dir.join("metrics.csv"))?;
    csv.write_record(["epoch", "train_loss", "test_acc"])?;
    csv.flush()?;
    let mut csv_err = None;
    let outcome = snn::train(&net, &train_data, Some(&test_data), &config.targets, &train_cfg, |m| {
        let acc = m.test_acc.map(|a| a.to_string()).unwrap_or_default();
        if let Err(e) = csv
            .write_record([m.epoch.to_string(), m.train_loss.to_string(), acc])
            .and_then(|_| csv.flush().map_err(Into::into))
        {
            csv_err.get_or_insert(e);
        }
    });
    if let Some(e) = csv_err {
        return Err(e.into());
    }
    let (trained, history) = outcome?;

    let mut ckpt = Checkpoint::new(&trained, config.targets, train_cfg, report.config_hash.clone());
    ckpt.input_window = Some([v_lo, v_hi]);
    write_json(&config.out_dir.join("checkpoint.json"), &ckpt)?;
    report.software_accuracy = Some(snn::accuracy_software(&trained, &test_data)?);
    report.activation = Some(fit);
    report.epochs = history;
    Ok(())
}

/// Load the checkpoint and check it against the configured input window.
fn load_checkpoint(config: &ExperimentConfig) -> Result<(Network, [f64; 2])> {
    let path = config.checkpoint_path();
    let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(File::open(&path)?))?;
    let net = ckpt.network()?;
    let window = config
        .data
        .input_window
        .or(ckpt.input_window)
        .unwrap_or(config.input_window());
    if let Some(trained) = ckpt.input_window {
        if trained != window {
            return Err(Error::config(
                "data.input_window",
                format!("checkpoint was trained on {trained:?}, config asks for {window:?}"),
            ));
        }
    }
    if !net.activation.covers(window[0], window[1]) {
        return Err(Error::config(
            "data.input_window",
            format!(
                "{window:?} leaves the checkpoint activation domain [{}, {}]",
                net.activation.v_min, net.activation.v_max
            ),
        ));
    }
    Ok((net, window))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(report: &mut MetricsReport, backend: Backend, k: usize) {
    let rows: Vec<&AccuracyRow> = report
        .accuracy
        .iter()
        .filter(|r| r.backend == backend && r.k == k)
        .collect();
    let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let (mean, se) = mean_se(&accs);
    let layers = rows[0].spikes_per_neuron.len();
    let spikes = (0..layers)
        .map(|l| rows.iter().map(|r| r.spikes_per_neuron[l]).sum::<f64>() / rows.len() as f64)
        .collect();
    report.summary.push(KSummary {
        backend,
        k,
        mean,
        se,
        spikes_per_neuron: spikes,
    });
}

fn write_accuracy_csv(config: &ExperimentConfig, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(config.out_dir.join("metrics.csv"))?;
    w.write_record([
        "backend",
        "k",
        "hidden_spikes",
        "seed",
        "images",
        "accuracy",
        "spikes_per_neuron",
    ])?;
    for r in &report.accuracy {
        let spikes: Vec<String> = r.spikes_per_neuron.iter().map(|s| s.to_string()).collect();
        w.write_record([
            match r.backend {
                Backend::Behavioral => "behavioral",
                Backend::Llg => "llg",
            }
            .to_string(),
            r.k.to_string(),
            r.hidden_spikes.to_string(),
            r.seed.to_string(),
            r.images.to_string(),
            r.accuracy.to_string(),
            spikes.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn eval_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.eval.seeds as u64)
        .map(|i| seed::sub_seed(config.seed, "eval", i))
        .collect()
}

fn behavioral_rows(
    net: &Network,
    data: &Encoded,
    ks: &[usize],
    config: &ExperimentConfig,
    report: &mut MetricsReport,
) -> Result<()> {
    let seeds = eval_seeds(config);
    for &k in ks {
        let budget = config.eval.hidden_spikes.budget(k)?;
        let rows = seeds
            .par_iter()
            .map(|&s| evaluate_stochastic(net, data, budget, s))
            .collect::<Result<Vec<_>>>()?;
        for sum in rows {
            report.accuracy.push(AccuracyRow {
                backend: Backend::Behavioral,
                k,
                hidden_spikes: budget.hidden,
                seed: sum.seed,
                images: sum.n,
                accuracy: sum.accuracy,
                spikes_per_neuron: sum.spikes_per_neuron,
            });
        }
        summarize(report, Backend::Behavioral, k);
    }
    report.eval_seeds = seeds;
    Ok(())
}

fn run_eval(config: &ExperimentConfig, report: &mut MetricsReport) -> Result<()> {
    let (net, [v_lo, v_hi]) = load_checkpoint(config)?;
    let (_, test_set) = load_split(config)?;
    let data = dataio::normalize(&test_set, v_lo, v_hi)?;
    report.software_accuracy = Some(snn::accuracy_software(&net, &data)?);
    report.activation = Some(net.activation);
    behavioral_rows(&net, &data, &config.eval.k_list, config, report)?;
    write_accuracy_csv(config, report)
}

/// Per-image result of the LLG-backed network.
#[derive(Debug, Clone, PartialEq)]
pub struct CosimImage {
    pub predicted: usize,
    /// Output-layer k-th spike times; `INFINITY` for devices that were
    /// stopped (timed out or already beaten).
    pub times: Vec<f64>,
    pub spikes_used: Vec<usize>,
}

/// Run one image through the network with LLG output devices (and LLG
/// hidden devices if `llg_hidden`). Output devices are simulated in order of
/// increasing expected lifetime and each one is stopped once it can no
/// longer beat the current leader, which leaves the argmin unchanged.
pub fn cosim_image(
    net: &Network,
    input: ndarray::ArrayView1<f64>,
    config: &ExperimentConfig,
    budget: SpikeBudget,
    image_seed: u64,
) -> Result<CosimImage> {
    let fit = &net.activation;
    let bundle = &config.device;
    let v2 = config.operating_v2;
    let timeout = config.cosim.timeout_factor * config.targets.t2;
    let l0 = &net.layers[0];
    let mut v1 = input.dot(&l0.weights) + &l0.bias;
    let mut spikes_used = Vec::with_capacity(net.layers.len());
    let mut hidden_rng = seed::stream(image_seed, "hidden", 0);
    let drive = |v: f64| bundle.terminals(v.clamp(fit.v_min, fit.v_max), v2);

    for (l, layer) in net.layers[1..].iter().enumerate() {
        let h: Array1<f64> = if config.cosim.llg_hidden {
            let mut h = Array1::zeros(v1.len());
            let mut used = 0;
            for (j, &v) in v1.iter().enumerate() {
                let (v_me, v_i) = drive(v)?;
                let mut rng = seed::stream(image_seed, "llg-hidden", (l * 1_000_000 + j) as u64);
                let run = simulate_spikes(bundle, v_me, v_i, budget.hidden, timeout, &mut rng)?;
                used += run.spike_times.len();
                let dwell = if run.p_dwells.is_empty() {
                    run.elapsed
                } else {
                    run.p_dwells.iter().sum::<f64>() / run.p_dwells.len() as f64
                };
                h[j] = dwell / net.t_norm;
            }
            spikes_used.push(used);
            h
        } else {
            spikes_used.push(budget.hidden * v1.len());
            v1.mapv(|v| {
                let z = g(v, fit);
                let mut t = 0.0;
                for _ in 0..budget.hidden {
                    t += z * hidden_rng.sample::<f64, _>(rand_distr::Exp1);
                }
                t / (budget.hidden as f64 * net.t_norm)
            })
        };
        v1 = h.dot(&layer.weights) + &layer.bias;
    }

    let z: Vec<f64> = v1.iter().map(|&v| g(v, fit)).collect();
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let mut times = vec![f64::INFINITY; z.len()];
    let mut best = timeout;
    let mut used = 0;
    for &j in &order {
        let (v_me, v_i) = drive(v1[j])?;
        let mut rng = seed::stream(image_seed, "llg-output", j as u64);
        let run = simulate_spikes(bundle, v_me, v_i, budget.output, best, &mut rng)?;
        used += run.spike_times.len();
        if run.spike_times.len() == budget.output {
            let t = *run.spike_times.last().expect("k ≥ 1");
            times[j] = t;
            best = best.min(t);
        }
    }
    spikes_used.push(used);
    Ok(CosimImage {
        predicted: argmin(times.iter().copied()),
        times,
        spikes_used,
    })
}

fn run_cosim(config: &ExperimentConfig, ks: &[usize], report: &mut MetricsReport) -> Result<()> {
    let (net, [v_lo, v_hi]) = load_checkpoint(config)?;
    let (_, test_set) = load_split(config)?;
    let subset = test_set.head(config.cosim.images);
    let data = dataio::normalize(&subset, v_lo, v_hi)?;
    report.software_accuracy = Some(snn::accuracy_software(&net, &data)?);
    report.activation = Some(net.activation);
    report.notes.push(format!("{} test images", data.len()));

    for &k in ks {
        let budget = config.eval.hidden_spikes.budget(k)?;
        for &run_seed in &eval_seeds(config) {
            let images = (0..data.len())
                .into_par_iter()
                .map(|i| {
                    let image_seed = seed::sub_seed(run_seed, &format!("cosim-k{k}"), i as u64);
                    cosim_image(&net, data.inputs.slice(s![i, ..]), config, budget, image_seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let correct = images
                .iter()
                .zip(&data.labels)
                .filter(|(r, &y)| r.predicted == y as usize)
                .count();
            let spikes = (0..net.layers.len())
                .map(|l| {
                    images.iter().map(|r| r.spikes_used[l]).sum::<usize>() as f64
                        / (net.layers[l].fan_out() * images.len()) as f64
                })
                .collect();
            report.accuracy.push(AccuracyRow {
                backend: Backend::Llg,
                k,
                hidden_spikes: budget.hidden,
                seed: run_seed,
                images: data.len(),
                accuracy: correct as f64 / data.len() as f64,
                spikes_per_neuron: spikes,
            });
        }
        summarize(report, Backend::Llg, k);
    }
    behavioral_rows(&net, &data, ks, config, report)?;
    write_accuracy_csv(config, report)
}
