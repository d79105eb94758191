//! Seeded experiment runner for the synthetic coordinate-prediction task.
//!
//! One run = one [`ExperimentConfig`] over a list of seeds. Each seed
//! generates its dataset, trains a fresh network full-batch with AdamW, keeps
//! the parameters with the lowest validation MSE and reports their test MSE.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{generate, Shape, SyntheticData, SyntheticSpec, INPUT_DIM};
use crate::error::{Error, Result};
use crate::geometry::{sample_indices, PointCloud};
use crate::id_estimation::{twonn, SubsetSchedule};
use crate::nn::{mse, mse_loss, AdamW, AdamWConfig, FeatureTap, Mlp};
use crate::regularizers::{combined_loss, BatchPair, DimensionLoss};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    LdPrime,
    Ld,
    Lt,
    LdPlusLt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Baseline, Variant::LdPrime, Variant::Ld, Variant::Lt, Variant::LdPlusLt];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::LdPrime => "ld_prime",
            Variant::Ld => "ld",
            Variant::Lt => "lt",
            Variant::LdPlusLt => "ld_plus_lt",
        }
    }

    /// `(λ_d, λ_t, dimension loss)` actually applied by this variant.
    fn weights(self, lambda_d: f64, lambda_t: f64) -> (f64, f64, DimensionLoss) {
        match self {
            Variant::Baseline => (0.0, 0.0, DimensionLoss::Ld),
            Variant::LdPrime => (lambda_d, 0.0, DimensionLoss::LdPrime),
            Variant::Ld => (lambda_d, 0.0, DimensionLoss::Ld),
            Variant::Lt => (0.0, lambda_t, DimensionLoss::Ld),
            Variant::LdPlusLt => (lambda_d, lambda_t, DimensionLoss::Ld),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

/// Default `(λ_d, λ_t)` for a dataset.
pub fn preset_lambdas(shape: Shape) -> (f64, f64) {
    match shape {
        Shape::SwissRoll => (10.0, 100.0),
        Shape::Mammoth => (1.0, 10_000.0),
        Shape::Torus | Shape::Circle => (1.0, 100.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub shape: Shape,
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Fixed data seed; by default every training seed draws its own dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mammoth_path: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn standard(shape: Shape) -> Self {
        let s = SyntheticSpec::standard(shape, 0);
        Self { shape, total: s.total, train: s.train, val: s.val, test: s.test, data_seed: None, mammoth_path: None }
    }

    pub fn spec_for(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            shape: self.shape,
            total: self.total,
            train: self.train,
            val: self.val,
            test: self.test,
            seed: self.data_seed.unwrap_or(seed),
            mammoth_path: self.mammoth_path.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub variant: Variant,
    pub lambda_d: f64,
    pub lambda_t: f64,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Regularizer batch size; `None` uses the whole training set.
    pub n_m: Option<usize>,
    /// Number of subset sizes for the dimension losses.
    pub schedule_m: usize,
    pub seeds: Vec<u64>,
    pub hidden: usize,
    /// Overrides `hidden`, e.g. 3 for directly plottable features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    pub feature_tap: FeatureTap,
    /// Validation MSE is evaluated every this many epochs (and at the last).
    pub val_every: usize,
    /// TwoNN on test-set features every this many epochs, including epoch 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id_every: Option<usize>,
    pub twonn_truncation: f64,
    /// Keep per-epoch train/regularizer/validation losses.
    pub record_trace: bool,
}

impl ExperimentConfig {
    /// Standard 3000-point dataset, 100 hidden units, AdamW lr 1e-3,
    /// 10000 epochs, dataset λ presets and seeds `0..10`.
    pub fn new(shape: Shape, variant: Variant) -> Self {
        let (lambda_d, lambda_t) = preset_lambdas(shape);
        Self {
            dataset: DatasetConfig::standard(shape),
            variant,
            lambda_d,
            lambda_t,
            epochs: 10_000,
            lr: 1e-3,
            weight_decay: AdamWConfig::default().weight_decay,
            n_m: None,
            schedule_m: 4,
            seeds: (0..10).collect(),
            hidden: 100,
            feature_dim: None,
            feature_tap: FeatureTap::default(),
            val_every: 1,
            track_id_every: None,
            twonn_truncation: 0.1,
            record_trace: false,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.feature_dim.unwrap_or(self.hidden)
    }

    pub fn regularizer_batch(&self) -> usize {
        self.n_m.unwrap_or(self.dataset.train)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if !(self.lambda_d >= 0.0 && self.lambda_t >= 0.0) {
            return Err(Error::invalid("λ_d and λ_t must be non-negative"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate must be positive and weight decay non-negative"));
        }
        if self.hidden_width() == 0 || self.val_every == 0 || self.track_id_every == Some(0) {
            return Err(Error::invalid("hidden width, val_every and track_id_every must be positive"));
        }
        let n_m = self.regularizer_batch();
        if n_m < 2 || n_m > self.dataset.train {
            return Err(Error::invalid(format!("n_m = {n_m} must lie in [2, {}]", self.dataset.train)));
        }
        if !(0.0..1.0).contains(&self.twonn_truncation) {
            return Err(Error::invalid("TwoNN truncation must lie in [0, 1)"));
        }
        self.dataset.spec_for(0).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SeedStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdPoint {
    pub epoch: usize,
    pub dimension: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub regularizer: f64,
    /// Present on epochs where validation ran.
    pub val_mse: Option<f64>,
}

/// Deterministic per-seed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    #[serde(flatten)]
    pub status: SeedStatus,
    pub test_mse: Option<f64>,
    pub best_val_mse: Option<f64>,
    pub best_epoch: Option<usize>,
    pub final_train_mse: Option<f64>,
    /// Number of regularizer evaluations (0 for the baseline).
    pub regularizer_calls: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub id_trace: Vec<IdPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_trace: Vec<EpochRecord>,
}

impl SeedResult {
    fn failed(seed: u64, err: &Error) -> Self {
        Self {
            seed,
            status: SeedStatus::Failed { error: err.to_string() },
            test_mse: None,
            best_val_mse: None,
            best_epoch: None,
            final_train_mse: None,
            regularizer_calls: 0,
            id_trace: Vec::new(),
            loss_trace: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub epochs: usize,
    pub total_seconds: f64,
    pub epoch_seconds: f64,
    pub regularizer_seconds_per_epoch: f64,
}

/// Wall-clock and memory counters. These vary between runs and are kept out
/// of [`MetricsReport::deterministic_json`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub per_seed: Vec<SeedTiming>,
    pub mean_epoch_seconds: f64,
    pub mean_regularizer_seconds_per_epoch: f64,
    /// Process peak resident set size, when the platform exposes it.
    pub peak_rss_kib: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedResult>,
    pub completed: usize,
    pub failed_seeds: Vec<u64>,
    pub mean_test_mse: Option<f64>,
    /// Sample standard deviation (n − 1); absent with fewer than two seeds.
    pub std_test_mse: Option<f64>,
    pub regularizer_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<Efficiency>,
}

impl MetricsReport {
    pub fn is_complete(&self) -> bool {
        self.failed_seeds.is_empty()
    }

    pub fn test_mses(&self) -> Vec<f64> {
        self.seeds.iter().filter_map(|s| s.test_mse).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report without its timing section; identical configs give
    /// byte-identical output.
    pub fn deterministic_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MetricsReport { efficiency: None, ..self.clone() })?)
    }

    /// One row per seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,status,test_mse,best_val_mse,best_epoch,epoch_seconds,regularizer_seconds_per_epoch\n");
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.seeds {
            let timing = self.efficiency.as_ref().and_then(|e| e.per_seed.iter().find(|t| t.seed == s.seed));
            let status = match &s.status {
                SeedStatus::Ok => "ok",
                SeedStatus::Failed { .. } => "failed",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.seed,
                status,
                fmt_opt(s.test_mse),
                fmt_opt(s.best_val_mse),
                s.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
                fmt_opt(timing.map(|t| t.epoch_seconds)),
                fmt_opt(timing.map(|t| t.regularizer_seconds_per_epoch)),
            ));
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

/// Everything produced by one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub result: SeedResult,
    pub timing: SeedTiming,
    /// Parameters with the best validation MSE.
    pub model: Mlp,
    pub data: SyntheticData,
}

struct Partition {
    x: Array2<f64>,
    y: PointCloud,
}

fn partition(data: &SyntheticData, indices: &[usize]) -> Partition {
    let (x, y) = data.data.subset(indices);
    Partition { x, y }
}

fn features(model: &Mlp, x: ArrayView2<'_, f64>, tap: FeatureTap) -> Result<PointCloud> {
    PointCloud::new(model.forward(x, tap)?.features().clone())
}

/// Trains one seed end to end.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let data = generate(&cfg.dataset.spec_for(seed))?;
    let train = partition(&data, &data.split.train);
    let val = partition(&data, &data.split.val);
    let test = partition(&data, &data.split.test);

    let width = cfg.hidden_width();
    let mut model = Mlp::init(INPUT_DIM, width, 3, &mut stream(seed, Stream::Init))?;
    let mut opt = AdamW::new(&model, AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let mut subset_rng = stream(seed, Stream::Subsets);

    let (lambda_d, lambda_t, dim_loss) = cfg.variant.weights(cfg.lambda_d, cfg.lambda_t);
    let regularized = lambda_d > 0.0 || lambda_t > 0.0;
    let n_train = train.x.nrows();
    let n_m = cfg.regularizer_batch();
    let schedule = if lambda_d > 0.0 { Some(SubsetSchedule::fractions_of(n_m, cfg.schedule_m)?) } else { None };

    let tap = cfg.feature_tap;
    let mut best_val = mse(model.predict(val.x.view())?.view(), val.y.view())?;
    let mut best_epoch = 0;
    let mut best_model = model.clone();

    let mut id_trace = Vec::new();
    let track = |model: &Mlp, epoch: usize, trace: &mut Vec<IdPoint>| -> Result<()> {
        let z = features(model, test.x.view(), tap)?;
        trace.push(IdPoint { epoch, dimension: twonn(&z, cfg.twonn_truncation)?.dimension });
        Ok(())
    };
    if cfg.track_id_every.is_some() {
        track(&model, 0, &mut id_trace)?;
    }

    let mut loss_trace = Vec::new();
    let mut regularizer_calls = 0u64;
    let mut regularizer_seconds = 0.0;
    let mut last_train_mse = f64::NAN;
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let trace = model.forward(train.x.view(), tap)?;
        let (train_mse, grad_yhat) = mse_loss(trace.yhat.view(), train.y.view())?;
        last_train_mse = train_mse;

        let mut reg_value = 0.0;
        let grad_z = if regularized {
            let reg_start = Instant::now();
            let rows: Vec<usize> =
                if n_m == n_train { (0..n_train).collect() } else { sample_indices(n_train, n_m, &mut subset_rng)? };
            let z = PointCloud::new(trace.features().select(ndarray::Axis(0), &rows))?;
            let y = train.y.select(&rows);
            let batch = match &schedule {
                Some(s) => BatchPair::new(z, y, s.clone(), &mut subset_rng)?,
                None => BatchPair::topology_only(z, y)?,
            };
            let out = combined_loss(&batch, lambda_d, lambda_t, dim_loss)?;
            reg_value = out.value;
            let mut full = Array2::zeros((n_train, width));
            for (k, &r) in rows.iter().enumerate() {
                full.row_mut(r).assign(&out.grad_z.row(k));
            }
            regularizer_calls += 1;
            regularizer_seconds += reg_start.elapsed().as_secs_f64();
            Some(full)
        } else {
            None
        };

        let grads = model.backward(train.x.view(), &trace, grad_yhat.view(), grad_z.as_ref().map(|g| g.view()))?;
        opt.step(&mut model, &grads)?;
        if !model.is_finite() {
            return Err(Error::degenerate(format!("parameters became non-finite at epoch {epoch}")));
        }

        let mut val_mse = None;
        if epoch % cfg.val_every == 0 || epoch == cfg.epochs {
            let v = mse(model.predict(val.x.view())?.view(), val.y.view())?;
            if v < best_val {
                best_val = v;
                best_epoch = epoch;
                best_model.clone_from(&model);
            }
            val_mse = Some(v);
        }
        if cfg.record_trace {
            loss_trace.push(EpochRecord { epoch, train_mse, regularizer: reg_value, val_mse });
        }
        if let Some(k) = cfg.track_id_every {
            if epoch % k == 0 {
                track(&model, epoch, &mut id_trace)?;
            }
        }
    }
    let total_seconds = started.elapsed().as_secs_f64();

    let test_mse = mse(best_model.predict(test.x.view())?.view(), test.y.view())?;
    let result = SeedResult {
        seed,
        status: SeedStatus::Ok,
        test_mse: Some(test_mse),
        best_val_mse: Some(best_val),
        best_epoch: Some(best_epoch),
        final_train_mse: Some(last_train_mse),
        regularizer_calls,
        id_trace,
        loss_trace,
    };
    let epochs = cfg.epochs as f64;
    let timing = SeedTiming {
        seed,
        epochs: cfg.epochs,
        total_seconds,
        epoch_seconds: total_seconds / epochs,
        regularizer_seconds_per_epoch: regularizer_seconds / epochs,
    };
    Ok(SeedRun { result, timing, model: best_model, data })
}

/// Runs every seed and aggregates. Per-seed failures are recorded in the
/// report; only an invalid configuration is an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    Ok(run_experiment_detailed(cfg)?.0)
}

/// Like [`run_experiment`], also returning each successful seed's model and data.
pub fn run_experiment_detailed(cfg: &ExperimentConfig) -> Result<(MetricsReport, Vec<Option<SeedRun>>)> {
    cfg.validate()?;
    let outcomes: Vec<(u64, Result<SeedRun>)> = cfg.seeds.par_iter().map(|&seed| (seed, run_seed(cfg, seed))).collect();

    let mut seeds = Vec::with_capacity(outcomes.len());
    let mut timings = Vec::new();
    let mut runs = Vec::with_capacity(outcomes.len());
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(run) => {
                seeds.push(run.result.clone());
                timings.push(run.timing);
                runs.push(Some(run));
            }
            Err(err) => {
                seeds.push(SeedResult::failed(seed, &err));
                runs.push(None);
            }
        }
    }
    let test: Vec<f64> = seeds.iter().filter_map(|s| s.test_mse).collect();
    let (mean_test_mse, std_test_mse) = mean_std(&test);
    let failed_seeds = seeds.iter().filter(|s| s.status != SeedStatus::Ok).map(|s| s.seed).collect();
    let efficiency = Efficiency {
        mean_epoch_seconds: mean_std(&timings.iter().map(|t| t.epoch_seconds).collect::<Vec<_>>()).0.unwrap_or(0.0),
        mean_regularizer_seconds_per_epoch: mean_std(
            &timings.iter().map(|t| t.regularizer_seconds_per_epoch).collect::<Vec<_>>(),
        )
        .0
        .unwrap_or(0.0),
        per_seed: timings,
        peak_rss_kib: peak_rss_kib(),
    };
    let report = MetricsReport {
        config: cfg.clone(),
        completed: test.len(),
        regularizer_calls: seeds.iter().map(|s| s.regularizer_calls).sum(),
        seeds,
        failed_seeds,
        mean_test_mse,
        std_test_mse,
        efficiency: Some(efficiency),
    };
    Ok((report, runs))
}

/// TwoNN dimension of the test-set features every `every` epochs, per seed.
pub fn track_id(cfg: &ExperimentConfig, every: usize) -> Result<Vec<(u64, Vec<IdPoint>)>> {
    let cfg = ExperimentConfig { track_id_every: Some(every), ..cfg.clone() };
    let report = run_experiment(&cfg)?;
    Ok(report.seeds.into_iter().map(|s| (s.seed, s.id_trace)).collect())
}

/// Writes the test-set features of `model` as CSV, one row per test point:
/// `z_1..z_h` followed by the target `y_1..y_3`. Returns the row count.
pub fn dump_embeddings(model: &Mlp, data: &SyntheticData, tap: FeatureTap, path: &Path) -> Result<usize> {
    let test = partition(data, &data.split.test);
    let z = model.forward(test.x.view(), tap)?;
    let z = z.features();
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let header: Vec<String> =
        (1..=z.ncols()).map(|k| format!("z{k}")).chain((1..=3).map(|k| format!("y{k}"))).collect();
    writeln!(w, "# {}", header.join(","))?;
    for (zr, yr) in z.rows().into_iter().zip(test.y.view().rows()) {
        let line: Vec<String> = zr.iter().chain(yr.iter()).map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(z.nrows())
}

/// Per-epoch losses and ID estimates as CSV rows
/// `seed,epoch,train_mse,regularizer,val_mse,id_twonn`.
pub fn trace_csv(report: &MetricsReport) -> String {
    let mut out = String::from("seed,epoch,train_mse,regularizer,val_mse,id_twonn\n");
    for s in &report.seeds {
        let mut ids = s.id_trace.iter().peekable();
        if let Some(p) = ids.next_if(|p| p.epoch == 0) {
            out.push_str(&format!("{},0,,,,{}\n", s.seed, p.dimension));
        }
        if s.loss_trace.is_empty() {
            for p in ids {
                out.push_str(&format!("{},{},,,,{}\n", s.seed, p.epoch, p.dimension));
            }
            continue;
        }
        for rec in &s.loss_trace {
            let id = ids.next_if(|p| p.epoch == rec.epoch).map(|p| p.dimension.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.seed,
                rec.epoch,
                rec.train_mse,
                rec.regularizer,
                rec.val_mse.map(|v| v.to_string()).unwrap_or_default(),
                id
            ));
        }
    }
    out
}

/// Peak resident set size of this process in KiB (Linux only).
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|v| v.parse().ok())
}
