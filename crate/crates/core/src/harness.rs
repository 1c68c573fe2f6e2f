//! Config-driven experiment runs: train or load a model, run every
//! configured sampler, evaluate, and write a self-describing run directory.
//!
//! Run directory layout:
//!
//! | file | contents |
//! |---|---|
//! | `data.csv` | training points, header `x,y` |
//! | `model.json` | the trained or loaded model |
//! | `train_curve.csv` | `step,loss_d,loss_g` (trained models only) |
//! | `samples_<name>.csv` | evaluation samples per method, header `x,y` |
//! | `chains_<name>.csv` | `chain_id,step,z0..,x0..,d_score,alpha,accepted` (MCMC methods) |
//! | `acceptance.csv` | `checkpoint_step,method,mean_acceptance,std_acceptance,chains` (optional) |
//! | `metrics.json` | per-method [`EvalReport`]s |
//! | `summary.csv` | one row per method, see [`SUMMARY_HEADER`] |
//! | `manifest.json` | normalized config, derived seeds and artifact hashes |

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{format_f64, write_points_csv, DatasetSpec};
use crate::error::{Error, Result};
use crate::metrics::{acceptance_ratio, evaluate, EvalReport, MetricSettings, Target};
use crate::nets::GanModel;
use crate::rng::{derive_seed, normal_vec, seeded};
use crate::samplers::{drs_sample, run_chains, ChainRecord, GammaRule, LatentModel, SamplerConfig};
use crate::tensor::Array;
use crate::training::{train, write_curve_csv, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_STEPS: usize = 640;
pub const DEFAULT_DRS_BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Raw generator samples.
    Gan,
    /// Discriminator rejection sampling.
    Drs,
    /// Independent-proposal Metropolis-Hastings.
    MhGan,
    /// Latent Langevin without correction.
    Ddls,
    /// Latent Langevin with the REP acceptance step.
    Rep,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Gan => "gan",
            Self::Drs => "drs",
            Self::MhGan => "mh_gan",
            Self::Ddls => "ddls",
            Self::Rep => "rep",
        }
    }

    pub fn is_chain(self) -> bool {
        matches!(self, Self::MhGan | Self::Ddls | Self::Rep)
    }

    fn needs_tau(self) -> bool {
        matches!(self, Self::Ddls | Self::Rep)
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gan" => Ok(Self::Gan),
            "drs" => Ok(Self::Drs),
            "mh" | "mh_gan" => Ok(Self::MhGan),
            "ddls" => Ok(Self::Ddls),
            "rep" => Ok(Self::Rep),
            _ => Err(Error::InvalidArgument(format!(
                "unknown method `{s}`; expected gan, drs, mh, ddls or rep"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    /// Defaults to the method name, suffixed with `_tau<τ>` for Langevin methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub method: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
}

impl MethodSpec {
    pub fn new(method: MethodKind, tau: Option<f64>) -> Self {
        Self {
            name: None,
            method,
            tau,
            gamma: None,
            burn_in: None,
        }
    }

    pub fn label(&self) -> String {
        match (&self.name, self.tau) {
            (Some(n), _) => n.clone(),
            (None, Some(t)) if self.method.needs_tau() => format!("{}_tau{}", self.method.as_str(), format_f64(t)),
            _ => self.method.as_str().to_string(),
        }
    }

    fn errors(&self, at: &str) -> Vec<String> {
        let mut errs = Vec::new();
        match (self.method.needs_tau(), self.tau) {
            (true, None) => errs.push(format!("{at}.tau is required for {}", self.method.as_str())),
            (true, Some(t)) if !(t > 0.0 && t.is_finite()) => errs.push(format!("{at}.tau must be > 0, got {t}")),
            (false, Some(_)) => errs.push(format!("{at}.tau is only valid for ddls and rep")),
            _ => {}
        }
        if self.method != MethodKind::Drs && (self.gamma.is_some() || self.burn_in.is_some()) {
            errs.push(format!("{at}: gamma and burn_in are only valid for drs"));
        }
        if self.burn_in == Some(0) {
            errs.push(format!("{at}.burn_in must be ≥ 1"));
        }
        if let Some(GammaRule::Percentile(p)) = self.gamma {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{at}.gamma percentile must lie in [0, 1], got {p}"));
            }
        }
        let label = self.label();
        if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || "_.-".contains(c)) {
            errs.push(format!("{at}.name `{label}` may only contain ASCII letters, digits, `_`, `.` and `-`"));
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    Train(TrainConfig),
    Checkpoint(PathBuf),
}

/// Acceptance-ratio tracking over training checkpoints; requires
/// `train.checkpoint_every`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceTracking {
    #[serde(default = "d_tracking_chains")]
    pub chains: usize,
}

fn d_tracking_chains() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub model: ModelSource,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub metrics: MetricSettings,
    /// Defaults to the dataset's own distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    #[serde(default = "d_chains")]
    pub chains: usize,
    /// Chain length K, counting the initial generator sample.
    #[serde(default = "d_steps")]
    pub steps: usize,
    #[serde(default = "d_true")]
    pub write_chains: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_tracking: Option<AcceptanceTracking>,
}

fn d_chains() -> usize {
    1000
}
fn d_steps() -> usize {
    100
}
fn d_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version must be {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        match &self.dataset {
            DatasetSpec::SwissRoll { n, noise_std } => {
                if *n == 0 {
                    errs.push("dataset.n must be ≥ 1".into());
                }
                if !(*noise_std >= 0.0) {
                    errs.push("dataset.noise_std must be ≥ 0".into());
                }
            }
            DatasetSpec::Grid { n_side, spacing, std, n } => {
                if *n == 0 || *n_side == 0 {
                    errs.push("dataset.n and dataset.n_side must be ≥ 1".into());
                }
                if !(*spacing > 0.0) || !(*std > 0.0) {
                    errs.push("dataset.spacing and dataset.std must be > 0".into());
                }
            }
        }
        match &self.model {
            ModelSource::Train(t) => {
                errs.extend(t.errors());
                if t.seed != 0 {
                    errs.push("train.seed is derived from master_seed and must not be set".into());
                }
                if self.acceptance_tracking.is_some() && t.checkpoint_every.is_none() {
                    errs.push("acceptance_tracking needs train.checkpoint_every".into());
                }
            }
            ModelSource::Checkpoint(_) => {
                if self.acceptance_tracking.is_some() {
                    errs.push("acceptance_tracking needs a trained model, not a checkpoint".into());
                }
            }
        }
        if self.methods.is_empty() {
            errs.push("methods must not be empty".into());
        }
        let mut seen = BTreeMap::new();
        for (i, m) in self.methods.iter().enumerate() {
            errs.extend(m.errors(&format!("methods[{i}]")));
            if let Some(j) = seen.insert(m.label(), i) {
                errs.push(format!("methods[{i}] and methods[{j}] share the name `{}`", m.label()));
            }
        }
        if self.chains == 0 {
            errs.push("chains must be ≥ 1".into());
        }
        if self.steps == 0 || self.steps > MAX_STEPS {
            errs.push(format!("steps must lie in 1..={MAX_STEPS}, got {}", self.steps));
        }
        let ms = &self.metrics;
        for (v, name) in [
            (ms.coverage_radius_sigmas, "coverage_radius_sigmas"),
            (ms.quality_k_sigmas, "quality_k_sigmas"),
        ] {
            if !(v > 0.0) {
                errs.push(format!("metrics.{name} must be > 0"));
            }
        }
        if !(ms.box_margin >= 0.0) {
            errs.push("metrics.box_margin must be ≥ 0".into());
        }
        if let Some(Target::Grid(spec)) = &self.target {
            if let Err(e) = spec.validate() {
                errs.push(format!("target: {e}"));
            }
        }
        if matches!(&self.acceptance_tracking, Some(a) if a.chains < 2) {
            errs.push("acceptance_tracking.chains must be ≥ 2".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn target(&self) -> Result<Target> {
        if let Some(t) = &self.target {
            return Ok(t.clone());
        }
        Ok(match &self.dataset {
            DatasetSpec::SwissRoll { noise_std, .. } => Target::SwissRoll { noise_std: *noise_std },
            DatasetSpec::Grid { .. } => Target::Grid(
                self.dataset
                    .mixture()
                    .ok_or_else(|| Error::Config(vec!["dataset: invalid grid".into()]))?,
            ),
        })
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            dataset: derive_seed(self.master_seed, "dataset"),
            train: derive_seed(self.master_seed, "train"),
            methods: self
                .methods
                .iter()
                .map(|m| (m.label(), derive_seed(self.master_seed, &format!("method:{}", m.label()))))
                .collect(),
        }
    }
}

/// Parses, defaults and range-checks an experiment config. A run manifest
/// is accepted too; its embedded config is used.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Config(vec![e.to_string()]))?;
    let value = match value {
        serde_json::Value::Object(mut o) if o.contains_key("artifacts") && o.contains_key("config") => {
            o.remove("config").expect("checked")
        }
        v => v,
    };
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(vec![e.to_string()]))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Training-only job: the dataset, train config and master seed of an
/// experiment. Seeds are derived exactly as in [`run_experiment`], so both
/// produce the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub master_seed: u64,
}

/// Reads a [`TrainJob`], or takes the training part of a full experiment config.
pub fn parse_train_job(raw: &str) -> Result<TrainJob> {
    let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Config(vec![e.to_string()]))?;
    if value.get("methods").is_some() {
        let cfg = validate_config(raw)?;
        return match cfg.model {
            ModelSource::Train(train) => Ok(TrainJob {
                schema_version: cfg.schema_version,
                dataset: cfg.dataset,
                train,
                master_seed: cfg.master_seed,
            }),
            ModelSource::Checkpoint(_) => Err(Error::Config(vec!["config loads a checkpoint; nothing to train".into()])),
        };
    }
    let job: TrainJob = serde_json::from_value(value).map_err(|e| Error::Config(vec![e.to_string()]))?;
    let mut errs = job.train.errors();
    if job.schema_version != SCHEMA_VERSION {
        errs.push(format!("schema_version must be {SCHEMA_VERSION}, got {}", job.schema_version));
    }
    if job.train.seed != 0 {
        errs.push("train.seed is derived from master_seed and must not be set".into());
    }
    if errs.is_empty() {
        Ok(job)
    } else {
        Err(Error::Config(errs))
    }
}

/// Trains and writes `data.csv`, `model.json` and `train_curve.csv` into `out`.
pub fn run_training(job: &TrainJob, out: &Path) -> Result<GanModel> {
    fs::create_dir_all(out)?;
    let data = job.dataset.generate(derive_seed(job.master_seed, "dataset"))?;
    let mut t = job.train.clone();
    t.seed = derive_seed(job.master_seed, "train");
    let result = train(&data, &t)?;
    data.write_csv(fs::File::create(out.join("data.csv"))?)?;
    write_curve_csv(fs::File::create(out.join("train_curve.csv"))?, &result.curve)?;
    result.model.save(&out.join("model.json"))?;
    Ok(result.model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub dataset: u64,
    pub train: u64,
    pub methods: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrsInfo {
    pub candidates_drawn: usize,
    pub log_m: f64,
    pub gamma: f64,
    pub degenerate: bool,
}

/// Samples produced by one method; `records` holds the chains of MCMC methods.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub samples: Vec<Vec<f64>>,
    pub records: Option<Vec<ChainRecord>>,
    pub drs: Option<DrsInfo>,
}

/// Draws `n` evaluation samples with `spec`. Chain methods start every
/// chain from a generator sample and keep the final state.
pub fn sample_method<M: LatentModel + ?Sized>(
    model: &M,
    spec: &MethodSpec,
    n: usize,
    steps: usize,
    seed: u64,
    parallel: bool,
) -> Result<MethodOutput> {
    let kind = model.gan_kind();
    let chain_cfg = match spec.method {
        MethodKind::Gan => {
            let dim = model.latent_dim();
            let z = Array::matrix(n, dim, normal_vec(&mut seeded(seed), n * dim))?;
            let ev = model.evaluate(&z, false)?;
            let samples = (0..n).map(|i| ev.x.row(i).to_vec()).collect();
            return Ok(MethodOutput {
                samples,
                records: None,
                drs: None,
            });
        }
        MethodKind::Drs => {
            let out = drs_sample(
                model,
                n,
                spec.burn_in.unwrap_or(DEFAULT_DRS_BURN_IN),
                spec.gamma.unwrap_or_default(),
                seed,
                n.saturating_mul(1000),
            )?;
            if out.x.len() < n {
                warn!("DRS kept only {} of {n} samples after {} candidates", out.x.len(), out.candidates_drawn);
            }
            return Ok(MethodOutput {
                samples: out.x,
                records: None,
                drs: Some(DrsInfo {
                    candidates_drawn: out.candidates_drawn,
                    log_m: out.log_m,
                    gamma: out.gamma,
                    degenerate: out.degenerate,
                }),
            });
        }
        MethodKind::MhGan => SamplerConfig::mh_gan(kind, steps, seed),
        MethodKind::Ddls => SamplerConfig::ddls(kind, tau_of(spec)?, steps, seed),
        MethodKind::Rep => SamplerConfig::rep(kind, tau_of(spec)?, steps, seed),
    };
    let records = run_chains(model, &chain_cfg, n, parallel)?;
    let samples = records.iter().map(|r| r.last().x().to_vec()).collect();
    Ok(MethodOutput {
        samples,
        records: Some(records),
        drs: None,
    })
}

fn tau_of(spec: &MethodSpec) -> Result<f64> {
    spec.tau
        .ok_or_else(|| Error::Config(vec![format!("{}: tau is required", spec.label())]))
}

pub fn write_chains_csv<W: Write>(w: W, records: &[ChainRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let Some(first) = records.first() else {
        wr.write_record(["chain_id", "step", "d_score", "alpha", "accepted"])?;
        wr.flush()?;
        return Ok(());
    };
    let (n, m) = (first.states[0].z().len(), first.states[0].x().len());
    let mut header = vec!["chain_id".to_string(), "step".to_string()];
    header.extend((0..n).map(|i| format!("z{i}")));
    header.extend((0..m).map(|i| format!("x{i}")));
    header.extend(["d_score", "alpha", "accepted"].map(String::from));
    wr.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for (c, rec) in records.iter().enumerate() {
        for (k, s) in rec.states.iter().enumerate() {
            row.clear();
            row.push(c.to_string());
            row.push(k.to_string());
            row.extend(s.z().iter().chain(s.x()).map(|v| format_f64(*v)));
            row.push(format_f64(s.d_score()));
            match k.checked_sub(1).map(|t| &rec.transitions[t]) {
                Some(t) => {
                    row.push(format_f64(t.alpha));
                    row.push(u8::from(t.accepted).to_string());
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
            wr.write_record(&row)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "label",
    "method",
    "tau",
    "sample_count",
    "acceptance_ratio",
    "modes_covered",
    "modes_total",
    "high_quality_rate",
    "outside_box_fraction",
    "swiss_roll_mean_distance",
    "ks_x",
    "ks_y",
];

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

/// Appends one report row to a summary CSV, writing the header first when
/// the file is new or empty.
pub fn append_summary_row(path: &Path, label: &str, method: &str, tau: Option<f64>, report: &EvalReport) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut wr = csv::Writer::from_writer(file);
    if fresh {
        wr.write_record(SUMMARY_HEADER)?;
    }
    let ks = |p: &str| opt(report.ks_stats.iter().find(|k| k.projection == p).map(|k| k.statistic));
    wr.write_record([
        label.to_string(),
        method.to_string(),
        opt(tau),
        report.sample_count.to_string(),
        opt(report.acceptance_ratio),
        report.modes_covered.as_ref().map(|m| m.covered.to_string()).unwrap_or_default(),
        report.modes_covered.as_ref().map(|m| m.total.to_string()).unwrap_or_default(),
        opt(report.high_quality_rate),
        opt(report.outside_box_fraction),
        opt(report.swiss_roll_mean_distance),
        ks("x"),
        ks("y"),
    ])?;
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub label: String,
    pub method: MethodKind,
    pub tau: Option<f64>,
    pub seed: u64,
    pub report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drs: Option<DrsInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub target: Target,
    pub settings: MetricSettings,
    pub methods: Vec<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    /// Git-style blob hash: SHA-256 of `"blob <len>\0" + contents`.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seeds: Seeds,
    pub artifacts: Vec<Artifact>,
}

pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Options that do not change any artifact.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub single_thread: bool,
    /// Replaces `output_dir` from the config.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub model: GanModel,
    pub results: Vec<MethodResult>,
    pub manifest: Manifest,
}

struct RunDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl RunDir {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        debug_assert!(!name.contains('/') && !name.contains(".."));
        fs::write(self.root.join(name), bytes)?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: blob_hash(bytes),
        });
        Ok(())
    }
}

/// Executes `cfg` and writes the run directory.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let target = cfg.target()?;
    let seeds = cfg.seeds();
    let root = opts.output_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&root)?;
    let mut dir = RunDir {
        root: root.clone(),
        artifacts: Vec::new(),
    };
    let parallel = !opts.single_thread;

    let data = cfg.dataset.generate(seeds.dataset)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    dir.write("data.csv", &buf)?;

    let (model, checkpoints) = match &cfg.model {
        ModelSource::Checkpoint(path) => {
            if !path.exists() {
                return Err(Error::MissingCheckpoint(path.clone()));
            }
            (GanModel::load(path)?, Vec::new())
        }
        ModelSource::Train(t) => {
            let mut t = t.clone();
            t.seed = seeds.train;
            info!("training {:?} GAN for {} iterations", t.gan_kind, t.iterations);
            let out = train(&data, &t)?;
            let mut buf = Vec::new();
            write_curve_csv(&mut buf, &out.curve)?;
            dir.write("train_curve.csv", &buf)?;
            (out.model, out.checkpoints)
        }
    };
    dir.write("model.json", model.to_json()?.as_bytes())?;

    let mut results = Vec::new();
    for spec in &cfg.methods {
        let label = spec.label();
        let seed = seeds.methods[&label];
        info!("sampling {label}");
        let out = sample_method(&model, spec, cfg.chains, cfg.steps, seed, parallel)?;
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &out.samples)?;
        dir.write(&format!("samples_{label}.csv"), &buf)?;
        if let (Some(recs), true) = (&out.records, cfg.write_chains) {
            let mut buf = Vec::new();
            write_chains_csv(&mut buf, recs)?;
            dir.write(&format!("chains_{label}.csv"), &buf)?;
        }
        let report = evaluate(&out.samples, &target, &cfg.metrics, out.records.as_deref())?;
        if let Some(a) = report.acceptance_ratio {
            info!("{label}: acceptance ratio {a:.4}");
        }
        results.push(MethodResult {
            label,
            method: spec.method,
            tau: spec.tau,
            seed,
            report,
            drs: out.drs,
        });
    }

    if let Some(tracking) = &cfg.acceptance_tracking {
        let buf = acceptance_over_checkpoints(cfg, &checkpoints, tracking.chains, parallel)?;
        dir.write("acceptance.csv", &buf)?;
    }

    let metrics = MetricsFile {
        schema_version: SCHEMA_VERSION,
        target,
        settings: cfg.metrics,
        methods: results.clone(),
    };
    dir.write("metrics.json", serde_json::to_string_pretty(&metrics)?.as_bytes())?;

    let summary = root.join("summary.csv");
    if summary.exists() {
        fs::remove_file(&summary)?;
    }
    for r in &results {
        append_summary_row(&summary, &r.label, r.method.as_str(), r.tau, &r.report)?;
    }
    let bytes = fs::read(&summary)?;
    dir.artifacts.push(Artifact {
        file: "summary.csv".into(),
        sha256: blob_hash(&bytes),
    });

    let config_json = serde_json::to_string(cfg)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        config_hash: blob_hash(config_json.as_bytes()),
        seeds,
        artifacts: dir.artifacts.clone(),
    };
    fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        dir: root,
        model,
        results,
        manifest,
    })
}

fn acceptance_over_checkpoints(
    cfg: &ExperimentConfig,
    checkpoints: &[(usize, GanModel)],
    chains: usize,
    parallel: bool,
) -> Result<Vec<u8>> {
    let mut wr = csv::Writer::from_writer(Vec::new());
    wr.write_record(["checkpoint_step", "method", "mean_acceptance", "std_acceptance", "chains"])?;
    for (step, model) in checkpoints {
        for spec in cfg.methods.iter().filter(|m| matches!(m.method, MethodKind::MhGan | MethodKind::Rep)) {
            let label = spec.label();
            let seed = derive_seed(cfg.master_seed, &format!("acceptance:{label}:{step}"));
            let out = sample_method(model, spec, chains, cfg.steps, seed, parallel)?;
            let per: Vec<f64> = out
                .records
                .as_deref()
                .unwrap_or_default()
                .iter()
                .filter_map(acceptance_ratio)
                .collect();
            let (mean, sd) = mean_std(&per);
            wr.write_record([step.to_string(), label, opt(mean), opt(sd), per.len().to_string()])?;
        }
    }
    wr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.len() < 2 {
        return (v.first().copied(), None);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (Some(m), Some(var.sqrt()))
}

/// Files listed in `manifest` whose contents in `dir` no longer hash to the
/// recorded value (missing files included).
pub fn artifact_mismatches(manifest: &Manifest, dir: &Path) -> Vec<String> {
    manifest
        .artifacts
        .iter()
        .filter(|a| fs::read(dir.join(&a.file)).map(|b| blob_hash(&b) != a.sha256).unwrap_or(true))
        .map(|a| a.file.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::GanKind;

    fn minimal() -> String {
        r#"{
            "schema_version": 1,
            "dataset": {"kind": "grid", "n_side": 3, "n": 500},
            "model": {"train": {"gan_kind": "wasserstein", "iterations": 3, "batch_size": 16,
                                "arch": {"latent_dim": 2, "hidden": [8]}}},
            "methods": [{"method": "gan"}, {"method": "rep", "tau": 0.01}],
            "output_dir": "unused",
            "master_seed": 7
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = validate_config(&minimal()).unwrap();
        assert_eq!(cfg.chains, 1000);
        assert_eq!(cfg.steps, 100);
        assert!(cfg.write_chains);
        assert_eq!(cfg.metrics, MetricSettings::default());
        assert_eq!(cfg.methods[1].label(), "rep_tau0.01");
        match cfg.target().unwrap() {
            Target::Grid(spec) => assert_eq!(spec.centers.len(), 9),
            t => panic!("{t:?}"),
        }
    }

    #[test]
    fn negative_tau_names_the_field() {
        let raw = minimal().replace("\"tau\": 0.01", "\"tau\": -1");
        match validate_config(&raw) {
            Err(Error::Config(errs)) => assert!(errs.iter().any(|e| e.contains("methods[1].tau")), "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let raw = minimal().replace(r#"{"method": "gan"}"#, r#"{"method": "rep", "tau": 0.01}"#);
        match validate_config(&raw) {
            Err(Error::Config(errs)) => assert!(errs.iter().any(|e| e.contains("share the name")), "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let raw = minimal().replace("\"master_seed\": 7", "\"master_seed\": 7, \"chain\": 3");
        assert!(matches!(validate_config(&raw), Err(Error::Config(_))));
        let raw = minimal().replace("\"iterations\": 3", "\"iteration\": 3");
        assert!(matches!(validate_config(&raw), Err(Error::Config(_))));
    }

    #[test]
    fn misc_validation() {
        for (from, to, needle) in [
            ("\"schema_version\": 1", "\"schema_version\": 2", "schema_version"),
            (r#"{"method": "gan"}"#, r#"{"method": "gan", "tau": 1}"#, "only valid"),
            (r#""tau": 0.01}"#, r#""tau": 0.01, "name": "../x"}"#, "may only contain"),
            ("\"master_seed\": 7", "\"master_seed\": 7, \"steps\": 641", "steps"),
            ("\"batch_size\": 16", "\"batch_size\": 16, \"seed\": 3", "train.seed"),
        ] {
            let raw = minimal().replace(from, to);
            match validate_config(&raw) {
                Err(Error::Config(errs)) => assert!(errs.iter().any(|e| e.contains(needle)), "{needle}: {errs:?}"),
                other => panic!("{needle}: {other:?}"),
            }
        }
    }

    #[test]
    fn chains_csv_layout() {
        let model = GanModel::with_hidden(GanKind::Wasserstein, 2, 2, &[4], 1).unwrap();
        let recs = run_chains(&model, &SamplerConfig::rep(GanKind::Wasserstein, 0.1, 3, 5), 2, false).unwrap();
        let mut buf = Vec::new();
        write_chains_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "chain_id,step,z0,z1,x0,x1,d_score,alpha,accepted");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[1].starts_with("0,0,") && lines[1].ends_with(",,"));
        let last: Vec<&str> = lines[6].split(',').collect();
        assert_eq!(&last[..2], &["1", "2"]);
        assert!(last[8] == "0" || last[8] == "1");
    }

    #[test]
    fn blob_hash_matches_git_sha256_objects() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            blob_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn summary_rows_append_under_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let report = EvalReport {
            sample_count: 3,
            acceptance_ratio: Some(0.5),
            modes_covered: None,
            high_quality_rate: None,
            outside_box_fraction: None,
            swiss_roll_mean_distance: Some(0.1),
            ks_stats: vec![],
        };
        append_summary_row(&p, "a", "rep", Some(0.01), &report).unwrap();
        append_summary_row(&p, "b", "gan", None, &report).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().nth(2).unwrap(), "b,gan,,3,0.5,,,,,0.1,,");
    }
}
