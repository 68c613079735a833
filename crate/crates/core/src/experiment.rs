//! Experiment specs, per-arm runs, metrics CSV and manifests.
//!
//! A spec is a TOML file with shared `[dataset]` and `[defaults]` tables and
//! one `[[arm]]` table per configuration. Any key in `[defaults]` can be
//! overridden inside an arm. `configs/compare.toml` in this crate is a
//! complete, commented spec.
//!
//! Output layout, per arm:
//!
//! ```text
//! <out>/<arm>/metrics.csv     round,train_loss,test_accuracy,epsilon_spent,sampled_clients
//! <out>/<arm>/manifest.json   resolved config, accounting, flattening order, ...
//! ```
//!
//! Files are written to a temporary name and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant;
use crate::data::{self, Dataset};
use crate::exec::Execution;
use crate::federation::{
    self, AccountingPlan, FederationConfig, MechanismKind, RoundMetrics, Simulator,
};
use crate::haar;
use crate::mechanism::ClippingPolicy;
use crate::models::OptimizerConfig;

pub const CSV_HEADER: &str = "round,train_loss,test_accuracy,epsilon_spent,sampled_clients";

#[derive(Debug, Error)]
pub enum ExperimentError {
    /// Malformed or invalid spec; nothing has been written.
    #[error("spec error: {0}")]
    Spec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad metrics file {path}: {reason}")]
    Metrics { path: String, reason: String },
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Federation(#[from] federation::FederationError),
    #[error(transparent)]
    Accountant(#[from] accountant::AccountantError),
}

impl ExperimentError {
    /// Process exit code: 1 for spec errors, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Spec(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        train: usize,
        test: usize,
        #[serde(default = "default_proxy")]
        proxy: usize,
        dim: usize,
        classes: usize,
        spread: f64,
        /// Defaults to the experiment seed.
        seed: Option<u64>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `n` examples.
        train_limit: Option<usize>,
        test_limit: Option<usize>,
        #[serde(default = "default_proxy")]
        proxy: usize,
    },
}

fn default_proxy() -> usize {
    100
}

/// Clipping as written in a spec: a number, a list (per layer), `"inf"` or
/// `"median"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClipSetting {
    Bound(f64),
    PerLayer(Vec<f64>),
    Named(String),
}

/// Arm-level settings; every field may also appear in `[defaults]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSettings {
    pub mechanism: Option<MechanismKind>,
    pub clients: Option<usize>,
    pub client_sampling: Option<f64>,
    pub rounds: Option<usize>,
    pub local_iterations: Option<usize>,
    pub lot_size: Option<usize>,
    pub hidden_layers: Option<Vec<usize>>,
    pub clip: Option<ClipSetting>,
    /// Multiplier applied to the injected noise.
    pub noise_multiplier: Option<f64>,
    /// Vanilla-equivalent multiplier; wavelet arms derive their injected
    /// multiplier from it so all arms with the same value spend the same ε.
    pub effective_noise_multiplier: Option<f64>,
    pub optimizer: Option<OptimizerConfig>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
}

impl ArmSettings {
    fn or(self, d: &ArmSettings) -> ArmSettings {
        let d = d.clone();
        ArmSettings {
            mechanism: self.mechanism.or(d.mechanism),
            clients: self.clients.or(d.clients),
            client_sampling: self.client_sampling.or(d.client_sampling),
            rounds: self.rounds.or(d.rounds),
            local_iterations: self.local_iterations.or(d.local_iterations),
            lot_size: self.lot_size.or(d.lot_size),
            hidden_layers: self.hidden_layers.or(d.hidden_layers),
            clip: self.clip.or(d.clip),
            noise_multiplier: self.noise_multiplier.or(d.noise_multiplier),
            effective_noise_multiplier: self
                .effective_noise_multiplier
                .or(d.effective_noise_multiplier),
            optimizer: self.optimizer.or(d.optimizer),
            delta: self.delta.or(d.delta),
            seed: self.seed.or(d.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub name: String,
    #[serde(flatten)]
    pub settings: ArmSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub defaults: ArmSettings,
    #[serde(rename = "arm")]
    pub arms: Vec<ArmSpec>,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| ExperimentError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Spec(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            ExperimentError::Spec(m) => ExperimentError::Spec(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Static checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let spec_err = |m: String| Err(ExperimentError::Spec(m));
        if self.arms.is_empty() {
            return spec_err("at least one [[arm]] is required".into());
        }
        for (i, arm) in self.arms.iter().enumerate() {
            if arm.name.is_empty()
                || arm.name == "."
                || arm.name == ".."
                || arm.name.contains(['/', '\\'])
            {
                return spec_err(format!(
                    "arm name {:?} is not a valid directory name",
                    arm.name
                ));
            }
            if self.arms[..i].iter().any(|a| a.name == arm.name) {
                return spec_err(format!("duplicate arm name {:?}", arm.name));
            }
            let s = arm.settings.clone().or(&self.defaults);
            let mech = s.mechanism.ok_or_else(|| {
                ExperimentError::Spec(format!("arm {:?}: missing mechanism", arm.name))
            })?;
            for (key, present) in [
                ("clients", s.clients.is_some()),
                ("rounds", s.rounds.is_some()),
                ("local_iterations", s.local_iterations.is_some()),
                ("lot_size", s.lot_size.is_some()),
                ("optimizer", s.optimizer.is_some()),
            ] {
                if !present {
                    return spec_err(format!("arm {:?}: missing {key}", arm.name));
                }
            }
            if mech.is_private() {
                if s.clip.is_none() {
                    return spec_err(format!("arm {:?}: private mechanisms need clip", arm.name));
                }
                match (s.noise_multiplier, s.effective_noise_multiplier) {
                    (None, None) => {
                        return spec_err(format!(
                            "arm {:?}: set noise_multiplier or effective_noise_multiplier",
                            arm.name
                        ))
                    }
                    (Some(_), Some(_)) if arm.settings.noise_multiplier.is_some()
                        == arm.settings.effective_noise_multiplier.is_some() =>
                    {
                        return spec_err(format!(
                            "arm {:?}: noise_multiplier and effective_noise_multiplier are exclusive",
                            arm.name
                        ))
                    }
                    _ => {}
                }
            }
            if let Some(ClipSetting::Named(n)) = &s.clip {
                if n != "median" && n != "inf" {
                    return spec_err(format!(
                        "arm {:?}: clip must be a number, a list, \"inf\" or \"median\", got {n:?}",
                        arm.name
                    ));
                }
            }
        }
        if let DatasetSpec::Blobs { train, test, .. } = self.dataset {
            if train == 0 || test == 0 {
                return spec_err("dataset train and test sizes must be positive".into());
            }
        }
        Ok(())
    }
}

/// Train, test and clip-calibration data.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub proxy: Dataset,
}

pub fn load_data(spec: &DatasetSpec, experiment_seed: u64) -> Result<LoadedData> {
    match spec {
        DatasetSpec::Blobs {
            train,
            test,
            proxy,
            dim,
            classes,
            spread,
            seed,
        } => {
            let all = data::synthetic_blobs(
                train + test + proxy,
                *dim,
                *classes,
                *spread,
                seed.unwrap_or(experiment_seed),
            )?;
            let (train_set, rest) = all.split_at(*train);
            let (test_set, proxy_set) = rest.split_at(*test);
            Ok(LoadedData {
                train: train_set,
                test: test_set,
                proxy: proxy_set,
            })
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
            proxy,
        } => {
            let mut train = data::load_idx(train_images, train_labels)?;
            let mut test = data::load_idx(test_images, test_labels)?;
            if let Some(n) = train_limit {
                train = train.prefix(*n);
            }
            if let Some(n) = test_limit {
                test = test.prefix(*n);
            }
            let classes = train.class_count().max(test.class_count());
            let relabel = |d: Dataset| {
                Dataset::new(d.features().to_vec(), d.dim(), d.labels().to_vec(), classes)
            };
            let train = relabel(train)?;
            let test = relabel(test)?;
            let proxy = test.prefix(*proxy);
            Ok(LoadedData { train, test, proxy })
        }
    }
}

/// How the clipping bound of an arm was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipResolution {
    pub source: String,
    pub policy: ClippingPolicy,
    pub proxy_examples: Option<usize>,
}

/// One arm with every setting resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedArm {
    pub name: String,
    pub config: FederationConfig,
    pub clip: ClipResolution,
}

pub fn resolve_arm(spec: &ExperimentSpec, arm: &ArmSpec, data: &LoadedData) -> Result<ResolvedArm> {
    let s = arm.settings.clone().or(&spec.defaults);
    let missing = |k: &str| ExperimentError::Spec(format!("arm {:?}: missing {k}", arm.name));
    let mechanism = s.mechanism.ok_or_else(|| missing("mechanism"))?;
    let hidden_layers = s.hidden_layers.clone().unwrap_or_default();
    let classes = data.train.class_count().max(data.test.class_count());

    let mut config = FederationConfig {
        total_clients: s.clients.ok_or_else(|| missing("clients"))?,
        client_sampling: s.client_sampling.unwrap_or(1.0),
        rounds: s.rounds.ok_or_else(|| missing("rounds"))?,
        local_iterations: s
            .local_iterations
            .ok_or_else(|| missing("local_iterations"))?,
        lot_size: s.lot_size.ok_or_else(|| missing("lot_size"))?,
        hidden_layers,
        clip: ClippingPolicy::Flat(f64::INFINITY),
        noise_multiplier: 0.0,
        mechanism,
        optimizer: s.optimizer.ok_or_else(|| missing("optimizer"))?,
        delta: s.delta.unwrap_or(1e-5),
        seed: s.seed.unwrap_or(spec.seed),
    };

    let param_count = config.architecture(data.train.dim(), classes).param_count();
    let m = haar::padded_len(param_count);
    if mechanism.is_private() {
        config.noise_multiplier = match (s.noise_multiplier, s.effective_noise_multiplier) {
            (Some(z), _) if arm.settings.effective_noise_multiplier.is_none() => z,
            (_, Some(0.0)) => 0.0,
            (_, Some(eff)) if mechanism.is_wavelet() => {
                accountant::haar_noise_multiplier_for(eff, m)?
            }
            (_, Some(eff)) => eff,
            (Some(z), None) => z,
            (None, None) => unreachable!("validated"),
        };
    }

    let clip = match s.clip.clone() {
        None => ClipResolution {
            source: "none".into(),
            policy: ClippingPolicy::Flat(f64::INFINITY),
            proxy_examples: None,
        },
        Some(ClipSetting::Bound(c)) => ClipResolution {
            source: "fixed".into(),
            policy: ClippingPolicy::Flat(c),
            proxy_examples: None,
        },
        Some(ClipSetting::PerLayer(cs)) => ClipResolution {
            source: "fixed".into(),
            policy: ClippingPolicy::PerLayer(cs),
            proxy_examples: None,
        },
        Some(ClipSetting::Named(n)) if n == "inf" => ClipResolution {
            source: "none".into(),
            policy: ClippingPolicy::Flat(f64::INFINITY),
            proxy_examples: None,
        },
        Some(ClipSetting::Named(_)) => {
            if data.proxy.is_empty() {
                return Err(ExperimentError::Spec(format!(
                    "arm {:?}: median clipping needs a non-empty proxy set",
                    arm.name
                )));
            }
            let model = federation::initial_model(&config, data.train.dim(), classes)?;
            let c = federation::median_gradient_norm(
                &model,
                &data.proxy,
                mechanism,
                Execution::default(),
            )?;
            ClipResolution {
                source: "median".into(),
                policy: ClippingPolicy::Flat(c),
                proxy_examples: Some(data.proxy.len()),
            }
        }
    };
    config.clip = clip.policy.clone();
    config
        .validate()
        .map_err(|e| ExperimentError::Spec(format!("arm {:?}: {e}", arm.name)))?;
    Ok(ResolvedArm {
        name: arm.name.clone(),
        config,
        clip,
    })
}

/// Everything needed to reproduce an arm from scratch.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub arm: String,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub dataset_sizes: DatasetSizes,
    pub config: FederationConfig,
    pub clip: ClipResolution,
    pub flattening_order: Vec<LayerEntry>,
    pub parameter_count: usize,
    pub accounting: AccountingPlan,
    pub accountant: AccountantInfo,
    /// Largest per-element variance of the injected noise, in units of the
    /// squared sensitivity.
    pub injected_noise_variance: f64,
    pub final_epsilon: Option<f64>,
    pub csv_columns: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub test: usize,
    pub proxy: usize,
    pub dim: usize,
    pub classes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct AccountantInfo {
    pub method: String,
    pub orders: Vec<f64>,
    pub sampling: String,
    pub notes: Vec<String>,
}

fn accountant_info(mechanism: MechanismKind) -> AccountantInfo {
    let mut notes = Vec::new();
    match mechanism {
        MechanismKind::DpSgd | MechanismKind::DpSgdWav => notes.push(
            "each local step is one Poisson-subsampled Gaussian step with q = lot_size / smallest client; \
             client-level sampling is not combined into the bound"
                .to_string(),
        ),
        MechanismKind::DpFedAvg | MechanismKind::DpFedAvgWav => notes.push(
            "one Poisson-subsampled Gaussian step per round with q = client_sampling; \
             rounds with no sampled clients are still charged"
                .to_string(),
        ),
        MechanismKind::NonPrivate => notes.push("not accounted; epsilon reported as inf".to_string()),
    }
    if mechanism.is_wavelet() {
        notes.push(
            "wavelet noise is charged with effective multiplier sigma_haar * sqrt((2 + log2 m) / 2)"
                .to_string(),
        );
    }
    AccountantInfo {
        method: "rdp_subsampled_gaussian".into(),
        orders: accountant::default_orders(),
        sampling: "poisson".into(),
        notes,
    }
}

/// Output of one arm.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub name: String,
    pub metrics: Vec<RoundMetrics>,
    pub manifest: Manifest,
}

/// Runs one resolved arm without touching the filesystem.
pub fn run_arm(
    spec: &ExperimentSpec,
    arm: &ResolvedArm,
    data: &LoadedData,
    exec: Execution,
) -> Result<ArmResult> {
    let mut sim = Simulator::new(
        arm.config.clone(),
        data.train.clone(),
        data.test.clone(),
        exec,
    )?;
    let layout = sim.params().layout();
    let plan = sim.plan().clone();
    let metrics = sim.run()?;
    let parameter_count = sim.params().len();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        arm: arm.name.clone(),
        seed: arm.config.seed,
        dataset: spec.dataset.clone(),
        dataset_sizes: DatasetSizes {
            train: data.train.len(),
            test: data.test.len(),
            proxy: data.proxy.len(),
            dim: data.train.dim(),
            classes: data.train.class_count().max(data.test.class_count()),
        },
        config: arm.config.clone(),
        clip: arm.clip.clone(),
        flattening_order: layout
            .into_iter()
            .map(|(name, len)| LayerEntry { name, len })
            .collect(),
        parameter_count,
        accounting: plan,
        accountant: accountant_info(arm.config.mechanism),
        injected_noise_variance: federation::injected_noise_variance(
            arm.config.mechanism,
            arm.config.noise_multiplier,
            parameter_count,
        )?,
        final_epsilon: metrics
            .last()
            .map(|m| m.epsilon_spent)
            .filter(|e| e.is_finite()),
        csv_columns: CSV_HEADER.into(),
    };
    Ok(ArmResult {
        name: arm.name.clone(),
        metrics,
        manifest,
    })
}

/// Renders metrics in the fixed CSV schema.
pub fn metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut s = String::with_capacity(64 * (metrics.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for m in metrics {
        writeln!(
            s,
            "{},{},{},{},{}",
            m.round, m.train_loss, m.test_accuracy, m.epsilon_spent, m.sampled_clients
        )
        .unwrap();
    }
    s
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_arm(out_dir: &Path, result: &ArmResult) -> Result<PathBuf> {
    let dir = out_dir.join(&result.name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let manifest = serde_json::to_string_pretty(&result.manifest).expect("manifest serializes");
    write_atomic(&dir.join("manifest.json"), manifest.as_bytes())?;
    write_atomic(
        &dir.join("metrics.csv"),
        metrics_csv(&result.metrics).as_bytes(),
    )?;
    Ok(dir)
}

/// Parses, resolves and runs every arm, writing outputs under `out` (or
/// the spec's `out_dir`, or `runs/`). With `parallel_arms`, arms run
/// concurrently.
pub fn run_experiment(
    spec_path: impl AsRef<Path>,
    out: Option<&Path>,
    parallel_arms: bool,
) -> Result<Vec<ArmResult>> {
    let spec = ExperimentSpec::from_path(spec_path)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let data = load_data(&spec.dataset, spec.seed)?;
    let arms = spec
        .arms
        .iter()
        .map(|a| resolve_arm(&spec, a, &data))
        .collect::<Result<Vec<_>>>()?;

    let arm_exec = if parallel_arms {
        Execution::Parallel
    } else {
        Execution::Sequential
    };
    let results = arm_exec
        .map(&arms, |arm| {
            log::info!("running arm {}", arm.name);
            run_arm(&spec, arm, &data, Execution::default())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for r in &results {
        let dir = write_arm(&out_dir, r)?;
        log::info!("wrote {}", dir.display());
    }
    Ok(results)
}

/// Final-round summary of one metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub name: String,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub final_epsilon: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let bad = |reason: String| ExperimentError::Metrics {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(bad("missing or unexpected header".into())),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("row {}: expected 5 columns", i + 1)));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("row {}: {e}", i + 1)))
            };
            let int = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| bad(format!("row {}: {e}", i + 1)))
            };
            Ok(RoundMetrics {
                round: int(f[0])?,
                train_loss: num(f[1])?,
                test_accuracy: num(f[2])?,
                epsilon_spent: num(f[3])?,
                sampled_clients: int(f[4])?,
            })
        })
        .collect()
}

/// Locates metrics files: `dir/metrics.csv`, a CSV path, or every
/// `dir/*/metrics.csv` of an experiment output directory.
fn metrics_files(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let name_of = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    };
    if path.is_file() {
        let name = path.parent().map(name_of).unwrap_or_else(|| name_of(path));
        return Ok(vec![(name, path.to_path_buf())]);
    }
    let direct = path.join("metrics.csv");
    if direct.is_file() {
        return Ok(vec![(name_of(path), direct)]);
    }
    let mut found = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for e in entries {
            let f = e.join("metrics.csv");
            if f.is_file() {
                found.push((name_of(&e), f));
            }
        }
    }
    if found.is_empty() {
        return Err(ExperimentError::Metrics {
            path: path.display().to_string(),
            reason: "no metrics.csv found".into(),
        });
    }
    Ok(found)
}

pub fn summarize(paths: &[PathBuf]) -> Result<Vec<ArmSummary>> {
    let mut out = Vec::new();
    for p in paths {
        for (name, file) in metrics_files(p)? {
            let metrics = read_metrics(&file)?;
            let last = metrics.last().ok_or_else(|| ExperimentError::Metrics {
                path: file.display().to_string(),
                reason: "no data rows".into(),
            })?;
            out.push(ArmSummary {
                name,
                rounds: metrics.len(),
                final_accuracy: last.test_accuracy,
                final_epsilon: last.epsilon_spent,
            });
        }
    }
    Ok(out)
}

/// Accuracy difference `b - a` in percentage points.
pub fn delta_pp(a: &ArmSummary, b: &ArmSummary) -> f64 {
    100.0 * (b.final_accuracy - a.final_accuracy)
}

/// Final accuracy per arm and pairwise deltas, as printable text.
pub fn report_compare(paths: &[PathBuf]) -> Result<String> {
    let arms = summarize(paths)?;
    if arms.len() < 2 {
        return Err(ExperimentError::Metrics {
            path: paths
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(" "),
            reason: format!("need at least two arms to compare, found {}", arms.len()),
        });
    }
    let width = arms.iter().map(|a| a.name.len()).max().unwrap_or(3).max(3);
    let mut s = String::new();
    writeln!(
        s,
        "{:<width$}  {:>6}  {:>9}  {:>10}",
        "arm", "rounds", "accuracy", "epsilon"
    )
    .unwrap();
    for a in &arms {
        writeln!(
            s,
            "{:<width$}  {:>6}  {:>9.4}  {:>10.4}",
            a.name, a.rounds, a.final_accuracy, a.final_epsilon
        )
        .unwrap();
    }
    writeln!(s).unwrap();
    writeln!(
        s,
        "pairwise accuracy deltas (column minus row, percentage points)"
    )
    .unwrap();
    for (i, a) in arms.iter().enumerate() {
        for b in &arms[i + 1..] {
            writeln!(s, "{} -> {}: {:+.1} pp", a.name, b.name, delta_pp(a, b)).unwrap();
        }
    }
    Ok(s)
}
