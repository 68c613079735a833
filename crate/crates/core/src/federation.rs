//! Deterministic single-process federated learning simulator.
//!
//! One round is: sample clients (Poisson, rate `q_c`), run local training on
//! each sampled client from the broadcast parameters, aggregate with weights
//! `d_k / (q_c · d)`, optionally add server noise, charge the accountant and
//! evaluate.
//!
//! Five mechanisms are supported:
//!
//! | mechanism        | where noise goes                                        | accounted as            |
//! |------------------|---------------------------------------------------------|-------------------------|
//! | `NonPrivate`     | nowhere                                                 | not accounted (ε = ∞)   |
//! | `DpSgd`          | `N(0, σ² S_f²)` on each lot's clipped gradient sum      | `q = L_n/d_k`, N per round |
//! | `DpSgdWav`       | `N(0, (σC/W)²)` on the summed, clipped Haar coefficients | same, effective σ       |
//! | `DpFedAvg`       | `N(0, (zS_f/(q_c d))²)` on the aggregated parameters    | `q = q_c`, 1 per round  |
//! | `DpFedAvgWav`    | wavelet noise with the same σ on the aggregate          | same, effective z       |
//!
//! Wavelet variants are accounted with the vanilla-equivalent multiplier
//! `σ_haar · sqrt((2 + log2 m)/2)`, `m` being the padded parameter count.
//!
//! Each client owns generators derived from `(seed, round, client)`, so a
//! round's result does not depend on whether clients run in parallel.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accountant::{self, AccountantError, MechanismParams, RdpLedger};
use crate::data::Dataset;
use crate::exec::Execution;
use crate::haar::{self, HaarError};
use crate::mechanism::{
    self, clip, noise_std, sensitivity, ClippingPolicy, LayeredVector, MechanismError, NoiseScheme,
    NoiseSpec,
};
use crate::models::{Architecture, Example, Model, ModelError, OptimizerConfig, OptimizerState};
use crate::rng::{self, tag, Rng};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{examples} examples cannot be split across {clients} clients")]
    TooFewExamples { examples: usize, clients: usize },
    #[error("lot size {lot} exceeds client dataset of {available} examples")]
    LotTooLarge { lot: usize, available: usize },
    #[error("no client updates to aggregate")]
    NoUpdates,
    #[error("server noise is only defined for DP-FedAvg mechanisms, not {0:?}")]
    WrongMechanism(MechanismKind),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Accountant(#[from] AccountantError),
    #[error(transparent)]
    Haar(#[from] HaarError),
}

pub type Result<T> = std::result::Result<T, FederationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    NonPrivate,
    DpSgd,
    DpSgdWav,
    DpFedAvg,
    DpFedAvgWav,
}

impl MechanismKind {
    pub fn is_private(self) -> bool {
        self != MechanismKind::NonPrivate
    }

    pub fn is_wavelet(self) -> bool {
        matches!(self, MechanismKind::DpSgdWav | MechanismKind::DpFedAvgWav)
    }

    /// Noise injected on clients (sample level) rather than on the server.
    pub fn is_sample_level(self) -> bool {
        matches!(self, MechanismKind::DpSgd | MechanismKind::DpSgdWav)
    }

    pub fn is_user_level(self) -> bool {
        matches!(self, MechanismKind::DpFedAvg | MechanismKind::DpFedAvgWav)
    }

    pub fn scheme(self) -> NoiseScheme {
        if self.is_wavelet() {
            NoiseScheme::Wavelet
        } else {
            NoiseScheme::Standard
        }
    }
}

/// Everything needed to reproduce one simulated training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub total_clients: usize,
    pub client_sampling: f64,
    pub rounds: usize,
    pub local_iterations: usize,
    pub lot_size: usize,
    /// Hidden layer widths; empty means multinomial logistic regression.
    pub hidden_layers: Vec<usize>,
    pub clip: ClippingPolicy,
    /// σ for `DpSgd`, σ_haar for `DpSgdWav`, z for `DpFedAvg`, z_haar for
    /// `DpFedAvgWav`. Ignored for `NonPrivate`.
    pub noise_multiplier: f64,
    pub mechanism: MechanismKind,
    pub optimizer: OptimizerConfig,
    pub delta: f64,
    pub seed: u64,
}

impl FederationConfig {
    pub fn architecture(&self, dim: usize, classes: usize) -> Architecture {
        if self.hidden_layers.is_empty() {
            Architecture::LogisticRegression { dim, classes }
        } else {
            let mut sizes = vec![dim];
            sizes.extend(&self.hidden_layers);
            sizes.push(classes);
            Architecture::Mlp { sizes }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FederationError::Config(m.into()));
        if self.total_clients == 0 {
            return bad("total_clients must be positive");
        }
        if !(self.client_sampling > 0.0 && self.client_sampling <= 1.0) {
            return bad("client_sampling must lie in (0, 1]");
        }
        if self.rounds == 0 || self.local_iterations == 0 || self.lot_size == 0 {
            return bad("rounds, local_iterations and lot_size must be positive");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return bad("noise_multiplier must be finite and non-negative");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        self.clip.validate()?;
        if self.mechanism == MechanismKind::DpSgdWav
            && !matches!(self.clip, ClippingPolicy::Flat(_))
        {
            return bad("dp_sgd_wav clips wavelet coefficients and needs a flat clipping bound");
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// One client's local shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub index: usize,
    pub data: Dataset,
}

impl ClientDataset {
    /// Cardinality `d_k`.
    pub fn size(&self) -> usize {
        self.data.len()
    }
}

/// Per-round outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub epsilon_spent: f64,
    pub sampled_clients: usize,
}

/// Shuffles and splits into `clients` near-equal shards; the first
/// `n % clients` shards get one extra example.
pub fn partition_iid(data: &Dataset, clients: usize, seed: u64) -> Result<Vec<ClientDataset>> {
    if clients == 0 || data.len() < clients {
        return Err(FederationError::TooFewExamples {
            examples: data.len(),
            clients,
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::stream(seed, &[tag::PARTITION]);
    for i in (1..order.len()).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }
    let base = data.len() / clients;
    let extra = data.len() % clients;
    let mut start = 0;
    Ok((0..clients)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let shard = data.subset(&order[start..start + len]);
            start += len;
            ClientDataset {
                index: k,
                data: shard,
            }
        })
        .collect())
}

/// Independent Bernoulli(`q_c`) inclusion per client, in index order.
pub fn sample_clients(total: usize, q_c: f64, rng: &mut Rng) -> Vec<usize> {
    (0..total)
        .filter(|_| q_c >= 1.0 || rng.random::<f64>() < q_c)
        .collect()
}

/// Poisson lot: each example included with probability `q`.
fn sample_lot(size: usize, q: f64, rng: &mut Rng) -> Vec<usize> {
    (0..size)
        .filter(|_| q >= 1.0 || rng.random::<f64>() < q)
        .collect()
}

/// Noised gradient estimate for one lot, already divided by `lot_size`.
fn private_lot_gradient(
    grads: &[LayeredVector],
    template: &LayeredVector,
    cfg: &FederationConfig,
    noise_rng: &mut Rng,
) -> Result<LayeredVector> {
    let inv_lot = 1.0 / cfg.lot_size as f64;
    match cfg.mechanism {
        MechanismKind::NonPrivate => {
            let mut sum = template.zeros_like();
            for g in grads {
                sum.add_assign(g)?;
            }
            sum.scale(inv_lot);
            Ok(sum)
        }
        MechanismKind::DpFedAvg | MechanismKind::DpFedAvgWav => {
            let mut sum = template.zeros_like();
            for g in grads {
                sum.add_assign(&clip(g, &cfg.clip)?)?;
            }
            sum.scale(inv_lot);
            Ok(sum)
        }
        MechanismKind::DpSgd => {
            let mut sum = template.zeros_like();
            for g in grads {
                sum.add_assign(&clip(g, &cfg.clip)?)?;
            }
            let std = noise_std(cfg.noise_multiplier, sensitivity(&cfg.clip));
            let noise = mechanism::gaussian_noise(sum.len(), std, noise_rng)?;
            for (s, n) in sum.iter_values_mut().zip(noise) {
                *s += n;
            }
            sum.scale(inv_lot);
            Ok(sum)
        }
        MechanismKind::DpSgdWav => {
            let bound = sensitivity(&cfg.clip);
            let mut coeff_sum = haar::haar_forward(&template.zeros_like().flatten())?;
            for g in grads {
                let mut d = haar::haar_forward(&g.flatten())?;
                mechanism::clip_flat(d.coeffs_mut(), bound)?;
                for (s, c) in coeff_sum.coeffs_mut().iter_mut().zip(d.coeffs()) {
                    *s += c;
                }
            }
            mechanism::perturb_coefficients(
                &mut coeff_sum,
                noise_std(cfg.noise_multiplier, bound),
                noise_rng,
            )?;
            let mut flat = haar::haar_inverse(&coeff_sum);
            flat.iter_mut().for_each(|v| *v *= inv_lot);
            Ok(template.unflatten_like(&flat)?)
        }
    }
}

/// Runs `local_iterations` lot steps on one client starting from `params`.
#[allow(clippy::too_many_arguments)]
pub fn client_local_train(
    params: &LayeredVector,
    arch: &Architecture,
    client: &ClientDataset,
    cfg: &FederationConfig,
    lot_rng: &mut Rng,
    noise_rng: &mut Rng,
    exec: Execution,
) -> Result<LayeredVector> {
    let d_k = client.size();
    if cfg.lot_size > d_k {
        return Err(FederationError::LotTooLarge {
            lot: cfg.lot_size,
            available: d_k,
        });
    }
    let q = cfg.lot_size as f64 / d_k as f64;
    let mut model = Model::with_params(arch.clone(), params.clone())?;
    let mut opt = OptimizerState::new(cfg.optimizer, params)?;
    for _ in 0..cfg.local_iterations {
        let lot = sample_lot(d_k, q, lot_rng);
        let batch: Vec<Example> = lot.iter().map(|&i| client.data.example(i)).collect();
        let grads = if batch.is_empty() {
            Vec::new()
        } else {
            model.per_example_gradients(&batch, exec)?
        };
        let step = private_lot_gradient(&grads, model.params(), cfg, noise_rng)?;
        let mut p = model.params().clone();
        opt.apply_update(&mut p, &step)?;
        model.set_params(p)?;
    }
    Ok(model.params().clone())
}

/// Weighted sum `Σ d_k / (q_c d) · w_k`, summed in ascending client order.
/// `client_sizes[k]` is `d_k`; `d` is their total.
pub fn server_aggregate(
    updates: &[(usize, LayeredVector)],
    client_sizes: &[usize],
    q_c: f64,
) -> Result<LayeredVector> {
    let mut sorted: Vec<&(usize, LayeredVector)> = updates.iter().collect();
    sorted.sort_by_key(|(k, _)| *k);
    let first = sorted.first().ok_or(FederationError::NoUpdates)?;
    let d: usize = client_sizes.iter().sum();
    let mut out = first.1.zeros_like();
    for (k, w) in sorted {
        let size = *client_sizes
            .get(*k)
            .ok_or_else(|| FederationError::Config(format!("unknown client {k}")))?;
        out.add_scaled(size as f64 / (q_c * d as f64), w)?;
    }
    Ok(out)
}

/// Server-side noise scale `z · S_f / (q_c · d)`.
pub fn server_sigma(cfg: &FederationConfig, d: usize) -> f64 {
    noise_std(cfg.noise_multiplier, sensitivity(&cfg.clip)) / (cfg.client_sampling * d as f64)
}

/// Adds DP-FedAvg noise to aggregated parameters.
pub fn server_noise(
    w: &LayeredVector,
    cfg: &FederationConfig,
    d: usize,
    rng: &mut Rng,
) -> Result<LayeredVector> {
    if !cfg.mechanism.is_user_level() {
        return Err(FederationError::WrongMechanism(cfg.mechanism));
    }
    let spec = NoiseSpec::new(server_sigma(cfg, d), cfg.mechanism.scheme())?;
    let noisy = spec.apply(&w.flatten(), rng)?;
    Ok(w.unflatten_like(&noisy)?)
}

/// How a configuration is charged to the accountant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingPlan {
    /// `"lot"` for DP-SGD variants, `"client"` for DP-FedAvg variants,
    /// `"none"` otherwise.
    pub scope: String,
    pub sampling_rate: f64,
    pub steps_per_round: u64,
    /// Multiplier actually used to scale the injected noise.
    pub injected_noise_multiplier: f64,
    /// Multiplier charged to the accountant (vanilla-equivalent for wavelet
    /// mechanisms).
    pub effective_noise_multiplier: f64,
    /// Padded parameter count used by the wavelet transform.
    pub padded_len: usize,
    pub delta: f64,
}

impl AccountingPlan {
    pub fn new(cfg: &FederationConfig, param_count: usize, smallest_client: usize) -> Result<Self> {
        let m = haar::padded_len(param_count);
        let (scope, q, steps) = match cfg.mechanism {
            MechanismKind::NonPrivate => ("none", 0.0, 0),
            MechanismKind::DpSgd | MechanismKind::DpSgdWav => (
                "lot",
                (cfg.lot_size as f64 / smallest_client as f64).min(1.0),
                cfg.local_iterations as u64,
            ),
            MechanismKind::DpFedAvg | MechanismKind::DpFedAvgWav => {
                ("client", cfg.client_sampling, 1)
            }
        };
        let effective = if cfg.mechanism.is_wavelet() && cfg.noise_multiplier > 0.0 {
            accountant::effective_noise_multiplier(cfg.noise_multiplier, m)?
        } else {
            cfg.noise_multiplier
        };
        Ok(Self {
            scope: scope.into(),
            sampling_rate: q,
            steps_per_round: steps,
            injected_noise_multiplier: cfg.noise_multiplier,
            effective_noise_multiplier: effective,
            padded_len: m,
            delta: cfg.delta,
        })
    }

    /// `None` when the run has no finite privacy guarantee.
    pub fn params(&self) -> Result<Option<MechanismParams>> {
        if self.scope == "none" || self.effective_noise_multiplier == 0.0 {
            return Ok(None);
        }
        Ok(Some(MechanismParams::new(
            self.sampling_rate,
            self.effective_noise_multiplier,
        )?))
    }

    /// ε after `rounds` rounds (∞ without a guarantee).
    pub fn epsilon_after(&self, rounds: usize) -> Result<f64> {
        match self.params()? {
            None => Ok(f64::INFINITY),
            Some(p) => Ok(RdpLedger::default()
                .compose(&p, self.steps_per_round * rounds as u64)?
                .to_epsilon(self.delta)?
                .0),
        }
    }
}

/// Per-element variance of the injected noise in parameter (or gradient
/// sum) space, in units of the squared sensitivity. Largest over elements.
pub fn injected_noise_variance(
    mechanism: MechanismKind,
    noise_multiplier: f64,
    len: usize,
) -> Result<f64> {
    if !mechanism.is_private() {
        return Ok(0.0);
    }
    let spec = NoiseSpec::new(noise_multiplier, mechanism.scheme())?;
    Ok(spec.element_variance(len)?.into_iter().fold(0.0, f64::max))
}

/// Median per-example gradient norm of `model` over `proxy`, measured in the
/// space where the mechanism clips (Haar coefficients for `DpSgdWav`).
pub fn median_gradient_norm(
    model: &Model,
    proxy: &Dataset,
    mechanism: MechanismKind,
    exec: Execution,
) -> Result<f64> {
    let batch: Vec<Example> = proxy.examples().collect();
    let grads = model.per_example_gradients(&batch, exec)?;
    let norms = grads
        .iter()
        .map(|g| {
            if mechanism == MechanismKind::DpSgdWav {
                let d = haar::haar_forward(&g.flatten())?;
                Ok(mechanism::l2_norm(d.coeffs().iter()))
            } else {
                Ok(g.norm())
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mechanism::median_clip_estimate(&norms)?)
}

/// A run in progress; call [`Simulator::run_round`] repeatedly or
/// [`Simulator::run`] for the whole schedule.
pub struct Simulator {
    cfg: FederationConfig,
    arch: Architecture,
    clients: Vec<ClientDataset>,
    client_sizes: Vec<usize>,
    train: Dataset,
    test: Dataset,
    params: LayeredVector,
    plan: AccountingPlan,
    ledger: RdpLedger,
    round: usize,
    exec: Execution,
}

/// Model initialisation shared by every arm using the same seed.
pub fn initial_model(cfg: &FederationConfig, dim: usize, classes: usize) -> Result<Model> {
    Ok(Model::init(
        cfg.architecture(dim, classes),
        &mut rng::stream(cfg.seed, &[tag::INIT]),
    )?)
}

impl Simulator {
    pub fn new(
        cfg: FederationConfig,
        train: Dataset,
        test: Dataset,
        exec: Execution,
    ) -> Result<Self> {
        cfg.validate()?;
        if test.is_empty() {
            return Err(FederationError::Config("test set is empty".into()));
        }
        if train.dim() != test.dim() {
            return Err(FederationError::Config(
                "train and test dimensions differ".into(),
            ));
        }
        let classes = train.class_count().max(test.class_count());
        let arch = cfg.architecture(train.dim(), classes);
        let model = initial_model(&cfg, train.dim(), classes)?;
        let clients = partition_iid(&train, cfg.total_clients, cfg.seed)?;
        let client_sizes: Vec<usize> = clients.iter().map(|c| c.size()).collect();
        let smallest = *client_sizes.iter().min().expect("at least one client");
        if cfg.lot_size > smallest {
            return Err(FederationError::LotTooLarge {
                lot: cfg.lot_size,
                available: smallest,
            });
        }
        let plan = AccountingPlan::new(&cfg, arch.param_count(), smallest)?;
        Ok(Self {
            cfg,
            arch,
            clients,
            client_sizes,
            train,
            test,
            params: model.params().clone(),
            plan,
            ledger: RdpLedger::default(),
            round: 0,
            exec,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &LayeredVector {
        &self.params
    }

    pub fn plan(&self) -> &AccountingPlan {
        &self.plan
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    /// Executes one round and returns its metrics.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let t = self.round as u64;
        let seed = self.cfg.seed;
        let sampled = sample_clients(
            self.cfg.total_clients,
            self.cfg.client_sampling,
            &mut rng::stream(seed, &[tag::CLIENT_SAMPLING, t]),
        );

        let results = self.exec.map(&sampled, |&k| {
            let mut lot_rng = rng::stream(seed, &[tag::LOT, t, k as u64]);
            let mut noise_rng = rng::stream(seed, &[tag::CLIENT_NOISE, t, k as u64]);
            client_local_train(
                &self.params,
                &self.arch,
                &self.clients[k],
                &self.cfg,
                &mut lot_rng,
                &mut noise_rng,
                self.exec,
            )
            .map(|w| (k, w))
        });
        let updates = results.into_iter().collect::<Result<Vec<_>>>()?;

        if !updates.is_empty() {
            let mut w = server_aggregate(&updates, &self.client_sizes, self.cfg.client_sampling)?;
            if self.cfg.mechanism.is_user_level() {
                let d = self.client_sizes.iter().sum();
                let mut r = rng::stream(seed, &[tag::SERVER_NOISE, t]);
                w = server_noise(&w, &self.cfg, d, &mut r)?;
            }
            self.params = w;
        }

        // charged whether or not anyone was sampled
        let epsilon = match self.plan.params()? {
            None => f64::INFINITY,
            Some(p) => {
                self.ledger = self.ledger.compose(&p, self.plan.steps_per_round)?;
                self.ledger.to_epsilon(self.cfg.delta)?.0
            }
        };

        let model = Model::with_params(self.arch.clone(), self.params.clone())?;
        let (train_loss, _) = model.evaluate(&self.train)?;
        let (_, test_accuracy) = model.evaluate(&self.test)?;
        self.round += 1;
        Ok(RoundMetrics {
            round: self.round,
            train_loss,
            test_accuracy,
            epsilon_spent: epsilon,
            sampled_clients: sampled.len(),
        })
    }

    /// Runs the remaining rounds.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        (self.round..self.cfg.rounds)
            .map(|_| self.run_round())
            .collect()
    }
}

/// Runs a full configuration with the default execution mode.
pub fn run(cfg: &FederationConfig, train: &Dataset, test: &Dataset) -> Result<Vec<RoundMetrics>> {
    Simulator::new(
        cfg.clone(),
        train.clone(),
        test.clone(),
        Execution::default(),
    )?
    .run()
}
