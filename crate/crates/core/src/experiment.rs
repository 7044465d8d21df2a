//! Experiment harness: configuration, the early-stopped training loop, the
//! three transfer regimes (scratch, direct, transitive), the three loss
//! regimes (ce, top2, combined), and bagged ensembles.
//!
//! Every random choice is derived from the per-run seed, so an identical
//! configuration reproduces identical metrics regardless of thread count.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Standardizer;
use crate::loss::{
    class_weights, combined_data_loss, cross_entropy, ClassWeights, LossConfig, LossValueGrad,
};
use crate::matrix::Matrix;
use crate::metrics::{
    confusion, evaluate_scores, macro_f1, majority_vote, mean_probabilities, topk_accuracy,
    ModelVotes,
};
use crate::model::{adam_step, init_network, transfer_init, AdamState, Network, NetworkSpec, TransferMode};
use crate::report::ReportRow;
use crate::sampler::{
    balanced_batches, bootstrap_resample, inject_label_noise, shuffled_batches, stratified_split,
    Dataset, NoiseSpec, SplitSize,
};
use crate::seed::derive_seed;
use crate::synth::{reference_counts, DomainChain, DomainChainSpec, MixtureSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRegime {
    /// Cross-entropy only.
    Ce,
    /// Cost-weighted top-2 smooth loss only (`lambda` forced to 1).
    Top2,
    /// `(1 − λ)·CE + w_y·λ·top2`.
    Combined,
}

impl fmt::Display for LossRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossRegime::Ce => "ce",
            LossRegime::Top2 => "top2",
            LossRegime::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferRegime {
    /// Random initialization, target data only.
    Scratch,
    /// Pretrain on the source domain, new head, fine-tune on the target.
    Direct,
    /// Pretrain on the source, fine-tune on the intermediate domain, new
    /// head, fine-tune on the target.
    Transitive,
}

impl fmt::Display for TransferRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferRegime::Scratch => "scratch",
            TransferRegime::Direct => "direct",
            TransferRegime::Transitive => "transitive",
        })
    }
}

fn default_n_classes() -> usize {
    7
}
fn default_feature_dim() -> usize {
    16
}
fn default_train_counts() -> Vec<usize> {
    reference_counts(0.1)
}
fn default_test_per_class() -> usize {
    100
}
fn default_separation() -> f64 {
    15.0
}
fn default_spread() -> f64 {
    5.0
}
fn default_source_per_class() -> usize {
    300
}

/// Gaussian-mixture data drawn fresh for every seed. The target domain sits
/// two shift steps from the source domain; with zero shift all domains match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Target training rows per class (before the validation split).
    #[serde(default = "default_train_counts")]
    pub train_counts: Vec<usize>,
    /// Clean, balanced target test rows per class.
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default)]
    pub shift_magnitude: f64,
    /// Rows per class in the source and intermediate domains.
    #[serde(default = "default_source_per_class")]
    pub source_per_class: usize,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        SyntheticSource {
            n_classes: default_n_classes(),
            feature_dim: default_feature_dim(),
            train_counts: default_train_counts(),
            test_per_class: default_test_per_class(),
            separation: default_separation(),
            spread: default_spread(),
            shift_magnitude: 0.0,
            source_per_class: default_source_per_class(),
        }
    }
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Manifest files on disk. Without `test`, a stratified `test_fraction` of
/// `train` is held out (per seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSource {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Pretraining data for the direct and transitive regimes.
    #[serde(default)]
    pub source: Option<PathBuf>,
    /// Second-hop data for the transitive regime.
    #[serde(default)]
    pub intermediate: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    Manifest(ManifestSource),
}

fn default_width() -> usize {
    32
}
fn default_n_blocks() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            width: default_width(),
            n_blocks: default_n_blocks(),
        }
    }
}

fn default_loss() -> LossRegime {
    LossRegime::Combined
}
fn default_lambda() -> f64 {
    LossConfig::default().lambda
}
fn default_tau() -> f64 {
    LossConfig::default().tau
}
fn default_mu() -> f64 {
    LossConfig::default().mu
}
fn default_batch_size() -> usize {
    70
}
fn default_max_epochs() -> usize {
    30
}
fn default_patience() -> usize {
    3
}
fn default_transfer() -> TransferRegime {
    TransferRegime::Scratch
}
fn default_true() -> bool {
    true
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_val_fraction() -> f64 {
    0.1
}

/// Everything that defines a run. Deserializes from JSON with defaults for
/// omitted fields; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default = "default_loss")]
    pub loss: LossRegime,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Defaults to 1e-5 when the top-2 term is active and 1e-4 for ce.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_transfer")]
    pub transfer: TransferRegime,
    #[serde(default = "default_true")]
    pub balanced_sampling: bool,
    /// Cost-sensitive `w_y` from class counts; off means uniform `1/n`.
    #[serde(default = "default_true")]
    pub class_weighting: bool,
    #[serde(default)]
    pub noise_rate: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Per-feature standardization fitted on each domain's training rows.
    #[serde(default)]
    pub standardize: bool,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        serde_json::from_value(serde_json::json!({ "dataset": dataset }))
            .expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: match self.loss {
                LossRegime::Ce => 0.0,
                LossRegime::Top2 => 1.0,
                LossRegime::Combined => self.lambda,
            },
            tau: self.tau,
            mu: self.mu,
        }
    }

    /// Configured rate, else 1e-5 with a top-2 term and 1e-4 for ce.
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.loss {
            LossRegime::Ce => 1e-4,
            LossRegime::Top2 | LossRegime::Combined => 1e-5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        LossConfig {
            lambda: self.lambda,
            tau: self.tau,
            mu: self.mu,
        }
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(lr) = self.learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("learning_rate {lr} must be > 0"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} not in [0, 1]", self.noise_rate));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} not in (0, 1)", self.val_fraction));
        }
        if self.network.width == 0 {
            return bad("network.width must be positive".into());
        }
        match &self.dataset {
            DatasetSource::Synthetic(s) => {
                if s.n_classes < 2 {
                    return bad("synthetic n_classes must be at least 2".into());
                }
                if s.train_counts.len() != s.n_classes {
                    return bad(format!(
                        "train_counts has {} entries for {} classes",
                        s.train_counts.len(),
                        s.n_classes
                    ));
                }
                if s.test_per_class == 0 {
                    return bad("test_per_class must be positive".into());
                }
                if self.transfer != TransferRegime::Scratch && s.source_per_class < 2 {
                    return bad("source_per_class must be at least 2".into());
                }
                if self.balanced_sampling && self.batch_size < s.n_classes {
                    return bad(format!(
                        "balanced batch_size {} below class count {}",
                        self.batch_size, s.n_classes
                    ));
                }
                if !(s.shift_magnitude.is_finite() && s.shift_magnitude >= 0.0) {
                    return bad("shift_magnitude must be finite and >= 0".into());
                }
                MixtureSpec {
                    n_classes: s.n_classes,
                    feature_dim: s.feature_dim,
                    counts: s.train_counts.clone(),
                    separation: s.separation,
                    spread: s.spread,
                    seed: 0,
                }
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
            }
            DatasetSource::Manifest(m) => {
                if m.test.is_none() && !(m.test_fraction > 0.0 && m.test_fraction < 1.0) {
                    return bad(format!("test_fraction {} not in (0, 1)", m.test_fraction));
                }
                if self.transfer != TransferRegime::Scratch && m.source.is_none() {
                    return bad(format!("transfer regime {} needs dataset.manifest.source", self.transfer));
                }
                if self.transfer == TransferRegime::Transitive && m.intermediate.is_none() {
                    return bad("transitive regime needs dataset.manifest.intermediate".into());
                }
            }
        }
        Ok(())
    }
}

/// Per-sample loss with gradient for a regime.
#[derive(Debug, Clone)]
pub struct Objective {
    pub regime: LossRegime,
    pub loss: LossConfig,
    pub weights: ClassWeights,
}

impl Objective {
    pub fn sample(&self, scores: &[f64], label: usize) -> Result<LossValueGrad> {
        match self.regime {
            LossRegime::Ce => cross_entropy(scores, label),
            LossRegime::Top2 | LossRegime::Combined => {
                combined_data_loss(scores, label, &self.weights, &self.loss)
            }
        }
    }

    /// Summed loss over the rows and the per-row gradients.
    pub fn batch(&self, scores: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
        let mut grads = Matrix::zeros(scores.rows(), scores.cols());
        let mut total = 0.0;
        for (i, (row, &y)) in scores.iter_rows().zip(labels).enumerate() {
            let out = self.sample(row, y)?;
            total += out.value;
            grads.row_mut(i).copy_from_slice(&out.grad);
        }
        Ok((total, grads))
    }

    /// Mean data loss of `net` on `ds`.
    pub fn mean_loss(&self, net: &Network, ds: &Dataset) -> Result<f64> {
        if ds.is_empty() {
            return Err(Error::InvalidArgument("mean loss of an empty dataset".into()));
        }
        let scores = net.scores(ds.features())?;
        Ok(self.batch(&scores, ds.labels())?.0 / ds.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub balanced_sampling: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub network: Network,
    /// Epochs run before stopping.
    pub epochs: usize,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    /// Mean training loss during the best epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_history: Vec<f64>,
}

/// Trains with Adam until validation loss fails to improve for `patience`
/// consecutive epochs or `max_epochs` is reached, then restores the best
/// parameters.
pub fn train_network(
    mut net: Network,
    train: &Dataset,
    val: &Dataset,
    objective: &Objective,
    opts: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome> {
    let mut adam = AdamState::new(&net, opts.learning_rate)?;
    let mut best: Option<(f64, Network, usize, f64)> = None;
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=opts.max_epochs {
        let epoch_seed = derive_seed(seed, epoch as u64);
        let batches = if opts.balanced_sampling {
            balanced_batches(train, opts.batch_size, epoch_seed)?
        } else {
            shuffled_batches(train, opts.batch_size, epoch_seed)?
        };
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in &batches {
            let x = train.features().select_rows(&batch.rows);
            let labels: Vec<usize> = batch.rows.iter().map(|&r| train.labels()[r]).collect();
            let (scores, cache) = net.forward(&x)?;
            let (sum, grads) = objective.batch(&scores, &labels)?;
            let g = net.backward(&cache, &grads, objective.loss.mu)?;
            adam_step(&mut net, &g, &mut adam)?;
            loss_sum += sum;
            seen += labels.len();
        }
        if !net.is_finite() {
            return Err(Error::Domain(format!("parameters diverged in epoch {epoch}")));
        }
        let train_loss = loss_sum / seen.max(1) as f64;
        let val_loss = objective.mean_loss(&net, val)?;
        history.push(val_loss);
        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, net.clone(), epoch, train_loss));
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                break;
            }
        }
    }
    let epochs = history.len();
    let (val_loss, network, best_epoch, train_loss) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        network,
        epochs,
        best_epoch,
        train_loss,
        val_loss,
        val_history: history,
    })
}

/// Training, validation and test data of one domain.
#[derive(Debug, Clone)]
pub struct DomainData {
    pub train: Dataset,
    pub val: Dataset,
    pub standardizer: Option<Standardizer>,
}

/// All data one seed needs. Source domains are only built for the regimes
/// that read them.
#[derive(Debug, Clone)]
pub struct RunData {
    pub target: DomainData,
    pub test: Dataset,
    pub source: Option<DomainData>,
    pub intermediate: Option<DomainData>,
}

/// Manifests loaded once before any training.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum LoadedSource {
    Synthetic(SyntheticSource),
    Manifest {
        train: Dataset,
        test: Option<Dataset>,
        test_fraction: f64,
        source: Option<Dataset>,
        intermediate: Option<Dataset>,
    },
}

fn load_source(cfg: &ExperimentConfig) -> Result<LoadedSource> {
    match &cfg.dataset {
        DatasetSource::Synthetic(s) => Ok(LoadedSource::Synthetic(s.clone())),
        DatasetSource::Manifest(m) => {
            let read = |p: &Option<PathBuf>| p.as_deref().map(Dataset::read_manifest).transpose();
            let train = Dataset::read_manifest(&m.train)?;
            let test = read(&m.test)?;
            let source = if cfg.transfer != TransferRegime::Scratch {
                read(&m.source)?
            } else {
                None
            };
            let intermediate = if cfg.transfer == TransferRegime::Transitive {
                read(&m.intermediate)?
            } else {
                None
            };
            for other in test.iter().chain(&source).chain(&intermediate) {
                if other.n_features() != train.n_features() {
                    return Err(Error::Config(format!(
                        "manifest feature widths differ: {} vs {}",
                        other.n_features(),
                        train.n_features()
                    )));
                }
            }
            if let Some(t) = &test {
                if t.n_classes() != train.n_classes() {
                    return Err(Error::Config("train and test class counts differ".into()));
                }
            }
            Ok(LoadedSource::Manifest {
                train,
                test,
                test_fraction: m.test_fraction,
                source,
                intermediate,
            })
        }
    }
}

fn domain(
    train: Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    noise: f64,
) -> Result<(DomainData, Option<Standardizer>)> {
    let noisy = inject_label_noise(
        &train,
        NoiseSpec {
            rate: noise,
            seed: derive_seed(seed, 1),
        },
    )?;
    let (train, val) = stratified_split(&noisy, SplitSize::Fraction(cfg.val_fraction), derive_seed(seed, 2))?;
    if cfg.standardize {
        let s = Standardizer::fit(train.features())?;
        let data = DomainData {
            train: s.apply_dataset(&train)?,
            val: s.apply_dataset(&val)?,
            standardizer: Some(s.clone()),
        };
        Ok((data, Some(s)))
    } else {
        Ok((
            DomainData {
                train,
                val,
                standardizer: None,
            },
            None,
        ))
    }
}

/// Builds the per-seed datasets: label noise on the target training rows
/// only, a stratified validation split, optional standardization, and
/// source domains for the transfer regimes.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<RunData> {
    cfg.validate()?;
    prepare_loaded(cfg, &load_source(cfg)?, seed)
}

fn prepare_loaded(cfg: &ExperimentConfig, loaded: &LoadedSource, seed: u64) -> Result<RunData> {
    let (target_train, test, source, intermediate) = match loaded {
        LoadedSource::Synthetic(s) => {
            let chain = DomainChain::from_spec(&DomainChainSpec {
                base: MixtureSpec {
                    n_classes: s.n_classes,
                    feature_dim: s.feature_dim,
                    counts: s.train_counts.clone(),
                    separation: s.separation,
                    spread: s.spread,
                    seed: derive_seed(seed, 100),
                },
                shift_magnitude: s.shift_magnitude,
            })?;
            let train = chain.target.sample(&s.train_counts, derive_seed(seed, 101))?;
            let test = chain
                .target
                .sample(&vec![s.test_per_class; s.n_classes], derive_seed(seed, 102))?;
            let per_source = vec![s.source_per_class; s.n_classes];
            let source = (cfg.transfer != TransferRegime::Scratch)
                .then(|| chain.source.sample(&per_source, derive_seed(seed, 103)))
                .transpose()?;
            let intermediate = (cfg.transfer == TransferRegime::Transitive)
                .then(|| chain.intermediate.sample(&per_source, derive_seed(seed, 104)))
                .transpose()?;
            (train, test, source, intermediate)
        }
        LoadedSource::Manifest {
            train,
            test,
            test_fraction,
            source,
            intermediate,
        } => {
            let (train, test) = match test {
                Some(t) => (train.clone(), t.clone()),
                None => {
                    let (tr, te) = stratified_split(
                        train,
                        SplitSize::Fraction(*test_fraction),
                        derive_seed(seed, 105),
                    )?;
                    (tr, te)
                }
            };
            (train, test, source.clone(), intermediate.clone())
        }
    };

    let (target, standardizer) = domain(target_train, cfg, derive_seed(seed, 110), cfg.noise_rate)?;
    let test = match &standardizer {
        Some(s) => s.apply_dataset(&test)?,
        None => test,
    };
    let source = source
        .map(|d| domain(d, cfg, derive_seed(seed, 111), 0.0).map(|r| r.0))
        .transpose()?;
    let intermediate = intermediate
        .map(|d| domain(d, cfg, derive_seed(seed, 112), 0.0).map(|r| r.0))
        .transpose()?;
    Ok(RunData {
        target,
        test,
        source,
        intermediate,
    })
}

/// A finished run: its report row plus what produced it.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: ReportRow,
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub network: Network,
    pub standardizer: Option<Standardizer>,
    pub val_history: Vec<f64>,
    pub best_epoch: usize,
    /// Raw scores on the test split.
    pub test_scores: Matrix,
}

fn objective_for(cfg: &ExperimentConfig, train: &Dataset) -> Result<Objective> {
    let weights = if cfg.class_weighting {
        class_weights(&train.class_stats()?)
    } else {
        ClassWeights::uniform(train.n_classes())
    };
    Ok(Objective {
        regime: cfg.loss,
        loss: cfg.loss_config(),
        weights,
    })
}

fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        learning_rate: cfg.learning_rate(),
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        balanced_sampling: cfg.balanced_sampling,
    }
}

fn fit_on(cfg: &ExperimentConfig, net: Network, data: &DomainData, seed: u64) -> Result<TrainOutcome> {
    let objective = objective_for(cfg, &data.train)?;
    train_network(net, &data.train, &data.val, &objective, &train_options(cfg), seed)
}

/// Feature trunk handed to the target stage: `None` for scratch, otherwise
/// pretrained through the source (and intermediate) domains.
fn pretrained_trunk(cfg: &ExperimentConfig, data: &RunData, seed: u64) -> Result<Option<Network>> {
    if cfg.transfer == TransferRegime::Scratch {
        return Ok(None);
    }
    let source = data.source.as_ref().expect("source domain built for transfer");
    let net = init_network(network_spec(cfg, source.train.n_features(), source.train.n_classes(), derive_seed(seed, 120)))?;
    let mut net = fit_on(cfg, net, source, derive_seed(seed, 121))?.network;
    if cfg.transfer == TransferRegime::Transitive {
        let mid = data.intermediate.as_ref().expect("intermediate domain built");
        let start = transfer_init(&net, mid.train.n_classes(), TransferMode::HeadOnlyReinit, derive_seed(seed, 122))?;
        net = fit_on(cfg, start, mid, derive_seed(seed, 123))?.network;
    }
    Ok(Some(net))
}

fn network_spec(cfg: &ExperimentConfig, input_dim: usize, n_classes: usize, init_seed: u64) -> NetworkSpec {
    NetworkSpec {
        input_dim,
        width: cfg.network.width,
        n_blocks: cfg.network.n_blocks,
        n_classes,
        init_seed,
    }
}

fn starting_network(
    cfg: &ExperimentConfig,
    trunk: Option<&Network>,
    target: &Dataset,
    init_seed: u64,
) -> Result<Network> {
    match trunk {
        Some(t) => transfer_init(t, target.n_classes(), TransferMode::HeadOnlyReinit, init_seed),
        None => init_network(network_spec(cfg, target.n_features(), target.n_classes(), init_seed)),
    }
}

fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}-{}-s{seed}", cfg.loss, cfg.transfer)
}

fn finish(
    cfg: &ExperimentConfig,
    seed: u64,
    run_id: String,
    outcome: TrainOutcome,
    data: &RunData,
    started: Instant,
) -> Result<RunRecord> {
    let test_scores = outcome.network.scores(data.test.features())?;
    let metrics = evaluate_scores(&test_scores, data.test.labels())?;
    Ok(RunRecord {
        row: ReportRow {
            run_id,
            seed,
            transfer_regime: cfg.transfer.to_string(),
            loss_regime: cfg.loss.to_string(),
            epochs: outcome.epochs,
            train_loss: outcome.train_loss,
            val_loss: outcome.val_loss,
            top1: metrics.top1_accuracy,
            top2: metrics.top2_accuracy.unwrap_or(metrics.top1_accuracy),
            macro_f1: metrics.macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        },
        loss: cfg.loss_config(),
        learning_rate: cfg.learning_rate(),
        network: outcome.network,
        standardizer: data.target.standardizer.clone(),
        val_history: outcome.val_history,
        best_epoch: outcome.best_epoch,
        test_scores,
    })
}

fn run_seed(cfg: &ExperimentConfig, loaded: &LoadedSource, seed: u64) -> Result<RunRecord> {
    let started = Instant::now();
    let data = prepare_loaded(cfg, loaded, seed)?;
    let trunk = pretrained_trunk(cfg, &data, seed)?;
    let net = starting_network(cfg, trunk.as_ref(), &data.target.train, derive_seed(seed, 130))?;
    let outcome = fit_on(cfg, net, &data.target, derive_seed(seed, 131))?;
    finish(cfg, seed, run_id(cfg, seed), outcome, &data, started)
}

/// One record per configured seed, in seed order. Seeds run in parallel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let loaded = load_source(cfg)?;
    cfg.seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &loaded, seed))
        .collect()
}

/// Ensemble row and per-member rows for one seed.
#[derive(Debug, Clone)]
pub struct BaggingRecord {
    pub ensemble: ReportRow,
    pub members: Vec<RunRecord>,
    pub votes: Vec<usize>,
}

/// Votes a set of trained networks on shared features.
pub fn vote_networks(nets: &[&Network], features: &Matrix) -> Result<(Vec<usize>, Vec<ModelVotes>)> {
    let votes = nets
        .iter()
        .map(|n| n.scores(features).map(|s| ModelVotes::from_scores(&s)))
        .collect::<Result<Vec<_>>>()?;
    Ok((majority_vote(&votes)?, votes))
}

fn run_bagging_seed(cfg: &ExperimentConfig, loaded: &LoadedSource, seed: u64, n_models: usize) -> Result<BaggingRecord> {
    let data = prepare_loaded(cfg, loaded, seed)?;
    let trunk = pretrained_trunk(cfg, &data, seed)?;
    let members = (0..n_models)
        .into_par_iter()
        .map(|m| {
            let started = Instant::now();
            let member_seed = derive_seed(seed, 1000 + m as u64);
            let resampled = DomainData {
                train: bootstrap_resample(&data.target.train, derive_seed(member_seed, 1))?,
                ..data.target.clone()
            };
            let net = starting_network(cfg, trunk.as_ref(), &resampled.train, derive_seed(member_seed, 2))?;
            let outcome = fit_on(cfg, net, &resampled, derive_seed(member_seed, 3))?;
            finish(cfg, seed, format!("{}-m{m}", run_id(cfg, seed)), outcome, &data, started)
        })
        .collect::<Result<Vec<_>>>()?;

    let votes: Vec<ModelVotes> = members.iter().map(|r| ModelVotes::from_scores(&r.test_scores)).collect();
    let voted = majority_vote(&votes)?;
    let truth = data.test.labels();
    let cm = confusion(truth, &voted, data.test.n_classes())?;
    let report = macro_f1(&cm);
    let mean_probs = mean_probabilities(&votes);
    let top2 = topk_accuracy(&mean_probs, truth, 2.min(mean_probs.cols()))?;
    let n = members.len() as f64;
    let ensemble = ReportRow {
        run_id: format!("{}-bag{n_models}", run_id(cfg, seed)),
        seed,
        transfer_regime: cfg.transfer.to_string(),
        loss_regime: cfg.loss.to_string(),
        epochs: members.iter().map(|r| r.row.epochs).max().unwrap_or(0),
        train_loss: members.iter().map(|r| r.row.train_loss).sum::<f64>() / n,
        val_loss: members.iter().map(|r| r.row.val_loss).sum::<f64>() / n,
        top1: report.top1_accuracy,
        top2,
        macro_f1: report.macro_f1,
        seconds: members.iter().map(|r| r.row.seconds).sum(),
    };
    Ok(BaggingRecord {
        ensemble,
        members,
        votes: voted,
    })
}

/// Trains `n_models` members per seed, each on its own bootstrap resample
/// of the target training rows, and votes them on the shared test split.
pub fn run_bagging(cfg: &ExperimentConfig, n_models: usize) -> Result<Vec<BaggingRecord>> {
    cfg.validate()?;
    if n_models == 0 {
        return Err(Error::Config("bagging needs at least one model".into()));
    }
    let loaded = load_source(cfg)?;
    cfg.seeds
        .par_iter()
        .map(|&seed| run_bagging_seed(cfg, &loaded, seed, n_models))
        .collect()
}
