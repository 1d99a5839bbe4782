//! End-to-end protocol drivers: the blended horizontal/vertical protocol,
//! the parameter-averaging baseline, and the cut-layer baseline, plus the
//! convergence-speedup and ablation-grid experiment harnesses built on top
//! of them.

mod ablation;
mod blendfl_run;
mod fedavg_run;
mod speedup;
mod splitnn_run;

pub use ablation::{
    best_validation_report, default_client_counts, default_ratios, run_ablation_grid, GridRow,
    GridSpec,
};
pub use blendfl_run::{run_blendfl, run_blendfl_stopping};
pub use fedavg_run::run_fedavg;
pub use speedup::{measure_speedup, SpeedupOutcome};
pub use splitnn_run::run_splitnn;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;

use crate::client::{label_vector, ClientState, HeadKind, ModelArchitecture, ModelBundle};
use crate::data::{
    generate_synthetic, holdout_split, intersect_fragmented, partition_with_layout, Layout,
    Modality, MultimodalSample, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{macro_ovr, BinaryMetric};
use crate::nn::Network;
use crate::report::{HeadDiagnostics, RoundReport};
use crate::rng::substream;
use crate::server::{
    AggregationServer, ClientSubmission, RoundAggregation, ScoreMetric, VerticalServer,
};
use crate::wire::TraceEvent;

/// Which driver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Blendfl,
    Fedavg,
    Splitnn,
}

impl Protocol {
    pub fn label(self) -> &'static str {
        match self {
            Protocol::Blendfl => "blendfl",
            Protocol::Fedavg => "fedavg",
            Protocol::Splitnn => "splitnn",
        }
    }
}

/// How submitted parameters are combined each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationRule {
    /// Performance-weighted with the non-improver discard gate.
    BlendAvg,
    /// Sample-count-weighted mean of every submission.
    FedAvg,
}

impl AggregationRule {
    pub fn label(self) -> &'static str {
        match self {
            AggregationRule::BlendAvg => "blendavg",
            AggregationRule::FedAvg => "fedavg",
        }
    }
}

/// What happens to the coordinator's fused head after each aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerticalHeadPolicy {
    /// Keep training the same head across rounds (default).
    Retain,
    /// Overwrite it with the freshly blended global fused head.
    SyncToBlended,
    /// Draw fresh parameters each round.
    Reinitialize,
}

/// Knobs for a single protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    /// Global rounds: each ends in one aggregation and redistribution.
    pub rounds: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Local epochs before each aggregation (the update interval).
    pub local_epochs_per_round: usize,
    pub aggregation: AggregationRule,
    pub seed: u64,
    /// Whether fragment halves also feed single-modality local training.
    pub fragmented_in_unimodal: bool,
    pub vertical_head_policy: VerticalHeadPolicy,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be at least 1".to_string()));
        }
        if self.local_epochs_per_round < 1 {
            return Err(Error::Config(
                "local_epochs_per_round must be at least 1".to_string(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be a positive finite number, got {}",
                self.lr
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Everything needed to build one experiment world from a root seed.
///
/// All randomness (data, holdout, partition, initialization, per-client
/// shuffling) derives from `seed` through named substreams, so two specs
/// differing only in one knob share everything else bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetSpec {
    pub synthetic: SyntheticSpec,
    pub n_clients: usize,
    pub paired_fraction: f64,
    pub fragmented_fraction: f64,
    pub layout: Layout,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub arch: ModelArchitecture,
    pub metric: ScoreMetric,
    pub seed: u64,
}

/// A ready-to-run world: clients plus both server roles plus the test set.
/// Cloning it snapshots the full state, which is how the speedup driver
/// runs two aggregation arms from identical starting points.
#[derive(Clone)]
pub struct Fleet {
    pub clients: Vec<ClientState>,
    pub vertical: VerticalServer,
    pub aggregation: AggregationServer,
    pub test: Vec<MultimodalSample>,
}

impl Fleet {
    pub fn build(spec: &FleetSpec) -> Result<Fleet> {
        spec.arch.validate()?;
        let mut synthetic = spec.synthetic.clone();
        synthetic.seed = spec.seed;
        if synthetic.dim_a != spec.arch.dim_a || synthetic.dim_b != spec.arch.dim_b {
            return Err(Error::Config(format!(
                "architecture expects feature widths {}/{} but the data has {}/{}",
                spec.arch.dim_a, spec.arch.dim_b, synthetic.dim_a, synthetic.dim_b
            )));
        }
        if synthetic.n_classes != spec.arch.n_classes {
            return Err(Error::Config(format!(
                "architecture expects {} classes but the data has {}",
                spec.arch.n_classes, synthetic.n_classes
            )));
        }
        let samples = generate_synthetic(&synthetic)?;
        let (train, validation, test) =
            holdout_split(&samples, spec.val_fraction, spec.test_fraction, spec.seed)?;
        let datasets = partition_with_layout(
            &train,
            spec.n_clients,
            spec.paired_fraction,
            spec.fragmented_fraction,
            spec.seed,
            spec.layout,
        )?;
        let alignment = intersect_fragmented(&datasets)?;
        let clients = datasets
            .into_iter()
            .map(|d| ClientState::new(d.client_id, d, &spec.arch, spec.seed))
            .collect::<Result<Vec<_>>>()?;
        let head = Network::seeded(
            spec.arch.multimodal_head_layers(),
            &mut substream(spec.seed, "init/g_v"),
        )?;
        let vertical = VerticalServer::new(head, alignment);
        let global = ModelBundle::seeded_full(&spec.arch, spec.seed)?;
        let aggregation = AggregationServer::new(global, validation, spec.metric)?;
        Ok(Fleet {
            clients,
            vertical,
            aggregation,
            test,
        })
    }
}

/// Stop a run early once a head's validation score reaches a target.
#[derive(Debug, Clone, Copy)]
pub struct StopRule {
    pub head: HeadKind,
    pub target: f64,
}

/// Output of one protocol run.
pub struct ProtocolRun {
    pub reports: Vec<RoundReport>,
    /// Final global bundle; absent for the cut-layer baseline, whose model
    /// is split between the server head and per-client encoders.
    pub global: Option<ModelBundle>,
    /// The baseline's server-side classifier, without which it cannot
    /// predict anything.
    pub server_head: Option<Network>,
    pub trace: Vec<TraceEvent>,
    /// Samples no protocol step could use (single-modality samples under
    /// the cut-layer baseline).
    pub wasted_samples: usize,
}

/// Running mean per named loss.
#[derive(Default)]
pub(crate) struct LossLedger {
    sums: BTreeMap<&'static str, (f64, f64)>,
}

impl LossLedger {
    pub(crate) fn add(&mut self, phase: &'static str, loss: f64, weight: f64) {
        let e = self.sums.entry(phase).or_insert((0.0, 0.0));
        e.0 += loss * weight;
        e.1 += weight;
    }

    pub(crate) fn finish(self) -> BTreeMap<String, f64> {
        self.sums
            .into_iter()
            .map(|(k, (sum, w))| (k.to_string(), sum / w))
            .collect()
    }
}

pub(crate) fn build_submission(client: &ClientState, include_fragmented: bool) -> ClientSubmission {
    ClientSubmission {
        tag: format!("client-{}", client.client_id),
        unimodal_a: client
            .submit_unimodal(Modality::A)
            .map(|p| (p, client.bundle.clone())),
        unimodal_b: client
            .submit_unimodal(Modality::B)
            .map(|p| (p, client.bundle.clone())),
        multimodal: client
            .submit_multimodal()
            .map(|p| (p, client.bundle.clone())),
        n_unimodal_a: client.unimodal_sample_count(Modality::A, include_fragmented),
        n_unimodal_b: client.unimodal_sample_count(Modality::B, include_fragmented),
        n_multimodal: client.data.paired.len(),
    }
}

pub(crate) fn submission_is_empty(s: &ClientSubmission) -> bool {
    s.unimodal_a.is_none() && s.unimodal_b.is_none() && s.multimodal.is_none()
}

/// Macro one-vs-rest AUROC and AUPRC of one head on a sample set.
pub(crate) fn head_test_metrics(
    bundle: &ModelBundle,
    head: HeadKind,
    samples: &[MultimodalSample],
) -> Result<(f64, f64)> {
    let scores = bundle.scores_for(head, samples)?;
    let labels = label_vector(samples);
    let auroc = macro_ovr(BinaryMetric::Auroc, &scores, &labels)?;
    let auprc = macro_ovr(BinaryMetric::Auprc, &scores, &labels)?;
    Ok((auroc, auprc))
}

pub(crate) fn diagnostics_map(agg: &RoundAggregation) -> BTreeMap<String, HeadDiagnostics> {
    agg.heads
        .iter()
        .map(|(&label, h)| (label.to_string(), HeadDiagnostics::from(h)))
        .collect()
}

/// Full per-head validation and test metrics for a global bundle.
pub(crate) fn global_report_metrics(
    aggregation: &AggregationServer,
    test: &[MultimodalSample],
) -> Result<(
    BTreeMap<String, f64>,
    BTreeMap<String, f64>,
    BTreeMap<String, f64>,
)> {
    let validation: BTreeMap<String, f64> = aggregation
        .global_scores()
        .iter()
        .map(|(&k, &v)| (k.to_string(), v))
        .collect();
    let mut test_auroc = BTreeMap::new();
    let mut test_auprc = BTreeMap::new();
    for head in HeadKind::all() {
        let (auroc, auprc) = head_test_metrics(aggregation.global(), head, test)?;
        test_auroc.insert(head.label().to_string(), auroc);
        test_auprc.insert(head.label().to_string(), auprc);
    }
    Ok((validation, test_auroc, test_auprc))
}

/// Dispatches to the driver matching `config.protocol`.
pub fn run_protocol(fleet: &mut Fleet, config: &ProtocolConfig) -> Result<ProtocolRun> {
    match config.protocol {
        Protocol::Blendfl => run_blendfl(fleet, config),
        Protocol::Fedavg => run_fedavg(fleet, config),
        Protocol::Splitnn => run_splitnn(fleet, config),
    }
}

/// First round whose validation score for `head` reached `target`.
pub fn rounds_to_target(reports: &[RoundReport], head: &str, target: f64) -> Option<usize> {
    reports
        .iter()
        .find(|r| r.validation.get(head).is_some_and(|&v| v >= target))
        .map(|r| r.round)
}

/// Deterministic per-epoch minibatch order over a fixed id set.
pub(crate) fn shuffled_minibatches(
    ids: &[u64],
    batch_size: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<Vec<u64>> {
    let mut order = ids.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

pub(crate) fn client_mut(clients: &mut [ClientState], id: usize) -> Result<&mut ClientState> {
    clients
        .iter_mut()
        .find(|c| c.client_id == id)
        .ok_or_else(|| Error::Run(format!("no client with id {id}")))
}
