//! Per-client state: local models, local training, the client half of the
//! vertical path, and decentralized inference.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;

use crate::data::{ClientDataset, Modality, MultimodalSample};
use crate::error::{Error, Result};
use crate::nn::{
    loss_and_grad, ForwardTrace, LayerSpec, LossKind, Matrix, Network, ParamVector,
};
use crate::nn::network::Activation;
use crate::rng::substream;

/// Which classifier produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Multimodal,
    UnimodalA,
    UnimodalB,
}

impl HeadKind {
    pub fn label(self) -> &'static str {
        match self {
            HeadKind::Multimodal => "multimodal",
            HeadKind::UnimodalA => "unimodal_a",
            HeadKind::UnimodalB => "unimodal_b",
        }
    }

    pub fn all() -> [HeadKind; 3] {
        [HeadKind::Multimodal, HeadKind::UnimodalA, HeadKind::UnimodalB]
    }
}

/// Shared shape of every party's models. Encoders map raw features to a
/// common latent width so fused and unimodal heads stay interchangeable
/// across clients, which aggregation depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelArchitecture {
    pub dim_a: usize,
    pub dim_b: usize,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub n_classes: usize,
}

impl ModelArchitecture {
    pub fn validate(&self) -> Result<()> {
        if self.dim_a == 0 || self.dim_b == 0 || self.encoder_hidden == 0 || self.latent_dim == 0
        {
            return Err(Error::Config(
                "architecture dimensions must be positive".to_string(),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least two classes".to_string()));
        }
        Ok(())
    }

    pub fn encoder_layers(&self, modality: Modality) -> Vec<LayerSpec> {
        let input = match modality {
            Modality::A => self.dim_a,
            Modality::B => self.dim_b,
        };
        vec![
            LayerSpec::new(input, self.encoder_hidden, Activation::Relu),
            LayerSpec::new(self.encoder_hidden, self.latent_dim, Activation::Relu),
        ]
    }

    pub fn unimodal_head_layers(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::new(
            self.latent_dim,
            self.n_classes,
            Activation::Softmax,
        )]
    }

    pub fn multimodal_head_layers(&self) -> Vec<LayerSpec> {
        vec![LayerSpec::new(
            2 * self.latent_dim,
            self.n_classes,
            Activation::Softmax,
        )]
    }
}

/// One party's model set. Any subset may be present; validation pins the
/// dependency rules (a classifier implies its encoder, the fused head
/// implies both encoders with matching widths).
#[derive(Debug, Clone, Default)]
pub struct ModelBundle {
    pub f_a: Option<Network>,
    pub g_a: Option<Network>,
    pub f_b: Option<Network>,
    pub g_b: Option<Network>,
    pub g_m: Option<Network>,
}

impl ModelBundle {
    /// Identically seeded full bundle: every party constructing one from
    /// the same seed starts from the same parameters, which is the shared
    /// initialization the first aggregation round relies on.
    pub fn seeded_full(arch: &ModelArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let bundle = ModelBundle {
            f_a: Some(Network::seeded(
                arch.encoder_layers(Modality::A),
                &mut substream(seed, "init/f_a"),
            )?),
            g_a: Some(Network::seeded(
                arch.unimodal_head_layers(),
                &mut substream(seed, "init/g_a"),
            )?),
            f_b: Some(Network::seeded(
                arch.encoder_layers(Modality::B),
                &mut substream(seed, "init/f_b"),
            )?),
            g_b: Some(Network::seeded(
                arch.unimodal_head_layers(),
                &mut substream(seed, "init/g_b"),
            )?),
            g_m: Some(Network::seeded(
                arch.multimodal_head_layers(),
                &mut substream(seed, "init/g_m"),
            )?),
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// The subset of a full seeded bundle matching one client's holdings.
    pub fn seeded_for_holdings(
        arch: &ModelArchitecture,
        data: &ClientDataset,
        seed: u64,
    ) -> Result<Self> {
        let full = ModelBundle::seeded_full(arch, seed)?;
        let mut bundle = ModelBundle::default();
        if data.has_modality_a() {
            bundle.f_a = full.f_a.clone();
            bundle.g_a = full.g_a.clone();
        }
        if data.has_modality_b() {
            bundle.f_b = full.f_b.clone();
            bundle.g_b = full.g_b.clone();
        }
        if data.has_paired() {
            bundle.f_a = full.f_a;
            bundle.g_a = full.g_a;
            bundle.f_b = full.f_b;
            bundle.g_b = full.g_b;
            bundle.g_m = full.g_m;
        }
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.g_a.is_some() && self.f_a.is_none() {
            return Err(Error::Integrity(
                "modality-A classifier without its encoder".to_string(),
            ));
        }
        if self.g_b.is_some() && self.f_b.is_none() {
            return Err(Error::Integrity(
                "modality-B classifier without its encoder".to_string(),
            ));
        }
        if let (Some(f), Some(g)) = (&self.f_a, &self.g_a) {
            if f.output_dim() != g.input_dim() {
                return Err(Error::shape(
                    "bundle",
                    format!("classifier input {}", f.output_dim()),
                    format!("{}", g.input_dim()),
                ));
            }
        }
        if let (Some(f), Some(g)) = (&self.f_b, &self.g_b) {
            if f.output_dim() != g.input_dim() {
                return Err(Error::shape(
                    "bundle",
                    format!("classifier input {}", f.output_dim()),
                    format!("{}", g.input_dim()),
                ));
            }
        }
        if let Some(g_m) = &self.g_m {
            let (f_a, f_b) = match (&self.f_a, &self.f_b) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Integrity(
                        "fused head requires both encoders".to_string(),
                    ))
                }
            };
            if g_m.input_dim() != f_a.output_dim() + f_b.output_dim() {
                return Err(Error::shape(
                    "bundle",
                    format!(
                        "fused head input {}",
                        f_a.output_dim() + f_b.output_dim()
                    ),
                    format!("{}", g_m.input_dim()),
                ));
            }
        }
        Ok(())
    }

    fn encoder(&self, modality: Modality) -> Option<&Network> {
        match modality {
            Modality::A => self.f_a.as_ref(),
            Modality::B => self.f_b.as_ref(),
        }
    }

    fn head(&self, modality: Modality) -> Option<&Network> {
        match modality {
            Modality::A => self.g_a.as_ref(),
            Modality::B => self.g_b.as_ref(),
        }
    }

    /// Class probabilities from one unimodal pipeline over complete samples.
    pub fn score_unimodal(
        &self,
        modality: Modality,
        samples: &[MultimodalSample],
    ) -> Result<Matrix> {
        let f = self.encoder(modality).ok_or_else(|| {
            Error::Capability(format!("no modality-{} encoder", modality.label()))
        })?;
        let g = self.head(modality).ok_or_else(|| {
            Error::Capability(format!("no modality-{} classifier", modality.label()))
        })?;
        let x = feature_matrix(samples, modality)?;
        g.predict(&f.predict(&x)?)
    }

    /// Class probabilities from the fused pipeline over complete samples.
    pub fn score_multimodal(&self, samples: &[MultimodalSample]) -> Result<Matrix> {
        let (f_a, f_b, g_m) = match (&self.f_a, &self.f_b, &self.g_m) {
            (Some(a), Some(b), Some(m)) => (a, b, m),
            _ => {
                return Err(Error::Capability(
                    "fused scoring needs both encoders and the fused head".to_string(),
                ))
            }
        };
        let h_a = f_a.predict(&feature_matrix(samples, Modality::A)?)?;
        let h_b = f_b.predict(&feature_matrix(samples, Modality::B)?)?;
        g_m.predict(&h_a.hcat(&h_b)?)
    }

    pub fn scores_for(&self, head: HeadKind, samples: &[MultimodalSample]) -> Result<Matrix> {
        match head {
            HeadKind::Multimodal => self.score_multimodal(samples),
            HeadKind::UnimodalA => self.score_unimodal(Modality::A, samples),
            HeadKind::UnimodalB => self.score_unimodal(Modality::B, samples),
        }
    }

    /// Picks the strongest compatible head for one sample and returns class
    /// probabilities. Entirely local: the signature has no way to reach a
    /// server.
    pub fn infer(&self, sample: &MultimodalSample) -> Result<(Vec<f64>, HeadKind)> {
        let can_fused = sample.is_complete()
            && self.g_m.is_some()
            && self.f_a.is_some()
            && self.f_b.is_some();
        if can_fused {
            let probs = self.score_multimodal(std::slice::from_ref(sample))?;
            return Ok((probs.row(0).to_vec(), HeadKind::Multimodal));
        }
        if sample.features_a.is_some() && self.f_a.is_some() && self.g_a.is_some() {
            let x = Matrix::from_rows(&[sample.features_a.clone().unwrap()])?;
            let probs = self
                .g_a
                .as_ref()
                .unwrap()
                .predict(&self.f_a.as_ref().unwrap().predict(&x)?)?;
            return Ok((probs.row(0).to_vec(), HeadKind::UnimodalA));
        }
        if sample.features_b.is_some() && self.f_b.is_some() && self.g_b.is_some() {
            let x = Matrix::from_rows(&[sample.features_b.clone().unwrap()])?;
            let probs = self
                .g_b
                .as_ref()
                .unwrap()
                .predict(&self.f_b.as_ref().unwrap().predict(&x)?)?;
            return Ok((probs.row(0).to_vec(), HeadKind::UnimodalB));
        }
        Err(Error::Capability(format!(
            "no head can score sample {}: holder lacks a matching encoder/classifier",
            sample.id
        )))
    }

    /// Named entries in checkpoint order. Absent members are skipped.
    pub fn entries(&self) -> Vec<(&'static str, &Network)> {
        let mut out = Vec::new();
        for (name, net) in [
            ("f_a", &self.f_a),
            ("g_a", &self.g_a),
            ("f_b", &self.f_b),
            ("g_b", &self.g_b),
            ("g_m", &self.g_m),
        ] {
            if let Some(n) = net {
                out.push((name, n));
            }
        }
        out
    }

    pub fn from_entries(entries: Vec<(String, Network)>) -> Result<Self> {
        let mut bundle = ModelBundle::default();
        for (name, net) in entries {
            let slot = match name.as_str() {
                "f_a" => &mut bundle.f_a,
                "g_a" => &mut bundle.g_a,
                "f_b" => &mut bundle.f_b,
                "g_b" => &mut bundle.g_b,
                "g_m" => &mut bundle.g_m,
                other => {
                    return Err(Error::Checkpoint(format!(
                        "unknown bundle entry '{other}'"
                    )))
                }
            };
            if slot.is_some() {
                return Err(Error::Checkpoint(format!("duplicate bundle entry '{name}'")));
            }
            *slot = Some(net);
        }
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::nn::checkpoint::save_bundle(path, &self.entries())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        ModelBundle::from_entries(crate::nn::checkpoint::load_bundle(path)?)
    }
}

/// Builds the n x d matrix of one modality's features; every sample must
/// carry that modality.
pub fn feature_matrix(samples: &[MultimodalSample], modality: Modality) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.features(modality).map(<[f64]>::to_vec).ok_or_else(|| {
                Error::Data(format!(
                    "sample {} lacks modality-{} features",
                    s.id,
                    modality.label()
                ))
            })
        })
        .collect::<Result<_>>()?;
    Matrix::from_rows(&rows)
}

pub fn label_vector(samples: &[MultimodalSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

#[derive(Clone)]
struct PendingVertical {
    tag: String,
    trace: ForwardTrace,
    latent_dim: usize,
}

/// One simulated participant.
///
/// Everything the outside world may extract from a client goes through
/// [`ClientState::forward_fragmented`] (latent features) or the submit
/// methods (parameters); raw holdings never leave.
#[derive(Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub data: ClientDataset,
    pub bundle: ModelBundle,
    pending: BTreeMap<Modality, PendingVertical>,
    rng: ChaCha12Rng,
}

impl ClientState {
    pub fn new(
        client_id: usize,
        data: ClientDataset,
        arch: &ModelArchitecture,
        seed: u64,
    ) -> Result<Self> {
        data.validate()?;
        let bundle = ModelBundle::seeded_for_holdings(arch, &data, seed)?;
        Ok(ClientState::with_bundle(client_id, data, bundle, seed))
    }

    /// Escape hatch for tests and custom setups: any valid bundle works.
    pub fn with_bundle(
        client_id: usize,
        data: ClientDataset,
        bundle: ModelBundle,
        seed: u64,
    ) -> Self {
        let rng = substream(seed, &format!("client/{client_id}"));
        ClientState {
            client_id,
            data,
            bundle,
            pending: BTreeMap::new(),
            rng,
        }
    }

    fn unimodal_rows(
        &self,
        modality: Modality,
        include_fragmented: bool,
    ) -> Vec<(&MultimodalSample, &[f64])> {
        let (partial, fragmented) = match modality {
            Modality::A => (&self.data.partial_a, &self.data.fragmented_a),
            Modality::B => (&self.data.partial_b, &self.data.fragmented_b),
        };
        let mut rows: Vec<(&MultimodalSample, &[f64])> = Vec::new();
        for s in partial {
            rows.push((s, s.features(modality).expect("bucket invariant")));
        }
        if include_fragmented {
            for s in fragmented {
                rows.push((s, s.features(modality).expect("bucket invariant")));
            }
        }
        rows
    }

    /// One epoch of mini-batch SGD on this modality's single-modality
    /// holdings. Returns the mean training loss, or `None` when the client
    /// has nothing to train on (an explicit no-op).
    pub fn train_local_unimodal(
        &mut self,
        modality: Modality,
        lr: f64,
        batch_size: usize,
        include_fragmented: bool,
    ) -> Result<Option<f64>> {
        let rows = self.unimodal_rows(modality, include_fragmented);
        if rows.is_empty() {
            return Ok(None);
        }
        let n = rows.len();
        let features: Vec<Vec<f64>> = rows.iter().map(|(_, f)| f.to_vec()).collect();
        let labels: Vec<usize> = rows.iter().map(|(s, _)| s.label).collect();
        drop(rows);

        let (f, g) = match modality {
            Modality::A => (self.bundle.f_a.as_mut(), self.bundle.g_a.as_mut()),
            Modality::B => (self.bundle.f_b.as_mut(), self.bundle.g_b.as_mut()),
        };
        let (f, g) = match (f, g) {
            (Some(f), Some(g)) => (f, g),
            _ => {
                return Err(Error::Capability(format!(
                    "client {} holds modality-{} data but no matching models",
                    self.client_id,
                    modality.label()
                )))
            }
        };

        let mut total = 0.0;
        for batch in minibatches(n, batch_size, &mut self.rng) {
            let x = Matrix::from_rows(
                &batch.iter().map(|&i| features[i].clone()).collect::<Vec<_>>(),
            )?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (h, trace_f) = f.forward(&x)?;
            let (probs, trace_g) = g.forward(&h)?;
            let (loss, dl) = loss_and_grad(&probs, &y, LossKind::CategoricalCrossEntropy)?;
            let (g_grad, dh) = g.backward(&trace_g, &dl)?;
            let (f_grad, _) = f.backward(&trace_f, &dh)?;
            g.sgd_step(&g_grad, lr)?;
            f.sgd_step(&f_grad, lr)?;
            total += loss * batch.len() as f64;
        }
        Ok(Some(total / n as f64))
    }

    /// One epoch of mini-batch SGD through the fused stack on paired
    /// holdings: both encoders and the fused head update jointly.
    pub fn train_local_paired(&mut self, lr: f64, batch_size: usize) -> Result<Option<f64>> {
        if self.data.paired.is_empty() {
            return Ok(None);
        }
        let n = self.data.paired.len();
        let xa_all: Vec<Vec<f64>> = self
            .data
            .paired
            .iter()
            .map(|s| s.features_a.clone().expect("paired invariant"))
            .collect();
        let xb_all: Vec<Vec<f64>> = self
            .data
            .paired
            .iter()
            .map(|s| s.features_b.clone().expect("paired invariant"))
            .collect();
        let labels: Vec<usize> = self.data.paired.iter().map(|s| s.label).collect();

        let (f_a, f_b, g_m) = match (
            self.bundle.f_a.as_mut(),
            self.bundle.f_b.as_mut(),
            self.bundle.g_m.as_mut(),
        ) {
            (Some(a), Some(b), Some(m)) => (a, b, m),
            _ => {
                return Err(Error::Capability(format!(
                    "client {} holds paired data but lacks the fused stack",
                    self.client_id
                )))
            }
        };

        let mut total = 0.0;
        for batch in minibatches(n, batch_size, &mut self.rng) {
            let xa =
                Matrix::from_rows(&batch.iter().map(|&i| xa_all[i].clone()).collect::<Vec<_>>())?;
            let xb =
                Matrix::from_rows(&batch.iter().map(|&i| xb_all[i].clone()).collect::<Vec<_>>())?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (h_a, trace_a) = f_a.forward(&xa)?;
            let (h_b, trace_b) = f_b.forward(&xb)?;
            let fused = h_a.hcat(&h_b)?;
            let (probs, trace_g) = g_m.forward(&fused)?;
            let (loss, dl) = loss_and_grad(&probs, &y, LossKind::CategoricalCrossEntropy)?;
            let (gm_grad, d_fused) = g_m.backward(&trace_g, &dl)?;
            let (dh_a, dh_b) = d_fused.hsplit(h_a.cols())?;
            let (fa_grad, _) = f_a.backward(&trace_a, &dh_a)?;
            let (fb_grad, _) = f_b.backward(&trace_b, &dh_b)?;
            g_m.sgd_step(&gm_grad, lr)?;
            f_a.sgd_step(&fa_grad, lr)?;
            f_b.sgd_step(&fb_grad, lr)?;
            total += loss * batch.len() as f64;
        }
        Ok(Some(total / n as f64))
    }

    /// Encodes every fragmented sample of one modality and caches the trace
    /// under `round_tag` for the matching gradient application. The batch
    /// carries labels only on the modality-A side, which is the label
    /// holder by convention.
    pub fn forward_fragmented(
        &mut self,
        modality: Modality,
        round_tag: &str,
    ) -> Result<crate::wire::FeatureBatch> {
        let bucket = match modality {
            Modality::A => &self.data.fragmented_a,
            Modality::B => &self.data.fragmented_b,
        };
        if bucket.is_empty() {
            return Err(Error::Protocol(format!(
                "client {} has no fragmented modality-{} data",
                self.client_id,
                modality.label()
            )));
        }
        if let Some(pending) = self.pending.get(&modality) {
            return Err(Error::Protocol(format!(
                "client {} already sent modality-{} features under tag '{}' and has not \
                 received gradients back",
                self.client_id,
                modality.label(),
                pending.tag
            )));
        }
        let encoder = self.bundle.encoder(modality).ok_or_else(|| {
            Error::Capability(format!(
                "client {} lacks a modality-{} encoder",
                self.client_id,
                modality.label()
            ))
        })?;
        let ids: Vec<u64> = bucket.iter().map(|s| s.id).collect();
        let labels = match modality {
            Modality::A => Some(bucket.iter().map(|s| s.label).collect()),
            Modality::B => None,
        };
        let x = feature_matrix(bucket, modality)?;
        let (features, trace) = encoder.forward(&x)?;
        self.pending.insert(
            modality,
            PendingVertical {
                tag: round_tag.to_string(),
                trace,
                latent_dim: features.cols(),
            },
        );
        let batch = crate::wire::FeatureBatch {
            client_id: self.client_id,
            modality,
            ids,
            features,
            labels,
        };
        batch.validate()?;
        Ok(batch)
    }

    /// Encodes the listed samples for one modality in the given id order,
    /// drawing on both fragmented and paired holdings (paired samples are
    /// vertically usable because the client holds both halves itself).
    /// Same trace discipline as [`ClientState::forward_fragmented`].
    pub fn forward_vertical(
        &mut self,
        modality: Modality,
        ids: &[u64],
        round_tag: &str,
    ) -> Result<crate::wire::FeatureBatch> {
        if ids.is_empty() {
            return Err(Error::Protocol(format!(
                "client {}: empty id list for a vertical forward",
                self.client_id
            )));
        }
        if let Some(pending) = self.pending.get(&modality) {
            return Err(Error::Protocol(format!(
                "client {} already sent modality-{} features under tag '{}' and has not \
                 received gradients back",
                self.client_id,
                modality.label(),
                pending.tag
            )));
        }
        let fragment_bucket = match modality {
            Modality::A => &self.data.fragmented_a,
            Modality::B => &self.data.fragmented_b,
        };
        let mut by_id: BTreeMap<u64, &MultimodalSample> = BTreeMap::new();
        for s in fragment_bucket.iter().chain(self.data.paired.iter()) {
            by_id.insert(s.id, s);
        }
        let mut rows = Vec::with_capacity(ids.len());
        let mut labels = Vec::with_capacity(ids.len());
        for &id in ids {
            let s = by_id.get(&id).ok_or_else(|| {
                Error::Protocol(format!(
                    "client {} was asked to encode sample {id}, which it does not hold",
                    self.client_id
                ))
            })?;
            rows.push(s.features(modality).expect("bucket invariant").to_vec());
            labels.push(s.label);
        }
        let encoder = self.bundle.encoder(modality).ok_or_else(|| {
            Error::Capability(format!(
                "client {} lacks a modality-{} encoder",
                self.client_id,
                modality.label()
            ))
        })?;
        let x = Matrix::from_rows(&rows)?;
        let (features, trace) = encoder.forward(&x)?;
        self.pending.insert(
            modality,
            PendingVertical {
                tag: round_tag.to_string(),
                trace,
                latent_dim: features.cols(),
            },
        );
        let batch = crate::wire::FeatureBatch {
            client_id: self.client_id,
            modality,
            ids: ids.to_vec(),
            features,
            labels: match modality {
                Modality::A => Some(labels),
                Modality::B => None,
            },
        };
        batch.validate()?;
        Ok(batch)
    }

    /// Applies the coordinator's cut-layer gradients through the cached
    /// trace, consuming it. Rows must line up with the emitted batch.
    pub fn apply_feature_gradients(
        &mut self,
        modality: Modality,
        feature_grad: &Matrix,
        round_tag: &str,
        lr: f64,
    ) -> Result<()> {
        let pending = self.pending.get(&modality).ok_or_else(|| {
            Error::Protocol(format!(
                "client {} has no pending modality-{} features for tag '{round_tag}'",
                self.client_id,
                modality.label()
            ))
        })?;
        if pending.tag != round_tag {
            return Err(Error::Protocol(format!(
                "client {} expected gradients for tag '{}', got '{round_tag}'",
                self.client_id, pending.tag
            )));
        }
        let expected_rows = pending.trace.batch_size();
        if feature_grad.rows() != expected_rows || feature_grad.cols() != pending.latent_dim {
            return Err(Error::Protocol(format!(
                "client {}: gradient shape {}x{} does not match emitted features {}x{}",
                self.client_id,
                feature_grad.rows(),
                feature_grad.cols(),
                expected_rows,
                pending.latent_dim
            )));
        }
        let pending = self.pending.remove(&modality).expect("checked above");
        let encoder = match modality {
            Modality::A => self.bundle.f_a.as_mut(),
            Modality::B => self.bundle.f_b.as_mut(),
        }
        .expect("pending trace implies encoder");
        let (grad, _) = encoder.backward(&pending.trace, feature_grad)?;
        encoder.sgd_step(&grad, lr)?;
        Ok(())
    }

    pub fn has_pending(&self, modality: Modality) -> bool {
        self.pending.contains_key(&modality)
    }

    pub fn local_inference(&self, sample: &MultimodalSample) -> Result<(Vec<f64>, HeadKind)> {
        self.bundle.infer(sample)
    }

    /// Flat `encoder then classifier` parameters for one modality, the unit
    /// the aggregation server averages.
    pub fn submit_unimodal(&self, modality: Modality) -> Option<ParamVector> {
        let (f, g) = (self.bundle.encoder(modality)?, self.bundle.head(modality)?);
        Some(ParamVector::concat(&[f.params(), g.params()]))
    }

    /// Fused-head parameters; offered only by clients that train the fused
    /// head on their own paired data.
    pub fn submit_multimodal(&self) -> Option<ParamVector> {
        if self.data.paired.is_empty() {
            return None;
        }
        Some(self.bundle.g_m.as_ref()?.params().clone())
    }

    /// Number of local samples backing one modality's unimodal submission.
    pub fn unimodal_sample_count(&self, modality: Modality, include_fragmented: bool) -> usize {
        self.unimodal_rows(modality, include_fragmented).len() + self.data.paired.len()
    }

    /// Installs blended globals: held heads are overwritten in place, and
    /// every client additionally receives the fused head plus whichever
    /// encoder it was missing, so multimodal inference works anywhere.
    pub fn receive_global(&mut self, global: &ModelBundle) -> Result<()> {
        for (mine, theirs) in [
            (&mut self.bundle.f_a, &global.f_a),
            (&mut self.bundle.g_a, &global.g_a),
            (&mut self.bundle.f_b, &global.f_b),
            (&mut self.bundle.g_b, &global.g_b),
        ] {
            if let Some(current) = mine {
                let incoming = theirs.as_ref().ok_or_else(|| {
                    Error::Protocol(format!(
                        "global bundle lacks a model client {} holds",
                        self.client_id
                    ))
                })?;
                current.set_params(incoming.params().clone())?;
            }
        }
        if let Some(g_m) = &global.g_m {
            self.bundle.g_m = Some(g_m.clone());
            if self.bundle.f_a.is_none() {
                self.bundle.f_a = global.f_a.clone();
            }
            if self.bundle.f_b.is_none() {
                self.bundle.f_b = global.f_b.clone();
            }
        }
        self.bundle.validate()
    }
}

fn minibatches(n: usize, batch_size: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
