//! The only values allowed to cross the client/server boundary: latent
//! feature batches and flat parameter vectors. Raw features and labels for
//! samples a party does not hold never appear in these types, which is what
//! keeps the privacy story checkable by construction.

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Latent features for one client's fragmented samples of one modality.
///
/// Labels ride along only when the sender is the label holder for those
/// samples (the modality-A side, by convention).
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub client_id: usize,
    pub modality: Modality,
    pub ids: Vec<u64>,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl FeatureBatch {
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.features.rows() {
            return Err(Error::shape(
                "feature batch",
                format!("{} feature rows", self.ids.len()),
                format!("{} rows", self.features.rows()),
            ));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.ids.len() {
                return Err(Error::shape(
                    "feature batch",
                    format!("{} labels", self.ids.len()),
                    format!("{} labels", labels.len()),
                ));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for &id in &self.ids {
            if !seen.insert(id) {
                return Err(Error::Integrity(format!(
                    "feature batch from client {} repeats sample {id}",
                    self.client_id
                )));
            }
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite(format!(
                "feature batch from client {} contains non-finite values",
                self.client_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Message kinds recorded while a protocol runs, in emission order.
///
/// Inference paths record nothing; a run whose trace stays empty is one
/// that never talked to a server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    /// Phase 1: a client trained its unimodal models locally.
    LocalUnimodal,
    /// Phase 2 upstream: a client sent latent features to the coordinator.
    FeaturesToServer,
    /// Phase 2 downstream: the coordinator returned cut-layer gradients.
    GradientsToClients,
    /// Phase 3: a client trained its fused multimodal model locally.
    LocalPaired,
    /// A client submitted model parameters for aggregation.
    WeightsToServer,
    /// The aggregation server redistributed blended models.
    GlobalsToClients,
}
