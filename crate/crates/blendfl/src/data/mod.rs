//! Multimodal samples, synthetic data, and cross-client partitioning.

pub mod holdout;
pub mod io;
pub mod partition;
pub mod synthetic;

pub use holdout::holdout_split;
pub use partition::{intersect_fragmented, partition, partition_with_layout, Layout};
pub use synthetic::generate_synthetic;

use crate::error::{Error, Result};

/// The two feature spaces a sample can live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    A,
    B,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::A => Modality::B,
            Modality::B => Modality::A,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Modality::A => "A",
            Modality::B => "B",
        }
    }
}

/// One labeled sample with up to two feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub id: u64,
    pub features_a: Option<Vec<f64>>,
    pub features_b: Option<Vec<f64>>,
    pub label: usize,
}

impl MultimodalSample {
    pub fn new(
        id: u64,
        features_a: Option<Vec<f64>>,
        features_b: Option<Vec<f64>>,
        label: usize,
    ) -> Result<Self> {
        if features_a.is_none() && features_b.is_none() {
            return Err(Error::Data(format!(
                "sample {id} carries no features in either modality"
            )));
        }
        Ok(MultimodalSample {
            id,
            features_a,
            features_b,
            label,
        })
    }

    pub fn features(&self, modality: Modality) -> Option<&[f64]> {
        match modality {
            Modality::A => self.features_a.as_deref(),
            Modality::B => self.features_b.as_deref(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.features_a.is_some() && self.features_b.is_some()
    }

    /// Copy with only the given modality kept.
    pub fn stripped_to(&self, modality: Modality) -> Result<Self> {
        let features = self
            .features(modality)
            .ok_or_else(|| {
                Error::Data(format!(
                    "sample {} has no modality-{} features to keep",
                    self.id,
                    modality.label()
                ))
            })?
            .to_vec();
        let (a, b) = match modality {
            Modality::A => (Some(features), None),
            Modality::B => (None, Some(features)),
        };
        MultimodalSample::new(self.id, a, b, self.label)
    }
}

/// How a sample ended up at a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    Paired,
    FragmentedA,
    FragmentedB,
    PartialA,
    PartialB,
}

/// One client's holdings, bucketed by how each sample arrived.
///
/// Paired samples carry both modalities. Fragmented buckets hold one half
/// of a sample whose other half lives at a different client under the same
/// id. Partial buckets hold samples that only ever had one modality here.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClientDataset {
    pub client_id: usize,
    pub paired: Vec<MultimodalSample>,
    pub fragmented_a: Vec<MultimodalSample>,
    pub fragmented_b: Vec<MultimodalSample>,
    pub partial_a: Vec<MultimodalSample>,
    pub partial_b: Vec<MultimodalSample>,
}

impl ClientDataset {
    pub fn new(client_id: usize) -> Self {
        ClientDataset {
            client_id,
            ..ClientDataset::default()
        }
    }

    pub fn n_samples(&self) -> usize {
        self.paired.len()
            + self.fragmented_a.len()
            + self.fragmented_b.len()
            + self.partial_a.len()
            + self.partial_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples() == 0
    }

    /// True when any holding includes modality-A features.
    pub fn has_modality_a(&self) -> bool {
        !self.paired.is_empty() || !self.fragmented_a.is_empty() || !self.partial_a.is_empty()
    }

    pub fn has_modality_b(&self) -> bool {
        !self.paired.is_empty() || !self.fragmented_b.is_empty() || !self.partial_b.is_empty()
    }

    pub fn has_paired(&self) -> bool {
        !self.paired.is_empty()
    }

    pub fn iter_all(&self) -> impl Iterator<Item = (PartitionKind, &MultimodalSample)> {
        self.paired
            .iter()
            .map(|s| (PartitionKind::Paired, s))
            .chain(self.fragmented_a.iter().map(|s| (PartitionKind::FragmentedA, s)))
            .chain(self.fragmented_b.iter().map(|s| (PartitionKind::FragmentedB, s)))
            .chain(self.partial_a.iter().map(|s| (PartitionKind::PartialA, s)))
            .chain(self.partial_b.iter().map(|s| (PartitionKind::PartialB, s)))
    }

    /// Checks bucket/modality agreement and per-client id uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (kind, sample) in self.iter_all() {
            let ok = match kind {
                PartitionKind::Paired => sample.is_complete(),
                PartitionKind::FragmentedA | PartitionKind::PartialA => {
                    sample.features_a.is_some() && sample.features_b.is_none()
                }
                PartitionKind::FragmentedB | PartitionKind::PartialB => {
                    sample.features_b.is_some() && sample.features_a.is_none()
                }
            };
            if !ok {
                return Err(Error::Integrity(format!(
                    "client {} holds sample {} with modalities that do not match its bucket",
                    self.client_id, sample.id
                )));
            }
            if !seen.insert(sample.id) {
                return Err(Error::Integrity(format!(
                    "client {} holds sample {} twice",
                    self.client_id, sample.id
                )));
            }
        }
        Ok(())
    }
}

/// Knobs for the synthetic two-modality generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    /// Minimum distance between any two class means, per modality.
    pub class_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Data("n_samples must be positive".to_string()));
        }
        if self.n_classes < 2 {
            return Err(Error::Data("n_classes must be at least 2".to_string()));
        }
        if self.dim_a < 2 || self.dim_b < 2 {
            return Err(Error::Data(
                "modality dimensions must be at least 2".to_string(),
            ));
        }
        if !(self.class_separation > 0.0) {
            return Err(Error::Data(
                "class_separation must be positive".to_string(),
            ));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Data(
                "noise_std must be finite and non-negative".to_string(),
            ));
        }
        Ok(())
    }
}
