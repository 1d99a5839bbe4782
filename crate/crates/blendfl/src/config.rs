//! Experiment configuration files.
//!
//! One TOML document describes a whole experiment: the synthetic world,
//! how it is partitioned over clients, the model shape, the protocol
//! schedule, the seed list, and where artifacts land. Unknown keys are
//! rejected so a typo fails loudly instead of silently running defaults.
//!
//! Every field has a default; an empty file is a valid config and runs
//! the three-client demo world.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::ModelArchitecture;
use crate::data::{Layout, SyntheticSpec};
use crate::error::{Error, Result};
use crate::protocol::{AggregationRule, FleetSpec, Protocol, ProtocolConfig, VerticalHeadPolicy};
use crate::server::ScoreMetric;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// One full training run per seed; everything downstream of the seed
    /// (data, split, partition, init, shuffling) is derived from it.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Validation score defining the rounds_to_target summary column.
    pub target_auroc: f64,
    pub synthetic: SyntheticSection,
    pub partition: PartitionSection,
    pub model: ModelSection,
    pub protocol: ProtocolSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: vec![1],
            output_dir: PathBuf::from("out"),
            target_auroc: 0.9,
            synthetic: SyntheticSection::default(),
            partition: PartitionSection::default(),
            model: ModelSection::default(),
            protocol: ProtocolSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n_samples: usize,
    pub n_classes: usize,
    pub dim_a: usize,
    pub dim_b: usize,
    pub class_separation: f64,
    pub noise_std: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            n_samples: 500,
            n_classes: 4,
            dim_a: 8,
            dim_b: 8,
            class_separation: 3.0,
            noise_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub n_clients: usize,
    pub paired_fraction: f64,
    pub fragmented_fraction: f64,
    pub layout: Layout,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            n_clients: 3,
            paired_fraction: 0.5,
            fragmented_fraction: 0.0,
            layout: Layout::PairedHub,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder_hidden: usize,
    pub latent_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            encoder_hidden: 16,
            latent_dim: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub protocol: Protocol,
    pub rounds: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub local_epochs_per_round: usize,
    pub aggregation: AggregationRule,
    pub fragmented_in_unimodal: bool,
    pub vertical_head_policy: VerticalHeadPolicy,
    pub validation_metric: ScoreMetric,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            protocol: Protocol::Blendfl,
            rounds: 40,
            lr: 0.1,
            batch_size: 16,
            local_epochs_per_round: 1,
            aggregation: AggregationRule::BlendAvg,
            fragmented_in_unimodal: true,
            vertical_head_policy: VerticalHeadPolicy::Retain,
            validation_metric: ScoreMetric::MacroAuroc,
        }
    }
}

fn check_fraction(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
        return Err(Error::Config(format!(
            "{name} must lie in [0, 1], got {value}"
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("config does not parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config does not serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".to_string()));
        }
        check_fraction("partition.paired_fraction", self.partition.paired_fraction)?;
        check_fraction(
            "partition.fragmented_fraction",
            self.partition.fragmented_fraction,
        )?;
        if self.partition.paired_fraction + self.partition.fragmented_fraction > 1.0 {
            return Err(Error::Config(format!(
                "partition.paired_fraction + partition.fragmented_fraction must not exceed 1, \
                 got {} + {}",
                self.partition.paired_fraction, self.partition.fragmented_fraction
            )));
        }
        check_fraction("partition.val_fraction", self.partition.val_fraction)?;
        check_fraction("partition.test_fraction", self.partition.test_fraction)?;
        if self.partition.n_clients == 0 {
            return Err(Error::Config(
                "partition.n_clients must be at least 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.target_auroc) {
            return Err(Error::Config(format!(
                "target_auroc must lie in [0, 1), got {}",
                self.target_auroc
            )));
        }
        // Delegate the rest to the structures the run will actually use.
        self.fleet_spec(self.seeds[0]).synthetic.validate()?;
        self.architecture().validate()?;
        self.protocol_config(self.seeds[0]).validate()?;
        Ok(())
    }

    pub fn architecture(&self) -> ModelArchitecture {
        ModelArchitecture {
            dim_a: self.synthetic.dim_a,
            dim_b: self.synthetic.dim_b,
            encoder_hidden: self.model.encoder_hidden,
            latent_dim: self.model.latent_dim,
            n_classes: self.synthetic.n_classes,
        }
    }

    pub fn fleet_spec(&self, seed: u64) -> FleetSpec {
        FleetSpec {
            synthetic: SyntheticSpec {
                n_samples: self.synthetic.n_samples,
                n_classes: self.synthetic.n_classes,
                dim_a: self.synthetic.dim_a,
                dim_b: self.synthetic.dim_b,
                class_separation: self.synthetic.class_separation,
                noise_std: self.synthetic.noise_std,
                seed,
            },
            n_clients: self.partition.n_clients,
            paired_fraction: self.partition.paired_fraction,
            fragmented_fraction: self.partition.fragmented_fraction,
            layout: self.partition.layout,
            val_fraction: self.partition.val_fraction,
            test_fraction: self.partition.test_fraction,
            arch: self.architecture(),
            metric: self.protocol.validation_metric,
            seed,
        }
    }

    pub fn protocol_config(&self, seed: u64) -> ProtocolConfig {
        ProtocolConfig {
            protocol: self.protocol.protocol,
            rounds: self.protocol.rounds,
            lr: self.protocol.lr,
            batch_size: self.protocol.batch_size,
            local_epochs_per_round: self.protocol.local_epochs_per_round,
            aggregation: self.protocol.aggregation,
            seed,
            fragmented_in_unimodal: self.protocol.fragmented_in_unimodal,
            vertical_head_policy: self.protocol.vertical_head_policy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let parsed = ExperimentConfig::parse("").unwrap();
        assert_eq!(parsed, ExperimentConfig::default());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut config = ExperimentConfig::default();
        config.seeds = vec![3, 5];
        config.partition.layout = Layout::Spread;
        config.protocol.protocol = Protocol::Splitnn;
        config.protocol.aggregation = AggregationRule::FedAvg;
        config.protocol.vertical_head_policy = VerticalHeadPolicy::SyncToBlended;
        let text = config.to_toml().unwrap();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::parse("nrounds = 3\n").unwrap_err();
        assert!(err.to_string().contains("does not parse"), "{err}");
    }

    #[test]
    fn out_of_range_fraction_names_the_field() {
        let err =
            ExperimentConfig::parse("[partition]\npaired_fraction = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("partition.paired_fraction"), "{err}");
    }

    #[test]
    fn parse_error_is_line_anchored() {
        let err = ExperimentConfig::parse("[protocol]\nrounds = \"many\"\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let err = ExperimentConfig::parse("seeds = []\n").unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
    }

    #[test]
    fn mix_exceeding_one_is_rejected() {
        let text = "[partition]\npaired_fraction = 0.8\nfragmented_fraction = 0.4\n";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(err.to_string().contains("must not exceed 1"), "{err}");
    }

    #[test]
    fn derived_structures_share_the_seed() {
        let config = ExperimentConfig::default();
        let fleet = config.fleet_spec(9);
        let protocol = config.protocol_config(9);
        assert_eq!(fleet.seed, 9);
        assert_eq!(fleet.synthetic.seed, 9);
        assert_eq!(protocol.seed, 9);
    }
}
