//! Ablation grids: sweep the paired/partial mix and the client count,
//! running every protocol on identical seeded worlds per cell.

use crate::error::{Error, Result};
use crate::report::RoundReport;

use super::{
    rounds_to_target, run_protocol, Fleet, FleetSpec, Protocol, ProtocolConfig,
};

/// The round whose fused-head validation score peaked; metrics are read
/// there rather than at the final round, which mirrors how a practitioner
/// would pick a checkpoint and keeps late-run overfitting out of the table.
pub fn best_validation_report(reports: &[RoundReport]) -> Option<&RoundReport> {
    reports.iter().max_by(|a, b| {
        let va = a.validation.get("multimodal").copied().unwrap_or(f64::MIN);
        let vb = b.validation.get("multimodal").copied().unwrap_or(f64::MIN);
        va.partial_cmp(&vb).unwrap_or(std::cmp::Ordering::Equal)
    })
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    /// Base world; each cell overrides the mix or the client count.
    pub fleet: FleetSpec,
    pub protocol: ProtocolConfig,
    /// Paired/partial percentage pairs, e.g. (90, 10).
    pub ratios: Vec<(u32, u32)>,
    pub client_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Validation score that defines rounds-to-target.
    pub target: f64,
}

/// The paper-defaults sweep: five paired/partial mixes, three fleet sizes.
pub fn default_ratios() -> Vec<(u32, u32)> {
    vec![(90, 10), (70, 30), (50, 50), (30, 70), (10, 90)]
}

pub fn default_client_counts() -> Vec<usize> {
    vec![4, 8, 12]
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub protocol: String,
    pub ratio: String,
    pub n_clients: usize,
    pub seed: u64,
    /// Head name, or "failed" when the cell errored.
    pub head: String,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub rounds_to_target: Option<usize>,
}

struct Cell {
    ratio_label: String,
    paired_fraction: f64,
    n_clients: usize,
    n_samples: usize,
}

fn ratio_label(paired: f64, partial: f64) -> String {
    let total = paired + partial;
    if total <= 0.0 {
        return "0/0".to_string();
    }
    format!(
        "{:.0}/{:.0}",
        100.0 * paired / total,
        100.0 * partial / total
    )
}

/// Runs every (cell, seed, protocol) combination and flattens the test
/// metrics at the best-validation round into one row per head. A failing
/// run contributes a single row tagged "failed" instead of aborting the
/// sweep.
pub fn run_ablation_grid(spec: &GridSpec) -> Result<Vec<GridRow>> {
    if spec.ratios.is_empty() && spec.client_counts.is_empty() {
        return Err(Error::Config(
            "nothing to sweep: both the ratio and client-count lists are empty".to_string(),
        ));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("seed list must not be empty".to_string()));
    }

    let fragmented = spec.fleet.fragmented_fraction;
    let mut cells = Vec::new();
    for &(p, q) in &spec.ratios {
        if p + q == 0 {
            return Err(Error::Config("ratio 0/0 is meaningless".to_string()));
        }
        let paired_share = p as f64 / (p + q) as f64;
        cells.push(Cell {
            ratio_label: format!("{p}/{q}"),
            // The sweep splits whatever the fragment share leaves over.
            paired_fraction: paired_share * (1.0 - fragmented),
            n_clients: spec.fleet.n_clients,
            n_samples: spec.fleet.synthetic.n_samples,
        });
    }
    let base_partial = 1.0 - spec.fleet.paired_fraction - fragmented;
    for &n in &spec.client_counts {
        if n == 0 {
            return Err(Error::Config("client count 0 is meaningless".to_string()));
        }
        cells.push(Cell {
            ratio_label: ratio_label(spec.fleet.paired_fraction, base_partial),
            paired_fraction: spec.fleet.paired_fraction,
            n_clients: n,
            // Hold the per-client data budget constant across fleet sizes;
            // otherwise bigger fleets just mean thinner shards and every
            // protocol degrades together.
            n_samples: spec.fleet.synthetic.n_samples * n / spec.fleet.n_clients,
        });
    }

    let mut rows = Vec::new();
    for cell in &cells {
        for &seed in &spec.seeds {
            for protocol in [Protocol::Blendfl, Protocol::Fedavg, Protocol::Splitnn] {
                let mut fleet_spec = spec.fleet.clone();
                fleet_spec.paired_fraction = cell.paired_fraction;
                fleet_spec.n_clients = cell.n_clients;
                fleet_spec.synthetic.n_samples = cell.n_samples;
                fleet_spec.seed = seed;
                let mut config = spec.protocol.clone();
                config.protocol = protocol;
                config.seed = seed;

                let outcome = Fleet::build(&fleet_spec)
                    .and_then(|mut fleet| run_protocol(&mut fleet, &config));
                match outcome {
                    Ok(run) => {
                        let last = best_validation_report(&run.reports)
                            .ok_or_else(|| Error::Run("run produced no rounds".to_string()))?;
                        for (head, &auroc) in &last.test_auroc {
                            rows.push(GridRow {
                                protocol: protocol.label().to_string(),
                                ratio: cell.ratio_label.clone(),
                                n_clients: cell.n_clients,
                                seed,
                                head: head.clone(),
                                auroc: Some(auroc),
                                auprc: last.test_auprc.get(head).copied(),
                                rounds_to_target: rounds_to_target(
                                    &run.reports,
                                    head,
                                    spec.target,
                                ),
                            });
                        }
                    }
                    Err(err) => {
                        rows.push(GridRow {
                            protocol: protocol.label().to_string(),
                            ratio: cell.ratio_label.clone(),
                            n_clients: cell.n_clients,
                            seed,
                            head: format!("failed: {err}"),
                            auroc: None,
                            auprc: None,
                            rounds_to_target: None,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}
