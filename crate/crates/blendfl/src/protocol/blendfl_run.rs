//! The blended protocol driver: per round, clients train single-modality
//! models on their partial holdings, the coordinator trains the shared
//! head over aligned fragment features, clients train their fused stacks
//! on paired holdings, and the aggregation server combines and
//! redistributes everything.

use crate::data::Modality;
use crate::error::Result;
use crate::nn::Network;
use crate::report::RoundReport;
use crate::rng::substream;
use crate::server::ClientSubmission;
use crate::wire::TraceEvent;

use super::{
    build_submission, client_mut, diagnostics_map, global_report_metrics, submission_is_empty,
    AggregationRule, Fleet, LossLedger, Protocol, ProtocolConfig, ProtocolRun, StopRule,
    VerticalHeadPolicy,
};

pub fn run_blendfl(fleet: &mut Fleet, config: &ProtocolConfig) -> Result<ProtocolRun> {
    run_blendfl_stopping(fleet, config, None)
}

/// Like [`run_blendfl`] but ends the run early once `stop` is satisfied,
/// which the convergence experiments use to avoid wasted rounds.
pub fn run_blendfl_stopping(
    fleet: &mut Fleet,
    config: &ProtocolConfig,
    stop: Option<StopRule>,
) -> Result<ProtocolRun> {
    config.validate()?;
    let Fleet {
        clients,
        vertical,
        aggregation,
        test,
    } = fleet;
    let mut reports = Vec::new();
    let mut trace = Vec::new();
    let has_vertical = !vertical.alignment().is_empty();
    let n_aligned = vertical.alignment().len();

    for round in 1..=config.rounds {
        let mut losses = LossLedger::default();
        for rep in 0..config.local_epochs_per_round {
            let tag = format!("r{round}.{rep}");

            // Single-modality phase.
            for c in clients.iter_mut() {
                let mut trained = false;
                for m in [Modality::A, Modality::B] {
                    let phase = match m {
                        Modality::A => "partial_a",
                        Modality::B => "partial_b",
                    };
                    if let Some(loss) = c.train_local_unimodal(
                        m,
                        config.lr,
                        config.batch_size,
                        config.fragmented_in_unimodal,
                    )? {
                        losses.add(phase, loss, 1.0);
                        trained = true;
                    }
                }
                if trained {
                    trace.push(TraceEvent::LocalUnimodal);
                }
            }

            // Vertical phase: one full-batch pass over every fragment.
            if has_vertical {
                let mut staged_any = false;
                for c in clients.iter_mut() {
                    for m in [Modality::A, Modality::B] {
                        let holds = match m {
                            Modality::A => !c.data.fragmented_a.is_empty(),
                            Modality::B => !c.data.fragmented_b.is_empty(),
                        };
                        if holds {
                            let batch = c.forward_fragmented(m, &tag)?;
                            vertical.stage_features(batch)?;
                            trace.push(TraceEvent::FeaturesToServer);
                            staged_any = true;
                        }
                    }
                }
                if staged_any {
                    let out = vertical.train_on_staged(config.lr)?;
                    if let Some(loss) = out.loss {
                        losses.add("vertical", loss, 1.0);
                    }
                    for fg in out.gradients {
                        let c = client_mut(clients, fg.client_id)?;
                        c.apply_feature_gradients(fg.modality, &fg.grad, &tag, config.lr)?;
                        trace.push(TraceEvent::GradientsToClients);
                    }
                }
            }

            // Paired phase: fused stacks train end to end locally.
            for c in clients.iter_mut() {
                if let Some(loss) = c.train_local_paired(config.lr, config.batch_size)? {
                    losses.add("paired", loss, 1.0);
                    trace.push(TraceEvent::LocalPaired);
                }
            }
        }

        // Aggregation and redistribution.
        let submissions: Vec<ClientSubmission> = clients
            .iter()
            .map(|c| build_submission(c, config.fragmented_in_unimodal))
            .collect();
        for s in &submissions {
            if !submission_is_empty(s) {
                trace.push(TraceEvent::WeightsToServer);
            }
        }
        let agg = match config.aggregation {
            AggregationRule::BlendAvg => {
                let head = has_vertical.then(|| vertical.head().clone());
                aggregation.aggregate_round(&submissions, head.as_ref())?
            }
            AggregationRule::FedAvg => {
                let head = has_vertical.then(|| vertical.head().clone());
                aggregation.average_round(&submissions, head.as_ref().map(|h| (h, n_aligned)))?
            }
        };
        let global = aggregation.global().clone();
        for c in clients.iter_mut() {
            c.receive_global(&global)?;
            trace.push(TraceEvent::GlobalsToClients);
        }
        match config.vertical_head_policy {
            VerticalHeadPolicy::Retain => {}
            VerticalHeadPolicy::SyncToBlended => {
                if let Some(g_m) = &global.g_m {
                    vertical.set_head_params(g_m.params().clone())?;
                }
            }
            VerticalHeadPolicy::Reinitialize => {
                let layers = vertical.head().layers().to_vec();
                let fresh = Network::seeded(
                    layers,
                    &mut substream(config.seed, &format!("reinit/g_v/{round}")),
                )?;
                vertical.replace_head(fresh);
            }
        }

        let (validation, test_auroc, test_auprc) = global_report_metrics(aggregation, test)?;
        let report = RoundReport {
            round,
            protocol: Protocol::Blendfl.label().to_string(),
            losses: losses.finish(),
            validation,
            test_auroc,
            test_auprc,
            aggregation: diagnostics_map(&agg),
            notes: Vec::new(),
        };
        let reached = stop.is_some_and(|s| {
            report
                .validation
                .get(s.head.label())
                .is_some_and(|&v| v >= s.target)
        });
        reports.push(report);
        if reached {
            break;
        }
    }

    Ok(ProtocolRun {
        reports,
        global: Some(aggregation.global().clone()),
        server_head: None,
        trace,
        wasted_samples: 0,
    })
}
