//! Horizontal-averaging baseline: every client trains whatever it holds
//! locally (fragment halves count as single-modality samples), then each
//! head is count-weighted-averaged over the clients possessing it. No
//! vertical path, so fragment pairs are never joined.

use crate::data::Modality;
use crate::error::Result;
use crate::report::RoundReport;
use crate::server::ClientSubmission;
use crate::wire::TraceEvent;

use super::{
    build_submission, diagnostics_map, global_report_metrics, submission_is_empty, Fleet,
    LossLedger, Protocol, ProtocolConfig, ProtocolRun,
};

pub fn run_fedavg(fleet: &mut Fleet, config: &ProtocolConfig) -> Result<ProtocolRun> {
    config.validate()?;
    let Fleet {
        clients,
        aggregation,
        test,
        ..
    } = fleet;
    let mut reports = Vec::new();
    let mut trace = Vec::new();

    for round in 1..=config.rounds {
        let mut losses = LossLedger::default();
        for _rep in 0..config.local_epochs_per_round {
            for c in clients.iter_mut() {
                let mut trained = false;
                for m in [Modality::A, Modality::B] {
                    let phase = match m {
                        Modality::A => "partial_a",
                        Modality::B => "partial_b",
                    };
                    if let Some(loss) =
                        c.train_local_unimodal(m, config.lr, config.batch_size, true)?
                    {
                        losses.add(phase, loss, 1.0);
                        trained = true;
                    }
                }
                if trained {
                    trace.push(TraceEvent::LocalUnimodal);
                }
                if let Some(loss) = c.train_local_paired(config.lr, config.batch_size)? {
                    losses.add("paired", loss, 1.0);
                    trace.push(TraceEvent::LocalPaired);
                }
            }
        }

        let submissions: Vec<ClientSubmission> =
            clients.iter().map(|c| build_submission(c, true)).collect();
        for s in &submissions {
            if !submission_is_empty(s) {
                trace.push(TraceEvent::WeightsToServer);
            }
        }
        let agg = aggregation.average_round(&submissions, None)?;
        let global = aggregation.global().clone();
        for c in clients.iter_mut() {
            c.receive_global(&global)?;
            trace.push(TraceEvent::GlobalsToClients);
        }

        let (validation, test_auroc, test_auprc) = global_report_metrics(aggregation, test)?;
        reports.push(RoundReport {
            round,
            protocol: Protocol::Fedavg.label().to_string(),
            losses: losses.finish(),
            validation,
            test_auroc,
            test_auprc,
            aggregation: diagnostics_map(&agg),
            notes: Vec::new(),
        });
    }

    Ok(ProtocolRun {
        reports,
        global: Some(aggregation.global().clone()),
        server_head: None,
        trace,
        wasted_samples: 0,
    })
}
