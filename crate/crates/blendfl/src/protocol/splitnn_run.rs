//! Cut-layer baseline: one shared client-side encoder pair is relayed
//! sequentially through the clients holding aligned rows, and a single
//! server-side classifier learns from their joined features. Each epoch
//! cycles through holder groups in shuffled order; the group's holders
//! train the current relay weights on their rows, then pass them on.
//! Paired samples are self-aligned (one client holds both halves),
//! fragments align through the intersection table, and single-modality
//! samples cannot participate at all. The whole run equals centralized
//! training of the composed network under the same row-visitation order.
//! Prediction always needs the server head, so this baseline has no
//! decentralized inference.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::client::{ClientState, HeadKind, ModelBundle};
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::report::RoundReport;
use crate::rng::substream;
use crate::server::VerticalServer;
use crate::wire::TraceEvent;

use super::{
    client_mut, head_test_metrics, shuffled_minibatches, Fleet, LossLedger, Protocol,
    ProtocolConfig, ProtocolRun,
};

fn encoder_of(c: &ClientState, modality: Modality) -> Option<&Network> {
    match modality {
        Modality::A => c.bundle.f_a.as_ref(),
        Modality::B => c.bundle.f_b.as_ref(),
    }
}

fn set_encoder(c: &mut ClientState, modality: Modality, net: Network) {
    match modality {
        Modality::A => c.bundle.f_a = Some(net),
        Modality::B => c.bundle.f_b = Some(net),
    }
}

fn composed_bundle(shared_a: &Network, shared_b: &Network, head: &Network) -> ModelBundle {
    ModelBundle {
        f_a: Some(shared_a.clone()),
        f_b: Some(shared_b.clone()),
        g_m: Some(head.clone()),
        ..ModelBundle::default()
    }
}

pub fn run_splitnn(fleet: &mut Fleet, config: &ProtocolConfig) -> Result<ProtocolRun> {
    config.validate()?;
    let Fleet {
        clients,
        vertical,
        aggregation,
        test,
    } = fleet;

    // Paired samples join the fragment alignment as self-aligned entries.
    let mut alignment = vertical.alignment().clone();
    for c in clients.iter() {
        for s in &c.data.paired {
            alignment.insert(s.id, (c.client_id, c.client_id));
        }
    }
    if alignment.is_empty() {
        return Err(Error::Run(
            "the cut-layer baseline needs paired or fragmented samples; none exist".to_string(),
        ));
    }
    let wasted_samples: usize = clients
        .iter()
        .map(|c| c.data.partial_a.len() + c.data.partial_b.len())
        .sum();

    // The relayed client-side portion starts from the common seeded init.
    let global = aggregation.global();
    let (Some(mut shared_a), Some(mut shared_b)) = (global.f_a.clone(), global.f_b.clone()) else {
        return Err(Error::Run(
            "the shared initial bundle is missing an encoder".to_string(),
        ));
    };

    // Aligned rows grouped by their holder pair; the relay visits one
    // group at a time, so each minibatch has a single holder per side.
    let mut groups: BTreeMap<(usize, usize), Vec<u64>> = BTreeMap::new();
    for (&id, &pair) in &alignment {
        groups.entry(pair).or_default().push(id);
    }
    let group_keys: Vec<(usize, usize)> = groups.keys().copied().collect();

    let mut server = VerticalServer::new(vertical.head().clone(), alignment.clone());
    let mut shuffle_rng = substream(config.seed, "splitnn/shuffle");

    let mut reports = Vec::new();
    let mut trace = Vec::new();
    for round in 1..=config.rounds {
        let mut losses = LossLedger::default();
        for epoch in 0..config.local_epochs_per_round {
            let mut order = group_keys.clone();
            order.shuffle(&mut shuffle_rng);
            for (gi, pair) in order.into_iter().enumerate() {
                let (holder_a, holder_b) = pair;
                for (mb, chunk) in
                    shuffled_minibatches(&groups[&pair], config.batch_size, &mut shuffle_rng)
                        .into_iter()
                        .enumerate()
                {
                    let tag = format!("r{round}.{epoch}.{gi}.{mb}");
                    for (cid, modality, shared) in [
                        (holder_a, Modality::A, &shared_a),
                        (holder_b, Modality::B, &shared_b),
                    ] {
                        let c = client_mut(clients, cid)?;
                        // Relay: the holder trains the current shared weights.
                        set_encoder(c, modality, shared.clone());
                        let batch = c.forward_vertical(modality, &chunk, &tag)?;
                        server.stage_features(batch)?;
                        trace.push(TraceEvent::FeaturesToServer);
                    }
                    let out = server.train_on_staged(config.lr)?;

                    if let Some(loss) = out.loss {
                        losses.add("split", loss, out.n_aligned as f64);
                    }
                    for fg in out.gradients {
                        let c = client_mut(clients, fg.client_id)?;
                        c.apply_feature_gradients(fg.modality, &fg.grad, &tag, config.lr)?;
                        trace.push(TraceEvent::GradientsToClients);
                    }
                    for (cid, modality, shared) in [
                        (holder_a, Modality::A, &mut shared_a),
                        (holder_b, Modality::B, &mut shared_b),
                    ] {
                        if let Some(updated) = clients
                            .iter()
                            .find(|c| c.client_id == cid)
                            .and_then(|c| encoder_of(c, modality))
                        {
                            *shared = updated.clone();
                        }
                    }
                }
            }
        }

        let bundle = composed_bundle(&shared_a, &shared_b, server.head());
        let (val_auroc, _) = head_test_metrics(&bundle, HeadKind::Multimodal, aggregation.validation())?;
        let (test_auroc, test_auprc) = head_test_metrics(&bundle, HeadKind::Multimodal, test)?;
        let notes = if round == 1 {
            vec![format!(
                "prediction requires the server head; {wasted_samples} single-modality \
                 samples unusable"
            )]
        } else {
            Vec::new()
        };
        reports.push(RoundReport {
            round,
            protocol: Protocol::Splitnn.label().to_string(),
            losses: losses.finish(),
            validation: BTreeMap::from([("multimodal".to_string(), val_auroc)]),
            test_auroc: BTreeMap::from([("multimodal".to_string(), test_auroc)]),
            test_auprc: BTreeMap::from([("multimodal".to_string(), test_auprc)]),
            aggregation: BTreeMap::new(),
            notes,
        });
    }

    // Whoever trained a side of the relay ends the run with its final state.
    let holders_a: std::collections::BTreeSet<usize> =
        alignment.values().map(|&(a, _)| a).collect();
    let holders_b: std::collections::BTreeSet<usize> =
        alignment.values().map(|&(_, b)| b).collect();
    for c in clients.iter_mut() {
        if holders_a.contains(&c.client_id) {
            set_encoder(c, Modality::A, shared_a.clone());
        }
        if holders_b.contains(&c.client_id) {
            set_encoder(c, Modality::B, shared_b.clone());
        }
    }

    let head = server.head().clone();
    vertical.replace_head(head.clone());
    Ok(ProtocolRun {
        reports,
        global: None,
        server_head: Some(head),
        trace,
        wasted_samples,
    })
}
