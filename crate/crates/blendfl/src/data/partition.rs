//! Splits a complete dataset across clients into paired, fragmented, and
//! partial holdings.
//!
//! Requested fractions are honored to within one sample. Fragmented samples
//! are split by modality across two distinct clients under the same id;
//! partial samples are stripped to a single modality (alternating A and B)
//! before assignment, so the dropped half never exists anywhere.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Modality, MultimodalSample};
use crate::error::{Error, Result};
use crate::rng::substream;

/// Who ends up holding what.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Everything round-robins over all clients.
    Spread,
    /// Client 0 holds all paired data; the rest specialize in one modality
    /// (odd client index: A, even: B). Needs at least 3 clients.
    PairedHub,
}

pub fn partition(
    samples: &[MultimodalSample],
    n_clients: usize,
    paired_fraction: f64,
    fragmented_fraction: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    partition_with_layout(
        samples,
        n_clients,
        paired_fraction,
        fragmented_fraction,
        seed,
        Layout::Spread,
    )
}

pub fn partition_with_layout(
    samples: &[MultimodalSample],
    n_clients: usize,
    paired_fraction: f64,
    fragmented_fraction: f64,
    seed: u64,
    layout: Layout,
) -> Result<Vec<ClientDataset>> {
    validate_request(samples, n_clients, paired_fraction, fragmented_fraction, layout)?;

    let n = samples.len();
    let (n_paired, n_fragmented) = realized_counts(n, paired_fraction, fragmented_fraction);

    let mut rng = substream(seed, "partition");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut clients: Vec<ClientDataset> = (0..n_clients).map(ClientDataset::new).collect();

    // Ordered distinct client pairs, shuffled once then cycled, so fragment
    // halves land on two different clients with even load.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..n_clients {
        for b in 0..n_clients {
            if a != b {
                pairs.push((a, b));
            }
        }
    }
    pairs.shuffle(&mut rng);

    let (a_group, b_group) = modality_groups(n_clients);

    for (slot, &idx) in order[..n_paired].iter().enumerate() {
        let target = match layout {
            Layout::Spread => slot % n_clients,
            Layout::PairedHub => 0,
        };
        clients[target].paired.push(samples[idx].clone());
    }

    for (slot, &idx) in order[n_paired..n_paired + n_fragmented].iter().enumerate() {
        let (holder_a, holder_b) = match layout {
            Layout::Spread => pairs[slot % pairs.len()],
            Layout::PairedHub => (
                a_group[slot % a_group.len()],
                b_group[slot % b_group.len()],
            ),
        };
        clients[holder_a]
            .fragmented_a
            .push(samples[idx].stripped_to(Modality::A)?);
        clients[holder_b]
            .fragmented_b
            .push(samples[idx].stripped_to(Modality::B)?);
    }

    let mut partial_a_slot = 0usize;
    let mut partial_b_slot = 0usize;
    for (slot, &idx) in order[n_paired + n_fragmented..].iter().enumerate() {
        let modality = if slot % 2 == 0 { Modality::A } else { Modality::B };
        let sample = samples[idx].stripped_to(modality)?;
        match (layout, modality) {
            (Layout::Spread, Modality::A) => {
                clients[slot % n_clients].partial_a.push(sample);
            }
            (Layout::Spread, Modality::B) => {
                clients[slot % n_clients].partial_b.push(sample);
            }
            (Layout::PairedHub, Modality::A) => {
                clients[a_group[partial_a_slot % a_group.len()]]
                    .partial_a
                    .push(sample);
                partial_a_slot += 1;
            }
            (Layout::PairedHub, Modality::B) => {
                clients[b_group[partial_b_slot % b_group.len()]]
                    .partial_b
                    .push(sample);
                partial_b_slot += 1;
            }
        }
    }

    for c in &clients {
        if c.is_empty() {
            return Err(Error::Partition(format!(
                "client {} would receive no samples; fewer clients or more data needed",
                c.client_id
            )));
        }
        c.validate()?;
    }
    Ok(clients)
}

fn validate_request(
    samples: &[MultimodalSample],
    n_clients: usize,
    paired_fraction: f64,
    fragmented_fraction: f64,
    layout: Layout,
) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Partition("no samples to distribute".to_string()));
    }
    if n_clients == 0 {
        return Err(Error::Partition("need at least one client".to_string()));
    }
    for (name, f) in [("paired_fraction", paired_fraction), ("fragmented_fraction", fragmented_fraction)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Partition(format!("{name} {f} is outside [0, 1]")));
        }
    }
    if paired_fraction + fragmented_fraction > 1.0 + 1e-9 {
        return Err(Error::Partition(format!(
            "paired_fraction + fragmented_fraction = {} exceeds 1",
            paired_fraction + fragmented_fraction
        )));
    }
    if fragmented_fraction > 0.0 && n_clients < 2 {
        return Err(Error::Partition(
            "fragmented samples need two clients to split across".to_string(),
        ));
    }
    if layout == Layout::PairedHub && n_clients < 3 {
        return Err(Error::Partition(
            "the hub layout needs a paired client plus one per modality".to_string(),
        ));
    }
    let mut ids = std::collections::BTreeSet::new();
    for s in samples {
        if !s.is_complete() {
            return Err(Error::Partition(format!(
                "sample {} is missing a modality; only complete samples can be distributed",
                s.id
            )));
        }
        if !ids.insert(s.id) {
            return Err(Error::Partition(format!("duplicate sample id {}", s.id)));
        }
    }
    Ok(())
}

/// Floors both targeted counts, then grants one extra to the larger
/// remainder when the two remainders would otherwise inflate the partial
/// count by a whole sample. Keeps every realized count within one of its
/// target.
fn realized_counts(n: usize, paired_fraction: f64, fragmented_fraction: f64) -> (usize, usize) {
    let target_p = paired_fraction * n as f64;
    let target_f = fragmented_fraction * n as f64;
    let mut n_paired = (target_p + 1e-9).floor() as usize;
    let mut n_fragmented = (target_f + 1e-9).floor() as usize;
    n_paired = n_paired.min(n);
    n_fragmented = n_fragmented.min(n - n_paired);
    let rem_p = (target_p - n_paired as f64).max(0.0);
    let rem_f = (target_f - n_fragmented as f64).max(0.0);
    if rem_p + rem_f >= 1.0 - 1e-9 && n_paired + n_fragmented < n {
        if rem_p >= rem_f {
            n_paired += 1;
        } else {
            n_fragmented += 1;
        }
    }
    (n_paired, n_fragmented)
}

fn modality_groups(n_clients: usize) -> (Vec<usize>, Vec<usize>) {
    let a_group: Vec<usize> = (1..n_clients).step_by(2).collect();
    let b_group: Vec<usize> = (2..n_clients).step_by(2).collect();
    (a_group, b_group)
}

/// Builds the id alignment table for the vertical path: every sample whose
/// modality-A half and modality-B half live at two different clients.
///
/// Plain id matching stands in for a private set intersection; the
/// simulator is trusted end to end.
pub fn intersect_fragmented(
    clients: &[ClientDataset],
) -> Result<BTreeMap<u64, (usize, usize)>> {
    let mut holders_a: BTreeMap<u64, usize> = BTreeMap::new();
    let mut holders_b: BTreeMap<u64, usize> = BTreeMap::new();
    for c in clients {
        for s in &c.fragmented_a {
            if holders_a.insert(s.id, c.client_id).is_some() {
                return Err(Error::Integrity(format!(
                    "modality-A fragment of sample {} held by two clients",
                    s.id
                )));
            }
        }
        for s in &c.fragmented_b {
            if holders_b.insert(s.id, c.client_id).is_some() {
                return Err(Error::Integrity(format!(
                    "modality-B fragment of sample {} held by two clients",
                    s.id
                )));
            }
        }
    }
    let mut table = BTreeMap::new();
    for (&id, &a_client) in &holders_a {
        if let Some(&b_client) = holders_b.get(&id) {
            if a_client == b_client {
                return Err(Error::Integrity(format!(
                    "both halves of fragmented sample {id} sit at client {a_client}"
                )));
            }
            table.insert(id, (a_client, b_client));
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn complete_samples(n: usize) -> Vec<MultimodalSample> {
        (0..n)
            .map(|i| {
                MultimodalSample::new(
                    i as u64,
                    Some(vec![i as f64, 1.0]),
                    Some(vec![-(i as f64), 2.0]),
                    i % 3,
                )
                .unwrap()
            })
            .collect()
    }

    fn census(clients: &[ClientDataset]) -> (usize, usize, usize) {
        let paired = clients.iter().map(|c| c.paired.len()).sum();
        let fragmented = clients.iter().map(|c| c.fragmented_a.len()).sum();
        let partial = clients
            .iter()
            .map(|c| c.partial_a.len() + c.partial_b.len())
            .sum();
        (paired, fragmented, partial)
    }

    /// Each id's modality halves must each appear exactly once across all
    /// clients, in the buckets its kind dictates.
    fn check_conservation(samples: &[MultimodalSample], clients: &[ClientDataset]) {
        let mut a_count: BTreeMap<u64, usize> = BTreeMap::new();
        let mut b_count: BTreeMap<u64, usize> = BTreeMap::new();
        let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
        for c in clients {
            c.validate().unwrap();
            for (_, s) in c.iter_all() {
                *seen.entry(s.id).or_default() += 1;
                if s.features_a.is_some() {
                    *a_count.entry(s.id).or_default() += 1;
                }
                if s.features_b.is_some() {
                    *b_count.entry(s.id).or_default() += 1;
                }
            }
        }
        for s in samples {
            assert!(seen.contains_key(&s.id), "id {} vanished", s.id);
            assert!(*a_count.get(&s.id).unwrap_or(&0) <= 1);
            assert!(*b_count.get(&s.id).unwrap_or(&0) <= 1);
        }
    }

    fn check_fragment_symmetry(clients: &[ClientDataset]) {
        let mut a_holder: BTreeMap<u64, usize> = BTreeMap::new();
        let mut b_holder: BTreeMap<u64, usize> = BTreeMap::new();
        for c in clients {
            for s in &c.fragmented_a {
                assert!(a_holder.insert(s.id, c.client_id).is_none());
            }
            for s in &c.fragmented_b {
                assert!(b_holder.insert(s.id, c.client_id).is_none());
            }
        }
        assert_eq!(a_holder.len(), b_holder.len());
        for (id, a) in &a_holder {
            let b = b_holder.get(id).expect("missing counterpart");
            assert_ne!(a, b, "both halves of {id} at one client");
        }
    }

    #[test]
    fn all_paired_boundary() {
        let samples = complete_samples(20);
        let clients = partition(&samples, 4, 1.0, 0.0, 5).unwrap();
        let (paired, fragmented, partial) = census(&clients);
        assert_eq!((paired, fragmented, partial), (20, 0, 0));
        assert!(clients.iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn all_partial_boundary() {
        let samples = complete_samples(20);
        let clients = partition(&samples, 4, 0.0, 0.0, 5).unwrap();
        let (paired, fragmented, partial) = census(&clients);
        assert_eq!((paired, fragmented, partial), (0, 0, 20));
        for c in &clients {
            for (_, s) in c.iter_all() {
                assert!(!s.is_complete());
            }
        }
    }

    #[test]
    fn reconstruction_oracle_half_paired() {
        let samples = complete_samples(100);
        let clients = partition(&samples, 4, 0.5, 0.0, 9).unwrap();
        let (paired, fragmented, partial) = census(&clients);
        assert_eq!((paired, fragmented, partial), (50, 0, 50));
        check_conservation(&samples, &clients);
        let complete_ids: usize = clients
            .iter()
            .flat_map(|c| c.paired.iter())
            .map(|s| {
                assert!(s.is_complete());
                1
            })
            .sum();
        assert_eq!(complete_ids, 50);
    }

    #[test]
    fn fragment_halves_split_across_distinct_clients() {
        let samples = complete_samples(60);
        let clients = partition(&samples, 5, 0.2, 0.4, 3).unwrap();
        let (paired, fragmented, _) = census(&clients);
        assert_eq!(paired, 12);
        assert_eq!(fragmented, 24);
        check_fragment_symmetry(&clients);
        check_conservation(&samples, &clients);
    }

    #[test]
    fn alignment_table_matches_brute_force() {
        let samples = complete_samples(80);
        let clients = partition(&samples, 4, 0.3, 0.3, 11).unwrap();
        let table = intersect_fragmented(&clients).unwrap();
        let expected: usize = clients.iter().map(|c| c.fragmented_a.len()).sum();
        assert_eq!(table.len(), expected);
        for (id, (a, b)) in &table {
            assert!(clients[*a].fragmented_a.iter().any(|s| s.id == *id));
            assert!(clients[*b].fragmented_b.iter().any(|s| s.id == *id));
        }
    }

    #[test]
    fn alignment_table_empty_without_fragments() {
        let samples = complete_samples(12);
        let clients = partition(&samples, 3, 0.5, 0.0, 1).unwrap();
        assert!(intersect_fragmented(&clients).unwrap().is_empty());
    }

    #[test]
    fn conflicting_fragment_holders_rejected() {
        let mut c0 = ClientDataset::new(0);
        let mut c1 = ClientDataset::new(1);
        let s = MultimodalSample::new(7, Some(vec![1.0]), Some(vec![2.0]), 0).unwrap();
        c0.fragmented_a.push(s.stripped_to(Modality::A).unwrap());
        c0.fragmented_b.push(s.stripped_to(Modality::B).unwrap());
        assert!(intersect_fragmented(&[c0.clone()]).is_err());
        c0.fragmented_b.clear();
        c1.fragmented_a.push(s.stripped_to(Modality::A).unwrap());
        assert!(intersect_fragmented(&[c0, c1]).is_err());
    }

    #[test]
    fn infeasible_requests_rejected() {
        let samples = complete_samples(10);
        assert!(partition(&samples, 1, 0.0, 0.5, 0).is_err());
        assert!(partition(&samples, 0, 0.5, 0.0, 0).is_err());
        assert!(partition(&samples, 2, 0.7, 0.7, 0).is_err());
        assert!(partition(&samples, 2, -0.1, 0.0, 0).is_err());
        assert!(partition(&samples, 20, 1.0, 0.0, 0).is_err()); // empty clients
        let incomplete = vec![MultimodalSample::new(0, Some(vec![1.0]), None, 0).unwrap()];
        assert!(partition(&incomplete, 1, 0.0, 0.0, 0).is_err());
    }

    #[test]
    fn hub_layout_concentrates_paired_data() {
        let samples = complete_samples(40);
        let clients =
            partition_with_layout(&samples, 3, 0.5, 0.0, 4, Layout::PairedHub).unwrap();
        assert_eq!(clients[0].paired.len(), 20);
        assert!(clients[0].partial_a.is_empty() && clients[0].partial_b.is_empty());
        assert!(clients[1].paired.is_empty());
        assert!(clients[2].paired.is_empty());
        assert!(!clients[1].has_modality_b());
        assert!(!clients[2].has_modality_a());
        check_conservation(&samples, &clients);
        assert!(partition_with_layout(&samples, 2, 0.5, 0.0, 4, Layout::PairedHub).is_err());
    }

    #[test]
    fn same_seed_same_partition() {
        let samples = complete_samples(50);
        let a = partition(&samples, 4, 0.4, 0.2, 77).unwrap();
        let b = partition(&samples, 4, 0.4, 0.2, 77).unwrap();
        assert_eq!(a, b);
        let c = partition(&samples, 4, 0.4, 0.2, 78).unwrap();
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn partition_invariants_hold(
            n in 8usize..120,
            n_clients in 1usize..6,
            p10 in 0u8..=10,
            f10 in 0u8..=10,
            seed in 0u64..1000,
        ) {
            prop_assume!(p10 + f10 <= 10);
            let paired = f64::from(p10) / 10.0;
            let fragmented = f64::from(f10) / 10.0;
            let samples = complete_samples(n);
            match partition(&samples, n_clients, paired, fragmented, seed) {
                Ok(clients) => {
                    check_conservation(&samples, &clients);
                    check_fragment_symmetry(&clients);
                    let (np, nf, npart) = census(&clients);
                    let nn = n as f64;
                    prop_assert!((np as f64 - paired * nn).abs() <= 1.0 + 1e-9);
                    prop_assert!((nf as f64 - fragmented * nn).abs() <= 1.0 + 1e-9);
                    prop_assert!(
                        (npart as f64 - (1.0 - paired - fragmented) * nn).abs() <= 1.0 + 1e-9
                    );
                    prop_assert_eq!(np + nf + npart, n);
                    prop_assert!(intersect_fragmented(&clients).is_ok());
                }
                Err(Error::Partition(_)) => {
                    // Feasibility failures (single client with fragments, or
                    // a client left empty) are legitimate outcomes here.
                    prop_assert!(fragmented > 0.0 && n_clients < 2 || n_clients > 1);
                }
                Err(other) => return Err(TestCaseError::fail(format!("{other}"))),
            }
        }
    }
}
