//! Label-stratified train/validation/test split.
//!
//! The validation and test sets are carved out globally before any client
//! partitioning, modeling an evaluation pool the aggregation server keeps
//! to itself. Both sets take only complete samples (both modalities
//! present) because they must score multimodal and unimodal heads alike.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::MultimodalSample;
use crate::error::{Error, Result};
use crate::rng::substream;

pub fn holdout_split(
    samples: &[MultimodalSample],
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<(
    Vec<MultimodalSample>,
    Vec<MultimodalSample>,
    Vec<MultimodalSample>,
)> {
    if !(val_fraction > 0.0) || !(test_fraction > 0.0) || val_fraction + test_fraction >= 1.0 {
        return Err(Error::Data(format!(
            "holdout fractions ({val_fraction}, {test_fraction}) must be positive and sum below 1"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Data("no samples to split".to_string()));
    }

    let n = samples.len();
    let total_val = (val_fraction * n as f64).round() as usize;
    let total_test = (test_fraction * n as f64).round() as usize;

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if s.is_complete() {
            by_class.entry(s.label).or_default().push(i);
        }
    }
    if by_class.is_empty() {
        return Err(Error::Stratification(
            "no complete samples available for evaluation sets".to_string(),
        ));
    }

    let class_sizes: Vec<(usize, usize)> =
        by_class.iter().map(|(&c, v)| (c, v.len())).collect();
    let val_quota = apportion(&class_sizes, total_val)?;
    let test_quota = apportion(&class_sizes, total_test)?;
    for (class, indices) in &by_class {
        let need = val_quota[class] + test_quota[class];
        if indices.len() < need {
            return Err(Error::Stratification(format!(
                "class {class} has {} complete samples but the evaluation sets need {need}",
                indices.len()
            )));
        }
    }

    let mut rng = substream(seed, "holdout");
    let mut val = Vec::with_capacity(total_val);
    let mut test = Vec::with_capacity(total_test);
    let mut held: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    for (class, indices) in &by_class {
        let mut pool = indices.clone();
        pool.shuffle(&mut rng);
        let nv = val_quota[class];
        let nt = test_quota[class];
        for &i in &pool[..nv] {
            val.push(samples[i].clone());
            held.insert(i);
        }
        for &i in &pool[nv..nv + nt] {
            test.push(samples[i].clone());
            held.insert(i);
        }
    }
    let train: Vec<MultimodalSample> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| !held.contains(i))
        .map(|(_, s)| s.clone())
        .collect();
    val.sort_by_key(|s| s.id);
    test.sort_by_key(|s| s.id);
    Ok((train, val, test))
}

/// Largest-remainder apportionment of `total` slots proportional to class
/// sizes, with every class guaranteed at least one slot so evaluation can
/// always score every class.
fn apportion(class_sizes: &[(usize, usize)], total: usize) -> Result<BTreeMap<usize, usize>> {
    let k = class_sizes.len();
    if total < k {
        return Err(Error::Stratification(format!(
            "evaluation set of {total} cannot represent all {k} classes"
        )));
    }
    let n: usize = class_sizes.iter().map(|&(_, s)| s).sum();
    let mut quotas: BTreeMap<usize, usize> = BTreeMap::new();
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(k);
    let mut assigned = 0usize;
    for &(class, size) in class_sizes {
        let exact = total as f64 * size as f64 / n as f64;
        let base = (exact.floor() as usize).max(1);
        quotas.insert(class, base);
        assigned += base;
        remainders.push((exact - exact.floor(), class));
    }
    // Distribute leftovers by descending remainder; class id breaks ties
    // deterministically. Over-assignment from the one-per-class floor is
    // clawed back from the largest quotas.
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut i = 0;
    while assigned < total {
        let class = remainders[i % k].1;
        *quotas.get_mut(&class).unwrap() += 1;
        assigned += 1;
        i += 1;
    }
    while assigned > total {
        let (&class, _) = quotas
            .iter()
            .max_by_key(|&(&c, &q)| (q, std::cmp::Reverse(c)))
            .unwrap();
        let q = quotas.get_mut(&class).unwrap();
        if *q <= 1 {
            return Err(Error::Stratification(
                "cannot shrink quotas below one per class".to_string(),
            ));
        }
        *q -= 1;
        assigned -= 1;
    }
    Ok(quotas)
}
