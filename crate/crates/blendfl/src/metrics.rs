//! Ranking metrics for classifier outputs.
//!
//! AUROC uses the rank-statistic formulation with half credit for ties.
//! AUPRC is average precision with step interpolation over distinct score
//! thresholds. Multiclass outputs are reduced one-vs-rest and averaged
//! unweighted over classes.

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Which binary metric a one-vs-rest reduction should average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryMetric {
    Auroc,
    Auprc,
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Metric("empty batch".to_string()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("non-finite score".to_string()));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, with ties
/// counted as half. Both classes must be present.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(
            "ranking quality is undefined when only one class is present".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average 1-based ranks across tie groups, then the rank-sum statistic.
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1) + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                pos_rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let np = n_pos as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average precision: precision at each distinct threshold, weighted by the
/// recall gained there. Needs at least one positive.
pub fn auprc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::Metric(
            "precision-recall is undefined with no positives".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            }
            seen += 1;
            j += 1;
        }
        let precision = tp as f64 / seen as f64;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Unweighted mean of a binary metric over k one-vs-rest problems.
///
/// `scores` is n x k with one column per class; every class must occur in
/// `labels` at least once.
pub fn macro_ovr(metric: BinaryMetric, scores: &Matrix, labels: &[usize]) -> Result<f64> {
    if scores.rows() != labels.len() {
        return Err(Error::Metric(format!(
            "{} score rows for {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    let k = scores.cols();
    if k < 2 {
        return Err(Error::Metric(
            "one-vs-rest reduction needs at least two classes".to_string(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Metric(format!("label {bad} outside 0..{k}")));
    }
    let mut total = 0.0;
    for class in 0..k {
        if !labels.iter().any(|&l| l == class) {
            return Err(Error::Metric(format!(
                "class {class} absent from the batch"
            )));
        }
        let column: Vec<f64> = (0..scores.rows()).map(|r| scores.get(r, class)).collect();
        let binary: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        total += match metric {
            BinaryMetric::Auroc => auroc_binary(&column, &binary)?,
            BinaryMetric::Auprc => auprc_binary(&column, &binary)?,
        };
    }
    Ok(total / k as f64)
}

/// Fraction of rows whose top-scoring class matches the label. A single
/// score column is treated as the positive-class probability at 0.5.
pub fn accuracy(scores: &Matrix, labels: &[usize]) -> Result<f64> {
    if scores.rows() != labels.len() {
        return Err(Error::Metric(format!(
            "{} score rows for {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    if scores.rows() == 0 {
        return Err(Error::Metric("empty batch".to_string()));
    }
    let mut hits = 0usize;
    for (r, &label) in labels.iter().enumerate() {
        let predicted = if scores.cols() == 1 {
            usize::from(scores.get(r, 0) >= 0.5)
        } else {
            let row = scores.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        };
        if predicted == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::substream;

    /// O(n^2) comparison count over all positive/negative pairs.
    fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    /// Recomputes precision and recall from scratch at every distinct
    /// threshold instead of walking a sorted list once.
    fn rank_scan_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for &t in &thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|&(&s, &l)| s >= t && l)
                .count() as f64;
            let picked = scores.iter().filter(|&&s| s >= t).count() as f64;
            let precision = tp / picked;
            let recall = tp / n_pos;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn auroc_known_values() {
        assert_eq!(auroc_binary(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auroc_binary(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(
            auroc_binary(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap(),
            0.5
        );
        // One inversion out of four comparable pairs.
        let v = auroc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut rng = substream(314, "test/auroc");
        for _ in 0..20 {
            let n = 50;
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..40) as f64) / 40.0) // forces ties
                .collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let fast = auroc_binary(&scores, &labels).unwrap();
            let slow = pairwise_auroc(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn auprc_known_values() {
        assert_eq!(
            auprc_binary(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            1.0
        );
        // Single positive ranked last of n: only threshold reaching it has
        // precision 1/n and claims all the recall.
        let v = auprc_binary(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        // Worked example: positives at ranks 1 and 3 of 4.
        let v = auprc_binary(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((v - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn auprc_matches_rank_scan_oracle() {
        let mut rng = substream(315, "test/auprc");
        for _ in 0..20 {
            let n = 60;
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..25) as f64) / 25.0)
                .collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            if !labels.iter().any(|&l| l) {
                continue;
            }
            let fast = auprc_binary(&scores, &labels).unwrap();
            let slow = rank_scan_ap(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn macro_matches_per_class_average() {
        let mut rng = substream(316, "test/macro");
        let n = 45;
        let k = 3;
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let mut scores = Matrix::zeros(n, k);
        for r in 0..n {
            for c in 0..k {
                scores.set(r, c, rng.gen_range(0.0..1.0));
            }
        }
        let fast = macro_ovr(BinaryMetric::Auroc, &scores, &labels).unwrap();
        let mut slow = 0.0;
        for class in 0..k {
            let col: Vec<f64> = (0..n).map(|r| scores.get(r, class)).collect();
            let bin: Vec<bool> = labels.iter().map(|&l| l == class).collect();
            slow += pairwise_auroc(&col, &bin);
        }
        slow /= k as f64;
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn two_class_macro_equals_binary() {
        // With complementary columns the one-vs-rest problems are mirror
        // images, so the macro average equals either binary value.
        let labels = [0usize, 1, 1, 0, 1];
        let p1 = [0.2, 0.7, 0.6, 0.45, 0.9];
        let mut scores = Matrix::zeros(5, 2);
        for (r, &p) in p1.iter().enumerate() {
            scores.set(r, 0, 1.0 - p);
            scores.set(r, 1, p);
        }
        let macro_v = macro_ovr(BinaryMetric::Auroc, &scores, &labels).unwrap();
        let bin: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        let direct = auroc_binary(&p1, &bin).unwrap();
        assert!((macro_v - direct).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(auroc_binary(&[0.5, 0.6], &[true, true]).is_err());
        assert!(auroc_binary(&[], &[]).is_err());
        assert!(auroc_binary(&[f64::NAN, 0.1], &[true, false]).is_err());
        assert!(auprc_binary(&[0.5, 0.6], &[false, false]).is_err());
        let scores = Matrix::zeros(3, 3);
        assert!(macro_ovr(BinaryMetric::Auroc, &scores, &[0, 1, 1]).is_err()); // class 2 absent
        assert!(macro_ovr(BinaryMetric::Auroc, &scores, &[0, 1, 3]).is_err());
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let scores = Matrix::from_rows(&[
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.3, 0.6],
            vec![0.4, 0.5, 0.1],
        ])
        .unwrap();
        assert_eq!(accuracy(&scores, &[0, 2, 0]).unwrap(), 2.0 / 3.0);
        let binary = Matrix::from_rows(&[vec![0.9], vec![0.2]]).unwrap();
        assert_eq!(accuracy(&binary, &[1, 0]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn auroc_bounded_and_rank_invariant(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 5.0).collect();
            let labels: Vec<bool> = raw.iter().map(|&(_, l)| l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let base = auroc_binary(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&base));
            // Strictly monotone affine transform leaves ranking untouched.
            let shifted: Vec<f64> = scores.iter().map(|&s| 3.0 * s + 7.0).collect();
            prop_assert_eq!(auroc_binary(&shifted, &labels).unwrap(), base);
            // Reversing the score order mirrors the value exactly.
            let negated: Vec<f64> = scores.iter().map(|&s| -s).collect();
            let mirrored = auroc_binary(&negated, &labels).unwrap();
            prop_assert!((mirrored - (1.0 - base)).abs() < 1e-15);
        }

        #[test]
        fn auprc_bounded(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|&(s, _)| s as f64 / 5.0).collect();
            let labels: Vec<bool> = raw.iter().map(|&(_, l)| l).collect();
            prop_assume!(labels.iter().any(|&l| l));
            let ap = auprc_binary(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        }
    }
}
