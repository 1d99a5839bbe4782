//! Server roles: the vertical coordinator that trains the shared head on
//! aligned fragmented features, and the aggregation logic that blends or
//! averages submitted parameter vectors and redistributes globals.

use std::collections::{BTreeMap, BTreeSet};

use crate::client::{HeadKind, ModelBundle};
use crate::data::{Modality, MultimodalSample};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_ovr, BinaryMetric};
use crate::nn::{loss_and_grad, LossKind, Matrix, Network, ParamVector};
use crate::wire::FeatureBatch;

/// Scalar score used to rank models against the running global.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMetric {
    MacroAuroc,
    Accuracy,
}

/// Scores one head of a bundle on an evaluation set.
pub fn evaluate_on_validation(
    bundle: &ModelBundle,
    head: HeadKind,
    validation: &[MultimodalSample],
    metric: ScoreMetric,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Evaluation("empty validation set".to_string()));
    }
    let labels: Vec<usize> = validation.iter().map(|s| s.label).collect();
    let scores = bundle.scores_for(head, validation)?;
    match metric {
        ScoreMetric::MacroAuroc => macro_ovr(BinaryMetric::Auroc, &scores, &labels)
            .map_err(|e| Error::Evaluation(e.to_string())),
        ScoreMetric::Accuracy => {
            accuracy(&scores, &labels).map_err(|e| Error::Evaluation(e.to_string()))
        }
    }
}

/// Outcome of one performance-weighted aggregation.
#[derive(Debug, Clone)]
pub struct AggregationWeights {
    /// Tag to normalized weight, improving submissions only.
    pub kept: BTreeMap<String, f64>,
    pub discarded: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct BlendOutcome {
    /// `None` means every submission was discarded and the previous global
    /// stands.
    pub blended: Option<ParamVector>,
    pub weights: AggregationWeights,
}

/// Performance-weighted averaging: each submission's weight is its score
/// improvement over the running global, normalized over the improving set;
/// non-improving submissions are dropped entirely.
pub fn blend_avg(
    submissions: &[(String, ParamVector, f64)],
    global_score: f64,
) -> Result<BlendOutcome> {
    if submissions.is_empty() {
        return Err(Error::Aggregation("no submissions".to_string()));
    }
    let layout = submissions[0].1.len();
    for (tag, params, score) in submissions {
        if params.len() != layout {
            return Err(Error::Aggregation(format!(
                "submission '{tag}' has {} parameters, expected {layout}",
                params.len()
            )));
        }
        if !score.is_finite() {
            return Err(Error::Aggregation(format!(
                "submission '{tag}' has a non-finite score"
            )));
        }
    }

    let mut kept: Vec<(&String, &ParamVector, f64)> = Vec::new();
    let mut discarded = BTreeSet::new();
    for (tag, params, score) in submissions {
        let delta = score - global_score;
        if delta > 0.0 {
            kept.push((tag, params, delta));
        } else {
            discarded.insert(tag.clone());
        }
    }
    if kept.is_empty() {
        return Ok(BlendOutcome {
            blended: None,
            weights: AggregationWeights {
                kept: BTreeMap::new(),
                discarded,
            },
        });
    }
    let total: f64 = kept.iter().map(|(_, _, d)| d).sum();
    let mut blended = vec![0.0; layout];
    let mut weights = BTreeMap::new();
    for (tag, params, delta) in kept {
        let w = delta / total;
        weights.insert(tag.clone(), w);
        for (acc, &p) in blended.iter_mut().zip(params.values()) {
            *acc += w * p;
        }
    }
    Ok(BlendOutcome {
        blended: Some(ParamVector::from_vec(blended)),
        weights: AggregationWeights {
            kept: weights,
            discarded,
        },
    })
}

/// Sample-count-weighted averaging over all submissions.
pub fn fed_avg(submissions: &[(String, ParamVector, usize)]) -> Result<ParamVector> {
    if submissions.is_empty() {
        return Err(Error::Aggregation("no submissions".to_string()));
    }
    let layout = submissions[0].1.len();
    let total: usize = submissions.iter().map(|(_, _, n)| n).sum();
    if total == 0 {
        return Err(Error::Aggregation(
            "all submissions report zero samples".to_string(),
        ));
    }
    let mut out = vec![0.0; layout];
    for (tag, params, n) in submissions {
        if params.len() != layout {
            return Err(Error::Aggregation(format!(
                "submission '{tag}' has {} parameters, expected {layout}",
                params.len()
            )));
        }
        let w = *n as f64 / total as f64;
        for (acc, &p) in out.iter_mut().zip(params.values()) {
            *acc += w * p;
        }
    }
    Ok(ParamVector::from_vec(out))
}

/// Per-client cut-layer gradients produced by one coordinator pass.
#[derive(Debug, Clone)]
pub struct FeatureGradient {
    pub client_id: usize,
    pub modality: Modality,
    /// Rows in the order the client staged them; zero rows for samples
    /// whose counterpart never arrived.
    pub grad: Matrix,
}

#[derive(Debug)]
pub struct VerticalOutcome {
    /// Mean loss over the aligned batch, or `None` when nothing aligned.
    pub loss: Option<f64>,
    pub n_aligned: usize,
    pub gradients: Vec<FeatureGradient>,
}

/// Coordinator for the vertical path: collects latent features from the
/// holders of each fragment half, joins them by sample id, and trains the
/// shared head, handing each client back the gradient slice for exactly
/// the rows it sent.
#[derive(Clone)]
pub struct VerticalServer {
    head: Network,
    alignment: BTreeMap<u64, (usize, usize)>,
    staged: Vec<FeatureBatch>,
}

impl VerticalServer {
    pub fn new(head: Network, alignment: BTreeMap<u64, (usize, usize)>) -> Self {
        VerticalServer {
            head,
            alignment,
            staged: Vec::new(),
        }
    }

    pub fn head(&self) -> &Network {
        &self.head
    }

    pub fn set_head_params(&mut self, params: ParamVector) -> Result<()> {
        self.head.set_params(params)
    }

    pub fn replace_head(&mut self, head: Network) {
        self.head = head;
    }

    pub fn alignment(&self) -> &BTreeMap<u64, (usize, usize)> {
        &self.alignment
    }

    /// Accepts one client's features. Every id must be known to the
    /// alignment table and owned by that client on that side.
    pub fn stage_features(&mut self, batch: FeatureBatch) -> Result<()> {
        batch.validate()?;
        for &id in &batch.ids {
            let &(holder_a, holder_b) = self.alignment.get(&id).ok_or_else(|| {
                Error::Alignment(format!("sample {id} is not in the alignment table"))
            })?;
            let expected = match batch.modality {
                Modality::A => holder_a,
                Modality::B => holder_b,
            };
            if expected != batch.client_id {
                return Err(Error::Alignment(format!(
                    "client {} staged modality-{} features for sample {id}, which belongs \
                     to client {expected} on that side",
                    batch.client_id,
                    batch.modality.label()
                )));
            }
        }
        for staged in &self.staged {
            if staged.modality == batch.modality
                && staged.ids.iter().any(|id| batch.ids.contains(id))
            {
                return Err(Error::Alignment(format!(
                    "modality-{} features for an already-staged sample",
                    batch.modality.label()
                )));
            }
        }
        self.staged.push(batch);
        Ok(())
    }

    pub fn staged_count(&self) -> usize {
        self.staged.len()
    }

    /// Joins staged halves by id, runs forward/loss/backward through the
    /// head, updates it by one SGD step, and splits the input gradient back
    /// out per staging client. Clears the staging area.
    ///
    /// Labels come from the modality-A batches. An empty join is a no-op
    /// that still returns zero gradients for everything staged.
    pub fn train_on_staged(&mut self, lr: f64) -> Result<VerticalOutcome> {
        let staged = std::mem::take(&mut self.staged);
        // (batch index, row) per id and side.
        let mut side_a: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
        let mut side_b: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
        for (bi, batch) in staged.iter().enumerate() {
            let side = match batch.modality {
                Modality::A => &mut side_a,
                Modality::B => &mut side_b,
            };
            for (row, &id) in batch.ids.iter().enumerate() {
                side.insert(id, (bi, row));
            }
        }
        let aligned: Vec<u64> = side_a
            .keys()
            .filter(|id| side_b.contains_key(id))
            .copied()
            .collect();

        let mut gradients: Vec<FeatureGradient> = staged
            .iter()
            .map(|b| FeatureGradient {
                client_id: b.client_id,
                modality: b.modality,
                grad: Matrix::zeros(b.ids.len(), b.features.cols()),
            })
            .collect();

        if aligned.is_empty() {
            return Ok(VerticalOutcome {
                loss: None,
                n_aligned: 0,
                gradients,
            });
        }

        let dim_a = staged[side_a[&aligned[0]].0].features.cols();
        let dim_b = staged[side_b[&aligned[0]].0].features.cols();
        let mut fused = Matrix::zeros(aligned.len(), dim_a + dim_b);
        let mut labels = Vec::with_capacity(aligned.len());
        for (out_row, id) in aligned.iter().enumerate() {
            let (abi, arow) = side_a[id];
            let (bbi, brow) = side_b[id];
            let a_feat = staged[abi].features.row(arow);
            let b_feat = staged[bbi].features.row(brow);
            if a_feat.len() != dim_a || b_feat.len() != dim_b {
                return Err(Error::shape(
                    "vertical join",
                    format!("feature widths {dim_a}+{dim_b}"),
                    format!("{}+{}", a_feat.len(), b_feat.len()),
                ));
            }
            fused.row_mut(out_row)[..dim_a].copy_from_slice(a_feat);
            fused.row_mut(out_row)[dim_a..].copy_from_slice(b_feat);
            let label = staged[abi]
                .labels
                .as_ref()
                .and_then(|ls| ls.get(arow))
                .copied()
                .ok_or_else(|| {
                    Error::Alignment(format!(
                        "no label for sample {id}; the modality-A holder must attach labels"
                    ))
                })?;
            labels.push(label);
        }

        let (probs, trace) = self.head.forward(&fused)?;
        let (loss, dl) = loss_and_grad(&probs, &labels, LossKind::CategoricalCrossEntropy)?;
        let (head_grad, input_grad) = self.head.backward(&trace, &dl)?;
        self.head.sgd_step(&head_grad, lr)?;

        for (out_row, id) in aligned.iter().enumerate() {
            let (abi, arow) = side_a[id];
            let (bbi, brow) = side_b[id];
            let row = input_grad.row(out_row);
            gradients[abi].grad.row_mut(arow).copy_from_slice(&row[..dim_a]);
            gradients[bbi].grad.row_mut(brow).copy_from_slice(&row[dim_a..]);
        }
        Ok(VerticalOutcome {
            loss: Some(loss),
            n_aligned: aligned.len(),
            gradients,
        })
    }
}

/// What happened to one head during an aggregation round.
#[derive(Debug, Clone)]
pub struct HeadAggregation {
    /// Validation score of each candidate, by tag.
    pub scores: BTreeMap<String, f64>,
    /// Global score the candidates had to beat.
    pub global_before: f64,
    pub weights: AggregationWeights,
    /// Score of the (possibly unchanged) global after the round.
    pub global_after: f64,
    pub updated: bool,
}

#[derive(Debug, Clone)]
pub struct RoundAggregation {
    pub heads: BTreeMap<&'static str, HeadAggregation>,
}

/// Holds the global bundle, the validation pool, and the running global
/// scores the discard rule compares against.
#[derive(Clone)]
pub struct AggregationServer {
    global: ModelBundle,
    validation: Vec<MultimodalSample>,
    metric: ScoreMetric,
    global_scores: BTreeMap<&'static str, f64>,
}

/// One client's submissions for a round, already reduced to parameter
/// vectors; the aggregation server never sees data or full client state.
/// The sample counts back the count-weighted aggregation rule and are
/// ignored by the performance-weighted one.
pub struct ClientSubmission {
    pub tag: String,
    pub unimodal_a: Option<(ParamVector, ModelBundle)>,
    pub unimodal_b: Option<(ParamVector, ModelBundle)>,
    /// Fused-head parameters plus the bundle to score them with.
    pub multimodal: Option<(ParamVector, ModelBundle)>,
    pub n_unimodal_a: usize,
    pub n_unimodal_b: usize,
    pub n_multimodal: usize,
}

impl AggregationServer {
    /// Scores the initial global bundle to seed the running comparisons.
    pub fn new(
        global: ModelBundle,
        validation: Vec<MultimodalSample>,
        metric: ScoreMetric,
    ) -> Result<Self> {
        global.validate()?;
        let mut global_scores = BTreeMap::new();
        for head in HeadKind::all() {
            let score = evaluate_on_validation(&global, head, &validation, metric)?;
            global_scores.insert(head.label(), score);
        }
        Ok(AggregationServer {
            global,
            validation,
            metric,
            global_scores,
        })
    }

    pub fn global(&self) -> &ModelBundle {
        &self.global
    }

    pub fn global_score(&self, head: HeadKind) -> f64 {
        self.global_scores[head.label()]
    }

    pub fn global_scores(&self) -> &BTreeMap<&'static str, f64> {
        &self.global_scores
    }

    pub fn validation(&self) -> &[MultimodalSample] {
        &self.validation
    }

    pub fn metric(&self) -> ScoreMetric {
        self.metric
    }

    fn blend_head(
        &mut self,
        head: HeadKind,
        candidates: Vec<(String, ParamVector, ModelBundle)>,
    ) -> Result<Option<HeadAggregation>> {
        if candidates.is_empty() {
            return Ok(None);
        }
        let global_before = self.global_scores[head.label()];
        let mut scored = Vec::with_capacity(candidates.len());
        let mut scores = BTreeMap::new();
        for (tag, params, bundle) in candidates {
            let score = evaluate_on_validation(&bundle, head, &self.validation, self.metric)?;
            scores.insert(tag.clone(), score);
            scored.push((tag, params, score));
        }
        let outcome = blend_avg(&scored, global_before)?;
        let updated = outcome.blended.is_some();
        if let Some(blended) = outcome.blended {
            self.install_head(head, blended)?;
        }
        let global_after =
            evaluate_on_validation(&self.global, head, &self.validation, self.metric)?;
        self.global_scores.insert(head.label(), global_after);
        Ok(Some(HeadAggregation {
            scores,
            global_before,
            weights: outcome.weights,
            global_after,
            updated,
        }))
    }

    /// Writes a blended flat vector back into the global bundle: encoder
    /// then classifier for the unimodal heads, bare head for the fused one.
    fn install_head(&mut self, head: HeadKind, blended: ParamVector) -> Result<()> {
        match head {
            HeadKind::UnimodalA | HeadKind::UnimodalB => {
                let (f, g) = match head {
                    HeadKind::UnimodalA => (self.global.f_a.as_mut(), self.global.g_a.as_mut()),
                    _ => (self.global.f_b.as_mut(), self.global.g_b.as_mut()),
                };
                let (f, g) = match (f, g) {
                    (Some(f), Some(g)) => (f, g),
                    _ => {
                        return Err(Error::Aggregation(
                            "global bundle lacks the head being aggregated".to_string(),
                        ))
                    }
                };
                let f_len = f.param_len();
                if blended.len() != f_len + g.param_len() {
                    return Err(Error::Aggregation(format!(
                        "blended vector length {} does not split into encoder {} and \
                         classifier {}",
                        blended.len(),
                        f_len,
                        g.param_len()
                    )));
                }
                let values = blended.into_vec();
                f.set_params(ParamVector::from_vec(values[..f_len].to_vec()))?;
                g.set_params(ParamVector::from_vec(values[f_len..].to_vec()))?;
            }
            HeadKind::Multimodal => {
                let g_m = self.global.g_m.as_mut().ok_or_else(|| {
                    Error::Aggregation("global bundle lacks a fused head".to_string())
                })?;
                g_m.set_params(blended)?;
            }
        }
        Ok(())
    }

    /// One full aggregation round. Unimodal heads blend first so the
    /// coordinator head candidate is scored against the newest encoders.
    pub fn aggregate_round(
        &mut self,
        submissions: &[ClientSubmission],
        vertical_head: Option<&Network>,
    ) -> Result<RoundAggregation> {
        let mut heads = BTreeMap::new();

        let unimodal_a: Vec<_> = submissions
            .iter()
            .filter_map(|s| {
                s.unimodal_a
                    .as_ref()
                    .map(|(p, b)| (s.tag.clone(), p.clone(), b.clone()))
            })
            .collect();
        if let Some(h) = self.blend_head(HeadKind::UnimodalA, unimodal_a)? {
            heads.insert(HeadKind::UnimodalA.label(), h);
        }

        let unimodal_b: Vec<_> = submissions
            .iter()
            .filter_map(|s| {
                s.unimodal_b
                    .as_ref()
                    .map(|(p, b)| (s.tag.clone(), p.clone(), b.clone()))
            })
            .collect();
        if let Some(h) = self.blend_head(HeadKind::UnimodalB, unimodal_b)? {
            heads.insert(HeadKind::UnimodalB.label(), h);
        }

        let mut multimodal: Vec<(String, ParamVector, ModelBundle)> = submissions
            .iter()
            .filter_map(|s| {
                s.multimodal
                    .as_ref()
                    .map(|(p, b)| (s.tag.clone(), p.clone(), b.clone()))
            })
            .collect();
        if let Some(head) = vertical_head {
            // The coordinator's head has no encoders of its own; it is
            // scored with the freshly blended global encoders.
            let candidate = ModelBundle {
                f_a: self.global.f_a.clone(),
                f_b: self.global.f_b.clone(),
                g_m: Some(head.clone()),
                ..ModelBundle::default()
            };
            candidate.validate()?;
            multimodal.push((
                "vertical-head".to_string(),
                head.params().clone(),
                candidate,
            ));
        }
        if let Some(h) = self.blend_head(HeadKind::Multimodal, multimodal)? {
            heads.insert(HeadKind::Multimodal.label(), h);
        }

        Ok(RoundAggregation { heads })
    }

    fn average_head(
        &mut self,
        head: HeadKind,
        candidates: Vec<(String, ParamVector, usize)>,
    ) -> Result<Option<HeadAggregation>> {
        let candidates: Vec<_> = candidates.into_iter().filter(|(_, _, n)| *n > 0).collect();
        if candidates.is_empty() {
            return Ok(None);
        }
        let global_before = self.global_scores[head.label()];
        let averaged = fed_avg(&candidates)?;
        self.install_head(head, averaged)?;
        let global_after =
            evaluate_on_validation(&self.global, head, &self.validation, self.metric)?;
        self.global_scores.insert(head.label(), global_after);
        let total: f64 = candidates.iter().map(|(_, _, n)| *n as f64).sum();
        let kept = candidates
            .iter()
            .map(|(tag, _, n)| (tag.clone(), *n as f64 / total))
            .collect();
        Ok(Some(HeadAggregation {
            scores: BTreeMap::new(),
            global_before,
            weights: AggregationWeights {
                kept,
                discarded: BTreeSet::new(),
            },
            global_after,
            updated: true,
        }))
    }

    /// Count-weighted alternative to [`AggregationServer::aggregate_round`]:
    /// every submission is kept, weighted by how many samples backed it.
    /// Submissions reporting zero samples sit out.
    pub fn average_round(
        &mut self,
        submissions: &[ClientSubmission],
        vertical_head: Option<(&Network, usize)>,
    ) -> Result<RoundAggregation> {
        let mut heads = BTreeMap::new();

        let unimodal_a: Vec<_> = submissions
            .iter()
            .filter_map(|s| {
                s.unimodal_a
                    .as_ref()
                    .map(|(p, _)| (s.tag.clone(), p.clone(), s.n_unimodal_a))
            })
            .collect();
        if let Some(h) = self.average_head(HeadKind::UnimodalA, unimodal_a)? {
            heads.insert(HeadKind::UnimodalA.label(), h);
        }

        let unimodal_b: Vec<_> = submissions
            .iter()
            .filter_map(|s| {
                s.unimodal_b
                    .as_ref()
                    .map(|(p, _)| (s.tag.clone(), p.clone(), s.n_unimodal_b))
            })
            .collect();
        if let Some(h) = self.average_head(HeadKind::UnimodalB, unimodal_b)? {
            heads.insert(HeadKind::UnimodalB.label(), h);
        }

        let mut multimodal: Vec<_> = submissions
            .iter()
            .filter_map(|s| {
                s.multimodal
                    .as_ref()
                    .map(|(p, _)| (s.tag.clone(), p.clone(), s.n_multimodal))
            })
            .collect();
        if let Some((head, n_aligned)) = vertical_head {
            multimodal.push(("vertical-head".to_string(), head.params().clone(), n_aligned));
        }
        if let Some(h) = self.average_head(HeadKind::Multimodal, multimodal)? {
            heads.insert(HeadKind::Multimodal.label(), h);
        }

        Ok(RoundAggregation { heads })
    }
}
