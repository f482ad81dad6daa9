//! GMM → DNN cascade: segment utterances, score every segment against every
//! tag, and classify the resulting likelihood vectors with the network.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dnn::{softmax, DnnModel};
use crate::error::{Error, Result};
use crate::gmm::{GmmDecision, TagStore};
use crate::mfcc::FeatureView;

/// Network input kinds recorded in [`DnnModel::input_kind`].
pub const INPUT_LIKELIHOOD: &str = "likelihood";
/// Likelihood vectors centred on their own mean and scaled to unit spread
/// before standardization.
pub const INPUT_LIKELIHOOD_NORMALIZED: &str = "likelihood-normalized";
pub const INPUT_MFCC_STATS: &str = "mfcc-stats";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentPlan {
    /// Frames per segment.
    pub frames: usize,
    pub overlap: f64,
}

impl Default for SegmentPlan {
    fn default() -> Self {
        SegmentPlan {
            frames: 100,
            overlap: 0.5,
        }
    }
}

impl SegmentPlan {
    pub fn new(frames: usize, overlap: f64) -> Result<Self> {
        let plan = SegmentPlan { frames, overlap };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("segment length must be at least one frame".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("segment overlap {} outside [0, 1)", self.overlap)));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        ((self.frames as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    /// Frame spans `[start, end)` for an utterance of `num_frames` frames.
    ///
    /// Full segments sit at multiples of the hop. A trailing remainder of at
    /// least half a segment not covered by them becomes one more (shorter)
    /// segment; shorter remainders are dropped. Utterances shorter than one
    /// segment give a single span over everything.
    pub fn spans(&self, num_frames: usize) -> Vec<(usize, usize)> {
        let t = self.frames;
        if num_frames == 0 {
            return Vec::new();
        }
        if num_frames <= t {
            return vec![(0, num_frames)];
        }
        let hop = self.hop();
        let mut spans = Vec::new();
        let mut start = 0;
        while start + t <= num_frames {
            spans.push((start, start + t));
            start += hop;
        }
        let covered = spans.last().map_or(0, |s| s.1);
        let rest = num_frames - covered;
        if rest > 0 && 2 * rest >= t {
            spans.push((start.min(covered), num_frames));
        }
        spans
    }
}

pub fn segment<'a>(features: FeatureView<'a>, plan: &SegmentPlan) -> Vec<FeatureView<'a>> {
    plan.spans(features.num_frames())
        .into_iter()
        .map(|(s, e)| features.slice(s, e))
        .collect()
}

/// Average log-likelihood of one segment under every tag, in store order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodVector {
    pub values: Vec<f64>,
    pub source_id: String,
    pub segment_index: usize,
    pub span: (usize, usize),
}

impl LikelihoodVector {
    /// Entries minus the vector's own mean, divided by its population spread
    /// (left unscaled when all entries are equal).
    pub fn normalized(&self) -> Vec<f64> {
        normalize(&self.values)
    }
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
    values.iter().map(|v| (v - mean) * scale).collect()
}

/// Scores one segment; identical to scoring it as a whole utterance.
pub fn likelihood_vector(store: &TagStore, segment: FeatureView<'_>) -> Result<LikelihoodVector> {
    let values = store.frame_scores(segment)?.utterance_averages();
    Ok(LikelihoodVector {
        values,
        source_id: String::new(),
        segment_index: 0,
        span: (0, segment.num_frames()),
    })
}

/// Likelihood vectors for every segment plus the whole-utterance tag scores.
/// Frame scores are computed once and averaged over each span.
pub fn likelihood_vectors(
    store: &TagStore,
    features: FeatureView<'_>,
    plan: &SegmentPlan,
    source_id: &str,
) -> Result<(Vec<LikelihoodVector>, Vec<f64>)> {
    let scores = store.frame_scores(features)?;
    let vectors = plan
        .spans(features.num_frames())
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| LikelihoodVector {
            values: scores.averages(s, e),
            source_id: source_id.to_string(),
            segment_index: i,
            span: (s, e),
        })
        .collect();
    Ok((vectors, scores.utterance_averages()))
}

/// How segment posteriors combine into an utterance posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Normalized product of posteriors (sum of logs).
    Geometric,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "geometric" => Ok(Aggregation::Geometric),
            other => Err(Error::Config(format!("unknown aggregation {other:?}"))),
        }
    }
}

pub fn aggregate(posteriors: &[Vec<f64>], how: Aggregation) -> Vec<f64> {
    let k = posteriors[0].len();
    let n = posteriors.len() as f64;
    match how {
        Aggregation::Mean => (0..k)
            .map(|j| posteriors.iter().map(|p| p[j]).sum::<f64>() / n)
            .collect(),
        Aggregation::Geometric => {
            let logs: Vec<f64> = (0..k)
                .map(|j| {
                    posteriors
                        .iter()
                        .map(|p| p[j].max(f64::MIN_POSITIVE).ln())
                        .sum::<f64>()
                        / n
                })
                .collect();
            softmax(&logs)
        }
    }
}

fn argmax(values: &[f64]) -> (usize, bool) {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let tie = values
        .iter()
        .enumerate()
        .any(|(i, &v)| i != best && v == values[best]);
    (best, tie)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDetail {
    pub index: usize,
    pub span: (usize, usize),
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnDecision {
    pub speaker_index: usize,
    pub speaker: String,
    pub posterior: Vec<f64>,
    pub per_segment: Vec<SegmentDetail>,
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeDecision {
    pub speaker_index: usize,
    pub speaker: String,
    pub posterior: Vec<f64>,
    pub per_segment: Vec<SegmentDetail>,
    pub tie: bool,
    /// Whole-utterance GMM-alone decision from the same frame scores.
    pub gmm: GmmDecision,
    /// GMM and cascade pick the same speaker.
    pub agreement: bool,
    /// One-hot mask at the winning speaker.
    pub mask: Vec<u8>,
}

pub fn check_cascade_sizes(store: &TagStore, dnn: &DnnModel) -> Result<()> {
    if dnn.input_size() != store.len() || dnn.output_size() != store.speakers().len() {
        return Err(Error::Config(format!(
            "network maps {} → {} but the tag store has {} tags over {} speakers",
            dnn.input_size(),
            dnn.output_size(),
            store.len(),
            store.speakers().len()
        )));
    }
    Ok(())
}

/// The network input for a likelihood vector under the model's input kind.
pub fn cascade_input(dnn: &DnnModel, values: &[f64]) -> Vec<f64> {
    if dnn.input_kind == INPUT_LIKELIHOOD_NORMALIZED {
        normalize(values)
    } else {
        values.to_vec()
    }
}

fn run_segments(
    dnn: &DnnModel,
    inputs: impl Iterator<Item = ((usize, usize), Vec<f64>)>,
    how: Aggregation,
) -> Result<(Vec<f64>, Vec<SegmentDetail>)> {
    let mut details = Vec::new();
    for (index, (span, x)) in inputs.enumerate() {
        details.push(SegmentDetail {
            index,
            span,
            posterior: dnn.predict(&x)?,
        });
    }
    if details.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let posteriors: Vec<Vec<f64>> = details.iter().map(|d| d.posterior.clone()).collect();
    Ok((aggregate(&posteriors, how), details))
}

/// Cascade decision from precomputed likelihood vectors.
pub fn classify_vectors(
    store: &TagStore,
    dnn: &DnnModel,
    vectors: &[LikelihoodVector],
    utterance_scores: &[f64],
    how: Aggregation,
) -> Result<CascadeDecision> {
    check_cascade_sizes(store, dnn)?;
    let (posterior, per_segment) = run_segments(
        dnn,
        vectors.iter().map(|v| (v.span, cascade_input(dnn, &v.values))),
        how,
    )?;
    let (speaker_index, tie) = argmax(&posterior);
    let gmm = store.decide(utterance_scores);
    let mut mask = vec![0u8; posterior.len()];
    mask[speaker_index] = 1;
    Ok(CascadeDecision {
        speaker_index,
        speaker: store.speakers()[speaker_index].clone(),
        agreement: gmm.speaker_index == speaker_index,
        posterior,
        per_segment,
        tie,
        gmm,
        mask,
    })
}

pub fn classify(
    store: &TagStore,
    dnn: &DnnModel,
    features: FeatureView<'_>,
    plan: &SegmentPlan,
    how: Aggregation,
) -> Result<CascadeDecision> {
    check_cascade_sizes(store, dnn)?;
    let (vectors, utterance) = likelihood_vectors(store, features, plan, "")?;
    classify_vectors(store, dnn, &vectors, &utterance, how)
}

/// Per-coefficient mean followed by per-coefficient (population) standard
/// deviation over the segment's frames.
pub fn pooled_stats(segment: FeatureView<'_>) -> Vec<f64> {
    let d = segment.num_coeffs();
    let n = segment.num_frames() as f64;
    let mut mean = vec![0.0; d];
    for row in segment.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in segment.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    mean.extend(var.into_iter().map(|s| (s / n).sqrt()));
    mean
}

/// Pooled-statistics inputs for every segment.
pub fn segment_stats(features: FeatureView<'_>, plan: &SegmentPlan) -> Vec<((usize, usize), Vec<f64>)> {
    plan.spans(features.num_frames())
        .into_iter()
        .map(|(s, e)| ((s, e), pooled_stats(features.slice(s, e))))
        .collect()
}

/// The network alone, fed pooled MFCC statistics instead of likelihoods.
pub fn classify_dnn_only(
    dnn: &DnnModel,
    speakers: &[String],
    features: FeatureView<'_>,
    plan: &SegmentPlan,
    how: Aggregation,
) -> Result<DnnDecision> {
    if dnn.input_size() != 2 * features.num_coeffs() || dnn.output_size() != speakers.len() {
        return Err(Error::Config(format!(
            "network maps {} → {} but needs {} pooled inputs over {} speakers",
            dnn.input_size(),
            dnn.output_size(),
            2 * features.num_coeffs(),
            speakers.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let (posterior, per_segment) = run_segments(dnn, segment_stats(features, plan).into_iter(), how)?;
    let (speaker_index, tie) = argmax(&posterior);
    Ok(DnnDecision {
        speaker_index,
        speaker: speakers[speaker_index].clone(),
        posterior,
        per_segment,
        tie,
    })
}
