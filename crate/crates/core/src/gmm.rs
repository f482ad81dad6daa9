//! Diagonal-covariance Gaussian mixtures: log-domain density evaluation, EM
//! training, per-(speaker, emotion) tag stores and maximum-likelihood speaker
//! selection.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{Reader, Writer};
use crate::corpus::Emotion;
use crate::error::{Error, Result, ResultExt};
use crate::frontend::FrontEndConfig;
use crate::mfcc::{FeatureView, DCT_CONVENTION};

/// Mixture parameters `{weights, means, diagonal variances}` with cached
/// per-component normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    dim: usize,
    log_weights: Vec<f64>,
    inv_variances: Vec<f64>,
    log_norms: Vec<f64>,
}

impl GaussianMixture {
    /// `means` and `variances` are `M × D` row-major.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self> {
        let m = weights.len();
        if m == 0 || dim == 0 {
            return Err(Error::Input("mixture needs at least one component and dimension".into()));
        }
        if means.len() != m * dim || variances.len() != m * dim {
            return Err(Error::Dimension {
                expected: m * dim,
                got: means.len().min(variances.len()),
            });
        }
        if weights.iter().chain(&means).any(|v| !v.is_finite())
            || weights.iter().any(|&w| w < 0.0)
        {
            return Err(Error::Input("mixture weights/means must be finite, weights ≥ 0".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Input("mixture variances must be positive and finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("mixture weights sum to {total}, not 1")));
        }
        let mut gm = GaussianMixture {
            weights,
            means,
            variances,
            dim,
            log_weights: Vec::new(),
            inv_variances: Vec::new(),
            log_norms: Vec::new(),
        };
        gm.refresh_cache();
        Ok(gm)
    }

    fn refresh_cache(&mut self) {
        let half_log_2pi = 0.5 * self.dim as f64 * (2.0 * PI).ln();
        self.log_weights = self.weights.iter().map(|w| w.ln()).collect();
        self.inv_variances = self.variances.iter().map(|v| 1.0 / v).collect();
        self.log_norms = self
            .variances
            .chunks_exact(self.dim)
            .map(|var| -half_log_2pi - 0.5 * var.iter().map(|v| v.ln()).sum::<f64>())
            .collect();
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.dim..(i + 1) * self.dim]
    }

    pub fn variance(&self, i: usize) -> &[f64] {
        &self.variances[i * self.dim..(i + 1) * self.dim]
    }

    /// `log b_i(x) = −(D/2)·log 2π − ½·Σ log σ² − ½·Σ (x − μ)²/σ²`.
    pub fn log_component_density(&self, i: usize, x: &[f64]) -> f64 {
        let mean = self.mean(i);
        let inv = &self.inv_variances[i * self.dim..(i + 1) * self.dim];
        let mut quad = 0.0;
        for ((xd, md), id) in x.iter().zip(mean).zip(inv) {
            let d = xd - md;
            quad += d * d * id;
        }
        self.log_norms[i] - 0.5 * quad
    }

    /// `log w_i + log b_i(x)` for every component.
    pub fn log_joint_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.log_weights[i] + self.log_component_density(i, x);
        }
    }

    /// `log Σ_i w_i b_i(x)` by single-pass log-sum-exp.
    pub fn log_mixture_density(&self, x: &[f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for i in 0..self.num_components() {
            let a = self.log_weights[i] + self.log_component_density(i, x);
            if a == f64::NEG_INFINITY {
                continue;
            }
            if a > max {
                sum = sum * (max - a).exp() + 1.0;
                max = a;
            } else {
                sum += (a - max).exp();
            }
        }
        max + sum.ln()
    }

    /// Posterior component probabilities for one frame.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.num_components()];
        self.log_joint_into(x, &mut r);
        log_softmax_in_place(&mut r);
        r
    }

    pub fn frame_log_likelihoods(&self, features: FeatureView<'_>) -> Vec<f64> {
        features.rows().map(|x| self.log_mixture_density(x)).collect()
    }
}

/// Turns log-joint terms into normalized probabilities; returns the log
/// normalizer.
fn log_softmax_in_place(terms: &mut [f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for t in terms.iter_mut() {
        *t = (*t - max).exp();
        sum += *t;
    }
    for t in terms.iter_mut() {
        *t /= sum;
    }
    max + sum.ln()
}

/// Ordered mean of per-frame values; the single reduction every utterance and
/// segment score goes through.
pub fn average_log_likelihood(frame_values: &[f64]) -> f64 {
    frame_values.iter().sum::<f64>() / frame_values.len() as f64
}

/// Average per-frame log-likelihood `(1/T)·Σ_t log P(x_t | λ)`.
pub fn score_utterance(model: &GaussianMixture, features: FeatureView<'_>) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    if features.num_coeffs() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: features.num_coeffs(),
        });
    }
    Ok(average_log_likelihood(&model.frame_log_likelihoods(features)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the average log-likelihood improves by less than this.
    pub tol: f64,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 200,
            tol: 1e-4,
            variance_floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iterations: usize,
    pub final_avg_log_likelihood: f64,
    pub seed: u64,
    pub converged: bool,
    /// Iterations whose preceding M-step clamped at least one variance.
    pub floor_iterations: usize,
    pub reseeds: usize,
}

/// Per-iteration history of an EM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmTrace {
    /// Average log-likelihood of the parameters in force at each E-step.
    pub avg_log_likelihood: Vec<f64>,
    /// True where the preceding M-step hit the variance floor or re-seeded a
    /// starved component; monotonicity is not asserted at those entries.
    pub exempt: Vec<bool>,
}

impl EmTrace {
    /// Largest decrease between consecutive non-exempt iterations.
    pub fn worst_decrease(&self) -> f64 {
        self.avg_log_likelihood
            .windows(2)
            .zip(&self.exempt[1..])
            .filter(|(_, &ex)| !ex)
            .map(|(w, _)| w[0] - w[1])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GaussianMixture,
    pub meta: TrainMeta,
    pub trace: EmTrace,
}

// Components whose total responsibility falls below this are re-seeded.
const STARVATION_MASS: f64 = 1e-8;

/// Seeded farthest-point selection of `m` distinct frame indices.
fn farthest_point_seeds(data: FeatureView<'_>, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let t = data.num_frames();
    let mut chosen = vec![false; t];
    let mut min_dist = vec![f64::INFINITY; t];
    let mut picks = Vec::with_capacity(m);
    let mut next = rng.random_range(0..t);
    for _ in 0..m {
        chosen[next] = true;
        picks.push(next);
        let c = data.row(next);
        for (i, d) in min_dist.iter_mut().enumerate() {
            let dist: f64 = data.row(i).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            *d = d.min(dist);
        }
        let mut best = None;
        for i in 0..t {
            if chosen[i] {
                continue;
            }
            match best {
                Some((_, bd)) if min_dist[i] <= bd => {}
                _ => best = Some((i, min_dist[i])),
            }
        }
        match best {
            Some((i, _)) => next = i,
            None => break,
        }
    }
    picks
}

/// Fits an `m`-component diagonal GMM by expectation-maximization.
///
/// Means start at seeded farthest-point frames, variances at the global
/// per-dimension variance, weights uniform. Each M-step applies
/// `w = N_i/T`, `μ = S1_i/N_i`, `σ² = S2_i/N_i − μ²`, then floors variances.
pub fn em_fit(data: FeatureView<'_>, m: usize, config: &EmConfig) -> Result<EmFit> {
    let t = data.num_frames();
    let dim = data.num_coeffs();
    if m == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    if t < m {
        return Err(Error::InsufficientData(format!(
            "{t} frames cannot support {m} mixture components"
        )));
    }
    if !(config.variance_floor > 0.0) {
        return Err(Error::Config("variance floor must be positive".into()));
    }
    if data.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("training frames contain non-finite values".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tf = t as f64;
    let mut global_var = vec![0.0; dim];
    {
        let mut mean = vec![0.0; dim];
        for x in data.rows() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= tf);
        for x in data.rows() {
            for ((g, v), mu) in global_var.iter_mut().zip(x).zip(&mean) {
                *g += (v - mu) * (v - mu);
            }
        }
        global_var
            .iter_mut()
            .for_each(|v| *v = (*v / tf).max(config.variance_floor));
    }

    let seeds = farthest_point_seeds(data, m, &mut rng);
    let means: Vec<f64> = seeds.iter().flat_map(|&i| data.row(i).iter().copied()).collect();
    let variances: Vec<f64> = (0..m).flat_map(|_| global_var.iter().copied()).collect();
    let mut model = GaussianMixture::new(vec![1.0 / m as f64; m], means, variances, dim)?;

    let mut trace = EmTrace::default();
    let mut meta = TrainMeta {
        seed: config.seed,
        ..TrainMeta::default()
    };
    let mut exempt_next = false;
    let mut resp = vec![0.0; m];
    let mut mass = vec![0.0; m];
    let mut first = vec![0.0; m * dim];
    let mut second = vec![0.0; m * dim];

    for iter in 0..config.max_iters.max(1) {
        // E-step with sufficient statistics.
        mass.iter_mut().for_each(|v| *v = 0.0);
        first.iter_mut().for_each(|v| *v = 0.0);
        second.iter_mut().for_each(|v| *v = 0.0);
        let mut total_ll = 0.0;
        let mut worst = (f64::INFINITY, 0usize);
        for (ti, x) in data.rows().enumerate() {
            model.log_joint_into(x, &mut resp);
            let ll = log_softmax_in_place(&mut resp);
            total_ll += ll;
            if ll < worst.0 {
                worst = (ll, ti);
            }
            for (i, &r) in resp.iter().enumerate() {
                mass[i] += r;
                let f = &mut first[i * dim..(i + 1) * dim];
                let s = &mut second[i * dim..(i + 1) * dim];
                for d in 0..dim {
                    let rx = r * x[d];
                    f[d] += rx;
                    s[d] += rx * x[d];
                }
            }
        }
        let avg_ll = total_ll / tf;
        trace.avg_log_likelihood.push(avg_ll);
        trace.exempt.push(exempt_next);
        meta.iterations = iter + 1;
        meta.final_avg_log_likelihood = avg_ll;
        if iter > 0 {
            let prev = trace.avg_log_likelihood[iter - 1];
            if avg_ll - prev < config.tol {
                meta.converged = true;
                break;
            }
        }
        if iter + 1 == config.max_iters.max(1) {
            break;
        }

        // M-step.
        let mut weights = vec![0.0; m];
        let mut means = vec![0.0; m * dim];
        let mut variances = vec![0.0; m * dim];
        let mut floored = false;
        let mut reseeded = false;
        for i in 0..m {
            let range = i * dim..(i + 1) * dim;
            if mass[i] < STARVATION_MASS {
                log::warn!(
                    "EM iteration {iter}: component {i} starved (mass {:.3e}); re-seeding at frame {}",
                    mass[i],
                    worst.1
                );
                weights[i] = 1.0 / tf;
                means[range.clone()].copy_from_slice(data.row(worst.1));
                variances[range].copy_from_slice(&global_var);
                reseeded = true;
                meta.reseeds += 1;
                continue;
            }
            weights[i] = mass[i] / tf;
            for d in 0..dim {
                let mu = first[i * dim + d] / mass[i];
                let var = second[i * dim + d] / mass[i] - mu * mu;
                means[i * dim + d] = mu;
                variances[i * dim + d] = if var < config.variance_floor {
                    floored = true;
                    config.variance_floor
                } else {
                    var
                };
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        if floored {
            log::debug!("EM iteration {iter}: variance floor {} binding", config.variance_floor);
            meta.floor_iterations += 1;
        }
        exempt_next = floored || reseeded;
        model = GaussianMixture::new(weights, means, variances, dim)?;
    }

    Ok(EmFit { model, meta, trace })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TagLabel {
    pub speaker: String,
    pub emotion: Emotion,
}

/// One trained mixture λ for a (speaker, emotion) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmTag {
    pub label: TagLabel,
    pub model: GaussianMixture,
    pub train_meta: TrainMeta,
}

/// All tags, one per roster pair, ordered speaker-major then by emotion.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStore {
    speakers: Vec<String>,
    emotions: Vec<Emotion>,
    tags: Vec<GmmTag>,
    /// Front-end settings the tags were trained on.
    pub frontend: FrontEndConfig,
}

/// Per-tag, per-frame log-likelihoods of one utterance.
#[derive(Debug, Clone)]
pub struct FrameScores {
    per_tag: Vec<Vec<f64>>,
    num_frames: usize,
}

impl FrameScores {
    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_tags(&self) -> usize {
        self.per_tag.len()
    }

    /// Average score of every tag over frames `start..end`, in store order.
    pub fn averages(&self, start: usize, end: usize) -> Vec<f64> {
        self.per_tag
            .iter()
            .map(|v| average_log_likelihood(&v[start..end]))
            .collect()
    }

    pub fn utterance_averages(&self) -> Vec<f64> {
        self.averages(0, self.num_frames)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerScore {
    pub speaker: String,
    pub score: f64,
    pub best_emotion: Emotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDecision {
    pub speaker_index: usize,
    pub speaker: String,
    pub scores: Vec<SpeakerScore>,
    /// Another speaker scored exactly the winning score; roster order decided.
    pub tie: bool,
}

const TAGS_MAGIC: &[u8; 8] = b"EMSTAGS\0";
const TAGS_VERSION: u32 = 1;

impl TagStore {
    /// Validates that every (speaker, emotion) roster pair has exactly one tag
    /// and that all tags share a dimension.
    pub fn new(speakers: Vec<String>, emotions: Vec<Emotion>, tags: Vec<GmmTag>) -> Result<Self> {
        if speakers.is_empty() || emotions.is_empty() {
            return Err(Error::Input("tag store needs at least one speaker and emotion".into()));
        }
        let dim = tags.first().map(|t| t.model.dim()).unwrap_or(0);
        let mut slots: HashMap<(usize, usize), GmmTag> = HashMap::new();
        for tag in tags {
            if tag.model.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: tag.model.dim(),
                });
            }
            let s = speakers
                .iter()
                .position(|s| *s == tag.label.speaker)
                .ok_or_else(|| Error::Input(format!("tag for unknown speaker {}", tag.label.speaker)))?;
            let e = emotions
                .iter()
                .position(|e| *e == tag.label.emotion)
                .ok_or_else(|| Error::Input(format!("tag for unknown emotion {}", tag.label.emotion)))?;
            if slots.insert((s, e), tag).is_some() {
                return Err(Error::Input(format!(
                    "duplicate tag for ({}, {})",
                    speakers[s], emotions[e]
                )));
            }
        }
        let mut ordered = Vec::with_capacity(speakers.len() * emotions.len());
        for (s, speaker) in speakers.iter().enumerate() {
            for (e, emotion) in emotions.iter().enumerate() {
                let tag = slots.remove(&(s, e)).ok_or_else(|| {
                    Error::Input(format!("no tag for ({speaker}, {emotion})"))
                })?;
                ordered.push(tag);
            }
        }
        Ok(TagStore {
            speakers,
            emotions,
            tags: ordered,
            frontend: FrontEndConfig::default(),
        })
    }

    pub fn with_frontend(mut self, frontend: FrontEndConfig) -> Self {
        self.frontend = frontend;
        self
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn emotions(&self) -> &[Emotion] {
        &self.emotions
    }

    pub fn tags(&self) -> &[GmmTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tags[0].model.dim()
    }

    pub fn tag(&self, speaker: usize, emotion: usize) -> &GmmTag {
        &self.tags[speaker * self.emotions.len() + emotion]
    }

    fn check_dim(&self, features: FeatureView<'_>) -> Result<()> {
        if features.num_coeffs() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: features.num_coeffs(),
            });
        }
        if features.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        Ok(())
    }

    pub fn frame_scores(&self, features: FeatureView<'_>) -> Result<FrameScores> {
        self.check_dim(features)?;
        Ok(FrameScores {
            per_tag: self
                .tags
                .iter()
                .map(|t| t.model.frame_log_likelihoods(features))
                .collect(),
            num_frames: features.num_frames(),
        })
    }

    /// Reduces per-tag scores to a speaker decision: each speaker scores the
    /// best of its emotion tags, and the first maximal speaker in roster order
    /// wins.
    pub fn decide(&self, tag_scores: &[f64]) -> GmmDecision {
        let e = self.emotions.len();
        let scores: Vec<SpeakerScore> = self
            .speakers
            .iter()
            .enumerate()
            .map(|(s, speaker)| {
                let row = &tag_scores[s * e..(s + 1) * e];
                let (best_e, best) = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                SpeakerScore {
                    speaker: speaker.clone(),
                    score: best,
                    best_emotion: self.emotions[best_e],
                }
            })
            .collect();
        let mut winner = 0;
        for (i, s) in scores.iter().enumerate() {
            if s.score > scores[winner].score {
                winner = i;
            }
        }
        let best = scores[winner].score;
        let tie = scores
            .iter()
            .enumerate()
            .any(|(i, s)| i != winner && s.score == best);
        GmmDecision {
            speaker_index: winner,
            speaker: scores[winner].speaker.clone(),
            scores,
            tie,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(TAGS_MAGIC, TAGS_VERSION);
        w.str(DCT_CONVENTION);
        w.str(&serde_json::to_string(&self.frontend).expect("front-end config serializes"));
        w.usize(self.speakers.len());
        for s in &self.speakers {
            w.str(s);
        }
        w.usize(self.emotions.len());
        for e in &self.emotions {
            w.str(e.as_str());
        }
        for tag in &self.tags {
            let m = &tag.model;
            w.usize(m.num_components());
            w.usize(m.dim());
            w.raw_f64s(&m.weights);
            w.raw_f64s(&m.means);
            w.raw_f64s(&m.variances);
        }
        w.finish()
    }

    /// Training metadata is not part of the binary; see [`TagStore::sidecar`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, TAGS_MAGIC, TAGS_VERSION)?;
        let dct = r.str()?;
        if dct != DCT_CONVENTION {
            return Err(Error::Container(format!("unknown DCT convention {dct:?}")));
        }
        let frontend: FrontEndConfig = serde_json::from_str(&r.str()?)
            .map_err(|e| Error::Container(format!("front-end block: {e}")))?;
        let ns = r.len(8)?;
        let speakers = (0..ns).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let ne = r.len(8)?;
        let emotions = (0..ne)
            .map(|_| {
                r.str()?
                    .parse::<Emotion>()
                    .map_err(|e| Error::Container(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tags = Vec::with_capacity(ns * ne);
        for speaker in &speakers {
            for emotion in &emotions {
                let m = r.usize()?;
                let d = r.usize()?;
                let md = m
                    .checked_mul(d)
                    .filter(|&n| n.saturating_mul(16) <= r.remaining())
                    .ok_or_else(|| Error::Container("tag payload truncated".into()))?;
                let weights = r.raw_f64s(m)?;
                let means = r.raw_f64s(md)?;
                let variances = r.raw_f64s(md)?;
                let model = GaussianMixture::new(weights, means, variances, d)
                    .map_err(|e| Error::Container(format!("invalid tag parameters: {e}")))?;
                tags.push(GmmTag {
                    label: TagLabel {
                        speaker: speaker.clone(),
                        emotion: *emotion,
                    },
                    model,
                    train_meta: TrainMeta::default(),
                });
            }
        }
        r.finish()?;
        Ok(TagStore::new(speakers, emotions, tags)?.with_frontend(frontend))
    }

    /// Human-readable training metadata for every tag.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "format_version": TAGS_VERSION,
            "dct": DCT_CONVENTION,
            "frontend": self.frontend,
            "tags": self.tags.iter().map(|t| serde_json::json!({
                "speaker": t.label.speaker,
                "emotion": t.label.emotion,
                "components": t.model.num_components(),
                "dim": t.model.dim(),
                "train_meta": t.train_meta,
            })).collect::<Vec<_>>(),
        })
    }

    fn apply_sidecar(&mut self, sidecar: &serde_json::Value) {
        let Some(entries) = sidecar.get("tags").and_then(|t| t.as_array()) else {
            return;
        };
        for (tag, entry) in self.tags.iter_mut().zip(entries) {
            if let Some(meta) = entry
                .get("train_meta")
                .and_then(|m| serde_json::from_value::<TrainMeta>(m.clone()).ok())
            {
                tag.train_meta = meta;
            }
        }
    }

    /// Writes the binary store and a `.json` sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::from(e).in_file(path))?;
        let sidecar = path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(&sidecar, text + "\n").map_err(|e| Error::from(e).in_file(&sidecar))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
        let mut store = Self::from_bytes(&bytes).in_file(path)?;
        let sidecar = path.with_extension("json");
        if let Ok(text) = std::fs::read_to_string(&sidecar) {
            if let Ok(value) = serde_json::from_str(&text) {
                store.apply_sidecar(&value);
            }
        }
        Ok(store)
    }
}

/// Per-tag average log-likelihoods of a whole utterance, in store order.
pub fn tag_scores(store: &TagStore, features: FeatureView<'_>) -> Result<Vec<f64>> {
    Ok(store.frame_scores(features)?.utterance_averages())
}

/// Maximum-likelihood speaker under uniform priors.
pub fn gmm_identify(store: &TagStore, features: FeatureView<'_>) -> Result<GmmDecision> {
    Ok(store.decide(&tag_scores(store, features)?))
}
