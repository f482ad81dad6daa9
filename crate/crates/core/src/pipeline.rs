//! End-to-end training and evaluation over a manifest.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioClip, MixMode};
use crate::cascade::{
    self, likelihood_vectors, Aggregation, SegmentPlan, INPUT_LIKELIHOOD, INPUT_LIKELIHOOD_NORMALIZED,
    INPUT_MFCC_STATS,
};
use crate::corpus::{interference, mix_seed, Manifest, ManifestEntry, NoiseKind, Split};
use crate::dnn::{self, Architecture, Dataset, DnnModel, Standardization, TrainConfig};
use crate::error::{Error, Result, ResultExt};
use crate::evaluation::{build_report, Condition, Mode, Report, SdKind, TrialRecord};
use crate::frontend::{FrontEnd, FrontEndConfig};
use crate::gmm::{em_fit, EmConfig, GmmTag, TagLabel, TagStore};
use crate::mfcc::{FeatureMatrix, FeatureMeta};
use crate::wav;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSettings {
    pub components: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for GmmSettings {
    fn default() -> Self {
        let em = EmConfig::default();
        GmmSettings {
            components: 16,
            max_iters: em.max_iters,
            tol: em.tol,
            variance_floor: em.variance_floor,
            seed: 0,
        }
    }
}

impl GmmSettings {
    /// EM settings for one tag; the seed is derived from the pair indices.
    pub fn em_config(&self, speaker: usize, emotion: usize) -> EmConfig {
        EmConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            variance_floor: self.variance_floor,
            seed: mix_seed(&[self.seed, speaker as u64, emotion as u64]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnSettings {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_decay: f64,
    pub seed: u64,
    /// Normalize each likelihood vector and standardize inputs with training
    /// statistics; when false the network sees raw values.
    pub standardize: bool,
    /// Cascade training vectors come from tags that did not see the
    /// utterance's sentence: train sentences are dealt into this many folds
    /// and each fold is scored by tags trained on the others. 0 or 1 scores
    /// training data with the final tags instead.
    pub cross_fit_folds: usize,
    /// Segment overlap used when cutting training examples; denser than the
    /// decision-time overlap so each utterance yields more examples.
    pub train_overlap: f64,
}

impl Default for DnnSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        DnnSettings {
            hidden: vec![128; 4],
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_decay: t.lr_decay,
            seed: 0,
            standardize: true,
            cross_fit_folds: 0,
            train_overlap: 0.9,
        }
    }
}

impl DnnSettings {
    /// Segmentation of training utterances for a decision-time `plan`.
    pub fn training_plan(&self, plan: &SegmentPlan) -> SegmentPlan {
        SegmentPlan {
            frames: plan.frames,
            overlap: self.train_overlap,
        }
    }

    pub fn train_config(&self, salt: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: mix_seed(&[self.seed, salt]),
            lr_decay: self.lr_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionSettings {
    /// Signal-to-interference ratio, read according to `mode`.
    pub ratio: f64,
    pub mode: MixMode,
    /// Built-in interference used when no noise file is given.
    pub noise: NoiseKind,
    pub noise_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for DistortionSettings {
    fn default() -> Self {
        DistortionSettings {
            ratio: 2.0,
            mode: MixMode::Power,
            noise: NoiseKind::Rumble,
            noise_path: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub frontend: FrontEndConfig,
    pub gmm: GmmSettings,
    pub segment: SegmentPlan,
    pub dnn: DnnSettings,
    pub aggregation: Aggregation,
    pub distortion: DistortionSettings,
    pub sd_kind: SdKind,
    /// Worker threads; `None` uses all cores. Never changes results.
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            frontend: FrontEndConfig::default(),
            gmm: GmmSettings::default(),
            segment: SegmentPlan::default(),
            dnn: DnnSettings::default(),
            aggregation: Aggregation::Mean,
            distortion: DistortionSettings::default(),
            sd_kind: SdKind::Sample,
            jobs: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.segment.validate()?;
        self.dnn.training_plan(&self.segment).validate()?;
        if self.gmm.components == 0 || self.gmm.max_iters == 0 {
            return Err(Error::Config("GMM components and iterations must be positive".into()));
        }
        if !(self.gmm.variance_floor > 0.0 && self.gmm.tol >= 0.0) {
            return Err(Error::Config("GMM variance floor must be positive and tolerance non-negative".into()));
        }
        if self.dnn.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        self.dnn.train_config(0).validate()?;
        if !(self.distortion.ratio > 0.0 && self.distortion.ratio.is_finite()) {
            return Err(Error::Config(format!("mixing ratio {} must be positive", self.distortion.ratio)));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Loads an entry's audio and brings it to the working rate.
pub fn load_conditioned(manifest: &Manifest, entry: &ManifestEntry, frontend: &FrontEnd) -> Result<AudioClip> {
    let path = manifest.resolve(entry);
    let clip = wav::read_wav(&path)?;
    frontend.condition(&clip).in_file(&path)
}

pub fn entry_features(manifest: &Manifest, entry: &ManifestEntry, config: &FrontEndConfig) -> Result<FeatureMatrix> {
    let mut fe = FrontEnd::new(config.clone())?;
    let clip = load_conditioned(manifest, entry, &fe)?;
    let mut f = fe.features_from_conditioned(&clip).in_file(manifest.resolve(entry))?;
    f.meta.source_id = entry.utterance_id();
    Ok(f)
}

/// Features for each entry, in order; failures are kept per entry.
pub fn extract_all(manifest: &Manifest, entries: &[&ManifestEntry], config: &FrontEndConfig) -> Vec<Result<FeatureMatrix>> {
    entries
        .par_iter()
        .map(|e| entry_features(manifest, e, config))
        .collect()
}

fn collect_features(manifest: &Manifest, entries: &[&ManifestEntry], config: &FrontEndConfig) -> Result<Vec<FeatureMatrix>> {
    extract_all(manifest, entries, config).into_iter().collect()
}

/// Training utterances with their speaker and emotion roster indices.
pub struct TrainingSet<'a> {
    pub entries: Vec<&'a ManifestEntry>,
    pub features: Vec<FeatureMatrix>,
    pub speakers: Vec<String>,
    pub emotions: Vec<crate::corpus::Emotion>,
}

impl<'a> TrainingSet<'a> {
    pub fn extract(manifest: &'a Manifest, config: &FrontEndConfig) -> Result<Self> {
        let entries: Vec<&ManifestEntry> = manifest.split(Split::Train).collect();
        if entries.is_empty() {
            return Err(Error::InsufficientData("manifest has no training entries".into()));
        }
        for s in manifest.speakers() {
            for em in manifest.emotions() {
                if !entries.iter().any(|e| &e.speaker_id == s && e.emotion == *em) {
                    return Err(Error::InsufficientData(format!("no training data for ({s}, {em})")));
                }
            }
        }
        let features = collect_features(manifest, &entries, config).in_stage("extract")?;
        Ok(TrainingSet {
            entries,
            features,
            speakers: manifest.speakers().to_vec(),
            emotions: manifest.emotions().to_vec(),
        })
    }

    fn speaker_index(&self, i: usize) -> usize {
        self.speakers
            .iter()
            .position(|s| *s == self.entries[i].speaker_id)
            .expect("speaker in roster")
    }
}

/// One EM-trained tag per (speaker, emotion) pair.
pub fn train_tags(set: &TrainingSet<'_>, frontend: &FrontEndConfig, gmm: &GmmSettings) -> Result<TagStore> {
    let pairs: Vec<(usize, usize)> = (0..set.speakers.len())
        .flat_map(|s| (0..set.emotions.len()).map(move |e| (s, e)))
        .collect();
    let tags = pairs
        .par_iter()
        .map(|&(s, e)| {
            let views = set
                .entries
                .iter()
                .zip(&set.features)
                .filter(|(en, _)| en.speaker_id == set.speakers[s] && en.emotion == set.emotions[e])
                .map(|(_, f)| f.view());
            let meta = FeatureMeta {
                source_id: format!("{}/{}", set.speakers[s], set.emotions[e]),
                ..set.features[0].meta.clone()
            };
            let pooled = FeatureMatrix::concat(views, meta)?;
            let fit = em_fit(pooled.view(), gmm.components, &gmm.em_config(s, e)).map_err(|err| {
                Error::InsufficientData(format!("({}, {}): {err}", set.speakers[s], set.emotions[e]))
            })?;
            Ok(GmmTag {
                label: TagLabel {
                    speaker: set.speakers[s].clone(),
                    emotion: set.emotions[e],
                },
                model: fit.model,
                train_meta: fit.meta,
            })
        })
        .collect::<Result<Vec<_>>>()
        .in_stage("train-gmm")?;
    Ok(TagStore::new(set.speakers.clone(), set.emotions.clone(), tags)?.with_frontend(frontend.clone()))
}

fn fit_network(
    data: &Dataset,
    settings: &DnnSettings,
    salt: u64,
    input_kind: &str,
    classes: &[String],
) -> Result<DnnModel> {
    let arch = Architecture {
        input_size: data.inputs[0].len(),
        hidden: settings.hidden.clone(),
        output_size: classes.len(),
    };
    let standardization = if settings.standardize {
        Some(Standardization::fit(&data.inputs)?)
    } else {
        None
    };
    let mut model = dnn::train(data, &settings.train_config(salt), &arch, standardization)?;
    model.input_kind = input_kind.to_string();
    model.class_labels = classes.to_vec();
    Ok(model)
}

/// Sentence folds for cross-fitting, or `None` when some (speaker, emotion)
/// pair would have no training data outside a fold.
fn sentence_folds(set: &TrainingSet<'_>, k: usize) -> Option<Vec<usize>> {
    let sentences: Vec<&str> = set
        .entries
        .iter()
        .map(|e| e.sentence_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = k.min(sentences.len());
    if k < 2 {
        return None;
    }
    let fold_of = |e: &ManifestEntry| sentences.binary_search(&e.sentence_id.as_str()).expect("known sentence") % k;
    let folds: Vec<usize> = set.entries.iter().map(|e| fold_of(e)).collect();
    for f in 0..k {
        for s in &set.speakers {
            for em in &set.emotions {
                let covered = set
                    .entries
                    .iter()
                    .zip(&folds)
                    .any(|(e, &ef)| ef != f && &e.speaker_id == s && e.emotion == *em);
                if !covered {
                    return None;
                }
            }
        }
    }
    Some(folds)
}

impl<'a> TrainingSet<'a> {
    fn subset(&self, keep: impl Fn(usize) -> bool) -> TrainingSet<'a> {
        let idx: Vec<usize> = (0..self.entries.len()).filter(|&i| keep(i)).collect();
        TrainingSet {
            entries: idx.iter().map(|&i| self.entries[i]).collect(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            speakers: self.speakers.clone(),
            emotions: self.emotions.clone(),
        }
    }
}

/// Per-segment likelihood vectors of every training utterance, in entry
/// order, cross-fitted over sentence folds when configured.
pub fn training_vectors(
    set: &TrainingSet<'_>,
    store: &TagStore,
    plan: &SegmentPlan,
    gmm: &GmmSettings,
    folds: usize,
) -> Result<Vec<Vec<crate::cascade::LikelihoodVector>>> {
    let score = |st: &TagStore, f: &FeatureMatrix| {
        likelihood_vectors(st, f.view(), plan, &f.meta.source_id).map(|v| v.0)
    };
    let Some(assignment) = sentence_folds(set, folds) else {
        if folds > 1 {
            log::warn!("cross-fitting disabled: some pair has no data outside a sentence fold");
        }
        return set.features.par_iter().map(|f| score(store, f)).collect();
    };
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut out: Vec<Option<Vec<crate::cascade::LikelihoodVector>>> = vec![None; set.entries.len()];
    for fold in 0..k {
        let rest = set.subset(|i| assignment[i] != fold);
        let fold_gmm = GmmSettings {
            seed: mix_seed(&[gmm.seed, 0xf01d, fold as u64]),
            ..gmm.clone()
        };
        let fold_store = train_tags(&rest, &store.frontend, &fold_gmm)?;
        let held: Vec<usize> = (0..set.entries.len()).filter(|&i| assignment[i] == fold).collect();
        let vectors = held
            .par_iter()
            .map(|&i| score(&fold_store, &set.features[i]))
            .collect::<Result<Vec<_>>>()?;
        for (i, v) in held.into_iter().zip(vectors) {
            out[i] = Some(v);
        }
    }
    Ok(out.into_iter().map(|v| v.expect("every entry is in one fold")).collect())
}

/// Trains the cascade network on per-segment likelihood vectors of the
/// training utterances.
pub fn train_cascade_dnn(
    set: &TrainingSet<'_>,
    store: &TagStore,
    plan: &SegmentPlan,
    gmm: &GmmSettings,
    settings: &DnnSettings,
) -> Result<DnnModel> {
    let normalized = settings.standardize;
    let plan = settings.training_plan(plan);
    plan.validate()?;
    let per_utt = training_vectors(set, store, &plan, gmm, settings.cross_fit_folds).in_stage("train-dnn")?;
    let mut data = Dataset::default();
    for (i, vectors) in per_utt.into_iter().enumerate() {
        let label = set.speaker_index(i);
        for v in vectors {
            data.push(if normalized { v.normalized() } else { v.values }, label);
        }
    }
    let kind = if normalized { INPUT_LIKELIHOOD_NORMALIZED } else { INPUT_LIKELIHOOD };
    fit_network(&data, settings, 1, kind, &set.speakers).in_stage("train-dnn")
}

/// Trains the network-alone baseline on pooled MFCC statistics.
pub fn train_mfcc_dnn(set: &TrainingSet<'_>, plan: &SegmentPlan, settings: &DnnSettings) -> Result<DnnModel> {
    let plan = settings.training_plan(plan);
    plan.validate()?;
    let mut data = Dataset::default();
    for (i, f) in set.features.iter().enumerate() {
        let label = set.speaker_index(i);
        for (_, stats) in cascade::segment_stats(f.view(), &plan) {
            data.push(stats, label);
        }
    }
    fit_network(&data, settings, 2, INPUT_MFCC_STATS, &set.speakers).in_stage("train-dnn")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: RunConfig,
    pub train_utterances: usize,
    pub speakers: Vec<String>,
    pub emotions: Vec<crate::corpus::Emotion>,
    pub tags: usize,
    pub em_iterations: Vec<usize>,
    pub em_unconverged: usize,
    pub cascade_final_loss: f64,
    pub mfcc_dnn_final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub store: TagStore,
    pub cascade: DnnModel,
    pub mfcc_dnn: DnnModel,
    pub report: TrainReport,
}

pub const TAGS_FILE: &str = "tags.bin";
pub const CASCADE_FILE: &str = "cascade.dnn";
pub const MFCC_DNN_FILE: &str = "mfcc.dnn";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";

/// Tags, cascade network and network-alone baseline from the train split.
pub fn train_all(manifest: &Manifest, config: &RunConfig) -> Result<Trained> {
    config.validate()?;
    with_jobs(config.jobs, || {
        let set = TrainingSet::extract(manifest, &config.frontend)?;
        let store = train_tags(&set, &config.frontend, &config.gmm)?;
        let cascade = train_cascade_dnn(&set, &store, &config.segment, &config.gmm, &config.dnn)?;
        let mfcc_dnn = train_mfcc_dnn(&set, &config.segment, &config.dnn)?;
        let report = TrainReport {
            config: config.clone(),
            train_utterances: set.entries.len(),
            speakers: store.speakers().to_vec(),
            emotions: store.emotions().to_vec(),
            tags: store.len(),
            em_iterations: store.tags().iter().map(|t| t.train_meta.iterations).collect(),
            em_unconverged: store.tags().iter().filter(|t| !t.train_meta.converged).count(),
            cascade_final_loss: cascade.train_meta.final_loss,
            mfcc_dnn_final_loss: mfcc_dnn.train_meta.final_loss,
        };
        Ok(Trained {
            store,
            cascade,
            mfcc_dnn,
            report,
        })
    })?
}

impl Trained {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
        self.store.save(dir.join(TAGS_FILE))?;
        self.cascade.save(dir.join(CASCADE_FILE))?;
        self.mfcc_dnn.save(dir.join(MFCC_DNN_FILE))?;
        let path = dir.join(TRAIN_REPORT_FILE);
        let text = serde_json::to_string_pretty(&self.report)? + "\n";
        std::fs::write(&path, text).map_err(|e| Error::from(e).in_file(&path))
    }
}

/// Trained models as consumed by evaluation; absent models skip their mode.
pub struct Models {
    pub store: TagStore,
    pub cascade: Option<DnnModel>,
    pub mfcc_dnn: Option<DnnModel>,
}

impl Models {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let optional = |name: &str| -> Result<Option<DnnModel>> {
            let p = dir.join(name);
            if p.exists() {
                DnnModel::load(p).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(Models {
            store: TagStore::load(dir.join(TAGS_FILE))?,
            cascade: optional(CASCADE_FILE)?,
            mfcc_dnn: optional(MFCC_DNN_FILE)?,
        })
    }
}

impl From<Trained> for Models {
    fn from(t: Trained) -> Self {
        Models {
            store: t.store,
            cascade: Some(t.cascade),
            mfcc_dnn: Some(t.mfcc_dnn),
        }
    }
}

fn load_noise(settings: &DistortionSettings, rate: u32) -> Result<Option<AudioClip>> {
    match &settings.noise_path {
        None => Ok(None),
        Some(p) => {
            let clip = wav::read_wav(p)?;
            audio::resample(&clip, rate).map(Some).in_file(p)
        }
    }
}

/// Speaker decisions of every requested mode for one utterance's features.
fn decide_modes(
    models: &Models,
    features: &FeatureMatrix,
    modes: &[Mode],
    config: &RunConfig,
) -> Result<Vec<(Mode, String)>> {
    let store = &models.store;
    let view = features.view();
    let (vectors, utt) = likelihood_vectors(store, view, &config.segment, &features.meta.source_id)?;
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let speaker = match mode {
            Mode::Gmm => store.decide(&utt).speaker,
            Mode::Cascade => {
                let net = models.cascade.as_ref().expect("checked before evaluation");
                cascade::classify_vectors(store, net, &vectors, &utt, config.aggregation)?.speaker
            }
            Mode::Dnn => {
                let net = models.mfcc_dnn.as_ref().expect("checked before evaluation");
                cascade::classify_dnn_only(net, store.speakers(), view, &config.segment, config.aggregation)?.speaker
            }
        };
        out.push((mode, speaker));
    }
    Ok(out)
}

/// Scores the test split under every requested mode, plus a distorted copy
/// of each utterance when `distort` is set.
pub fn evaluate(
    manifest: &Manifest,
    models: &Models,
    config: &RunConfig,
    modes: &[Mode],
    distort: bool,
) -> Result<(Vec<TrialRecord>, Report)> {
    config.validate()?;
    let store = &models.store;
    if store.frontend != config.frontend {
        return Err(Error::Config(
            "front-end settings differ from those the tag store was trained with".into(),
        ));
    }
    if modes.contains(&Mode::Cascade) {
        match &models.cascade {
            Some(net) => cascade::check_cascade_sizes(store, net)?,
            None => return Err(Error::Input("cascade mode requested but no cascade network loaded".into())),
        }
    }
    if modes.contains(&Mode::Dnn) && models.mfcc_dnn.is_none() {
        return Err(Error::Input("dnn mode requested but no network-alone model loaded".into()));
    }
    let entries: Vec<&ManifestEntry> = manifest.split(Split::Test).collect();
    if entries.is_empty() {
        return Err(Error::Input("manifest has no test entries".into()));
    }
    if let Some(e) = entries.iter().find(|e| !store.speakers().contains(&e.speaker_id)) {
        return Err(Error::Input(format!(
            "test speaker {} is not enrolled in the tag store",
            e.speaker_id
        )));
    }
    let rate = config.frontend.target_rate_hz;
    let noise_file = load_noise(&config.distortion, rate)?;

    let per_entry = with_jobs(config.jobs, || {
        entries
            .par_iter()
            .enumerate()
            .map(|(i, entry)| -> Result<Vec<TrialRecord>> {
                let mut fe = FrontEnd::new(config.frontend.clone())?;
                let clip = load_conditioned(manifest, entry, &fe)?;
                let mut conditions = vec![(Condition::Normal, clip.clone())];
                if distort {
                    let noise = match &noise_file {
                        Some(n) => n.clone(),
                        None => interference(
                            config.distortion.noise,
                            clip.len(),
                            rate,
                            mix_seed(&[config.distortion.seed, i as u64]),
                        )?,
                    };
                    let mixed = audio::mix_interference(&clip, &noise, config.distortion.ratio, config.distortion.mode)?;
                    conditions.push((Condition::Distorted, mixed.clip));
                }
                let mut records = Vec::new();
                for (condition, c) in conditions {
                    let mut f = fe.features_from_conditioned(&c).in_file(manifest.resolve(entry))?;
                    f.meta.source_id = entry.utterance_id();
                    for (mode, predicted) in decide_modes(models, &f, modes, config)? {
                        records.push(TrialRecord {
                            utterance_id: entry.utterance_id(),
                            true_speaker: entry.speaker_id.clone(),
                            predicted_speaker: predicted,
                            emotion: entry.emotion,
                            condition,
                            classifier_mode: mode,
                            repetition: entry.repetition,
                        });
                    }
                }
                Ok(records)
            })
            .collect::<Vec<_>>()
    })?;
    let mut records = Vec::new();
    for r in per_entry {
        records.extend(r.in_stage("evaluate")?);
    }
    let report = build_report(
        &records,
        modes,
        config.sd_kind,
        serde_json::json!({ "run": config, "distorted": distort }),
    )?;
    Ok((records, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub decision: String,
    pub posterior: Vec<f64>,
    pub speakers: Vec<String>,
    pub per_segment: Vec<cascade::SegmentDetail>,
    pub tie: bool,
    pub gmm_decision: String,
    pub agreement: bool,
    pub mask: Vec<u8>,
}

/// Cascade identification of one utterance's features.
pub fn identify(store: &TagStore, net: &DnnModel, features: &FeatureMatrix, config: &RunConfig) -> Result<Identification> {
    let d = cascade::classify(store, net, features.view(), &config.segment, config.aggregation)?;
    Ok(Identification {
        decision: d.speaker,
        posterior: d.posterior,
        speakers: store.speakers().to_vec(),
        per_segment: d.per_segment,
        tie: d.tie,
        gmm_decision: d.gmm.speaker,
        agreement: d.agreement,
        mask: d.mask,
    })
}
