//! Dataset manifests, protocol bookkeeping and the synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::wav;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral,
    Happy,
    Sad,
    Disgust,
    Angry,
    Fear,
}

impl Emotion {
    pub const ALL: [Emotion; 6] = [
        Emotion::Neutral,
        Emotion::Happy,
        Emotion::Sad,
        Emotion::Disgust,
        Emotion::Angry,
        Emotion::Fear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Disgust => "disgust",
            Emotion::Angry => "angry",
            Emotion::Fear => "fear",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Emotion::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown emotion {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub speaker_id: String,
    pub emotion: Emotion,
    pub sentence_id: String,
    pub repetition: u32,
    pub split: Split,
}

impl ManifestEntry {
    /// Stable identifier used in trial records and feature file names.
    pub fn utterance_id(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.speaker_id, self.emotion, self.sentence_id, self.repetition
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    speakers: Vec<String>,
    emotions: Vec<Emotion>,
    base_dir: PathBuf,
}

const REQUIRED_FIELDS: [&str; 6] = ["path", "speaker_id", "emotion", "sentence_id", "repetition", "split"];

impl Manifest {
    /// Validates split disjointness and train coverage; rosters come out
    /// sorted (speakers lexicographically, emotions in canonical order).
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let problems = check_entries(&entries, |i| format!("entry {}", i + 1));
        if !problems.is_empty() {
            return Err(Error::Manifest(problems));
        }
        Ok(Self::assemble(entries, base_dir.into()))
    }

    fn assemble(entries: Vec<ManifestEntry>, base_dir: PathBuf) -> Self {
        let speakers: BTreeSet<&String> = entries.iter().map(|e| &e.speaker_id).collect();
        let emotions: BTreeSet<Emotion> = entries.iter().map(|e| e.emotion).collect();
        Manifest {
            speakers: speakers.into_iter().cloned().collect(),
            emotions: emotions.into_iter().collect(),
            entries,
            base_dir,
        }
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn emotions(&self) -> &[Emotion] {
        &self.emotions
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::from(e).in_file(path))
    }
}

fn check_entries(entries: &[ManifestEntry], locate: impl Fn(usize) -> String) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen: BTreeMap<(&str, &str), (Split, usize)> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        match seen.get(&(e.speaker_id.as_str(), e.sentence_id.as_str())) {
            Some(&(split, first)) if split != e.split => problems.push(format!(
                "{}: speaker {} sentence {} is in {} but {} already has it in {}",
                locate(i),
                e.speaker_id,
                e.sentence_id,
                e.split,
                locate(first),
                split
            )),
            Some(_) => {}
            None => {
                seen.insert((&e.speaker_id, &e.sentence_id), (e.split, i));
            }
        }
    }
    let speakers: BTreeSet<&str> = entries.iter().map(|e| e.speaker_id.as_str()).collect();
    let emotions: BTreeSet<Emotion> = entries.iter().map(|e| e.emotion).collect();
    let trained: BTreeSet<(&str, Emotion)> = entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| (e.speaker_id.as_str(), e.emotion))
        .collect();
    for s in &speakers {
        for &em in &emotions {
            if !trained.contains(&(*s, em)) {
                problems.push(format!("no training entry for ({s}, {em})"));
            }
        }
    }
    problems
}

/// Reads a JSON-lines or CSV manifest (CSV when the extension is `.csv`).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    let is_csv = path
        .extension()
        .is_some_and(|x| x.eq_ignore_ascii_case("csv"));
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = if is_csv {
        parse_csv(&text, base)
    } else {
        parse_jsonl(&text, base)
    };
    manifest.map_err(|e| e.in_file(path))
}

/// Per-row raw fields with their 1-based source line number.
type RawRow = (usize, BTreeMap<String, String>);

pub fn parse_jsonl(text: &str, base_dir: impl Into<PathBuf>) -> Result<Manifest> {
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(line) {
            Ok(obj) => {
                let fields = obj
                    .into_iter()
                    .map(|(k, v)| {
                        let s = match v {
                            serde_json::Value::String(s) => s,
                            other => other.to_string(),
                        };
                        (k, s)
                    })
                    .collect();
                rows.push((i + 1, fields));
            }
            Err(e) => problems.push(format!("line {}: not a JSON object ({e})", i + 1)),
        }
    }
    finish_rows(rows, problems, base_dir.into())
}

pub fn parse_csv(text: &str, base_dir: impl Into<PathBuf>) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(vec![format!("line 1: unreadable header ({e})")]))?
        .clone();
    let mut problems: Vec<String> = REQUIRED_FIELDS
        .iter()
        .filter(|f| !headers.iter().any(|h| h == **f))
        .map(|f| format!("line 1: header lacks column {f:?}"))
        .collect();
    if !problems.is_empty() {
        return Err(Error::Manifest(problems));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        match record {
            Ok(r) => {
                let line = r.position().map(|p| p.line() as usize).unwrap_or(0);
                let fields = headers
                    .iter()
                    .zip(r.iter())
                    .map(|(h, v)| (h.to_string(), v.to_string()))
                    .collect();
                rows.push((line, fields));
            }
            Err(e) => problems.push(format!("unreadable CSV record: {e}")),
        }
    }
    finish_rows(rows, problems, base_dir.into())
}

fn finish_rows(rows: Vec<RawRow>, mut problems: Vec<String>, base_dir: PathBuf) -> Result<Manifest> {
    let mut entries = Vec::with_capacity(rows.len());
    let mut lines = Vec::with_capacity(rows.len());
    for (line, fields) in rows {
        match entry_from_fields(&fields) {
            Ok(e) => {
                entries.push(e);
                lines.push(line);
            }
            Err(msgs) => problems.extend(msgs.into_iter().map(|m| format!("line {line}: {m}"))),
        }
    }
    if problems.is_empty() {
        problems = check_entries(&entries, |i| format!("line {}", lines[i]));
    }
    if !problems.is_empty() {
        return Err(Error::Manifest(problems));
    }
    Ok(Manifest::assemble(entries, base_dir))
}

fn entry_from_fields(fields: &BTreeMap<String, String>) -> std::result::Result<ManifestEntry, Vec<String>> {
    let missing: Vec<String> = REQUIRED_FIELDS
        .iter()
        .filter(|f| fields.get(**f).is_none_or(|v| v.is_empty()))
        .map(|f| format!("missing field {f:?}"))
        .collect();
    if !missing.is_empty() {
        return Err(missing);
    }
    let mut errs = Vec::new();
    let emotion = fields["emotion"]
        .parse::<Emotion>()
        .map_err(|_| errs.push(format!("emotion {:?} is not one of {}", fields["emotion"], emotion_list())))
        .ok();
    let split = fields["split"]
        .parse::<Split>()
        .map_err(|_| errs.push(format!("split {:?} is neither train nor test", fields["split"])))
        .ok();
    let repetition = fields["repetition"]
        .parse::<u32>()
        .map_err(|_| errs.push(format!("repetition {:?} is not a non-negative integer", fields["repetition"])))
        .ok();
    match (emotion, split, repetition) {
        (Some(emotion), Some(split), Some(repetition)) => Ok(ManifestEntry {
            path: PathBuf::from(&fields["path"]),
            speaker_id: fields["speaker_id"].clone(),
            emotion,
            sentence_id: fields["sentence_id"].clone(),
            repetition,
            split,
        }),
        _ => Err(errs),
    }
}

fn emotion_list() -> String {
    Emotion::ALL.map(Emotion::as_str).join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub split: Split,
    pub total: usize,
    pub speakers: usize,
    pub sentences: usize,
    pub repetitions: usize,
    pub emotions: usize,
    /// speakers × sentences × repetitions × emotions.
    pub factorial_total: usize,
    pub full_factorial: bool,
    /// Absent (speaker, emotion, sentence, repetition) tuples.
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub splits: Vec<SplitCounts>,
}

impl ProtocolSummary {
    pub fn get(&self, split: Split) -> Option<&SplitCounts> {
        self.splits.iter().find(|s| s.split == split)
    }
}

/// Per-split totals checked against the full-factorial product.
pub fn protocol_counts(manifest: &Manifest) -> ProtocolSummary {
    let splits = [Split::Train, Split::Test]
        .into_iter()
        .filter_map(|split| {
            let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
            if entries.is_empty() {
                return None;
            }
            let sentences: BTreeSet<&str> = entries.iter().map(|e| e.sentence_id.as_str()).collect();
            let reps: BTreeSet<u32> = entries.iter().map(|e| e.repetition).collect();
            let present: BTreeSet<(&str, Emotion, &str, u32)> = entries
                .iter()
                .map(|e| (e.speaker_id.as_str(), e.emotion, e.sentence_id.as_str(), e.repetition))
                .collect();
            let mut missing = Vec::new();
            for s in manifest.speakers() {
                for &em in manifest.emotions() {
                    for sent in &sentences {
                        for &r in &reps {
                            if !present.contains(&(s.as_str(), em, *sent, r)) {
                                missing.push(format!("({s}, {em}, {sent}, {r})"));
                            }
                        }
                    }
                }
            }
            let factorial_total =
                manifest.speakers().len() * manifest.emotions().len() * sentences.len() * reps.len();
            Some(SplitCounts {
                split,
                total: entries.len(),
                speakers: manifest.speakers().len(),
                sentences: sentences.len(),
                repetitions: reps.len(),
                emotions: manifest.emotions().len(),
                factorial_total,
                full_factorial: missing.is_empty() && entries.len() == factorial_total,
                missing,
            })
        })
        .collect();
    ProtocolSummary { splits }
}

/// Named speaker-separation levels for the synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separation {
    High,
    Medium,
    Low,
}

impl Separation {
    pub fn value(self) -> f64 {
        match self {
            Separation::High => 1.0,
            Separation::Medium => 0.2,
            Separation::Low => 0.1,
        }
    }
}

impl FromStr for Separation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(Separation::High),
            "medium" => Ok(Separation::Medium),
            "low" => Ok(Separation::Low),
            other => Err(Error::Config(format!("unknown separation level {other:?}"))),
        }
    }
}

/// Per-emotion modulation of the glottal source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionStyle {
    pub pitch_scale: f64,
    pub energy_scale: f64,
    /// Relative standard deviation of each pitch period.
    pub jitter: f64,
}

impl EmotionStyle {
    pub fn for_emotion(e: Emotion) -> Self {
        let (pitch_scale, energy_scale, jitter) = match e {
            Emotion::Neutral => (1.0, 1.0, 0.005),
            Emotion::Happy => (1.25, 1.2, 0.012),
            Emotion::Sad => (0.85, 0.7, 0.008),
            Emotion::Disgust => (0.95, 0.9, 0.015),
            Emotion::Angry => (1.3, 1.4, 0.02),
            Emotion::Fear => (1.35, 0.85, 0.025),
        };
        EmotionStyle {
            pitch_scale,
            energy_scale,
            jitter,
        }
    }
}

/// A synthetic speaker: vocal-tract resonance scaling and glottal parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerVoice {
    pub speaker_id: String,
    pub f0_hz: f64,
    /// Multiplier per formant (F1..F4).
    pub formant_scale: [f64; 4],
    pub bandwidth_scale: f64,
    /// One-pole source low-pass coefficient; higher means darker voice.
    pub tilt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_speakers: usize,
    /// Takes the first n emotions in canonical order.
    pub num_emotions: usize,
    pub sentences_per_split: usize,
    pub repetitions: usize,
    pub sample_rate_hz: u32,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub seed: u64,
    /// Scales how far speaker voices spread from the average voice.
    pub separation: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_speakers: 10,
            num_emotions: 6,
            sentences_per_split: 4,
            repetitions: 3,
            sample_rate_hz: 12_000,
            min_duration_s: 1.0,
            max_duration_s: 1.5,
            seed: 7,
            separation: Separation::High.value(),
        }
    }
}

// Average-voice formants (Hz) for the vowel inventory.
const VOWELS: [[f64; 4]; 7] = [
    [730.0, 1090.0, 2440.0, 3400.0],
    [270.0, 2290.0, 3010.0, 3500.0],
    [300.0, 870.0, 2240.0, 3300.0],
    [530.0, 1840.0, 2480.0, 3450.0],
    [570.0, 840.0, 2410.0, 3350.0],
    [660.0, 1720.0, 2410.0, 3400.0],
    [490.0, 1350.0, 1690.0, 3300.0],
];
const BANDWIDTHS: [f64; 4] = [70.0, 100.0, 140.0, 200.0];
const SEGMENTS_PER_SENTENCE: usize = 6;
const DITHER: f64 = 1e-3;

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 folded over the parts.
    let mut z = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

impl SynthSpec {
    pub fn with_separation(mut self, level: Separation) -> Self {
        self.separation = level.value();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.sentences_per_split == 0 || self.repetitions == 0 {
            return Err(Error::Config("synthetic corpus counts must be at least 1".into()));
        }
        if !(1..=Emotion::ALL.len()).contains(&self.num_emotions) {
            return Err(Error::Config(format!("num_emotions must be 1..=6, got {}", self.num_emotions)));
        }
        if self.sample_rate_hz < 8000 {
            return Err(Error::Config("synthetic sample rate must be at least 8000 Hz".into()));
        }
        if !(self.min_duration_s >= 0.1 && self.max_duration_s >= self.min_duration_s) {
            return Err(Error::Config("need 0.1 ≤ min duration ≤ max duration".into()));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Config("separation must be non-negative".into()));
        }
        Ok(())
    }

    pub fn emotions(&self) -> Vec<Emotion> {
        Emotion::ALL[..self.num_emotions.min(Emotion::ALL.len())].to_vec()
    }

    pub fn speaker_id(&self, index: usize) -> String {
        format!("spk{index:02}")
    }

    /// Speaker voices. Vocal-tract scales are spread evenly (in shuffled
    /// order) so no two speakers coincide at any separation above zero.
    pub fn voices(&self) -> Vec<SpeakerVoice> {
        let n = self.num_speakers;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, 1]));
        let mut slots: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            slots.swap(i, rng.random_range(0..=i));
        }
        let sep = self.separation;
        (0..n)
            .map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, 2, s as u64]));
                let spread = if n > 1 {
                    2.0 * slots[s] as f64 / (n - 1) as f64 - 1.0
                } else {
                    0.0
                };
                let vtl = 1.0 + sep * 0.18 * spread;
                let mut formant_scale = [0.0; 4];
                for f in &mut formant_scale {
                    *f = vtl * (1.0 + sep * r.random_range(-0.06..0.06));
                }
                SpeakerVoice {
                    speaker_id: self.speaker_id(s),
                    f0_hz: 150.0 * (1.0 + sep * r.random_range(-0.4..0.4)),
                    formant_scale,
                    bandwidth_scale: 1.0 + sep * r.random_range(-0.3..0.3),
                    tilt: 0.93 + sep * r.random_range(-0.04..0.04),
                }
            })
            .collect()
    }

    /// Vowel index and relative length of each segment of a sentence.
    fn sentence_plan(&self, sentence: usize) -> Vec<(usize, f64)> {
        let mut r = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, 3, sentence as u64]));
        (0..SEGMENTS_PER_SENTENCE)
            .map(|_| (r.random_range(0..VOWELS.len()), r.random_range(0.6..1.4)))
            .collect()
    }

    fn entries(&self) -> Vec<(usize, Emotion, usize, usize)> {
        let mut out = Vec::new();
        for s in 0..self.num_speakers {
            for e in self.emotions() {
                for sent in 0..2 * self.sentences_per_split {
                    for rep in 0..self.repetitions {
                        out.push((s, e, sent, rep));
                    }
                }
            }
        }
        out
    }

    /// Renders one utterance; the randomness is a function of the tuple only.
    pub fn render(&self, voice: &SpeakerVoice, emotion: Emotion, sentence: usize, repetition: usize) -> Vec<f64> {
        let speaker_index = voice.speaker_id.trim_start_matches("spk").parse::<u64>().unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
            self.seed,
            4,
            speaker_index,
            emotion as u64,
            sentence as u64,
            repetition as u64,
        ]));
        let style = EmotionStyle::for_emotion(emotion);
        let fs = f64::from(self.sample_rate_hz);
        let duration = rng.random_range(self.min_duration_s..=self.max_duration_s);
        let n = (duration * fs).round() as usize;
        let plan = self.sentence_plan(sentence);
        let total_weight: f64 = plan.iter().map(|p| p.1).sum();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");

        // Segment boundaries in samples, with a short pause after each vowel.
        let pause = (0.03 * fs) as usize;
        let mut bounds = Vec::with_capacity(plan.len());
        let mut start = 0usize;
        for (i, (vowel, w)) in plan.iter().enumerate() {
            let len = if i + 1 == plan.len() {
                n.saturating_sub(start)
            } else {
                ((w / total_weight) * n as f64) as usize
            };
            let voiced_end = (start + len.saturating_sub(pause)).min(n);
            let mut formants = [0.0; 4];
            for (k, f) in formants.iter_mut().enumerate() {
                let wobble = 1.0 + 0.015 * unit.sample(&mut rng);
                *f = (VOWELS[*vowel][k] * voice.formant_scale[k] * wobble).min(0.45 * fs);
            }
            bounds.push((start, voiced_end, start + len, formants));
            start += len;
        }

        // Glottal pulse train with jitter, shimmer and a falling intonation.
        let mut source = vec![0.0; n];
        let f0 = voice.f0_hz * style.pitch_scale;
        let phase = rng.random_range(0.0..2.0 * PI);
        let mut t = 0.0f64;
        while (t as usize) < n {
            let idx = t as usize;
            if bounds.iter().any(|b| idx >= b.0 && idx < b.1) {
                source[idx] += 1.0 + 0.5 * style.jitter * unit.sample(&mut rng);
            }
            let pos = t / n as f64;
            let contour = 1.0 + 0.06 * (2.0 * PI * 1.5 * pos + phase).sin() - 0.1 * pos;
            let period = fs / (f0 * contour) * (1.0 + style.jitter * unit.sample(&mut rng));
            t += period.max(fs / 1000.0);
        }
        let mut lp = 0.0;
        for s in &mut source {
            lp = *s + voice.tilt * lp;
            *s = lp;
        }
        for s in &mut source {
            *s += 0.02 * unit.sample(&mut rng);
        }

        // Cascade of two-pole formant resonators, switching per segment.
        let mut out = vec![0.0; n];
        let mut state = [[0.0f64; 2]; 4];
        for &(seg_start, _, seg_end, formants) in &bounds {
            let coeffs: Vec<(f64, f64, f64)> = formants
                .iter()
                .zip(BANDWIDTHS)
                .map(|(&f, b)| {
                    let r = (-PI * b * voice.bandwidth_scale / fs).exp();
                    let theta = 2.0 * PI * f / fs;
                    (2.0 * r * theta.cos(), -r * r, 1.0 - r)
                })
                .collect();
            for i in seg_start..seg_end.min(n) {
                let mut x = source[i];
                for (k, &(a1, a2, g)) in coeffs.iter().enumerate() {
                    let y = g * x + a1 * state[k][0] + a2 * state[k][1];
                    state[k][1] = state[k][0];
                    state[k][0] = y;
                    x = y;
                }
                out[i] = x;
            }
        }

        // Amplitude envelope per segment, then level by emotion energy.
        for &(seg_start, voiced_end, _, _) in &bounds {
            let len = voiced_end.saturating_sub(seg_start).max(1) as f64;
            for i in seg_start..voiced_end {
                let p = (i - seg_start) as f64 / len;
                out[i] *= (PI * p).sin().powf(0.3);
            }
        }
        for &(_, voiced_end, seg_end, _) in &bounds {
            for v in &mut out[voiced_end.min(n)..seg_end.min(n)] {
                *v *= 0.05;
            }
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let level = (0.45 * style.energy_scale).min(0.9) / peak.max(1e-12);
        for v in &mut out {
            *v = (*v * level + DITHER * unit.sample(&mut rng)).clamp(-1.0, 1.0);
        }
        out
    }
}

/// Writes the corpus under `out_dir` (`wav/*.wav` plus `manifest.jsonl`).
/// The first `sentences_per_split` sentences are training material, the rest
/// test material. Output bytes depend only on the spec.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let wav_dir = out_dir.join("wav");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::from(e).in_file(&wav_dir))?;
    let voices = spec.voices();
    let tuples = spec.entries();
    let entries: Vec<ManifestEntry> = tuples
        .par_iter()
        .map(|&(s, emotion, sent, rep)| {
            let voice = &voices[s];
            let samples = spec.render(voice, emotion, sent, rep);
            let name = format!("{}_{}_s{:02}_r{}.wav", voice.speaker_id, emotion, sent, rep);
            let rel = PathBuf::from("wav").join(&name);
            let path = out_dir.join(&rel);
            let bytes = wav::encode_pcm16(&samples, spec.sample_rate_hz);
            std::fs::write(&path, bytes).map_err(|e| Error::from(e).in_file(&path))?;
            Ok(ManifestEntry {
                path: rel,
                speaker_id: voice.speaker_id.clone(),
                emotion,
                sentence_id: format!("s{sent:02}"),
                repetition: rep as u32,
                split: if sent < spec.sentences_per_split {
                    Split::Train
                } else {
                    Split::Test
                },
            })
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::new(entries, out_dir)?;
    let manifest_path = out_dir.join("manifest.jsonl");
    manifest.write_jsonl(&manifest_path)?;
    let spec_path = out_dir.join("synth_spec.json");
    let mut f = std::fs::File::create(&spec_path).map_err(|e| Error::from(e).in_file(&spec_path))?;
    writeln!(f, "{}", serde_json::to_string_pretty(spec)?).map_err(|e| Error::from(e).in_file(&spec_path))?;
    Ok(manifest)
}

/// Kinds of built-in interference for noise-stress runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    /// Leaky-integrated white noise, energy concentrated at low frequencies.
    Brown,
    /// White noise through two leaky integrators with a 4 Hz corner: slow
    /// drift like handling or traffic rumble.
    #[default]
    Rumble,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "brown" => Ok(NoiseKind::Brown),
            "rumble" => Ok(NoiseKind::Rumble),
            other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
        }
    }
}

const RUMBLE_CORNER_HZ: f64 = 4.0;

/// Seeded interference clip, peak-normalized to 0.5.
pub fn interference(kind: NoiseKind, len: usize, sample_rate_hz: u32, seed: u64) -> Result<AudioClip> {
    if len == 0 {
        return Err(Error::Config("interference length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 5]));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x: Vec<f64> = (0..len).map(|_| unit.sample(&mut rng)).collect();
    let (pole, passes) = match kind {
        NoiseKind::White => (0.0, 0),
        NoiseKind::Brown => (0.995, 1),
        NoiseKind::Rumble => ((-2.0 * PI * RUMBLE_CORNER_HZ / sample_rate_hz as f64).exp(), 2),
    };
    for _ in 0..passes {
        let mut acc = 0.0;
        for v in &mut x {
            acc = pole * acc + *v;
            *v = acc;
        }
    }
    if passes > 0 {
        let mean = x.iter().sum::<f64>() / len as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    AudioClip::new(x, sample_rate_hz, format!("{kind:?}-noise").to_lowercase())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfcc::power_spectrum;

    fn entry(speaker: &str, emotion: Emotion, sentence: &str, rep: u32, split: Split) -> ManifestEntry {
        ManifestEntry {
            path: format!("{speaker}_{emotion}_{sentence}_{rep}.wav").into(),
            speaker_id: speaker.into(),
            emotion,
            sentence_id: sentence.into(),
            repetition: rep,
            split,
        }
    }

    fn factorial(speakers: usize, sentences: usize, reps: usize) -> Vec<ManifestEntry> {
        let mut out = Vec::new();
        for s in 0..speakers {
            for e in Emotion::ALL {
                for sent in 0..2 * sentences {
                    for r in 0..reps {
                        let split = if sent < sentences { Split::Train } else { Split::Test };
                        out.push(entry(&format!("spk{s:02}"), e, &format!("{sent}"), r as u32, split));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn emotion_round_trips() {
        for e in Emotion::ALL {
            assert_eq!(e.as_str().parse::<Emotion>().unwrap(), e);
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{e}\""));
        }
        assert!("bored".parse::<Emotion>().is_err());
    }

    #[test]
    fn loads_well_formed_jsonl() {
        let mut text = String::new();
        for i in 0..10 {
            let split = if i < 5 { "train" } else { "test" };
            text.push_str(&format!(
                "{{\"path\":\"a{i}.wav\",\"speaker_id\":\"s1\",\"emotion\":\"neutral\",\"sentence_id\":{i},\"repetition\":0,\"split\":\"{split}\"}}\n"
            ));
        }
        let m = parse_jsonl(&text, "/data").unwrap();
        assert_eq!(m.len(), 10);
        assert_eq!(m.speakers(), ["s1"]);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/a0.wav"));
    }

    #[test]
    fn unknown_emotion_names_the_line() {
        let text = "{\"path\":\"a.wav\",\"speaker_id\":\"s1\",\"emotion\":\"neutral\",\"sentence_id\":\"1\",\"repetition\":0,\"split\":\"train\"}\n\
                    {\"path\":\"b.wav\",\"speaker_id\":\"s1\",\"emotion\":\"bored\",\"sentence_id\":\"2\",\"repetition\":0,\"split\":\"train\"}\n";
        match parse_jsonl(text, ".") {
            Err(Error::Manifest(p)) => {
                assert_eq!(p.len(), 1);
                assert!(p[0].starts_with("line 2") && p[0].contains("bored"), "{p:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_violation_is_reported() {
        let csv = "path,speaker_id,emotion,sentence_id,repetition,split\n\
                   a.wav,s1,sad,3,0,train\n\
                   b.wav,s1,sad,3,1,test\n";
        match parse_csv(csv, ".") {
            Err(Error::Manifest(p)) => assert!(p[0].contains("line 3") && p[0].contains("sentence 3"), "{p:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_and_coverage() {
        let csv = "path,speaker_id,emotion,repetition,split\na.wav,s1,sad,0,train\n";
        assert!(matches!(parse_csv(csv, "."), Err(Error::Manifest(p)) if p[0].contains("sentence_id")));
        let jsonl = "{\"path\":\"a.wav\",\"speaker_id\":\"s1\",\"emotion\":\"sad\",\"sentence_id\":\"1\",\"repetition\":0,\"split\":\"train\"}\n\
                     {\"path\":\"b.wav\",\"speaker_id\":\"s1\",\"emotion\":\"fear\",\"sentence_id\":\"2\",\"repetition\":0,\"split\":\"test\"}\n";
        assert!(matches!(parse_jsonl(jsonl, "."), Err(Error::Manifest(p)) if p[0].contains("(s1, fear)")));
        let missing = "{\"path\":\"a.wav\",\"speaker_id\":\"s1\",\"emotion\":\"sad\",\"repetition\":0,\"split\":\"train\"}\n";
        assert!(matches!(parse_jsonl(missing, "."), Err(Error::Manifest(p)) if p[0].contains("sentence_id")));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let m = parse_jsonl("\n", ".").unwrap();
        assert!(m.is_empty());
        assert!(protocol_counts(&m).splits.is_empty());
    }

    #[test]
    fn protocol_counts_match_products() {
        let m = Manifest::new(factorial(50, 4, 9), ".").unwrap();
        let c = protocol_counts(&m);
        for split in [Split::Train, Split::Test] {
            let s = c.get(split).unwrap();
            assert_eq!(s.total, 10_800);
            assert_eq!(s.factorial_total, 10_800);
            assert!(s.full_factorial);
        }
        let mut small = factorial(5, 4, 9);
        assert_eq!(protocol_counts(&Manifest::new(small.clone(), ".").unwrap()).get(Split::Test).unwrap().total, 1080);
        let removed = small.remove(0);
        let c = protocol_counts(&Manifest::new(small, ".").unwrap());
        let train = c.get(Split::Train).unwrap();
        assert!(!train.full_factorial);
        assert_eq!(train.total, 1079);
        assert_eq!(
            train.missing,
            vec![format!("({}, {}, {}, {})", removed.speaker_id, removed.emotion, removed.sentence_id, removed.repetition)]
        );
    }

    fn tiny_spec() -> SynthSpec {
        SynthSpec {
            num_speakers: 2,
            num_emotions: 2,
            sentences_per_split: 1,
            repetitions: 1,
            min_duration_s: 0.3,
            max_duration_s: 0.4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn generated_corpus_is_deterministic_and_valid() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic(&tiny_spec(), a.path()).unwrap();
        let mb = generate_synthetic(&tiny_spec(), b.path()).unwrap();
        assert_eq!(ma.len(), 8);
        assert_eq!(ma.entries, mb.entries);
        for e in &ma.entries {
            let x = std::fs::read(ma.resolve(e)).unwrap();
            let y = std::fs::read(mb.resolve(e)).unwrap();
            assert_eq!(x, y);
            let clip = wav::decode_wav(&x, "x").unwrap();
            assert!(clip.duration_s() >= 0.3 && clip.duration_s() <= 0.41);
        }
        let reloaded = load_manifest(a.path().join("manifest.jsonl")).unwrap();
        assert_eq!(reloaded.entries, ma.entries);
    }

    #[test]
    fn five_speaker_corpus_has_720_entries() {
        let spec = SynthSpec {
            num_speakers: 5,
            ..SynthSpec::default()
        };
        assert_eq!(spec.entries().len(), 720);
    }

    fn ltas(samples: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; 257];
        let mut count = 0.0;
        for chunk in samples.chunks_exact(512) {
            for (a, p) in acc.iter_mut().zip(power_spectrum(chunk, 512).unwrap()) {
                *a += p;
            }
            count += 1.0;
        }
        acc.into_iter().map(|a| (a / count + 1e-12).ln()).collect()
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn speakers_differ_more_than_repetitions() {
        let spec = SynthSpec {
            num_speakers: 4,
            ..SynthSpec::default()
        };
        let voices = spec.voices();
        let spectra: Vec<Vec<Vec<f64>>> = voices
            .iter()
            .map(|v| (0..4).map(|sent| ltas(&spec.render(v, Emotion::Neutral, sent, 0))).collect())
            .collect();
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..spectra.len() {
            for j in 0..spectra.len() {
                for a in 0..4 {
                    for b in 0..4 {
                        if i == j && a < b {
                            within += dist(&spectra[i][a], &spectra[i][b]);
                            nw += 1.0;
                        } else if i < j {
                            between += dist(&spectra[i][a], &spectra[j][b]);
                            nb += 1.0;
                        }
                    }
                }
            }
        }
        assert!(between / nb > within / nw, "between {} within {}", between / nb, within / nw);
    }

    #[test]
    fn interference_is_seeded() {
        for kind in [NoiseKind::White, NoiseKind::Brown, NoiseKind::Rumble] {
            let a = interference(kind, 1000, 12_000, 1).unwrap();
            let b = interference(kind, 1000, 12_000, 1).unwrap();
            let c = interference(kind, 1000, 12_000, 2).unwrap();
            assert_eq!(a.samples(), b.samples());
            assert_ne!(a.samples(), c.samples());
            assert!(crate::audio::power(a.samples()) > 0.0);
            let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn rumble_sits_below_speech_band() {
        let n = 1 << 15;
        let x = interference(NoiseKind::Rumble, n, 12_000, 3).unwrap();
        let p = power_spectrum(x.samples(), n).unwrap();
        let bin_hz = 12_000.0 / n as f64;
        let low: f64 = p.iter().take((50.0 / bin_hz) as usize).sum();
        let total: f64 = p.iter().sum();
        assert!(low / total > 0.99, "{}", low / total);
    }
}
