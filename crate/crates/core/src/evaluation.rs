//! Identification rates, confusion matrices, mode comparisons and the
//! pooled two-sample t statistic, plus JSON / text reports over them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Emotion;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Normal,
    Distorted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gmm,
    Dnn,
    Cascade,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Distorted => "distorted",
        }
    }
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Gmm, Mode::Dnn, Mode::Cascade];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Gmm => "gmm",
            Mode::Dnn => "dnn",
            Mode::Cascade => "cascade",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown classifier mode {s:?}")))
    }
}

/// Parses a comma-separated mode list, keeping order and dropping repeats.
pub fn parse_modes(list: &str) -> Result<Vec<Mode>> {
    let mut modes = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Mode = part.parse()?;
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    if modes.is_empty() {
        return Err(Error::Config("no classifier modes given".into()));
    }
    Ok(modes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub utterance_id: String,
    pub true_speaker: String,
    pub predicted_speaker: String,
    pub emotion: Emotion,
    pub condition: Condition,
    pub classifier_mode: Mode,
    #[serde(default)]
    pub repetition: u32,
}

impl TrialRecord {
    pub fn correct(&self) -> bool {
        self.true_speaker == self.predicted_speaker
    }
}

pub fn read_records_jsonl(text: &str) -> Result<Vec<TrialRecord>> {
    let mut problems = Vec::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) => problems.push(format!("line {}: {e}", i + 1)),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Manifest(problems))
    }
}

pub fn records_to_jsonl(records: &[TrialRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Percentage of correct trials.
pub fn identification_rate(correct: usize, trials: usize) -> f64 {
    100.0 * correct as f64 / trials as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub emotion: Emotion,
    pub mode: Mode,
    pub condition: Condition,
    pub correct: usize,
    pub trials: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAverage {
    pub mode: Mode,
    pub condition: Condition,
    pub correct: usize,
    pub trials: usize,
    /// Trial-weighted mean of the emotion rates.
    pub rate: f64,
}

/// Only groups with at least one trial appear; absent groups have no cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTable {
    pub emotions: Vec<Emotion>,
    pub modes: Vec<Mode>,
    pub conditions: Vec<Condition>,
    pub cells: Vec<Cell>,
    pub averages: Vec<ModeAverage>,
}

impl PerformanceTable {
    pub fn cell(&self, emotion: Emotion, mode: Mode, condition: Condition) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.emotion == emotion && c.mode == mode && c.condition == condition)
    }

    pub fn average(&self, mode: Mode, condition: Condition) -> Option<&ModeAverage> {
        self.averages
            .iter()
            .find(|a| a.mode == mode && a.condition == condition)
    }
}

pub fn sid_performance(records: &[TrialRecord]) -> Result<PerformanceTable> {
    if records.is_empty() {
        return Err(Error::Input("no trial records".into()));
    }
    let mut groups: BTreeMap<(Mode, Condition, Emotion), (usize, usize)> = BTreeMap::new();
    for r in records {
        let g = groups.entry((r.classifier_mode, r.condition, r.emotion)).or_default();
        g.0 += usize::from(r.correct());
        g.1 += 1;
    }
    let cells: Vec<Cell> = groups
        .iter()
        .map(|(&(mode, condition, emotion), &(correct, trials))| Cell {
            emotion,
            mode,
            condition,
            correct,
            trials,
            rate: identification_rate(correct, trials),
        })
        .collect();
    let mut totals: BTreeMap<(Mode, Condition), (usize, usize)> = BTreeMap::new();
    for c in &cells {
        let t = totals.entry((c.mode, c.condition)).or_default();
        t.0 += c.correct;
        t.1 += c.trials;
    }
    let averages = totals
        .into_iter()
        .map(|((mode, condition), (correct, trials))| ModeAverage {
            mode,
            condition,
            correct,
            trials,
            rate: identification_rate(correct, trials),
        })
        .collect();
    Ok(PerformanceTable {
        emotions: cells.iter().map(|c| c.emotion).collect::<BTreeSet<_>>().into_iter().collect(),
        modes: cells.iter().map(|c| c.mode).collect::<BTreeSet<_>>().into_iter().collect(),
        conditions: cells.iter().map(|c| c.condition).collect::<BTreeSet<_>>().into_iter().collect(),
        cells,
        averages,
    })
}

/// Standard deviation convention for the t statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdKind {
    /// `n − 1` denominator.
    #[default]
    Sample,
    /// `n` denominator.
    Population,
}

impl FromStr for SdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(SdKind::Sample),
            "population" => Ok(SdKind::Population),
            other => Err(Error::Config(format!("unknown SD convention {other:?}"))),
        }
    }
}

/// One-sided critical value at the 0.05 level.
pub const CRITICAL_T: f64 = 1.645;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub mean1: f64,
    pub mean2: f64,
    pub sd1: f64,
    pub sd2: f64,
    pub sd_pooled: f64,
    pub sd_kind: SdKind,
    /// Zero pooled deviation with unequal means.
    pub infinite: bool,
    pub significant: bool,
}

fn mean_sd(x: &[f64], kind: SdKind) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = match kind {
        SdKind::Sample => n - 1.0,
        SdKind::Population => n,
    };
    (mean, (ss / denom).sqrt())
}

/// `t = (x̄1 − x̄2) / sqrt((SD1² + SD2²) / 2)` for two equal-size samples.
pub fn students_t(sample1: &[f64], sample2: &[f64], kind: SdKind) -> Result<TTestResult> {
    if sample1.len() != sample2.len() {
        return Err(Error::SampleSize(sample1.len(), sample2.len()));
    }
    if sample1.len() < 2 {
        return Err(Error::Input(format!(
            "t statistic needs at least 2 values per sample, got {}",
            sample1.len()
        )));
    }
    if sample1.iter().chain(sample2).any(|v| !v.is_finite()) {
        return Err(Error::Input("samples contain non-finite values".into()));
    }
    let (mean1, sd1) = mean_sd(sample1, kind);
    let (mean2, sd2) = mean_sd(sample2, kind);
    let sd_pooled = ((sd1 * sd1 + sd2 * sd2) / 2.0).sqrt();
    let diff = mean1 - mean2;
    let (t_value, infinite) = if sd_pooled == 0.0 {
        if diff == 0.0 {
            (0.0, false)
        } else {
            (f64::INFINITY.copysign(diff), true)
        }
    } else {
        (diff / sd_pooled, false)
    };
    Ok(TTestResult {
        t_value,
        n1: sample1.len(),
        n2: sample2.len(),
        mean1,
        mean2,
        sd1,
        sd2,
        sd_pooled,
        sd_kind: kind,
        infinite,
        significant: t_value > CRITICAL_T,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub mode: Mode,
    pub condition: Condition,
    pub emotion: Emotion,
    pub speakers: Vec<String>,
    /// `counts[i][j]`: trials of speaker i identified as speaker j.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

/// One matrix per (mode, condition, emotion) group, over the sorted union of
/// true and predicted speakers.
pub fn confusion_matrices(records: &[TrialRecord]) -> Vec<ConfusionMatrix> {
    let speakers: Vec<String> = records
        .iter()
        .flat_map(|r| [r.true_speaker.clone(), r.predicted_speaker.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = speakers.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut groups: BTreeMap<(Mode, Condition, Emotion), Vec<Vec<usize>>> = BTreeMap::new();
    for r in records {
        let m = groups
            .entry((r.classifier_mode, r.condition, r.emotion))
            .or_insert_with(|| vec![vec![0; speakers.len()]; speakers.len()]);
        m[index[r.true_speaker.as_str()]][index[r.predicted_speaker.as_str()]] += 1;
    }
    groups
        .into_iter()
        .map(|((mode, condition, emotion), counts)| ConfusionMatrix {
            mode,
            condition,
            emotion,
            speakers: speakers.clone(),
            counts,
        })
        .collect()
}

/// Per-emotion rates and the average of one classifier under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRates {
    pub label: String,
    pub rates: BTreeMap<Emotion, f64>,
    pub average: f64,
}

impl ModeRates {
    pub fn from_table(table: &PerformanceTable, mode: Mode, condition: Condition) -> Option<Self> {
        let average = table.average(mode, condition)?.rate;
        let rates = table
            .cells
            .iter()
            .filter(|c| c.mode == mode && c.condition == condition)
            .map(|c| (c.emotion, c.rate))
            .collect();
        Some(ModeRates {
            label: format!("{mode}/{condition}"),
            rates,
            average,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    /// `None` for the average row.
    pub emotion: Option<Emotion>,
    pub rate_a: f64,
    pub rate_b: f64,
    /// Percentage points, `a − b`.
    pub absolute: f64,
    /// Relative improvement `(a − b) / b · 100`; undefined when `b = 0`.
    pub relative_pct: Option<f64>,
}

impl Delta {
    pub fn new(emotion: Option<Emotion>, rate_a: f64, rate_b: f64) -> Self {
        Delta {
            emotion,
            rate_a,
            rate_b,
            absolute: rate_a - rate_b,
            relative_pct: (rate_b != 0.0).then(|| (rate_a - rate_b) / rate_b * 100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub per_emotion: Vec<Delta>,
    pub average: Delta,
}

pub fn compare_modes(a: &ModeRates, b: &ModeRates) -> Result<Comparison> {
    let ka: Vec<&Emotion> = a.rates.keys().collect();
    let kb: Vec<&Emotion> = b.rates.keys().collect();
    if ka != kb {
        return Err(Error::Input(format!(
            "emotion rosters differ between {} {:?} and {} {:?}",
            a.label, ka, b.label, kb
        )));
    }
    Ok(Comparison {
        a: a.label.clone(),
        b: b.label.clone(),
        per_emotion: a
            .rates
            .iter()
            .map(|(e, &ra)| Delta::new(Some(*e), ra, b.rates[e]))
            .collect(),
        average: Delta::new(None, a.average, b.average),
    })
}

/// Identification rate of each test repetition, in repetition order.
pub fn repetition_rates(records: &[TrialRecord], mode: Mode, condition: Condition) -> Vec<(u32, f64)> {
    let mut groups: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in records
        .iter()
        .filter(|r| r.classifier_mode == mode && r.condition == condition)
    {
        let g = groups.entry(r.repetition).or_default();
        g.0 += usize::from(r.correct());
        g.1 += 1;
    }
    groups
        .into_iter()
        .map(|(rep, (c, t))| (rep, identification_rate(c, t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestBlock {
    pub a: Mode,
    pub b: Mode,
    pub condition: Condition,
    /// What each sample value is.
    pub unit: String,
    pub result: Option<TTestResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub mode: Mode,
    pub normal: f64,
    pub distorted: f64,
    /// Percentage points lost under distortion.
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub table: PerformanceTable,
    pub comparisons: Vec<Comparison>,
    pub t_tests: Vec<TTestBlock>,
    pub degradation: Vec<Degradation>,
    pub confusion: Vec<ConfusionMatrix>,
    /// Effective configuration and provenance of the run, if any.
    pub config: serde_json::Value,
}

/// Builds the full report. Pairs compare each mode against every mode listed
/// before it, so `gmm,dnn,cascade` yields dnn−gmm, cascade−gmm, cascade−dnn.
pub fn build_report(
    records: &[TrialRecord],
    modes: &[Mode],
    sd_kind: SdKind,
    config: serde_json::Value,
) -> Result<Report> {
    let records: Vec<TrialRecord> = records
        .iter()
        .filter(|r| modes.contains(&r.classifier_mode))
        .cloned()
        .collect();
    let table = sid_performance(&records)?;
    let mut comparisons = Vec::new();
    let mut t_tests = Vec::new();
    for &condition in &table.conditions {
        for j in 0..modes.len() {
            for i in 0..j {
                let (a, b) = (modes[j], modes[i]);
                let (Some(ra), Some(rb)) = (
                    ModeRates::from_table(&table, a, condition),
                    ModeRates::from_table(&table, b, condition),
                ) else {
                    continue;
                };
                comparisons.push(compare_modes(&ra, &rb)?);
                let sa: Vec<f64> = repetition_rates(&records, a, condition).into_iter().map(|r| r.1).collect();
                let sb: Vec<f64> = repetition_rates(&records, b, condition).into_iter().map(|r| r.1).collect();
                let (result, note) = match students_t(&sa, &sb, sd_kind) {
                    Ok(t) => (Some(t), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                t_tests.push(TTestBlock {
                    a,
                    b,
                    condition,
                    unit: "identification rate per test repetition".into(),
                    result,
                    note,
                });
            }
        }
    }
    let degradation = modes
        .iter()
        .filter_map(|&m| {
            let n = table.average(m, Condition::Normal)?.rate;
            let d = table.average(m, Condition::Distorted)?.rate;
            Some(Degradation {
                mode: m,
                normal: n,
                distorted: d,
                drop: n - d,
            })
        })
        .collect();
    Ok(Report {
        confusion: confusion_matrices(&records),
        table,
        comparisons,
        t_tests,
        degradation,
        config,
    })
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |r| format!("{r:.1}"))
}

/// Aligned-column rendering of a report.
pub fn render_text(report: &Report) -> String {
    let t = &report.table;
    let mut out = String::new();
    let columns: Vec<(Mode, Condition)> = t
        .conditions
        .iter()
        .flat_map(|&c| t.modes.iter().map(move |&m| (m, c)))
        .collect();
    let _ = writeln!(out, "Speaker identification rate (%)");
    let _ = write!(out, "{:<10}", "emotion");
    for (m, c) in &columns {
        let _ = write!(out, "{:>20}", format!("{m}/{c}"));
    }
    out.push('\n');
    for &e in &t.emotions {
        let _ = write!(out, "{:<10}", e.as_str());
        for &(m, c) in &columns {
            let _ = write!(out, "{:>20}", fmt_rate(t.cell(e, m, c).map(|x| x.rate)));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<10}", "average");
    for &(m, c) in &columns {
        let _ = write!(out, "{:>20}", fmt_rate(t.average(m, c).map(|x| x.rate)));
    }
    out.push('\n');

    if !report.comparisons.is_empty() {
        let _ = writeln!(out, "\nComparisons (absolute pp / relative %)");
        for c in &report.comparisons {
            let rel = c
                .average
                .relative_pct
                .map_or_else(|| "n/a".to_string(), |r| format!("{r:+.1}%"));
            let _ = writeln!(
                out,
                "  {:<20} vs {:<20} {:>+8.1} pp {:>10}",
                c.a, c.b, c.average.absolute, rel
            );
        }
    }
    if !report.t_tests.is_empty() {
        let _ = writeln!(out, "\nStudent's t ({})", report.t_tests[0].unit);
        for b in &report.t_tests {
            match &b.result {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "  {:<8} vs {:<8} {:<10} t = {:>9.3}  {}",
                        b.a.as_str(),
                        b.b.as_str(),
                        b.condition.as_str(),
                        r.t_value,
                        if r.significant { "significant" } else { "not significant" }
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "  {:<8} vs {:<8} {:<10} {}",
                        b.a.as_str(),
                        b.b.as_str(),
                        b.condition.as_str(),
                        b.note.as_deref().unwrap_or("")
                    );
                }
            }
        }
    }
    if !report.degradation.is_empty() {
        let _ = writeln!(out, "\nDegradation under distortion (pp)");
        for d in &report.degradation {
            let _ = writeln!(
                out,
                "  {:<8} {:>6.1} -> {:>6.1}  ({:+.1})",
                d.mode.as_str(),
                d.normal,
                d.distorted,
                -d.drop
            );
        }
    }
    for m in &report.confusion {
        let _ = writeln!(out, "\nConfusion {}/{}/{}", m.mode, m.condition, m.emotion);
        let w = m.speakers.iter().map(String::len).max().unwrap_or(1).max(4) + 1;
        let _ = write!(out, "{:<w$}", "");
        for s in &m.speakers {
            let _ = write!(out, "{s:>w$}");
        }
        out.push('\n');
        for (s, row) in m.speakers.iter().zip(&m.counts) {
            let _ = write!(out, "{s:<w$}");
            for c in row {
                let _ = write!(out, "{c:>w$}");
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: &str, p: &str, e: Emotion, mode: Mode, rep: u32) -> TrialRecord {
        TrialRecord {
            utterance_id: format!("{t}-{rep}"),
            true_speaker: t.into(),
            predicted_speaker: p.into(),
            emotion: e,
            condition: Condition::Normal,
            classifier_mode: mode,
            repetition: rep,
        }
    }

    #[test]
    fn rate_arithmetic() {
        assert_eq!(identification_rate(46, 50), 92.0);
        assert_eq!(identification_rate(7, 7), 100.0);
        assert_eq!(identification_rate(0, 9), 0.0);
    }

    #[test]
    fn table_cells_and_absence() {
        let mut records = Vec::new();
        for i in 0..50 {
            let p = if i < 46 { "a" } else { "b" };
            records.push(rec("a", p, Emotion::Sad, Mode::Gmm, 0));
        }
        records.push(rec("a", "a", Emotion::Fear, Mode::Gmm, 0));
        let t = sid_performance(&records).unwrap();
        assert_eq!(t.cell(Emotion::Sad, Mode::Gmm, Condition::Normal).unwrap().rate, 92.0);
        assert!(t.cell(Emotion::Happy, Mode::Gmm, Condition::Normal).is_none());
        let avg = t.average(Mode::Gmm, Condition::Normal).unwrap();
        assert_eq!((avg.correct, avg.trials), (47, 51));
        assert!(sid_performance(&[]).is_err());
    }

    #[test]
    fn t_statistic_fixture() {
        let r = students_t(&[80.0, 82.0, 84.0], &[70.0, 72.0, 74.0], SdKind::Sample).unwrap();
        assert_eq!((r.mean1, r.mean2), (82.0, 72.0));
        assert!((r.sd1 - 2.0).abs() < 1e-12 && (r.sd2 - 2.0).abs() < 1e-12);
        assert!((r.sd_pooled - 2.0).abs() < 1e-12);
        assert!((r.t_value - 5.0).abs() < 1e-9);
        assert!(r.significant);
        let same = students_t(&[1.0, 2.0], &[1.0, 2.0], SdKind::Sample).unwrap();
        assert_eq!(same.t_value, 0.0);
        assert!(!same.significant);
        assert!(matches!(students_t(&[1.0, 2.0], &[1.0], SdKind::Sample), Err(Error::SampleSize(2, 1))));
        let flat = students_t(&[3.0, 3.0], &[1.0, 1.0], SdKind::Sample).unwrap();
        assert!(flat.infinite && flat.t_value.is_infinite() && flat.significant);
        let zero = students_t(&[3.0, 3.0], &[3.0, 3.0], SdKind::Sample).unwrap();
        assert_eq!(zero.t_value, 0.0);
        assert!(!zero.infinite);
        let pop = students_t(&[80.0, 82.0, 84.0], &[70.0, 72.0, 74.0], SdKind::Population).unwrap();
        assert!((pop.sd1 - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn insignificant_t_is_flagged() {
        // A t value just under the critical value reads as not significant.
        let r = TTestResult {
            t_value: 1.157,
            significant: 1.157 > CRITICAL_T,
            ..students_t(&[1.0, 2.0], &[1.0, 2.0], SdKind::Sample).unwrap()
        };
        assert!(!r.significant);
    }

    #[test]
    fn relative_improvement_fixtures() {
        let mk = |label: &str, v: f64| ModeRates {
            label: label.into(),
            rates: [(Emotion::Neutral, v)].into_iter().collect(),
            average: v,
        };
        let c = compare_modes(&mk("cascade", 81.7), &mk("gmm", 69.3)).unwrap();
        assert!((c.average.relative_pct.unwrap() - 17.9).abs() < 0.05);
        let c = compare_modes(&mk("cascade", 81.7), &mk("dnn", 76.2)).unwrap();
        assert!((c.average.relative_pct.unwrap() - 7.2).abs() < 0.05);
        assert!((c.average.absolute - 5.5).abs() < 1e-9);
        let same = compare_modes(&mk("a", 50.0), &mk("b", 50.0)).unwrap();
        assert_eq!(same.average.absolute, 0.0);
        assert_eq!(same.per_emotion[0].relative_pct, Some(0.0));
        let mut other = mk("x", 1.0);
        other.rates.insert(Emotion::Sad, 2.0);
        assert!(compare_modes(&mk("a", 1.0), &other).is_err());
    }

    #[test]
    fn confusion_shapes() {
        let recs = vec![
            rec("a", "a", Emotion::Neutral, Mode::Dnn, 0),
            rec("b", "a", Emotion::Neutral, Mode::Dnn, 0),
            rec("c", "a", Emotion::Neutral, Mode::Dnn, 0),
        ];
        let m = &confusion_matrices(&recs)[0];
        assert_eq!(m.total(), 3);
        assert!(m.counts.iter().all(|row| row[1] == 0 && row[2] == 0));
        assert_eq!(m.counts.iter().map(|r| r[0]).sum::<usize>(), 3);
    }

    #[test]
    fn report_pairs_and_text() {
        let mut recs = Vec::new();
        for rep in 0..3 {
            for (mode, wrong) in [(Mode::Gmm, rep == 0), (Mode::Cascade, false)] {
                recs.push(rec("a", if wrong { "b" } else { "a" }, Emotion::Happy, mode, rep));
                recs.push(rec("b", "b", Emotion::Happy, mode, rep));
            }
        }
        let report = build_report(&recs, &[Mode::Gmm, Mode::Cascade], SdKind::Sample, serde_json::Value::Null).unwrap();
        assert_eq!(report.comparisons.len(), 1);
        assert_eq!(report.comparisons[0].a, "cascade/normal");
        assert!(report.t_tests[0].result.is_some());
        let text = render_text(&report);
        assert!(text.contains("cascade/normal") && text.contains("happy"));
        let only = build_report(&recs, &[Mode::Cascade], SdKind::Sample, serde_json::Value::Null).unwrap();
        assert_eq!(only.table.modes, vec![Mode::Cascade]);
        assert!(parse_modes("gmm,bogus").is_err());
        assert_eq!(parse_modes("cascade, gmm,cascade").unwrap(), vec![Mode::Cascade, Mode::Gmm]);
    }

    fn arb_records() -> impl Strategy<Value = Vec<TrialRecord>> {
        prop::collection::vec((0usize..3, 0usize..3, 0usize..6), 1..60).prop_map(|v| {
            v.into_iter()
                .map(|(t, p, e)| rec(&format!("s{t}"), &format!("s{p}"), Emotion::ALL[e], Mode::Gmm, 0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn concatenation_is_trial_weighted(a in arb_records(), b in arb_records()) {
            let ta = sid_performance(&a).unwrap();
            let tb = sid_performance(&b).unwrap();
            let joined: Vec<TrialRecord> = a.iter().chain(&b).cloned().collect();
            let tj = sid_performance(&joined).unwrap();
            let (x, y) = (ta.average(Mode::Gmm, Condition::Normal).unwrap(), tb.average(Mode::Gmm, Condition::Normal).unwrap());
            let expect = (x.rate * x.trials as f64 + y.rate * y.trials as f64) / (x.trials + y.trials) as f64;
            prop_assert!((tj.average(Mode::Gmm, Condition::Normal).unwrap().rate - expect).abs() < 1e-9);
            let weighted: f64 = tj.cells.iter().map(|c| c.rate * c.trials as f64).sum::<f64>() / joined.len() as f64;
            prop_assert!((tj.averages[0].rate - weighted).abs() < 1e-9);
        }

        #[test]
        fn confusion_rows_count_trials(r in arb_records()) {
            for m in confusion_matrices(&r) {
                for (i, s) in m.speakers.iter().enumerate() {
                    let n = r.iter().filter(|x| x.true_speaker == *s && x.emotion == m.emotion).count();
                    prop_assert_eq!(m.counts[i].iter().sum::<usize>(), n);
                }
            }
        }

        #[test]
        fn t_is_antisymmetric_and_shift_invariant(
            pairs in prop::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..10),
            shift in -50.0f64..50.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let ab = students_t(&a, &b, SdKind::Sample).unwrap();
            let ba = students_t(&b, &a, SdKind::Sample).unwrap();
            prop_assert_eq!(ab.t_value, -ba.t_value);
            prop_assert!((ab.sd_pooled - ((ab.sd1 * ab.sd1 + ab.sd2 * ab.sd2) / 2.0).sqrt()).abs() < 1e-12);
            let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
            let s = students_t(&a2, &b2, SdKind::Sample).unwrap();
            if ab.sd_pooled > 0.5 {
                prop_assert!((s.t_value - ab.t_value).abs() < 1e-12);
            }
        }
    }
}
