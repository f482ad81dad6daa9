use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;
use emosid::corpus::{self, generate_synthetic, protocol_counts, Separation};
use emosid::evaluation::{self, build_report, parse_modes, read_records_jsonl, render_text, Mode};
use emosid::pipeline::{
    self, extract_all, train_all, train_cascade_dnn, train_mfcc_dnn, train_tags, with_jobs, Models, TrainingSet,
    CASCADE_FILE, MFCC_DNN_FILE, TAGS_FILE,
};
use emosid::{FrontEnd, RunConfig, SynthSpec, TagStore};
use serde_json::{json, Value};

use crate::config::{set, Common};

const EXIT_INPUT: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Input problems exit with 1, failures while computing with 2.
pub fn exit_code_for(e: &anyhow::Error) -> ExitCode {
    match e.downcast_ref::<emosid::Error>() {
        Some(err) if !err.is_input_error() => ExitCode::from(EXIT_RUNTIME),
        _ => ExitCode::from(EXIT_INPUT),
    }
}

fn print_json(value: &Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_manifest(path: &Path) -> Result<emosid::Manifest> {
    Ok(corpus::load_manifest(path)?)
}

// ------------------------------------------------------------------ extract

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Manifest (JSONL, or CSV by extension).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for the feature files, one `<utterance>.feat` per entry.
    #[arg(long)]
    pub out: PathBuf,
    /// Recompute files that already exist.
    #[arg(long)]
    pub force: bool,
}

pub fn extract(args: &ExtractArgs, common: &Common) -> Result<ExitCode> {
    let config = common.resolve()?;
    let manifest = load_manifest(&args.manifest)?;
    if manifest.is_empty() {
        log::warn!("{}: manifest has no entries; nothing to extract", args.manifest.display());
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let target = |e: &emosid::ManifestEntry| args.out.join(format!("{}.feat", e.utterance_id()));
    let (todo, skipped): (Vec<_>, Vec<_>) = manifest
        .entries
        .iter()
        .partition(|e| args.force || !target(e).exists());
    let results = with_jobs(config.jobs, || extract_all(&manifest, &todo, &config.frontend))?;

    let mut written = 0;
    let mut failures = Vec::new();
    let mut runtime_failure = false;
    for (entry, result) in todo.iter().zip(results) {
        let outcome = result.and_then(|f| f.save(target(entry)));
        match outcome {
            Ok(()) => written += 1,
            Err(e) => {
                log::error!("{}: {e}", entry.utterance_id());
                runtime_failure |= !e.is_input_error();
                failures.push(json!({
                    "utterance_id": entry.utterance_id(),
                    "path": manifest.resolve(entry),
                    "error": e.to_string(),
                }));
            }
        }
    }
    let summary = json!({
        "frontend": config.frontend,
        "entries": manifest.len(),
        "written": written,
        "skipped_existing": skipped.len(),
        "failed": failures,
    });
    if common.text {
        println!(
            "{} entries: {written} written, {} skipped, {} failed",
            manifest.len(),
            skipped.len(),
            failures.len()
        );
    } else {
        print_json(&summary)?;
    }
    Ok(match (failures.is_empty(), runtime_failure) {
        (true, _) => ExitCode::SUCCESS,
        (false, false) => ExitCode::from(EXIT_INPUT),
        (false, true) => ExitCode::from(EXIT_RUNTIME),
    })
}

// ----------------------------------------------------------------- training

#[derive(Debug, Clone, Default, Args)]
pub struct GmmFlags {
    /// Mixture components per tag.
    #[arg(long)]
    pub mixtures: Option<usize>,
    /// EM iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub variance_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DnnFlags {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Sentence folds for cross-fitted training vectors (0 disables).
    #[arg(long)]
    pub folds: Option<usize>,
}

fn apply_gmm(config: &mut RunConfig, flags: &GmmFlags, seed: Option<u64>) {
    set(&mut config.gmm.components, flags.mixtures);
    set(&mut config.gmm.max_iters, flags.max_iters);
    set(&mut config.gmm.variance_floor, flags.variance_floor);
    set(&mut config.gmm.seed, seed);
}

fn apply_dnn(config: &mut RunConfig, flags: &DnnFlags, seed: Option<u64>) {
    set(&mut config.dnn.hidden, flags.hidden.clone());
    set(&mut config.dnn.learning_rate, flags.lr);
    set(&mut config.dnn.epochs, flags.epochs);
    set(&mut config.dnn.batch_size, flags.batch_size);
    set(&mut config.dnn.cross_fit_folds, flags.folds);
    set(&mut config.dnn.seed, seed);
}

#[derive(Debug, Args)]
pub struct TrainGmmArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model directory; the store is written as `tags.bin` plus a JSON sidecar.
    #[arg(long, default_value = "models")]
    pub out: PathBuf,
    #[command(flatten)]
    pub gmm: GmmFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn store_summary(store: &TagStore, config: &RunConfig) -> Value {
    json!({
        "config": config,
        "speakers": store.speakers(),
        "emotions": store.emotions(),
        "tags": store.len(),
        "em_iterations": store.tags().iter().map(|t| t.train_meta.iterations).collect::<Vec<_>>(),
        "em_unconverged": store.tags().iter().filter(|t| !t.train_meta.converged).count(),
    })
}

pub fn train_gmm(args: &TrainGmmArgs, common: &Common) -> Result<ExitCode> {
    let mut config = common.resolve()?;
    apply_gmm(&mut config, &args.gmm, args.seed);
    config.validate()?;
    let manifest = load_manifest(&args.manifest)?;
    let store = with_jobs(config.jobs, || -> emosid::Result<TagStore> {
        let set = TrainingSet::extract(&manifest, &config.frontend)?;
        train_tags(&set, &config.frontend, &config.gmm)
    })??;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    store.save(args.out.join(TAGS_FILE))?;
    if common.text {
        println!("{} tags written to {}", store.len(), args.out.join(TAGS_FILE).display());
    } else {
        print_json(&store_summary(&store, &config))?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Args)]
pub struct TrainDnnArgs {
    /// Tag store from `train-gmm`.
    #[arg(long)]
    pub tags: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model directory (default: the tag store's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub dnn: DnnFlags,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn train_dnn(args: &TrainDnnArgs, common: &Common) -> Result<ExitCode> {
    let mut config = common.resolve()?;
    apply_dnn(&mut config, &args.dnn, args.seed);
    let store = TagStore::load(&args.tags)?;
    if store.frontend != config.frontend {
        log::warn!("using the tag store's front-end settings; front-end flags are ignored");
        config.frontend = store.frontend.clone();
    }
    config.validate()?;
    let manifest = load_manifest(&args.manifest)?;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => args.tags.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let (cascade, baseline) = with_jobs(config.jobs, || -> emosid::Result<_> {
        let set = TrainingSet::extract(&manifest, &config.frontend)?;
        if set.speakers != store.speakers() {
            return Err(emosid::Error::Input(
                "manifest speakers differ from the tag store's roster".into(),
            ));
        }
        let cascade = train_cascade_dnn(&set, &store, &config.segment, &config.gmm, &config.dnn)?;
        let baseline = train_mfcc_dnn(&set, &config.segment, &config.dnn)?;
        Ok((cascade, baseline))
    })??;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    cascade.save(out.join(CASCADE_FILE))?;
    baseline.save(out.join(MFCC_DNN_FILE))?;
    let summary = json!({
        "config": config,
        "cascade_final_loss": cascade.train_meta.final_loss,
        "mfcc_dnn_final_loss": baseline.train_meta.final_loss,
        "cascade_loss_history": cascade.train_meta.loss_history,
    });
    if common.text {
        println!(
            "cascade loss {:.4}, network-alone loss {:.4}; written to {}",
            cascade.train_meta.final_loss,
            baseline.train_meta.final_loss,
            out.display()
        );
    } else {
        print_json(&summary)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "models")]
    pub out: PathBuf,
    #[command(flatten)]
    pub gmm: GmmFlags,
    #[command(flatten)]
    pub dnn: DnnFlags,
    /// Seed for both the tags and the networks.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn train(args: &TrainArgs, common: &Common) -> Result<ExitCode> {
    let mut config = common.resolve()?;
    apply_gmm(&mut config, &args.gmm, args.seed);
    apply_dnn(&mut config, &args.dnn, args.seed);
    config.validate()?;
    let manifest = load_manifest(&args.manifest)?;
    let trained = train_all(&manifest, &config)?;
    trained.save(&args.out)?;
    if common.text {
        println!(
            "{} tags, cascade loss {:.4}, network-alone loss {:.4}; written to {}",
            trained.report.tags,
            trained.report.cascade_final_loss,
            trained.report.mfcc_dnn_final_loss,
            args.out.display()
        );
    } else {
        print_json(&serde_json::to_value(&trained.report)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

// ----------------------------------------------------------------- identify

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Model directory from `train`.
    #[arg(long, default_value = "models")]
    pub models: PathBuf,
    /// Utterance to identify.
    pub wav: PathBuf,
}

pub fn identify(args: &IdentifyArgs, common: &Common) -> Result<ExitCode> {
    let config = common.resolve()?;
    let models = Models::load(&args.models)?;
    let Some(net) = &models.cascade else {
        bail!("{} has no {CASCADE_FILE}", args.models.display());
    };
    let clip = emosid::wav::read_wav(&args.wav)?;
    let mut fe = FrontEnd::new(models.store.frontend.clone())?;
    let features = fe.features(&clip).map_err(|e| e.in_file(&args.wav))?;
    let id = pipeline::identify(&models.store, net, &features, &config)?;
    if common.text {
        let best = id.posterior.iter().copied().fold(0.0, f64::max);
        println!(
            "{} (posterior {best:.3}, {} segments{}; GMM alone: {})",
            id.decision,
            id.per_segment.len(),
            if id.tie { ", tie" } else { "" },
            id.gmm_decision
        );
    } else {
        print_json(&serde_json::to_value(&id)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

// ----------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Manifest whose test split is scored (with --models).
    #[arg(long, required_unless_present = "records")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "models", conflicts_with = "records")]
    pub models: PathBuf,
    /// Re-score saved trial records instead of running models.
    #[arg(long, value_name = "JSONL")]
    pub records: Option<PathBuf>,
    /// Classifier modes to report, comma separated.
    #[arg(long, alias = "compare", default_value = "gmm,dnn,cascade")]
    pub modes: String,
    /// Also score every test utterance mixed with interference.
    #[arg(long, conflicts_with = "records")]
    pub distort: bool,
    /// Report file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the trial records as JSON lines.
    #[arg(long, value_name = "JSONL")]
    pub save_records: Option<PathBuf>,
}

pub fn evaluate(args: &EvaluateArgs, common: &Common) -> Result<ExitCode> {
    let config = common.resolve()?;
    let modes: Vec<Mode> = parse_modes(&args.modes)?;
    let (records, report) = match &args.records {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let records = read_records_jsonl(&text).map_err(|e| e.in_file(path))?;
            let report = build_report(&records, &modes, config.sd_kind, json!({ "run": config }))?;
            (records, report)
        }
        None => {
            let manifest_path = args.manifest.as_ref().expect("clap requires --manifest");
            let manifest = load_manifest(manifest_path)?;
            let models = Models::load(&args.models)?;
            pipeline::evaluate(&manifest, &models, &config, &modes, args.distort)?
        }
    };
    if let Some(path) = &args.save_records {
        std::fs::write(path, evaluation::records_to_jsonl(&records))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let text = if common.text {
        render_text(&report)
    } else {
        serde_json::to_string_pretty(&report)? + "\n"
    };
    write_or_print(args.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------------- synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub speakers: usize,
    /// First n emotions in canonical order.
    #[arg(long, default_value_t = 6)]
    pub emotions: usize,
    /// Sentences per split.
    #[arg(long, default_value_t = 4)]
    pub sentences: usize,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Speaker separation: high, medium, low or a non-negative number.
    #[arg(long, default_value = "high")]
    pub separation: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_separation(s: &str) -> Result<f64> {
    if let Ok(level) = s.parse::<Separation>() {
        return Ok(level.value());
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => bail!("separation must be high, medium, low or a non-negative number, got {s:?}"),
    }
}

pub fn synth(args: &SynthArgs, common: &Common) -> Result<ExitCode> {
    let config = common.resolve()?;
    let spec = SynthSpec {
        num_speakers: args.speakers,
        num_emotions: args.emotions,
        sentences_per_split: args.sentences,
        repetitions: args.repetitions,
        seed: args.seed,
        separation: parse_separation(&args.separation)?,
        ..SynthSpec::default()
    };
    let manifest = with_jobs(config.jobs, || generate_synthetic(&spec, &args.out))??;
    if common.text {
        println!("{} utterances written under {}", manifest.len(), args.out.display());
    } else {
        print_json(&json!({
            "spec": spec,
            "utterances": manifest.len(),
            "manifest": args.out.join("manifest.jsonl"),
        }))?;
    }
    Ok(ExitCode::SUCCESS)
}

// --------------------------------------------------------- validate-manifest

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub manifest: PathBuf,
}

pub fn validate_manifest(args: &ValidateArgs, common: &Common) -> Result<ExitCode> {
    let manifest = load_manifest(&args.manifest)?;
    let summary = protocol_counts(&manifest);
    if common.text {
        println!(
            "{}: {} entries, {} speakers, {} emotions",
            args.manifest.display(),
            manifest.len(),
            manifest.speakers().len(),
            manifest.emotions().len()
        );
        for s in &summary.splits {
            println!(
                "  {}: {} entries ({} speakers × {} sentences × {} repetitions × {} emotions{})",
                s.split,
                s.total,
                s.speakers,
                s.sentences,
                s.repetitions,
                s.emotions,
                if s.full_factorial {
                    String::new()
                } else {
                    format!(", {} missing", s.missing.len())
                }
            );
        }
    } else {
        print_json(&json!({
            "entries": manifest.len(),
            "speakers": manifest.speakers(),
            "emotions": manifest.emotions(),
            "protocol": summary,
        }))?;
    }
    Ok(ExitCode::SUCCESS)
}
