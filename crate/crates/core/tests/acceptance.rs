//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use emosid::audio::{self, frame_and_window, AudioClip, MixMode};
use emosid::corpus::{generate_synthetic, Separation, SynthSpec};
use emosid::dnn::{Architecture, Dataset, DnnModel};
use emosid::evaluation::{
    compare_modes, identification_rate, students_t, Condition, Mode, ModeRates, SdKind,
};
use emosid::gmm::{em_fit, EmConfig};
use emosid::mfcc::{hz_to_mel, mel_to_hz, mfcc, FeatureView, MelFilterbank};
use emosid::pipeline::{evaluate, train_all, Models, Trained, CASCADE_FILE, MFCC_DNN_FILE, TAGS_FILE};
use emosid::{Emotion, Manifest, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- 1. MFCC

fn direct_power_spectrum(frame: &[f64], n: usize) -> Vec<f64> {
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            (re * re + im * im) / n as f64
        })
        .collect()
}

/// Triangle weight of filter `j` (1-based) at `bin`, straight from the band
/// edges on the Mel scale.
fn triangle(j: usize, bin: usize, edges: &[usize]) -> f64 {
    let (l, c, r) = (edges[j - 1] as f64, edges[j] as f64, edges[j + 1] as f64);
    let b = bin as f64;
    if b <= l || b >= r {
        if b == c {
            1.0
        } else {
            0.0
        }
    } else if b <= c {
        (b - l) / (c - l)
    } else {
        (r - b) / (r - c)
    }
}

fn oracle_mfcc(frame: &[f64], rate: f64, n_fft: usize, filters: usize, coeffs: usize) -> Vec<f64> {
    let p = direct_power_spectrum(frame, n_fft);
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(rate / 2.0);
    let edges: Vec<usize> = (0..filters + 2)
        .map(|i| (inv(top * i as f64 / (filters + 1) as f64) * n_fft as f64 / rate).round() as usize)
        .collect();
    let logs: Vec<f64> = (1..=filters)
        .map(|j| {
            let e: f64 = (0..p.len()).map(|b| triangle(j, b, &edges) * p[b]).sum();
            e.max(1e-10).ln()
        })
        .collect();
    let n = filters as f64;
    (0..coeffs)
        .map(|k| {
            let norm = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            norm * logs
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .sum::<f64>()
        })
        .collect()
}

fn mfcc_oracle() -> Outcome {
    let start = Instant::now();
    let rate = 12_000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // 25 ms frames, 10 ms hop: 100 frames need 99·120 + 300 samples.
    let n = 99 * 120 + 300;
    let samples: Vec<f64> = (0..n)
        .map(|i| 0.4 * (2.0 * PI * 440.0 * i as f64 / rate as f64).sin() + rng.random_range(-0.3..0.3))
        .collect();
    let clip = AudioClip::new(samples, rate, "oracle").map_err(|e| e.to_string())?;
    let frames = frame_and_window(&clip, 25.0, 10.0).map_err(|e| e.to_string())?;
    if frames.num_frames() != 100 {
        return Err(format!("{} frames instead of 100", frames.num_frames()));
    }
    let bank = MelFilterbank::new(26, rate, 512, 0.0, 6000.0).map_err(|e| e.to_string())?;
    let fast = mfcc(&frames, &bank, 13, 1e-10).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (i, frame) in frames.frames().enumerate() {
        let reference = oracle_mfcc(frame, rate as f64, 512, 26, 13);
        for (a, b) in fast.row(i).iter().zip(&reference) {
            worst = worst.max((a - b).abs() / b.abs().max(1e-12));
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-6 && elapsed < Duration::from_secs(10),
        format!("max relative error {worst:.2e} on 100 frames, {:.2} s", secs(elapsed)),
    )
}

// ------------------------------------------------------------ 2. Mel scale

fn mel_anchors() -> Outcome {
    let zero = hz_to_mel(0.0);
    let k = hz_to_mel(1000.0);
    let back = mel_to_hz(k);
    check(
        zero == 0.0 && (k - 1000.0).abs() < 0.1 && (back - 1000.0).abs() < 1e-9,
        format!("mel(0) = {zero}, mel(1000) = {k:.4}"),
    )
}

// ---------------------------------------------------------- 3. EM ascent

fn em_monotone() -> Outcome {
    let (t, d, m) = (500, 13, 8);
    let mut worst = 0.0f64;
    let mut exempt = 0;
    let mut iterations = 0;
    for set in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + set);
        let centres: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let unit = Normal::new(0.0, 1.0).unwrap();
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t {
            let c = &centres[rng.random_range(0..centres.len())];
            let spread = rng.random_range(0.3..2.0);
            data.extend(c.iter().map(|mu| mu + spread * unit.sample(&mut rng)));
        }
        let view = FeatureView::new(&data, d).map_err(|e| e.to_string())?;
        let config = EmConfig {
            max_iters: 150,
            tol: 1e-12,
            variance_floor: 1e-4,
            seed: set,
        };
        let fit = em_fit(view, m, &config).map_err(|e| e.to_string())?;
        worst = worst.max(fit.trace.worst_decrease());
        exempt += fit.trace.exempt.iter().filter(|&&e| e).count();
        iterations += fit.trace.avg_log_likelihood.len();
    }
    check(
        worst <= 1e-8,
        format!("largest decrease {worst:.2e} over {iterations} iterations, {exempt} floor/reseed iterations exempt"),
    )
}

// -------------------------------------------------------- 4. GMM recovery

fn gmm_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let data: Vec<f64> = (0..1000)
        .map(|i| if i < 500 { -10.0 } else { 10.0 } + unit.sample(&mut rng))
        .collect();
    let view = FeatureView::new(&data, 1).map_err(|e| e.to_string())?;
    let fit = em_fit(view, 2, &EmConfig::default()).map_err(|e| e.to_string())?;
    let g = &fit.model;
    let mut comps: Vec<(f64, f64)> = (0..2).map(|i| (g.mean(i)[0], g.weights()[i])).collect();
    comps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ok = (comps[0].0 + 10.0).abs() < 0.2
        && (comps[1].0 - 10.0).abs() < 0.2
        && comps.iter().all(|c| (c.1 - 0.5).abs() < 0.05);
    check(
        ok,
        format!(
            "means {:.3}, {:.3}; weights {:.3}, {:.3}",
            comps[0].0, comps[1].0, comps[0].1, comps[1].1
        ),
    )
}

// ------------------------------------------------------ 5. gradient check

struct GradStats {
    checked: usize,
    skipped: usize,
    worst: f64,
}

fn relu_pattern(net: &DnnModel, inputs: &[Vec<f64>]) -> Vec<bool> {
    let mut pattern = Vec::new();
    for x in inputs {
        let f = net.forward(x).expect("forward");
        let hidden = f.pre_activations.len() - 1;
        for z in &f.pre_activations[..hidden] {
            pattern.extend(z.iter().map(|&v| v > 0.0));
        }
    }
    pattern
}

fn min_abs_preactivation(net: &DnnModel, x: &[f64]) -> f64 {
    let f = net.forward(x).expect("forward");
    let hidden = f.pre_activations.len() - 1;
    f.pre_activations[..hidden]
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

fn grad_check(arch: &Architecture, seed: u64, per_layer: Option<usize>, stats: &mut GradStats) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = DnnModel::init(arch, seed).map_err(|e| e.to_string())?;
    // Non-zero biases so the check covers them away from their initial value.
    for idx in 0..net.param_count() {
        let v = net.param(idx) + rng.random_range(-0.05..0.05);
        net.set_param(idx, v);
    }
    let mut data = Dataset::default();
    while data.len() < 4 {
        let x: Vec<f64> = (0..arch.input_size).map(|_| rng.random_range(-1.5..1.5)).collect();
        if min_abs_preactivation(&net, &x) < 1e-6 {
            stats.skipped += 1;
            continue;
        }
        data.push(x, rng.random_range(0..arch.output_size));
    }
    let (_, grads) = net
        .loss_and_gradients(&data.inputs, &data.labels)
        .map_err(|e| e.to_string())?;
    let analytic = grads.flat();
    let base_pattern = relu_pattern(&net, &data.inputs);

    let mut indices = Vec::new();
    let mut offset = 0;
    for layer in net.layers() {
        let count = layer.inputs() * layer.outputs() + layer.outputs();
        match per_layer {
            None => indices.extend(offset..offset + count),
            Some(k) => {
                let bias_start = offset + layer.inputs() * layer.outputs();
                for _ in 0..k {
                    indices.push(rng.random_range(offset..bias_start));
                }
                for _ in 0..k.min(layer.outputs()) {
                    indices.push(rng.random_range(bias_start..offset + count));
                }
            }
        }
        offset += count;
    }

    let eps = 1e-5;
    for idx in indices {
        let original = net.param(idx);
        net.set_param(idx, original + eps);
        let plus_pattern = relu_pattern(&net, &data.inputs);
        let plus = net.mean_loss(&data).map_err(|e| e.to_string())?;
        net.set_param(idx, original - eps);
        let minus_pattern = relu_pattern(&net, &data.inputs);
        let minus = net.mean_loss(&data).map_err(|e| e.to_string())?;
        net.set_param(idx, original);
        if plus_pattern != base_pattern || minus_pattern != base_pattern {
            stats.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        stats.worst = stats.worst.max(rel);
        stats.checked += 1;
    }
    Ok(())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut stats = GradStats {
        checked: 0,
        skipped: 0,
        worst: 0.0,
    };
    let small = Architecture {
        input_size: 5,
        hidden: vec![8, 8],
        output_size: 3,
    };
    for seed in 0..5 {
        grad_check(&small, seed, None, &mut stats)?;
    }
    grad_check(&Architecture::standard(60, 10), 77, Some(150), &mut stats)?;
    let elapsed = start.elapsed();
    check(
        stats.worst < 1e-4 && stats.checked > 0 && elapsed < Duration::from_secs(30),
        format!(
            "max relative error {:.2e} over {} parameters ({} kink-adjacent skipped), {:.1} s",
            stats.worst,
            stats.checked,
            stats.skipped,
            secs(elapsed)
        ),
    )
}

// ------------------------------------------------- 6-8. corpus experiments

struct Run {
    manifest: Manifest,
    trained: Trained,
    elapsed: Duration,
}

fn synth_and_train(dir: &Path, level: Separation, config: &RunConfig) -> Result<Run, String> {
    let start = Instant::now();
    let spec = SynthSpec::default().with_separation(level);
    let manifest = generate_synthetic(&spec, dir).map_err(|e| e.to_string())?;
    let trained = train_all(&manifest, config).map_err(|e| e.to_string())?;
    Ok(Run {
        manifest,
        trained,
        elapsed: start.elapsed(),
    })
}

fn average(report: &emosid::evaluation::Report, mode: Mode, condition: Condition) -> Result<f64, String> {
    report
        .table
        .average(mode, condition)
        .map(|a| a.rate)
        .ok_or_else(|| format!("no {mode}/{condition} average"))
}

fn determinism(run: &Run, config: &RunConfig, root: &Path) -> Outcome {
    let a = root.join("models_a");
    let b = root.join("models_b");
    run.trained.save(&a).map_err(|e| e.to_string())?;
    let again = train_all(&run.manifest, config).map_err(|e| e.to_string())?;
    again.save(&b).map_err(|e| e.to_string())?;
    let mut differing = Vec::new();
    let mut bytes = 0;
    for file in [TAGS_FILE, CASCADE_FILE, MFCC_DNN_FILE] {
        let x = std::fs::read(a.join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(file)).map_err(|e| e.to_string())?;
        bytes += x.len();
        if x != y {
            differing.push(file);
        }
    }
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("tag store and both networks identical ({bytes} bytes)")
        } else {
            format!("differing files: {differing:?}")
        },
    )
}

// --------------------------------------------------- 9. statistics fixtures

fn statistics_fixtures() -> Outcome {
    let t = students_t(&[80.0, 82.0, 84.0], &[70.0, 72.0, 74.0], SdKind::Sample).map_err(|e| e.to_string())?;
    let rates_exact = identification_rate(46, 50) == 92.0
        && identification_rate(7, 7) == 100.0
        && identification_rate(0, 12) == 0.0
        && identification_rate(1, 4) == 25.0;
    let row = |label: &str, values: [f64; 6], avg: f64| ModeRates {
        label: label.into(),
        rates: [
            Emotion::Neutral,
            Emotion::Angry,
            Emotion::Sad,
            Emotion::Happy,
            Emotion::Disgust,
            Emotion::Fear,
        ]
        .into_iter()
        .zip(values)
        .collect(),
        average: avg,
    };
    let cascade = row("cascade", [95.0, 60.0, 83.0, 84.5, 83.0, 84.5], 81.7);
    let gmm = row("gmm", [90.0, 53.0, 61.3, 68.2, 70.9, 72.3], 69.3);
    let dnn = row("dnn", [92.0, 58.0, 75.1, 79.3, 77.2, 75.4], 76.2);
    let over_gmm = compare_modes(&cascade, &gmm)
        .map_err(|e| e.to_string())?
        .average
        .relative_pct
        .unwrap_or(f64::NAN);
    let over_dnn = compare_modes(&cascade, &dnn)
        .map_err(|e| e.to_string())?
        .average
        .relative_pct
        .unwrap_or(f64::NAN);
    check(
        (t.t_value - 5.0).abs() < 1e-9
            && rates_exact
            && (over_gmm - 17.9).abs() < 0.05
            && (over_dnn - 7.2).abs() < 0.05,
        format!(
            "t = {:.12}, rate fixtures exact: {rates_exact}, improvements {over_gmm:.2}% / {over_dnn:.2}%",
            t.t_value
        ),
    )
}

// ---------------------------------------------------- 10. mix calibration

fn mix_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    let target = 10.0 * 2f64.log10();
    for pair in 0..20 {
        let len = rng.random_range(2_000..20_000);
        let noise_len = rng.random_range(500..30_000);
        let amp = rng.random_range(0.05..0.9);
        let f = rng.random_range(80.0..3000.0);
        let signal: Vec<f64> = (0..len)
            .map(|i| amp * (2.0 * PI * f * i as f64 / 8000.0).sin() * rng.random_range(0.2..1.0))
            .collect();
        let noise: Vec<f64> = (0..noise_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = AudioClip::new(signal.clone(), 8000, format!("s{pair}")).map_err(|e| e.to_string())?;
        let n = AudioClip::new(noise, 8000, format!("n{pair}")).map_err(|e| e.to_string())?;
        let out = audio::mix_interference(&s, &n, 2.0, MixMode::Power).map_err(|e| e.to_string())?;
        // Recover the added interference from the output itself.
        let added: Vec<f64> = out
            .clip
            .samples()
            .iter()
            .zip(&signal)
            .map(|(y, x)| y / out.peak_scale - x)
            .collect();
        let ps: f64 = signal.iter().map(|v| v * v).sum::<f64>() / len as f64;
        let pn: f64 = added.iter().map(|v| v * v).sum::<f64>() / len as f64;
        let snr = 10.0 * (ps / pn).log10();
        worst = worst.max((snr - target).abs());
    }
    check(
        worst <= 0.1,
        format!("20 pairs, max |SNR − {target:.2} dB| = {worst:.2e} dB"),
    )
}

// ------------------------------------------------------------------ driver

fn report(results: &mut Vec<bool>, id: &str, name: &str, outcome: Outcome) {
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    println!("{tag} {id:>2}. {name}: {detail}");
    results.push(outcome.is_ok());
}

fn main() {
    let mut results = Vec::new();
    report(&mut results, "1", "MFCC oracle equivalence", mfcc_oracle());
    report(&mut results, "2", "Mel-scale anchors", mel_anchors());
    report(&mut results, "3", "EM monotonicity", em_monotone());
    report(&mut results, "4", "GMM recovery", gmm_recovery());
    report(&mut results, "5", "DNN gradient check", gradient_check());

    let root = tempfile::tempdir().expect("temp dir");
    let config = RunConfig::default();
    let corpus_start = Instant::now();
    let high = synth_and_train(&root.path().join("high"), Separation::High, &config);
    match &high {
        Ok(run) => report(&mut results, "6", "training determinism", determinism(run, &config, root.path())),
        Err(e) => report(&mut results, "6", "training determinism", Err(e.clone())),
    }
    let sixth_extra = corpus_start.elapsed() - high.as_ref().map(|r| r.elapsed).unwrap_or_default();

    let experiment_start = Instant::now();
    let evaluate_run = |run: &Run, distort: bool| {
        let models = Models::from(run.trained.clone());
        evaluate(&run.manifest, &models, &config, &Mode::ALL, distort)
            .map(|(_, r)| r)
            .map_err(|e| e.to_string())
    };
    let high_report = high.as_ref().map_err(|e| e.clone()).and_then(|r| evaluate_run(r, false));
    let medium = synth_and_train(&root.path().join("medium"), Separation::Medium, &config);
    let medium_report = medium.as_ref().map_err(|e| e.clone()).and_then(|r| evaluate_run(r, true));
    let elapsed = experiment_start.elapsed() + high.as_ref().map(|r| r.elapsed).unwrap_or_default();

    let seventh = (|| -> Outcome {
        let hr = high_report.as_ref().map_err(|e| e.clone())?;
        let mr = medium_report.as_ref().map_err(|e| e.clone())?;
        let high_gmm = average(hr, Mode::Gmm, Condition::Normal)?;
        let gmm = average(mr, Mode::Gmm, Condition::Normal)?;
        let dnn = average(mr, Mode::Dnn, Condition::Normal)?;
        let cascade = average(mr, Mode::Cascade, Condition::Normal)?;
        check(
            high_gmm >= 99.0 && cascade >= gmm && cascade >= dnn && elapsed < Duration::from_secs(15 * 60),
            format!(
                "high GMM {high_gmm:.2}%; medium cascade {cascade:.2}% vs GMM {gmm:.2}% / DNN {dnn:.2}%; {:.0} s",
                secs(elapsed)
            ),
        )
    })();
    report(&mut results, "7", "end-to-end synthetic identification", seventh);

    let eighth = (|| -> Outcome {
        let mr = medium_report.as_ref().map_err(|e| e.clone())?;
        let normal = average(mr, Mode::Cascade, Condition::Normal)?;
        let distorted = average(mr, Mode::Cascade, Condition::Distorted)?;
        let drop = normal - distorted;
        check(
            drop > 0.0 && drop < 15.0,
            format!("cascade {normal:.2}% → {distorted:.2}% at 2:1 power, drop {drop:.2} pp"),
        )
    })();
    report(&mut results, "8", "noise-stress degradation", eighth);
    report(&mut results, "9", "statistics fixtures", statistics_fixtures());
    report(&mut results, "10", "mix-ratio calibration", mix_calibration());

    // Corpus property: GMM-alone accuracy falls with separation.
    let monotone = (|| -> Outcome {
        let low = synth_and_train(&root.path().join("low"), Separation::Low, &config)?;
        let lr = evaluate_run(&low, false)?;
        let h = average(high_report.as_ref().map_err(|e| e.clone())?, Mode::Gmm, Condition::Normal)?;
        let m = average(medium_report.as_ref().map_err(|e| e.clone())?, Mode::Gmm, Condition::Normal)?;
        let l = average(&lr, Mode::Gmm, Condition::Normal)?;
        check(h >= m && m >= l, format!("GMM-alone {h:.2}% ≥ {m:.2}% ≥ {l:.2}%"))
    })();
    report(&mut results, "P", "separation monotonicity", monotone);
    log_extra(sixth_extra);

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn log_extra(d: Duration) {
    println!("(second determinism training run took {:.0} s)", secs(d));
}
