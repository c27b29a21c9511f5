use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use kws_core::dataio::{
    duration_outliers, load_examples, load_manifest, load_snips_metadata, mix_at_snr, read_raw_pcm, read_wav,
    synth, validate_disjoint, write_wav, ManifestEntry,
};
use kws_core::evaluation::{
    det_curve, evaluate_split, smooth_trace, threshold_at_fah, write_det_csv, NegativeTrace, TriggerConfig,
};
use kws_core::features::{AudioBuffer, FeatureNorm, FrameStream, LfbeExtractor, SAMPLE_RATE};
use kws_core::network::{checkpoint, Architecture, Model};
use kws_core::streaming::{count_multiplications, StreamingDetector};
use kws_core::training::{self, Example, LossRecord, TrainObserver};
use kws_core::{KwsError, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::Overrides;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// JSON-lines manifest, or Hey Snips metadata when the file ends in `.json`
/// (audio paths relative to the metadata file).
fn load_entries(path: &Path) -> Result<Vec<ManifestEntry>> {
    if path.extension().is_some_and(|e| e == "json") {
        load_snips_metadata(path, path.parent().unwrap_or(Path::new(".")))
    } else {
        load_manifest(path)
    }
}

fn load_model(path: &Path, config: &RunConfig) -> Result<Model> {
    let model = checkpoint::load(path)?;
    if model.arch.input_dim != config.features.num_mels {
        return Err(KwsError::Config(format!(
            "checkpoint expects {} features per frame, config produces {}",
            model.arch.input_dim, config.features.num_mels
        )));
    }
    Ok(model)
}

fn extractor(config: &RunConfig) -> Result<LfbeExtractor> {
    LfbeExtractor::new(&config.features, SAMPLE_RATE)
}

fn apply_overrides(config: &mut RunConfig, o: &Overrides) {
    if let Some(seed) = o.seed {
        config.training.seed = seed;
    }
    if let Some(scheme) = o.labeling {
        config.labeling.scheme = scheme.into();
    }
    if o.no_masking {
        config.labeling.masking_enabled = false;
    }
    if o.no_gating {
        config.network.gating_enabled = false;
    }
    if let Some(e) = o.epochs {
        config.training.epochs = e;
    }
    if let Some(m) = o.max_steps {
        config.training.max_steps = m;
    }
}

struct RunObserver {
    loss_log: BufWriter<File>,
    out: PathBuf,
}

impl TrainObserver for RunObserver {
    fn on_loss(&mut self, r: &LossRecord) -> Result<()> {
        writeln!(self.loss_log, "{},{},{}", r.step, r.split.as_str(), r.loss)?;
        Ok(())
    }

    fn on_best(&mut self, model: &Model, _loss: f32) -> Result<()> {
        checkpoint::save(model, &self.out.join("best.wknt"))
    }

    fn on_epoch_end(&mut self, model: &Model, _epoch: usize) -> Result<()> {
        self.loss_log.flush()?;
        checkpoint::save(model, &self.out.join("last.wknt"))
    }
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    best_loss: f32,
    final_train_loss: f32,
    train_utterances: usize,
    dev_utterances: usize,
    params: usize,
}

pub fn train(
    config_path: Option<&Path>,
    train_manifest: &Path,
    dev_manifest: Option<&Path>,
    out: &Path,
    overrides: &Overrides,
) -> Result<()> {
    let mut config = RunConfig::load_or_default(config_path)?;
    apply_overrides(&mut config, overrides);
    config.validate()?;
    create_dir(out)?;
    config.write_to(out)?;

    let train_entries = load_entries(train_manifest)?;
    let dev_entries = dev_manifest.map(load_entries).transpose()?.unwrap_or_default();
    validate_disjoint(&[("train", &train_entries), ("dev", &dev_entries)])?;
    for i in duration_outliers(&train_entries, 3.0) {
        log::warn!("unusual duration: {}", train_entries[i].audio_path.display());
    }

    let ex = extractor(&config)?;
    let prepare = |entries: &[ManifestEntry]| load_examples(entries, &ex, &config.labeling, &config.vad);
    let train_utts = prepare(&train_entries)?;
    let dev_utts = prepare(&dev_entries)?;
    if train_utts.is_empty() {
        return Err(KwsError::Data(format!("{}: no usable utterances", train_manifest.display())));
    }
    let norm = FeatureNorm::fit(train_utts.iter().map(|u| &u.features), config.features.num_mels)?;
    let to_examples = |utts: &[kws_core::dataio::PreparedUtterance]| -> Vec<Example> {
        utts.iter()
            .map(|u| Example {
                features: norm.apply(&u.features.frames),
                labels: u.labels.clone(),
            })
            .collect()
    };
    let (train_set, dev_set) = (to_examples(&train_utts), to_examples(&dev_utts));
    log::info!(
        "training on {} utterances ({} dev), {} parameters",
        train_set.len(),
        dev_set.len(),
        config.network.param_count()
    );

    let mut model = Model::init(config.network.clone(), config.training.seed)?;
    model.norm = norm;
    let mut observer = RunObserver {
        loss_log: BufWriter::new(File::create(out.join("loss.csv"))?),
        out: out.to_path_buf(),
    };
    writeln!(observer.loss_log, "step,split,loss")?;
    let outcome = training::train(&train_set, &dev_set, model, &config.training, &mut observer)?;
    observer.loss_log.flush()?;
    checkpoint::save(&outcome.best, &out.join("best.wknt"))?;
    checkpoint::save(&outcome.last, &out.join("last.wknt"))?;

    let summary = TrainSummary {
        steps: outcome.steps,
        best_loss: outcome.best_loss,
        final_train_loss: training::mean_loss(&outcome.last, &train_set, config.training.pos_weight)?,
        train_utterances: train_set.len(),
        dev_utterances: dev_set.len(),
        params: config.network.param_count(),
    };
    let text = toml::to_string(&summary).map_err(|e| KwsError::Config(e.to_string()))?;
    std::fs::write(out.join("summary.toml"), &text)?;
    print!("{text}");
    Ok(())
}

struct Scored {
    positives: Vec<Vec<f32>>,
    negatives: Vec<NegativeTrace>,
    /// Positives mixed with noise, when noise sources are configured.
    noisy: Option<Vec<Vec<f32>>>,
}

fn smoothed(model: &Model, ex: &LfbeExtractor, audio: &AudioBuffer, config: &RunConfig) -> Result<Vec<f32>> {
    let features = ex.compute(audio)?;
    if features.is_empty() {
        return Err(KwsError::Data("utterance shorter than one frame".into()));
    }
    Ok(smooth_trace(&model.posteriors(&features)?, &config.smoothing))
}

fn score_manifests(model: &Model, manifests: &[PathBuf], config: &RunConfig, with_noise: bool) -> Result<Scored> {
    let mut entries = Vec::new();
    for m in manifests {
        entries.extend(load_entries(m)?);
    }
    let (pos, neg): (Vec<ManifestEntry>, Vec<ManifestEntry>) = entries.into_iter().partition(|e| e.is_positive());
    if pos.is_empty() {
        return Err(KwsError::Data("no positive utterances in the evaluation manifests".into()));
    }
    if neg.is_empty() {
        return Err(KwsError::Data("no negative utterances in the evaluation manifests".into()));
    }
    let ex = extractor(config)?;
    let noises: Vec<AudioBuffer> = if with_noise {
        config
            .augment
            .noise_source_paths
            .iter()
            .map(|p| read_wav(p))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let pos_scores: Vec<(Vec<f32>, Option<Vec<f32>>)> = pos
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let audio = read_wav(&e.audio_path)?;
            let clean = smoothed(model, &ex, &audio, config)?;
            let noisy = if noises.is_empty() {
                None
            } else {
                let noise = &noises[i % noises.len()];
                let mix = mix_at_snr(&audio, noise, config.augment.snr_db, config.augment.seed.wrapping_add(i as u64))?;
                Some(smoothed(model, &ex, &mix.audio, config)?)
            };
            Ok((clean, noisy))
        })
        .collect::<Result<_>>()?;
    let negatives: Vec<NegativeTrace> = neg
        .par_iter()
        .map(|e| {
            let audio = read_wav(&e.audio_path)?;
            Ok(NegativeTrace {
                smoothed: smoothed(model, &ex, &audio, config)?,
                duration_secs: audio.duration_secs(),
            })
        })
        .collect::<Result<_>>()?;
    let (positives, noisy): (Vec<Vec<f32>>, Vec<Option<Vec<f32>>>) = pos_scores.into_iter().unzip();
    let noisy = noisy.into_iter().collect::<Option<Vec<_>>>();
    Ok(Scored {
        positives,
        negatives,
        noisy,
    })
}

fn head_description(arch: &Architecture) -> String {
    format!(
        "relu(skip sum) -> dense {}x{} relu -> dense {}x{} softmax",
        arch.skip_channels, arch.head_hidden, arch.head_hidden, arch.num_classes
    )
}

#[derive(Serialize)]
struct EvalReport {
    params: usize,
    head: String,
    gating: bool,
    multiplications_per_second: u64,
    receptive_field_frames: usize,
    context_seconds: f32,
    w_smooth: usize,
    refractory_frames: usize,
    target_fah: f64,
    threshold: f32,
    fah: f64,
    false_alarms: usize,
    negative_hours: f64,
    positives: usize,
    frr_clean_percent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    frr_noisy_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noisy_snr_db: Option<f32>,
}

pub fn eval(
    checkpoint_path: &Path,
    manifests: &[PathBuf],
    config_path: Option<&Path>,
    target_fah: Option<f64>,
    out: &Path,
) -> Result<()> {
    let mut config = RunConfig::load_or_default(config_path)?;
    if let Some(t) = target_fah {
        config.evaluation.target_fah = t;
    }
    config.validate()?;
    let model = load_model(checkpoint_path, &config)?;
    create_dir(out)?;
    config.write_to(out)?;

    let scored = score_manifests(&model, manifests, &config, true)?;
    let threshold = threshold_at_fah(&scored.negatives, config.evaluation.target_fah, config.trigger.refractory_frames)?;
    let trigger = TriggerConfig {
        threshold,
        ..config.trigger.clone()
    };
    let clean = evaluate_split(&scored.positives, &scored.negatives, &trigger)?;
    let noisy = scored
        .noisy
        .as_ref()
        .map(|p| evaluate_split(p, &scored.negatives, &trigger))
        .transpose()?;
    let arch = &model.arch;
    let report = EvalReport {
        params: arch.param_count(),
        head: head_description(arch),
        gating: arch.gating_enabled,
        multiplications_per_second: count_multiplications(arch).multiplications_per_second,
        receptive_field_frames: arch.receptive_field(),
        context_seconds: arch.context_seconds(config.features.hop_ms),
        w_smooth: config.smoothing.w_smooth,
        refractory_frames: trigger.refractory_frames,
        target_fah: config.evaluation.target_fah,
        threshold,
        fah: clean.fah,
        false_alarms: clean.false_alarms,
        negative_hours: clean.negative_hours,
        positives: scored.positives.len(),
        frr_clean_percent: clean.frr_percent,
        frr_noisy_percent: noisy.as_ref().map(|r| r.frr_percent),
        noisy_snr_db: noisy.as_ref().map(|_| config.augment.snr_db),
    };
    let text = toml::to_string(&report).map_err(|e| KwsError::Config(e.to_string()))?;
    std::fs::write(out.join("report.toml"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn det(
    checkpoint_path: &Path,
    manifests: &[PathBuf],
    config_path: Option<&Path>,
    points: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut config = RunConfig::load_or_default(config_path)?;
    if let Some(p) = points {
        config.evaluation.det_points = p;
    }
    config.validate()?;
    let model = load_model(checkpoint_path, &config)?;
    create_dir(out)?;
    config.write_to(out)?;
    let scored = score_manifests(&model, manifests, &config, false)?;
    let curve = det_curve(
        &scored.positives,
        &scored.negatives,
        config.trigger.refractory_frames,
        config.evaluation.det_points,
    )?;
    let path = out.join("det.csv");
    write_det_csv(&curve, BufWriter::new(File::create(&path)?))?;
    println!("{} DET points written to {}", curve.len(), path.display());
    Ok(())
}

/// Samples fed to the detector per read in `stream` and `bench`.
const CHUNK: usize = 1600;

pub fn stream(
    checkpoint_path: &Path,
    input: Option<&Path>,
    raw: bool,
    config_path: Option<&Path>,
    threshold: Option<f32>,
    out: Option<&Path>,
) -> Result<()> {
    let mut config = RunConfig::load_or_default(config_path)?;
    if let Some(t) = threshold {
        config.trigger.threshold = t;
    }
    config.validate()?;
    let model = Arc::new(load_model(checkpoint_path, &config)?);
    let audio = match (input, raw) {
        (Some(path), false) => read_wav(path)?,
        (None, true) => read_raw_pcm(std::io::stdin().lock())?,
        (Some(_), true) => return Err(KwsError::Config("--raw reads stdin; drop the input path".into())),
        (None, false) => return Err(KwsError::Config("give a WAV path or --raw".into())),
    };
    let mut sink: Box<dyn Write> = match out {
        Some(dir) => {
            create_dir(dir)?;
            config.write_to(dir)?;
            Box::new(BufWriter::new(File::create(dir.join("stream.csv"))?))
        }
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let mut frames = FrameStream::new(extractor(&config)?);
    let mut detector = StreamingDetector::new(model, config.smoothing.clone(), config.trigger.clone());
    for chunk in audio.samples.chunks(CHUNK) {
        for frame in frames.push(chunk) {
            let d = detector.push(&frame)?;
            writeln!(sink, "{},{},{},{}", d.frame_index, d.raw, d.smoothed, u8::from(d.triggered))?;
        }
    }
    sink.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    audio_seconds: f64,
    wall_seconds: f64,
    real_time_factor: f64,
    frames: usize,
    multiplications_per_frame_measured: u64,
    multiplications_per_frame_analytic: u64,
    multiplications_per_second: u64,
    params: usize,
}

pub fn bench(checkpoint_path: Option<&Path>, seconds: f32, out: Option<&Path>) -> Result<()> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(KwsError::Config(format!("--seconds must be positive, got {seconds}")));
    }
    let config = RunConfig::default();
    let model = match checkpoint_path {
        Some(p) => load_model(p, &config)?,
        None => Model::init(Architecture::default(), 0)?,
    };
    let arch = model.arch.clone();
    let audio = synth::noise_clip(seconds, 1);
    let mut frames = FrameStream::new(extractor(&config)?);
    let mut detector = StreamingDetector::new(Arc::new(model), config.smoothing.clone(), config.trigger.clone());
    let mut count = 0usize;
    let mut measured = 0u64;
    let start = Instant::now();
    for chunk in audio.samples.chunks(CHUNK) {
        for frame in frames.push(chunk) {
            detector.push(&frame)?;
            measured = detector.last_multiplications();
            count += 1;
        }
    }
    let wall = start.elapsed().as_secs_f64();
    if count == 0 {
        return Err(KwsError::Config(format!("{seconds} s of audio is shorter than one frame")));
    }
    let analytic = count_multiplications(&arch);
    let report = BenchReport {
        audio_seconds: audio.duration_secs(),
        wall_seconds: wall,
        real_time_factor: audio.duration_secs() / wall,
        frames: count,
        multiplications_per_frame_measured: measured,
        multiplications_per_frame_analytic: analytic.multiplications_per_frame,
        multiplications_per_second: analytic.multiplications_per_second,
        params: arch.param_count(),
    };
    let text = toml::to_string(&report).map_err(|e| KwsError::Config(e.to_string()))?;
    if let Some(dir) = out {
        create_dir(dir)?;
        config.write_to(dir)?;
        std::fs::write(dir.join("bench.toml"), &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn synth(out: &Path, positives: usize, negatives: usize, seed: u64, noise_seconds: f32) -> Result<()> {
    if positives == 0 || negatives == 0 {
        return Err(KwsError::Config("need at least one positive and one negative".into()));
    }
    if !(noise_seconds > 0.0) {
        return Err(KwsError::Config("--noise-seconds must be positive".into()));
    }
    create_dir(out)?;
    for (i, split) in ["train", "dev", "test"].into_iter().enumerate() {
        let utts = synth::generate(positives, negatives, seed.wrapping_add(i as u64));
        synth::write_split(out, split, &utts)?;
    }
    write_wav(&out.join("noise.wav"), &synth::noise_clip(noise_seconds, seed.wrapping_add(100)))?;
    let mut config = RunConfig::default();
    config.augment.noise_source_paths = vec![PathBuf::from("noise.wav")];
    config.augment.seed = seed;
    config.write_to(out)?;
    println!(
        "wrote train/dev/test manifests ({positives} positives, {negatives} negatives each) to {}",
        out.display()
    );
    Ok(())
}
