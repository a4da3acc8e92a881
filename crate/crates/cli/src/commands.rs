//! `synth`, `train`, `predict` and `mel`.

use std::path::Path;

use phq_ensemble::augment::{AugmentConfig, NoiseSigma};
use phq_ensemble::bottom_up::{predict_all_bottom_up, train_bottom_up};
use phq_ensemble::io::{self, SystemKind};
use phq_ensemble::mel::{pcm16_to_float, MelExtractor, FRAMES, PATCH_SAMPLES, SAMPLE_RATE};
use phq_ensemble::optim::TrainConfig;
use phq_ensemble::synth::{synth_cohort, SyntheticConfig};
use phq_ensemble::top_down::{predict_all_top_down, train_top_down};
use phq_ensemble::Split;

use crate::archive::{fingerprint, Ensemble, ModelArchive};
use crate::error::{CliError, CliResult};
use crate::output::Outputs;
use crate::settings::Settings;
use crate::{MelArgs, PredictArgs, SynthArgs, TrainArgs};

pub const LABELS_FILE: &str = "labels.csv";
pub const TRAIN_EMBEDDINGS_FILE: &str = "train_embeddings.csv";
pub const DEV_EMBEDDINGS_FILE: &str = "dev_embeddings.csv";

pub(crate) fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::data(format!("reading {}: {e}", path.display())))
}

/// Prefixes data errors with the file they came from.
pub(crate) fn in_file<T>(path: &Path, r: phq_ensemble::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })
}

pub(crate) fn parse_system(s: &str) -> CliResult<SystemKind> {
    SystemKind::parse(s).map_err(|_| CliError::usage(format!("unknown system '{s}' (expected bottom-up or top-down)")))
}

pub fn synth(args: SynthArgs) -> CliResult<()> {
    let mut s = Settings::load(
        args.config.as_deref(),
        &[
            "out",
            "seed",
            "train_counts",
            "dev_counts",
            "groups_per_speaker",
            "within_speaker_noise_sigma",
            "separation_scale",
        ],
    )?;
    s.flag("out", args.out.as_ref().map(|p| p.display()));
    s.flag("seed", args.seed);
    s.flag("groups_per_speaker", args.groups_per_speaker);
    s.flag("separation_scale", args.separation_scale);
    s.flag("within_speaker_noise_sigma", args.within_speaker_noise_sigma);

    let d = SyntheticConfig::default();
    let config = SyntheticConfig {
        train_counts: s.array("train_counts")?.unwrap_or(d.train_counts),
        dev_counts: s.array("dev_counts")?.unwrap_or(d.dev_counts),
        groups_per_speaker: s.or("groups_per_speaker", d.groups_per_speaker)?,
        within_speaker_noise_sigma: s.or("within_speaker_noise_sigma", d.within_speaker_noise_sigma)?,
        separation_scale: s.or("separation_scale", d.separation_scale)?,
        seed: s.or("seed", d.seed)?,
    };
    config.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let dir: std::path::PathBuf = s.require("out")?;

    let data = synth_cohort(&config)?;
    let mut labels = Vec::new();
    let mut rows = io::label_rows(&data.train);
    rows.extend(io::label_rows(&data.dev));
    io::write_labels(&mut labels, &rows)?;
    let mut train = Vec::new();
    io::write_embeddings(&mut train, &data.train.embeddings)?;
    let mut dev = Vec::new();
    io::write_embeddings(&mut dev, &data.dev.embeddings)?;

    let mut out = Outputs::new();
    out.dir(&dir)?;
    out.write(&dir.join(LABELS_FILE), &labels)?;
    out.write(&dir.join(TRAIN_EMBEDDINGS_FILE), &train)?;
    out.write(&dir.join(DEV_EMBEDDINGS_FILE), &dev)?;
    out.commit();
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "system",
    "labels",
    "embeddings",
    "out",
    "split",
    "seed",
    "learning_rate",
    "epochs",
    "batch_size",
    "perturb_count",
    "preserve_count",
    "noise_sigma",
    "noise_scale",
];

/// Everything `train` needs, resolved from flags and the config file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: SystemKind,
    pub labels: std::path::PathBuf,
    pub embeddings: std::path::PathBuf,
    pub out: std::path::PathBuf,
    pub split: Split,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
}

impl RunConfig {
    fn resolve(args: TrainArgs) -> CliResult<Self> {
        let mut s = Settings::load(args.config.as_deref(), TRAIN_KEYS)?;
        s.flag("system", args.system);
        s.flag("labels", args.labels.as_ref().map(|p| p.display()));
        s.flag("embeddings", args.embeddings.as_ref().map(|p| p.display()));
        s.flag("out", args.out.as_ref().map(|p| p.display()));
        s.flag("split", args.split);
        s.flag("seed", args.seed);
        s.flag("learning_rate", args.learning_rate);
        s.flag("epochs", args.epochs);
        s.flag("batch_size", args.batch_size);
        s.flag("perturb_count", args.perturb_count);
        s.flag("preserve_count", args.preserve_count);
        s.flag("noise_sigma", args.noise_sigma);
        s.flag("noise_scale", args.noise_scale);

        let system = parse_system(&s.require::<String>("system")?)?;
        let seed = s.or("seed", 0u64)?;
        let base = match system {
            SystemKind::BottomUp => TrainConfig::bottom_up(seed),
            SystemKind::TopDown => TrainConfig::top_down(seed),
        };
        let train = TrainConfig {
            learning_rate: s.or("learning_rate", base.learning_rate)?,
            epochs: s.or("epochs", base.epochs)?,
            batch_size: s.or("batch_size", base.batch_size)?,
            seed,
        };
        train.validate().map_err(|e| CliError::usage(e.to_string()))?;

        let ad = AugmentConfig::default().with_seed(seed);
        let noise_sigma = match (s.get::<String>("noise_scale")?.as_deref(), s.get::<f64>("noise_sigma")?) {
            (None | Some("relative"), Some(v)) => NoiseSigma::Relative(v),
            (Some("absolute"), Some(v)) => NoiseSigma::Absolute(v),
            (None | Some("relative"), None) => ad.noise_sigma,
            (Some("absolute"), None) => return Err(CliError::usage("noise_scale = absolute needs noise_sigma")),
            (Some(other), _) => return Err(CliError::usage(format!("invalid noise_scale '{other}': expected relative or absolute"))),
        };
        let (NoiseSigma::Relative(v) | NoiseSigma::Absolute(v)) = noise_sigma;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::usage(format!("noise_sigma must be finite and non-negative, got {v}")));
        }
        let augment = AugmentConfig {
            perturb_count: s.or("perturb_count", ad.perturb_count)?,
            preserve_count: s.or("preserve_count", ad.preserve_count)?,
            noise_sigma,
            seed,
        };
        let split = s.or("split", "train".to_string())?;
        Ok(RunConfig {
            system,
            labels: s.input("labels")?,
            embeddings: s.input("embeddings")?,
            out: s.require("out")?,
            split: Split::parse(&split).map_err(|e| CliError::usage(e.to_string()))?,
            train,
            augment,
        })
    }
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let run = RunConfig::resolve(args)?;
    let label_bytes = read_input(&run.labels)?;
    let embedding_bytes = read_input(&run.embeddings)?;
    let rows = in_file(&run.labels, io::read_labels(label_bytes.as_slice()))?;
    let embeddings = in_file(&run.embeddings, io::read_embeddings(embedding_bytes.as_slice()))?;
    let cohort = io::assemble_cohort(&rows, embeddings, run.split)?;
    if cohort.labels.is_empty() {
        return Err(CliError::data(format!("no {} speakers in {}", run.split.name(), run.labels.display())));
    }

    let ensemble = match run.system {
        SystemKind::BottomUp => Ensemble::BottomUp(train_bottom_up(&cohort, &run.train, &run.augment)?),
        SystemKind::TopDown => {
            let moe = train_top_down(&cohort, &run.train, &run.augment)?;
            for w in moe.warnings() {
                eprintln!("warning: {w}");
            }
            Ensemble::TopDown(moe)
        }
    };
    let archive = ModelArchive {
        ensemble,
        train_config: run.train,
        augment_config: run.augment,
        data_fingerprint: fingerprint(&[&label_bytes, &embedding_bytes]),
    };
    let mut out = Outputs::new();
    out.write(&run.out, &archive.to_bytes())?;
    out.commit();
    Ok(())
}

pub fn predict(args: PredictArgs) -> CliResult<()> {
    let mut s = Settings::load(args.config.as_deref(), &["model", "embeddings", "out", "system"])?;
    s.flag("model", args.model.as_ref().map(|p| p.display()));
    s.flag("embeddings", args.embeddings.as_ref().map(|p| p.display()));
    s.flag("out", args.out.as_ref().map(|p| p.display()));
    s.flag("system", args.system);
    let model_path = s.input("model")?;
    let embeddings_path = s.input("embeddings")?;
    let out_path: std::path::PathBuf = s.require("out")?;
    let expected = s.get::<String>("system")?.map(|v| parse_system(&v)).transpose()?;

    let archive = ModelArchive::load(&model_path)?;
    if let Some(kind) = expected {
        archive.expect_kind(kind)?;
    }
    let bytes = read_input(&embeddings_path)?;
    let embeddings = in_file(&embeddings_path, io::read_embeddings(bytes.as_slice()))?;
    let predictions = match &archive.ensemble {
        Ensemble::BottomUp(m) => predict_all_bottom_up(m, &embeddings)?,
        Ensemble::TopDown(m) => predict_all_top_down(m, &embeddings)?,
    };
    let mut buf = Vec::new();
    io::write_predictions(&mut buf, &predictions)?;
    let mut out = Outputs::new();
    out.write(&out_path, &buf)?;
    out.commit();
    Ok(())
}

/// Splits the recording into consecutive non-overlapping 4000-sample patches
/// and writes one row per (patch, band).
pub fn mel(args: MelArgs) -> CliResult<()> {
    if !args.wav.is_file() {
        return Err(CliError::usage(format!("wav file not found: {}", args.wav.display())));
    }
    let reader = hound::WavReader::open(&args.wav).map_err(|e| CliError::data(format!("{}: {e}", args.wav.display())))?;
    let format = reader.spec();
    if format.channels != 1 || format.sample_rate as usize != SAMPLE_RATE {
        return Err(CliError::data(format!(
            "{}: need mono {SAMPLE_RATE} Hz audio, got {} channel(s) at {} Hz",
            args.wav.display(),
            format.channels,
            format.sample_rate
        )));
    }
    let bad = |e: hound::Error| CliError::data(format!("{}: {e}", args.wav.display()));
    let samples: Vec<f64> = match (format.sample_format, format.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => pcm16_to_float(&reader.into_samples::<i16>().collect::<Result<Vec<_>, _>>().map_err(bad)?),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(bad)?,
        (fmt, bits) => return Err(CliError::data(format!("{}: unsupported {bits}-bit {fmt:?} samples", args.wav.display()))),
    };
    if samples.len() < PATCH_SAMPLES {
        return Err(CliError::data(format!(
            "{}: {} samples is shorter than one {PATCH_SAMPLES}-sample patch",
            args.wav.display(),
            samples.len()
        )));
    }

    let extractor = MelExtractor::<f64>::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["patch".to_string(), "band".to_string()];
    header.extend((0..FRAMES).map(|f| format!("f{f:02}")));
    w.write_record(&header)?;
    for (p, chunk) in samples.chunks_exact(PATCH_SAMPLES).enumerate() {
        let patch = extractor.patch(chunk)?;
        for band in 0..patch.shape().0 {
            let mut row = vec![p.to_string(), band.to_string()];
            row.extend(patch.band(band).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::internal(e.to_string()))?;
    let mut out = Outputs::new();
    out.write(&args.out, &bytes)?;
    out.commit();
    Ok(())
}
