//! Command-line entry points: synth, pool, train, eval, cv, combine.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataio::{
    generate_synthetic, load_dataset, prepare_features, segment_stack, write_stack, DataError,
    LoadedUtterance, Scheme, SynthConfig, NUM_CLASSES,
};
use crate::granularity::{GranError, Granularity};
use crate::models::{
    canonical_granularity_order, combine_scores, load_checkpoint, save_checkpoint, Architecture,
    CheckpointError, Model, ModelError, ModelSpec,
};
use crate::training::{
    evaluate, format_cv_summary, format_fold_report, run_cv, train_model, unweighted_accuracy_lenient,
    CvSample, Sample, TrainConfig, TrainError,
};

/// Exit codes: 0 success, 1 usage, 2 data/validation, 3 numerical.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GranError> for CliError {
    fn from(e: GranError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mgser", about = "Multi-granularity speech-text emotion fusion", disable_help_subcommand = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset on disk.
    Synth(SynthArgs),
    /// Pool frame stacks into segment-level stacks.
    Pool(PoolArgs),
    /// Train one model and write a checkpoint plus history.
    Train(RunArgs),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalArgs),
    /// Leave-one-session-out cross-validation with repeats.
    Cv(CvArgs),
    /// Combine two checkpoints by logit averaging and evaluate.
    Combine(CombineArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub sessions: usize,
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Signal scheme: complementary | segment_only.
    #[arg(long, default_value = "complementary")]
    pub scheme: String,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub text_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub speech_scale: f64,
}

#[derive(Args, Debug)]
pub struct PoolArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma list over P,S,W.
    #[arg(long, default_value = "P,S,W")]
    pub granularities: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags shared by train and cv; every value can also come from a
/// `key = value` config file, with flags taking precedence.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// linear | transformer | late_fusion | coattention | concat_fusion
    #[arg(long)]
    pub arch: Option<String>,
    /// Comma list over F,P,S,W.
    #[arg(long)]
    pub granularities: Option<String>,
    /// Include the text branch.
    #[arg(long)]
    pub text: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub hidden1: Option<usize>,
    #[arg(long)]
    pub hidden2: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CombineArgs {
    #[arg(long)]
    pub checkpoint_a: PathBuf,
    #[arg(long)]
    pub checkpoint_b: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Resolved run settings: model shape choices plus training settings.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub arch: Architecture,
    pub granularities: Vec<Granularity>,
    pub use_text: bool,
    pub hidden1: usize,
    pub hidden2: usize,
    pub heads: usize,
    pub dropout: f64,
    pub train: TrainConfig,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: Architecture::LateFusion,
            granularities: vec![Granularity::Frame],
            use_text: true,
            hidden1: 128,
            hidden2: 128,
            heads: 8,
            dropout: 0.2,
            train: TrainConfig::default(),
            manifest: None,
            out: None,
            jobs: 1,
        }
    }
}

fn parse_granularities(s: &str) -> Result<Vec<Granularity>, CliError> {
    let mut gs = Vec::new();
    for tag in s.split(',').filter(|t| !t.trim().is_empty()) {
        gs.push(
            Granularity::from_tag(tag.trim())
                .ok_or_else(|| CliError::Usage(format!("unknown granularity {tag:?}")))?,
        );
    }
    canonical_granularity_order(&mut gs);
    Ok(gs)
}

impl RunConfig {
    /// Apply one `key = value` setting. Unknown keys are errors.
    fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let usage = |msg: String| CliError::Usage(msg);
        let bad = |k: &str, v: &str| usage(format!("invalid value {v:?} for config key {k:?}"));
        match key {
            "arch" => {
                self.arch = Architecture::from_name(value)
                    .ok_or_else(|| usage(format!("unknown architecture {value:?}")))?
            }
            "granularities" => self.granularities = parse_granularities(value)?,
            "use_text" => self.use_text = value.parse().map_err(|_| bad(key, value))?,
            "hidden1" => self.hidden1 = value.parse().map_err(|_| bad(key, value))?,
            "hidden2" => self.hidden2 = value.parse().map_err(|_| bad(key, value))?,
            "heads" => self.heads = value.parse().map_err(|_| bad(key, value))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad(key, value))?,
            "learning_rate" => {
                self.train.learning_rate = Some(value.parse().map_err(|_| bad(key, value))?)
            }
            "batch_size" => self.train.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "max_epochs" => self.train.max_epochs = value.parse().map_err(|_| bad(key, value))?,
            "patience" => self.train.patience = value.parse().map_err(|_| bad(key, value))?,
            "val_fraction" => {
                self.train.val_fraction = value.parse().map_err(|_| bad(key, value))?
            }
            "seed" => self.train.seed = value.parse().map_err(|_| bad(key, value))?,
            "repeats" => self.train.repeats = value.parse().map_err(|_| bad(key, value))?,
            "jobs" => self.jobs = value.parse().map_err(|_| bad(key, value))?,
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: expected `key = value`, got {line:?}",
                    idx + 1
                ))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(a) = &args.arch {
            cfg.apply("arch", a)?;
        }
        if let Some(g) = &args.granularities {
            cfg.apply("granularities", g)?;
        }
        if let Some(t) = args.text {
            cfg.use_text = t;
        }
        if let Some(v) = args.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = args.lr {
            cfg.train.learning_rate = Some(v);
        }
        if let Some(v) = args.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = args.epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = args.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = args.hidden1 {
            cfg.hidden1 = v;
        }
        if let Some(v) = args.hidden2 {
            cfg.hidden2 = v;
        }
        if let Some(v) = args.heads {
            cfg.heads = v;
        }
        if let Some(v) = args.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = args.val_fraction {
            cfg.train.val_fraction = v;
        }
        if let Some(v) = args.repeats {
            cfg.train.repeats = v;
        }
        if let Some(v) = args.jobs {
            cfg.jobs = v;
        }
        if let Some(p) = &args.manifest {
            cfg.manifest = Some(p.clone());
        }
        if let Some(p) = &args.out {
            cfg.out = Some(p.clone());
        }
        Ok(cfg)
    }

    /// Fill in the data-derived dimensions to produce the model spec.
    pub fn model_spec(&self, data: &[LoadedUtterance]) -> Result<ModelSpec, CliError> {
        let first = data
            .first()
            .ok_or_else(|| CliError::Data("empty dataset".into()))?;
        let dim = first.speech_frame.dim;
        if first.text.dim != dim {
            return Err(CliError::Data(format!(
                "text dim {} does not match speech dim {}",
                first.text.dim, dim
            )));
        }
        let spec = ModelSpec {
            arch: self.arch,
            granularities: self.granularities.clone(),
            use_text: self.use_text,
            dim,
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            heads: self.heads,
            dropout: self.dropout,
            classes: NUM_CLASSES,
            speech_layers: first.speech_frame.layers,
            text_layers: first.text.layers,
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn load_samples(
    manifest: &Path,
    spec: &ModelSpec,
) -> Result<(Vec<LoadedUtterance>, Vec<CvSample>), CliError> {
    let data = load_dataset(manifest)?;
    let mut samples = Vec::with_capacity(data.len());
    for utt in &data {
        let features = prepare_features(utt, spec).map_err(|e| {
            CliError::Data(format!("utterance {}: {e}", utt.record.utterance_id))
        })?;
        samples.push(CvSample {
            utterance_id: utt.record.utterance_id.clone(),
            session: utt.record.session.clone(),
            sample: Sample {
                features,
                label: utt.record.label,
            },
        });
    }
    Ok((data, samples))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let scheme = Scheme::from_name(&args.scheme)
        .ok_or_else(|| CliError::Usage(format!("unknown scheme {:?}", args.scheme)))?;
    let cfg = SynthConfig {
        n: args.n,
        sessions: args.sessions,
        layers: args.layers,
        dim: args.dim,
        text_scale: args.text_scale,
        speech_scale: args.speech_scale,
        noise: args.noise,
        scheme,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let manifest = generate_synthetic(&cfg, &args.out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

pub fn cmd_pool(args: &PoolArgs) -> Result<(), CliError> {
    let granularities = parse_granularities(&args.granularities)?;
    if granularities.contains(&Granularity::Frame) {
        return Err(CliError::Usage(
            "pool derives segment stacks; frame stacks are the input".into(),
        ));
    }
    let data = load_dataset(&args.manifest)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    for utt in &data {
        for &g in &granularities {
            let (stack, fallback) = segment_stack(utt, g).map_err(|e| {
                CliError::Data(format!("utterance {}: {e}", utt.record.utterance_id))
            })?;
            if fallback {
                println!(
                    "note: {}: no syllable tier, derived by syllabifier",
                    utt.record.utterance_id
                );
            }
            let path = args
                .out
                .join(format!("{}_{}.mgef", utt.record.utterance_id, g));
            write_stack(&path, &stack)?;
        }
    }
    println!(
        "pooled {} utterances x {} granularities into {}",
        data.len(),
        granularities.len(),
        args.out.display()
    );
    Ok(())
}

/// Seeded train/validation split for the train command (no test set).
fn split_train_val(
    samples: Vec<Sample>,
    val_fraction: f64,
    seed: u64,
) -> (Vec<Sample>, Vec<Sample>) {
    use rand::seq::SliceRandom;
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    indices.shuffle(&mut crate::rng::seeded(seed));
    let n_val = ((samples.len() as f64 * val_fraction).floor() as usize).max(1);
    let val_set: std::collections::BTreeSet<usize> = indices[..n_val].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in samples.into_iter().enumerate() {
        if val_set.contains(&i) {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    (train, val)
}

pub fn cmd_train(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_args(args)?;
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| CliError::Usage("train requires --manifest".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("train requires --out".into()))?;
    let data = load_dataset(&manifest)?;
    let spec = cfg.model_spec(&data)?;
    let (_, samples) = load_samples(&manifest, &spec)?;
    let all: Vec<Sample> = samples.into_iter().map(|s| s.sample).collect();
    let (train, val) = split_train_val(all, cfg.train.val_fraction, cfg.train.seed);
    let outcome = train_model(&spec, &train, &val, &cfg.train)?;
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    save_checkpoint(&outcome.model, &out.join("model.ckpt"))?;
    let mut history = String::new();
    history.push_str(&format!("best_epoch = {}\n", outcome.best_epoch));
    history.push_str(&format!("best_val_ua = {}\n", outcome.best_val_ua));
    for e in &outcome.history {
        history.push_str(&format!(
            "epoch {} train_loss {} train_ua {} val_loss {} val_ua {}\n",
            e.epoch, e.train_loss, e.train_ua, e.val_loss, e.val_ua
        ));
    }
    write_file(&out.join("history.txt"), &history)?;
    println!(
        "trained {}: best epoch {} val_ua {}",
        spec.arch, outcome.best_epoch, outcome.best_val_ua
    );
    Ok(())
}

fn eval_checkpoint(
    model: &Model<f32>,
    manifest: &Path,
) -> Result<(f64, f64, Vec<usize>, Vec<usize>), CliError> {
    let (_, samples) = load_samples(manifest, model.spec())?;
    let labels: Vec<usize> = samples.iter().map(|s| s.sample.label).collect();
    let set: Vec<Sample> = samples.into_iter().map(|s| s.sample).collect();
    let (loss, preds) = evaluate(model, &set)?;
    let (ua, _) = unweighted_accuracy_lenient(&preds, &labels, model.spec().classes);
    Ok((ua, loss, preds, labels))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let model = load_checkpoint(&args.checkpoint)?;
    let (ua, loss, _, _) = eval_checkpoint(&model, &args.manifest)?;
    let report = format!("ua = {ua}\nloss = {loss}\n");
    if let Some(out) = &args.out {
        write_file(out, &report)?;
    }
    print!("{report}");
    Ok(())
}

pub fn cmd_cv(args: &CvArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_args(&args.run)?;
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| CliError::Usage("cv requires --manifest".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("cv requires --out".into()))?;
    let data = load_dataset(&manifest)?;
    let spec = cfg.model_spec(&data)?;
    let (_, samples) = load_samples(&manifest, &spec)?;
    let report = run_cv(&samples, &spec, &cfg.train, cfg.jobs)?;
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    for fold in &report.folds {
        write_file(
            &out.join(format!("fold_r{}_f{}.txt", fold.repeat, fold.fold)),
            &format_fold_report(fold),
        )?;
    }
    write_file(&out.join("summary.txt"), &format_cv_summary(&report))?;
    println!("aggregate_ua = {}", report.aggregate_ua);
    Ok(())
}

pub fn cmd_combine(args: &CombineArgs) -> Result<(), CliError> {
    let model_a = load_checkpoint(&args.checkpoint_a)?;
    let model_b = load_checkpoint(&args.checkpoint_b)?;
    let data = load_dataset(&args.manifest)?;
    let mut predictions = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for utt in &data {
        let feats_a = prepare_features(utt, model_a.spec())?;
        let feats_b = prepare_features(utt, model_b.spec())?;
        let pred_a = model_a.predict(&feats_a)?;
        let pred_b = model_b.predict(&feats_b)?;
        let combined = combine_scores(&pred_a.logits, &pred_b.logits)?;
        predictions.push(combined.argmax());
        labels.push(utt.record.label);
    }
    let (ua, _) = unweighted_accuracy_lenient(&predictions, &labels, NUM_CLASSES);
    let report = format!("ua = {ua}\n");
    if let Some(out) = &args.out {
        write_file(out, &report)?;
    }
    print!("{report}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Pool(a) => cmd_pool(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Combine(a) => cmd_combine(a),
    }
}
