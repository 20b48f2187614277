//! Command-line driver: `synth`, `train`, `generate` and `eval`.

pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use vidial::checkpoint::{load_discriminator, load_seq2seq, save_discriminator, save_seq2seq, Component};
use vidial::corpus::synth::{COARSE_FILE, EPISODES_FILE, OBJECTS_FILE, VOCAB_FILE};
use vidial::corpus::{
    build_dataset, build_vocab, generate_synthetic, load_coarse_features, load_object_features, read_episode_records,
    write_episode_records, CoarseFeatureStore, Dataset, EpisodeRecord, ObjectFeatureStore, Vocabulary,
};
use vidial::decode::{generate_split, write_responses, MiConfig, RerankWeights};
use vidial::eval::{adversarial_eval, evaluate_all, read_responses};
use vidial::mi::{train_backward, train_discriminator, BackwardModel};
use vidial::seqmodel::{train_forward, FeatureStores, Mode};
use vidial::{CheckpointError, CorpusError, DecodeError, EvalError, ModelError, TrainError};

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    /// 1 for usage and validation failures, 2 for data and runtime failures.
    pub fn exit_code(&self) -> i32 {
        let invalid_config = |e: &ModelError| matches!(e, ModelError::InvalidConfig(_));
        match self {
            CliError::Usage(_) | CliError::Corpus(CorpusError::SpecInvalid(_)) => 1,
            CliError::Decode(DecodeError::InvalidWeights(_) | DecodeError::InvalidBeam(_)) => 1,
            CliError::Model(e) | CliError::Train(TrainError::Model(e)) if invalid_config(e) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vidial", version, about = "Visual-context dialog generation")]
pub struct Cli {
    /// Run configuration (`dotted.key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides VIDIAL_SEED and the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Train a forward model, backward model or discriminator.
    Train(TrainArgs),
    /// Decode responses for every context of an episodes file.
    Generate(GenerateArgs),
    /// Score a responses file.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub turns_min: Option<usize>,
    #[arg(long)]
    pub turns_max: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub coarse_dim: Option<usize>,
    /// Also write the last K episodes to test.jsonl and the rest to train.jsonl.
    #[arg(long, value_name = "K")]
    pub test_episodes: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Forward,
    Backward,
    Disc,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub target: Target,
    /// Fusion mode (forward) or evidence kind (disc); the backward model is always NV.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Directory holding episodes.jsonl, the feature files and vocab.txt.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint path; the loss curve goes to `<out>.loss`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Episodes to decode; defaults to the data directory's episodes file.
    #[arg(long)]
    pub episodes: Option<PathBuf>,
    #[arg(long)]
    pub nbest: Option<usize>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    #[arg(long, requires_all = ["backward_ckpt", "disc_ckpt"])]
    pub mi: bool,
    #[arg(long)]
    pub backward_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub disc_ckpt: Option<PathBuf>,
    #[arg(long, value_name = "A,B,C")]
    pub lambdas: Option<RerankWeights>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub responses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires_all = ["train_split", "test_split"])]
    pub adversarial: bool,
    #[arg(long)]
    pub train_split: Option<PathBuf>,
    #[arg(long)]
    pub test_split: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Visual evidence for the adversarial evaluator: cv or fv.
    #[arg(long)]
    pub evidence: Option<Mode>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(config::SEED_ENV).ok();
    cfg.resolve_seed(cli.seed, env.as_deref())?;
    match cli.command {
        Command::Synth(a) => cmd_synth(&cfg, &a),
        Command::Train(a) => cmd_train(&cfg, &a),
        Command::Generate(a) => cmd_generate(&cfg, &a),
        Command::Eval(a) => cmd_eval(&cfg, &a),
    }
}

pub fn cmd_synth(cfg: &RunConfig, a: &SynthArgs) -> Result<(), CliError> {
    let mut spec = cfg.synth.clone();
    let overrides = [
        (&mut spec.num_episodes, a.episodes),
        (&mut spec.turns_min, a.turns_min),
        (&mut spec.turns_max, a.turns_max),
        (&mut spec.vocab_size, a.vocab_size),
        (&mut spec.num_classes, a.classes),
        (&mut spec.coarse_dim, a.coarse_dim),
    ];
    for (field, value) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    let corpus = generate_synthetic(&spec)?;
    corpus.write_to(&a.out)?;
    if let Some(k) = a.test_episodes {
        if k == 0 || k >= corpus.records.len() {
            return Err(CliError::Usage(format!("--test-episodes must be in 1..{}", corpus.records.len())));
        }
        let cut = corpus.records.len() - k;
        write_episode_records(&a.out.join("train.jsonl"), &corpus.records[..cut])?;
        write_episode_records(&a.out.join("test.jsonl"), &corpus.records[cut..])?;
    }
    eprintln!("wrote {} episodes to {}", corpus.records.len(), a.out.display());
    Ok(())
}

/// Resolved input files: config entries win over the `--data` directory.
struct Inputs {
    episodes: Option<PathBuf>,
    coarse: Option<PathBuf>,
    objects: Option<PathBuf>,
    vocab: Option<PathBuf>,
}

impl Inputs {
    fn resolve(cfg: &RunConfig, data: Option<&Path>) -> Self {
        let dir = data.map(Path::to_path_buf).or_else(|| cfg.data.dir.clone());
        let pick = |explicit: &Option<PathBuf>, name: &str| {
            explicit.clone().or_else(|| dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists()))
        };
        Self {
            episodes: pick(&cfg.data.episodes, EPISODES_FILE),
            coarse: pick(&cfg.data.coarse, COARSE_FILE),
            objects: pick(&cfg.data.objects, OBJECTS_FILE),
            vocab: pick(&cfg.data.vocab, VOCAB_FILE),
        }
    }

    fn episodes(&self) -> Result<&Path, CliError> {
        self.episodes
            .as_deref()
            .ok_or_else(|| CliError::Usage("no episodes file: pass --data or set data.episodes".into()))
    }

    fn stores(&self) -> Result<(Option<CoarseFeatureStore>, Option<ObjectFeatureStore>), CliError> {
        let coarse = self.coarse.as_deref().map(load_coarse_features).transpose()?;
        let objects = self.objects.as_deref().map(load_object_features).transpose()?;
        Ok((coarse, objects))
    }

    fn vocabulary(&self, cfg: &RunConfig, records: &[EpisodeRecord]) -> Result<Vocabulary, CliError> {
        if let Some(p) = &self.vocab {
            return Ok(Vocabulary::load(p)?);
        }
        if cfg.vocab_max_size <= vidial::corpus::vocab::NUM_SPECIAL {
            return Err(CliError::Usage("data.vocab_max_size must exceed the special tokens".into()));
        }
        let texts: Vec<&str> = records.iter().flat_map(|r| r.turns.iter().map(|t| t.text.as_str())).collect();
        Ok(build_vocab(&texts, cfg.vocab_max_size, cfg.vocab_min_freq))
    }
}

fn stores_of<'a>(coarse: &'a Option<CoarseFeatureStore>, objects: &'a Option<ObjectFeatureStore>) -> FeatureStores<'a> {
    FeatureStores { coarse: coarse.as_ref(), objects: objects.as_ref() }
}

fn visual_dim(mode: Mode, stores: FeatureStores<'_>) -> Result<usize, CliError> {
    let missing = |what: &str| CliError::Model(ModelError::ModeMismatch(format!("{mode} mode needs {what} features")));
    match mode {
        Mode::Nv => Ok(0),
        Mode::Cv => Ok(stores.coarse.ok_or_else(|| missing("coarse"))?.dim()),
        Mode::Fv => Ok(stores.objects.ok_or_else(|| missing("object"))?.dim()),
    }
}

fn write_loss_curve(out: &Path, curve: &[f64]) -> Result<(), CliError> {
    let mut path = out.as_os_str().to_owned();
    path.push(".loss");
    let path = PathBuf::from(path);
    let text: String = curve.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, text).map_err(io_err(&path))
}

pub fn cmd_train(cfg: &RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    let inputs = Inputs::resolve(cfg, a.data.as_deref());
    let records = read_episode_records(inputs.episodes()?)?;
    let vocab = inputs.vocabulary(cfg, &records)?;
    let (coarse, objects) = inputs.stores()?;
    let stores = stores_of(&coarse, &objects);
    let dataset = build_dataset(&records, &vocab, stores.coarse, stores.objects)?;
    let curve = match a.target {
        Target::Forward => {
            let mode = a.mode.ok_or_else(|| CliError::Usage("--target forward needs --mode".into()))?;
            let mcfg = cfg.model.config(mode, vocab.len(), visual_dim(mode, stores)?);
            let (model, curve) = train_forward::<f32>(&dataset, stores, mcfg, &cfg.optim)?;
            save_seq2seq(&a.out, Component::Forward, &model, &vocab)?;
            curve
        }
        Target::Backward => {
            if a.mode.is_some_and(|m| m != Mode::Nv) {
                return Err(CliError::Usage("the backward model is text-only; use --mode nv or omit it".into()));
            }
            let mcfg = cfg.model.config(Mode::Nv, vocab.len(), 0);
            let (model, curve) = train_backward::<f32>(&dataset, mcfg, &cfg.optim)?;
            save_seq2seq(&a.out, Component::Backward, &model.model, &vocab)?;
            curve
        }
        Target::Disc => {
            let kind = match a.mode {
                Some(m @ (Mode::Cv | Mode::Fv)) => m,
                _ => return Err(CliError::Usage("--target disc needs --mode cv or --mode fv".into())),
            };
            let dcfg = cfg.disc.config(kind, vocab.len(), visual_dim(kind, stores)?);
            let (disc, curve) = train_discriminator::<f32>(&dataset, stores, dcfg, &cfg.optim)?;
            save_discriminator(&a.out, &disc, &vocab)?;
            curve
        }
    };
    write_loss_curve(&a.out, &curve)?;
    eprintln!("trained {} steps, final loss {:.4}", curve.len(), curve.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn mode_mismatch(e: CheckpointError) -> CliError {
    match e {
        CheckpointError::VersionMismatch(m) if m.contains("mode") => CliError::Decode(DecodeError::ModeMismatch(m)),
        other => other.into(),
    }
}

pub fn cmd_generate(cfg: &RunConfig, a: &GenerateArgs) -> Result<(), CliError> {
    let weights = a.lambdas.unwrap_or(cfg.lambdas);
    let mut beam = cfg.beam.clone();
    beam.nbest = a.nbest.unwrap_or(beam.nbest);
    beam.beam_size = a.beam_size.unwrap_or(beam.beam_size);
    beam.validate()?;

    let (model, vocab) = load_seq2seq::<f32>(&a.ckpt, Component::Forward, a.mode).map_err(mode_mismatch)?;
    let mode = model.config().mode;
    let inputs = Inputs::resolve(cfg, a.data.as_deref());
    let episodes = match &a.episodes {
        Some(p) => p.as_path(),
        None => inputs.episodes()?,
    };
    let records = read_episode_records(episodes)?;
    let (coarse, objects) = inputs.stores()?;
    let stores = stores_of(&coarse, &objects);
    let dataset = build_dataset(&records, &vocab, stores.coarse, stores.objects)?;

    let mi_models = if a.mi {
        let need = |p: &Option<PathBuf>, flag: &str| {
            p.clone().ok_or_else(|| CliError::Usage(format!("--mi needs {flag}")))
        };
        let (backward, _) = load_seq2seq::<f32>(&need(&a.backward_ckpt, "--backward-ckpt")?, Component::Backward, None)?;
        let (disc, _) = load_discriminator::<f32>(&need(&a.disc_ckpt, "--disc-ckpt")?, None)?;
        Some((BackwardModel::new(backward)?, disc))
    } else {
        None
    };
    let mi = mi_models.as_ref().map(|(backward, disc)| MiConfig { backward, disc, weights });
    let records = generate_split(&model, &dataset, &vocab, stores, mode, mi.as_ref(), &beam)?;
    write_responses(&a.out, &records)?;
    eprintln!("wrote {} responses to {}", records.len(), a.out.display());
    Ok(())
}

fn load_split(path: &Path, vocab: &Vocabulary, stores: FeatureStores<'_>) -> Result<Dataset, CliError> {
    Ok(build_dataset(&read_episode_records(path)?, vocab, stores.coarse, stores.objects)?)
}

pub fn cmd_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<(), CliError> {
    let responses = read_responses(&a.responses)?;
    let mut report = evaluate_all(&responses)?;
    if a.adversarial {
        let (train_path, test_path) = match (&a.train_split, &a.test_split) {
            (Some(tr), Some(te)) => (tr, te),
            _ => return Err(CliError::Usage("--adversarial needs --train-split and --test-split".into())),
        };
        let mut adv = cfg.adv.clone();
        if let Some(e) = a.evidence {
            if e == Mode::Nv {
                return Err(CliError::Usage("--evidence must be cv or fv".into()));
            }
            adv.evidence = e;
        }
        let inputs = Inputs::resolve(cfg, a.data.as_deref());
        let (coarse, objects) = inputs.stores()?;
        let stores = stores_of(&coarse, &objects);
        let mut all = read_episode_records(train_path)?;
        all.extend(read_episode_records(test_path)?);
        let vocab = inputs.vocabulary(cfg, &all)?;
        let train = load_split(train_path, &vocab, stores)?;
        let test = load_split(test_path, &vocab, stores)?;
        let outcome = adversarial_eval::<f32>(&train, &test, &responses, &vocab, stores, &adv, cfg.seed)?;
        report.adv_success = Some(outcome.success);
    }
    std::fs::write(&a.out, report.to_json()).map_err(io_err(&a.out))?;
    Ok(())
}
