//! `dotted.key = value` run configuration.

use std::path::{Path, PathBuf};

use vidial::corpus::{BandSampling, SyntheticSpec};
use vidial::decode::{BeamConfig, RerankWeights};
use vidial::eval::AdvConfig;
use vidial::mi::{DiscConfig, DiscObjective};
use vidial::optim::OptimConfig;
use vidial::seqmodel::{Mode, ModelConfig};

use crate::CliError;

pub const SEED_ENV: &str = "VIDIAL_SEED";

/// Architecture knobs shared by every sequence model; mode, vocabulary and
/// visual width come from the data at run time.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelKnobs {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_src_len: usize,
    pub max_turns: usize,
    pub max_tgt_len: usize,
}

impl ModelKnobs {
    fn from_preset(c: ModelConfig) -> Self {
        Self {
            enc_layers: c.enc_layers,
            dec_layers: c.dec_layers,
            heads: c.heads,
            d_model: c.d_model,
            ffn_dim: c.ffn_dim,
            dropout: c.dropout,
            max_src_len: c.max_src_len,
            max_turns: c.max_turns,
            max_tgt_len: c.max_tgt_len,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "base" => Some(Self::from_preset(ModelConfig::base(Mode::Nv, 8, 0))),
            "tiny" => Some(Self::from_preset(ModelConfig::tiny(Mode::Nv, 8, 0))),
            _ => None,
        }
    }

    pub fn config(&self, mode: Mode, vocab_size: usize, d_visual: usize) -> ModelConfig {
        ModelConfig {
            mode,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            heads: self.heads,
            d_model: self.d_model,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            max_src_len: self.max_src_len,
            max_turns: self.max_turns,
            max_tgt_len: self.max_tgt_len,
            vocab_size,
            d_visual: if mode == Mode::Nv { 0 } else { d_visual },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscKnobs {
    pub enc_layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub hidden: usize,
    pub objective: DiscObjective,
    pub negatives: usize,
}

impl DiscKnobs {
    fn from_config(c: DiscConfig) -> Self {
        Self {
            enc_layers: c.enc_layers,
            heads: c.heads,
            d_model: c.d_model,
            ffn_dim: c.ffn_dim,
            dropout: c.dropout,
            max_len: c.max_len,
            hidden: c.hidden,
            objective: c.objective,
            negatives: c.negatives,
        }
    }

    pub fn config(&self, kind: Mode, vocab_size: usize, d_visual: usize) -> DiscConfig {
        DiscConfig {
            kind,
            enc_layers: self.enc_layers,
            heads: self.heads,
            d_model: self.d_model,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            max_len: self.max_len,
            vocab_size,
            d_visual,
            hidden: self.hidden,
            objective: self.objective,
            negatives: self.negatives,
        }
    }
}

/// Input locations; relative paths in a config file resolve against its directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataPaths {
    pub dir: Option<PathBuf>,
    pub episodes: Option<PathBuf>,
    pub coarse: Option<PathBuf>,
    pub objects: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataPaths,
    pub vocab_max_size: usize,
    pub vocab_min_freq: usize,
    pub model: ModelKnobs,
    pub optim: OptimConfig,
    pub beam: BeamConfig,
    pub lambdas: RerankWeights,
    pub disc: DiscKnobs,
    pub adv: AdvConfig,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataPaths::default(),
            vocab_max_size: 30000,
            vocab_min_freq: 1,
            model: ModelKnobs::preset("tiny").expect("preset exists"),
            optim: OptimConfig::default(),
            beam: BeamConfig::default(),
            lambdas: RerankWeights::default(),
            disc: DiscKnobs::from_config(DiscConfig::tiny(Mode::Cv, 8, 1)),
            adv: AdvConfig::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

fn bad(line: usize, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("config line {line}: {key}: {msg}"))
}

fn num<V: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<V, CliError>
where
    V::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(line, key, e))
}

fn flag(line: usize, key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(line, key, "expected true or false")),
    }
}

impl RunConfig {
    /// Parses config text. `base` anchors relative paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(i + 1, line, "expected `key = value`"))?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = RunConfig::default();
        if let Some((line, _, v)) = entries.iter().find(|(_, k, _)| k == "model.preset") {
            cfg.model = ModelKnobs::preset(v).ok_or_else(|| bad(*line, "model.preset", "expected base or tiny"))?;
        }
        let path = |v: &str| Some(base.join(v));
        for (line, key, v) in &entries {
            let (line, key, v) = (*line, key.as_str(), v.as_str());
            match key {
                "seed" => cfg.seed = num(line, key, v)?,
                "data.dir" => cfg.data.dir = path(v),
                "data.episodes" => cfg.data.episodes = path(v),
                "data.coarse" => cfg.data.coarse = path(v),
                "data.objects" => cfg.data.objects = path(v),
                "data.vocab" => cfg.data.vocab = path(v),
                "data.vocab_max_size" => cfg.vocab_max_size = num(line, key, v)?,
                "data.vocab_min_freq" => cfg.vocab_min_freq = num(line, key, v)?,
                "model.preset" => {}
                "model.enc_layers" => cfg.model.enc_layers = num(line, key, v)?,
                "model.dec_layers" => cfg.model.dec_layers = num(line, key, v)?,
                "model.heads" => cfg.model.heads = num(line, key, v)?,
                "model.d_model" => cfg.model.d_model = num(line, key, v)?,
                "model.ffn_dim" => cfg.model.ffn_dim = num(line, key, v)?,
                "model.dropout" => cfg.model.dropout = num(line, key, v)?,
                "model.max_src_len" => cfg.model.max_src_len = num(line, key, v)?,
                "model.max_turns" => cfg.model.max_turns = num(line, key, v)?,
                "model.max_tgt_len" => cfg.model.max_tgt_len = num(line, key, v)?,
                "optim.peak_lr" => cfg.optim.peak_lr = num(line, key, v)?,
                "optim.warmup" => cfg.optim.warmup = num(line, key, v)?,
                "optim.beta1" => cfg.optim.beta1 = num(line, key, v)?,
                "optim.beta2" => cfg.optim.beta2 = num(line, key, v)?,
                "optim.eps" => cfg.optim.eps = num(line, key, v)?,
                "optim.batch_size" => cfg.optim.batch_size = num(line, key, v)?,
                "optim.max_steps" => cfg.optim.max_steps = num(line, key, v)?,
                "optim.max_grad_norm" => cfg.optim.max_grad_norm = Some(num(line, key, v)?),
                "decode.beam_size" => cfg.beam.beam_size = num(line, key, v)?,
                "decode.nbest" => cfg.beam.nbest = num(line, key, v)?,
                "decode.max_tgt_len" => cfg.beam.max_tgt_len = Some(num(line, key, v)?),
                "mi.lambdas" => cfg.lambdas = v.parse().map_err(|e| bad(line, key, e))?,
                "disc.enc_layers" => cfg.disc.enc_layers = num(line, key, v)?,
                "disc.heads" => cfg.disc.heads = num(line, key, v)?,
                "disc.d_model" => cfg.disc.d_model = num(line, key, v)?,
                "disc.ffn_dim" => cfg.disc.ffn_dim = num(line, key, v)?,
                "disc.dropout" => cfg.disc.dropout = num(line, key, v)?,
                "disc.max_len" => cfg.disc.max_len = num(line, key, v)?,
                "disc.hidden" => cfg.disc.hidden = num(line, key, v)?,
                "disc.negatives" => cfg.disc.negatives = num(line, key, v)?,
                "disc.objective" => {
                    cfg.disc.objective = match v {
                        "bce" => DiscObjective::Bce,
                        "paper_literal" => DiscObjective::PaperLiteral,
                        _ => return Err(bad(line, key, "expected bce or paper_literal")),
                    }
                }
                "adv.evidence" => cfg.adv.evidence = v.parse().map_err(|e: String| bad(line, key, e))?,
                "adv.layers" => cfg.adv.layers = num(line, key, v)?,
                "adv.heads" => cfg.adv.heads = num(line, key, v)?,
                "adv.d_model" => cfg.adv.d_model = num(line, key, v)?,
                "adv.ffn_dim" => cfg.adv.ffn_dim = num(line, key, v)?,
                "adv.max_turns" => cfg.adv.max_turns = num(line, key, v)?,
                "adv.peak_lr" => cfg.adv.optim.peak_lr = num(line, key, v)?,
                "adv.warmup" => cfg.adv.optim.warmup = num(line, key, v)?,
                "adv.batch_size" => cfg.adv.optim.batch_size = num(line, key, v)?,
                "adv.max_steps" => cfg.adv.optim.max_steps = num(line, key, v)?,
                "synth.episodes" => cfg.synth.num_episodes = num(line, key, v)?,
                "synth.turns_min" => cfg.synth.turns_min = num(line, key, v)?,
                "synth.turns_max" => cfg.synth.turns_max = num(line, key, v)?,
                "synth.vocab_size" => cfg.synth.vocab_size = num(line, key, v)?,
                "synth.classes" => cfg.synth.num_classes = num(line, key, v)?,
                "synth.coarse_dim" => cfg.synth.coarse_dim = num(line, key, v)?,
                "synth.objects_per_image" => cfg.synth.objects_per_image = num(line, key, v)?,
                "synth.noise_scale" => cfg.synth.noise_scale = num(line, key, v)?,
                "synth.tokens_per_turn" => cfg.synth.tokens_per_turn = num(line, key, v)?,
                "synth.copy_previous" => cfg.synth.copy_previous = flag(line, key, v)?,
                "synth.band_sampling" => {
                    cfg.synth.band_sampling = match v {
                        "random" => BandSampling::Random,
                        "fixed" => BandSampling::Fixed,
                        _ => return Err(bad(line, key, "expected random or fixed")),
                    }
                }
                _ => return Err(bad(line, key, "unknown key")),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Seed precedence: command-line flag, then `VIDIAL_SEED`, then the config file.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<(), CliError> {
        if let Some(s) = env {
            self.seed = s.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an integer")))?;
        }
        if let Some(s) = flag {
            self.seed = s;
        }
        self.optim.seed = self.seed;
        self.synth.seed = self.seed;
        self.adv.optim.seed = self.seed;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let text = "# run\nseed = 4\nmodel.preset = base   # full size\nmodel.heads = 4\noptim.warmup=10\n\
                    data.episodes = d/ep.jsonl\nmi.lambdas = 0.6,0.2,0.2\n";
        let cfg = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.model.d_model, 512);
        assert_eq!(cfg.model.heads, 4);
        assert_eq!(cfg.optim.warmup, 10);
        assert_eq!(cfg.data.episodes, Some(PathBuf::from("/cfg/d/ep.jsonl")));
        assert_eq!(cfg.lambdas, RerankWeights::new(0.6, 0.2, 0.2).unwrap());
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.optim.warmup, 6000);
        assert_eq!(cfg.beam.nbest, 5);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        for text in ["model.colour = red", "seed", "seed = x", "mi.lambdas = 0.5,0.6,0.1", "model.preset = huge"] {
            assert!(matches!(RunConfig::parse(text, Path::new(".")), Err(CliError::Usage(_))), "{text}");
        }
    }

    #[test]
    fn seed_precedence() {
        let mut cfg = RunConfig::parse("seed = 1", Path::new(".")).unwrap();
        cfg.resolve_seed(None, Some("2")).unwrap();
        assert_eq!(cfg.seed, 2);
        cfg.resolve_seed(Some(3), Some("2")).unwrap();
        assert_eq!((cfg.seed, cfg.optim.seed), (3, 3));
    }
}
