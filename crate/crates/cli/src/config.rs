//! Run configuration: built-in defaults, then a `key = value` file, then
//! command-line overrides, each layer replacing the keys it names.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cryforge::{ModelConfig, ScheduleConfig, TrainConfig};

use crate::CliError;

pub const SEED_ENV: &str = "CRYFORGE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub num_samples: usize,
    /// Generated length in samples; the model's `audio_length` when unset.
    pub length: Option<usize>,
    pub fast_steps: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig {
                max_steps: 1000,
                checkpoint_every: 500,
                log_every: 10,
                ..TrainConfig::default()
            },
            data: None,
            out_dir: PathBuf::from("run"),
            num_samples: 1,
            length: None,
            fast_steps: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "residual_layers",
    "residual_channels",
    "skip_channels",
    "kernel_size",
    "dilation_cycle_length",
    "audio_length",
    "diffusion_steps",
    "beta_start",
    "beta_end",
    "learning_rate",
    "batch_size",
    "max_steps",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "checkpoint_every",
    "log_every",
    "seed",
    "data",
    "out_dir",
    "num_samples",
    "length",
    "fast_steps",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, CliError>
where
    T::Err: Display,
{
    match value {
        "" | "none" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl RunConfig {
    /// Defaults, with the seed taken from `CRYFORGE_SEED` when it is set.
    pub fn from_env() -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.train.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "residual_layers" => self.model.residual_layers = parse(key, v)?,
            "residual_channels" => self.model.residual_channels = parse(key, v)?,
            "skip_channels" => self.model.skip_channels = parse(key, v)?,
            "kernel_size" => self.model.kernel_size = parse(key, v)?,
            "dilation_cycle_length" => self.model.dilation_cycle_length = parse(key, v)?,
            "audio_length" => self.model.audio_length = parse(key, v)?,
            "diffusion_steps" => self.schedule.diffusion_steps = parse(key, v)?,
            "beta_start" => self.schedule.beta_start = parse(key, v)?,
            "beta_end" => self.schedule.beta_end = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "max_steps" => self.train.max_steps = parse(key, v)?,
            "adam_beta1" => self.train.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.train.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam_eps = parse(key, v)?,
            "checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,
            "log_every" => self.train.log_every = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "data" => self.data = optional(key, v)?,
            "out_dir" => self.out_dir = parse(key, v)?,
            "num_samples" => self.num_samples = parse(key, v)?,
            "length" => self.length = optional(key, v)?,
            "fast_steps" => self.fast_steps = optional(key, v)?,
            _ => {
                return Err(CliError::Usage(format!(
                    "unknown config key `{key}` (known keys: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies a config file. Blank lines and lines starting with `#` are
    /// ignored; a key may appear only once.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{origin}:{}: expected `key = value`, found `{line}`",
                    i + 1
                )));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Usage(format!("{origin}:{}: duplicate key `{key}`", i + 1)));
            }
            self.set(key, value)
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), CliError> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{pair}`")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`RunConfig::apply_text`] reads back.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        let (m, s, t) = (&self.model, &self.schedule, &self.train);
        let pairs: Vec<(&str, String)> = vec![
            ("residual_layers", m.residual_layers.to_string()),
            ("residual_channels", m.residual_channels.to_string()),
            ("skip_channels", m.skip_channels.to_string()),
            ("kernel_size", m.kernel_size.to_string()),
            ("dilation_cycle_length", m.dilation_cycle_length.to_string()),
            ("audio_length", m.audio_length.to_string()),
            ("diffusion_steps", s.diffusion_steps.to_string()),
            ("beta_start", s.beta_start.to_string()),
            ("beta_end", s.beta_end.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_steps", t.max_steps.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("log_every", t.log_every.to_string()),
            ("seed", t.seed.to_string()),
            (
                "data",
                self.data.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string()),
            ),
            ("out_dir", self.out_dir.display().to_string()),
            ("num_samples", self.num_samples.to_string()),
            ("length", opt(self.length)),
            ("fast_steps", opt(self.fast_steps)),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("fast_steps", "6").unwrap();
        cfg.set("data", "corpus/manifest.csv").unwrap();
        cfg.set("beta_end", "0.05").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text(), "dump").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.to_text().lines().count(), KEYS.len());
    }

    #[test]
    fn every_listed_key_is_settable() {
        let mut cfg = RunConfig::default();
        for key in KEYS {
            let value = match *key {
                "data" | "out_dir" => "x",
                "beta_start" | "beta_end" | "learning_rate" | "adam_beta1" | "adam_beta2"
                | "adam_eps" => "0.5",
                _ => "3",
            };
            cfg.set(key, value).unwrap();
        }
    }

    #[test]
    fn file_errors_name_the_line() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("# ok\nbatch_size = 4\nwarp = 9\n", "run.cfg").unwrap_err();
        assert!(err.to_string().contains("run.cfg:3"), "{err}");
        assert!(err.to_string().contains("unknown config key `warp`"));
        let err = cfg.apply_text("seed = 1\nseed = 2\n", "run.cfg").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        assert!(cfg.apply_text("batch_size 4\n", "run.cfg").is_err());
        assert!(cfg.apply_text("batch_size = four\n", "run.cfg").is_err());
        assert!(matches!(cfg.apply_overrides(&["noequals".into()]), Err(CliError::Usage(_))));
    }
}
