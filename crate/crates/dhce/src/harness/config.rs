//! Training configuration: a flat key=value file where every key is
//! also a CLI flag of the same name.

use std::path::PathBuf;

use crate::ehr::{ComorbidityRule, DataError, SynthConfig};
use crate::model::{HyperParams, OutputActivation};
use crate::numkit::AdamConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderConfig {
    Hashing { dim: usize, seed: u64 },
    Remote {
        endpoint: String,
        timeout_ms: u64,
        retries: u32,
    },
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::Hashing { dim: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// JSONL dataset path; when absent the synthetic generator runs.
    pub data: Option<PathBuf>,
    /// Optional sidecar vocabulary file (one code per line).
    pub vocab: Option<PathBuf>,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub hp: HyperParams,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub checkpoint: Option<PathBuf>,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: None,
            vocab: None,
            synth: SynthConfig::default(),
            split: SplitSpec::default(),
            hp: HyperParams::default(),
            adam: AdamConfig::default(),
            epochs: 30,
            batch_size: 16,
            seed: 0,
            encoder: EncoderConfig::default(),
            checkpoint: None,
            patience: 10,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, DataError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| {
        DataError::InvalidConfig(format!("key {key}: cannot parse {value:?}: {e}"))
    })
}

/// Rules are written `trigger>induced:prob`, comma-separated, e.g.
/// `3>17:0.9,5>8:0.8`.
pub fn parse_rules(value: &str) -> Result<Vec<ComorbidityRule>, DataError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            let bad = || {
                DataError::InvalidConfig(format!(
                    "rule {part:?} must look like trigger>induced:prob"
                ))
            };
            let (pair, prob) = part.split_once(':').ok_or_else(bad)?;
            let (trigger, induced) = pair.split_once('>').ok_or_else(bad)?;
            Ok(ComorbidityRule {
                trigger: trigger.trim().parse().map_err(|_| bad())?,
                induced: induced.trim().parse().map_err(|_| bad())?,
                probability: prob.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn rules_to_string(rules: &[ComorbidityRule]) -> String {
    rules
        .iter()
        .map(|r| format!("{}>{}:{}", r.trigger, r.induced, r.probability))
        .collect::<Vec<_>>()
        .join(",")
}

impl TrainConfig {
    /// Applies one key=value assignment. File lines and CLI flags both
    /// funnel through here so they cannot diverge.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), DataError> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "vocab" => self.vocab = Some(PathBuf::from(value)),
            "n_patients" => self.synth.n_patients = parse(key, value)?,
            "vocab_size" => self.synth.vocab_size = parse(key, value)?,
            "visits_min" => self.synth.visits_per_patient.0 = parse(key, value)?,
            "visits_max" => self.synth.visits_per_patient.1 = parse(key, value)?,
            "codes_min" => self.synth.codes_per_visit.0 = parse(key, value)?,
            "codes_max" => self.synth.codes_per_visit.1 = parse(key, value)?,
            "chronic_persistence" => self.synth.chronic_persistence = parse(key, value)?,
            "rules" => self.synth.rules = parse_rules(value)?,
            "event_noise" => self.synth.event_noise = parse(key, value)?,
            "synth_seed" => self.synth.seed = parse(key, value)?,
            "train_ratio" => self.split.train = parse(key, value)?,
            "val_ratio" => self.split.val = parse(key, value)?,
            "test_ratio" => self.split.test = parse(key, value)?,
            "split_seed" => self.split.seed = parse(key, value)?,
            "d" => self.hp.d = parse(key, value)?,
            "output_activation" => {
                self.hp.output_activation = value
                    .parse::<OutputActivation>()
                    .map_err(DataError::InvalidConfig)?
            }
            "eps_clip" => self.hp.eps_clip = parse(key, value)?,
            "chronic_window" => self.hp.chronic_window = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps_adam" => self.adam.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "encoder" => match value {
                "hashing" => {
                    if !matches!(self.encoder, EncoderConfig::Hashing { .. }) {
                        self.encoder = EncoderConfig::default();
                    }
                }
                "remote" => {
                    if !matches!(self.encoder, EncoderConfig::Remote { .. }) {
                        self.encoder = EncoderConfig::Remote {
                            endpoint: String::new(),
                            timeout_ms: 5000,
                            retries: 2,
                        };
                    }
                }
                other => {
                    return Err(DataError::InvalidConfig(format!(
                        "encoder must be hashing or remote, got {other:?}"
                    )))
                }
            },
            "hashing_dim" => {
                let dim = parse(key, value)?;
                match &mut self.encoder {
                    EncoderConfig::Hashing { dim: d, .. } => *d = dim,
                    _ => self.encoder = EncoderConfig::Hashing { dim, seed: 0 },
                }
            }
            "hashing_seed" => {
                let seed = parse(key, value)?;
                match &mut self.encoder {
                    EncoderConfig::Hashing { seed: s, .. } => *s = seed,
                    _ => self.encoder = EncoderConfig::Hashing { dim: 64, seed },
                }
            }
            "remote_endpoint" => {
                let endpoint = value.to_string();
                match &mut self.encoder {
                    EncoderConfig::Remote { endpoint: e, .. } => *e = endpoint,
                    _ => {
                        self.encoder = EncoderConfig::Remote {
                            endpoint,
                            timeout_ms: 5000,
                            retries: 2,
                        }
                    }
                }
            }
            "remote_timeout_ms" => {
                let ms = parse(key, value)?;
                if let EncoderConfig::Remote { timeout_ms, .. } = &mut self.encoder {
                    *timeout_ms = ms;
                } else {
                    return Err(DataError::InvalidConfig(
                        "remote_timeout_ms requires encoder=remote".into(),
                    ));
                }
            }
            "remote_retries" => {
                let n = parse(key, value)?;
                if let EncoderConfig::Remote { retries, .. } = &mut self.encoder {
                    *retries = n;
                } else {
                    return Err(DataError::InvalidConfig(
                        "remote_retries requires encoder=remote".into(),
                    ));
                }
            }
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "patience" => self.patience = parse(key, value)?,
            other => {
                return Err(DataError::InvalidConfig(format!(
                    "unknown configuration key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parses a flat key=value file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<(), DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DataError::InvalidConfig(format!("line {}: expected key=value", no + 1))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.epochs < 1 {
            return Err(DataError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(DataError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.adam.lr <= 0.0 {
            return Err(DataError::InvalidConfig("lr must be positive".into()));
        }
        self.hp
            .validate()
            .map_err(|e| DataError::InvalidConfig(e.to_string()))?;
        if let EncoderConfig::Remote { endpoint, .. } = &self.encoder {
            if endpoint.is_empty() {
                return Err(DataError::InvalidConfig(
                    "encoder=remote requires remote_endpoint".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn file_and_overrides_compose() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "epochs = 5  # short run").unwrap();
        writeln!(f, "lr=0.02").unwrap();
        writeln!(f, "rules=1>2:0.9,3>4:0.5").unwrap();
        let mut cfg = TrainConfig::default();
        cfg.apply_file(f.path()).unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.adam.lr, 0.02);
        assert_eq!(cfg.synth.rules.len(), 2);
        cfg.apply_kv("epochs", "9").unwrap();
        assert_eq!(cfg.epochs, 9);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.apply_kv("learning_rate", "0.1").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.apply_kv("epochs", "three").is_err());
        assert!(cfg.apply_kv("output_activation", "relu").is_err());
        cfg.apply_kv("epochs", "0").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rules_round_trip_through_text() {
        let rules = parse_rules("3>17:0.9,5>8:0.25").unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].trigger, 3);
        assert_eq!(rules[0].induced, 17);
        assert_eq!(parse_rules(&rules_to_string(&rules)).unwrap(), rules);
        assert!(parse_rules("nonsense").is_err());
    }
}
