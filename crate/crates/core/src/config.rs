//! Run configuration: `key = value` lines, `#` comments, blank lines ignored.
//! Layers apply in order defaults < file < `REPMIX_<KEY>` environment
//! variables < command-line overrides; unknown keys are rejected at every layer.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::corruptions::{CorruptionKind, CorruptionPolicy, DEFAULT_UNSEEN};
use crate::dataset::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{BackboneSpec, InsertionPoint};
use crate::seeding::{derive_seed, STREAM_INIT, STREAM_TRAIN};
use crate::training::{AdamConfig, TrainConfig};

/// Environment variable naming the directory relative output paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "REPMIX_OUTPUT_ROOT";
pub const ENV_PREFIX: &str = "REPMIX_";

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed; every random stream derives from it"),
    ("backbone", "tiny", "tiny | resnet50"),
    ("embed_dim", "256", "embedding width D"),
    ("insertion_point", "after_fc_1", "mixing seam: pixel_pre_aug, pixel_post_aug, after_pool_K, after_gap, after_fc_K"),
    ("loss", "compound", "compound | cross_entropy"),
    ("gating", "logit", "logit | probability"),
    ("detection_rule", "argmax", "argmax | detection_head"),
    ("max_epochs", "30", "epoch budget"),
    ("learning_rate", "1e-4", "initial Adam step size"),
    ("lr_decay_gamma", "0.85", "step decay factor"),
    ("decay_every", "1", "epochs per decay step"),
    ("beta", "0.4", "Beta/Dirichlet concentration of the mixing weights"),
    ("batch_size", "16", "pairs per optimiser step"),
    ("early_stop_patience", "5", "epochs without validation improvement before stopping"),
    ("mix_samples", "2", "images mixed per example"),
    ("mixing", "true", "false trains each sampled image unmixed"),
    ("pairs_per_epoch", "auto", "pairs per epoch; auto = half the training split"),
    ("adam_beta1", "0.9", "first-moment decay"),
    ("adam_beta2", "0.999", "second-moment decay"),
    ("adam_eps", "1e-8", "denominator epsilon"),
    ("resize", "256", "square resize before cropping"),
    ("crop", "224", "crop size; also the network input size"),
    ("flip_probability", "0.5", "horizontal flip probability"),
    ("corruption_probability", "0.95", "probability a training image gets a seen corruption"),
    ("unseen_corruptions", "impulse_noise,gaussian_blur,saturate", "kinds withheld from training"),
];

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if default_of(key).is_none() {
            return Err(Error::InvalidArgument(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got `{pair}`")))?;
        self.set(k.trim(), v)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text)
    }

    /// `REPMIX_<KEY>` variables (key upper-cased); the output-root variable is skipped.
    pub fn merge_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != OUTPUT_ROOT_ENV)
            .collect();
        found.sort();
        for (k, v) in found {
            self.set(&k[ENV_PREFIX.len()..].to_ascii_lowercase(), &v)?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad value `{}` for `{key}`", self.get(key))))
    }

    fn parse_enum<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        serde_json::from_value(serde_json::Value::String(self.get(key).to_string()))
            .map_err(|_| Error::InvalidArgument(format!("bad value `{}` for `{key}`", self.get(key))))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn corruption_policy(&self) -> Result<CorruptionPolicy> {
        let unseen: Vec<CorruptionKind> = match self.get("unseen_corruptions") {
            "" | "none" => Vec::new(),
            list => list.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
        };
        let seen = CorruptionKind::ALL.into_iter().filter(|k| !unseen.contains(k)).collect();
        CorruptionPolicy::new(seen, unseen, self.parse("corruption_probability")?)
    }

    pub fn augment(&self) -> Result<AugmentConfig> {
        let cfg = AugmentConfig {
            resize: self.parse("resize")?,
            crop: self.parse("crop")?,
            flip_probability: self.parse("flip_probability")?,
            random_crop: true,
            corruptions: self.corruption_policy()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training settings; the training seed is the master seed's training stream.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            max_epochs: self.parse("max_epochs")?,
            learning_rate: self.parse("learning_rate")?,
            lr_decay_gamma: self.parse("lr_decay_gamma")?,
            decay_every: self.parse("decay_every")?,
            beta: self.parse("beta")?,
            batch_size: self.parse("batch_size")?,
            early_stop_patience: self.parse("early_stop_patience")?,
            seed: derive_seed(self.seed()?, STREAM_TRAIN),
            mix_samples: self.parse("mix_samples")?,
            mixing: self.parse("mixing")?,
            pairs_per_epoch: match self.get("pairs_per_epoch") {
                "auto" => None,
                _ => Some(self.parse("pairs_per_epoch")?),
            },
            adam: AdamConfig {
                beta1: self.parse("adam_beta1")?,
                beta2: self.parse("adam_beta2")?,
                eps: self.parse("adam_eps")?,
            },
            augment: self.augment()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, class_names: Vec<String>, real_index: usize) -> Result<ModelConfig> {
        let embed_dim = self.parse("embed_dim")?;
        let backbone = match self.get("backbone") {
            "tiny" => BackboneSpec::tiny(embed_dim),
            "resnet50" => BackboneSpec::Resnet50 { embed_dim },
            other => return Err(Error::InvalidArgument(format!("unknown backbone `{other}`"))),
        };
        let cfg = ModelConfig {
            backbone,
            insertion_point: self.parse::<InsertionPoint>("insertion_point")?,
            class_names,
            real_index,
            beta: self.parse("beta")?,
            input_size: self.parse("crop")?,
            gating: self.parse_enum("gating")?,
            loss: self.parse_enum("loss")?,
            detection_rule: self.parse_enum("detection_rule")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model initialisation seed.
    pub fn init_seed(&self) -> Result<u64> {
        Ok(derive_seed(self.seed()?, STREAM_INIT))
    }

    /// Every key in sorted order; loading it back reproduces this config.
    pub fn resolved(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Default unseen kinds as a config value.
pub fn default_unseen_value() -> String {
    DEFAULT_UNSEEN.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_training_defaults() {
        let rc = RunConfig::default();
        let tc = rc.train_config().unwrap();
        let d = TrainConfig::default();
        assert_eq!(
            (tc.max_epochs, tc.learning_rate, tc.lr_decay_gamma, tc.beta, tc.early_stop_patience),
            (d.max_epochs, d.learning_rate, d.lr_decay_gamma, d.beta, d.early_stop_patience)
        );
        assert_eq!(tc.augment, AugmentConfig::default());
        assert_eq!(rc.get("unseen_corruptions"), default_unseen_value());
    }

    #[test]
    fn precedence_file_env_cli() {
        let mut rc = RunConfig::default();
        rc.merge_text("# c\nmax_epochs = 4\nbeta=0.3\n\nlearning_rate = 1e-3").unwrap();
        rc.merge_env([
            ("REPMIX_BETA".to_string(), "0.2".to_string()),
            ("REPMIX_OUTPUT_ROOT".to_string(), "/tmp".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        rc.set_pair("learning_rate=5e-4").unwrap();
        assert_eq!(rc.get("max_epochs"), "4");
        assert_eq!(rc.get("beta"), "0.2");
        assert_eq!(rc.get("learning_rate"), "5e-4");
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut rc = RunConfig::default();
        assert!(rc.merge_text("max_epoch = 3").is_err());
        assert!(rc.merge_env([("REPMIX_FOO".to_string(), "1".to_string())]).is_err());
        assert!(rc.set_pair("novalue").is_err());
    }

    #[test]
    fn resolved_round_trips() {
        let mut rc = RunConfig::default();
        rc.set("seed", "9").unwrap();
        rc.set("insertion_point", "after_gap").unwrap();
        let mut back = RunConfig::default();
        back.merge_text(&rc.resolved()).unwrap();
        assert_eq!(back, rc);
        let mc = back.model_config(vec!["real".into(), "g".into()], 0).unwrap();
        assert_eq!(mc.insertion_point, InsertionPoint::AfterGap);
    }

    #[test]
    fn bad_values_rejected() {
        let mut rc = RunConfig::default();
        rc.set("gating", "sideways").unwrap();
        assert!(rc.model_config(vec!["real".into(), "g".into()], 0).is_err());
        rc.set("gating", "probability").unwrap();
        rc.set("unseen_corruptions", "fog").unwrap();
        assert!(rc.corruption_policy().is_err());
    }
}
