//! Run configuration read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use covfuse::backbone::BackboneConfig;
use covfuse::data::{DatasetSchema, SplitSpec};
use covfuse::evaluation::EvalProtocol;
use covfuse::fusion::FusionConfig;
use covfuse::model::{ModelConfig, ModelShape};
use covfuse::screening::ScreeningConfig;
use covfuse::tokenizer::PatchConfig;
use covfuse::training::TrainConfig;

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    /// Settings for `pretrain`; falls back to `train`.
    #[serde(default)]
    pub pretrain: Option<TrainConfig>,
    #[serde(default)]
    pub eval: EvalProtocol,
    #[serde(default)]
    pub screening: ScreeningConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub schema: DatasetSchema,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "one")]
    pub train_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub patch: PatchConfig,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    /// Backbone checkpoint for `finetune`; defaults to
    /// `<output_dir>/pretrained.ckpt`.
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
}

/// Parses TOML, reporting the key path of the first offending field.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, Failure> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().message().trim().to_string();
        if path == "." {
            Failure::Config(inner)
        } else {
            Failure::Config(format!("{path}: {inner}"))
        }
    })
}

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|f| match f {
        Failure::Config(msg) => Failure::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let mut cfg: RunConfig = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.dataset.path);
        rebase(base, &mut cfg.output_dir);
        if let Some(p) = &mut cfg.model.pretrained {
            rebase(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.train.validate()?;
        if let Some(p) = &self.pretrain {
            p.validate()?;
        }
        self.dataset.split.validate()?;
        if self.dataset.train_stride == 0 {
            return Err(Failure::Config("dataset.train_stride must be at least 1".into()));
        }
        self.dataset.schema.roles()?;
        covfuse::data::parse_frequency(&self.dataset.schema.frequency)?;
        self.model_config(ModelShape::new(1, 0, 0), true).validate()?;
        Ok(())
    }

    pub fn model_config(&self, shape: ModelShape, fusion: bool) -> ModelConfig {
        ModelConfig {
            lookback: self.eval.lookback,
            horizon: self.eval.horizon,
            shape,
            patch: self.model.patch,
            backbone: self.model.backbone.clone(),
            fusion: fusion.then(|| self.model.fusion.clone()),
        }
    }

    pub fn pretrain_config(&self) -> &TrainConfig {
        self.pretrain.as_ref().unwrap_or(&self.train)
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.model
            .pretrained
            .clone()
            .unwrap_or_else(|| self.output_dir.join("pretrained.ckpt"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"

[dataset]
path = "data.csv"
schema = { targets = ["price"], future_covariates = ["load"], frequency = "1h" }

[model.patch]
period = 24
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: RunConfig = parse(MINIMAL).unwrap();
        assert_eq!(cfg.eval.lookback, 168);
        assert_eq!(cfg.eval.horizon, 24);
        assert_eq!(cfg.train.lr, 2e-4);
        assert_eq!(cfg.dataset.split, SplitSpec::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn guide_example_parses() {
        let chapter = include_str!("../../../book/src/cli.md");
        let start = chapter.find("```toml\n").unwrap() + 8;
        let end = start + chapter[start..].find("```").unwrap();
        let cfg: RunConfig = parse(&chapter[start..end]).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dataset.schema.future_covariates.len(), 2);
    }

    #[test]
    fn unknown_key_reports_path() {
        let text = MINIMAL.replace("period = 24", "period = 24\nperiode = 3");
        let Err(Failure::Config(msg)) = parse::<RunConfig>(&text) else {
            panic!("expected a config failure")
        };
        assert!(msg.contains("model.patch"), "{msg}");
    }

    #[test]
    fn wrong_type_reports_path() {
        let text = format!("{MINIMAL}\n[train]\nlr = \"fast\"\n");
        let Err(Failure::Config(msg)) = parse::<RunConfig>(&text) else {
            panic!("expected a config failure")
        };
        assert!(msg.starts_with("train.lr"), "{msg}");
    }

    #[test]
    fn invalid_values_are_config_failures() {
        let text = format!("{MINIMAL}\n[train]\nlr = -1.0\n");
        let cfg: RunConfig = parse(&text).unwrap();
        assert!(matches!(cfg.validate(), Err(Failure::Config(_))));
    }
}
