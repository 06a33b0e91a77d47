//! Run configuration: one TOML file covering every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{IngestConfig, SchemaTag, SynthConfig};
use crate::encoder::{EncoderConfig, NormalizationSpec, PretrainConfig};
use crate::error::{Error, Result};
use crate::eval::{ExperimentSettings, Pipeline};
use crate::features::{FeatureSet, FitMethod, HandcraftedConfig, SensorSubset};
use crate::forest::ForestConfig;
use crate::mlp::{MlpConfig, TrainConfig};
use crate::preprocess::{IndexCoefficients, DEFAULT_CLOUD_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset directory (composites.csv, statics.csv, labels.csv).
    pub data: String,
    pub out: String,
    /// Encoder checkpoint stem; empty means pre-train one on a synthetic pool.
    pub encoder: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "data".into(),
            out: "out".into(),
            encoder: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    pub year: i32,
    /// Observations with a cloud probability above this percentage are dropped.
    pub cloud_threshold: f64,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            year: IngestConfig::default().year,
            cloud_threshold: DEFAULT_CLOUD_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub preset: String,
    /// Multiplier on every class count.
    pub scale: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            preset: "simb".into(),
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub subset: String,
    pub set: String,
    /// `least-squares` or `iterative`.
    pub method: String,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self {
            subset: "s1s2".into(),
            set: "all".into(),
            method: "least-squares".into(),
        }
    }
}

/// Unlabelled synthetic series the encoder is pre-trained on when no
/// checkpoint is given. Drawn with its own seed, never from the evaluated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolSection {
    pub preset: String,
    pub size: usize,
    pub seed: u64,
}

impl Default for PoolSection {
    fn default() -> Self {
        Self {
            preset: "simb".into(),
            size: 300,
            seed: 9001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub train_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Label-set tag: comb, simb, siba or synthetic.
    pub dataset: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub pipelines: Vec<String>,
    pub paths: PathsConfig,
    pub ingest: IngestSection,
    pub synth: SynthSection,
    pub features: FeaturesSection,
    pub indices: IndexCoefficients,
    pub normalization: NormalizationSpec,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub pretrain_pool: PoolSection,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub split: SplitSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "simb".into(),
            seed: 42,
            seeds: vec![1, 2, 3, 4, 5],
            pipelines: Pipeline::ALL.iter().map(|p| p.tag().to_string()).collect(),
            paths: PathsConfig::default(),
            ingest: IngestSection::default(),
            synth: SynthSection::default(),
            features: FeaturesSection::default(),
            indices: IndexCoefficients::default(),
            normalization: NormalizationSpec::default(),
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            pretrain_pool: PoolSection::default(),
            mlp: MlpConfig::default(),
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            split: SplitSection::default(),
        }
    }
}

pub fn parse_fit_method(s: &str) -> Result<FitMethod> {
    match s.to_ascii_lowercase().as_str() {
        "least-squares" | "qr" => Ok(FitMethod::LeastSquares),
        "iterative" | "lm" => Ok(FitMethod::Iterative),
        _ => Err(Error::invalid(format!("unknown fit method `{s}` (least-squares, iterative)"))),
    }
}

fn note<T>(out: &mut Vec<String>, field: &str, r: Result<T>) {
    if let Err(e) = r {
        out.push(format!("{field}: {e}"));
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML with every field spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Every validation failure, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        note(&mut out, "dataset", self.dataset.parse::<SchemaTag>());
        if self.seeds.is_empty() {
            out.push("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            out.push("seeds must be distinct".into());
        }
        if self.pipelines.is_empty() {
            out.push("pipelines must not be empty".into());
        }
        for p in &self.pipelines {
            note(&mut out, "pipelines", p.parse::<Pipeline>());
        }
        if self.paths.data.is_empty() {
            out.push("paths.data must not be empty".into());
        }
        if self.paths.out.is_empty() {
            out.push("paths.out must not be empty".into());
        }
        if !(0.0..=100.0).contains(&self.ingest.cloud_threshold) {
            out.push(format!("ingest.cloud_threshold must lie in [0, 100], got {}", self.ingest.cloud_threshold));
        }
        note(&mut out, "synth.preset", SynthConfig::preset(&self.synth.preset));
        if !(self.synth.scale > 0.0 && self.synth.scale.is_finite()) {
            out.push(format!("synth.scale must be positive, got {}", self.synth.scale));
        }
        note(&mut out, "features.subset", self.features.subset.parse::<SensorSubset>());
        note(&mut out, "features.set", self.features.set.parse::<FeatureSet>());
        note(&mut out, "features.method", parse_fit_method(&self.features.method));
        if !(self.indices.reflectance_scale > 0.0) {
            out.push("indices.reflectance_scale must be positive".into());
        }
        for rule in self.normalization.invalid_rules() {
            out.push(format!("normalization.{rule} needs a positive finite scale and a finite shift"));
        }
        out.extend(self.encoder.problems());
        out.extend(self.pretrain.problems());
        note(&mut out, "pretrain_pool.preset", SynthConfig::preset(&self.pretrain_pool.preset));
        if self.pretrain_pool.size == 0 {
            out.push("pretrain_pool.size must be positive".into());
        }
        out.extend(self.mlp.problems());
        out.extend(self.train.problems());
        out.extend(self.forest.problems());
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            out.push(format!("split.train_fraction must lie in (0, 1), got {}", self.split.train_fraction));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn schema(&self) -> Result<SchemaTag> {
        self.dataset.parse()
    }

    pub fn pipelines(&self) -> Result<Vec<Pipeline>> {
        self.pipelines.iter().map(|p| p.parse()).collect()
    }

    pub fn handcrafted(&self) -> Result<HandcraftedConfig> {
        Ok(HandcraftedConfig {
            subset: self.features.subset.parse()?,
            set: self.features.set.parse()?,
            method: parse_fit_method(&self.features.method)?,
            coefficients: self.indices.clone(),
        })
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        Ok(SynthConfig::preset(&self.synth.preset)?.scaled(self.synth.scale))
    }

    pub fn settings(&self) -> Result<ExperimentSettings> {
        Ok(ExperimentSettings {
            train_fraction: self.split.train_fraction,
            handcrafted: self.handcrafted()?,
            forest: self.forest,
            mlp: self.mlp.clone(),
            train: self.train,
            normalization: self.normalization,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_spells_out_defaults() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        for needle in [
            "seeds = [1, 2, 3, 4, 5]",
            "train_fraction = 0.7",
            "lr = 0.0001",
            "weight_decay = 0.00746",
            "epochs = 100",
            "batch_size = 64",
            "hidden = [1024, 512, 256]",
            "trees = 500",
            "max_features = 0",
            "mask_ratio = 0.75",
            "val_fraction = 0.15",
            "cloud_threshold = 65.0",
            "d_e = 128",
        ] {
            assert!(text.contains(needle), "missing `{needle}`");
        }
        assert!(RunConfig::default().problems().is_empty());
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[train]\nlr = 0.0001\nweight_decay = 0.00746\nepochs = 3\nbatch_size = 64\nval_fraction = 0.15\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.forest.trees, 500);
    }

    #[test]
    fn every_problem_is_listed() {
        let mut cfg = RunConfig::default();
        cfg.seeds = vec![1, 1];
        cfg.features.subset = "s3".into();
        cfg.train.lr = -1.0;
        cfg.forest.trees = 0;
        cfg.split.train_fraction = 1.0;
        cfg.encoder.heads = 3;
        cfg.pipelines.push("svm".into());
        let Err(Error::Config(problems)) = cfg.validate() else {
            panic!("expected a config error");
        };
        assert_eq!(problems.len(), 7, "{problems:?}");
        assert!(matches!(RunConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
    }
}
