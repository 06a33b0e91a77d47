use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::metrics::{confusion, mean_std, metrics, ConfusionMatrix, MetricsReport};
use crate::data::Dataset;
use crate::encoder::{normalize, token_inputs, Encoder, NormalizationSpec, TokenInput};
use crate::error::{Error, Result};
use crate::features::{extract_table, FeatureSet, HandcraftedConfig, Imputer, SensorSubset};
use crate::forest::{rf_fit, rf_predict, ForestConfig, ForestModel};
use crate::mlp::{embed_inputs, finetune, FinetuneResult, Mlp, MlpConfig, Mode, TrainConfig};
use crate::rng::derive_labeled;
use crate::split::stratified_split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pipeline {
    /// MLP head on fine-tuned deep features.
    MlpDeep,
    /// Random forest on deep features from the fine-tuned encoder.
    RfDeep,
    /// Random forest on hand-crafted features.
    RfHand,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::MlpDeep, Pipeline::RfDeep, Pipeline::RfHand];

    pub fn tag(self) -> &'static str {
        match self {
            Pipeline::MlpDeep => "mlp-deep",
            Pipeline::RfDeep => "rf-deep",
            Pipeline::RfHand => "rf-hand",
        }
    }

    pub fn is_deep(self) -> bool {
        self != Pipeline::RfHand
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.tag() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown pipeline `{s}` (rf-hand, rf-deep, mlp-deep)")))
    }
}

/// Everything a seed-level run needs besides the data and the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub train_fraction: f64,
    pub handcrafted: HandcraftedConfig,
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub normalization: NormalizationSpec,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            handcrafted: HandcraftedConfig::default(),
            forest: ForestConfig::default(),
            mlp: MlpConfig::default(),
            train: TrainConfig::default(),
            normalization: NormalizationSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeedReport {
    pub pipeline: Pipeline,
    pub class_names: Vec<String>,
    pub seeds: Vec<u64>,
    /// Completed seeds, in the order of `seeds`.
    pub reports: Vec<SeedReport>,
    pub failures: Vec<(u64, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

impl MultiSeedReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.reports.len() == self.seeds.len()
    }

    pub fn values(&self, f: impl Fn(&MetricsReport) -> f64) -> Vec<f64> {
        self.reports.iter().map(|r| f(&r.metrics)).collect()
    }

    /// Mean and sample deviation of OA, macro-F1, weighted-F1 and each
    /// class's F1 across the completed seeds.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let row = |metric: String, v: Vec<f64>| {
            let (mean, std) = mean_std(&v);
            SummaryRow { metric, mean, std }
        };
        let mut rows = vec![
            row("oa".into(), self.values(|m| m.overall_accuracy)),
            row("macro_f1".into(), self.values(|m| m.macro_f1)),
            row("weighted_f1".into(), self.values(|m| m.weighted_f1)),
        ];
        for (c, name) in self.class_names.iter().enumerate() {
            rows.push(row(format!("f1:{name}"), self.values(|m| m.f1[c])));
        }
        rows
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.summary().into_iter().find(|r| r.metric == metric).map(|r| r.mean)
    }
}

/// Per-pixel inputs shared by every seed. Neither transform is fitted to
/// data: features and normalization depend only on the pixel itself.
pub struct PreparedData {
    pub labels: Vec<usize>,
    pub classes: usize,
    pub hand: Option<Vec<Vec<Option<f64>>>>,
    pub tokens: Option<Vec<Vec<TokenInput>>>,
}

impl PreparedData {
    pub fn new(dataset: &Dataset, pipelines: &[Pipeline], settings: &ExperimentSettings) -> Self {
        let hand = pipelines
            .contains(&Pipeline::RfHand)
            .then(|| extract_table(dataset.series(), &settings.handcrafted).rows);
        let tokens = pipelines.iter().any(|p| p.is_deep()).then(|| {
            dataset
                .samples
                .par_iter()
                .map(|s| token_inputs(&normalize(&s.series, &settings.normalization)))
                .collect()
        });
        Self {
            labels: dataset.labels(),
            classes: dataset.class_count(),
            hand,
            tokens,
        }
    }

    /// The rows at `indices`, as the only data a fit stage may see.
    pub fn select(&self, indices: &[usize]) -> PreparedData {
        PreparedData {
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            hand: self.hand.as_ref().map(|h| indices.iter().map(|&i| h[i].clone()).collect()),
            tokens: self.tokens.as_ref().map(|t| indices.iter().map(|&i| t[i].clone()).collect()),
        }
    }
}

/// Models fitted on training rows only.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub imputer: Option<Imputer>,
    pub rf_hand: Option<ForestModel>,
    pub finetuned: Option<FinetuneResult>,
    pub rf_deep: Option<ForestModel>,
}

/// Fits every model the pipelines need. `train` must hold training rows
/// only; nothing else is visible here.
pub fn fit_stage(
    train: &PreparedData,
    pipelines: &[Pipeline],
    encoder: Option<&Encoder>,
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<FittedModels> {
    let mut fitted = FittedModels {
        imputer: None,
        rf_hand: None,
        finetuned: None,
        rf_deep: None,
    };
    if pipelines.contains(&Pipeline::RfHand) {
        let rows = train.hand.as_ref().ok_or_else(|| Error::invalid("hand-crafted features were not prepared"))?;
        let imputer = Imputer::fit(rows);
        let x = imputer.transform(rows)?;
        let seed = derive_labeled(seed, "rf-hand", 0);
        fitted.rf_hand = Some(rf_fit(&x, &train.labels, train.classes, &settings.forest, seed)?);
        fitted.imputer = Some(imputer);
    }
    if pipelines.iter().any(|p| p.is_deep()) {
        let encoder = encoder.ok_or_else(|| Error::invalid("deep pipelines need an encoder"))?;
        let tokens = train.tokens.as_ref().ok_or_else(|| Error::invalid("token inputs were not prepared"))?;
        let head = Mlp::new(
            encoder.config.out_dim,
            train.classes,
            settings.mlp.clone(),
            derive_labeled(seed, "head", 0),
        )?;
        let tuned = finetune(encoder.clone(), head, tokens, &train.labels, &settings.train, false, seed)?;
        if pipelines.contains(&Pipeline::RfDeep) {
            let refs: Vec<&[TokenInput]> = tokens.iter().map(Vec::as_slice).collect();
            let x = embed_inputs(&tuned.encoder, &refs)?;
            let seed = derive_labeled(seed, "rf-deep", 0);
            fitted.rf_deep = Some(rf_fit(&x, &train.labels, train.classes, &settings.forest, seed)?);
        }
        fitted.finetuned = Some(tuned);
    }
    Ok(fitted)
}

/// Test-set predictions of one pipeline.
pub fn predict_stage(models: &FittedModels, test: &PreparedData, pipeline: Pipeline) -> Result<Vec<usize>> {
    let missing = || Error::invalid(format!("no fitted model for {pipeline}"));
    match pipeline {
        Pipeline::RfHand => {
            let imputer = models.imputer.as_ref().ok_or_else(missing)?;
            let rows = test.hand.as_ref().ok_or_else(missing)?;
            let x = imputer.transform(rows)?;
            Ok(rf_predict(models.rf_hand.as_ref().ok_or_else(missing)?, &x)?.0)
        }
        Pipeline::RfDeep | Pipeline::MlpDeep => {
            let tuned = models.finetuned.as_ref().ok_or_else(missing)?;
            let tokens = test.tokens.as_ref().ok_or_else(missing)?;
            let refs: Vec<&[TokenInput]> = tokens.iter().map(Vec::as_slice).collect();
            let x = embed_inputs(&tuned.encoder, &refs)?;
            if pipeline == Pipeline::MlpDeep {
                let (logits, _, _) = tuned.mlp.forward_logits(&x, Mode::Eval)?;
                Ok((0..logits.rows()).map(|i| crate::mlp::argmax(logits.row(i))).collect())
            } else {
                Ok(rf_predict(models.rf_deep.as_ref().ok_or_else(missing)?, &x)?.0)
            }
        }
    }
}

/// One seed: split, fit on train, score on test. Errors are per pipeline.
fn run_seed(
    data: &PreparedData,
    class_names: &[String],
    pipelines: &[Pipeline],
    encoder: Option<&Encoder>,
    settings: &ExperimentSettings,
    seed: u64,
) -> Vec<std::result::Result<SeedReport, String>> {
    let outcome = (|| {
        let (train_idx, test_idx) = stratified_split(&data.labels, settings.train_fraction, seed)?;
        let models = fit_stage(&data.select(&train_idx), pipelines, encoder, settings, seed)?;
        Ok::<_, Error>((models, data.select(&test_idx)))
    })();
    let (models, test) = match outcome {
        Ok(v) => v,
        Err(e) => return pipelines.iter().map(|_| Err(e.to_string())).collect(),
    };
    pipelines
        .iter()
        .map(|&p| {
            let pred = predict_stage(&models, &test, p).map_err(|e| e.to_string())?;
            let conf = confusion(&test.labels, &pred, data.classes)
                .and_then(|c| c.with_names(class_names))
                .map_err(|e| e.to_string())?;
            Ok(SeedReport {
                seed,
                metrics: metrics(&conf),
                confusion: conf,
            })
        })
        .collect()
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed list".into()));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("seeds must be distinct"));
    }
    Ok(())
}

/// Runs several pipelines over the same seeds, sharing one split and one
/// fine-tuned encoder per seed. Seeds run concurrently.
pub fn run_comparison(
    dataset: &Dataset,
    pipelines: &[Pipeline],
    encoder: Option<&Encoder>,
    seeds: &[u64],
    settings: &ExperimentSettings,
) -> Result<Vec<MultiSeedReport>> {
    check_seeds(seeds)?;
    if pipelines.iter().any(|p| p.is_deep()) && encoder.is_none() {
        return Err(Error::invalid("deep pipelines need an encoder"));
    }
    let data = PreparedData::new(dataset, pipelines, settings);
    let per_seed: Vec<_> = seeds
        .par_iter()
        .map(|&s| run_seed(&data, dataset.class_names(), pipelines, encoder, settings, s))
        .collect();
    Ok(pipelines
        .iter()
        .enumerate()
        .map(|(pi, &pipeline)| {
            let mut report = MultiSeedReport {
                pipeline,
                class_names: dataset.class_names().to_vec(),
                seeds: seeds.to_vec(),
                reports: Vec::new(),
                failures: Vec::new(),
            };
            for (outcomes, &seed) in per_seed.iter().zip(seeds) {
                match &outcomes[pi] {
                    Ok(r) => report.reports.push(r.clone()),
                    Err(e) => report.failures.push((seed, e.clone())),
                }
            }
            report
        })
        .collect())
}

pub fn run_experiment(
    dataset: &Dataset,
    pipeline: Pipeline,
    encoder: Option<&Encoder>,
    seeds: &[u64],
    settings: &ExperimentSettings,
) -> Result<MultiSeedReport> {
    Ok(run_comparison(dataset, &[pipeline], encoder, seeds, settings)?.remove(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub set: FeatureSet,
    pub subset: SensorSubset,
    pub report: MultiSeedReport,
}

/// Hand-crafted random forest over every feature set × sensor subset,
/// feature sets outermost.
pub fn ablation_table(dataset: &Dataset, seeds: &[u64], settings: &ExperimentSettings) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::with_capacity(9);
    for set in FeatureSet::ALL {
        for subset in SensorSubset::ALL {
            let mut s = settings.clone();
            s.handcrafted.set = set;
            s.handcrafted.subset = subset;
            let report = run_experiment(dataset, Pipeline::RfHand, None, seeds, &s)?;
            cells.push(AblationCell { set, subset, report });
        }
    }
    Ok(cells)
}
