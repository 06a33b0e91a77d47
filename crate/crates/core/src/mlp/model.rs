//! Batch-normalized MLP classifier.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{load_checkpoint, ops, save_checkpoint, Grads, Linear, ParamId, ParamStore};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![1024, 512, 256],
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl MlpConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.hidden.iter().any(|&w| w == 0) {
            out.push("mlp.hidden widths must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            out.push(format!("mlp.bn_momentum must lie in (0, 1], got {}", self.bn_momentum));
        }
        if !(self.bn_eps > 0.0) {
            out.push(format!("mlp.bn_eps must be positive, got {}", self.bn_eps));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Hidden {
    linear: Linear,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub config: MlpConfig,
    pub store: ParamStore,
    pub input: usize,
    pub classes: usize,
    hidden: Vec<Hidden>,
    out: Linear,
}

pub(crate) struct LayerCache {
    input: Matrix,
    pub(crate) xhat: Matrix,
    inv_std: Vec<f64>,
    /// Whether the layer normalized with batch statistics.
    batch_stats: bool,
    /// Post-activation output, used for the ReLU mask.
    act: Matrix,
}

pub struct MlpCache {
    pub(crate) layers: Vec<LayerCache>,
    last: Matrix,
}

/// Per-layer batch mean and unbiased variance, to be folded into running stats.
pub struct BatchStats(Vec<Option<(Vec<f64>, Vec<f64>)>>);

impl Mlp {
    pub fn new(input: usize, classes: usize, config: MlpConfig, seed: u64) -> Result<Self> {
        let mut problems = config.problems();
        if input == 0 {
            problems.push("mlp input width must be positive".into());
        }
        if classes < 2 {
            problems.push(format!("mlp needs at least two classes, got {classes}"));
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut rng = rng_for(seed, "mlp-init", 0);
        let mut store = ParamStore::new();
        let mut hidden = Vec::new();
        let mut width = input;
        for (i, &h) in config.hidden.iter().enumerate() {
            let linear = Linear::new(&mut store, &format!("hidden.{i}"), width, h, &mut rng);
            let gamma = store.add_const(format!("hidden.{i}.bn.gamma"), &[h], 1.0);
            let beta = store.add_const(format!("hidden.{i}.bn.beta"), &[h], 0.0);
            let running_mean = store.add_const(format!("hidden.{i}.bn.running_mean"), &[h], 0.0);
            let running_var = store.add_const(format!("hidden.{i}.bn.running_var"), &[h], 1.0);
            hidden.push(Hidden {
                linear,
                gamma,
                beta,
                running_mean,
                running_var,
            });
            width = h;
        }
        let out = Linear::new(&mut store, "out", width, classes, &mut rng);
        for h in &hidden {
            store.set_param_trainable(h.running_mean, false);
            store.set_param_trainable(h.running_var, false);
        }
        let mut mlp = Self {
            config,
            store,
            input,
            classes,
            hidden,
            out,
        };
        mlp.write_meta(seed);
        Ok(mlp)
    }

    fn write_meta(&mut self, seed: u64) {
        let widths: Vec<String> = self.config.hidden.iter().map(ToString::to_string).collect();
        let m = &mut self.store.meta;
        m.insert("kind".into(), "mlp".into());
        m.insert("input".into(), self.input.to_string());
        m.insert("classes".into(), self.classes.to_string());
        m.insert("hidden".into(), widths.join(","));
        m.insert("bn_momentum".into(), self.config.bn_momentum.to_string());
        m.insert("bn_eps".into(), self.config.bn_eps.to_string());
        m.insert("seed".into(), seed.to_string());
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let meta = |k: &str| {
            store
                .meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("meta entry `{k}` missing")))
        };
        if meta("kind")? != "mlp" {
            return Err(Error::Checkpoint("not an MLP checkpoint".into()));
        }
        let num = |k: &str| -> Result<f64> {
            meta(k)?.parse().map_err(|_| Error::Checkpoint(format!("meta entry `{k}` is not a number")))
        };
        let hidden_widths = meta("hidden")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Checkpoint("bad hidden widths".into()))?;
        let config = MlpConfig {
            hidden: hidden_widths,
            bn_momentum: num("bn_momentum")?,
            bn_eps: num("bn_eps")?,
        };
        let missing = |n: &str| Error::Checkpoint(format!("parameter `{n}` missing"));
        let find = |n: String| store.find(&n).ok_or_else(|| missing(&n));
        let mut hidden = Vec::new();
        for i in 0..config.hidden.len() {
            hidden.push(Hidden {
                linear: Linear::find(&store, &format!("hidden.{i}")).ok_or_else(|| missing(&format!("hidden.{i}")))?,
                gamma: find(format!("hidden.{i}.bn.gamma"))?,
                beta: find(format!("hidden.{i}.bn.beta"))?,
                running_mean: find(format!("hidden.{i}.bn.running_mean"))?,
                running_var: find(format!("hidden.{i}.bn.running_var"))?,
            });
        }
        Ok(Self {
            input: num("input")? as usize,
            classes: num("classes")? as usize,
            out: Linear::find(&store, "out").ok_or_else(|| missing("out"))?,
            config,
            hidden,
            store,
        })
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        save_checkpoint(&self.store, stem)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        Self::from_store(load_checkpoint(stem)?)
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|h| h.linear.output).collect()
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input {
            return Err(Error::Shape(format!(
                "MLP expects {} features, got {}",
                self.input,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Logits plus the activations needed for backward. In train mode
    /// layers use batch statistics unless the batch has a single row.
    pub fn forward_logits(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, MlpCache, BatchStats)> {
        self.check_width(x)?;
        let n = x.rows();
        let eps = self.config.bn_eps;
        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut stats = Vec::with_capacity(self.hidden.len());
        let mut h = x.clone();
        for layer in &self.hidden {
            let z = layer.linear.forward(&self.store, &h);
            let width = z.cols();
            let batch_stats = mode == Mode::Train && n > 1;
            let (mean, var) = if batch_stats {
                let mut mean = vec![0.0; width];
                ops::col_sums_into(&z, &mut mean);
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; width];
                for i in 0..n {
                    for (j, v) in z.row(i).iter().enumerate() {
                        var[j] += (v - mean[j]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                (mean, var)
            } else {
                (
                    self.store.get(layer.running_mean).to_vec(),
                    self.store.get(layer.running_var).to_vec(),
                )
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let (g, b) = (self.store.get(layer.gamma), self.store.get(layer.beta));
            let mut xhat = z;
            let mut act = Matrix::zeros(n, width);
            for i in 0..n {
                let (xr, ar) = (xhat.row_mut(i), act.row_mut(i));
                for j in 0..width {
                    xr[j] = (xr[j] - mean[j]) * inv_std[j];
                    ar[j] = (g[j] * xr[j] + b[j]).max(0.0);
                }
            }
            stats.push(batch_stats.then(|| {
                let unbiased = var.iter().map(|v| v * n as f64 / (n - 1) as f64).collect();
                (mean, unbiased)
            }));
            caches.push(LayerCache {
                input: h,
                xhat,
                inv_std,
                batch_stats,
                act: act.clone(),
            });
            h = act;
        }
        let logits = self.out.forward(&self.store, &h);
        Ok((logits, MlpCache { layers: caches, last: h }, BatchStats(stats)))
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats) {
        self.fold_running(stats, self.config.bn_momentum);
    }

    /// Replaces the running estimates with the statistics of `x` taken as
    /// one batch. Fewer than two rows leave them unchanged.
    pub fn recalibrate(&mut self, x: &Matrix) -> Result<()> {
        let (_, _, stats) = self.forward_logits(x, Mode::Train)?;
        self.fold_running(&stats, 1.0);
        Ok(())
    }

    fn fold_running(&mut self, stats: &BatchStats, m: f64) {
        for (layer, s) in self.hidden.iter().zip(&stats.0) {
            if let Some((mean, var)) = s {
                for (r, v) in self.store.get_mut(layer.running_mean).iter_mut().zip(mean) {
                    *r = (1.0 - m) * *r + m * v;
                }
                for (r, v) in self.store.get_mut(layer.running_var).iter_mut().zip(var) {
                    *r = (1.0 - m) * *r + m * v;
                }
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, cache: &MlpCache, dlogits: &Matrix, grads: &mut Grads) -> Matrix {
        let mut d = self.out.backward(&self.store, &cache.last, dlogits, grads);
        for (layer, c) in self.hidden.iter().zip(&cache.layers).rev() {
            let n = d.rows();
            let width = d.cols();
            let g = self.store.get(layer.gamma);
            let mut dgamma = vec![0.0; width];
            let mut dbeta = vec![0.0; width];
            // Through ReLU, then the affine part of batch norm.
            let mut dxhat = Matrix::zeros(n, width);
            for i in 0..n {
                for j in 0..width {
                    let dy = if c.act.get(i, j) > 0.0 { d.get(i, j) } else { 0.0 };
                    dgamma[j] += dy * c.xhat.get(i, j);
                    dbeta[j] += dy;
                    dxhat.row_mut(i)[j] = dy * g[j];
                }
            }
            ops::add_assign(grads.get_mut(layer.gamma), &dgamma);
            ops::add_assign(grads.get_mut(layer.beta), &dbeta);
            let mut dz = Matrix::zeros(n, width);
            if c.batch_stats {
                let mut sum = vec![0.0; width];
                let mut sum_h = vec![0.0; width];
                for i in 0..n {
                    for j in 0..width {
                        sum[j] += dxhat.get(i, j);
                        sum_h[j] += dxhat.get(i, j) * c.xhat.get(i, j);
                    }
                }
                let nf = n as f64;
                for i in 0..n {
                    for j in 0..width {
                        dz.row_mut(i)[j] =
                            c.inv_std[j] / nf * (nf * dxhat.get(i, j) - sum[j] - c.xhat.get(i, j) * sum_h[j]);
                    }
                }
            } else {
                for i in 0..n {
                    for j in 0..width {
                        dz.row_mut(i)[j] = dxhat.get(i, j) * c.inv_std[j];
                    }
                }
            }
            d = layer.linear.backward(&self.store, &c.input, &dz, grads);
        }
        d
    }

    /// Class probabilities.
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<Matrix> {
        let (mut logits, _, _) = self.forward_logits(x, mode)?;
        ops::softmax_rows(&mut logits);
        Ok(logits)
    }

    /// Eval-mode argmax labels (ties to the lower class) and probabilities.
    pub fn predict(&self, x: &Matrix) -> Result<(Vec<usize>, Matrix)> {
        let probs = self.forward(x, Mode::Eval)?;
        Ok(((0..probs.rows()).map(|i| argmax(probs.row(i))).collect(), probs))
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of row logits and its gradient.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let n = labels.len().max(1) as f64;
    let mut probs = logits.clone();
    ops::softmax_rows(&mut probs);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::LabelRange {
                label: y,
                classes: logits.cols(),
            });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += (lse - row[y]) / n;
        let pr = probs.row_mut(i);
        pr[y] -= 1.0;
        pr.iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss, probs))
}
