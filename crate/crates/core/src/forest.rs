//! Random forest of Gini decision trees.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_labeled, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Features examined per split; 0 means `floor(sqrt(p))`.
    pub max_features: usize,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 500,
            max_features: 0,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trees == 0 {
            out.push("forest.trees must be positive".into());
        }
        if self.min_samples_split < 2 {
            out.push(format!("forest.min_samples_split must be at least 2, got {}", self.min_samples_split));
        }
        out
    }

    pub fn features_per_split(&self, p: usize) -> usize {
        let m = if self.max_features == 0 {
            (p as f64).sqrt().floor() as usize
        } else {
            self.max_features
        };
        m.clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        histogram: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    /// Seed of the tree's bootstrap and feature draws.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub classes: usize,
    pub features: usize,
    pub seed: u64,
    pub trees: Vec<DecisionTree>,
}

/// Split score `Σc_L²/n_L + Σc_R²/n_R` as an exact fraction. Maximizing it
/// minimizes the weighted Gini impurity of the children.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(sq_left: u64, n_left: u64, sq_right: u64, n_right: u64) -> Self {
        Self {
            num: sq_left as u128 * n_right as u128 + sq_right as u128 * n_left as u128,
            den: n_left as u128 * n_right as u128,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub score: Score,
}

pub fn gini(histogram: &[usize]) -> f64 {
    let n: usize = histogram.iter().sum();
    if n == 0 {
        return 0.0;
    }
    1.0 - histogram.iter().map(|&c| (c as f64 / n as f64).powi(2)).sum::<f64>()
}

/// Midpoint of two consecutive distinct values, never rounding up to `hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

/// Best (feature, midpoint) split of `rows` over the candidate features.
/// Ties go to the lower feature index, then the lower threshold. `None`
/// when every candidate feature is constant on `rows`.
pub fn best_split(x: &Matrix, y: &[usize], rows: &[usize], features: &[usize], classes: usize) -> Option<SplitChoice> {
    let mut sorted_features = features.to_vec();
    sorted_features.sort_unstable();
    let mut best: Option<SplitChoice> = None;
    let mut total = vec![0u64; classes];
    rows.iter().for_each(|&r| total[y[r]] += 1);
    let n = rows.len() as u64;
    let mut order = rows.to_vec();
    let mut left = vec![0u64; classes];
    for &f in &sorted_features {
        order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        left.iter_mut().for_each(|c| *c = 0);
        let mut sq_left = 0u64;
        let mut sq_right: u64 = total.iter().map(|c| c * c).sum();
        for i in 0..order.len() - 1 {
            let c = y[order[i]];
            // Moving one sample of class c from right to left.
            sq_right -= 2 * (total[c] - left[c]) - 1;
            sq_left += 2 * left[c] + 1;
            left[c] += 1;
            let (lo, hi) = (x.get(order[i], f), x.get(order[i + 1], f));
            if lo == hi {
                continue;
            }
            let n_left = i as u64 + 1;
            let score = Score::new(sq_left, n_left, sq_right, n - n_left);
            if best.map_or(true, |b| score > b.score) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    score,
                });
            }
        }
    }
    best
}

fn histogram(y: &[usize], rows: &[usize], classes: usize) -> Vec<usize> {
    let mut h = vec![0; classes];
    rows.iter().for_each(|&r| h[y[r]] += 1);
    h
}

fn grow_tree(x: &Matrix, y: &[usize], classes: usize, config: &ForestConfig, seed: u64) -> DecisionTree {
    let mut rng = rng_from(seed);
    let n = x.rows();
    let p = x.cols();
    let rows: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let m = config.features_per_split(p);
    let mut nodes = vec![Node::Leaf { histogram: vec![] }];
    let mut stack = vec![(0usize, rows)];
    let mut all_features: Vec<usize> = (0..p).collect();
    while let Some((id, rows)) = stack.pop() {
        let hist = histogram(y, &rows, classes);
        let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
        let mut choice = None;
        if !pure && rows.len() >= config.min_samples_split {
            all_features.shuffle(&mut rng);
            choice = best_split(x, y, &rows, &all_features[..m], classes);
            // Keep drawing features while the sampled ones are all constant.
            let mut next = m;
            while choice.is_none() && next < p {
                choice = best_split(x, y, &rows, &all_features[next..next + 1], classes);
                next += 1;
            }
        }
        match choice {
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, s.feature) <= s.threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf { histogram: vec![] });
                nodes.push(Node::Leaf { histogram: vec![] });
                nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right: left + 1,
                };
                stack.push((left + 1, r));
                stack.push((left, l));
            }
            None => nodes[id] = Node::Leaf { histogram: hist },
        }
    }
    DecisionTree { nodes, seed }
}

impl DecisionTree {
    /// Index of the leaf a sample lands in.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return id,
            }
        }
    }

    pub fn leaf_distribution(&self, row: &[f64]) -> Vec<f64> {
        match &self.nodes[self.leaf_of(row)] {
            Node::Leaf { histogram } => {
                let n: usize = histogram.iter().sum();
                histogram.iter().map(|&c| c as f64 / n.max(1) as f64).collect()
            }
            Node::Split { .. } => unreachable!("leaf_of returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, id: usize) -> usize {
            match &t.nodes[id] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

fn check_fit_inputs(x: &Matrix, y: &[usize]) -> Result<usize> {
    if x.rows() != y.len() {
        return Err(Error::Shape(format!("{} rows for {} labels", x.rows(), y.len())));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::Empty("forest training matrix".into()));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("forest features must be finite (impute first)"));
    }
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let distinct = histogram(y, &(0..y.len()).collect::<Vec<_>>(), classes)
        .iter()
        .filter(|&&c| c > 0)
        .count();
    if distinct < 2 {
        return Err(Error::SingleClass(distinct));
    }
    Ok(classes)
}

/// Fits a forest. `classes` may exceed the labels present (e.g. a class
/// absent from a training split); it fixes the probability width.
pub fn rf_fit(x: &Matrix, y: &[usize], classes: usize, config: &ForestConfig, seed: u64) -> Result<ForestModel> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let seen = check_fit_inputs(x, y)?;
    if seen > classes {
        return Err(Error::LabelRange {
            label: seen - 1,
            classes,
        });
    }
    let trees = (0..config.trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, classes, config, derive_labeled(seed, "tree", t as u64)))
        .collect();
    Ok(ForestModel {
        config: *config,
        classes,
        features: x.cols(),
        seed,
        trees,
    })
}

/// Index of the largest probability, ties to the lower class.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Labels and class probabilities (mean of leaf distributions).
pub fn rf_predict(model: &ForestModel, x: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    if x.cols() != model.features {
        return Err(Error::Shape(format!(
            "forest was trained on {} features, got {}",
            model.features,
            x.cols()
        )));
    }
    let mut probs = Matrix::zeros(x.rows(), model.classes);
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; model.classes];
            for t in &model.trees {
                for (a, p) in acc.iter_mut().zip(t.leaf_distribution(x.row(i))) {
                    *a += p;
                }
            }
            acc.iter_mut().for_each(|a| *a /= model.trees.len() as f64);
            acc
        })
        .collect();
    for (i, r) in rows.iter().enumerate() {
        probs.row_mut(i).copy_from_slice(r);
    }
    let labels = (0..probs.rows()).map(|i| argmax(probs.row(i))).collect();
    Ok((labels, probs))
}

impl ForestModel {
    /// Plain-text dump: a config header, then one block per tree listing
    /// `id split <feature> <threshold> <left> <right>` or `id leaf <counts>`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let _ = writeln!(
            s,
            "forest trees={} classes={} features={} seed={} max_features={} min_samples_split={} bootstrap={}",
            self.trees.len(),
            self.classes,
            self.features,
            self.seed,
            c.max_features,
            c.min_samples_split,
            c.bootstrap
        );
        for (i, t) in self.trees.iter().enumerate() {
            let _ = writeln!(s, "tree {i} seed={} nodes={}", t.seed, t.nodes.len());
            for (id, n) in t.nodes.iter().enumerate() {
                match n {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let _ = writeln!(s, "{id} split {feature} {threshold:?} {left} {right}");
                    }
                    Node::Leaf { histogram } => {
                        let h: Vec<String> = histogram.iter().map(ToString::to_string).collect();
                        let _ = writeln!(s, "{id} leaf {}", h.join(","));
                    }
                }
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, what: &str| Error::invalid(format!("forest dump line {line}: {what}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty dump"))?;
        let kv = |line: &str, n: usize| -> Result<std::collections::HashMap<String, String>> {
            line.split_whitespace()
                .skip(n)
                .map(|f| {
                    f.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| Error::invalid(format!("forest dump: bad field `{f}`")))
                })
                .collect()
        };
        if !header.starts_with("forest ") {
            return Err(bad(1, "missing forest header"));
        }
        let h = kv(header, 1)?;
        let get = |k: &str| -> Result<String> { h.get(k).cloned().ok_or_else(|| bad(1, &format!("missing {k}"))) };
        let num = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(1, &format!("bad {k}"))) };
        let config = ForestConfig {
            trees: num("trees")? as usize,
            max_features: num("max_features")? as usize,
            min_samples_split: num("min_samples_split")? as usize,
            bootstrap: get("bootstrap")? == "true",
        };
        let mut model = ForestModel {
            config,
            classes: num("classes")? as usize,
            features: num("features")? as usize,
            seed: num("seed")?,
            trees: Vec::new(),
        };
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["tree", _, rest @ ..] => {
                    let seed = rest
                        .iter()
                        .find_map(|x| x.strip_prefix("seed="))
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad(ln, "tree without seed"))?;
                    model.trees.push(DecisionTree { nodes: Vec::new(), seed });
                }
                [_, "split", feature, threshold, left, right] => {
                    let t = model.trees.last_mut().ok_or_else(|| bad(ln, "node before tree"))?;
                    let p = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, "bad index"));
                    t.nodes.push(Node::Split {
                        feature: p(feature)?,
                        threshold: threshold.parse().map_err(|_| bad(ln, "bad threshold"))?,
                        left: p(left)?,
                        right: p(right)?,
                    });
                }
                [_, "leaf", counts] => {
                    let t = model.trees.last_mut().ok_or_else(|| bad(ln, "node before tree"))?;
                    let histogram = counts
                        .split(',')
                        .map(|c| c.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(ln, "bad histogram"))?;
                    t.nodes.push(Node::Leaf { histogram });
                }
                [] => {}
                _ => return Err(bad(ln, "unrecognized line")),
            }
        }
        if model.trees.len() != model.config.trees {
            return Err(bad(1, "tree count does not match header"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::nn::params::write_atomic(path, self.dump().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;

    fn single_tree() -> ForestConfig {
        ForestConfig {
            trees: 1,
            max_features: 2,
            bootstrap: false,
            ..ForestConfig::default()
        }
    }

    /// Weighted child Gini of every (feature, midpoint) pair; lowest wins,
    /// earlier pairs win ties.
    fn brute_force(x: &Matrix, y: &[usize], features: &[usize], classes: usize) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        let mut feats = features.to_vec();
        feats.sort_unstable();
        for &f in &feats {
            let mut values: Vec<f64> = (0..x.rows()).map(|i| x.get(i, f)).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let t = midpoint(w[0], w[1]);
                let (l, r): (Vec<usize>, Vec<usize>) = (0..x.rows()).partition(|&i| x.get(i, f) <= t);
                let n = x.rows() as f64;
                let imp = l.len() as f64 / n * gini(&histogram(y, &l, classes))
                    + r.len() as f64 / n * gini(&histogram(y, &r, classes));
                if best.map_or(true, |b| imp < b.2 - 1e-12) {
                    best = Some((f, t, imp));
                }
            }
        }
        best
    }

    #[test]
    fn xor_layout_is_fit_exactly() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let y = vec![0, 1, 1, 0];
        let model = rf_fit(&x, &y, 2, &single_tree(), 1).unwrap();
        assert!(model.trees[0].depth() <= 2);
        let (pred, _) = rf_predict(&model, &x).unwrap();
        assert_eq!(pred, y);
    }

    #[test]
    fn pure_node_becomes_leaf() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(gini(&[3, 0]), 0.0);
        let tree = grow_tree(&x, &[1, 1, 1], 2, &single_tree(), 1);
        assert_eq!(tree.nodes, vec![Node::Leaf { histogram: vec![0, 3] }]);
    }

    #[test]
    fn defaults_and_errors() {
        assert_eq!(ForestConfig::default().trees, 500);
        assert_eq!(ForestConfig::default().features_per_split(209), 14);
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            rf_fit(&x, &[0, 0], 2, &ForestConfig::default(), 1),
            Err(Error::SingleClass(1))
        ));
        let model = rf_fit(&x, &[0, 1], 2, &single_tree(), 1).unwrap();
        assert!(matches!(rf_predict(&model, &Matrix::zeros(1, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn leaf_histograms_sum_to_samples() {
        let mut rng = rng_from(4);
        let x = Matrix::from_vec(60, 3, (0..180).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let cfg = ForestConfig { trees: 3, ..ForestConfig::default() };
        let model = rf_fit(&x, &y, 3, &cfg, 9).unwrap();
        for t in &model.trees {
            let total: usize = t
                .nodes
                .iter()
                .map(|n| match n {
                    Node::Leaf { histogram } => histogram.iter().sum(),
                    _ => 0,
                })
                .sum();
            assert_eq!(total, 60);
        }
        let (_, probs) = rf_predict(&model, &x).unwrap();
        for i in 0..60 {
            assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_tree_forest_matches_tree_and_dump_round_trips() {
        let mut rng = rng_from(8);
        let x = Matrix::from_vec(40, 4, (0..160).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<usize> = (0..40).map(|i| (i * 7) % 3).collect();
        let cfg = ForestConfig { trees: 1, ..ForestConfig::default() };
        let model = rf_fit(&x, &y, 3, &cfg, 2).unwrap();
        let (pred, _) = rf_predict(&model, &x).unwrap();
        for i in 0..40 {
            assert_eq!(pred[i], argmax(&model.trees[0].leaf_distribution(x.row(i))));
        }
        let cfg5 = ForestConfig { trees: 5, ..ForestConfig::default() };
        let m5 = rf_fit(&x, &y, 3, &cfg5, 2).unwrap();
        assert_eq!(ForestModel::parse(&m5.dump()).unwrap(), m5);
        assert_eq!(rf_fit(&x, &y, 3, &cfg5, 2).unwrap().dump(), m5.dump());
    }

    #[test]
    fn unanimous_trees_give_certainty() {
        let x = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![5.0], vec![5.0]]).unwrap();
        let y = vec![0, 0, 1, 1];
        let cfg = ForestConfig {
            trees: 10,
            bootstrap: false,
            ..ForestConfig::default()
        };
        let model = rf_fit(&x, &y, 2, &cfg, 3).unwrap();
        let (pred, probs) = rf_predict(&model, &x).unwrap();
        assert_eq!(pred, y);
        assert_eq!(probs.row(0), &[1.0, 0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn best_split_matches_brute_force(
            n in 2usize..=50,
            p in 1usize..=5,
            seed in any::<u64>(),
        ) {
            let mut rng = rng_from(seed);
            // Coarse values create ties between thresholds and features.
            let x = Matrix::from_vec(n, p, (0..n * p).map(|_| rng.gen_range(0..6) as f64 / 2.0).collect()).unwrap();
            let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let features: Vec<usize> = (0..p).collect();
            let rows: Vec<usize> = (0..n).collect();
            let fast = best_split(&x, &y, &rows, &features, 3);
            let slow = brute_force(&x, &y, &features, 3);
            match (fast, slow) {
                (Some(a), Some((f, t, imp))) => {
                    prop_assert_eq!(a.feature, f);
                    prop_assert_eq!(a.threshold, t);
                    let parent = gini(&histogram(&y, &rows, 3));
                    prop_assert!(imp <= parent + 1e-12);
                }
                (None, None) => {}
                other => prop_assert!(false, "{:?}", other),
            }
        }

        #[test]
        fn positive_scaling_keeps_routing(seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = rng_from(seed);
            let x = Matrix::from_vec(30, 3, (0..90).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let y: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
            let cfg = ForestConfig { trees: 3, ..ForestConfig::default() };
            prop_assume!(y.iter().any(|&c| c != y[0]));
            let a = rf_fit(&x, &y, 3, &cfg, seed).unwrap();
            let xs = x.map(|v| v * scale);
            let b = rf_fit(&xs, &y, 3, &cfg, seed).unwrap();
            for (ta, tb) in a.trees.iter().zip(&b.trees) {
                let fa: Vec<Option<usize>> = ta.nodes.iter().map(|n| match n { Node::Split { feature, .. } => Some(*feature), _ => None }).collect();
                let fb: Vec<Option<usize>> = tb.nodes.iter().map(|n| match n { Node::Split { feature, .. } => Some(*feature), _ => None }).collect();
                prop_assert_eq!(fa, fb);
                for i in 0..30 {
                    prop_assert_eq!(ta.leaf_of(x.row(i)), tb.leaf_of(xs.row(i)));
                }
            }
        }
    }
}
