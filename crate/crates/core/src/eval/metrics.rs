use crate::error::{Error, Result};

/// Counts with rows = reference class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    pub fn with_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.k() {
            return Err(Error::Shape(format!("{} names for {} classes", names.len(), self.k())));
        }
        self.classes = names.to_vec();
        Ok(self)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("reference");
        for c in &self.classes {
            s.push(',');
            s.push_str(&csv_field(c));
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            s.push_str(&csv_field(name));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!("{} reference labels, {} predictions", truth.len(), pred.len())));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        let label = t.max(p);
        if label >= k {
            return Err(Error::LabelRange { label, classes: k });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: (0..k).map(|i| i.to_string()).collect(),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// Reference samples per class.
    pub support: Vec<u64>,
    pub macro_f1: f64,
    /// F1 averaged with support weights.
    pub weighted_f1: f64,
    /// Classes with no references or no predictions; their undefined
    /// ratios are reported as 0.
    pub degenerate: Vec<usize>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(conf: &ConfusionMatrix) -> MetricsReport {
    let k = conf.k();
    let mut r = MetricsReport {
        overall_accuracy: ratio(conf.trace(), conf.total()),
        precision: Vec::with_capacity(k),
        recall: Vec::with_capacity(k),
        f1: Vec::with_capacity(k),
        support: Vec::with_capacity(k),
        macro_f1: 0.0,
        weighted_f1: 0.0,
        degenerate: Vec::new(),
    };
    for c in 0..k {
        let tp = conf.counts[c][c];
        let (refs, preds) = (conf.row_sum(c), conf.col_sum(c));
        let p = ratio(tp, preds);
        let rc = ratio(tp, refs);
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        if refs == 0 || preds == 0 {
            r.degenerate.push(c);
        }
        r.precision.push(p);
        r.recall.push(rc);
        r.f1.push(f);
        r.support.push(refs);
    }
    if k > 0 {
        r.macro_f1 = r.f1.iter().sum::<f64>() / k as f64;
    }
    r.weighted_f1 = r.f1.iter().zip(&r.support).map(|(f, &s)| f * s as f64).sum::<f64>() / conf.total().max(1) as f64;
    r
}

/// Mean and sample standard deviation (n - 1 denominator). A single value
/// has deviation 0; an empty slice gives NaN for both.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
