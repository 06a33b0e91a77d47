//! Hand-crafted features: per-band seasonal medians and harmonic parameters
//! over the 19-band monthly stack.

pub mod harmonic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use harmonic::{fit_harmonic, fit_harmonic_with, FitMethod, HarmonicFit};

use crate::bands::{BandId, Sensor};
use crate::data::PixelTimeSeries;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::preprocess::{compute_indices, median, IndexCoefficients, IndexedMonth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    /// 0-based months of the season; winter wraps around the year.
    pub fn months(self) -> [usize; 3] {
        match self {
            Season::Winter => [0, 1, 11],
            Season::Spring => [2, 3, 4],
            Season::Summer => [5, 6, 7],
            Season::Autumn => [8, 9, 10],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HarmonicParam {
    Beta0,
    Beta1,
    Beta2,
    Beta3,
    Amplitude,
    Phase,
    Rmse,
}

impl HarmonicParam {
    pub const ALL: [HarmonicParam; 7] = [
        HarmonicParam::Beta0,
        HarmonicParam::Beta1,
        HarmonicParam::Beta2,
        HarmonicParam::Beta3,
        HarmonicParam::Amplitude,
        HarmonicParam::Phase,
        HarmonicParam::Rmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HarmonicParam::Beta0 => "beta0",
            HarmonicParam::Beta1 => "beta1",
            HarmonicParam::Beta2 => "beta2",
            HarmonicParam::Beta3 => "beta3",
            HarmonicParam::Amplitude => "amplitude",
            HarmonicParam::Phase => "phase",
            HarmonicParam::Rmse => "rmse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Seasonal(Season),
    Harmonic(HarmonicParam),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureName {
    pub band: BandId,
    pub kind: FeatureKind,
}

impl fmt::Display for FeatureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = match self.kind {
            FeatureKind::Seasonal(s) => s.name(),
            FeatureKind::Harmonic(h) => h.name(),
        };
        write!(f, "{}_{}", self.band, suffix)
    }
}

/// Sensor families a feature vector draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensorSubset {
    S1,
    S2,
    S1S2,
}

impl SensorSubset {
    pub const ALL: [SensorSubset; 3] = [SensorSubset::S1, SensorSubset::S2, SensorSubset::S1S2];

    /// Bands of the subset in registry order. S2 includes the seven indices.
    pub fn bands(self) -> Vec<BandId> {
        BandId::HANDCRAFTED
            .into_iter()
            .filter(|b| match self {
                SensorSubset::S1 => b.sensor() == Sensor::S1,
                SensorSubset::S2 => b.sensor() == Sensor::S2,
                SensorSubset::S1S2 => true,
            })
            .collect()
    }

    pub fn tag(self) -> &'static str {
        match self {
            SensorSubset::S1 => "s1",
            SensorSubset::S2 => "s2",
            SensorSubset::S1S2 => "s1s2",
        }
    }
}

impl fmt::Display for SensorSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for SensorSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '+', '_'], "").as_str() {
            "s1" => Ok(SensorSubset::S1),
            "s2" => Ok(SensorSubset::S2),
            "s1s2" => Ok(SensorSubset::S1S2),
            _ => Err(Error::invalid(format!("unknown sensor subset `{s}` (s1, s2, s1s2)"))),
        }
    }
}

/// Which feature blocks to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSet {
    Seasonal,
    Harmonic,
    All,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Seasonal, FeatureSet::Harmonic, FeatureSet::All];

    pub fn tag(self) -> &'static str {
        match self {
            FeatureSet::Seasonal => "seasonal",
            FeatureSet::Harmonic => "harmonic",
            FeatureSet::All => "all",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "seasonal" | "s" => Ok(FeatureSet::Seasonal),
            "harmonic" | "h" => Ok(FeatureSet::Harmonic),
            "all" | "s+h" => Ok(FeatureSet::All),
            _ => Err(Error::invalid(format!("unknown feature set `{s}` (seasonal, harmonic, all)"))),
        }
    }
}

/// Index-to-name mapping of a feature vector: every seasonal feature
/// (band-major) followed by every harmonic feature (band-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRegistry {
    names: Vec<FeatureName>,
}

impl FeatureRegistry {
    pub fn new(subset: SensorSubset, set: FeatureSet) -> Self {
        let bands = subset.bands();
        let mut names = Vec::new();
        if set != FeatureSet::Harmonic {
            for &band in &bands {
                names.extend(Season::ALL.map(|s| FeatureName {
                    band,
                    kind: FeatureKind::Seasonal(s),
                }));
            }
        }
        if set != FeatureSet::Seasonal {
            for &band in &bands {
                names.extend(HarmonicParam::ALL.map(|h| FeatureName {
                    band,
                    kind: FeatureKind::Harmonic(h),
                }));
            }
        }
        Self { names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[FeatureName] {
        &self.names
    }

    pub fn labels(&self) -> Vec<String> {
        self.names.iter().map(ToString::to_string).collect()
    }
}

/// The 19-band monthly record of one plot.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    pub plot_id: String,
    pub months: Vec<IndexedMonth>,
}

impl BandStack {
    pub fn from_series(series: &PixelTimeSeries, coeffs: &IndexCoefficients) -> Self {
        Self {
            plot_id: series.plot_id.clone(),
            months: series
                .composites()
                .iter()
                .map(|c| compute_indices(c, coeffs))
                .collect(),
        }
    }

    /// Twelve monthly values of one band.
    pub fn signal(&self, band: BandId) -> Vec<Option<f64>> {
        let mut out = vec![None; 12];
        for m in &self.months {
            out[m.month] = m.get(band);
        }
        out
    }
}

/// Seasonal medians of each band (4 per band), missing when a season has
/// no valued month.
pub fn seasonal_medians(stack: &BandStack, bands: &[BandId]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(bands.len() * 4);
    for &band in bands {
        let signal = stack.signal(band);
        for season in Season::ALL {
            let values: Vec<f64> = season.months().iter().filter_map(|&m| signal[m]).collect();
            out.push(median(&values));
        }
    }
    out
}

/// Seven harmonic parameters per band. Failed fits yield missing values and
/// a diagnostic.
pub fn harmonic_features(
    stack: &BandStack,
    bands: &[BandId],
    method: FitMethod,
    diagnostics: &mut Vec<String>,
) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(bands.len() * 7);
    for &band in bands {
        match fit_harmonic_with(&stack.signal(band), band, method) {
            Ok(fit) => out.extend(fit.parameters().map(Some)),
            Err(e) => {
                diagnostics.push(format!("{}: {e}", stack.plot_id));
                out.extend([None; 7]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandcraftedVector {
    pub plot_id: String,
    pub values: Vec<Option<f64>>,
    pub diagnostics: Vec<String>,
}

pub fn build_vector(
    stack: &BandStack,
    subset: SensorSubset,
    set: FeatureSet,
    method: FitMethod,
) -> HandcraftedVector {
    let bands = subset.bands();
    let mut diagnostics = Vec::new();
    let mut values = Vec::new();
    if set != FeatureSet::Harmonic {
        values.extend(seasonal_medians(stack, &bands));
    }
    if set != FeatureSet::Seasonal {
        values.extend(harmonic_features(stack, &bands, method, &mut diagnostics));
    }
    HandcraftedVector {
        plot_id: stack.plot_id.clone(),
        values,
        diagnostics,
    }
}

/// Settings shared by every hand-crafted extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct HandcraftedConfig {
    pub subset: SensorSubset,
    pub set: FeatureSet,
    pub method: FitMethod,
    pub coefficients: IndexCoefficients,
}

impl Default for HandcraftedConfig {
    fn default() -> Self {
        Self {
            subset: SensorSubset::S1S2,
            set: FeatureSet::All,
            method: FitMethod::LeastSquares,
            coefficients: IndexCoefficients::default(),
        }
    }
}

/// Raw (unimputed) feature rows for many plots.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub registry: FeatureRegistry,
    pub plot_ids: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub diagnostics: Vec<String>,
}

pub fn extract_table<'a>(
    series: impl IntoIterator<Item = &'a PixelTimeSeries>,
    config: &HandcraftedConfig,
) -> FeatureTable {
    let mut table = FeatureTable {
        registry: FeatureRegistry::new(config.subset, config.set),
        plot_ids: Vec::new(),
        rows: Vec::new(),
        diagnostics: Vec::new(),
    };
    for s in series {
        let stack = BandStack::from_series(s, &config.coefficients);
        let v = build_vector(&stack, config.subset, config.set, config.method);
        table.plot_ids.push(v.plot_id);
        table.rows.push(v.values);
        table.diagnostics.extend(v.diagnostics);
    }
    table
}

/// Column means of the training rows, used to fill missing features.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputer {
    pub means: Vec<f64>,
}

impl Imputer {
    /// Columns with no observed value fall back to 0.
    pub fn fit(rows: &[Vec<Option<f64>>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let mut sums = vec![0.0; width];
        let mut counts = vec![0usize; width];
        for r in rows {
            for (j, v) in r.iter().enumerate() {
                if let Some(v) = v {
                    sums[j] += v;
                    counts[j] += 1;
                }
            }
        }
        Self {
            means: sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect(),
        }
    }

    pub fn transform(&self, rows: &[Vec<Option<f64>>]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(rows.len() * self.means.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != self.means.len() {
                return Err(Error::Shape(format!(
                    "row {i} has {} features, imputer was fit on {}",
                    r.len(),
                    self.means.len()
                )));
            }
            data.extend(r.iter().zip(&self.means).map(|(v, m)| v.unwrap_or(*m)));
        }
        Matrix::from_vec(rows.len(), self.means.len(), data)
    }
}

/// Writes `plot_id` plus one column per registry name; missing values are empty.
pub fn write_feature_table(path: &Path, table: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["plot_id".to_string()];
    header.extend(table.registry.labels());
    w.write_record(&header)?;
    for (id, row) in table.plot_ids.iter().zip(&table.rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads any `plot_id,<feature>...` table (hand-crafted or deep) into
/// names, plot ids and rows.
pub fn read_feature_csv(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<Option<f64>>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("plot_id") {
        return Err(Error::Header {
            path: path.to_path_buf(),
            expected: "plot_id,<features...>".into(),
            found: header.join(","),
        });
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| Error::Row {
                        row: i + 2,
                        message: format!("`{f}` is not a number"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header[1..].to_vec(), ids, rows))
}
