use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::observation::{read_labels, read_statics, write_labels, write_statics, StaticRecord};
use super::pixel::{assemble_from_composites, PixelTimeSeries};
use crate::error::{Error, Result};
use crate::preprocess::{read_composites, write_composites, MonthlyComposite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemaTag {
    Comb13,
    Simb7,
    Siba7,
    Synthetic,
}

impl SchemaTag {
    pub fn name(self) -> &'static str {
        match self {
            SchemaTag::Comb13 => "COMB-13",
            SchemaTag::Simb7 => "SIMB-7",
            SchemaTag::Siba7 => "SIBA-7",
            SchemaTag::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for SchemaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemaTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "comb-13" | "comb" => Ok(SchemaTag::Comb13),
            "simb-7" | "simb" => Ok(SchemaTag::Simb7),
            "siba-7" | "siba" => Ok(SchemaTag::Siba7),
            "synthetic" => Ok(SchemaTag::Synthetic),
            _ => Err(Error::invalid(format!("unknown dataset tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpeciesLabel {
    pub class_id: usize,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub series: PixelTimeSeries,
    pub label: SpeciesLabel,
}

/// Labelled series. Class ids are dense and follow the lexicographic
/// order of the class names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub schema: SchemaTag,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn from_named(pairs: Vec<(PixelTimeSeries, String)>, schema: SchemaTag) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        let class_names: Vec<String> = pairs
            .iter()
            .map(|(_, c)| c.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let ids: BTreeMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let samples = pairs
            .iter()
            .map(|(series, name)| Sample {
                series: series.clone(),
                label: SpeciesLabel {
                    class_id: ids[name.as_str()],
                    class_name: name.clone(),
                },
            })
            .collect();
        Ok(Self {
            samples,
            schema,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label.class_id).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for s in &self.samples {
            counts[s.label.class_id] += 1;
        }
        counts
    }

    pub fn series(&self) -> impl Iterator<Item = &PixelTimeSeries> {
        self.samples.iter().map(|s| &s.series)
    }

    /// Samples at `indices`, keeping the full class vocabulary.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            schema: self.schema,
            class_names: self.class_names.clone(),
        }
    }
}

/// File names of an on-disk dataset.
pub const COMPOSITES_FILE: &str = "composites.csv";
pub const STATICS_FILE: &str = "statics.csv";
pub const LABELS_FILE: &str = "labels.csv";

/// Static record of a series (location is required on disk).
pub fn static_record(series: &PixelTimeSeries) -> StaticRecord {
    let loc = series.statics.location;
    StaticRecord {
        plot_id: series.plot_id.clone(),
        lat: loc.map_or(0.0, |l| l.lat),
        lon: loc.map_or(0.0, |l| l.lon),
        elevation_m: series.statics.terrain.map(|t| t.elevation_m),
        slope_deg: series.statics.terrain.map(|t| t.slope_deg),
    }
}

/// Writes composites, statics and labels into `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let composites: Vec<MonthlyComposite> = dataset
        .series()
        .flat_map(PixelTimeSeries::composites)
        .collect();
    write_composites(&dir.join(COMPOSITES_FILE), &composites)?;
    let statics: Vec<StaticRecord> = dataset.series().map(static_record).collect();
    write_statics(&dir.join(STATICS_FILE), &statics)?;
    let labels: Vec<(String, String)> = dataset
        .samples
        .iter()
        .map(|s| (s.series.plot_id.clone(), s.label.class_name.clone()))
        .collect();
    write_labels(&dir.join(LABELS_FILE), &labels)
}

/// Joins composites with static records; the order follows `statics`.
pub fn series_from_files(composites: &Path, statics: &Path) -> Result<Vec<PixelTimeSeries>> {
    let mut by_plot: BTreeMap<String, Vec<MonthlyComposite>> = BTreeMap::new();
    for c in read_composites(composites)? {
        by_plot.entry(c.plot_id.clone()).or_default().push(c);
    }
    read_statics(statics)?
        .iter()
        .map(|rec| {
            let comps = by_plot.get(&rec.plot_id).map(Vec::as_slice).unwrap_or(&[]);
            assemble_from_composites(&rec.plot_id, comps, rec)
        })
        .collect()
}

/// Reads a dataset written by [`write_dataset`] (or assembled by hand).
pub fn read_dataset(dir: &Path, schema: SchemaTag) -> Result<Dataset> {
    let series = series_from_files(&dir.join(COMPOSITES_FILE), &dir.join(STATICS_FILE))?;
    let labels: BTreeMap<String, String> = read_labels(&dir.join(LABELS_FILE))?.into_iter().collect();
    let mut pairs = Vec::with_capacity(series.len());
    for s in series {
        let class = labels
            .get(&s.plot_id)
            .ok_or_else(|| Error::invalid(format!("plot `{}` has no label", s.plot_id)))?
            .clone();
        pairs.push((s, class));
    }
    Dataset::from_named(pairs, schema)
}
