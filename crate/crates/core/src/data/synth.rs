//! Synthetic phenology datasets shaped like the forest-inventory label sets.
//!
//! Each class is described by a canopy-greenness curve: a baseline plus an
//! annual cosine, optionally overlaid with a semi-annual cosine that makes
//! the curve double-peaked. Reflectances mix a soil/litter spectrum with a
//! class-specific vegetation spectrum in proportion to the greenness;
//! backscatter follows the same curve. Climate, terrain and location carry
//! no class information.

use std::f64::consts::PI;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::{Dataset, SchemaTag};
use super::observation::Observation;
use super::pixel::{GeoLocation, PixelTimeSeries, Terrain, MONTHS, TREE_CLASS};
use crate::bands::{BandId, ChannelGroup};
use crate::error::{Error, Result};
use crate::preprocess::compute_ndvi;
use crate::rng::rng_for;

/// Soil and litter reflectance (0-1), S2 band order.
const BACKGROUND: [f64; 10] = [0.06, 0.09, 0.11, 0.14, 0.17, 0.19, 0.21, 0.22, 0.28, 0.22];
/// Green canopy reflectance (0-1), S2 band order.
const CANOPY: [f64; 10] = [0.025, 0.055, 0.03, 0.09, 0.26, 0.33, 0.37, 0.39, 0.19, 0.09];

#[derive(Debug, Clone, PartialEq)]
pub struct SemiAnnual {
    pub amplitude: f64,
    /// Month (0 = January, fractional) of one of the two peaks.
    pub peak_month: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPhenology {
    pub name: String,
    pub count: usize,
    /// Mean canopy greenness over the year, in [0, 1].
    pub baseline: f64,
    pub amplitude: f64,
    /// Month (0 = January, fractional) of the annual peak.
    pub peak_month: f64,
    /// Second harmonic; `Some` makes the class double-peaked.
    pub semi_annual: Option<SemiAnnual>,
    /// Multiplier on the canopy spectrum, S2 band order.
    pub spectral: [f64; 10],
    pub vv_db: f64,
    pub vh_db: f64,
    /// Backscatter change (dB) per unit of greenness above baseline.
    pub s1_gain_db: f64,
}

impl ClassPhenology {
    fn greenness_range(&self) -> (f64, f64) {
        let extra = self.semi_annual.as_ref().map_or(0.0, |s| s.amplitude.abs());
        let swing = self.amplitude.abs() + extra;
        (self.baseline - swing, self.baseline + swing)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Per-pixel shift of the baseline.
    pub baseline_sd: f64,
    /// Per-pixel relative scaling of the amplitudes.
    pub amplitude_rel_sd: f64,
    /// Per-pixel shift of the peak timing, months.
    pub timing_sd_months: f64,
    /// Per-pixel relative scaling of the canopy spectrum.
    pub spectral_rel_sd: f64,
    /// Month-to-month greenness noise.
    pub greenness_sd: f64,
    /// Month-to-month relative reflectance noise.
    pub reflectance_rel_sd: f64,
    pub backscatter_sd_db: f64,
    /// Probability a month has no cloud-free S2 composite.
    pub cloudy_month_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            baseline_sd: 0.04,
            amplitude_rel_sd: 0.18,
            timing_sd_months: 0.6,
            spectral_rel_sd: 0.06,
            greenness_sd: 0.03,
            reflectance_rel_sd: 0.04,
            backscatter_sd_db: 0.8,
            cloudy_month_prob: 0.06,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub schema: SchemaTag,
    pub classes: Vec<ClassPhenology>,
    pub noise: NoiseConfig,
}

fn class(
    name: &str,
    count: usize,
    (baseline, amplitude, peak_month): (f64, f64, f64),
    semi_annual: Option<(f64, f64)>,
    spectral: [f64; 10],
    (vv_db, vh_db, s1_gain_db): (f64, f64, f64),
) -> ClassPhenology {
    ClassPhenology {
        name: name.to_string(),
        count,
        baseline,
        amplitude,
        peak_month,
        semi_annual: semi_annual.map(|(amplitude, peak_month)| SemiAnnual {
            amplitude,
            peak_month,
        }),
        spectral,
        vv_db,
        vh_db,
        s1_gain_db,
    }
}

const NEEDLE: [f64; 10] = [0.9, 0.85, 0.9, 0.85, 0.8, 0.78, 0.76, 0.76, 0.8, 0.85];
const DARK_NEEDLE: [f64; 10] = [0.85, 0.8, 0.85, 0.8, 0.72, 0.7, 0.68, 0.68, 0.72, 0.8];
const BROADLEAF: [f64; 10] = [1.0; 10];
const BRIGHT_BROADLEAF: [f64; 10] = [1.0, 1.05, 1.0, 1.05, 1.08, 1.1, 1.12, 1.12, 1.0, 0.95];

/// Template curves of the seven aggregated classes, keyed by name.
fn aggregated(name: &str, count: usize) -> ClassPhenology {
    match name {
        "Pinus" => class(name, count, (0.62, 0.06, 6.5), None, NEEDLE, (-8.5, -14.5, 1.0)),
        "DarkConifer" => class(name, count, (0.64, 0.05, 6.0), Some((0.03, 1.0)), DARK_NEEDLE, (-8.0, -14.0, 1.0)),
        "Larix" => class(name, count, (0.48, 0.24, 6.0), Some((0.06, 5.0)), NEEDLE, (-8.8, -15.0, 2.0)),
        "Quercus" => class(name, count, (0.46, 0.26, 6.8), Some((0.07, 7.5)), BROADLEAF, (-9.0, -15.5, 2.5)),
        "Beech" => class(name, count, (0.46, 0.28, 6.0), Some((0.09, 4.5)), BROADLEAF, (-9.2, -15.8, 2.5)),
        "Populus" => class(name, count, (0.45, 0.28, 6.5), Some((0.1, 2.5)), BRIGHT_BROADLEAF, (-9.4, -16.0, 3.0)),
        "Other Broadleaves" => class(name, count, (0.46, 0.25, 6.6), Some((0.06, 0.5)), BROADLEAF, (-9.1, -15.6, 2.5)),
        other => unreachable!("no template for {other}"),
    }
}

/// Nudges a template so that sub-species of one aggregate differ slightly.
fn variant(mut c: ClassPhenology, name: &str, count: usize, shift: f64) -> ClassPhenology {
    c.name = name.to_string();
    c.count = count;
    c.peak_month += shift;
    c.amplitude *= 1.0 + 0.1 * shift;
    c.vh_db += 0.5 * shift;
    c
}

impl SynthConfig {
    /// Seven imbalanced classes with the SIMB sample counts (1,479 total).
    pub fn simb() -> Self {
        let counts = [
            ("Pinus", 603),
            ("Larix", 56),
            ("Quercus", 288),
            ("Beech", 58),
            ("Populus", 72),
            ("Other Broadleaves", 242),
            ("DarkConifer", 160),
        ];
        Self {
            schema: SchemaTag::Simb7,
            classes: counts.iter().map(|&(n, c)| aggregated(n, c)).collect(),
            noise: NoiseConfig::default(),
        }
    }

    /// Seven balanced classes of 1,970 samples (13,790 total).
    pub fn siba() -> Self {
        let mut cfg = Self::simb();
        cfg.schema = SchemaTag::Siba7;
        for c in &mut cfg.classes {
            c.count = 1970;
        }
        cfg
    }

    /// Thirteen dominant-species classes with the COMB counts (1,462 total).
    pub fn comb() -> Self {
        let species = [
            ("Pinus sylvestris", 513, "Pinus", 0.0),
            ("Other Pinus", 89, "Pinus", 0.4),
            ("Larix", 56, "Larix", 0.0),
            ("Quercus robur petraea", 255, "Quercus", 0.0),
            ("Other Quercus", 33, "Quercus", -0.4),
            ("Fagus", 58, "Beech", 0.0),
            ("Populus", 72, "Populus", 0.0),
            ("Alnus", 30, "Other Broadleaves", -0.5),
            ("Betula", 58, "Other Broadleaves", -0.2),
            ("Fraxinus", 40, "Other Broadleaves", 0.3),
            ("Other broadleaved", 102, "Other Broadleaves", 0.0),
            ("Pseudotsuga menziesii", 90, "DarkConifer", 0.0),
            ("Picea", 66, "DarkConifer", 0.4),
        ];
        Self {
            schema: SchemaTag::Comb13,
            classes: species
                .iter()
                .map(|&(name, count, parent, shift)| variant(aggregated(parent, 0), name, count, shift))
                .collect(),
            noise: NoiseConfig::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "simb" => Ok(Self::simb()),
            "siba" => Ok(Self::siba()),
            "comb" => Ok(Self::comb()),
            other => Err(Error::invalid(format!("unknown preset `{other}` (comb, simb, siba)"))),
        }
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// Same classes with counts scaled by `factor` (at least 2 per class).
    pub fn scaled(mut self, factor: f64) -> Self {
        for c in &mut self.classes {
            c.count = ((c.count as f64 * factor).round() as usize).max(2);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.classes.is_empty() {
            problems.push("no classes configured".to_string());
        }
        for c in &self.classes {
            if c.count == 0 {
                problems.push(format!("class `{}` has a non-positive sample count", c.name));
            }
            let (lo, hi) = c.greenness_range();
            if lo < 0.0 || hi > 1.0 {
                problems.push(format!(
                    "class `{}` greenness spans [{lo:.3}, {hi:.3}], outside [0, 1]",
                    c.name
                ));
            }
            if c.spectral.iter().any(|&s| s <= 0.0 || s * CANOPY.iter().cloned().fold(0.0, f64::max) > 1.0) {
                problems.push(format!("class `{}` canopy spectrum leaves (0, 1]", c.name));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Deterministic dataset for `seed`; samples are grouped by class in
/// configuration order.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut pairs = Vec::with_capacity(config.total());
    let mut next_id = 0usize;
    for (ci, class) in config.classes.iter().enumerate() {
        let mut rng = rng_for(seed, "synth-class", ci as u64);
        for _ in 0..class.count {
            next_id += 1;
            let series = generate_pixel(&format!("SYN{next_id:05}"), class, &config.noise, &mut rng);
            pairs.push((series, class.name.clone()));
        }
    }
    Dataset::from_named(pairs, config.schema)
}

fn gauss(rng: &mut impl Rng, sd: f64) -> f64 {
    sd * rng.sample::<f64, _>(StandardNormal)
}

fn generate_pixel(plot_id: &str, class: &ClassPhenology, noise: &NoiseConfig, rng: &mut impl Rng) -> PixelTimeSeries {

    let baseline = class.baseline + gauss(rng, noise.baseline_sd);
    let amp_scale = 1.0 + gauss(rng, noise.amplitude_rel_sd);
    let timing = gauss(rng, noise.timing_sd_months);
    let spectral: Vec<f64> = class
        .spectral
        .iter()
        .map(|s| s * (1.0 + gauss(rng, noise.spectral_rel_sd)))
        .collect();
    let brightness = 1.0 + gauss(rng, noise.spectral_rel_sd);
    let vv_level = class.vv_db + gauss(rng, 0.5);
    let vh_level = class.vh_db + gauss(rng, 0.5);
    let temp_offset = gauss(rng, 0.7);
    let precip_scale = 1.0 + gauss(rng, 0.1);

    let mut series = PixelTimeSeries::empty(plot_id);
    for m in 0..MONTHS {
        let t = m as f64;
        let annual = class.amplitude * amp_scale * (2.0 * PI * (t - class.peak_month - timing) / 12.0).cos();
        let semi = class.semi_annual.as_ref().map_or(0.0, |s| {
            s.amplitude * amp_scale * (4.0 * PI * (t - s.peak_month - timing) / 12.0).cos()
        });
        let green = (baseline + annual + semi + gauss(rng, noise.greenness_sd)).clamp(0.0, 1.0);

        let mut s2 = [0.0; 10];
        for b in 0..10 {
            let refl = (1.0 - green) * BACKGROUND[b] * brightness + green * CANOPY[b] * spectral[b];
            s2[b] = (refl * (1.0 + gauss(rng, noise.reflectance_rel_sd)) * 10_000.0).max(1.0).round();
        }
        let lift = green - baseline;
        let vv = vv_level + class.s1_gain_db * lift + gauss(rng, noise.backscatter_sd_db);
        let vh = vh_level + 1.3 * class.s1_gain_db * lift + gauss(rng, noise.backscatter_sd_db);
        let temperature = 283.5 - 7.5 * (2.0 * PI * t / 12.0).cos() + temp_offset + gauss(rng, 0.8);
        let precipitation = ((0.065 + 0.015 * (2.0 * PI * (t - 8.0) / 12.0).cos()) * precip_scale
            + gauss(rng, 0.01))
        .max(0.008);

        series.set_group(m, ChannelGroup::S1, &[vv, vh]).expect("width");
        series.set_group(m, ChannelGroup::Era5, &[precipitation, temperature]).expect("width");
        if rng.gen::<f64>() >= noise.cloudy_month_prob {
            for group in [
                ChannelGroup::S2Rgb,
                ChannelGroup::S2Re,
                ChannelGroup::S2Nir10,
                ChannelGroup::S2Nir20,
                ChannelGroup::S2Swir,
            ] {
                let values: Vec<f64> = group
                    .bands()
                    .iter()
                    .map(|b| s2[BandId::S2.iter().position(|x| x == b).expect("S2 band")])
                    .collect();
                series.set_group(m, group, &values).expect("width");
            }
            series
                .set_group(m, ChannelGroup::Ndvi, &[compute_ndvi(s2[6], s2[2])])
                .expect("width");
        }
        series.set_dw(m, Some(TREE_CLASS)).expect("valid class");
    }
    let elevation_m = (15.0 + 25.0 * rng.sample::<f64, _>(StandardNormal)).clamp(-27.0, 331.0);
    let slope_deg = (2.5 * rng.sample::<f64, _>(StandardNormal)).abs().min(39.3);
    series.statics.terrain = Some(Terrain {
        elevation_m,
        slope_deg,
    });
    series.statics.location = Some(GeoLocation {
        lat: rng.gen_range(51.3..53.4),
        lon: rng.gen_range(3.6..7.1),
    });
    series
}

/// Expands a series into raw observations whose cloud-filtered monthly
/// medians reproduce it exactly: three clear acquisitions per month and
/// band (plus one cloudy S2 acquisition with a corrupted value) and one
/// climate value per month.
pub fn synth_observations(series: &PixelTimeSeries, seed: u64) -> Vec<Observation> {
    let mut rng = rng_for(seed, &series.plot_id, 0);
    let mut out = Vec::new();
    for m in 0..MONTHS {
        let day = |d: u32| NaiveDate::from_ymd_opt(2020, m as u32 + 1, d).expect("valid day");
        for band in BandId::RAW {
            let Some(v) = series.band(m, band) else { continue };
            let s2 = band.is_raw_s2();
            let delta = if s2 { (0.05 * v).max(1.0) } else { 0.4 };
            for (d, value) in [(5, v - delta), (15, v), (25, v + delta)] {
                let value = if s2 { value.max(0.0) } else { value };
                out.push(Observation {
                    plot_id: series.plot_id.clone(),
                    date: day(d),
                    band,
                    value,
                    cloud_prob: s2.then(|| rng.gen_range(0.0..=65.0)),
                });
            }
            if s2 {
                out.push(Observation {
                    plot_id: series.plot_id.clone(),
                    date: day(20),
                    band,
                    value: v * 3.0 + 2000.0,
                    cloud_prob: Some(rng.gen_range(65.5..=100.0)),
                });
            }
        }
        for band in BandId::CLIMATE {
            if let Some(v) = series.band(m, band) {
                out.push(Observation {
                    plot_id: series.plot_id.clone(),
                    date: day(1),
                    band,
                    value: v,
                    cloud_prob: None,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simb_shape() {
        let cfg = SynthConfig::simb();
        assert_eq!(cfg.total(), 1479);
        let ds = synth_generate(&cfg.clone().scaled(0.1), 42).unwrap();
        assert_eq!(ds.class_count(), 7);
        assert_eq!(SynthConfig::comb().total(), 1462);
        assert_eq!(SynthConfig::comb().classes.len(), 13);
        assert_eq!(SynthConfig::siba().total(), 13_790);
    }

    #[test]
    fn rejects_bad_classes() {
        let mut cfg = SynthConfig::simb();
        cfg.classes[0].count = 0;
        cfg.classes[1].amplitude = 0.9;
        match cfg.validate() {
            Err(Error::Config(p)) => assert_eq!(p.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn summer_peak_class_is_greener_in_june() {
        let mut cfg = SynthConfig::simb().scaled(0.2);
        cfg.classes.retain(|c| c.name == "Quercus");
        let ds = synth_generate(&cfg, 9).unwrap();
        let mean = |m: usize| {
            let v: Vec<f64> = ds.series().filter_map(|s| s.band(m, BandId::Ndvi)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(5) > mean(0), "june {} january {}", mean(5), mean(0));
    }
}
