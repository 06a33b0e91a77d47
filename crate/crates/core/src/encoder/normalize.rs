//! Per-source affine scaling applied before tokenization.

use serde::{Deserialize, Serialize};

use crate::bands::ChannelGroup;
use crate::data::PixelTimeSeries;

/// Bumped whenever the normalization rules change; recorded in checkpoints.
pub const NORMALIZATION_VERSION: u32 = 1;

/// `(x + shift) / scale` with `scale > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub scale: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { shift: 0.0, scale: 1.0 };

    pub fn apply(self, x: f64) -> f64 {
        (x + self.shift) / self.scale
    }

    pub fn invert(self, y: f64) -> f64 {
        y * self.scale - self.shift
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationSpec {
    /// Backscatter in dB.
    pub s1: Affine,
    /// Reflectance digital numbers.
    pub s2: Affine,
    /// Kelvin.
    pub temperature: Affine,
    /// Metres per month.
    pub precipitation: Affine,
    pub elevation: Affine,
    pub slope: Affine,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            s1: Affine { shift: 25.0, scale: 25.0 },
            s2: Affine { shift: 0.0, scale: 10000.0 },
            temperature: Affine { shift: -272.15, scale: 35.0 },
            precipitation: Affine { shift: 0.0, scale: 0.03 },
            elevation: Affine { shift: 0.0, scale: 2000.0 },
            slope: Affine { shift: 0.0, scale: 50.0 },
        }
    }
}

impl NormalizationSpec {
    /// Rule for one channel of a group. NDVI is already unitless and passes through.
    pub fn rule(&self, group: ChannelGroup, channel: usize) -> Affine {
        match group {
            ChannelGroup::S1 => self.s1,
            ChannelGroup::S2Rgb
            | ChannelGroup::S2Re
            | ChannelGroup::S2Nir10
            | ChannelGroup::S2Nir20
            | ChannelGroup::S2Swir => self.s2,
            // ERA5 channel order: precipitation, temperature.
            ChannelGroup::Era5 if channel == 0 => self.precipitation,
            ChannelGroup::Era5 => self.temperature,
            ChannelGroup::Tg if channel == 0 => self.elevation,
            ChannelGroup::Tg => self.slope,
            ChannelGroup::Ndvi | ChannelGroup::Dw | ChannelGroup::Loc => Affine::IDENTITY,
        }
    }

    /// Names of rules whose scale is not a positive finite number.
    pub fn invalid_rules(&self) -> Vec<&'static str> {
        [
            ("s1", self.s1),
            ("s2", self.s2),
            ("temperature", self.temperature),
            ("precipitation", self.precipitation),
            ("elevation", self.elevation),
            ("slope", self.slope),
        ]
        .into_iter()
        .filter(|(_, a)| !(a.scale.is_finite() && a.scale > 0.0 && a.shift.is_finite()))
        .map(|(n, _)| n)
        .collect()
    }
}

/// Scales every present value; missing slots stay missing.
pub fn normalize(series: &PixelTimeSeries, spec: &NormalizationSpec) -> PixelTimeSeries {
    series.map_values(|g, c, x| spec.rule(g, c).apply(x))
}

pub fn denormalize(series: &PixelTimeSeries, spec: &NormalizationSpec) -> PixelTimeSeries {
    series.map_values(|g, c, y| spec.rule(g, c).invert(y))
}
