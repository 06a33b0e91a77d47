//! Twelve-month, multi-source record of one plot.

use crate::bands::{BandId, ChannelGroup};
use crate::data::observation::{Observation, StaticRecord};
use crate::error::{Error, Result};
use crate::preprocess::{compute_ndvi, monthly_median, MonthlyComposite};

pub const MONTHS: usize = 12;
/// Real-valued dynamic channels: S1 (2), S2 (10), NDVI (1), ERA5 (2).
pub const DYNAMIC_CHANNELS: usize = 15;
/// Dynamic World land-cover class used for every month ("trees").
pub const TREE_CLASS: u8 = 1;
/// Size of the Dynamic World class vocabulary.
pub const DW_CLASSES: usize = 9;

const GROUP_COUNT: usize = ChannelGroup::DYNAMIC_REAL.len();

/// Offset of a real-valued dynamic group inside a month's channel array.
pub fn channel_offset(group: ChannelGroup) -> Option<usize> {
    let pos = ChannelGroup::DYNAMIC_REAL.iter().position(|&g| g == group)?;
    Some(
        ChannelGroup::DYNAMIC_REAL[..pos]
            .iter()
            .map(|g| g.width())
            .sum(),
    )
}

fn group_slot(group: ChannelGroup) -> Option<usize> {
    ChannelGroup::DYNAMIC_REAL.iter().position(|&g| g == group)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MonthSlot {
    values: [f64; DYNAMIC_CHANNELS],
    present: [bool; GROUP_COUNT],
    dw: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terrain {
    pub elevation_m: f64,
    pub slope_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoLocation {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StaticAttributes {
    pub terrain: Option<Terrain>,
    pub location: Option<GeoLocation>,
}

/// Point on the unit sphere for a latitude/longitude in degrees.
pub fn unit_sphere(lat_deg: f64, lon_deg: f64) -> [f64; 3] {
    let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

/// One plot's monthly composites for every dynamic group plus static
/// attributes. Each (month, group) slot is either fully valued or missing.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTimeSeries {
    pub plot_id: String,
    months: [MonthSlot; MONTHS],
    pub statics: StaticAttributes,
}

impl PixelTimeSeries {
    pub fn empty(plot_id: impl Into<String>) -> Self {
        Self {
            plot_id: plot_id.into(),
            months: [MonthSlot::default(); MONTHS],
            statics: StaticAttributes::default(),
        }
    }

    fn check_month(month: usize) -> Result<()> {
        if month >= MONTHS {
            Err(Error::Month(month))
        } else {
            Ok(())
        }
    }

    /// Values of a real-valued dynamic group, `None` when missing.
    pub fn group(&self, month: usize, group: ChannelGroup) -> Option<&[f64]> {
        let slot = group_slot(group)?;
        let m = self.months.get(month)?;
        if !m.present[slot] {
            return None;
        }
        let off = channel_offset(group)?;
        Some(&m.values[off..off + group.width()])
    }

    pub fn set_group(&mut self, month: usize, group: ChannelGroup, values: &[f64]) -> Result<()> {
        Self::check_month(month)?;
        let slot = group_slot(group)
            .ok_or_else(|| Error::invalid(format!("{group} is not a real-valued dynamic group")))?;
        if values.len() != group.width() {
            return Err(Error::Shape(format!(
                "{group} takes {} values, got {}",
                group.width(),
                values.len()
            )));
        }
        let off = channel_offset(group).expect("dynamic group");
        let m = &mut self.months[month];
        m.values[off..off + values.len()].copy_from_slice(values);
        m.present[slot] = true;
        Ok(())
    }

    pub fn clear_group(&mut self, month: usize, group: ChannelGroup) {
        if let (Some(slot), Some(m)) = (group_slot(group), self.months.get_mut(month)) {
            let off = channel_offset(group).expect("dynamic group");
            m.values[off..off + group.width()].fill(0.0);
            m.present[slot] = false;
        }
        if group == ChannelGroup::Dw {
            if let Some(m) = self.months.get_mut(month) {
                m.dw = None;
            }
        }
    }

    /// Value of a single band, if its group is present that month.
    pub fn band(&self, month: usize, band: BandId) -> Option<f64> {
        let group = band.group()?;
        let idx = group.bands().iter().position(|&b| b == band)?;
        self.group(month, group).map(|v| v[idx])
    }

    pub fn dw(&self, month: usize) -> Option<u8> {
        self.months.get(month).and_then(|m| m.dw)
    }

    pub fn set_dw(&mut self, month: usize, class: Option<u8>) -> Result<()> {
        Self::check_month(month)?;
        if let Some(c) = class {
            if c as usize >= DW_CLASSES {
                return Err(Error::invalid(format!("DW class {c} outside 0..{DW_CLASSES}")));
            }
        }
        self.months[month].dw = class;
        Ok(())
    }

    /// True if the group is present in at least one month (statics: present at all).
    pub fn has_group(&self, group: ChannelGroup) -> bool {
        match group {
            ChannelGroup::Tg => self.statics.terrain.is_some(),
            ChannelGroup::Loc => self.statics.location.is_some(),
            ChannelGroup::Dw => (0..MONTHS).any(|m| self.dw(m).is_some()),
            g => (0..MONTHS).any(|m| self.group(m, g).is_some()),
        }
    }

    pub fn is_present(&self, month: usize, group: ChannelGroup) -> bool {
        match group {
            ChannelGroup::Dw => self.dw(month).is_some(),
            ChannelGroup::Tg | ChannelGroup::Loc => self.has_group(group),
            g => self.group(month, g).is_some(),
        }
    }

    /// Drops a group for the whole year.
    pub fn drop_group(&mut self, group: ChannelGroup) {
        match group {
            ChannelGroup::Tg => self.statics.terrain = None,
            ChannelGroup::Loc => self.statics.location = None,
            g => (0..MONTHS).for_each(|m| self.clear_group(m, g)),
        }
    }

    /// Cartesian location on the unit sphere.
    pub fn loc(&self) -> Option<[f64; 3]> {
        self.statics
            .location
            .map(|g| unit_sphere(g.lat, g.lon))
    }

    /// Applies `f(group, channel index, value)` to every present real value
    /// and terrain attribute. Used by normalization.
    pub(crate) fn map_values(&self, f: impl Fn(ChannelGroup, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for m in out.months.iter_mut() {
            for (slot, &group) in ChannelGroup::DYNAMIC_REAL.iter().enumerate() {
                if m.present[slot] {
                    let off = channel_offset(group).expect("dynamic group");
                    for c in 0..group.width() {
                        m.values[off + c] = f(group, c, m.values[off + c]);
                    }
                }
            }
        }
        if let Some(t) = out.statics.terrain.as_mut() {
            t.elevation_m = f(ChannelGroup::Tg, 0, t.elevation_m);
            t.slope_deg = f(ChannelGroup::Tg, 1, t.slope_deg);
        }
        out
    }

    /// Monthly composites of the raw S1/S2 bands, NDVI and climate variables.
    pub fn composites(&self) -> Vec<MonthlyComposite> {
        (0..MONTHS)
            .map(|m| {
                let mut c = MonthlyComposite::new(self.plot_id.clone(), m);
                for band in BandId::RAW.iter().chain(&[BandId::Ndvi]).chain(BandId::CLIMATE.iter()) {
                    if let Some(v) = self.band(m, *band) {
                        c.set(*band, v, 1);
                    }
                }
                c
            })
            .collect()
    }
}

/// Builds a series from the twelve monthly composites of one plot.
/// NDVI comes from the B8/B4 medians; DW is the constant tree class.
pub fn assemble_from_composites(
    plot_id: &str,
    composites: &[MonthlyComposite],
    statics: &StaticRecord,
) -> Result<PixelTimeSeries> {
    if !(-90.0..=90.0).contains(&statics.lat) {
        return Err(Error::Latitude(statics.lat));
    }
    for id in composites
        .iter()
        .map(|c| c.plot_id.as_str())
        .chain(std::iter::once(statics.plot_id.as_str()))
    {
        if id != plot_id {
            return Err(Error::MixedPlots {
                first: plot_id.to_string(),
                other: id.to_string(),
            });
        }
    }
    let mut series = PixelTimeSeries::empty(plot_id);
    for c in composites {
        let month = c.month;
        for group in ChannelGroup::DYNAMIC_REAL {
            if group == ChannelGroup::Ndvi {
                continue;
            }
            let values: Option<Vec<f64>> = group.bands().iter().map(|b| c.get(*b)).collect();
            if let Some(values) = values {
                series.set_group(month, group, &values)?;
            }
        }
        if let (Some(b8), Some(b4)) = (c.get(BandId::B8), c.get(BandId::B4)) {
            series.set_group(month, ChannelGroup::Ndvi, &[compute_ndvi(b8, b4)])?;
        }
    }
    for m in 0..MONTHS {
        series.set_dw(m, Some(TREE_CLASS))?;
    }
    series.statics.location = Some(GeoLocation {
        lat: statics.lat,
        lon: statics.lon,
    });
    if let (Some(elevation_m), Some(slope_deg)) = (statics.elevation_m, statics.slope_deg) {
        series.statics.terrain = Some(Terrain {
            elevation_m,
            slope_deg,
        });
    }
    Ok(series)
}

/// Composites one plot's (cloud-filtered) observations into a series.
pub fn assemble_pixel(observations: &[Observation], statics: &StaticRecord) -> Result<PixelTimeSeries> {
    let plot_id = statics.plot_id.as_str();
    if let Some(o) = observations.iter().find(|o| o.plot_id != plot_id) {
        return Err(Error::MixedPlots {
            first: plot_id.to_string(),
            other: o.plot_id.clone(),
        });
    }
    let composites = monthly_median(observations);
    assemble_from_composites(plot_id, &composites, statics)
}
