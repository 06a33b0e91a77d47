//! Band and channel-group identifiers.
//!
//! Raw bands come from Sentinel-1 (VV, VH) and Sentinel-2 (ten optical
//! bands). Seven spectral indices are derived from the Sentinel-2 bands,
//! and climate/terrain variables complete the encoder inputs.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Every band the toolkit knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BandId {
    VV,
    VH,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    B8A,
    B11,
    B12,
    Ndvi,
    Nbr,
    Evi,
    Tcb,
    Tcw,
    Tcg,
    Tca,
    /// ERA5 2 m air temperature, kelvin.
    Temperature2m,
    /// ERA5 monthly total precipitation, metres.
    TotalPrecipitation,
    /// SRTM elevation, metres.
    Elevation,
    /// SRTM slope, degrees.
    Slope,
}

/// Sensor family a band belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sensor {
    S1,
    S2,
    Climate,
    Terrain,
}

impl BandId {
    pub const S1: [BandId; 2] = [BandId::VV, BandId::VH];

    pub const S2: [BandId; 10] = [
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B11,
        BandId::B12,
    ];

    pub const RAW: [BandId; 12] = [
        BandId::VV,
        BandId::VH,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B11,
        BandId::B12,
    ];

    pub const INDICES: [BandId; 7] = [
        BandId::Ndvi,
        BandId::Nbr,
        BandId::Evi,
        BandId::Tcb,
        BandId::Tcw,
        BandId::Tcg,
        BandId::Tca,
    ];

    /// The 19 bands hand-crafted features are computed from: raw bands first, then indices.
    pub const HANDCRAFTED: [BandId; 19] = [
        BandId::VV,
        BandId::VH,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B11,
        BandId::B12,
        BandId::Ndvi,
        BandId::Nbr,
        BandId::Evi,
        BandId::Tcb,
        BandId::Tcw,
        BandId::Tcg,
        BandId::Tca,
    ];

    pub const CLIMATE: [BandId; 2] = [BandId::TotalPrecipitation, BandId::Temperature2m];

    pub const TERRAIN: [BandId; 2] = [BandId::Elevation, BandId::Slope];

    pub const ALL: [BandId; 23] = [
        BandId::VV,
        BandId::VH,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8A,
        BandId::B11,
        BandId::B12,
        BandId::Ndvi,
        BandId::Nbr,
        BandId::Evi,
        BandId::Tcb,
        BandId::Tcw,
        BandId::Tcg,
        BandId::Tca,
        BandId::Temperature2m,
        BandId::TotalPrecipitation,
        BandId::Elevation,
        BandId::Slope,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BandId::VV => "VV",
            BandId::VH => "VH",
            BandId::B2 => "B2",
            BandId::B3 => "B3",
            BandId::B4 => "B4",
            BandId::B5 => "B5",
            BandId::B6 => "B6",
            BandId::B7 => "B7",
            BandId::B8 => "B8",
            BandId::B8A => "B8A",
            BandId::B11 => "B11",
            BandId::B12 => "B12",
            BandId::Ndvi => "NDVI",
            BandId::Nbr => "NBR",
            BandId::Evi => "EVI",
            BandId::Tcb => "TCB",
            BandId::Tcw => "TCW",
            BandId::Tcg => "TCG",
            BandId::Tca => "TCA",
            BandId::Temperature2m => "temperature_2m",
            BandId::TotalPrecipitation => "total_precipitation",
            BandId::Elevation => "elevation",
            BandId::Slope => "slope",
        }
    }

    /// Sensor family. Spectral indices count as Sentinel-2 since they derive from it.
    pub fn sensor(self) -> Sensor {
        match self {
            BandId::VV | BandId::VH => Sensor::S1,
            BandId::Temperature2m | BandId::TotalPrecipitation => Sensor::Climate,
            BandId::Elevation | BandId::Slope => Sensor::Terrain,
            _ => Sensor::S2,
        }
    }

    pub fn is_raw_s2(self) -> bool {
        Self::S2.contains(&self)
    }

    pub fn is_index(self) -> bool {
        Self::INDICES.contains(&self)
    }

    /// Encoder channel group the band feeds, if any. NBR, EVI and the
    /// tasseled-cap components are hand-crafted only.
    pub fn group(self) -> Option<ChannelGroup> {
        ChannelGroup::ALL
            .into_iter()
            .find(|g| g.bands().contains(&self))
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        BandId::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| Error::invalid(format!("unknown band `{trimmed}`")))
    }
}

/// Token groups of the transformer encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChannelGroup {
    S1,
    S2Rgb,
    S2Re,
    S2Nir10,
    S2Nir20,
    S2Swir,
    Ndvi,
    Era5,
    Dw,
    Tg,
    Loc,
}

impl ChannelGroup {
    pub const ALL: [ChannelGroup; 11] = [
        ChannelGroup::S1,
        ChannelGroup::S2Rgb,
        ChannelGroup::S2Re,
        ChannelGroup::S2Nir10,
        ChannelGroup::S2Nir20,
        ChannelGroup::S2Swir,
        ChannelGroup::Ndvi,
        ChannelGroup::Era5,
        ChannelGroup::Dw,
        ChannelGroup::Tg,
        ChannelGroup::Loc,
    ];

    pub const DYNAMIC: [ChannelGroup; 9] = [
        ChannelGroup::S1,
        ChannelGroup::S2Rgb,
        ChannelGroup::S2Re,
        ChannelGroup::S2Nir10,
        ChannelGroup::S2Nir20,
        ChannelGroup::S2Swir,
        ChannelGroup::Ndvi,
        ChannelGroup::Era5,
        ChannelGroup::Dw,
    ];

    /// Real-valued dynamic groups, in storage order of [`crate::data::PixelTimeSeries`].
    pub const DYNAMIC_REAL: [ChannelGroup; 8] = [
        ChannelGroup::S1,
        ChannelGroup::S2Rgb,
        ChannelGroup::S2Re,
        ChannelGroup::S2Nir10,
        ChannelGroup::S2Nir20,
        ChannelGroup::S2Swir,
        ChannelGroup::Ndvi,
        ChannelGroup::Era5,
    ];

    pub const STATIC: [ChannelGroup; 2] = [ChannelGroup::Tg, ChannelGroup::Loc];

    pub fn bands(self) -> &'static [BandId] {
        match self {
            ChannelGroup::S1 => &[BandId::VV, BandId::VH],
            ChannelGroup::S2Rgb => &[BandId::B2, BandId::B3, BandId::B4],
            ChannelGroup::S2Re => &[BandId::B5, BandId::B6, BandId::B7],
            ChannelGroup::S2Nir10 => &[BandId::B8],
            ChannelGroup::S2Nir20 => &[BandId::B8A],
            ChannelGroup::S2Swir => &[BandId::B11, BandId::B12],
            ChannelGroup::Ndvi => &[BandId::Ndvi],
            ChannelGroup::Era5 => &[BandId::TotalPrecipitation, BandId::Temperature2m],
            ChannelGroup::Tg => &[BandId::Elevation, BandId::Slope],
            ChannelGroup::Dw | ChannelGroup::Loc => &[],
        }
    }

    /// Input width of the group's projection. DW is categorical and Loc is
    /// the 3-d unit vector derived from latitude/longitude.
    pub fn width(self) -> usize {
        match self {
            ChannelGroup::Dw => 1,
            ChannelGroup::Loc => 3,
            g => g.bands().len(),
        }
    }

    pub fn is_dynamic(self) -> bool {
        !matches!(self, ChannelGroup::Tg | ChannelGroup::Loc)
    }

    /// Position in [`ChannelGroup::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ChannelGroup::S1 => "S1",
            ChannelGroup::S2Rgb => "S2_RGB",
            ChannelGroup::S2Re => "S2_RE",
            ChannelGroup::S2Nir10 => "S2_NIR_10",
            ChannelGroup::S2Nir20 => "S2_NIR_20",
            ChannelGroup::S2Swir => "S2_SWIR",
            ChannelGroup::Ndvi => "NDVI",
            ChannelGroup::Era5 => "ERA5",
            ChannelGroup::Dw => "DW",
            ChannelGroup::Tg => "TG",
            ChannelGroup::Loc => "Loc",
        }
    }
}

impl fmt::Display for ChannelGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_cardinalities() {
        assert_eq!(BandId::RAW.len(), 12);
        assert_eq!(BandId::INDICES.len(), 7);
        assert_eq!(BandId::HANDCRAFTED.len(), 19);
        let mut dedup = BandId::HANDCRAFTED.to_vec();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 19);
    }

    #[test]
    fn group_cardinalities() {
        assert_eq!(ChannelGroup::DYNAMIC.len(), 9);
        assert_eq!(ChannelGroup::STATIC.len(), 2);
        assert!(ChannelGroup::DYNAMIC.iter().all(|g| g.is_dynamic()));
        assert!(ChannelGroup::STATIC.iter().all(|g| !g.is_dynamic()));
    }

    #[test]
    fn encoder_bands_map_to_exactly_one_group() {
        let encoder_bands = BandId::RAW
            .iter()
            .chain([BandId::Ndvi].iter())
            .chain(BandId::CLIMATE.iter())
            .chain(BandId::TERRAIN.iter());
        for band in encoder_bands {
            let owners = ChannelGroup::ALL
                .iter()
                .filter(|g| g.bands().contains(band))
                .count();
            assert_eq!(owners, 1, "{band}");
        }
        let real_width: usize = ChannelGroup::DYNAMIC_REAL.iter().map(|g| g.width()).sum();
        assert_eq!(real_width, 15);
    }

    #[test]
    fn parse_names() {
        assert_eq!("B8A".parse::<BandId>().unwrap(), BandId::B8A);
        assert_eq!("ndvi".parse::<BandId>().unwrap(), BandId::Ndvi);
        assert!("B99".parse::<BandId>().is_err());
        for b in BandId::ALL {
            assert_eq!(b.name().parse::<BandId>().unwrap(), b);
        }
    }
}
