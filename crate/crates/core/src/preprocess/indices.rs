use serde::{Deserialize, Serialize};

use super::MonthlyComposite;
use crate::bands::BandId;

/// Normalized difference of B8 and B4. Zero when both are zero.
pub fn compute_ndvi(b8: f64, b4: f64) -> f64 {
    normalized_difference(b8, b4).unwrap_or(0.0)
}

fn normalized_difference(a: f64, b: f64) -> Option<f64> {
    let den = a + b;
    if den == 0.0 {
        None
    } else {
        Some((a - b) / den)
    }
}

/// Tasseled-cap rows, one coefficient per S2 band in [`BandId::S2`] order,
/// applied to 0-1 reflectance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TasseledCap {
    pub brightness: [f64; 10],
    pub greenness: [f64; 10],
    pub wetness: [f64; 10],
}

impl Default for TasseledCap {
    /// Sentinel-2 coefficients of Shi & Xu (2019), reordered to
    /// B2, B3, B4, B5, B6, B7, B8, B8A, B11, B12.
    fn default() -> Self {
        Self {
            brightness: [
                0.3510, 0.3813, 0.3437, 0.2396, 0.1949, 0.1822, 0.7196, 0.0031, 0.1112, 0.0825,
            ],
            greenness: [
                -0.3599, -0.3533, -0.4734, 0.0087, -0.0469, -0.0322, 0.6633, -0.0015, -0.0693,
                -0.0180,
            ],
            wetness: [
                0.2578, 0.2305, 0.0883, -0.7611, 0.0882, 0.4572, 0.1071, -0.0021, -0.4064, 0.0117,
            ],
        }
    }
}

/// Constants for the derived indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexCoefficients {
    /// Digital numbers per unit reflectance.
    pub reflectance_scale: f64,
    pub evi_gain: f64,
    pub evi_c1: f64,
    pub evi_c2: f64,
    pub evi_l: f64,
    pub tasseled_cap: TasseledCap,
}

impl Default for IndexCoefficients {
    fn default() -> Self {
        Self {
            reflectance_scale: 10_000.0,
            evi_gain: 2.5,
            evi_c1: 6.0,
            evi_c2: 7.5,
            evi_l: 1.0,
            tasseled_cap: TasseledCap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexDiagnostic {
    pub month: usize,
    pub band: BandId,
    pub reason: &'static str,
}

/// The 19-band record of one month, in [`BandId::HANDCRAFTED`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedMonth {
    pub month: usize,
    pub values: [Option<f64>; 19],
    pub diagnostics: Vec<IndexDiagnostic>,
}

impl IndexedMonth {
    pub fn get(&self, band: BandId) -> Option<f64> {
        BandId::HANDCRAFTED
            .iter()
            .position(|&b| b == band)
            .and_then(|i| self.values[i])
    }
}

/// Appends NDVI, NBR, EVI and the tasseled-cap components to the 12 raw
/// bands. The indices are all missing unless every S2 band is present.
pub fn compute_indices(composite: &MonthlyComposite, coeffs: &IndexCoefficients) -> IndexedMonth {
    let mut values = [None; 19];
    for (i, band) in BandId::RAW.iter().enumerate() {
        values[i] = composite.get(*band);
    }
    let mut diagnostics = Vec::new();
    let s2: Option<Vec<f64>> = BandId::S2.iter().map(|b| composite.get(*b)).collect();
    if let Some(s2) = s2 {
        let month = composite.month;
        let mut flag = |band, reason| diagnostics.push(IndexDiagnostic { month, band, reason });
        let refl: Vec<f64> = s2.iter().map(|v| v / coeffs.reflectance_scale).collect();
        let (blue, red, nir, swir2) = (refl[0], refl[2], refl[6], refl[9]);

        // NDVI already derived for the month is reused rather than recomputed.
        let ndvi = composite.get(BandId::Ndvi).unwrap_or_else(|| {
            normalized_difference(nir, red).unwrap_or_else(|| {
                flag(BandId::Ndvi, "B8 + B4 = 0");
                0.0
            })
        });
        let nbr = normalized_difference(nir, swir2).unwrap_or_else(|| {
            flag(BandId::Nbr, "B8 + B12 = 0");
            0.0
        });
        let evi_den = nir + coeffs.evi_c1 * red - coeffs.evi_c2 * blue + coeffs.evi_l;
        let evi = if evi_den == 0.0 {
            flag(BandId::Evi, "EVI denominator = 0");
            0.0
        } else {
            coeffs.evi_gain * (nir - red) / evi_den
        };
        let dot = |row: &[f64; 10]| row.iter().zip(&refl).map(|(c, r)| c * r).sum::<f64>();
        let tc = &coeffs.tasseled_cap;
        let (tcb, tcg, tcw) = (dot(&tc.brightness), dot(&tc.greenness), dot(&tc.wetness));
        let tca = if tcb == 0.0 {
            flag(BandId::Tca, "TCB = 0");
            0.0
        } else {
            (tcg / tcb).atan()
        };
        for (slot, v) in values[12..].iter_mut().zip([ndvi, nbr, evi, tcb, tcw, tcg, tca]) {
            *slot = Some(v);
        }
    }
    IndexedMonth {
        month: composite.month,
        values,
        diagnostics,
    }
}
