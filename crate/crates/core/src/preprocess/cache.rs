//! Composite cache CSV: `plot_id,month,band,value,count`.

use std::collections::BTreeMap;
use std::path::Path;

use super::MonthlyComposite;
use crate::bands::BandId;
use crate::data::observation::{open_csv, parse_f64};
use crate::error::{Error, Result};

pub const COMPOSITE_HEADER: [&str; 5] = ["plot_id", "month", "band", "value", "count"];

pub fn write_composites(path: &Path, composites: &[MonthlyComposite]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COMPOSITE_HEADER)?;
    for c in composites {
        for (band, bc) in &c.bands {
            w.write_record([
                c.plot_id.clone(),
                c.month.to_string(),
                band.name().to_string(),
                bc.value.to_string(),
                bc.count.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads the cache back into twelve composites per plot, plots sorted by id.
pub fn read_composites(path: &Path) -> Result<Vec<MonthlyComposite>> {
    let mut reader = open_csv(path, &COMPOSITE_HEADER)?;
    let mut plots: BTreeMap<String, Vec<MonthlyComposite>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let fail = |message: String| Error::Row { row, message };
        if rec.len() != 5 {
            return Err(fail(format!("expected 5 fields, found {}", rec.len())));
        }
        let month: usize = rec[1]
            .parse()
            .map_err(|_| fail(format!("month `{}` is not an integer", &rec[1])))?;
        if month >= 12 {
            return Err(fail(format!("month {month} outside 0..12")));
        }
        let band: BandId = rec[2].parse().map_err(|e: Error| fail(e.to_string()))?;
        let value = parse_f64(&rec[3], "value").map_err(fail)?;
        let count: usize = rec[4]
            .parse()
            .map_err(|_| fail(format!("count `{}` is not an integer", &rec[4])))?;
        let months = plots.entry(rec[0].to_string()).or_insert_with_key(|plot| {
            (0..12).map(|m| MonthlyComposite::new(plot.clone(), m)).collect()
        });
        months[month].set(band, value, count);
    }
    Ok(plots.into_values().flatten().collect())
}
