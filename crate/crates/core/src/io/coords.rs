//! `id,lat,lon` coordinate CSVs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesy::GpsCoord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

fn csv_err(e: csv::Error) -> GeoError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GeoError::Io(io),
        other => GeoError::Format(format!("coordinate csv: {other:?}")),
    }
}

/// Parses coordinates; ids are returned in file order next to validated coordinates.
pub fn parse_coords(text: &str) -> Result<(Vec<String>, Vec<GpsCoord>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["id", "lat", "lon"] {
        return Err(GeoError::Format(format!(
            "coordinate csv header must be `id,lat,lon`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for (i, rec) in reader.deserialize::<CoordRecord>().enumerate() {
        let rec = rec.map_err(|e| csv_err(e).at(i))?;
        coords.push(GpsCoord::new(rec.lat, rec.lon).map_err(|e| e.at(i))?);
        ids.push(rec.id);
    }
    Ok((ids, coords))
}

pub fn read_coords(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<GpsCoord>)> {
    parse_coords(&super::read_text(path.as_ref())?)
}

/// Rows are numbered `0..n` when `ids` is `None`.
pub fn format_coords(ids: Option<&[String]>, coords: &[GpsCoord]) -> Result<String> {
    if let Some(ids) = ids {
        if ids.len() != coords.len() {
            return Err(GeoError::InvalidInput(format!(
                "{} ids for {} coordinates",
                ids.len(),
                coords.len()
            )));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "lat", "lon"]).map_err(csv_err)?;
    for (i, c) in coords.iter().enumerate() {
        let id = ids.map_or_else(|| i.to_string(), |ids| ids[i].clone());
        w.write_record([id, c.lat_deg.to_string(), c.lon_deg.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| GeoError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_coords(path: impl AsRef<Path>, ids: Option<&[String]>, coords: &[GpsCoord]) -> Result<()> {
    super::write_atomic(path, format_coords(ids, coords)?.as_bytes())
}
