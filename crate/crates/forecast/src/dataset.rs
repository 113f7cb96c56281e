//! Forecaster dataset CSV: `slot_abs, load_kw, pv_kw`.

use crate::model::FEATURES;
use crate::ForecastError;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub slot_abs: usize,
    pub load_kw: f64,
    pub pv_kw: f64,
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<[f64; FEATURES]>, ForecastError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<DatasetRow>().enumerate() {
        let r = rec.map_err(|e| ForecastError::Format(e.to_string()))?;
        if r.slot_abs != i {
            return Err(ForecastError::Format(format!("row {i} has slot_abs {}; rows must be consecutive from 0", r.slot_abs)));
        }
        if !(r.load_kw.is_finite() && r.pv_kw.is_finite()) {
            return Err(ForecastError::Format(format!("row {i} is not finite")));
        }
        rows.push([r.load_kw, r.pv_kw]);
    }
    Ok(rows)
}

pub fn read_dataset_file(path: &Path) -> Result<Vec<[f64; FEATURES]>, ForecastError> {
    let file = std::fs::File::open(path).map_err(|e| ForecastError::io(path, e))?;
    read_dataset(std::io::BufReader::new(file))
}

pub fn write_dataset<W: Write>(writer: W, series: &[[f64; FEATURES]]) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(writer);
    for (slot_abs, r) in series.iter().enumerate() {
        w.serialize(DatasetRow {
            slot_abs,
            load_kw: r[0],
            pv_kw: r[1],
        })
        .map_err(|e| ForecastError::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| ForecastError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let series = vec![[1.5, 0.0], [2.25, 0.5]];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &series).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("slot_abs,load_kw,pv_kw\n0,1.5,0.0"));
        assert_eq!(read_dataset(&buf[..]).unwrap(), series);
    }

    #[test]
    fn gaps_are_rejected() {
        assert!(read_dataset("slot_abs,load_kw,pv_kw\n0,1,0\n2,1,0\n".as_bytes()).is_err());
    }
}
