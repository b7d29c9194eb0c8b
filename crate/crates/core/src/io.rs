//! CSV input and output. Data files have the header `x,y,value`; prediction target files need
//! `x` and `y` columns; prediction output has the header `x,y,prediction`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Dataset, Location};

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Ingest {
            message: format!("missing column {name:?}"),
            indices: Vec::new(),
        })
}

fn read_rows<R: Read>(reader: R, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<usize> = names
        .iter()
        .map(|n| column(&headers, n))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Ingest {
            message: format!("row {i}: {e}"),
            indices: vec![i],
        })?;
        let row = cols
            .iter()
            .map(|&c| {
                let field = record.get(c).unwrap_or("");
                field.parse::<f64>().map_err(|_| Error::Ingest {
                    message: format!(
                        "row {i}: cannot parse {:?} in column {:?} as a number",
                        field, &headers[c]
                    ),
                    indices: vec![i],
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads and validates a dataset with columns `x`, `y` and `value`.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let rows = read_rows(reader, &["x", "y", "value"])?;
    let locations = rows.iter().map(|r| Location::new(r[0], r[1])).collect();
    let values = rows.iter().map(|r| r[2]).collect();
    Dataset::new(locations, values)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let d = read_dataset(BufReader::new(File::open(path)?))?;
    Ok(match name {
        Some(n) => d.with_name(n),
        None => d,
    })
}

/// Reads prediction targets from the `x` and `y` columns; other columns are ignored.
pub fn read_locations<R: Read>(reader: R) -> Result<Vec<Location>> {
    let rows = read_rows(reader, &["x", "y"])?;
    let locations: Vec<Location> = rows.iter().map(|r| Location::new(r[0], r[1])).collect();
    let bad: Vec<usize> = (0..locations.len())
        .filter(|&i| !locations[i].is_finite())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Ingest {
            message: "non-finite target coordinate".into(),
            indices: bad,
        });
    }
    Ok(locations)
}

pub fn read_locations_file(path: &Path) -> Result<Vec<Location>> {
    read_locations(BufReader::new(File::open(path)?))
}

pub fn write_dataset<W: Write>(dataset: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "value"])?;
    for (p, v) in dataset.locations().iter().zip(dataset.values()) {
        out.write_record([p.x.to_string(), p.y.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_predictions<W: Write>(targets: &[Location], predictions: &[f64], w: W) -> Result<()> {
    if targets.len() != predictions.len() {
        return Err(Error::Dimension {
            expected: targets.len(),
            got: predictions.len(),
        });
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "y", "prediction"])?;
    for (p, v) in targets.iter().zip(predictions) {
        out.write_record([p.x.to_string(), p.y.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Opens `path` for buffered writing.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}
