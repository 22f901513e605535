//! Bag CSV: header `bag_id,label,f0,...,f{L-1}`, one instance per row.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{Bag, Dataset, Label};
use crate::error::{Error, Result};

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string())
}

/// Parses bag CSV from any reader. `source` only labels error messages.
pub fn read_csv<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(reader);

    let header = rdr
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::parse(source, 0, "empty file"));
    }
    if header.len() < 3 || &header[0] != "bag_id" || &header[1] != "label" {
        return Err(Error::parse(
            source,
            1,
            "header must be bag_id,label,f0,...,f{L-1} with at least one feature",
        ));
    }
    let width = header.len() - 2;

    // bag id -> (label, row-major features); insertion order kept separately
    let mut groups: HashMap<String, (Label, Vec<f64>)> = HashMap::new();
    let mut order: Vec<String> = Vec::new();

    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::parse(source, line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(Error::parse(
                source,
                line,
                format!("ragged row: expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        let label = rec[1]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| Error::parse(source, line, format!("label outside {{0,1}}: '{}'", &rec[1])))?;
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (label, Vec::new())
        });
        if entry.0 != label {
            return Err(Error::parse(source, line, format!("conflicting labels for bag '{id}'")));
        }
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(source, line, format!("non-numeric feature f{j}: '{field}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(
                    source,
                    line,
                    format!("non-finite feature f{j}: '{field}'"),
                ));
            }
            entry.1.push(v);
        }
    }
    if order.is_empty() {
        return Err(Error::parse(source, 0, "empty file"));
    }

    let bags = order
        .into_iter()
        .map(|id| {
            let (label, data) = groups.remove(&id).expect("grouped id");
            Bag::from_flat(id, label, width, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(bags)
}

/// Writes `data` in bag CSV form. Values use the shortest decimal that
/// parses back to the same `f64`, so reloading is lossless.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = ::csv::WriterBuilder::new().from_writer(writer);
    let csv_err = |e: ::csv::Error| Error::parse("<output>", 0, e.to_string());
    let mut header = vec!["bag_id".to_string(), "label".to_string()];
    header.extend((0..data.feature_count()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for bag in data.bags() {
        for inst in bag.instances() {
            row.clear();
            row.push(bag.id().to_string());
            row.push(bag.label().as_u8().to_string());
            row.extend(inst.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}
