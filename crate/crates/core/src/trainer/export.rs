//! Writes learned prototypes and classifier weights for inspection.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::Prototypes;
use crate::model::ModelParams;

#[derive(Debug, Clone, Default)]
pub struct ExportMeta {
    /// Free-form name of the data the model was trained on.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedFiles {
    pub prototypes_csv: PathBuf,
    pub weights_json: PathBuf,
    pub images: Vec<PathBuf>,
}

#[derive(Serialize)]
struct WeightEntry {
    feature: usize,
    prototype: usize,
    aggregator: &'static str,
    weight: f64,
}

#[derive(Serialize)]
struct WeightsDoc<'a> {
    source: &'a str,
    prototypes: usize,
    features: usize,
    aggregators: String,
    beta0: f64,
    weights: Vec<WeightEntry>,
}

/// Min-max scales `values` to 8-bit gray; a constant row maps to 128.
fn to_gray(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Writes `prototypes.csv` (D rows of L values, no header), `weights.json`,
/// and with `image_side` set, one binary PGM `prototype_<d>.pgm` per row.
pub fn export_prototypes(
    params: &ModelParams,
    meta: &ExportMeta,
    out_dir: impl AsRef<Path>,
    image_side: Option<usize>,
) -> Result<ExportedFiles> {
    let width = params.prototypes.width();
    if let Some(side) = image_side {
        if side * side != width {
            return Err(Error::InvalidArgument(format!(
                "image side {side} does not match prototype width {width} ({side}x{side} = {})",
                side * side
            )));
        }
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let prototypes_csv = dir.join("prototypes.csv");
    let mut csv = String::new();
    for row in params.prototypes.rows() {
        let cells: Vec<String> = row.iter().map(|&v| crate::model::fmt_real(v)).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    fs::write(&prototypes_csv, csv).map_err(|e| Error::io(&prototypes_csv, e))?;

    let weights = params
        .beta
        .iter()
        .enumerate()
        .map(|(j, &weight)| {
            let (agg, d) = params.feature_origin(j);
            WeightEntry {
                feature: j,
                prototype: d,
                aggregator: agg.name(),
                weight,
            }
        })
        .collect();
    let doc = WeightsDoc {
        source: &meta.source,
        prototypes: params.prototypes.count(),
        features: width,
        aggregators: params.aggregators.to_string(),
        beta0: params.beta0,
        weights,
    };
    let weights_json = dir.join("weights.json");
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(&weights_json, text).map_err(|e| Error::io(&weights_json, e))?;

    let mut images = Vec::new();
    if let Some(side) = image_side {
        for (d, row) in params.prototypes.rows().enumerate() {
            let path = dir.join(format!("prototype_{d}.pgm"));
            let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
            bytes.extend(to_gray(row));
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            images.push(path);
        }
    }
    Ok(ExportedFiles {
        prototypes_csv,
        weights_json,
        images,
    })
}

/// Reads back a `prototypes.csv` written by [`export_prototypes`].
pub fn read_prototypes_csv(path: impl AsRef<Path>) -> Result<Prototypes> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::parse(path, i + 1, format!("bad number '{t}'")))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Prototypes::from_rows(&rows)
}
