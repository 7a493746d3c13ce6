use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetProvenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LoadOptions {
    #[serde(default)]
    pub label_column: LabelColumn,
    #[serde(default)]
    pub standardize: bool,
    /// Maps raw label cells to values, e.g. `{"0": -1, "1": 1}`. Without a map
    /// labels are parsed as floats.
    #[serde(default)]
    pub label_map: Option<BTreeMap<String, f64>>,
}

/// Loads a headered, rectangular CSV. Rows are numbered from 1 with the header
/// as row 1; columns are numbered from 1.
pub fn load_csv(path: &Path, options: &LoadOptions) -> Result<Dataset> {
    let load_err = |row: usize, column: usize, reason: String| Error::Load {
        path: path.to_path_buf(),
        row,
        column,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(0, 0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| load_err(1, 0, e.to_string()))?
        .clone();
    let width = headers.len();
    if width < 2 {
        return Err(load_err(1, 0, "need at least one feature and one label column".into()));
    }
    let label_col = match &options.label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(load_err(1, i + 1, format!("label column {i} out of range")))
        }
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| load_err(1, 0, format!("no column named `{name}`")))?,
    };
    let dim = width - 1;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| load_err(row, 0, e.to_string()))?;
        if record.len() != width {
            return Err(load_err(
                row,
                record.len().min(width) + 1,
                format!("expected {width} cells, found {}", record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_col {
                let y = match &options.label_map {
                    Some(map) => *map
                        .get(cell)
                        .ok_or_else(|| load_err(row, c + 1, format!("unmapped label `{cell}`")))?,
                    None => parse_finite(cell).map_err(|reason| load_err(row, c + 1, reason))?,
                };
                labels.push(y);
            } else {
                features.push(parse_finite(cell).map_err(|reason| load_err(row, c + 1, reason))?);
            }
        }
    }
    let standardization = options
        .standardize
        .then(|| standardize_columns(&mut features, dim));
    Dataset::new(
        features,
        labels,
        dim,
        DatasetProvenance::Csv {
            path: path.to_path_buf(),
            standardization,
        },
    )
}

fn parse_finite(cell: &str) -> std::result::Result<f64, String> {
    match cell.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        Ok(_) => Err(format!("non-finite value `{cell}`")),
        Err(_) => Err(format!("cannot parse `{cell}` as a number")),
    }
}

/// Population mean/std per column. Zero-variance columns become all zeros and
/// record a std of 0.
fn standardize_columns(features: &mut [f64], dim: usize) -> Vec<(f64, f64)> {
    let rows = features.len() / dim;
    let mut params = Vec::with_capacity(dim);
    for k in 0..dim {
        let mean = (0..rows).fold(0.0, |acc, i| acc + features[i * dim + k]) / rows as f64;
        let var = (0..rows).fold(0.0, |acc, i| {
            let dev = features[i * dim + k] - mean;
            acc + dev * dev
        }) / rows as f64;
        let std = var.sqrt();
        for i in 0..rows {
            let x = &mut features[i * dim + k];
            *x = if std > 0.0 { (*x - mean) / std } else { 0.0 };
        }
        params.push((mean, std));
    }
    params
}

/// Writes `x0..x{d-1},y` with shortest round-trip float formatting, plus a
/// `<stem>.provenance.json` sidecar. Returns the sidecar path.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<PathBuf> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_io_error)?;
    let mut header: Vec<String> = (0..dataset.dim()).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    writer.write_record(&header).map_err(csv_io_error)?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset.features(i).iter().map(|x| format!("{x:?}")).collect();
        row.push(format!("{:?}", dataset.label(i)));
        writer.write_record(&row).map_err(csv_io_error)?;
    }
    writer.flush()?;
    let sidecar = path.with_extension("provenance.json");
    let json = serde_json::to_string_pretty(dataset.provenance())
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(&sidecar, json)?;
    Ok(sidecar)
}

fn csv_io_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{generate_synthetic, SyntheticKind};

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, body).unwrap();
        path
    }

    fn binary_map() -> Option<BTreeMap<String, f64>> {
        Some(BTreeMap::from([("0".to_string(), -1.0), ("1".to_string(), 1.0)]))
    }

    #[test]
    fn parses_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", "a,b,y\n1,2,1\n3,4,0\n");
        let opts = LoadOptions {
            label_map: binary_map(),
            ..Default::default()
        };
        let data = load_csv(&path, &opts).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.labels(), &[1.0, -1.0]);
        assert_eq!(data.features(1), &[3.0, 4.0]);
    }

    #[test]
    fn label_column_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", "y,a\n2.5,1\n-1,3\n");
        let opts = LoadOptions {
            label_column: LabelColumn::Name("y".into()),
            ..Default::default()
        };
        let data = load_csv(&path, &opts).unwrap();
        assert_eq!(data.labels(), &[2.5, -1.0]);
        assert_eq!(data.features(0), &[1.0]);
    }

    #[test]
    fn standardize_constant_column_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(&dir, "a.csv", "a,b,y\n5,1,1\n5,3,1\n");
        let opts = LoadOptions {
            standardize: true,
            ..Default::default()
        };
        let data = load_csv(&path, &opts).unwrap();
        assert_eq!(data.features(0), &[0.0, -1.0]);
        assert_eq!(data.features(1), &[0.0, 1.0]);
        let DatasetProvenance::Csv { standardization, .. } = data.provenance() else {
            panic!()
        };
        assert_eq!(standardization.as_ref().unwrap(), &vec![(5.0, 0.0), (2.0, 1.0)]);
    }

    #[test]
    fn error_locations() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = write(&dir, "r.csv", "a,b,y\n1,2,1\n3,4\n");
        match load_csv(&ragged, &LoadOptions::default()) {
            Err(Error::Load { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad = write(&dir, "b.csv", "a,b,y\n1,zz,1\n");
        match load_csv(&bad, &LoadOptions::default()) {
            Err(Error::Load { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let unmapped = write(&dir, "c.csv", "a,y\n1,7\n");
        let opts = LoadOptions {
            label_map: binary_map(),
            ..Default::default()
        };
        match load_csv(&unmapped, &opts) {
            Err(Error::Load { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let nan = write(&dir, "d.csv", "a,y\nNaN,1\n");
        assert!(load_csv(&nan, &LoadOptions::default()).is_err());
    }

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(SyntheticKind::Regression, 40, 3, 2, 0.3).unwrap();
        let path = dir.path().join("data.csv");
        let sidecar = write_csv(&data, &path).unwrap();
        assert!(sidecar.ends_with("data.provenance.json"));
        let provenance: DatasetProvenance =
            serde_json::from_str(&fs::read_to_string(&sidecar).unwrap()).unwrap();
        assert_eq!(&provenance, data.provenance());
        let back = load_csv(&path, &LoadOptions::default()).unwrap();
        assert!(back.same_examples(&data));
    }
}
