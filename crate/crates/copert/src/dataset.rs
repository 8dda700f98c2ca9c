//! Tabular data ingestion for the command line front end: a response
//! column, composition columns (normalized on load under the simplex
//! tolerance rules) and optional extra covariate columns.

use crate::learn::Matrix;
use crate::simplex::{Composition, SimplexError};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in the header")]
    MissingColumn(String),
    #[error("duplicate column name `{0}` in the header")]
    DuplicateColumn(String),
    #[error("no composition columns match `{0}`")]
    NoCompositionColumns(String),
    #[error("row {row}: column `{column}` holds `{value}`, not a number")]
    BadNumber { row: usize, column: String, value: String },
    #[error("row {row}: {source}")]
    BadComposition { row: usize, source: SimplexError },
    #[error("dataset is empty")]
    Empty,
}

/// A loaded dataset: response, compositions and optional extra covariates.
pub struct Dataset {
    pub response: Vec<f64>,
    pub compositions: Vec<Composition>,
    pub composition_names: Vec<String>,
    pub extra: Option<Matrix>,
    pub extra_names: Vec<String>,
    /// Rows whose composition needed a beyond-tight-tolerance renormalization.
    pub n_renormalized: usize,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn dim(&self) -> usize {
        self.compositions.first().map_or(0, |z| z.dim())
    }
}

/// Expands a comma-separated column selection against the header. Items
/// ending in `*` match by prefix, otherwise exactly.
fn select_columns(header: &[String], selection: &str) -> Result<Vec<usize>, DatasetError> {
    let mut out = Vec::new();
    for item in selection.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some(prefix) = item.strip_suffix('*') {
            let mut matched = false;
            for (i, name) in header.iter().enumerate() {
                if name.starts_with(prefix) && !out.contains(&i) {
                    out.push(i);
                    matched = true;
                }
            }
            if !matched {
                return Err(DatasetError::NoCompositionColumns(item.to_string()));
            }
        } else {
            let i = header
                .iter()
                .position(|name| name == item)
                .ok_or_else(|| DatasetError::MissingColumn(item.to_string()))?;
            if !out.contains(&i) {
                out.push(i);
            }
        }
    }
    if out.is_empty() {
        return Err(DatasetError::NoCompositionColumns(selection.to_string()));
    }
    Ok(out)
}

pub fn load_csv_path(
    path: &Path,
    response: &str,
    composition: &str,
    adjust: Option<&str>,
) -> Result<Dataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    load_csv(file, response, composition, adjust)
}

/// Reads a UTF-8 CSV with a header row. Composition columns are selected by
/// name list or prefix glob and are normalized onto the simplex on load.
pub fn load_csv<R: Read>(
    reader: R,
    response: &str,
    composition: &str,
    adjust: Option<&str>,
) -> Result<Dataset, DatasetError> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let header: Vec<String> =
        csv_reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    for (i, name) in header.iter().enumerate() {
        if header[..i].contains(name) {
            return Err(DatasetError::DuplicateColumn(name.clone()));
        }
    }

    let response_idx = header
        .iter()
        .position(|name| name == response)
        .ok_or_else(|| DatasetError::MissingColumn(response.to_string()))?;
    let comp_idx = select_columns(&header, composition)?;
    let extra_idx: Vec<usize> = match adjust {
        Some(sel) => select_columns(&header, sel)?,
        None => Vec::new(),
    };

    let parse = |row: usize, col: usize, value: &str| -> Result<f64, DatasetError> {
        let trimmed = value.trim();
        trimmed.parse::<f64>().map_err(|_| DatasetError::BadNumber {
            row,
            column: header[col].clone(),
            value: value.to_string(),
        })
    };

    let mut response_values = Vec::new();
    let mut compositions = Vec::new();
    let mut extra_rows: Vec<Vec<f64>> = Vec::new();
    let mut n_renormalized = 0usize;
    for (row_idx, record) in csv_reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 2; // 1-based, after the header
        response_values.push(parse(row, response_idx, &record[response_idx])?);
        let mut values = Vec::with_capacity(comp_idx.len());
        for &c in &comp_idx {
            values.push(parse(row, c, &record[c])?);
        }
        let (comp, flagged) = Composition::new_with_status(values)
            .map_err(|source| DatasetError::BadComposition { row, source })?;
        if flagged {
            n_renormalized += 1;
        }
        compositions.push(comp);
        if !extra_idx.is_empty() {
            let mut extra = Vec::with_capacity(extra_idx.len());
            for &c in &extra_idx {
                extra.push(parse(row, c, &record[c])?);
            }
            extra_rows.push(extra);
        }
    }
    if response_values.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(Dataset {
        response: response_values,
        compositions,
        composition_names: comp_idx.iter().map(|&i| header[i].clone()).collect(),
        extra: if extra_rows.is_empty() { None } else { Some(Matrix::from_rows(extra_rows)) },
        extra_names: extra_idx.iter().map(|&i| header[i].clone()).collect(),
        n_renormalized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
y,z1,z2,z3,x1
0.5,0.2,0.3,0.5,1.0
1.5,0.5,0.25,0.25,2.0
2.5,0,0,1,3.0
";

    #[test]
    fn loads_by_name_list() {
        let ds = load_csv(SAMPLE.as_bytes(), "y", "z1,z2,z3", Some("x1")).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.response, vec![0.5, 1.5, 2.5]);
        assert_eq!(ds.compositions[0].as_slice(), &[0.2, 0.3, 0.5]);
        assert_eq!(ds.extra.as_ref().unwrap().n_cols(), 1);
        assert_eq!(ds.n_renormalized, 0);
    }

    #[test]
    fn loads_by_prefix_glob() {
        let ds = load_csv(SAMPLE.as_bytes(), "y", "z*", None).unwrap();
        assert_eq!(ds.composition_names, vec!["z1", "z2", "z3"]);
        assert!(ds.extra.is_none());
    }

    #[test]
    fn rejects_missing_and_bad_values() {
        assert!(matches!(
            load_csv(SAMPLE.as_bytes(), "nope", "z*", None),
            Err(DatasetError::MissingColumn(_))
        ));
        assert!(matches!(
            load_csv(SAMPLE.as_bytes(), "y", "q*", None),
            Err(DatasetError::NoCompositionColumns(_))
        ));
        let bad = "y,z1,z2\n1.0,abc,0.5\n";
        assert!(matches!(
            load_csv(bad.as_bytes(), "y", "z*", None),
            Err(DatasetError::BadNumber { row: 2, .. })
        ));
        let negative = "y,z1,z2\n1.0,-0.5,1.5\n";
        assert!(matches!(
            load_csv(negative.as_bytes(), "y", "z*", None),
            Err(DatasetError::BadComposition { row: 2, .. })
        ));
    }

    #[test]
    fn flags_renormalized_rows() {
        // percentages summing to 100.00002: inside the loose band after
        // scaling? no -- compositions must be proportions; these are not
        let proportions = "y,z1,z2\n1.0,0.6000001,0.4\n1.0,0.5,0.5\n";
        let ds = load_csv(proportions.as_bytes(), "y", "z*", None).unwrap();
        assert_eq!(ds.n_renormalized, 1);
        let way_off = "y,z1,z2\n1.0,0.7,0.4\n";
        assert!(load_csv(way_off.as_bytes(), "y", "z*", None).is_err());
    }
}
