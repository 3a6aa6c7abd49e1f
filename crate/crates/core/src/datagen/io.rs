//! Delimited-text matrix files: samples as rows, comma or tab separated,
//! optional single header row.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::DesignMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// The first row is a header if any of its cells is not a number.
    #[default]
    Auto,
    Present,
    Absent,
}

/// Which column, if any, holds the response.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ResponseColumn {
    #[default]
    None,
    First,
    Last,
    /// Zero-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

impl FromStr for ResponseColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "" | "none" => Self::None,
            "first" => Self::First,
            "last" => Self::Last,
            other => match other.parse::<usize>() {
                Ok(i) => Self::Index(i),
                Err(_) => Self::Name(other.to_string()),
            },
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Field delimiter; detected from the first line when unset.
    pub delimiter: Option<u8>,
    pub header: HeaderMode,
    pub response: ResponseColumn,
    pub normalize: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub design: DesignMatrix,
    pub response: Option<DVector<f64>>,
    /// Covariate column names, when the file had a header.
    pub column_names: Option<Vec<String>>,
}

pub fn load_matrix(path: &Path, options: &LoadOptions) -> Result<LoadedData> {
    let text = fs::read_to_string(path)?;
    let delimiter = options.delimiter.unwrap_or_else(|| detect_delimiter(&text));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_error(path, index + 1, e.to_string()))?;
        let line = record
            .position()
            .map_or(index + 1, |position| position.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let is_first = header.is_none() && rows.is_empty();
        if is_first {
            let numeric = record.iter().all(|c| c.parse::<f64>().is_ok());
            let take_header = match options.header {
                HeaderMode::Present => true,
                HeaderMode::Absent => false,
                HeaderMode::Auto => !numeric,
            };
            if take_header {
                header = Some(record.iter().map(str::to_string).collect());
                width = Some(record.len());
                continue;
            }
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows {
                path: path.to_path_buf(),
                row: line,
                expected,
                found: record.len(),
            });
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(column, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::NonNumericCell {
                        path: path.to_path_buf(),
                        row: line,
                        column: column + 1,
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }

    let (Some(width), false) = (width, rows.is_empty()) else {
        return Err(Error::EmptyMatrix);
    };
    let response_index = match &options.response {
        ResponseColumn::None => None,
        ResponseColumn::First => Some(0),
        ResponseColumn::Last => Some(width - 1),
        ResponseColumn::Index(i) if *i < width => Some(*i),
        ResponseColumn::Index(i) => {
            return Err(Error::MissingResponse {
                path: path.to_path_buf(),
                name: i.to_string(),
            })
        }
        ResponseColumn::Name(name) => Some(
            header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::MissingResponse {
                    path: path.to_path_buf(),
                    name: name.clone(),
                })?,
        ),
    };
    let covariates: Vec<usize> = (0..width).filter(|&j| Some(j) != response_index).collect();
    if covariates.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let matrix = DMatrix::from_fn(rows.len(), covariates.len(), |i, j| rows[i][covariates[j]]);
    let response = response_index
        .map(|col| DVector::from_iterator(rows.len(), rows.iter().map(|r| r[col])));
    let design = if options.normalize {
        DesignMatrix::normalize_columns(matrix)?
    } else {
        DesignMatrix::new(matrix)?
    };
    let column_names = header.map(|h| covariates.iter().map(|&j| h[j].clone()).collect());
    Ok(LoadedData {
        design,
        response,
        column_names,
    })
}

/// Writes a comma-separated matrix with 17 significant digits per entry, so
/// that loading it back reproduces every value exactly. The response, if
/// any, becomes the last column.
pub fn save_matrix(
    path: &Path,
    matrix: &DMatrix<f64>,
    response: Option<&DVector<f64>>,
    header: Option<&[String]>,
) -> Result<()> {
    if let Some(y) = response {
        if y.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "response has length {}, matrix has {} rows",
                y.len(),
                matrix.nrows()
            )));
        }
    }
    let mut out = String::new();
    if let Some(names) = header {
        out.push_str(&names.join(","));
        out.push('\n');
    }
    for i in 0..matrix.nrows() {
        let mut cells: Vec<String> = matrix.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(y) = response {
            cells.push(format!("{:.16e}", y[i]));
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

fn detect_delimiter(text: &str) -> u8 {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn parse_error(path: &Path, row: usize, message: String) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        row,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(contents.as_bytes()).unwrap();
        file
    }

    #[test]
    fn identity_file() {
        let file = write("1,0\n0,1\n");
        let data = load_matrix(file.path(), &LoadOptions::default()).unwrap();
        assert_eq!(data.design.values(), &DMatrix::<f64>::identity(2, 2));
        assert!(data.response.is_none());
        assert!(data.column_names.is_none());
    }

    #[test]
    fn header_and_response_column() {
        let file = write("g1\tg2\tweight\n1\t2\t0.5\n3\t4\t0.25\n5\t6\t1\n");
        let options = LoadOptions {
            response: ResponseColumn::Name("weight".into()),
            ..LoadOptions::default()
        };
        let data = load_matrix(file.path(), &options).unwrap();
        assert_eq!(data.design.nrows(), 3);
        assert_eq!(data.design.ncols(), 2);
        assert_eq!(data.response.unwrap().as_slice(), &[0.5, 0.25, 1.0]);
        assert_eq!(data.column_names.unwrap(), vec!["g1", "g2"]);
    }

    #[test]
    fn ragged_rows_are_located() {
        let file = write("1,2,3\n4,5\n");
        let err = load_matrix(file.path(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::RaggedRows {
                row: 2,
                expected: 3,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn non_numeric_cells_are_located() {
        let file = write("1,2\n3,abc\n");
        let err = load_matrix(file.path(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonNumericCell { row: 2, column: 2, .. }));
        let file = write("a,b\n1,2\n");
        let options = LoadOptions {
            header: HeaderMode::Absent,
            ..LoadOptions::default()
        };
        assert!(matches!(
            load_matrix(file.path(), &options),
            Err(Error::NonNumericCell { row: 1, column: 1, .. })
        ));
    }

    #[test]
    fn normalization_on_request() {
        let file = write("3,1\n4,0\n");
        let options = LoadOptions {
            normalize: true,
            ..LoadOptions::default()
        };
        let data = load_matrix(file.path(), &options).unwrap();
        assert_eq!(data.design.column_norms().as_slice(), &[5.0, 1.0]);
    }

    #[test]
    fn missing_response_name() {
        let file = write("a,b\n1,2\n");
        let options = LoadOptions {
            response: ResponseColumn::Name("y".into()),
            ..LoadOptions::default()
        };
        assert!(matches!(
            load_matrix(file.path(), &options),
            Err(Error::MissingResponse { .. })
        ));
    }

    #[test]
    fn response_column_parsing() {
        assert_eq!("last".parse::<ResponseColumn>().unwrap(), ResponseColumn::Last);
        assert_eq!("3".parse::<ResponseColumn>().unwrap(), ResponseColumn::Index(3));
        assert_eq!(
            "weight".parse::<ResponseColumn>().unwrap(),
            ResponseColumn::Name("weight".into())
        );
    }

    proptest! {
        #[test]
        fn save_then_load_is_bit_exact(
            entries in prop::collection::vec(-1e3f64..1e3, 12),
            scale in prop::sample::select(vec![1.0, 1e-300, 1e300, 3.0e-7]),
        ) {
            let matrix = DMatrix::from_fn(4, 3, |i, j| entries[i * 3 + j] * scale);
            let file = tempfile::NamedTempFile::new().unwrap();
            save_matrix(file.path(), &matrix, None, None).unwrap();
            let data = load_matrix(file.path(), &LoadOptions::default()).unwrap();
            for (a, b) in matrix.iter().zip(data.design.values().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
