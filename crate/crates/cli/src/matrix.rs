//! Weight-matrix files.
//!
//! One matrix row per line, comma-separated integers in [-7, 7]; each line is
//! one input (row) of the matrix and each field one output column. Blank
//! lines and lines starting with `#` are skipped. Errors name the 1-based
//! line of the file.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("line {line}, column {column}: `{text}` is not an integer")]
    Format { line: u64, column: usize, text: String },

    #[error("line {line}, column {column}: {value} is outside [{min}, {max}]")]
    Range {
        line: u64,
        column: usize,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("line {line} has {got} fields, expected {expected}")]
    Ragged { line: u64, expected: usize, got: usize },

    #[error("matrix file contains no entries")]
    NoWork,

    #[error("{0}")]
    Io(String),
}

fn read_rows(text: &str, min: i64, max: i64) -> Result<Vec<Vec<i64>>, MatrixError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<i64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MatrixError::Io(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for (i, field) in rec.iter().enumerate() {
            let value: i64 = field.parse().map_err(|_| MatrixError::Format {
                line,
                column: i + 1,
                text: field.to_string(),
            })?;
            if !(min..=max).contains(&value) {
                return Err(MatrixError::Range {
                    line,
                    column: i + 1,
                    value,
                    min,
                    max,
                });
            }
            row.push(value);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(MatrixError::Ragged {
                    line,
                    expected: first.len(),
                    got: row.len(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(MatrixError::NoWork);
    }
    Ok(rows)
}

pub fn parse_matrix(text: &str) -> Result<Vec<Vec<i32>>, MatrixError> {
    let rows = read_rows(text, -7, 7)?;
    Ok(rows.into_iter().map(|r| r.into_iter().map(|v| v as i32).collect()).collect())
}

/// Activation vector: the same format, values in [0, 15], flattened.
pub fn parse_activations(text: &str) -> Result<Vec<u8>, MatrixError> {
    let rows = read_rows(text, 0, 15)?;
    Ok(rows.into_iter().flatten().map(|v| v as u8).collect())
}

pub fn read_file(path: &Path) -> Result<String, MatrixError> {
    std::fs::read_to_string(path).map_err(|e| MatrixError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments_and_blank_lines() {
        let m = parse_matrix("# weights\n1, -2, 3\n\n4,5,-7\n").unwrap();
        assert_eq!(m, vec![vec![1, -2, 3], vec![4, 5, -7]]);
    }

    #[test]
    fn range_error_names_the_line() {
        let err = parse_matrix("1,2\n3,9\n").unwrap_err();
        assert_eq!(
            err,
            MatrixError::Range {
                line: 2,
                column: 2,
                value: 9,
                min: -7,
                max: 7
            }
        );
    }

    #[test]
    fn other_errors() {
        assert_eq!(parse_matrix("").unwrap_err(), MatrixError::NoWork);
        assert_eq!(parse_matrix("# nothing\n\n").unwrap_err(), MatrixError::NoWork);
        assert!(matches!(parse_matrix("1,x\n"), Err(MatrixError::Format { line: 1, column: 2, .. })));
        assert!(matches!(parse_matrix("1,2\n3\n"), Err(MatrixError::Ragged { line: 2, .. })));
        assert_eq!(parse_activations("1,2\n3,15\n").unwrap(), vec![1, 2, 3, 15]);
        assert!(matches!(parse_activations("16\n"), Err(MatrixError::Range { .. })));
    }
}
