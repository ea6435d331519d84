//! CSV helpers shared by the exporters: 17-significant-digit floats, a
//! `# ...` comment header, and a strict numeric table reader.

use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Round-trippable float formatting with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Read a numeric CSV with the given header, skipping `#` comment lines.
pub fn read_table<R: BufRead>(r: R, columns: &[&str]) -> Result<Vec<Vec<f64>>, CsvError> {
    let expected = columns.join(",");
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != expected {
                return Err(CsvError::Header { expected, found: line.to_string() });
            }
            seen_header = true;
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| CsvError::Parse { line: i + 1, message: e.to_string() })?;
        if row.len() != columns.len() {
            return Err(CsvError::Parse {
                line: i + 1,
                message: format!("expected {} fields, found {}", columns.len(), row.len()),
            });
        }
        rows.push(row);
    }
    if !seen_header {
        return Err(CsvError::Header { expected, found: String::new() });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt17_roundtrips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1e300, std::f64::consts::PI] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn reader_skips_comments_and_checks_header() {
        let text = "# seed=3\nx,y\n1,2\n3.5,-4\n";
        let rows = read_table(text.as_bytes(), &["x", "y"]).unwrap();
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.5, -4.0]]);
        assert!(read_table(text.as_bytes(), &["x", "z"]).is_err());
        assert!(read_table("x,y\n1\n".as_bytes(), &["x", "y"]).is_err());
    }
}
