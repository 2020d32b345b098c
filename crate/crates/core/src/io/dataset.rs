use std::path::Path;

use super::DataIoError;
use crate::model::Dataset;

/// Reads a delimiter-separated dataset file. See [`parse_dataset`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset<f64>, DataIoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, &path.display().to_string())
}

fn detect_delimiter(text: &str) -> u8 {
    let header = text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .unwrap_or("");
    [b',', b'\t', b';']
        .into_iter()
        .find(|&d| header.as_bytes().contains(&d))
        .unwrap_or(b',')
}

enum Column {
    X(usize),
    Y,
    Weight,
}

/// Parses a dataset: a header naming `x1..xd`, `y` and optionally `weight`
/// (any order), then one row per datum. The delimiter (comma, tab or
/// semicolon) is taken from the header; `#` starts a comment line.
/// Numbers always use `.` as the decimal separator.
pub fn parse_dataset(text: &str, source_name: &str) -> Result<Dataset<f64>, DataIoError> {
    let err = |line: u64, message: String| DataIoError::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(text))
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes());

    let header_line = reader.position().line().max(1);
    let headers = reader
        .headers()
        .map_err(|e| err(header_line, e.to_string()))?
        .clone();
    let mut columns = Vec::with_capacity(headers.len());
    for name in headers.iter() {
        let lower = name.to_ascii_lowercase();
        let col = match lower.as_str() {
            "y" => Column::Y,
            "weight" | "w" => Column::Weight,
            _ => match lower.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 => Column::X(k - 1),
                _ => return Err(err(1, format!("unknown column `{name}`"))),
            },
        };
        columns.push(col);
    }
    if columns.iter().filter(|c| matches!(c, Column::Y)).count() != 1 {
        return Err(err(1, "header must name exactly one `y` column".into()));
    }
    if columns.iter().filter(|c| matches!(c, Column::Weight)).count() > 1 {
        return Err(err(1, "more than one weight column".into()));
    }
    let mut x_idx: Vec<usize> = columns
        .iter()
        .filter_map(|c| if let Column::X(k) = c { Some(*k) } else { None })
        .collect();
    x_idx.sort_unstable();
    let d = x_idx.len();
    if d == 0 || x_idx.iter().enumerate().any(|(i, &k)| i != k) {
        return Err(err(1, "independent columns must be x1..xd without gaps".into()));
    }
    let has_weight = columns.iter().any(|c| matches!(c, Column::Weight));

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != columns.len() {
            return Err(err(
                line,
                format!("{} fields, expected {}", record.len(), columns.len()),
            ));
        }
        let mut x = vec![0.0; d];
        let mut y = 0.0;
        let mut w = 1.0;
        for (field, col) in record.iter().zip(&columns) {
            let v: f64 = field
                .parse()
                .map_err(|_| err(line, format!("non-numeric cell `{field}`")))?;
            if !v.is_finite() {
                return Err(err(line, format!("non-finite cell `{field}`")));
            }
            match col {
                Column::X(k) => x[*k] = v,
                Column::Y => y = v,
                Column::Weight => {
                    if v <= 0.0 {
                        return Err(err(line, format!("weight {v} is not positive")));
                    }
                    w = v;
                }
            }
        }
        xs.push(x);
        ys.push(y);
        ws.push(w);
    }
    if ys.is_empty() {
        return Err(err(header_line + 1, "no data rows".into()));
    }
    Dataset::new(xs, ys, has_weight.then_some(ws)).map_err(|e| err(0, e.to_string()))
}
