//! Feature matrices on disk: a header line, then one CSV row per story.
//!
//! ```text
//! # features v1 mode=concat rows=200 cols=160
//! s0000,3,0.0123,-0.5,...
//! ```
//!
//! Columns are the story id, its emotion label and the feature values.

use std::path::Path;

use affectlab::data::StoryExample;
use affectlab::{Error, Matrix, Result};

use crate::report::{io_err, write_file};

pub const FEATURES_FORMAT: &str = "features v1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub mode: String,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub features: Matrix,
}

impl FeatureFile {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# {FEATURES_FORMAT} mode={} rows={} cols={}\n",
            self.mode,
            self.features.rows(),
            self.features.cols()
        );
        for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(self.features.iter_rows()) {
            out.push_str(id);
            out.push(',');
            out.push_str(&label.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Data(format!("{source}:{line}: {msg}"));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty feature file".into()))?;
        let rest = header.strip_prefix(&format!("# {FEATURES_FORMAT} ")).ok_or_else(|| {
            err(
                1,
                format!("expected header `# {FEATURES_FORMAT} mode=... rows=... cols=...`"),
            )
        })?;
        let mut mode = None;
        let mut rows = None;
        let mut cols = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("mode", v)) => mode = Some(v.to_string()),
                Some(("rows", v)) => rows = v.parse::<usize>().ok(),
                Some(("cols", v)) => cols = v.parse::<usize>().ok(),
                _ => return Err(err(1, format!("unknown header field {field:?}"))),
            }
        }
        let (Some(mode), Some(rows), Some(cols)) = (mode, rows, cols) else {
            return Err(err(1, "header needs mode, rows and cols".into()));
        };
        let mut ids = Vec::with_capacity(rows);
        let mut labels = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let id = parts.next().unwrap_or_default().trim();
            let label = parts
                .next()
                .and_then(|s| s.trim().parse::<usize>().ok())
                .ok_or_else(|| err(n, "missing or invalid emotion label".into()))?;
            let values = parts
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| err(n, format!("invalid value: {e}")))?;
            if values.len() != cols {
                return Err(err(n, format!("{} values, expected {cols}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err(n, "non-finite value".into()));
            }
            ids.push(id.to_string());
            labels.push(label);
            data.extend(values);
        }
        if ids.len() != rows {
            return Err(err(1, format!("header says {rows} rows, found {}", ids.len())));
        }
        Ok(FeatureFile {
            mode,
            ids,
            labels,
            features: Matrix::from_vec(rows, cols, data)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text().as_bytes())
    }

    /// Features with each story's ratings appended, matched by id.
    pub fn with_ratings(&self, stories: &[StoryExample], source: &Path) -> Result<Matrix> {
        let by_id: std::collections::HashMap<&str, &StoryExample> =
            stories.iter().map(|s| (s.id.as_str(), s)).collect();
        let rows = self
            .ids
            .iter()
            .zip(self.features.iter_rows())
            .map(|(id, row)| {
                let s = by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::Data(format!("{}: no story with id {id:?}", source.display())))?;
                Ok(row.iter().chain(&s.appraisals).copied().collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Matrix::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureFile {
        FeatureFile {
            mode: "concat".into(),
            ids: vec!["a".into(), "b".into()],
            labels: vec![0, 3],
            features: Matrix::from_rows(&[vec![0.1, -2.5], vec![1e-17, 3.0]]).unwrap(),
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let f = sample();
        assert_eq!(FeatureFile::parse(&f.to_text(), "x").unwrap(), f);
    }

    #[test]
    fn bad_row_names_the_line() {
        let text = "# features v1 mode=concat rows=2 cols=2\na,0,1,2\nb,1,1\n";
        match FeatureFile::parse(text, "f.csv") {
            Err(Error::Data(msg)) => assert!(msg.starts_with("f.csv:3:"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
