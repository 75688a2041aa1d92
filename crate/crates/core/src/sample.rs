//! Point collections and the CSV interchange format.
//!
//! A [`SampleSet`] is an ordered list of d-dimensional points describing one
//! adaptation environment. The on-disk format is plain CSV: one point per
//! row, `d` numeric columns, decimal point `.`, with optional comment/header
//! rows starting with `#`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<Vec<f64>>,
    dim: usize,
    label: Option<String>,
}

impl SampleSet {
    /// Builds a set from raw points. Requires at least two points of a common
    /// dimension, all entries finite.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: format!("need at least 2 points, got {}", points.len()),
            });
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidParameter {
                name: "points",
                reason: "points must have dimension >= 1".into(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "points",
                    reason: format!("point {i} contains a non-finite entry"),
                });
            }
        }
        Ok(Self {
            points,
            dim,
            label: None,
        })
    }

    pub fn with_label(points: Vec<Vec<f64>>, label: impl Into<String>) -> Result<Self> {
        let mut set = Self::new(points)?;
        set.label = Some(label.into());
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = Some(label.into());
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Values of one coordinate across all points.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[j]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in &self.points {
            for (mj, v) in m.iter_mut().zip(p) {
                *mj += v;
            }
        }
        let n = self.points.len() as f64;
        for mj in &mut m {
            *mj /= n;
        }
        m
    }

    /// Root-mean-square distance from the mean. A scale for relative errors.
    pub fn rms_scale(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self
            .points
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&m)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        (ss / self.points.len() as f64).sqrt()
    }

    /// Evenly strided subsample of at most `max` points (keeps order).
    pub fn stride_subsample(&self, max: usize) -> Vec<Vec<f64>> {
        let n = self.points.len();
        if max == 0 || n <= max {
            return self.points.clone();
        }
        (0..max)
            .map(|i| self.points[i * n / max].clone())
            .collect()
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(reader);
        let mut points = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::CsvFormat {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let mut row = Vec::with_capacity(record.len());
            for field in record.iter() {
                let v: f64 = field.parse().map_err(|_| Error::CsvFormat {
                    line,
                    message: format!("not a number: {field:?}"),
                })?;
                row.push(v);
            }
            points.push(row);
        }
        Self::new(points)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        self.to_writer(&mut w)
    }

    pub fn to_writer<W: Write>(&self, w: &mut W) -> Result<()> {
        if let Some(label) = &self.label {
            writeln!(w, "# label: {label}")?;
        }
        for p in &self.points {
            let row: Vec<String> = p.iter().map(|&v| format_sig10(v)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Formats a number with 10 significant digits, the convention for all
/// numeric output of this crate.
pub fn format_sig10(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.9e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_point() {
        assert!(SampleSet::new(vec![vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn rejects_mixed_dims() {
        let err = SampleSet::new(vec![vec![1.0, 2.0], vec![1.0]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(SampleSet::new(vec![vec![1.0], vec![f64::NAN]]).is_err());
    }

    #[test]
    fn csv_roundtrip_with_comment_header() {
        let set = SampleSet::with_label(vec![vec![0.5, -1.25], vec![3.0, 4.0]], "env").unwrap();
        let mut buf = Vec::new();
        set.to_writer(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# label: env"));
        let back = SampleSet::from_reader(buf.as_slice()).unwrap();
        assert_eq!(back.points(), set.points());
    }

    #[test]
    fn csv_parse_error_names_line() {
        let data = "1.0,2.0\nnope,3.0\n";
        let err = SampleSet::from_reader(data.as_bytes()).unwrap_err();
        match err {
            Error::CsvFormat { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn sig10_is_stable() {
        assert_eq!(format_sig10(0.5), "5.000000000e-1");
        assert_eq!(format_sig10(-0.0), "0.000000000e0");
        let v: f64 = "1.234567890e2".parse().unwrap();
        assert_eq!(format_sig10(v), "1.234567890e2");
    }
}
