use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::bounds::InputBox;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("cannot read dataset: {0}")]
    Io(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("dataset needs at least one feature column and a target column")]
    TooFewColumns,
    #[error("row {row}: expected {expected} fields, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("row {row}, column {column:?}: {value:?} is not a finite number")]
    NotANumber { row: usize, column: String, value: String },
    #[error("dataset is empty")]
    Empty,
    #[error("dataset has {found} feature columns, model expects {expected}")]
    Width { expected: usize, found: usize },
    #[error("rows outside the declared input box: {}", list(.0))]
    OutOfBox(Vec<usize>),
}

fn list(rows: &[usize]) -> String {
    const SHOWN: usize = 20;
    let mut s: Vec<String> = rows.iter().take(SHOWN).map(|r| r.to_string()).collect();
    if rows.len() > SHOWN {
        s.push(format!("... ({} rows total)", rows.len()));
    }
    s.join(", ")
}

/// Rows of features followed by one target column. Row indices are
/// 0-based positions after the header.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.columns.len().saturating_sub(1)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Dataset, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let columns: Vec<String> =
            rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?.iter().map(str::to_string).collect();
        if columns.len() < 2 {
            return Err(DataError::TooFewColumns);
        }
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                    DataError::Ragged { row, expected: *expected_len as usize, found: *len as usize }
                }
                _ => DataError::Csv(e.to_string()),
            })?;
            let mut values = Vec::with_capacity(columns.len());
            for (field, column) in rec.iter().zip(&columns) {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => values.push(v),
                    _ => return Err(DataError::NotANumber { row, column: column.clone(), value: field.to_string() }),
                }
            }
            targets.push(values.pop().expect("at least two columns"));
            features.push(values);
        }
        Ok(Dataset { columns, features, targets })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| DataError::Io(e.to_string()))?;
        Self::from_reader(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| DataError::Csv(e.to_string());
        w.write_record(&self.columns).map_err(err)?;
        for (x, y) in self.features.iter().zip(&self.targets) {
            let row: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| format!("{v:?}")).collect();
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| DataError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Rows with a feature or target outside `bounds`. Features are
    /// matched to `feature_names` by position.
    pub fn out_of_box_rows(&self, bounds: &InputBox, feature_names: &[String], target_name: &str) -> Vec<usize> {
        let inside = |name: &str, v: f64| bounds.get(name).is_some_and(|iv| iv.contains(v));
        (0..self.len())
            .filter(|&r| {
                !(self.features[r].iter().zip(feature_names).all(|(v, n)| inside(n, *v))
                    && inside(target_name, self.targets[r]))
            })
            .collect()
    }

    /// Checks shape and box membership before training.
    pub fn check(&self, bounds: &InputBox, feature_names: &[String], target_name: &str) -> Result<(), DataError> {
        if self.is_empty() {
            return Err(DataError::Empty);
        }
        if self.dim() != feature_names.len() {
            return Err(DataError::Width { expected: feature_names.len(), found: self.dim() });
        }
        let rows = self.out_of_box_rows(bounds, feature_names, target_name);
        if rows.is_empty() {
            Ok(())
        } else {
            Err(DataError::OutOfBox(rows))
        }
    }
}

/// Two Gaussian blobs around (-1, -1) (label 0) and (1, 1) (label 1) with
/// standard deviation `spread`, clamped to `[-limit, limit]`.
pub fn two_blobs(n: usize, spread: f64, limit: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spread).expect("valid spread");
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as f64;
        let c = if label == 0.0 { -1.0 } else { 1.0 };
        let x: Vec<f64> = (0..2).map(|_| (c + normal.sample(&mut rng)).clamp(-limit, limit)).collect();
        features.push(x);
        targets.push(label);
    }
    Dataset { columns: vec!["x1".into(), "x2".into(), "y".into()], features, targets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::Interval;

    #[test]
    fn csv_round_trip() {
        let d = two_blobs(20, 0.5, 3.0, 1);
        let back = Dataset::from_reader(d.to_csv_string().as_bytes()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn malformed_rows() {
        let e = Dataset::from_reader("a,b,y\n1,2,3\n1,2\n".as_bytes()).unwrap_err();
        assert_eq!(e, DataError::Ragged { row: 1, expected: 3, found: 2 });
        let e = Dataset::from_reader("a,y\n1,x\n".as_bytes()).unwrap_err();
        assert!(matches!(e, DataError::NotANumber { row: 0, .. }));
        assert_eq!(Dataset::from_reader("y\n1\n".as_bytes()).unwrap_err(), DataError::TooFewColumns);
    }

    #[test]
    fn box_check_lists_rows() {
        let d = Dataset::from_reader("a,y\n0.5,0\n7,1\n0,2\n".as_bytes()).unwrap();
        let b =
            InputBox::new().with("x1", Interval::new(-1.0, 1.0).unwrap()).with("y", Interval::new(0.0, 1.0).unwrap());
        assert_eq!(d.check(&b, &["x1".into()], "y"), Err(DataError::OutOfBox(vec![1, 2])));
        let empty = Dataset::from_reader("a,y\n".as_bytes()).unwrap();
        assert_eq!(empty.check(&b, &["x1".into()], "y"), Err(DataError::Empty));
    }

    #[test]
    fn blobs_are_balanced_and_bounded() {
        let d = two_blobs(400, 0.6, 3.0, 9);
        assert_eq!(d.targets.iter().filter(|&&y| y == 1.0).count(), 200);
        assert!(d.features.iter().flatten().all(|v| v.abs() <= 3.0));
    }
}
