use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;

use crate::error::{GmmError, Result};

/// N weighted samples in D dimensions. Weights are rescaled on construction
/// so that they sum to N.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedDataset {
    /// Builds a dataset from row vectors. Missing weights default to one.
    pub fn new(points: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(GmmError::InvalidInput("dataset has no points".into()));
        }
        let dim = points[0].len();
        let mut flat = Vec::with_capacity(n * dim);
        for p in &points {
            if p.len() != dim {
                return Err(GmmError::DimensionMismatch { expected: dim, found: p.len() });
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(dim, flat, weights)
    }

    /// Builds a dataset from a row-major `N x D` buffer.
    pub fn from_flat(dim: usize, points: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(GmmError::InvalidInput("dimension must be at least 1".into()));
        }
        if points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(GmmError::InvalidInput(format!(
                "{} coordinates do not form whole {dim}-dimensional points",
                points.len()
            )));
        }
        if let Some(bad) = points.iter().position(|v| !v.is_finite()) {
            return Err(GmmError::InvalidInput(format!("non-finite coordinate in point {}", bad / dim)));
        }
        let n = points.len() / dim;
        let mut weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(GmmError::DimensionMismatch { expected: n, found: weights.len() });
        }
        if let Some(bad) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(GmmError::InvalidInput(format!("weight of point {bad} is not a positive finite number")));
        }
        let total: f64 = weights.iter().sum();
        if !total.is_finite() {
            return Err(GmmError::InvalidInput("weights overflow".into()));
        }
        let scale = n as f64 / total;
        if scale != 1.0 {
            for w in &mut weights {
                *w *= scale;
            }
        }
        Ok(Self { dim, points, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of samples N. Equal to the sum of the weights.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.len() as f64
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn point_vector(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(self.point(j))
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// Reads the CSV layout `x0,..,x{D-1}[,weight]` with a header row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let has_weight = names.last() == Some(&"weight");
        let dim = if has_weight { names.len() - 1 } else { names.len() };
        if dim == 0 {
            return Err(GmmError::Parse("no coordinate columns".into()));
        }
        for (i, name) in names.iter().take(dim).enumerate() {
            if *name != format!("x{i}") {
                return Err(GmmError::Parse(format!("column {i} is `{name}`, expected `x{i}`")));
            }
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != names.len() {
                return Err(GmmError::Parse(format!("row {} has {} fields", row + 1, record.len())));
            }
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| GmmError::Parse(format!("row {}, column {col}: `{field}` is not a number", row + 1)))?;
                if col < dim {
                    points.push(v);
                } else {
                    weights.push(v);
                }
            }
        }
        if points.is_empty() {
            return Err(GmmError::Parse("no data rows".into()));
        }
        Self::from_flat(dim, points, has_weight.then_some(weights))
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes the dataset in the layout accepted by [`Self::read_csv`].
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        header.push("weight".into());
        wtr.write_record(&header)?;
        for (p, w) in self.iter() {
            let mut row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
            row.push(format!("{w:.16e}"));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_normalized_to_count() {
        let d = WeightedDataset::new(vec![vec![0.0], vec![1.0], vec![2.0]], Some(vec![1.0, 2.0, 3.0])).unwrap();
        let s: f64 = d.weights().iter().sum();
        assert!((s - 3.0).abs() < 1e-12);
        assert!((d.weight(2) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(WeightedDataset::new(vec![], None).is_err());
        assert!(WeightedDataset::new(vec![vec![0.0, 1.0], vec![1.0]], None).is_err());
        assert!(WeightedDataset::new(vec![vec![f64::NAN]], None).is_err());
        assert!(WeightedDataset::new(vec![vec![0.0]], Some(vec![0.0])).is_err());
        assert!(WeightedDataset::new(vec![vec![0.0]], Some(vec![-1.0])).is_err());
    }

    #[test]
    fn csv_without_weights_defaults_to_one() {
        let text = "x0,x1\n1,2\n3,4\n";
        let d = WeightedDataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.len(), 2);
        assert_eq!(d.point(1), &[3.0, 4.0]);
        assert_eq!(d.weights(), &[1.0, 1.0]);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let d = WeightedDataset::new(
            vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 7.25], vec![2.0, std::f64::consts::PI]],
            Some(vec![0.5, 1.0, 1.5]),
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = WeightedDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn csv_header_must_name_coordinates() {
        assert!(WeightedDataset::read_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(WeightedDataset::read_csv("x0,x1\n1,zz\n".as_bytes()).is_err());
        assert!(WeightedDataset::read_csv("x0,x1\n".as_bytes()).is_err());
        assert!(WeightedDataset::read_csv("weight\n1\n".as_bytes()).is_err());
    }
}
