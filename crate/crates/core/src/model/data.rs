use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two outcomes a computation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Y*, the outcome the policy is optimized for.
    Primary,
    /// Y†, the outcome whose attainable range is inferred.
    Subsidiary,
}

/// One draw (X, A, Y*, Y†).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub a: u8,
    pub y_star: f64,
    pub y_dag: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, a: u8, y_star: f64, y_dag: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("feature vector must have dimension >= 1"));
        }
        if a > 1 {
            return Err(Error::invalid(format!("action must be 0 or 1, got {a}")));
        }
        if x.iter().any(|v| !v.is_finite()) || !y_star.is_finite() || !y_dag.is_finite() {
            return Err(Error::invalid("observation fields must be finite"));
        }
        Ok(Self { x, a, y_star, y_dag })
    }

    pub fn outcome(&self, which: Outcome) -> f64 {
        match which {
            Outcome::Primary => self.y_star,
            Outcome::Subsidiary => self.y_dag,
        }
    }
}

/// An i.i.d. sample stored column-wise.
///
/// Features are kept row-major in one flat buffer (`n * dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    x: Vec<f64>,
    a: Vec<u8>,
    y_star: Vec<f64>,
    y_dag: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset, requiring a nonempty sample with a common feature
    /// dimension, finite values and both actions present.
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::invalid("dataset must contain at least one observation"))?;
        let dim = first.x.len();
        let n = observations.len();
        let mut x = Vec::with_capacity(n * dim);
        let mut a = Vec::with_capacity(n);
        let mut y_star = Vec::with_capacity(n);
        let mut y_dag = Vec::with_capacity(n);
        for obs in observations {
            if obs.x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: obs.x.len() });
            }
            x.extend_from_slice(&obs.x);
            a.push(obs.a);
            y_star.push(obs.y_star);
            y_dag.push(obs.y_dag);
        }
        Self::from_columns(dim, x, a, y_star, y_dag)
    }

    /// Builds a dataset from column buffers with the same validation as
    /// [`Dataset::new`].
    pub fn from_columns(
        dim: usize,
        x: Vec<f64>,
        a: Vec<u8>,
        y_star: Vec<f64>,
        y_dag: Vec<f64>,
    ) -> Result<Self> {
        let data = Self::from_parts(dim, x, a, y_star, y_dag)?;
        data.require_both_arms("dataset")?;
        Ok(data)
    }

    /// Structural validation only; the arm-coverage requirement is left to
    /// callers. Used for folds and training subsets.
    pub(crate) fn from_parts(
        dim: usize,
        x: Vec<f64>,
        a: Vec<u8>,
        y_star: Vec<f64>,
        y_dag: Vec<f64>,
    ) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::invalid("dataset must contain at least one observation"));
        }
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if x.len() != n * dim || y_star.len() != n || y_dag.len() != n {
            return Err(Error::invalid("column lengths disagree"));
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!("action at observation {i} must be 0 or 1")));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: i / dim, what: "feature" });
        }
        for (what, col) in [("primary outcome", &y_star), ("subsidiary outcome", &y_dag)] {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i, what });
            }
        }
        Ok(Self { dim, x, a, y_star, y_dag })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Flat row-major feature buffer.
    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn action(&self, i: usize) -> u8 {
        self.a[i]
    }

    pub fn actions(&self) -> &[u8] {
        &self.a
    }

    pub fn outcomes(&self, which: Outcome) -> &[f64] {
        match which {
            Outcome::Primary => &self.y_star,
            Outcome::Subsidiary => &self.y_dag,
        }
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            x: self.x(i).to_vec(),
            a: self.a[i],
            y_star: self.y_star[i],
            y_dag: self.y_dag[i],
        }
    }

    pub fn arm_count(&self, arm: u8) -> usize {
        self.a.iter().filter(|&&v| v == arm).count()
    }

    pub(crate) fn require_both_arms(&self, context: &str) -> Result<()> {
        for arm in [0u8, 1] {
            if self.arm_count(arm) == 0 {
                return Err(Error::MissingArm { arm, context: context.to_string() });
            }
        }
        Ok(())
    }

    /// Observations at `indices`, in the given order. The result may be
    /// missing an arm.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(indices.len() * self.dim);
        let mut a = Vec::with_capacity(indices.len());
        let mut y_star = Vec::with_capacity(indices.len());
        let mut y_dag = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("subset index {i} out of range")));
            }
            x.extend_from_slice(self.x(i));
            a.push(self.a[i]);
            y_star.push(self.y_star[i]);
            y_dag.push(self.y_dag[i]);
        }
        Self::from_parts(self.dim, x, a, y_star, y_dag)
    }

    /// Copy with one outcome value replaced.
    pub fn with_outcome(&self, i: usize, which: Outcome, value: f64) -> Self {
        let mut out = self.clone();
        match which {
            Outcome::Primary => out.y_star[i] = value,
            Outcome::Subsidiary => out.y_dag[i] = value,
        }
        out
    }

    fn header(dim: usize) -> Vec<String> {
        let mut cols: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
        cols.extend(["a", "y_star", "y_dag"].map(String::from));
        cols
    }

    /// Reads the `x1,...,xd,a,y_star,y_dag` wire format. Errors carry the
    /// 1-based line number of the offending record.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Csv { line: 1, message: e.to_string() })?
            .clone();
        let cols = headers.len();
        if cols < 4 {
            return Err(Error::Csv { line: 1, message: format!("expected at least 4 columns, found {cols}") });
        }
        let dim = cols - 3;
        let expected = Self::header(dim);
        for (k, (got, want)) in headers.iter().zip(&expected).enumerate() {
            if got.trim() != want {
                return Err(Error::Csv {
                    line: 1,
                    message: format!("header column {} is '{got}', expected '{want}'", k + 1),
                });
            }
        }

        let mut x = Vec::new();
        let mut a = Vec::new();
        let mut y_star = Vec::new();
        let mut y_dag = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != cols {
                return Err(Error::Csv { line, message: format!("expected {cols} fields, found {}", record.len()) });
            }
            let parse = |k: usize| -> Result<f64> {
                let field = record[k].trim();
                let v: f64 = field.parse().map_err(|_| Error::Csv {
                    line,
                    message: format!("column '{}': cannot parse '{field}' as a number", expected[k]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Csv { line, message: format!("column '{}' is not finite", expected[k]) });
                }
                Ok(v)
            };
            for k in 0..dim {
                x.push(parse(k)?);
            }
            let action = parse(dim)?;
            if action != 0.0 && action != 1.0 {
                return Err(Error::Csv { line, message: format!("action must be 0 or 1, got {action}") });
            }
            a.push(action as u8);
            y_star.push(parse(dim + 1)?);
            y_dag.push(parse(dim + 2)?);
        }
        if a.is_empty() {
            return Err(Error::Csv { line: 2, message: "no data rows".to_string() });
        }
        let data = Self::from_parts(dim, x, a, y_star, y_dag)?;
        data.require_both_arms("input data")?;
        Ok(data)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wtr.write_record(Self::header(self.dim)).map_err(to_io)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.x(i).iter().map(|v| v.to_string()).collect();
            row.push(self.a[i].to_string());
            row.push(self.y_star[i].to_string());
            row.push(self.y_dag[i].to_string());
            wtr.write_record(&row).map_err(to_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(x: f64, a: u8, y1: f64, y2: f64) -> Observation {
        Observation::new(vec![x], a, y1, y2).unwrap()
    }

    #[test]
    fn rejects_bad_observations() {
        assert!(Observation::new(vec![0.0], 2, 0.0, 0.0).is_err());
        assert!(Observation::new(vec![f64::NAN], 0, 0.0, 0.0).is_err());
        assert!(Observation::new(vec![], 0, 0.0, 0.0).is_err());
        assert!(Observation::new(vec![0.0], 0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn dataset_requires_both_arms_and_common_dim() {
        assert!(Dataset::new(vec![]).is_err());
        let single_arm = vec![obs(0.0, 1, 1.0, 1.0), obs(0.5, 1, 1.0, 1.0)];
        assert!(matches!(Dataset::new(single_arm), Err(Error::MissingArm { arm: 0, .. })));
        let mixed = vec![obs(0.0, 1, 1.0, 1.0), Observation::new(vec![0.0, 1.0], 0, 0.0, 0.0).unwrap()];
        assert!(matches!(Dataset::new(mixed), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let data = Dataset::new(vec![obs(-0.25, 0, 1.5, -2.0), obs(0.125, 1, 0.1, 3.0e-7)]).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,a,y_star,y_dag\n"));
        let back = Dataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let typo = "x1,act,y_star,y_dag\n0.1,0,1,1\n";
        assert!(matches!(Dataset::read_csv(typo.as_bytes()), Err(Error::Csv { line: 1, .. })));
        let bad = "x1,a,y_star,y_dag\n0.1,0,1,1\n0.2,1,oops,1\n";
        match Dataset::read_csv(bad.as_bytes()) {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_action = "x1,a,y_star,y_dag\n0.1,0,1,1\n0.2,3,1,1\n";
        assert!(matches!(Dataset::read_csv(bad_action.as_bytes()), Err(Error::Csv { line: 3, .. })));
    }

    #[test]
    fn single_arm_csv_is_not_a_usage_error() {
        let text = "x1,a,y_star,y_dag\n0.1,1,1,1\n0.2,1,1,1\n";
        let err = Dataset::read_csv(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingArm { .. }));
        assert!(!err.is_usage());
    }
}
