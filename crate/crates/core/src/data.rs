//! Observational samples: validation, CSV ingestion and group splitting.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Arm, Error, Result};

/// Covariates, treatment indicators and observed outcomes for `n` units.
///
/// Immutable once constructed; every accepted sample has `n >= 2`, both
/// treatment groups nonempty and only finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    x: DMatrix<f64>,
    t: Vec<bool>,
    y: Vec<f64>,
    covariate_names: Vec<String>,
}

impl ObservedSample {
    pub fn new(x: DMatrix<f64>, t: Vec<bool>, y: Vec<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|k| format!("x{k}")).collect();
        Self::with_names(x, t, y, names)
    }

    pub fn with_names(
        x: DMatrix<f64>,
        t: Vec<bool>,
        y: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidSample(format!(
                "need at least 2 units, got {n}"
            )));
        }
        if t.len() != n || x.nrows() != n {
            return Err(Error::InvalidSample(format!(
                "length mismatch: {} outcomes, {} treatments, {} covariate rows",
                n,
                t.len(),
                x.nrows()
            )));
        }
        if covariate_names.len() != x.ncols() {
            return Err(Error::InvalidSample("covariate name count mismatch".into()));
        }
        for (row, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: row + 1,
                    column: "outcome".into(),
                });
            }
        }
        for c in 0..x.ncols() {
            for row in 0..n {
                if !x[(row, c)].is_finite() {
                    return Err(Error::NonFinite {
                        row: row + 1,
                        column: covariate_names[c].clone(),
                    });
                }
            }
        }
        let n1 = t.iter().filter(|&&b| b).count();
        if n1 == 0 {
            return Err(Error::EmptyGroup(Arm::Treated));
        }
        if n1 == n {
            return Err(Error::EmptyGroup(Arm::Control));
        }
        Ok(Self {
            x,
            t,
            y,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn t(&self) -> &[bool] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&b| b).count()
    }

    /// Builds the sample made of the given rows (repeats allowed), as used by
    /// the nonparametric bootstrap.
    pub fn resample(&self, rows: &[usize]) -> Result<Self> {
        let x = DMatrix::from_fn(rows.len(), self.p(), |i, c| self.x[(rows[i], c)]);
        let t = rows.iter().map(|&r| self.t[r]).collect();
        let y = rows.iter().map(|&r| self.y[r]).collect();
        Self::with_names(x, t, y, self.covariate_names.clone())
    }

    /// Writes the sample as CSV with columns `t`, `y` and the covariate names.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "y".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for j in 0..self.n() {
            let mut rec = vec![
                if self.t[j] {
                    "1".to_string()
                } else {
                    "0".to_string()
                },
                format!("{:?}", self.y[j]),
            ];
            rec.extend((0..self.p()).map(|c| format!("{:?}", self.x[(j, c)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column-name mapping used when reading a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub treatment: String,
    pub outcome: String,
    /// Covariate columns; empty means "every other column".
    pub covariates: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            treatment: "t".into(),
            outcome: "y".into(),
            covariates: Vec::new(),
        }
    }
}

pub fn load_sample(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<ObservedSample> {
    let file = std::fs::File::open(path)?;
    read_sample(file, schema)
}

pub fn read_sample<R: Read>(reader: R, schema: &ColumnSchema) -> Result<ObservedSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_col = find(&schema.treatment)?;
    let y_col = find(&schema.outcome)?;
    let cov_names: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != t_col && *i != y_col)
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.covariates.clone()
    };
    if cov_names.is_empty() {
        return Err(Error::MissingColumn("at least one covariate".into()));
    }
    let cov_cols = cov_names
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let tv = rec.get(t_col).unwrap_or("");
        t.push(match tv {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::InvalidTreatment {
                    row,
                    value: other.to_string(),
                })
            }
        });
        y.push(parse_finite(rec.get(y_col), row, &schema.outcome)?);
        for (&c, name) in cov_cols.iter().zip(&cov_names) {
            xs.push(parse_finite(rec.get(c), row, name)?);
        }
    }
    let x = DMatrix::from_row_slice(y.len(), cov_cols.len(), &xs);
    ObservedSample::with_names(x, t, y, cov_names)
}

fn parse_finite(field: Option<&str>, row: usize, column: &str) -> Result<f64> {
    field
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonFinite {
            row,
            column: column.to_string(),
        })
}

/// Partition of unit indices (0-based) by treatment arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    pub s1: Vec<usize>,
    pub s0: Vec<usize>,
}

impl GroupIndex {
    pub fn n1(&self) -> usize {
        self.s1.len()
    }

    pub fn n0(&self) -> usize {
        self.s0.len()
    }
}

pub fn split_groups(sample: &ObservedSample) -> GroupIndex {
    let (s1, s0): (Vec<usize>, Vec<usize>) = (0..sample.n()).partition(|&j| sample.t[j]);
    GroupIndex { s1, s0 }
}

/// Both potential outcomes and true propensity scores; only available for
/// simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSample {
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub tau0: Vec<f64>,
}

impl PotentialSample {
    pub fn new(y1: Vec<f64>, y0: Vec<f64>, tau0: Vec<f64>) -> Result<Self> {
        if y1.len() != y0.len() || y1.len() != tau0.len() {
            return Err(Error::InvalidSample(
                "potential outcome length mismatch".into(),
            ));
        }
        if let Some(j) = tau0.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidSample(format!(
                "true propensity score of unit {} is outside (0, 1)",
                j + 1
            )));
        }
        Ok(Self { y1, y0, tau0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(csv: &str) -> Result<ObservedSample> {
        read_sample(csv.as_bytes(), &ColumnSchema::default())
    }

    #[test]
    fn four_row_csv() {
        let s = parse("t,y,x1\n1,2.0,0.1\n0,1.0,0.2\n1,3.0,0.3\n0,0.5,0.4\n").unwrap();
        let g = split_groups(&s);
        assert_eq!(g.n1(), 2);
        assert_eq!(g.n0(), 2);
        assert_eq!(g.s1, vec![0, 2]);
        assert_eq!(g.s0, vec![1, 3]);
    }

    #[test]
    fn all_treated_is_rejected() {
        let err = parse("t,y,x1\n1,2,0\n1,1,0\n1,3,1\n").unwrap_err();
        assert_eq!(err.to_string(), "control group empty");
    }

    #[test]
    fn nan_outcome_cites_row() {
        let err = parse("t,y,x1\n1,2,0\n0,1,0\n1,NaN,1\n0,1,1\n").unwrap_err();
        match err {
            Error::NonFinite { row, ref column } => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            e => panic!("unexpected {e}"),
        }
        assert!(err.to_string().contains("row 3"));
    }

    #[test]
    fn treatment_must_be_exactly_zero_or_one() {
        let err = parse("t,y,x1\n1,2,0\n0.0,1,0\n").unwrap_err();
        assert!(matches!(err, Error::InvalidTreatment { row: 2, .. }));
        let err = parse("t,y,x1\n1,2,0\ntrue,1,0\n").unwrap_err();
        assert!(matches!(err, Error::InvalidTreatment { .. }));
    }

    #[test]
    fn missing_columns() {
        let schema = ColumnSchema {
            treatment: "z".into(),
            ..Default::default()
        };
        let err = read_sample("t,y,x\n1,1,1\n0,0,0\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "z"));
        let err = parse("t,y\n1,1\n0,0\n").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(_)));
    }

    #[test]
    fn explicit_covariate_selection() {
        let schema = ColumnSchema {
            treatment: "treat".into(),
            outcome: "out".into(),
            covariates: vec!["b".into()],
        };
        let s = read_sample("a,treat,b,out\n9,1,2,3\n8,0,4,5\n".as_bytes(), &schema).unwrap();
        assert_eq!(s.p(), 1);
        assert_eq!(s.x()[(1, 0)], 4.0);
        assert_eq!(s.y(), &[3.0, 5.0]);
    }

    #[test]
    fn single_treated_unit() {
        let x = DMatrix::from_element(5, 1, 0.0);
        let s =
            ObservedSample::new(x, vec![false, false, true, false, false], vec![0.0; 5]).unwrap();
        assert_eq!(split_groups(&s).n1(), 1);
    }

    #[test]
    fn roundtrip_is_idempotent() {
        let s = parse("t,y,x1,x2\n1,2.5,0.1,3\n0,1e-3,0.2,4\n1,3,-0.3,5\n0,0.5,0.4,6\n").unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let s2 = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(s, s2);
        let mut buf2 = Vec::new();
        s2.write_csv(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn potential_sample_requires_interior_scores() {
        assert!(PotentialSample::new(vec![1.0], vec![0.0], vec![1.0]).is_err());
        assert!(PotentialSample::new(vec![1.0], vec![0.0], vec![0.5]).is_ok());
    }

    proptest::proptest! {
        #[test]
        fn split_is_partition(bits in proptest::collection::vec(proptest::bool::ANY, 2..1000)) {
            let n = bits.len();
            proptest::prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            let s = ObservedSample::new(DMatrix::zeros(n, 1), bits.clone(), vec![0.0; n]).unwrap();
            let g = split_groups(&s);
            proptest::prop_assert_eq!(g.n1() + g.n0(), n);
            let mut all: Vec<usize> = g.s1.iter().chain(&g.s0).copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for &j in &g.s1 { proptest::prop_assert!(bits[j]); }
            for &j in &g.s0 { proptest::prop_assert!(!bits[j]); }
        }
    }
}
