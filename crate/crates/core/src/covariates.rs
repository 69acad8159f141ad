//! The shared covariate matrix: schema, validated table, CSV I/O,
//! standardization and correlation.
//!
//! Binary columns are coded {1, 2} and the birthplace column X21 is coded
//! 1..=16, matching the `(x − 1)` terms used throughout the surface
//! functions.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::csvio;
use crate::error::{Error, Result};

pub const NUM_COLUMNS: usize = 8;
pub const X21_LEVELS: u8 = 16;

/// Column positions in schema order.
pub mod col {
    pub const X1: usize = 0;
    pub const X3: usize = 1;
    pub const X10: usize = 2;
    pub const X14: usize = 3;
    pub const X15: usize = 4;
    pub const X21: usize = 5;
    pub const X24: usize = 6;
    pub const X43: usize = 7;
}

pub type Corr8 = [[f64; NUM_COLUMNS]; NUM_COLUMNS];

/// Sample correlations of the eight covariates in the source cohort.
pub const TARGET_CORRELATIONS: Corr8 = [
    [1.00, 0.04, -0.07, -0.03, -0.04, -0.07, 0.03, -0.01],
    [0.04, 1.00, -0.02, 0.03, -0.02, -0.10, -0.16, 0.13],
    [-0.07, -0.02, 1.00, 0.04, 0.09, -0.02, -0.10, -0.07],
    [-0.03, 0.03, 0.04, 1.00, 0.09, -0.03, -0.08, 0.07],
    [-0.04, -0.02, 0.09, 0.09, 1.00, -0.03, 0.04, -0.04],
    [-0.07, -0.10, -0.02, -0.03, -0.03, 1.00, 0.20, -0.00],
    [0.03, -0.16, -0.10, -0.08, 0.04, 0.20, 1.00, -0.11],
    [-0.01, 0.13, -0.07, 0.07, -0.04, -0.00, -0.11, 1.00],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Binary,
    Categorical { levels: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnSpec {
    pub name: &'static str,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CovariateSchema {
    columns: Vec<ColumnSpec>,
}

impl CovariateSchema {
    /// The eight-column schema every DGP is defined on.
    pub fn standard() -> Self {
        use ColumnKind::*;
        let c = |name, kind| ColumnSpec { name, kind };
        Self {
            columns: vec![
                c("X1", Continuous),
                c("X3", Continuous),
                c("X10", Binary),
                c("X14", Binary),
                c("X15", Binary),
                c("X21", Categorical { levels: X21_LEVELS }),
                c("X24", Binary),
                c("X43", Continuous),
            ],
        }
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.columns.iter().map(|c| c.name).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if *self != Self::standard() {
            return Err(Error::Config(
                "covariate schema must be X1,X3,X10,X14,X15,X21,X24,X43 with standard kinds".into(),
            ));
        }
        Ok(())
    }
}

impl Default for CovariateSchema {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RealFile(PathBuf),
    Synthetic { n: usize, seed: u64 },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::RealFile(p) => write!(f, "file:{}", p.display()),
            Provenance::Synthetic { n, seed } => write!(f, "synthetic(n={n}, seed={seed})"),
        }
    }
}

/// One unit's covariates, decoded for the surface functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub x1: f64,
    pub x3: f64,
    pub x10: f64,
    pub x14: f64,
    pub x15: f64,
    pub x21: u8,
    pub x24: f64,
    pub x43: f64,
}

/// Validated, immutable n×8 covariate matrix, stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    schema: CovariateSchema,
    columns: Vec<Vec<f64>>,
    provenance: Provenance,
}

impl CovariateTable {
    /// Builds a table from schema-ordered columns, enforcing every coding
    /// invariant. Row numbers in errors are 1-based.
    pub fn from_columns(columns: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        let schema = CovariateSchema::standard();
        if columns.len() != NUM_COLUMNS {
            return Err(Error::LengthMismatch {
                what: "covariate columns",
                expected: NUM_COLUMNS,
                found: columns.len(),
            });
        }
        let n = columns[0].len();
        for c in &columns {
            if c.len() != n {
                return Err(Error::LengthMismatch {
                    what: "covariate column",
                    expected: n,
                    found: c.len(),
                });
            }
        }
        if n < 2 {
            return Err(Error::Validation(format!(
                "covariate table needs at least 2 units, got {n}"
            )));
        }
        for (spec, values) in schema.columns.iter().zip(&columns) {
            for (i, &v) in values.iter().enumerate() {
                let ok = match spec.kind {
                    ColumnKind::Continuous => v.is_finite(),
                    ColumnKind::Binary => v == 1.0 || v == 2.0,
                    ColumnKind::Categorical { levels } => {
                        v.fract() == 0.0 && v >= 1.0 && v <= levels as f64
                    }
                };
                if !ok {
                    return Err(Error::Coding {
                        row: i + 1,
                        column: spec.name,
                        value: v,
                        expected: match spec.kind {
                            ColumnKind::Continuous => "finite real",
                            ColumnKind::Binary => "1 or 2",
                            ColumnKind::Categorical { .. } => "integer in 1..=16",
                        },
                    });
                }
            }
        }
        Ok(Self {
            schema,
            columns,
            provenance,
        })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn n(&self) -> usize {
        self.columns[0].len()
    }

    pub fn column(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn unit(&self, i: usize) -> Unit {
        let c = &self.columns;
        Unit {
            x1: c[col::X1][i],
            x3: c[col::X3][i],
            x10: c[col::X10][i],
            x14: c[col::X14][i],
            x15: c[col::X15][i],
            x21: c[col::X21][i] as u8,
            x24: c[col::X24][i],
            x43: c[col::X43][i],
        }
    }

    pub fn units(&self) -> impl Iterator<Item = Unit> + '_ {
        (0..self.n()).map(|i| self.unit(i))
    }

    /// Birthplace levels as integers.
    pub fn x21_levels(&self) -> Vec<u8> {
        self.columns[col::X21].iter().map(|&v| v as u8).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let cols: Vec<&[f64]> = self.columns.iter().map(Vec::as_slice).collect();
        csvio::render_columns(&self.schema.names(), &cols)
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        csvio::write_atomic(path, self.to_csv_string().as_bytes())
    }

    /// Z-scores the continuous columns (sample, n−1, standard deviation);
    /// binary and categorical columns pass through untouched.
    pub fn standardize_columns(&self) -> Result<Self> {
        let mut columns = self.columns.clone();
        for (spec, values) in self.schema.columns.iter().zip(columns.iter_mut()) {
            if spec.kind != ColumnKind::Continuous {
                continue;
            }
            let (mean, sd) = mean_sd(values);
            if !(sd > 0.0) {
                return Err(Error::Calibration(format!(
                    "continuous column {} has zero variance",
                    spec.name
                )));
            }
            for v in values.iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
        Ok(Self {
            schema: self.schema.clone(),
            columns,
            provenance: self.provenance.clone(),
        })
    }

    /// Pearson correlations of all eight columns. The diagonal is exactly 1
    /// and the lower triangle mirrors the upper one.
    pub fn correlation_matrix(&self) -> Result<Corr8> {
        let names = self.schema.names();
        let centered: Vec<(Vec<f64>, f64)> = self
            .columns
            .iter()
            .zip(&names)
            .map(|(c, name)| {
                let (mean, _) = mean_sd(c);
                let d: Vec<f64> = c.iter().map(|v| v - mean).collect();
                let ss: f64 = d.iter().map(|v| v * v).sum();
                if !(ss > 0.0) {
                    return Err(Error::Calibration(format!("column {name} has zero variance")));
                }
                Ok((d, ss.sqrt()))
            })
            .collect::<Result<_>>()?;
        let mut m = [[0.0; NUM_COLUMNS]; NUM_COLUMNS];
        for i in 0..NUM_COLUMNS {
            m[i][i] = 1.0;
            for j in (i + 1)..NUM_COLUMNS {
                let (a, na) = &centered[i];
                let (b, nb) = &centered[j];
                let cross: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let r = cross / (na * nb);
                m[i][j] = r;
                m[j][i] = r;
            }
        }
        Ok(m)
    }
}

/// Reads a headered covariate file whose columns are the schema names in order.
pub fn load_covariate_table(path: &Path, schema: &CovariateSchema) -> Result<CovariateTable> {
    schema.validate()?;
    let columns = csvio::read_numeric_columns(path, &schema.names())?;
    if columns[0].is_empty() {
        return Err(Error::EmptyBody {
            path: path.to_path_buf(),
        });
    }
    CovariateTable::from_columns(columns, Provenance::RealFile(path.to_path_buf()))
}

/// Mean and sample (n−1) standard deviation.
pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn table(x1: Vec<f64>, x3: Vec<f64>) -> CovariateTable {
        let n = x1.len();
        let ones = vec![1.0; n];
        let mut x21 = vec![1.0; n];
        x21[0] = 2.0;
        let mut x24 = vec![1.0; n];
        x24[n - 1] = 2.0;
        let x43: Vec<f64> = (0..n).map(|i| (i * i) as f64).collect();
        let mut x10 = ones.clone();
        x10[0] = 2.0;
        let mut x14 = ones.clone();
        x14[1] = 2.0;
        let mut x15 = ones;
        x15[0] = 2.0;
        CovariateTable::from_columns(
            vec![x1, x3, x10, x14, x15, x21, x24, x43],
            Provenance::Synthetic { n, seed: 0 },
        )
        .unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "X1,X3,X10,X14,X15,X21,X24,X43\n";

    #[test]
    fn standardize_hand_example() {
        let t = table(vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 5.0]);
        let s = t.standardize_columns().unwrap();
        assert_eq!(s.column(col::X1), &[-1.0, 0.0, 1.0]);
        assert_eq!(s.column(col::X10), t.column(col::X10));
        assert_eq!(s.column(col::X21), t.column(col::X21));
    }

    #[test]
    fn standardize_binary_passthrough() {
        let t = table(vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 5.0]);
        let s = t.standardize_columns().unwrap();
        assert_eq!(s.column(col::X10), &[2.0, 1.0, 1.0]);
    }

    #[test]
    fn standardize_zero_variance_names_column() {
        let t = table(vec![5.0, 5.0, 5.0], vec![0.0, 1.0, 5.0]);
        let err = t.standardize_columns().unwrap_err();
        assert!(matches!(&err, Error::Calibration(m) if m.contains("X1")), "{err}");
    }

    #[test]
    fn standardize_is_idempotent() {
        let t = table(
            vec![0.3, -1.7, 2.2, 9.0, 4.4],
            vec![0.0, 0.0, 1.5, 3.0, 0.2],
        );
        let once = t.standardize_columns().unwrap();
        let twice = once.standardize_columns().unwrap();
        for c in [col::X1, col::X3, col::X43] {
            for (a, b) in once.column(c).iter().zip(twice.column(c)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_identical_and_opposite_columns() {
        let t = table(vec![1.0, 2.0, 4.0], vec![1.0, 2.0, 4.0]);
        let m = t.correlation_matrix().unwrap();
        assert!((m[col::X1][col::X3] - 1.0).abs() < 1e-15);

        let t = table(vec![1.0, 2.0], vec![2.0, 1.0]);
        let m = t.correlation_matrix().unwrap();
        assert!((m[col::X1][col::X3] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn correlation_matrix_shape_invariants() {
        let t = table(
            vec![0.3, -1.7, 2.2, 9.0, 4.4, 1.0],
            vec![0.0, 0.0, 1.5, 3.0, 0.2, 7.0],
        );
        let m = t.correlation_matrix().unwrap();
        for i in 0..NUM_COLUMNS {
            assert_eq!(m[i][i], 1.0);
            for j in 0..NUM_COLUMNS {
                assert_eq!(m[i][j], m[j][i]);
                assert!(m[i][j].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn correlation_zero_variance_errors() {
        let t = table(vec![5.0, 5.0, 5.0], vec![0.0, 1.0, 5.0]);
        assert!(t.correlation_matrix().is_err());
    }

    #[test]
    fn load_rejects_binary_coding_violation() {
        let f = write_tmp(&format!("{HEADER}0.1,0,1,1,1,1,1,0\n0.2,0,3,1,1,1,1,0\n"));
        let err = load_covariate_table(f.path(), &CovariateSchema::standard()).unwrap_err();
        match err {
            Error::Coding { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "X10");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn load_rejects_x21_out_of_range() {
        let f = write_tmp(&format!("{HEADER}0.1,0,1,1,1,17,1,0\n0.2,0,1,1,1,1,1,0\n"));
        let err = load_covariate_table(f.path(), &CovariateSchema::standard()).unwrap_err();
        assert!(matches!(err, Error::Coding { column: "X21", row: 1, .. }));
    }

    #[test]
    fn load_rejects_header_only() {
        let f = write_tmp(HEADER);
        let err = load_covariate_table(f.path(), &CovariateSchema::standard()).unwrap_err();
        assert!(matches!(err, Error::EmptyBody { .. }));
    }

    #[test]
    fn load_rejects_header_mismatch_and_text() {
        let f = write_tmp("X1,X3,X10,X14,X15,X21,X43,X24\n0,0,1,1,1,1,1,0\n");
        assert!(matches!(
            load_covariate_table(f.path(), &CovariateSchema::standard()),
            Err(Error::HeaderMismatch { .. })
        ));
        let f = write_tmp(&format!("{HEADER}0,abc,1,1,1,1,1,0\n1,0,1,1,1,1,1,0\n"));
        match load_covariate_table(f.path(), &CovariateSchema::standard()) {
            Err(Error::NonNumeric { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (1, "X3"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_missing_file_is_io() {
        let err = load_covariate_table(Path::new("/nonexistent/X.csv"), &CovariateSchema::standard())
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn write_then_load_is_bit_exact() {
        let t = table(
            vec![0.1, -1.0 / 3.0, 2.2e-17, 9.0],
            vec![0.0, std::f64::consts::PI, 1.5, 3.0],
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("X.csv");
        t.write_table(&p).unwrap();
        let back = load_covariate_table(&p, &CovariateSchema::standard()).unwrap();
        assert_eq!(back.n(), 4);
        for c in 0..NUM_COLUMNS {
            let a: Vec<u64> = t.column(c).iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.column(c).iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn schema_kinds() {
        let s = CovariateSchema::standard();
        assert_eq!(s.names(), vec!["X1", "X3", "X10", "X14", "X15", "X21", "X24", "X43"]);
        assert_eq!(s.columns()[col::X21].kind, ColumnKind::Categorical { levels: 16 });
        assert!(s.validate().is_ok());
    }

    #[test]
    fn targets_are_symmetric_unit_diagonal() {
        for i in 0..NUM_COLUMNS {
            assert_eq!(TARGET_CORRELATIONS[i][i], 1.0);
            for j in 0..NUM_COLUMNS {
                assert_eq!(TARGET_CORRELATIONS[i][j], TARGET_CORRELATIONS[j][i]);
            }
        }
    }
}
