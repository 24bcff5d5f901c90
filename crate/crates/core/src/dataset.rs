//! Tabular data loading, covariate rescaling and train/test splitting.
//!
//! Covariates are mapped to the unit interval with `(x - min) / (max - min)`
//! using bounds taken from the data they were loaded with. The response is
//! never rescaled. Data loaded later against stored bounds (see
//! [`Dataset::with_bounds`]) is mapped with the same affine transform and is
//! not clamped, so values may fall outside `[0, 1]`.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The Los Angeles ozone data (330 days, response `O3`, eight meteorological
/// covariates) as bundled with the crate.
pub const OZONE_CSV: &str = include_str!("../data/ozone.csv");

/// Covariate matrix and response vector read by every model.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    names: Vec<String>,
    response: String,
    bounds: Vec<(f64, f64)>,
}

/// JSON debug dump of a dataset's shape and rescaling metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetSummary {
    pub n: usize,
    pub p: usize,
    pub response: String,
    pub names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
}

impl Dataset {
    /// Rescales raw covariates column-wise to `[0, 1]`, recording the bounds.
    pub fn from_raw(
        names: Vec<String>,
        raw: DMatrix<f64>,
        y: DVector<f64>,
        response: impl Into<String>,
    ) -> Result<Self> {
        let mut bounds = Vec::with_capacity(raw.ncols());
        for (j, col) in raw.column_iter().enumerate() {
            let lo = col.min();
            let hi = col.max();
            if !(hi > lo) {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("x{}", j + 1));
                return Err(Error::ConstantColumn(name));
            }
            bounds.push((lo, hi));
        }
        Self::with_bounds(names, raw, y, response, bounds)
    }

    /// Rescales raw covariates with previously recorded bounds. No clamping.
    pub fn with_bounds(
        names: Vec<String>,
        raw: DMatrix<f64>,
        y: DVector<f64>,
        response: impl Into<String>,
        bounds: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let (n, p) = raw.shape();
        check_shape(n, p, &y, &names)?;
        if bounds.len() != p {
            return Err(Error::LengthMismatch {
                left: bounds.len(),
                right: p,
            });
        }
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::ConstantColumn(names[j].clone()));
            }
        }
        let mut x = raw;
        for (j, mut col) in x.column_iter_mut().enumerate() {
            let (lo, hi) = bounds[j];
            col.apply(|v| *v = (*v - lo) / (hi - lo));
        }
        Ok(Self {
            x,
            y,
            names,
            response: response.into(),
            bounds,
        })
    }

    /// Wraps covariates that already live on the unit interval (bounds `(0, 1)`).
    pub fn from_unit(names: Vec<String>, x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let p = x.ncols();
        Self::with_bounds(names, x, y, "y", vec![(0.0, 1.0); p])
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn response(&self) -> &str {
        &self.response
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Maps the stored covariates back to their raw scale.
    pub fn unscaled_x(&self) -> DMatrix<f64> {
        let mut raw = self.x.clone();
        for (j, mut col) in raw.column_iter_mut().enumerate() {
            let (lo, hi) = self.bounds[j];
            col.apply(|v| *v = lo + *v * (hi - lo));
        }
        raw
    }

    /// Rows selected by `indices`, keeping this dataset's bounds.
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            names: self.names.clone(),
            response: self.response.clone(),
            bounds: self.bounds.clone(),
        }
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            n: self.n(),
            p: self.p(),
            response: self.response.clone(),
            names: self.names.clone(),
            bounds: self.bounds.clone(),
        }
    }
}

fn check_shape(n: usize, p: usize, y: &DVector<f64>, names: &[String]) -> Result<()> {
    if n < 3 {
        return Err(Error::InvalidData(format!("need at least 3 rows, got {n}")));
    }
    if p < 1 {
        return Err(Error::InvalidData("need at least one covariate".into()));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: n,
        });
    }
    if names.len() != p {
        return Err(Error::LengthMismatch {
            left: names.len(),
            right: p,
        });
    }
    Ok(())
}

struct RawTable {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

fn read_table<R: Read>(reader: R, response: &str) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let resp_col = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::MissingResponse(response.to_owned()))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2; // 1-based, header is line 1
        let mut vals = Vec::with_capacity(headers.len());
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: headers.get(c).cloned().unwrap_or_default(),
                    value: field.to_owned(),
                })?;
            vals.push(v);
        }
        rows.push(vals);
    }

    let n = rows.len();
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != resp_col)
        .map(|(_, h)| h.clone())
        .collect();
    let p = names.len();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        let mut j = 0;
        for (c, &v) in row.iter().enumerate() {
            if c == resp_col {
                y[i] = v;
            } else {
                x[(i, j)] = v;
                j += 1;
            }
        }
    }
    Ok(RawTable { names, x, y })
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Loads a comma-separated file with a header row and rescales every
/// non-response column to `[0, 1]`.
pub fn load_csv(path: impl AsRef<Path>, response: &str) -> Result<Dataset> {
    let t = read_table(open(path.as_ref())?, response)?;
    Dataset::from_raw(t.names, t.x, t.y, response)
}

/// Like [`load_csv`] but for in-memory text.
pub fn parse_csv(text: &str, response: &str) -> Result<Dataset> {
    let t = read_table(text.as_bytes(), response)?;
    Dataset::from_raw(t.names, t.x, t.y, response)
}

/// Loads new rows against bounds recorded from an earlier fit.
pub fn load_csv_with_bounds(
    path: impl AsRef<Path>,
    response: &str,
    bounds: Vec<(f64, f64)>,
) -> Result<Dataset> {
    let t = read_table(open(path.as_ref())?, response)?;
    Dataset::with_bounds(t.names, t.x, t.y, response, bounds)
}

/// The bundled ozone data with response `O3`.
pub fn ozone() -> Dataset {
    parse_csv(OZONE_CSV, "O3").expect("bundled ozone fixture is well formed")
}

/// A seeded partition of row indices into train and test sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn apply(&self, ds: &Dataset) -> (Dataset, Dataset) {
        (ds.select_rows(&self.train_indices), ds.select_rows(&self.test_indices))
    }
}

/// Uniformly random partition with `round(train_fraction * n)` training rows.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} not in (0, 1)"
        )));
    }
    let n = ds.n();
    let n_train = (train_fraction * n as f64).round() as usize;
    let need = ds.p() + 2;
    if n_train < need {
        return Err(Error::SplitTooSmall {
            train: n_train,
            need,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut train_indices = idx[..n_train].to_vec();
    let mut test_indices = idx[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitPlan {
        train_indices,
        test_indices,
        seed,
    })
}
