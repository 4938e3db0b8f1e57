//! Pearson correlation matrices, the `sqrt(2 (1 - rho))` distance transform
//! and summary statistics of the off-diagonal correlations.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::marketdata::ReturnMatrix;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CorrDistError {
    #[error("need at least {required} return windows, got {found}")]
    TooFewWindows { required: usize, found: usize },
    #[error("ticker {0} has zero return variance")]
    ZeroVariance(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorrDistError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    tickers: Vec<String>,
    rho: Array2<f64>,
}

impl CorrelationMatrix {
    /// Checks shape, symmetry, unit diagonal and `|rho| <= 1`.
    pub fn new(tickers: Vec<String>, rho: Array2<f64>) -> Result<Self> {
        check_square(&tickers, &rho)?;
        let n = tickers.len();
        for i in 0..n {
            if rho[[i, i]] != 1.0 {
                return Err(CorrDistError::InvalidMatrix(format!(
                    "diagonal entry {i} is {} not 1",
                    rho[[i, i]]
                )));
            }
            for j in 0..n {
                let v = rho[[i, j]];
                if !v.is_finite() || v.abs() > 1.0 {
                    return Err(CorrDistError::InvalidMatrix(format!(
                        "correlation ({i}, {j}) = {v} outside [-1, 1]"
                    )));
                }
                if (v - rho[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(CorrDistError::InvalidMatrix(format!(
                        "not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { tickers, rho })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rho[[i, j]]
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        write_matrix_csv(sink, &self.tickers, &self.rho)
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let (tickers, rho) = read_matrix_csv(source)?;
        Self::new(tickers, rho)
    }
}

/// Symmetric non-negative dissimilarities with a zero diagonal.
///
/// Correlation-derived matrices lie in `[0, 2]`; split metrics built from
/// fitted weights may exceed 2, so the upper bound is not enforced here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    tickers: Vec<String>,
    d: Array2<f64>,
}

impl DistanceMatrix {
    pub fn new(tickers: Vec<String>, d: Array2<f64>) -> Result<Self> {
        check_square(&tickers, &d)?;
        let n = tickers.len();
        for i in 0..n {
            if d[[i, i]] != 0.0 {
                return Err(CorrDistError::InvalidMatrix(format!(
                    "diagonal entry {i} is {} not 0",
                    d[[i, i]]
                )));
            }
            for j in 0..n {
                let v = d[[i, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(CorrDistError::InvalidMatrix(format!(
                        "distance ({i}, {j}) = {v} is negative or not finite"
                    )));
                }
                if (v - d[[j, i]]).abs() > SYMMETRY_TOL * v.abs().max(1.0) {
                    return Err(CorrDistError::InvalidMatrix(format!(
                        "not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { tickers, d })
    }

    /// Labels taxa `0..n`.
    pub fn unlabeled(d: Array2<f64>) -> Result<Self> {
        let tickers = (0..d.nrows()).map(|i| i.to_string()).collect();
        Self::new(tickers, d)
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[[i, j]]
    }

    /// Multiplies every entry by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            tickers: self.tickers.clone(),
            d: &self.d * c,
        }
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        write_matrix_csv(sink, &self.tickers, &self.d)
    }

    pub fn read_csv<R: Read>(source: R) -> Result<Self> {
        let (tickers, d) = read_matrix_csv(source)?;
        Self::new(tickers, d)
    }
}

/// Summary of the `n (n - 1) / 2` off-diagonal correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub negative_count: usize,
    pub total_pairs: usize,
}

/// Sample Pearson correlations between the ticker columns of `returns`.
///
/// Uses the two-pass form: columns are centred first, then cross products of
/// the centred values are accumulated. The normalisation constant cancels.
pub fn correlations(returns: &ReturnMatrix) -> Result<CorrelationMatrix> {
    let (t, n) = returns.values.dim();
    if t < 3 {
        return Err(CorrDistError::TooFewWindows {
            required: 3,
            found: t,
        });
    }
    let mut centred = returns.values.clone();
    let mut norms = vec![0.0; n];
    for j in 0..n {
        let mut col = centred.column_mut(j);
        let mean = col.sum() / t as f64;
        col.mapv_inplace(|x| x - mean);
        let ss: f64 = col.iter().map(|x| x * x).sum();
        if !(ss > 0.0) {
            return Err(CorrDistError::ZeroVariance(returns.tickers[j].clone()));
        }
        norms[j] = ss.sqrt();
    }

    let mut rho = Array2::<f64>::eye(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let cross: f64 = centred
                .column(i)
                .iter()
                .zip(centred.column(j).iter())
                .map(|(a, b)| a * b)
                .sum();
            let r = (cross / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            rho[[i, j]] = r;
            rho[[j, i]] = r;
        }
    }
    CorrelationMatrix::new(returns.tickers.clone(), rho)
}

/// `d_ij = sqrt(2 (1 - rho_ij))`, with an exact zero diagonal.
pub fn to_distance(rho: &CorrelationMatrix) -> DistanceMatrix {
    let n = rho.len();
    let d = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            correlation_distance(rho.get(i, j))
        }
    });
    DistanceMatrix {
        tickers: rho.tickers.clone(),
        d,
    }
}

pub fn correlation_distance(rho: f64) -> f64 {
    (2.0 * (1.0 - rho)).max(0.0).sqrt()
}

/// Statistics over the strict upper triangle. `std_dev` uses the sample
/// (`n - 1`) denominator and is zero when there is a single pair.
pub fn summarize(rho: &CorrelationMatrix) -> CorrelationSummary {
    let n = rho.len();
    let values: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| rho.get(i, j))
        .collect();
    let total_pairs = values.len();
    let mean = values.iter().sum::<f64>() / total_pairs.max(1) as f64;
    let std_dev = if total_pairs > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (total_pairs - 1) as f64).sqrt()
    } else {
        0.0
    };
    CorrelationSummary {
        mean,
        std_dev,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        negative_count: values.iter().filter(|&&v| v < 0.0).count(),
        total_pairs,
    }
}

fn check_square(tickers: &[String], m: &Array2<f64>) -> Result<()> {
    let n = tickers.len();
    if m.dim() != (n, n) {
        return Err(CorrDistError::InvalidMatrix(format!(
            "{} labels for a {:?} matrix",
            n,
            m.dim()
        )));
    }
    Ok(())
}

/// Header row of tickers, then one row per ticker of its matrix row.
fn write_matrix_csv<W: Write>(sink: W, tickers: &[String], m: &Array2<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(tickers)?;
    for row in m.rows() {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

fn read_matrix_csv<R: Read>(source: R) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let tickers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let n = tickers.len();
    let mut data = Vec::with_capacity(n * n);
    for record in reader.records() {
        let record = record?;
        if record.len() != n {
            return Err(CorrDistError::InvalidMatrix(format!(
                "row has {} entries, expected {n}",
                record.len()
            )));
        }
        for field in record.iter() {
            data.push(field.parse::<f64>().map_err(|_| {
                CorrDistError::InvalidMatrix(format!("cannot parse `{field}`"))
            })?);
        }
    }
    if data.len() != n * n {
        return Err(CorrDistError::InvalidMatrix(format!(
            "expected {n} rows, got {}",
            data.len() / n.max(1)
        )));
    }
    let m = Array2::from_shape_vec((n, n), data)
        .map_err(|e| CorrDistError::InvalidMatrix(e.to_string()))?;
    Ok((tickers, m))
}
