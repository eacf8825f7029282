//! Analog forecasting by linear discriminant analysis.
//!
//! A library of historical feature vectors with verified categories is
//! summarized by per-class means, a pooled within-class covariance and class
//! priors. Posteriors for a new day come from the shared-covariance Gaussian
//! discriminant
//!
//! ```text
//! score_c(x) = -1/2 (x - mu_c)' S^-1 (x - mu_c) + ln pi_c
//! ```
//!
//! normalized with a softmax over the classes present in training. The
//! pooled covariance uses the maximum-likelihood denominator N, so
//! duplicating every row leaves the fit unchanged.

use std::io::{Read, Write};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ProbTriple, WeatherCategory};

#[derive(Debug, Error)]
pub enum AnalogError {
    #[error("pooled covariance is not positive definite after ridge {ridge}")]
    DegenerateCovariance { ridge: f64 },
    #[error("need at least two distinct categories, found {0}")]
    TooFewClasses(usize),
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("library is frozen and does not accept verification")]
    FrozenLibrary,
    #[error("ridge must be finite and non-negative, got {0}")]
    InvalidRidge(f64),
    #[error("library file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogRow {
    pub date: NaiveDate,
    pub category: WeatherCategory,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogLibrary {
    pub feature_names: Vec<String>,
    pub rows: Vec<AnalogRow>,
    pub frozen: bool,
}

impl AnalogLibrary {
    pub fn new(feature_names: Vec<String>, frozen: bool) -> Self {
        AnalogLibrary { feature_names, rows: Vec::new(), frozen }
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn push(&mut self, row: AnalogRow) -> Result<(), AnalogError> {
        if row.features.len() != self.dim() {
            return Err(AnalogError::DimensionMismatch { expected: self.dim(), found: row.features.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for r in &self.rows {
            counts[r.category.index()] += 1;
        }
        counts
    }

    /// Reads `date,category,<feature columns...>`.
    pub fn read_csv<R: Read>(reader: R, frozen: bool) -> Result<Self, AnalogError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "date" || &headers[1] != "category" {
            return Err(AnalogError::Parse { line: 1, message: "header must be date,category,<features...>".into() });
        }
        let mut lib = AnalogLibrary::new(headers.iter().skip(2).map(str::to_string).collect(), frozen);
        for (i, rec) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let rec = rec?;
            let bad = |message: String| AnalogError::Parse { line, message };
            let date: NaiveDate = rec[0].parse().map_err(|e| bad(format!("date: {e}")))?;
            let category: WeatherCategory = rec[1].parse().map_err(|e| bad(format!("{e}")))?;
            let features = rec
                .iter()
                .skip(2)
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("feature `{f}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            lib.push(AnalogRow { date, category, features }).map_err(|e| bad(e.to_string()))?;
        }
        Ok(lib)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), AnalogError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string(), "category".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.date.to_string(), r.category.to_string()];
            rec.extend(r.features.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// How the diagonal ridge is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// A fixed lambda.
    Fixed(f64),
    /// `factor * trace(S) / d` of the unregularized pooled covariance.
    RelativeTrace(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::RelativeTrace(1e-6)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantModel {
    pub feature_names: Vec<String>,
    /// Class means; `None` for classes absent from training.
    pub means: [Option<Vec<f64>>; 3],
    /// Pooled covariance including the ridge, row-major d x d.
    pub covariance: Vec<f64>,
    pub priors: [f64; 3],
    pub ridge: f64,
}

pub fn fit_discriminant(lib: &AnalogLibrary, ridge: Ridge) -> Result<DiscriminantModel, AnalogError> {
    let d = lib.dim();
    let counts = lib.class_counts();
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(AnalogError::TooFewClasses(present));
    }
    let n = lib.rows.len() as f64;

    let mut sums = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for r in &lib.rows {
        if r.features.len() != d {
            return Err(AnalogError::DimensionMismatch { expected: d, found: r.features.len() });
        }
        for (s, x) in sums[r.category.index()].iter_mut().zip(&r.features) {
            *s += x;
        }
    }
    let means: [Option<Vec<f64>>; 3] =
        std::array::from_fn(|c| (counts[c] > 0).then(|| sums[c].iter().map(|s| s / counts[c] as f64).collect()));

    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for r in &lib.rows {
        let mu = means[r.category.index()].as_ref().expect("class present");
        let dev = DVector::from_iterator(d, r.features.iter().zip(mu).map(|(x, m)| x - m));
        scatter += &dev * dev.transpose();
    }
    let mut cov = scatter / n;
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let lambda = match ridge {
        Ridge::Fixed(l) => l,
        Ridge::RelativeTrace(f) => f * cov.trace() / d.max(1) as f64,
    };
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(AnalogError::InvalidRidge(lambda));
    }
    for i in 0..d {
        cov[(i, i)] += lambda;
    }
    if cov.clone().cholesky().is_none() {
        return Err(AnalogError::DegenerateCovariance { ridge: lambda });
    }
    let priors = std::array::from_fn(|c| counts[c] as f64 / n);
    Ok(DiscriminantModel {
        feature_names: lib.feature_names.clone(),
        means,
        covariance: cov.transpose().as_slice().to_vec(),
        priors,
        ridge: lambda,
    })
}

impl DiscriminantModel {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.covariance)
    }

    /// Discriminant score per class; `None` for absent classes.
    pub fn scores(&self, x: &[f64]) -> Result<[Option<f64>; 3], AnalogError> {
        let d = self.dim();
        if x.len() != d {
            return Err(AnalogError::DimensionMismatch { expected: d, found: x.len() });
        }
        let chol =
            self.covariance_matrix().cholesky().ok_or(AnalogError::DegenerateCovariance { ridge: self.ridge })?;
        Ok(std::array::from_fn(|c| {
            let mu = self.means[c].as_ref()?;
            let dev = DVector::from_iterator(d, x.iter().zip(mu).map(|(a, b)| a - b));
            let solved = chol.solve(&dev);
            Some(-0.5 * dev.dot(&solved) + self.priors[c].ln())
        }))
    }
}

pub fn predict(model: &DiscriminantModel, features: &[f64]) -> Result<ProbTriple, AnalogError> {
    let scores = model.scores(features)?;
    let top = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = scores.map(|s| s.map_or(0.0, |s| (s - top).exp()));
    Ok(ProbTriple::from_scores(weights).expect("at least one class has weight 1"))
}

/// Appends a verified day. Static libraries refuse.
pub fn absorb_verification(
    lib: &AnalogLibrary,
    features: &[f64],
    observed: WeatherCategory,
    date: NaiveDate,
) -> Result<AnalogLibrary, AnalogError> {
    if lib.frozen {
        return Err(AnalogError::FrozenLibrary);
    }
    let mut next = lib.clone();
    next.push(AnalogRow { date, category: observed, features: features.to_vec() })?;
    Ok(next)
}
