//! Linear and logistic regression with per-coefficient Wald tests.

use serde::{Deserialize, Serialize};

use crate::dist::{normal_sf, t_sf};
use crate::linalg::least_squares;
use crate::{Result, StatError};

/// Coefficient magnitude treated as evidence of (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 15.0;
const IRLS_MAX_ITER: usize = 100;
const IRLS_GRAD_TOL: f64 = 1e-8;

/// Row-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    names: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn from_columns<S: Into<String>>(columns: Vec<(S, Vec<f64>)>) -> Result<Self> {
        let rows = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        if columns.iter().any(|(_, c)| c.len() != rows) {
            return Err(StatError::InvalidArgument("design columns differ in length"));
        }
        let p = columns.len();
        let mut data = vec![0.0; rows * p];
        let mut names = Vec::with_capacity(p);
        for (j, (name, col)) in columns.into_iter().enumerate() {
            names.push(name.into());
            for (i, v) in col.into_iter().enumerate() {
                data[i * p + j] = v;
            }
        }
        Ok(Design { names, rows, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols() + j]).collect()
    }

    fn predict(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().zip(beta).map(|(x, b)| x * b).sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionModel {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Wald statistics (t for linear, z for logistic).
    pub statistics: Vec<f64>,
    /// Two-sided Wald p-values.
    pub wald_p: Vec<f64>,
    pub model: RegressionModel,
    pub converged: bool,
    /// Residual degrees of freedom, n - k.
    pub df_resid: f64,
    /// Residual variance estimate (linear model only).
    pub sigma2: Option<f64>,
}

impl RegressionFit {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coefficients[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.standard_errors[i])
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.wald_p[i])
    }

    /// One-sided Wald p-value for H1: coefficient > 0.
    pub fn p_value_greater(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| {
            let stat = self.statistics[i];
            match self.model {
                RegressionModel::Linear => t_sf(stat, self.df_resid),
                RegressionModel::Logistic => normal_sf(stat),
            }
        })
    }
}

fn wald(beta: f64, se: f64) -> f64 {
    if se > 0.0 {
        beta / se
    } else if beta == 0.0 {
        0.0
    } else {
        beta.signum() * f64::INFINITY
    }
}

/// Ordinary least squares with i.i.d. standard errors sigma^2 (X^T X)^{-1}.
pub fn ols_wald(design: &Design, y: &[f64]) -> Result<RegressionFit> {
    let (n, p) = (design.rows(), design.cols());
    if y.len() != n {
        return Err(StatError::InvalidArgument("response length differs from design rows"));
    }
    if n <= p {
        return Err(StatError::RankDeficient);
    }
    let ls = least_squares(&design.data, n, p, y)?;
    let fitted = design.predict(&ls.beta);
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let mut se = Vec::with_capacity(p);
    let mut stat = Vec::with_capacity(p);
    let mut pv = Vec::with_capacity(p);
    for j in 0..p {
        let s = (sigma2 * ls.xtx_inv[j * p + j]).max(0.0).sqrt();
        let t = wald(ls.beta[j], s);
        se.push(s);
        stat.push(t);
        pv.push((2.0 * t_sf(t.abs(), df)).min(1.0));
    }
    Ok(RegressionFit {
        names: design.names().to_vec(),
        coefficients: ls.beta,
        standard_errors: se,
        statistics: stat,
        wald_p: pv,
        model: RegressionModel::Linear,
        converged: true,
        df_resid: df,
        sigma2: Some(sigma2),
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(eta: &[f64], y: &[f64]) -> f64 {
    // y*eta - log(1 + e^eta), computed stably
    eta.iter().zip(y).map(|(&e, &yi)| yi * e - if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() }).sum()
}

/// Logistic regression by IRLS with Wald z tests.
///
/// Stops when the score norm drops below 1e-8 or after 100 iterations.
/// Coefficients escaping `SEPARATION_BOUND` mark separation: the fit is
/// returned with `converged = false` and coefficients clamped to the bound.
pub fn logistic_wald(design: &Design, y: &[f64]) -> Result<RegressionFit> {
    let (n, p) = (design.rows(), design.cols());
    if y.len() != n {
        return Err(StatError::InvalidArgument("response length differs from design rows"));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(StatError::InvalidArgument("logistic response must be 0/1"));
    }
    if n <= p {
        return Err(StatError::RankDeficient);
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(StatError::AllSameLabel);
    }

    let mut beta = vec![0.0; p];
    let mut eta = design.predict(&beta);
    let mut ll = log_likelihood(&eta, y);
    let mut converged = false;
    let mut separated = false;
    let mut weighted = vec![0.0; n * p];
    let mut work = vec![0.0; n];
    for _ in 0..IRLS_MAX_ITER {
        let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let grad_norm = (0..p)
            .map(|j| {
                let g: f64 = (0..n).map(|i| design.row(i)[j] * (y[i] - prob[i])).sum();
                g * g
            })
            .sum::<f64>()
            .sqrt();
        if grad_norm < IRLS_GRAD_TOL {
            converged = true;
            break;
        }
        // Newton step: weighted least squares of (y - p)/w on X with weights w.
        for i in 0..n {
            let w = (prob[i] * (1.0 - prob[i])).max(1e-300);
            let sw = w.sqrt();
            for j in 0..p {
                weighted[i * p + j] = design.row(i)[j] * sw;
            }
            work[i] = (y[i] - prob[i]) / sw;
        }
        let step = least_squares(&weighted, n, p, &work)?.beta;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_eta = design.predict(&cand);
            let cand_ll = log_likelihood(&cand_eta, y);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            separated = true;
            break;
        }
        if !accepted {
            break;
        }
    }
    if separated {
        converged = false;
        for b in beta.iter_mut() {
            *b = b.clamp(-SEPARATION_BOUND, SEPARATION_BOUND);
        }
        eta = design.predict(&beta);
    }

    // Covariance (X^T W X)^{-1} at the final iterate.
    for i in 0..n {
        let prob = sigmoid(eta[i]);
        let sw = (prob * (1.0 - prob)).max(1e-300).sqrt();
        for j in 0..p {
            weighted[i * p + j] = design.row(i)[j] * sw;
        }
        work[i] = 0.0;
    }
    let cov = least_squares(&weighted, n, p, &work)?.xtx_inv;
    let mut se = Vec::with_capacity(p);
    let mut stat = Vec::with_capacity(p);
    let mut pv = Vec::with_capacity(p);
    for j in 0..p {
        let s = cov[j * p + j].max(0.0).sqrt();
        let z = wald(beta[j], s);
        se.push(s);
        stat.push(z);
        pv.push((2.0 * normal_sf(z.abs())).min(1.0));
    }
    Ok(RegressionFit {
        names: design.names().to_vec(),
        coefficients: beta,
        standard_errors: se,
        statistics: stat,
        wald_p: pv,
        model: RegressionModel::Logistic,
        converged,
        df_resid: (n - p) as f64,
        sigma2: None,
    })
}
