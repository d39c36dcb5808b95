use serde::{Deserialize, Serialize};

use crate::describe::{mean, sample_variance};
use crate::dist::{f_sf, t_sf};
use crate::{Result, StatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    OneSidedGreater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// Degrees of freedom; the numerator df for F tests.
    pub df: f64,
    /// Denominator df for F tests.
    pub df2: Option<f64>,
    pub p_value: f64,
    pub sided: Sided,
}

impl TestResult {
    /// Result reported when the statistic is undefined: never rejects.
    pub fn no_information(sided: Sided) -> Self {
        TestResult { statistic: 0.0, df: 0.0, df2: None, p_value: 1.0, sided }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// One-sided Welch t-test of H1: mean(treat) > mean(control).
pub fn welch_t_one_sided(treat: &[f64], control: &[f64]) -> Result<TestResult> {
    if treat.len() < 2 || control.len() < 2 {
        return Err(StatError::DegenerateSample("each group needs at least two samples"));
    }
    let (m1, v1) = (mean(treat).unwrap(), sample_variance(treat).unwrap());
    let (m2, v2) = (mean(control).unwrap(), sample_variance(control).unwrap());
    welch_t_from_moments((m1, v1, treat.len()), (m2, v2, control.len()))
}

/// Welch test from summary moments `(mean, variance, n)` of each group.
pub fn welch_t_from_moments(treat: (f64, f64, usize), control: (f64, f64, usize)) -> Result<TestResult> {
    let (m1, v1, n1) = treat;
    let (m2, v2, n2) = control;
    if n1 < 2 || n2 < 2 {
        return Err(StatError::DegenerateSample("each group needs at least two samples"));
    }
    let a = v1 / n1 as f64;
    let b = v2 / n2 as f64;
    let se2 = a + b;
    if !se2.is_finite() || se2 <= 0.0 {
        return Err(StatError::DegenerateSample("zero pooled variance"));
    }
    let t = (m1 - m2) / se2.sqrt();
    let df = se2 * se2 / (a * a / (n1 - 1) as f64 + b * b / (n2 - 1) as f64);
    Ok(TestResult { statistic: t, df, df2: None, p_value: t_sf(t, df), sided: Sided::OneSidedGreater })
}

/// One-way ANOVA F test over `groups`.
pub fn anova_f<S: AsRef<[f64]>>(groups: &[S]) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(StatError::DegenerateSample("ANOVA needs at least two groups"));
    }
    if groups.iter().any(|g| g.as_ref().len() < 2) {
        return Err(StatError::DegenerateSample("each group needs at least two samples"));
    }
    let k = groups.len();
    let n_total: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let grand = groups.iter().flat_map(|g| g.as_ref().iter()).sum::<f64>() / n_total as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let g = g.as_ref();
        let m = mean(g).unwrap();
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let d1 = (k - 1) as f64;
    let d2 = (n_total - k) as f64;
    let (f, p) = if ss_within > 0.0 {
        let f = (ss_between / d1) / (ss_within / d2);
        (f, f_sf(f, d1, d2))
    } else if ss_between > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    Ok(TestResult { statistic: f, df: d1, df2: Some(d2), p_value: p, sided: Sided::TwoSided })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_null_is_half() {
        let r = welch_t_one_sided(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.5);
    }

    #[test]
    fn constant_groups_are_degenerate() {
        assert!(matches!(welch_t_one_sided(&[1.0, 1.0], &[1.0, 1.0]), Err(StatError::DegenerateSample(_))));
        assert!(welch_t_one_sided(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn anova_identical_groups() {
        let r = anova_f(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!((r.df, r.df2), (1.0, Some(4.0)));
    }

    #[test]
    fn anova_perfect_separation() {
        let r = anova_f(&[vec![0.0; 4], vec![1.0; 4]]).unwrap();
        assert!(r.p_value < 1e-15);
    }

    #[test]
    fn anova_rejects_single_group() {
        assert!(anova_f(&[vec![1.0, 2.0]]).is_err());
        assert!(anova_f(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }
}
