use crate::dist::normal_quantile;
use crate::{Result, StatError};

pub fn mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        None
    } else {
        Some(samples.iter().sum::<f64>() / samples.len() as f64)
    }
}

/// Unbiased (n - 1) sample variance. `None` below two samples.
pub fn sample_variance(samples: &[f64]) -> Option<f64> {
    if samples.len() < 2 {
        return None;
    }
    let m = mean(samples)?;
    let ss: f64 = samples.iter().map(|x| (x - m) * (x - m)).sum();
    Some(ss / (samples.len() - 1) as f64)
}

/// Mean and normal-approximation confidence half-width `z * s / sqrt(n)`.
///
/// A single sample has no spread estimate and reports a half-width of 0.
pub fn mean_ci(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatError::InvalidArgument("confidence level must lie in (0, 1)"));
    }
    let m = mean(samples).ok_or(StatError::EmptySample)?;
    let halfwidth = match sample_variance(samples) {
        Some(var) => {
            let z = normal_quantile(0.5 + level / 2.0);
            z * var.sqrt() / (samples.len() as f64).sqrt()
        }
        None => 0.0,
    };
    Ok((m, halfwidth))
}
