use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    /// Rejection decision per input p-value, in input order.
    pub rejected: Vec<bool>,
    /// BH-adjusted p-values (capped at 1), in input order.
    pub adjusted: Vec<f64>,
}

impl BhResult {
    pub fn n_rejected(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

/// Benjamini-Hochberg step-up procedure at level `q`.
///
/// Finds the largest rank i with p_(i) <= i q / m and rejects every
/// hypothesis of rank <= i. Adjusted p-values are
/// min_{j >= i} m p_(j) / j, monotone in rank.
pub fn bh_adjust(p_values: &[f64], q: f64) -> BhResult {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));

    let mut cutoff = 0;
    for (rank0, &idx) in order.iter().enumerate() {
        if p_values[idx] <= (rank0 + 1) as f64 * q / m as f64 {
            cutoff = rank0 + 1;
        }
    }

    let mut adjusted = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank0, &idx) in order.iter().enumerate().rev() {
        let candidate = p_values[idx] * m as f64 / (rank0 + 1) as f64;
        running = running.min(candidate);
        adjusted[idx] = running.min(1.0);
    }

    let mut rejected = vec![false; m];
    for &idx in &order[..cutoff] {
        rejected[idx] = true;
    }
    BhResult { rejected, adjusted }
}
