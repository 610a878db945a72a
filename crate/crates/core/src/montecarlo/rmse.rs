use super::McError;

/// Root mean squared deviation of one replication.
pub fn rmse(estimate: &[f64], target: &[f64]) -> Result<f64, McError> {
    if estimate.len() != target.len() || estimate.is_empty() {
        return Err(McError::ReplicationMismatch(format!(
            "estimate has {} values, target {}",
            estimate.len(),
            target.len()
        )));
    }
    let ss: f64 = estimate.iter().zip(target).map(|(e, t)| (e - t).powi(2)).sum();
    Ok((ss / estimate.len() as f64).sqrt())
}

/// Mean over replications of the per-replication RMSE between the estimated
/// and the true frontier.
pub fn pro_rmse(estimates: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64, McError> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(McError::ReplicationMismatch(format!(
            "{} estimated replications, {} true",
            estimates.len(),
            truth.len()
        )));
    }
    let total = estimates.iter().zip(truth).map(|(e, t)| rmse(e, t)).sum::<Result<f64, _>>()?;
    Ok(total / estimates.len() as f64)
}

/// Same average, taken against the true `tau`-quantile frontier.
pub fn exp_rmse(estimates: &[Vec<f64>], true_quantiles: &[Vec<f64>]) -> Result<f64, McError> {
    pro_rmse(estimates, true_quantiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_estimates_score_zero() {
        let t = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0]];
        assert_eq!(pro_rmse(&t, &t).unwrap(), 0.0);
        assert_eq!(exp_rmse(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_scores_its_size() {
        let t = vec![vec![1.0, 2.0, 3.0]];
        let e = vec![vec![0.75, 1.75, 2.75]];
        assert_abs_diff_eq!(pro_rmse(&e, &t).unwrap(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn replications_are_averaged_after_the_root() {
        let t = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let e = vec![vec![1.0, -1.0], vec![3.0, 3.0]];
        assert_abs_diff_eq!(pro_rmse(&e, &t).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn mismatches_are_errors() {
        assert!(pro_rmse(&[vec![1.0]], &[]).is_err());
        assert!(pro_rmse(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }
}
