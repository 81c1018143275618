use crate::error::{Error, Result};

/// Generalized advantage estimation over one contiguous segment.
///
/// `values` has one more entry than `rewards`: the last is the bootstrap
/// value of the state after the segment. `dones[t]` marks a terminal
/// transition, after which nothing is bootstrapped.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(Error::Dimension { op: "compute_gae", lhs: vec![n, dones.len()], rhs: vec![values.len()] });
    }
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Rescales to zero mean and unit population standard deviation. A constant
/// input becomes all zeros.
pub fn whiten(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in x.iter_mut() {
        *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
    }
}
