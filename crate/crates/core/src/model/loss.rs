use crate::error::{Error, Result};
use crate::model::{LossConfig, Penalties};

/// Mean absolute percentage error (as a fraction, averaged over the set).
pub fn mape_loss(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.len() != truths.len() {
        return Err(Error::shape("estimates and truths differ in length"));
    }
    if let Some(t) = truths.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::validation(format!("non-positive ground truth {t}")));
    }
    if truths.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).abs() / t)
        .sum();
    Ok(sum / truths.len() as f64)
}

/// `beta L_path + (1 - beta) L_sub + gamma_1 L_center + gamma_2 L_div + gamma_3 L_2`.
pub fn total_loss(l_path: f64, l_sub: f64, penalties: &Penalties, cfg: &LossConfig) -> f64 {
    cfg.beta * l_path + (1.0 - cfg.beta) * l_sub + penalties.weighted(cfg)
}
