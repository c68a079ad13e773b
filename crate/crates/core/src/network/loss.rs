//! Binary cross-entropy and the combined pixel/binary objective.

use crate::error::{Error, Result};
use crate::grid::Grid;

use super::ModelOutput;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

pub fn bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d bce / d p, zero where the clamp is active.
fn bce_grad(y: f64, p: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
        return 0.0;
    }
    (p - y) / (p * (1.0 - p))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `class_weight · (λ · mean_ij bce(label_ij, map_ij) + (1 − λ) · bce(y, binary))`.
pub fn overall_loss(output: &ModelOutput, label: &Grid, binary_label: f64, lambda: f64, class_weight: f64) -> Result<f64> {
    if output.map.shape() != label.shape() {
        return Err(Error::shape(format!("{:?}", label.shape()), format!("{:?}", output.map.shape())));
    }
    Ok(loss_terms(output.map.as_slice(), label.as_slice(), output.binary, binary_label, lambda, class_weight)?.total)
}

/// Loss value with its gradient with respect to the map and binary
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub pixel: f64,
    pub binary: f64,
    pub total: f64,
    pub d_map: Vec<f64>,
    pub d_binary: f64,
}

pub fn loss_terms(map: &[f64], label: &[f64], binary: f64, binary_label: f64, lambda: f64, class_weight: f64) -> Result<LossTerms> {
    check_lambda(lambda)?;
    if map.len() != label.len() || map.is_empty() {
        return Err(Error::shape(format!("{} cells", label.len()), format!("{} cells", map.len())));
    }
    let n = map.len() as f64;
    let pixel = map.iter().zip(label).map(|(&p, &y)| bce(y, p)).sum::<f64>() / n;
    let bin = bce(binary_label, binary);
    let k_pix = class_weight * lambda / n;
    Ok(LossTerms {
        pixel,
        binary: bin,
        total: class_weight * (lambda * pixel + (1.0 - lambda) * bin),
        d_map: map.iter().zip(label).map(|(&p, &y)| k_pix * bce_grad(y, p)).collect(),
        d_binary: class_weight * (1.0 - lambda) * bce_grad(binary_label, binary),
    })
}
