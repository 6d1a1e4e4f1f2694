//! Reverse water-filling shared by the tonal and transient bit allocators.

use crate::error::{Error, Result};

/// Optimal real-valued rates for independent Gaussian sources with expected
/// occupation `weights[i]` and standard deviations `sigmas[i]`, under the
/// budget `sum_i weights[i] * rates[i] = budget` and `rates[i] >= 0`.
///
/// Sources with zero weight or zero deviation are excluded and receive rate
/// zero; negative unconstrained rates are clamped to zero and the budget is
/// re-solved on the surviving set.
pub(crate) fn reverse_waterfill(weights: &[f64], sigmas: &[f64], budget: f64) -> Result<Vec<f64>> {
    assert_eq!(weights.len(), sigmas.len());
    if budget <= 0.0 {
        return Err(Error::invalid("bit budget must be positive"));
    }
    let mut order: Vec<usize> = (0..weights.len())
        .filter(|&i| weights[i] > 0.0 && sigmas[i] > 0.0)
        .collect();
    if order.is_empty() {
        return Err(Error::DegenerateInput(
            "no source with positive weight and deviation to allocate bits to",
        ));
    }
    // Ascending deviation: candidates for exclusion come first.
    order.sort_by(|&a, &b| sigmas[a].total_cmp(&sigmas[b]));

    let mut rates = vec![0.0; weights.len()];
    for skip in 0..order.len() {
        let active = &order[skip..];
        let w_total: f64 = active.iter().map(|&i| weights[i]).sum();
        let log_term: f64 = active
            .iter()
            .map(|&i| weights[i] * (sigmas[i] * sigmas[i]).log2())
            .sum();
        let level = (budget - 0.5 * log_term) / w_total;
        let smallest = active[0];
        let r_small = level + 0.5 * (sigmas[smallest] * sigmas[smallest]).log2();
        if r_small >= 0.0 || skip == order.len() - 1 {
            for &i in active {
                rates[i] = (level + 0.5 * (sigmas[i] * sigmas[i]).log2()).max(0.0);
            }
            break;
        }
    }
    Ok(rates)
}

/// Expected distortion of an allocation under the ideal Gaussian
/// rate-distortion model `D(R) = sigma^2 2^(-2R)` per occupied source.
pub(crate) fn expected_distortion(weights: &[f64], sigmas: &[f64], rates: &[f64]) -> f64 {
    weights
        .iter()
        .zip(sigmas)
        .zip(rates)
        .map(|((&w, &s), &r)| w * s * s * (-2.0 * r).exp2())
        .sum()
}

/// The unconstrained-optimum distortion value
/// `w_total * (prod sigma_i^(2 w_i))^(1/w_total) * 2^(-2 budget / w_total)`.
pub(crate) fn distortion_floor(weights: &[f64], sigmas: &[f64], budget: f64) -> f64 {
    let w_total: f64 = weights.iter().sum();
    if w_total <= 0.0 {
        return 0.0;
    }
    let log_geo: f64 = weights
        .iter()
        .zip(sigmas)
        .map(|(&w, &s)| if w == 0.0 { 0.0 } else { w * (s * s).log2() })
        .sum();
    (log_geo / w_total - 2.0 * budget / w_total).exp2() * w_total
}
