//! Autocorrelation-method LPC for the spread residual. The decoder
//! regenerates the residual as gain-matched white noise through the
//! synthesis filter, so only reflection coefficients and a gain travel in
//! the stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Lattice form of one analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcModel {
    /// Reflection coefficients, all inside the unit circle.
    pub reflection: Vec<f64>,
    /// Excitation standard deviation per sample.
    pub gain: f64,
}

impl LpcModel {
    pub fn silent(order: usize) -> Self {
        Self {
            reflection: vec![0.0; order],
            gain: 0.0,
        }
    }

    /// Direct-form predictor coefficients `a_1..a_p` with
    /// `prediction[t] = sum_j a_j y[t-j]`.
    pub fn direct_form(&self) -> Vec<f64> {
        let p = self.reflection.len();
        let mut a = vec![0.0; p];
        for (i, &k) in self.reflection.iter().enumerate() {
            let prev = a[..i].to_vec();
            a[i] = k;
            for j in 0..i {
                a[j] = prev[j] - k * prev[i - 1 - j];
            }
        }
        a
    }

    /// Squared magnitude of the synthesis filter `gain^2 / |A(e^jw)|^2`.
    pub fn power_spectrum(&self, omega: f64) -> f64 {
        let a = self.direct_form();
        let mut re = 1.0;
        let mut im = 0.0;
        for (j, &aj) in a.iter().enumerate() {
            let phase = omega * (j as f64 + 1.0);
            re -= aj * phase.cos();
            im += aj * phase.sin();
        }
        self.gain * self.gain / (re * re + im * im)
    }
}

/// Fits an order-`order` model by Levinson-Durbin on the frame
/// autocorrelation. A singular or unstable recursion falls back to the
/// gain-only (order zero) model, and silence yields zero gain.
pub fn lpc_analyze(frame: &[f64], order: usize) -> Result<LpcModel> {
    if frame.len() <= order {
        return Err(Error::invalid(format!(
            "frame of {} samples cannot support order {order}",
            frame.len()
        )));
    }
    let n = frame.len();
    let mut autocorr = vec![0.0; order + 1];
    for (lag, r) in autocorr.iter_mut().enumerate() {
        *r = frame[lag..]
            .iter()
            .zip(&frame[..n - lag])
            .map(|(a, b)| a * b)
            .sum();
    }
    if autocorr[0] <= 0.0 {
        return Ok(LpcModel::silent(order));
    }

    let mut a = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut err = autocorr[0];
    for i in 0..order {
        let mut acc = autocorr[i + 1];
        for j in 0..i {
            acc -= a[j] * autocorr[i - j];
        }
        let k = acc / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            // Singular recursion: keep only the frame energy.
            return Ok(LpcModel {
                reflection: vec![0.0; order],
                gain: (autocorr[0] / n as f64).sqrt(),
            });
        }
        reflection.push(k);
        let prev = a[..i].to_vec();
        a[i] = k;
        for j in 0..i {
            a[j] = prev[j] - k * prev[i - 1 - j];
        }
        err *= 1.0 - k * k;
        if err <= 0.0 {
            return Ok(LpcModel {
                reflection: vec![0.0; order],
                gain: (autocorr[0] / n as f64).sqrt(),
            });
        }
    }
    Ok(LpcModel {
        reflection,
        gain: (err / n as f64).sqrt(),
    })
}

/// Synthesizes `len` samples of the modeled residual from seeded white
/// noise through the all-pole filter.
pub fn lpc_synthesize(model: &LpcModel, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = model.direct_form();
    let mut out = vec![0.0; len];
    if model.gain == 0.0 {
        // Keep the stream position moving so later frames stay aligned.
        for _ in 0..len {
            let _: f64 = rng.sample(StandardNormal);
        }
        return out;
    }
    for t in 0..len {
        let mut y: f64 = rng.sample::<f64, _>(StandardNormal) * model.gain;
        for (j, &aj) in a.iter().enumerate() {
            if t > j {
                y += aj * out[t - 1 - j];
            }
        }
        out[t] = y;
    }
    out
}
