//! Scalar quantizers for the Gaussian coefficient layers: a uniform
//! midtread quantizer spanning +/- 4 deviations (the default, with exact
//! zero reproduction) and Lloyd-Max codebooks behind a flag.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// Ideal Gaussian rate-distortion point `sigma^2 2^(-2 rate)`.
pub fn rd_gaussian(sigma: f64, rate: f64) -> f64 {
    sigma * sigma * (-2.0 * rate).exp2()
}

pub const MAX_COEFF_BITS: u8 = 24;
/// Lloyd-Max codebooks above this rate take too long to converge; the
/// uniform quantizer takes over there.
pub const MAX_LLOYD_BITS: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantizerKind {
    Uniform,
    LloydMax,
}

fn check_args(sigma: f64, bits: u8) -> Result<()> {
    if bits > MAX_COEFF_BITS {
        return Err(Error::invalid(format!(
            "coefficient rate {bits} exceeds {MAX_COEFF_BITS} bits"
        )));
    }
    if bits > 0 && !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "quantizing at {bits} bits needs a positive deviation, got {sigma}"
        )));
    }
    Ok(())
}

/// Uniform midtread quantizer with `2^bits` levels over `+/- 4 sigma`.
/// Returns the unsigned codeword (signed index offset by `2^(bits-1)`).
pub fn quantize_uniform(value: f64, sigma: f64, bits: u8) -> Result<u32> {
    check_args(sigma, bits)?;
    if bits == 0 {
        return Ok(0);
    }
    let levels = 1i64 << bits;
    let step = 8.0 * sigma / levels as f64;
    let idx = (value / step).round() as i64;
    let idx = idx.clamp(-(levels / 2), levels / 2 - 1);
    Ok((idx + levels / 2) as u32)
}

pub fn dequantize_uniform(code: u32, sigma: f64, bits: u8) -> Result<f64> {
    check_args(sigma, bits)?;
    if bits == 0 {
        return Ok(0.0);
    }
    let levels = 1i64 << bits;
    if (code as i64) >= levels {
        return Err(Error::invalid(format!(
            "codeword {code} out of range for {bits} bits"
        )));
    }
    let step = 8.0 * sigma / levels as f64;
    Ok((code as i64 - levels / 2) as f64 * step)
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Lloyd-Max reproduction levels for the unit Gaussian with `2^bits`
/// levels, cached per rate.
fn lloyd_levels(bits: u8) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<u8, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(levels) = cache.lock().unwrap().get(&bits) {
        return levels.clone();
    }
    let m = 1usize << bits;
    // Start from the uniform codebook and run Lloyd iterations with exact
    // Gaussian centroids.
    let mut levels: Vec<f64> = (0..m)
        .map(|i| (i as f64 - (m as f64 - 1.0) / 2.0) * 8.0 / m as f64)
        .collect();
    // Lloyd converges linearly and needs thousands of sweeps at high
    // level counts (~10^4 for 64 levels).
    for _ in 0..25_000 {
        let mut boundaries = Vec::with_capacity(m + 1);
        boundaries.push(f64::NEG_INFINITY);
        for i in 1..m {
            boundaries.push(0.5 * (levels[i - 1] + levels[i]));
        }
        boundaries.push(f64::INFINITY);
        let mut shift = 0.0f64;
        for i in 0..m {
            let (a, b) = (boundaries[i], boundaries[i + 1]);
            let mass = normal_cdf(b) - normal_cdf(a);
            if mass > 1e-300 {
                let pa = if a.is_finite() { normal_pdf(a) } else { 0.0 };
                let pb = if b.is_finite() { normal_pdf(b) } else { 0.0 };
                let centroid = (pa - pb) / mass;
                shift = shift.max((centroid - levels[i]).abs());
                levels[i] = centroid;
            }
        }
        if shift < 1e-13 {
            break;
        }
    }
    let levels = Arc::new(levels);
    cache.lock().unwrap().insert(bits, levels.clone());
    levels
}

pub fn quantize_lloyd(value: f64, sigma: f64, bits: u8) -> Result<u32> {
    check_args(sigma, bits)?;
    if bits == 0 {
        return Ok(0);
    }
    if bits > MAX_LLOYD_BITS {
        return quantize_uniform(value, sigma, bits);
    }
    let levels = lloyd_levels(bits);
    let x = value / sigma;
    // Levels are sorted; nearest-level search by partition point.
    let idx = levels.partition_point(|&l| l < x);
    let best = if idx == 0 {
        0
    } else if idx >= levels.len() {
        levels.len() - 1
    } else if (x - levels[idx - 1]).abs() <= (levels[idx] - x).abs() {
        idx - 1
    } else {
        idx
    };
    Ok(best as u32)
}

pub fn dequantize_lloyd(code: u32, sigma: f64, bits: u8) -> Result<f64> {
    check_args(sigma, bits)?;
    if bits == 0 {
        return Ok(0.0);
    }
    if bits > MAX_LLOYD_BITS {
        return dequantize_uniform(code, sigma, bits);
    }
    let levels = lloyd_levels(bits);
    if code as usize >= levels.len() {
        return Err(Error::invalid(format!(
            "codeword {code} out of range for {bits} bits"
        )));
    }
    Ok(levels[code as usize] * sigma)
}

impl QuantizerKind {
    pub fn quantize(&self, value: f64, sigma: f64, bits: u8) -> Result<u32> {
        match self {
            QuantizerKind::Uniform => quantize_uniform(value, sigma, bits),
            QuantizerKind::LloydMax => quantize_lloyd(value, sigma, bits),
        }
    }

    pub fn dequantize(&self, code: u32, sigma: f64, bits: u8) -> Result<f64> {
        match self {
            QuantizerKind::Uniform => dequantize_uniform(code, sigma, bits),
            QuantizerKind::LloydMax => dequantize_lloyd(code, sigma, bits),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rd_gaussian_landmarks() {
        assert_eq!(rd_gaussian(3.0, 0.0), 9.0);
        assert_eq!(rd_gaussian(2.0, 1.0), 1.0);
        assert!((rd_gaussian(1.0, 3.0) - 1.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_and_zero_value() {
        assert_eq!(quantize_uniform(12.3, 1.0, 0).unwrap(), 0);
        assert_eq!(dequantize_uniform(0, 1.0, 0).unwrap(), 0.0);
        // Midtread: zero is a reproduction level.
        for bits in 1..=12u8 {
            let code = quantize_uniform(0.0, 2.0, bits).unwrap();
            assert_eq!(dequantize_uniform(code, 2.0, bits).unwrap(), 0.0);
        }
        assert!(quantize_uniform(1.0, 0.0, 4).is_err());
        assert!(quantize_uniform(1.0, 1.0, 30).is_err());
    }

    #[test]
    fn uniform_roundtrip_error_within_half_step() {
        let sigma = 1.5;
        let bits = 6;
        let step = 8.0 * sigma / 64.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let v = rng.gen_range(-3.9 * sigma..3.9 * sigma);
            let code = quantize_uniform(v, sigma, bits).unwrap();
            let back = dequantize_uniform(code, sigma, bits).unwrap();
            assert!((v - back).abs() <= step / 2.0 + 1e-12);
        }
        // Clamping outside the range.
        let code = quantize_uniform(100.0 * sigma, sigma, bits).unwrap();
        let back = dequantize_uniform(code, sigma, bits).unwrap();
        assert!(back <= 4.0 * sigma);
    }

    /// Empirical MSE against the Shannon point at 6 bits. The uniform
    /// +/-4 sigma quantizer has a fixed granular gap of 64/12, while the
    /// Lloyd-Max codebook sits inside the 2.8x band.
    #[test]
    fn quantizer_gaps_over_the_shannon_bound() {
        let sigma = 1.0;
        let bits = 6u8;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 200_000;
        let mut mse_uniform = 0.0;
        let mut mse_lloyd = 0.0;
        for _ in 0..draws {
            let v: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
            let u =
                dequantize_uniform(quantize_uniform(v, sigma, bits).unwrap(), sigma, bits).unwrap();
            let l = dequantize_lloyd(quantize_lloyd(v, sigma, bits).unwrap(), sigma, bits).unwrap();
            mse_uniform += (v - u) * (v - u);
            mse_lloyd += (v - l) * (v - l);
        }
        mse_uniform /= draws as f64;
        mse_lloyd /= draws as f64;
        let shannon = rd_gaussian(sigma, bits as f64);
        let gap_uniform = mse_uniform / shannon;
        let gap_lloyd = mse_lloyd / shannon;
        assert!(
            gap_lloyd <= 2.8,
            "lloyd-max gap {gap_lloyd} exceeds the 2.8x band"
        );
        assert!(gap_lloyd >= 1.0);
        // 64/12 granular noise plus a little overload.
        assert!(
            (gap_uniform - 64.0 / 12.0).abs() < 0.25,
            "uniform gap {gap_uniform}"
        );
    }

    #[test]
    fn lloyd_codebook_is_symmetric_and_sorted() {
        let levels = lloyd_levels(5);
        for w in levels.windows(2) {
            assert!(w[0] < w[1]);
        }
        for i in 0..levels.len() / 2 {
            assert!((levels[i] + levels[levels.len() - 1 - i]).abs() < 1e-9);
        }
    }
}
