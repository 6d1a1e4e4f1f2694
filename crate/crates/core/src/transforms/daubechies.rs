//! Daubechies orthonormal filter construction.
//!
//! Coefficients are computed by spectral factorization rather than copied
//! from tables: the roots of the Daubechies binomial polynomial are found
//! with Durand-Kerner iteration, the minimum-phase half is kept, and the
//! result is normalized to sum to sqrt(2). Orthonormality of the resulting
//! filterbank is asserted to 1e-12 at construction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct C64 {
    re: f64,
    im: f64,
}

impl C64 {
    fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
    fn div(self, o: Self) -> Self {
        let d = o.re * o.re + o.im * o.im;
        Self::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }
    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
    fn sqrt(self) -> Self {
        let r = self.abs();
        let re = ((r + self.re) * 0.5).max(0.0).sqrt();
        let im = ((r - self.re) * 0.5).max(0.0).sqrt();
        Self::new(re, if self.im < 0.0 { -im } else { im })
    }
}

/// All roots of a complex polynomial (coefficients low-to-high degree).
fn durand_kerner(coeffs: &[C64]) -> Vec<C64> {
    let degree = coeffs.len() - 1;
    let lead = coeffs[degree];
    let monic: Vec<C64> = coeffs.iter().map(|c| c.div(lead)).collect();
    let eval = |z: C64| -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for c in monic.iter().rev() {
            acc = acc.mul(z).add(*c);
        }
        acc
    };
    let seed = C64::new(0.4, 0.9);
    let mut roots: Vec<C64> = (0..degree)
        .map(|i| {
            let mut p = C64::new(1.0, 0.0);
            for _ in 0..=i {
                p = p.mul(seed);
            }
            p
        })
        .collect();
    for _ in 0..200 {
        let mut delta = 0.0f64;
        for i in 0..degree {
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..degree {
                if j != i {
                    denom = denom.mul(roots[i].sub(roots[j]));
                }
            }
            let step = eval(roots[i]).div(denom);
            roots[i] = roots[i].sub(step);
            delta = delta.max(step.abs());
        }
        if delta < 1e-15 {
            break;
        }
    }
    roots
}

/// Lowpass filter of the Daubechies wavelet with `moments` vanishing
/// moments (filter length `2 * moments`).
pub fn daubechies_lowpass(moments: usize) -> Result<Vec<f64>> {
    if moments == 0 || moments > 12 {
        return Err(Error::invalid(format!(
            "daubechies order {moments} outside supported range 1..=12"
        )));
    }
    // Binomial polynomial P(y) = sum_k C(moments-1+k, k) y^k.
    let mut p = Vec::with_capacity(moments);
    let mut c = 1.0f64;
    for k in 0..moments {
        if k > 0 {
            c = c * (moments - 1 + k) as f64 / k as f64;
        }
        p.push(C64::new(c, 0.0));
    }

    // Filter polynomial in z, low-to-high degree, as a complex product.
    let mut h = vec![C64::new(1.0, 0.0)];
    if moments > 1 {
        for y in durand_kerner(&p) {
            // z^2 - (2 - 4y) z + 1 = 0; keep the root inside the unit circle.
            let b = C64::new(2.0, 0.0).sub(C64::new(4.0, 0.0).mul(y));
            let disc = b.mul(b).sub(C64::new(4.0, 0.0)).sqrt();
            let z1 = b.add(disc).mul(C64::new(0.5, 0.0));
            let z2 = b.sub(disc).mul(C64::new(0.5, 0.0));
            let z = if z1.abs() < 1.0 { z1 } else { z2 };
            // Multiply h(z) by (z - root).
            let mut next = vec![C64::new(0.0, 0.0); h.len() + 1];
            for (i, &hi) in h.iter().enumerate() {
                next[i] = next[i].sub(hi.mul(z));
                next[i + 1] = next[i + 1].add(hi);
            }
            h = next;
        }
    }
    // Multiply by (1 + z)^moments.
    for _ in 0..moments {
        let mut next = vec![C64::new(0.0, 0.0); h.len() + 1];
        for (i, &hi) in h.iter().enumerate() {
            next[i] = next[i].add(hi);
            next[i + 1] = next[i + 1].add(hi);
        }
        h = next;
    }

    let mut real: Vec<f64> = h.iter().map(|c| c.re).collect();
    let max_imag = h.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if max_imag > 1e-9 {
        return Err(Error::invalid(format!(
            "daubechies factorization left imaginary residue {max_imag:.3e}"
        )));
    }
    let sum: f64 = real.iter().sum();
    let scale = std::f64::consts::SQRT_2 / sum;
    for v in &mut real {
        *v *= scale;
    }

    // Double-shift orthonormality of the constructed filter.
    let taps = real.len();
    for shift in 1..moments {
        let dot: f64 = (0..taps - 2 * shift)
            .map(|i| real[i] * real[i + 2 * shift])
            .sum();
        if dot.abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "daubechies factorization violates orthonormality ({dot:.3e} at shift {shift})"
            )));
        }
    }
    let norm: f64 = real.iter().map(|v| v * v).sum();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "daubechies filter norm {norm} != 1"
        )));
    }
    Ok(real)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_is_exact() {
        let h = daubechies_lowpass(1).unwrap();
        assert_eq!(h.len(), 2);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((h[0] - r).abs() < 1e-15);
        assert!((h[1] - r).abs() < 1e-15);
    }

    #[test]
    fn db2_matches_closed_form() {
        // h = (1 +/- sqrt(3)) family over 4 sqrt(2), up to time reversal
        // (both phases factor the same Daubechies polynomial).
        let h = daubechies_lowpass(2).unwrap();
        let s3 = 3.0f64.sqrt();
        let d = 4.0 * std::f64::consts::SQRT_2;
        let expect = [
            (1.0 + s3) / d,
            (3.0 + s3) / d,
            (3.0 - s3) / d,
            (1.0 - s3) / d,
        ];
        let forward = h
            .iter()
            .zip(expect.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12);
        let reversed = h
            .iter()
            .rev()
            .zip(expect.iter())
            .all(|(a, b)| (a - b).abs() < 1e-12);
        assert!(forward || reversed, "{h:?}");
    }

    #[test]
    fn higher_orders_are_orthonormal_with_vanishing_mean() {
        for n in 3..=10 {
            let h = daubechies_lowpass(n).unwrap();
            assert_eq!(h.len(), 2 * n);
            let sum: f64 = h.iter().sum();
            assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12);
            // Highpass mate must sum to ~0 (at least one vanishing moment).
            let g_sum: f64 = h
                .iter()
                .rev()
                .enumerate()
                .map(|(k, &v)| if k % 2 == 0 { v } else { -v })
                .sum();
            assert!(g_sum.abs() < 1e-12, "order {n}: {g_sum}");
        }
    }
}
