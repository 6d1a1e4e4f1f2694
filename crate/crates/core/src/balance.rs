//! Pre-estimation of the tonal/transient balance.
//!
//! The geometric mean of squared coefficients in one orthonormal basis
//! tracks the significance-map size of the layer that is sparse in the
//! *other* basis, so the pair of logarithmic dimensions (wavelet side,
//! MDCT side) yields complementary tonality/transientness indices that
//! split the bit budget before any layer is estimated.

use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::transforms::{dwt_forward, dwt_inverse, Mdct, MdctGrid, Wavelet, WaveletTree};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `E[log2 c^2] - log2 sigma^2` for a centered Gaussian coefficient:
/// `-(1 + gamma / ln 2)`.
pub fn gaussian_log_dim_offset() -> f64 {
    -(1.0 + EULER_GAMMA / std::f64::consts::LN_2)
}

/// Expected logarithmic dimension of i.i.d. `N(0, sigma^2)` coefficients.
pub fn expected_log_dimension(sigma: f64) -> f64 {
    (sigma * sigma).log2() + gaussian_log_dim_offset()
}

/// Mean of `log2 |c|^2` with the zero floor `1e-30 * ||c||^2 / N`, which
/// keeps the statistic scale-equivariant on quantized data.
pub fn log_dimension(coeffs: &[f64]) -> Result<f64> {
    if coeffs.is_empty() {
        return Err(Error::invalid("log dimension of an empty coefficient set"));
    }
    let energy: f64 = coeffs.iter().map(|c| c * c).sum();
    if energy == 0.0 {
        return Err(Error::DegenerateInput("all-zero coefficient set"));
    }
    let floor = 1e-30 * energy / coeffs.len() as f64;
    let sum: f64 = coeffs.iter().map(|c| (c * c).max(floor).log2()).sum();
    Ok(sum / coeffs.len() as f64)
}

/// Complementary indices from the two size estimates.
pub fn indices(size_wavelet: f64, size_mdct: f64) -> Result<(f64, f64)> {
    if !(size_wavelet >= 0.0) || !(size_mdct >= 0.0) {
        return Err(Error::invalid("size estimates must be non-negative"));
    }
    let total = size_wavelet + size_mdct;
    if total == 0.0 {
        return Err(Error::DegenerateInput("both size estimates are zero"));
    }
    Ok((size_wavelet / total, size_mdct / total))
}

/// Balance analysis of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport {
    /// Logarithmic dimension in the wavelet basis.
    pub log_dim_wavelet: f64,
    /// Logarithmic dimension in the MDCT basis.
    pub log_dim_mdct: f64,
    /// `2^log_dim_wavelet`: tracks the tonal map size.
    pub size_wavelet: f64,
    /// `2^log_dim_mdct`: tracks the transient map size.
    pub size_mdct: f64,
    pub index_tonal: f64,
    pub index_transient: f64,
}

/// Fixed two-basis geometry on frames of `2^depth` samples: a full-depth
/// wavelet basis and an MDCT whose window length is a quarter frame, both
/// orthonormal on the frame.
#[derive(Debug, Clone)]
pub struct BalanceAnalyzer {
    mdct: Mdct,
    wavelet: Wavelet,
    depth: u32,
}

impl BalanceAnalyzer {
    pub fn new(depth: u32, wavelet_moments: usize) -> Result<Self> {
        if depth < 3 {
            return Err(Error::invalid(format!(
                "balance frames need depth >= 3, got {depth}"
            )));
        }
        let frame_len = 1usize << depth;
        Ok(Self {
            mdct: Mdct::new(frame_len / 4)?,
            wavelet: Wavelet::daubechies(wavelet_moments)?,
            depth,
        })
    }

    pub fn frame_len(&self) -> usize {
        1usize << self.depth
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// MDCT window count within one frame (always 4).
    pub fn mdct_windows(&self) -> usize {
        4
    }

    pub fn mdct_bands(&self) -> usize {
        self.mdct.frame_len()
    }

    /// All wavelet-basis coefficients of a frame (scaling first).
    pub fn wavelet_coeffs(&self, frame: &[f64]) -> Result<Vec<f64>> {
        Ok(dwt_forward(frame, self.depth, &self.wavelet)?.flatten())
    }

    /// All MDCT-basis coefficients of a frame, flattened window-major.
    pub fn mdct_coeffs(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let grid = self.mdct.forward(frame, self.mdct.frame_len())?;
        let bands = grid.band_count();
        let mut flat = vec![0.0; grid.coeff_count()];
        for k in 0..grid.window_count() {
            for n in 0..bands {
                flat[k * bands + n] = grid.coeff(k, n);
            }
        }
        Ok(flat)
    }

    /// Synthesizes a frame from sparse wavelet coefficients given by
    /// flattened index (0 = scaling, details follow coarse to fine).
    pub fn wavelet_synthesize(&self, entries: &[(usize, f64)]) -> Result<Vec<f64>> {
        let mut tree = WaveletTree::zero(self.depth);
        for &(flat, value) in entries {
            if flat >= self.frame_len() {
                return Err(Error::dims(format!(
                    "wavelet index {flat} outside frame of {}",
                    self.frame_len()
                )));
            }
            if flat == 0 {
                tree.set_scaling(value);
            } else {
                let (scale, index) = crate::transient::heap_to_scale(self.depth, flat - 1);
                tree.detail_mut(scale)[index] = value;
            }
        }
        Ok(dwt_inverse(&tree, &self.wavelet))
    }

    /// Synthesizes a frame from sparse MDCT coefficients given by flattened
    /// window-major index.
    pub fn mdct_synthesize(&self, entries: &[(usize, f64)]) -> Result<Vec<f64>> {
        let bands = self.mdct.frame_len();
        let mut grid = MdctGrid::zero(self.mdct_windows(), bands, bands);
        for &(flat, value) in entries {
            if flat >= self.frame_len() {
                return Err(Error::dims(format!(
                    "mdct index {flat} outside frame of {}",
                    self.frame_len()
                )));
            }
            grid.set_coeff(flat / bands, flat % bands, value);
        }
        self.mdct.inverse(&grid)
    }

    /// Balance report for one frame; all-zero frames are flagged.
    pub fn analyze_frame(&self, frame: &[f64]) -> Result<BalanceReport> {
        if frame.len() != self.frame_len() {
            return Err(Error::dims(format!(
                "frame length {} does not match analyzer frame {}",
                frame.len(),
                self.frame_len()
            )));
        }
        let log_dim_wavelet = log_dimension(&self.wavelet_coeffs(frame)?)?;
        let log_dim_mdct = log_dimension(&self.mdct_coeffs(frame)?)?;
        let size_wavelet = log_dim_wavelet.exp2();
        let size_mdct = log_dim_mdct.exp2();
        let (index_tonal, index_transient) = indices(size_wavelet, size_mdct)?;
        Ok(BalanceReport {
            log_dim_wavelet,
            log_dim_mdct,
            size_wavelet,
            size_mdct,
            index_tonal,
            index_transient,
        })
    }

    /// Sliding-window transientness profile with 50% overlap. Returns
    /// `(window start in seconds, tonal index, transient index)`; silent
    /// windows are skipped.
    pub fn profile(&self, signal: &Signal) -> Vec<(f64, f64, f64)> {
        let frame = self.frame_len();
        let hop = frame / 2;
        let mut out = Vec::new();
        let mut start = 0;
        while start + frame <= signal.len() {
            if let Ok(report) = self.analyze_frame(&signal.samples[start..start + frame]) {
                out.push((
                    start as f64 / signal.sample_rate as f64,
                    report.index_tonal,
                    report.index_transient,
                ));
            }
            start += hop;
        }
        out
    }

    /// Parseval weights of every wavelet-basis index with respect to a set
    /// of MDCT indices (flattened window-major): the energy each wavelet
    /// atom captures from the span of the set.
    pub fn wavelet_weights_of_mdct_set(&self, mdct_set: &[usize]) -> Result<Vec<f64>> {
        let mut weights = vec![0.0; self.frame_len()];
        for &flat in mdct_set {
            let atom = self.mdct_synthesize(&[(flat, 1.0)])?;
            for (i, c) in self.wavelet_coeffs(&atom)?.iter().enumerate() {
                weights[i] += c * c;
            }
        }
        Ok(weights)
    }

    /// Mirror of [`Self::wavelet_weights_of_mdct_set`].
    pub fn mdct_weights_of_wavelet_set(&self, wavelet_set: &[usize]) -> Result<Vec<f64>> {
        let mut weights = vec![0.0; self.frame_len()];
        for &flat in wavelet_set {
            let atom = self.wavelet_synthesize(&[(flat, 1.0)])?;
            for (i, c) in self.mdct_coeffs(&atom)?.iter().enumerate() {
                weights[i] += c * c;
            }
        }
        Ok(weights)
    }
}

/// Largest weight over a map: the relative redundancy of the two bases
/// with respect to that map.
pub fn relative_redundancy(weights: &[f64], map: &[usize]) -> f64 {
    map.iter().map(|&i| weights[i]).fold(0.0, f64::max)
}

/// Bounds on the expected logarithmic dimension of the mixed model in the
/// basis whose significant set is `own_map`, given the cross-basis Parseval
/// `weights` of the other layer's set and i.i.d. deviations `sigma` (own
/// significant coefficients) and `sigma_other`.
///
/// Returns `(lower, upper)`; the gap is
/// `|own_map|/N * log2(1 + redundancy * sigma_other^2 / sigma^2)`.
pub fn expected_logdim_bounds(
    sigma: f64,
    sigma_other: f64,
    own_map: &[usize],
    weights: &[f64],
) -> Result<(f64, f64)> {
    if !(sigma > 0.0) || !(sigma_other > 0.0) {
        return Err(Error::DegenerateInput(
            "deviations must be positive for the log-dimension bounds",
        ));
    }
    let n = weights.len() as f64;
    let in_map: std::collections::HashSet<usize> = own_map.iter().copied().collect();
    let mut off_map_term = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if !in_map.contains(&i) {
            if w <= 0.0 {
                return Err(Error::DegenerateInput(
                    "zero Parseval weight off the map makes the bound diverge",
                ));
            }
            off_map_term += (sigma_other * sigma_other * w).log2();
        }
    }
    let base = gaussian_log_dim_offset() + off_map_term / n;
    let share = own_map.len() as f64 / n;
    let redundancy = relative_redundancy(weights, own_map);
    let lower = base + share * (sigma * sigma).log2();
    let upper = base + share * (sigma * sigma + redundancy * sigma_other * sigma_other).log2();
    Ok((lower, upper))
}

/// Splits a bit budget by the tonal index, holding back `floor_share` of
/// the total for each layer.
pub fn split_budget(total_bits: u64, index_tonal: f64, floor_share: f64) -> (u64, u64) {
    let floor = ((total_bits as f64) * floor_share).ceil() as u64;
    let floor = floor.min(total_bits / 2);
    let tonal = ((total_bits as f64 * index_tonal).round() as u64).clamp(floor, total_bits - floor);
    (tonal, total_bits - tonal)
}
