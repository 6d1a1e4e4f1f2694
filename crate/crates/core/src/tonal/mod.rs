//! Fixed-frequency hidden Markov chain model over MDCT rows.
//!
//! Each frequency bin carries a two-state chain (tonal / residual) with
//! centered Gaussian emissions. The module provides the closed-form
//! statistics of the chain (stationary frequency, marginal state law,
//! expected tonal occupation and energy, run-length entropy), exact
//! forward-backward smoothing, Viterbi MAP decoding, EM parameter
//! estimation, posterior thresholding and the tonal bit allocation.

mod infer;

pub use infer::{
    em_estimate, forward_backward, posterior_grid, threshold_select, viterbi_map, BinState,
    EmOptions, EmOutcome, TonalPosteriors,
};

use serde::{Deserialize, Serialize};

use crate::alloc;
use crate::error::{Error, Result};
use crate::transforms::MdctGrid;

/// Chain and emission parameters of a single frequency bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TonalBin {
    /// Persistence of the tonal state, `P(T -> T)`.
    pub stay_tonal: f64,
    /// Persistence of the residual state, `P(R -> R)`.
    pub stay_residual: f64,
    /// Initial tonal probability of the chain.
    pub initial_tonal: f64,
    pub sigma_tonal: f64,
    pub sigma_residual: f64,
}

impl TonalBin {
    fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("stay_tonal", self.stay_tonal),
            ("stay_residual", self.stay_residual),
            ("initial_tonal", self.initial_tonal),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.sigma_residual > 0.0) || !self.sigma_residual.is_finite() {
            return Err(Error::invalid(format!(
                "sigma_residual = {} must be positive",
                self.sigma_residual
            )));
        }
        if self.sigma_tonal < self.sigma_residual || !self.sigma_tonal.is_finite() {
            return Err(Error::invalid(format!(
                "sigma_tonal = {} must dominate sigma_residual = {}",
                self.sigma_tonal, self.sigma_residual
            )));
        }
        Ok(())
    }
}

/// How emission deviations vary across frequency bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VarianceModel {
    /// Every bin carries free deviations.
    PerBin,
    /// One deviation pair shared by all bins.
    Uniform,
    /// Deviations decay with frequency as `sigma / (1 + (n / knee)^alpha)`;
    /// EM re-estimates only the two reference scales.
    Decay { alpha: f64, knee: f64 },
}

impl VarianceModel {
    /// Per-bin attenuation applied to the reference deviations.
    pub fn weight(&self, bin: usize) -> f64 {
        match *self {
            VarianceModel::PerBin | VarianceModel::Uniform => 1.0,
            VarianceModel::Decay { alpha, knee } => 1.0 / (1.0 + (bin as f64 / knee).powf(alpha)),
        }
    }
}

/// Full parameter set of the tonal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TonalParams {
    bins: Vec<TonalBin>,
    variance_model: VarianceModel,
    tied_transitions: bool,
}

impl TonalParams {
    pub fn from_bins(
        bins: Vec<TonalBin>,
        variance_model: VarianceModel,
        tied_transitions: bool,
    ) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::invalid("tonal model needs at least one bin"));
        }
        for bin in &bins {
            bin.validate()?;
        }
        if let VarianceModel::Decay { alpha, knee } = variance_model {
            if !(alpha >= 0.0) || !(knee > 0.0) {
                return Err(Error::invalid(format!(
                    "decay model needs alpha >= 0 and knee > 0, got alpha={alpha}, knee={knee}"
                )));
            }
        }
        Ok(Self {
            bins,
            variance_model,
            tied_transitions,
        })
    }

    /// Identical transition probabilities and deviations in every bin,
    /// initialized at equilibrium.
    pub fn uniform(
        band_count: usize,
        stay_tonal: f64,
        stay_residual: f64,
        sigma_tonal: f64,
        sigma_residual: f64,
    ) -> Result<Self> {
        let initial = equilibrium_frequency(stay_tonal, stay_residual)?;
        let bin = TonalBin {
            stay_tonal,
            stay_residual,
            initial_tonal: initial,
            sigma_tonal,
            sigma_residual,
        };
        Self::from_bins(vec![bin; band_count], VarianceModel::Uniform, true)
    }

    /// Tied transitions with frequency-decaying deviations
    /// `sigma_s / (1 + (n/knee)^alpha)`, initialized at equilibrium.
    pub fn decay(
        band_count: usize,
        stay_tonal: f64,
        stay_residual: f64,
        sigma_tonal: f64,
        sigma_residual: f64,
        alpha: f64,
        knee: f64,
    ) -> Result<Self> {
        let initial = equilibrium_frequency(stay_tonal, stay_residual)?;
        let model = VarianceModel::Decay { alpha, knee };
        let bins = (0..band_count)
            .map(|n| {
                let w = model.weight(n);
                TonalBin {
                    stay_tonal,
                    stay_residual,
                    initial_tonal: initial,
                    sigma_tonal: sigma_tonal * w,
                    sigma_residual: sigma_residual * w,
                }
            })
            .collect();
        Self::from_bins(bins, model, true)
    }

    pub fn band_count(&self) -> usize {
        self.bins.len()
    }

    pub fn bin(&self, n: usize) -> &TonalBin {
        &self.bins[n]
    }

    pub fn bins(&self) -> &[TonalBin] {
        &self.bins
    }

    pub fn variance_model(&self) -> VarianceModel {
        self.variance_model
    }

    pub fn tied_transitions(&self) -> bool {
        self.tied_transitions
    }

    /// Stationary tonal probability per bin.
    pub fn equilibrium(&self) -> Result<Vec<f64>> {
        self.bins
            .iter()
            .map(|b| equilibrium_frequency(b.stay_tonal, b.stay_residual))
            .collect()
    }

    /// Expected number of tonal coefficients per window, `sum_n nu_n^(e)`.
    pub fn mean_tonal_per_window(&self) -> Result<f64> {
        Ok(self.equilibrium()?.iter().sum())
    }
}

/// Tonal significance map: the retained time-frequency grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TonalMap {
    cells: std::collections::BTreeSet<(usize, usize)>,
    window_count: usize,
    band_count: usize,
}

impl TonalMap {
    pub fn new(window_count: usize, band_count: usize) -> Self {
        Self {
            cells: Default::default(),
            window_count,
            band_count,
        }
    }

    pub fn insert(&mut self, window: usize, bin: usize) -> Result<()> {
        if window >= self.window_count || bin >= self.band_count {
            return Err(Error::dims(format!(
                "cell ({window}, {bin}) outside {}x{} grid",
                self.window_count, self.band_count
            )));
        }
        self.cells.insert((window, bin));
        Ok(())
    }

    pub fn contains(&self, window: usize, bin: usize) -> bool {
        self.cells.contains(&(window, bin))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn window_count(&self) -> usize {
        self.window_count
    }

    pub fn band_count(&self) -> usize {
        self.band_count
    }

    /// Cells in `(window, bin)` lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells.iter().copied()
    }

    /// One boolean row per bin, indexed by window.
    pub fn bin_rows(&self) -> Vec<Vec<bool>> {
        let mut rows = vec![vec![false; self.window_count]; self.band_count];
        for &(k, n) in &self.cells {
            rows[n][k] = true;
        }
        rows
    }

    pub fn from_bin_rows(rows: &[Vec<bool>], window_count: usize) -> Self {
        let mut map = TonalMap::new(window_count, rows.len());
        for (n, row) in rows.iter().enumerate() {
            for (k, &hit) in row.iter().enumerate() {
                if hit {
                    map.cells.insert((k, n));
                }
            }
        }
        map
    }
}

/// Stationary tonal probability `(1 - stay_residual) / (2 - stay_tonal - stay_residual)`
/// of the two-state chain.
pub fn equilibrium_frequency(stay_tonal: f64, stay_residual: f64) -> Result<f64> {
    for (name, p) in [("stay_tonal", stay_tonal), ("stay_residual", stay_residual)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
        }
    }
    let denom = 2.0 - stay_tonal - stay_residual;
    if denom <= 0.0 {
        return Err(Error::DegenerateInput(
            "chain with stay_tonal = stay_residual = 1 has no equilibrium",
        ));
    }
    Ok((1.0 - stay_residual) / denom)
}

/// Marginal tonal probability after `window` steps from initial law
/// `initial_tonal`.
pub fn state_probability(
    window: usize,
    initial_tonal: f64,
    stay_tonal: f64,
    stay_residual: f64,
) -> Result<f64> {
    let eq = equilibrium_frequency(stay_tonal, stay_residual)?;
    let contraction = stay_tonal + stay_residual - 1.0;
    Ok(eq + (initial_tonal - eq) * contraction.powi(window as i32))
}

/// Expected fraction of tonal coefficients over `window_count` consecutive
/// windows; equals the average of [`state_probability`] over the frame.
pub fn expected_tonal_fraction(
    window_count: usize,
    initial_tonal: f64,
    stay_tonal: f64,
    stay_residual: f64,
) -> Result<f64> {
    if window_count == 0 {
        return Err(Error::invalid("window count must be at least 1"));
    }
    let denom = 2.0 - stay_tonal - stay_residual;
    equilibrium_frequency(stay_tonal, stay_residual)?;
    let k = window_count as f64;
    let contraction = stay_tonal + stay_residual - 1.0;
    let tail = 1.0 - contraction.powi(window_count as i32);
    Ok((initial_tonal * tail + (1.0 - stay_residual) * (k - tail / denom)) / (k * denom))
}

/// Expected tonal energy per window over `window_count` windows,
/// `sum_n sigma_tonal_n^2 tau_n`.
pub fn expected_tonal_energy(params: &TonalParams, window_count: usize) -> Result<f64> {
    let mut total = 0.0;
    for bin in params.bins() {
        let tau = expected_tonal_fraction(
            window_count,
            bin.initial_tonal,
            bin.stay_tonal,
            bin.stay_residual,
        )?;
        total += bin.sigma_tonal * bin.sigma_tonal * tau;
    }
    Ok(total)
}

/// Binary entropy in bits with the `0 log 0 = 0` convention.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Per-coefficient entropy of the run-length description of a stationary
/// significance row: `nu^(e) h(stay_tonal) + (1 - nu^(e)) h(stay_residual)`.
pub fn run_length_entropy(stay_tonal: f64, stay_residual: f64) -> f64 {
    if stay_tonal >= 1.0 && stay_residual >= 1.0 {
        return 0.0;
    }
    let eq = (1.0 - stay_residual) / (2.0 - stay_tonal - stay_residual);
    eq * binary_entropy(stay_tonal) + (1.0 - eq) * binary_entropy(stay_residual)
}

/// Real-valued per-bin rates and the model distortion bound.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAllocation {
    /// Bits per retained coefficient in each bin (or scale).
    pub rates: Vec<f64>,
    /// Lower bound on the expected distortion per window at this budget.
    pub distortion_bound: f64,
}

/// Distributes `mean_rate` bits per grid cell over frequency bins,
/// minimizing expected distortion under the stationary occupation weights.
/// The expected budget identity `sum_n nu_n^(e) R_n = N * mean_rate` holds
/// exactly; negative rates are clamped and re-solved by water-filling.
pub fn allocate_bits_tonal(params: &TonalParams, mean_rate: f64) -> Result<RateAllocation> {
    if !(mean_rate > 0.0) {
        return Err(Error::invalid(format!(
            "mean rate must be positive, got {mean_rate}"
        )));
    }
    let weights = params.equilibrium()?;
    let sigmas: Vec<f64> = params.bins().iter().map(|b| b.sigma_tonal).collect();
    if sigmas.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateInput("all tonal deviations are zero"));
    }
    let budget = params.band_count() as f64 * mean_rate;
    let rates = alloc::reverse_waterfill(&weights, &sigmas, budget)?;
    let distortion_bound = alloc::distortion_floor(&weights, &sigmas, budget);
    Ok(RateAllocation {
        rates,
        distortion_bound,
    })
}

/// Expected distortion per window of a tonal allocation under the ideal
/// Gaussian quantizer model.
pub fn tonal_expected_distortion(params: &TonalParams, rates: &[f64]) -> Result<f64> {
    let weights = params.equilibrium()?;
    let sigmas: Vec<f64> = params.bins().iter().map(|b| b.sigma_tonal).collect();
    Ok(alloc::expected_distortion(&weights, &sigmas, rates))
}

/// EM initialization from data: per-bin robust scale split with a strongly
/// persistent transition prior.
pub fn em_init(grid: &MdctGrid, variance_model: VarianceModel, tied: bool) -> Result<TonalParams> {
    let n_bins = grid.band_count();
    let max_abs = grid.as_slice().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_abs == 0.0 {
        return Err(Error::DegenerateInput("all-zero coefficient grid"));
    }
    let floor = 1e-8 * max_abs;
    let mad = |row: &[f64]| -> f64 {
        let mut mags: Vec<f64> = row.iter().map(|y| y.abs()).collect();
        mags.sort_by(f64::total_cmp);
        mags[mags.len() / 2]
    };
    let stay = 0.9;
    let initial = equilibrium_frequency(stay, stay)?;
    let bins: Vec<TonalBin> = match variance_model {
        VarianceModel::PerBin => (0..n_bins)
            .map(|n| {
                let s_r = (1.4826 * mad(grid.bin_row(n))).max(floor);
                TonalBin {
                    stay_tonal: stay,
                    stay_residual: stay,
                    initial_tonal: initial,
                    sigma_tonal: 8.0 * s_r,
                    sigma_residual: s_r,
                }
            })
            .collect(),
        VarianceModel::Uniform => {
            let mut mags: Vec<f64> = grid.as_slice().iter().map(|y| y.abs()).collect();
            mags.sort_by(f64::total_cmp);
            let s_r = (1.4826 * mags[mags.len() / 2]).max(floor);
            vec![
                TonalBin {
                    stay_tonal: stay,
                    stay_residual: stay,
                    initial_tonal: initial,
                    sigma_tonal: 8.0 * s_r,
                    sigma_residual: s_r,
                };
                n_bins
            ]
        }
        VarianceModel::Decay { .. } => {
            // Fit the reference scale from per-bin robust scales deflated by
            // the decay profile, then rebuild the profile exactly.
            let mut scaled: Vec<f64> = (0..n_bins)
                .map(|n| 1.4826 * mad(grid.bin_row(n)) / variance_model.weight(n))
                .collect();
            scaled.sort_by(f64::total_cmp);
            let s_r = scaled[scaled.len() / 2].max(floor);
            (0..n_bins)
                .map(|n| {
                    let w = variance_model.weight(n);
                    TonalBin {
                        stay_tonal: stay,
                        stay_residual: stay,
                        initial_tonal: initial,
                        sigma_tonal: 8.0 * s_r * w,
                        sigma_residual: (s_r * w).max(f64::MIN_POSITIVE),
                    }
                })
                .collect()
        }
    };
    TonalParams::from_bins(bins, variance_model, tied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    #[test]
    fn equilibrium_symmetric_and_absorbing() {
        assert!((equilibrium_frequency(0.9, 0.9).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(equilibrium_frequency(0.7, 1.0).unwrap(), 0.0);
        assert!(equilibrium_frequency(1.0, 1.0).is_err());
        assert!(equilibrium_frequency(1.2, 0.5).is_err());
    }

    #[test]
    fn equilibrium_matches_stationary_eigenvector() {
        let (stay_t, stay_r) = (0.8, 0.95);
        let nu = equilibrium_frequency(stay_t, stay_r).unwrap();
        assert!((nu - 0.2).abs() < 1e-12);
        let fixed = reference::stationary_distribution(stay_t, stay_r);
        assert!((nu - fixed).abs() < 1e-12);
    }

    #[test]
    fn state_probability_initial_and_stationary() {
        assert!((state_probability(0, 0.3, 0.9, 0.8).unwrap() - 0.3).abs() < 1e-15);
        let eq = equilibrium_frequency(0.9, 0.8).unwrap();
        for k in 0..20 {
            let p = state_probability(k, eq, 0.9, 0.8).unwrap();
            assert!((p - eq).abs() < 1e-13);
        }
    }

    #[test]
    fn state_probability_matches_matrix_power() {
        let p = state_probability(5, 0.1, 0.9, 0.8).unwrap();
        let oracle = reference::chain_marginal_by_matrix_power(5, 0.1, 0.9, 0.8);
        assert!((p - oracle).abs() < 1e-13, "{p} vs {oracle}");
    }

    #[test]
    fn tonal_fraction_reduces_at_equilibrium_and_single_window() {
        let eq = equilibrium_frequency(0.95, 0.9).unwrap();
        for k in [1, 2, 10, 500] {
            let tau = expected_tonal_fraction(k, eq, 0.95, 0.9).unwrap();
            assert!((tau - eq).abs() < 1e-13);
        }
        assert!((expected_tonal_fraction(1, 0.3, 0.95, 0.9).unwrap() - 0.3).abs() < 1e-13);
        assert!(expected_tonal_fraction(0, 0.3, 0.95, 0.9).is_err());
    }

    #[test]
    fn tonal_fraction_matches_marginal_sum() {
        let (k_count, nu, stay_t, stay_r) = (50, 0.3, 0.95, 0.9);
        let tau = expected_tonal_fraction(k_count, nu, stay_t, stay_r).unwrap();
        let direct: f64 = (0..k_count)
            .map(|k| state_probability(k, nu, stay_t, stay_r).unwrap())
            .sum::<f64>()
            / k_count as f64;
        assert!((tau - direct).abs() < 1e-12, "{tau} vs {direct}");
    }

    #[test]
    fn tonal_energy_closed_form() {
        // Zero deviations kill the energy.
        let params = TonalParams::from_bins(
            vec![TonalBin {
                stay_tonal: 0.9,
                stay_residual: 0.8,
                initial_tonal: 0.5,
                sigma_tonal: 1e-12,
                sigma_residual: 1e-12,
            }],
            VarianceModel::PerBin,
            true,
        )
        .unwrap();
        assert!(expected_tonal_energy(&params, 10).unwrap() < 1e-20);

        // At equilibrium the energy collapses to sum nu^(e) sigma^2.
        let params = TonalParams::uniform(16, 0.95, 0.9, 2.0, 0.1).unwrap();
        let eq = equilibrium_frequency(0.95, 0.9).unwrap();
        let energy = expected_tonal_energy(&params, 37).unwrap();
        assert!((energy - 16.0 * eq * 4.0).abs() < 1e-10);

        // Off equilibrium it matches the marginal sum.
        let bin = TonalBin {
            stay_tonal: 0.7,
            stay_residual: 0.7,
            initial_tonal: 0.9,
            sigma_tonal: 2.0,
            sigma_residual: 0.5,
        };
        let params = TonalParams::from_bins(vec![bin], VarianceModel::PerBin, true).unwrap();
        let energy = expected_tonal_energy(&params, 10).unwrap();
        let direct: f64 = (0..10)
            .map(|k| 4.0 * state_probability(k, 0.9, 0.7, 0.7).unwrap())
            .sum::<f64>()
            / 10.0;
        assert!((energy - direct).abs() < 1e-12);
    }

    #[test]
    fn run_length_entropy_landmarks() {
        assert!((run_length_entropy(0.5, 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(run_length_entropy(1.0, 1.0), 0.0);
        assert!(run_length_entropy(0.9999, 0.9999) < 0.002);
    }

    #[test]
    fn run_length_entropy_matches_series() {
        for (stay_t, stay_r) in [(0.9, 0.8), (0.5, 0.5), (0.99, 0.4), (0.6, 0.95)] {
            let formula = run_length_entropy(stay_t, stay_r);
            let series = reference::run_entropy_by_series(stay_t, stay_r, 10_000);
            assert!(
                (formula - series).abs() < 1e-9,
                "({stay_t},{stay_r}): {formula} vs {series}"
            );
        }
    }

    #[test]
    fn allocation_symmetry_and_budget() {
        let params = TonalParams::uniform(8, 0.9, 0.9, 1.5, 0.1).unwrap();
        let alloc = allocate_bits_tonal(&params, 2.0).unwrap();
        let expect = 8.0 * 2.0 / params.mean_tonal_per_window().unwrap();
        for r in &alloc.rates {
            assert!((r - expect).abs() < 1e-9);
        }

        let mut bins = vec![
            TonalBin {
                stay_tonal: 0.5,
                stay_residual: 1.0,
                initial_tonal: 0.0,
                sigma_tonal: 1.0,
                sigma_residual: 0.5,
            };
            4
        ];
        bins[2] = TonalBin {
            stay_tonal: 0.9,
            stay_residual: 0.8,
            initial_tonal: equilibrium_frequency(0.9, 0.8).unwrap(),
            sigma_tonal: 1.0,
            sigma_residual: 0.5,
        };
        let params = TonalParams::from_bins(bins, VarianceModel::PerBin, false).unwrap();
        let alloc = allocate_bits_tonal(&params, 1.0).unwrap();
        // Single active bin absorbs the entire budget.
        let eq = equilibrium_frequency(0.9, 0.8).unwrap();
        assert!((alloc.rates[2] - 4.0 / eq).abs() < 1e-9);
        for n in [0usize, 1, 3] {
            assert_eq!(alloc.rates[n], 0.0);
        }
    }

    #[test]
    fn allocation_budget_identity_and_bound() {
        let params = TonalParams::decay(16, 0.95, 0.9, 3.0, 0.2, 1.0, 4.0).unwrap();
        let alloc = allocate_bits_tonal(&params, 1.5).unwrap();
        let weights = params.equilibrium().unwrap();
        let spent: f64 = weights.iter().zip(&alloc.rates).map(|(w, r)| w * r).sum();
        assert!((spent - 16.0 * 1.5).abs() < 1e-9, "spent {spent}");
        let achieved = tonal_expected_distortion(&params, &alloc.rates).unwrap();
        assert!(achieved >= alloc.distortion_bound * (1.0 - 1e-12));
    }

    #[test]
    fn rejects_degenerate_allocation_inputs() {
        let params = TonalParams::uniform(4, 0.9, 0.9, 1.0, 0.5).unwrap();
        assert!(allocate_bits_tonal(&params, 0.0).is_err());
    }
}
