//! Inference over the per-bin two-state chains: scaled forward-backward
//! smoothing, Viterbi MAP decoding, EM re-estimation and posterior
//! thresholding. All recursions normalize per step so rows of arbitrary
//! length stay in range.

use crate::error::{Error, Result};
use crate::parallel;
use crate::tonal::{equilibrium_frequency, TonalBin, TonalMap, TonalParams, VarianceModel};
use crate::transforms::MdctGrid;

/// Hidden state of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinState {
    Tonal,
    Residual,
}

/// Smoothing posteriors for a whole grid plus per-bin log-likelihoods.
#[derive(Debug, Clone)]
pub struct TonalPosteriors {
    /// Bin-major `P(X_kn = T | row)`, `tonal[n * window_count + k]`.
    tonal: Vec<f64>,
    window_count: usize,
    band_count: usize,
    pub bin_log_likelihood: Vec<f64>,
}

impl TonalPosteriors {
    pub fn prob_tonal(&self, window: usize, bin: usize) -> f64 {
        self.tonal[bin * self.window_count + window]
    }

    pub fn bin_row(&self, bin: usize) -> &[f64] {
        &self.tonal[bin * self.window_count..(bin + 1) * self.window_count]
    }

    pub fn window_count(&self) -> usize {
        self.window_count
    }

    pub fn band_count(&self) -> usize {
        self.band_count
    }

    /// Total log-likelihood, summed over bins (bins are independent given
    /// the parameters).
    pub fn log_likelihood(&self) -> f64 {
        self.bin_log_likelihood.iter().sum()
    }
}

fn check_emissions(bin: &TonalBin) -> Result<()> {
    if !(bin.sigma_tonal > 0.0) || !(bin.sigma_residual > 0.0) {
        return Err(Error::invalid(
            "emission deviations must be positive for inference".to_string(),
        ));
    }
    Ok(())
}

#[inline]
fn log_gauss(y: f64, sigma: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - y * y / (2.0 * sigma * sigma)
}

/// Per-row scaled forward-backward pass retaining what EM needs.
struct RowPass {
    /// Smoothed `P(X_k = T | row)`.
    gamma_tonal: Vec<f64>,
    log_likelihood: f64,
    /// Transition expectations summed over steps:
    /// (tonal->tonal, from-tonal, residual->residual, from-residual).
    trans: [f64; 4],
}

fn row_pass(row: &[f64], bin: &TonalBin) -> Result<RowPass> {
    check_emissions(bin)?;
    let k_count = row.len();
    if k_count == 0 {
        return Err(Error::dims("empty coefficient row".to_string()));
    }
    let stay_t = bin.stay_tonal;
    let stay_r = bin.stay_residual;

    // Per-step max-normalized emission likelihoods.
    let mut emit = vec![[0.0f64; 2]; k_count];
    let mut emit_shift = vec![0.0f64; k_count];
    for (k, &y) in row.iter().enumerate() {
        let lt = log_gauss(y, bin.sigma_tonal);
        let lr = log_gauss(y, bin.sigma_residual);
        let m = lt.max(lr);
        emit[k] = [(lt - m).exp(), (lr - m).exp()];
        emit_shift[k] = m;
    }

    let mut alpha = vec![[0.0f64; 2]; k_count];
    let mut norms = vec![0.0f64; k_count];
    let mut log_likelihood = 0.0;
    let mut at = bin.initial_tonal * emit[0][0];
    let mut ar = (1.0 - bin.initial_tonal) * emit[0][1];
    for k in 0..k_count {
        if k > 0 {
            let pred_t = alpha[k - 1][0] * stay_t + alpha[k - 1][1] * (1.0 - stay_r);
            let pred_r = alpha[k - 1][0] * (1.0 - stay_t) + alpha[k - 1][1] * stay_r;
            at = pred_t * emit[k][0];
            ar = pred_r * emit[k][1];
        }
        let c = at + ar;
        if !(c > 0.0) {
            return Err(Error::DegenerateInput(
                "observation has zero likelihood under the chain model",
            ));
        }
        alpha[k] = [at / c, ar / c];
        norms[k] = c;
        log_likelihood += c.ln() + emit_shift[k];
    }

    let mut gamma_tonal = vec![0.0f64; k_count];
    let mut trans = [0.0f64; 4];
    let mut bt = 1.0f64;
    let mut br = 1.0f64;
    gamma_tonal[k_count - 1] = alpha[k_count - 1][0];
    for k in (0..k_count - 1).rev() {
        let et = emit[k + 1][0] * bt / norms[k + 1];
        let er = emit[k + 1][1] * br / norms[k + 1];
        let xi_tt = alpha[k][0] * stay_t * et;
        let xi_tr = alpha[k][0] * (1.0 - stay_t) * er;
        let xi_rt = alpha[k][1] * (1.0 - stay_r) * et;
        let xi_rr = alpha[k][1] * stay_r * er;
        trans[0] += xi_tt;
        trans[1] += xi_tt + xi_tr;
        trans[2] += xi_rr;
        trans[3] += xi_rt + xi_rr;
        bt = stay_t * et + (1.0 - stay_t) * er;
        br = (1.0 - stay_r) * et + stay_r * er;
        let g = alpha[k][0] * bt;
        let total = g + alpha[k][1] * br;
        gamma_tonal[k] = g / total;
    }
    Ok(RowPass {
        gamma_tonal,
        log_likelihood,
        trans,
    })
}

/// Exact smoothing posteriors and log-likelihood for one bin row.
pub fn forward_backward(row: &[f64], bin: &TonalBin) -> Result<(Vec<f64>, f64)> {
    let pass = row_pass(row, bin)?;
    Ok((pass.gamma_tonal, pass.log_likelihood))
}

/// Smoothing posteriors for every bin of a grid; bins run in parallel.
pub fn posterior_grid(grid: &MdctGrid, params: &TonalParams) -> Result<TonalPosteriors> {
    if params.band_count() != grid.band_count() {
        return Err(Error::dims(format!(
            "model covers {} bins, grid has {}",
            params.band_count(),
            grid.band_count()
        )));
    }
    let k_count = grid.window_count();
    let per_bin = parallel::par_map_index(grid.band_count(), |n| {
        forward_backward(grid.bin_row(n), params.bin(n))
    });
    let mut tonal = Vec::with_capacity(grid.coeff_count());
    let mut bin_log_likelihood = Vec::with_capacity(grid.band_count());
    for res in per_bin {
        let (post, ll) = res?;
        tonal.extend_from_slice(&post);
        bin_log_likelihood.push(ll);
    }
    Ok(TonalPosteriors {
        tonal,
        window_count: k_count,
        band_count: grid.band_count(),
        bin_log_likelihood,
    })
}

/// Joint MAP state path of one bin row (log-domain Viterbi).
pub fn viterbi_map(row: &[f64], bin: &TonalBin) -> Result<Vec<BinState>> {
    check_emissions(bin)?;
    let k_count = row.len();
    if k_count == 0 {
        return Ok(Vec::new());
    }
    let lp = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
    let trans = [
        [lp(bin.stay_tonal), lp(1.0 - bin.stay_tonal)],
        [lp(1.0 - bin.stay_residual), lp(bin.stay_residual)],
    ];
    let mut score = [
        lp(bin.initial_tonal) + log_gauss(row[0], bin.sigma_tonal),
        lp(1.0 - bin.initial_tonal) + log_gauss(row[0], bin.sigma_residual),
    ];
    let mut back = vec![[0u8; 2]; k_count];
    for (k, &y) in row.iter().enumerate().skip(1) {
        let emit = [
            log_gauss(y, bin.sigma_tonal),
            log_gauss(y, bin.sigma_residual),
        ];
        let mut next = [f64::NEG_INFINITY; 2];
        for to in 0..2 {
            // Ties resolve toward the tonal predecessor.
            let from_t = score[0] + trans[0][to];
            let from_r = score[1] + trans[1][to];
            if from_t >= from_r {
                next[to] = from_t + emit[to];
                back[k][to] = 0;
            } else {
                next[to] = from_r + emit[to];
                back[k][to] = 1;
            }
        }
        score = next;
    }
    let mut state = if score[0] >= score[1] { 0u8 } else { 1u8 };
    let mut path = vec![BinState::Residual; k_count];
    for k in (0..k_count).rev() {
        path[k] = if state == 0 {
            BinState::Tonal
        } else {
            BinState::Residual
        };
        state = back[k][state as usize];
    }
    Ok(path)
}

/// EM stopping controls.
#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    /// Relative log-likelihood gain below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            max_iter: 50,
        }
    }
}

/// Result of an EM run.
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub params: TonalParams,
    /// Log-likelihood after each E-step, in iteration order.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    /// Set when the grid was unusable (all zeros) and `params` is the
    /// untouched initializer.
    pub degenerate: bool,
}

const PROB_FLOOR: f64 = 1e-4;

struct BinStats {
    trans: [f64; 4],
    weight: [f64; 2],
    weighted_sq: [f64; 2],
    log_likelihood: f64,
}

fn e_step(grid: &MdctGrid, params: &TonalParams) -> Result<Vec<BinStats>> {
    let stats = parallel::par_map_index(grid.band_count(), |n| -> Result<BinStats> {
        let row = grid.bin_row(n);
        let pass = row_pass(row, params.bin(n))?;
        let mut weight = [0.0f64; 2];
        let mut weighted_sq = [0.0f64; 2];
        for (k, &y) in row.iter().enumerate() {
            let pt = pass.gamma_tonal[k];
            weight[0] += pt;
            weight[1] += 1.0 - pt;
            weighted_sq[0] += pt * y * y;
            weighted_sq[1] += (1.0 - pt) * y * y;
        }
        Ok(BinStats {
            trans: pass.trans,
            weight,
            weighted_sq,
            log_likelihood: pass.log_likelihood,
        })
    });
    stats.into_iter().collect()
}

fn m_step(grid: &MdctGrid, params: &TonalParams, stats: &[BinStats]) -> Result<TonalParams> {
    let model = params.variance_model();
    let max_abs = grid.as_slice().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let sigma_floor = 1e-8 * max_abs;
    let clamp = |p: f64| p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);

    let ratio = |num: f64, den: f64, fallback: f64| {
        if den > 1e-300 {
            num / den
        } else {
            fallback
        }
    };

    // Transition update, pooled over bins when tied.
    let mut new_bins: Vec<TonalBin> = params.bins().to_vec();
    if params.tied_transitions() {
        let tt: f64 = stats.iter().map(|s| s.trans[0]).sum();
        let tf: f64 = stats.iter().map(|s| s.trans[1]).sum();
        let rr: f64 = stats.iter().map(|s| s.trans[2]).sum();
        let rf: f64 = stats.iter().map(|s| s.trans[3]).sum();
        let stay_t = clamp(ratio(tt, tf, params.bin(0).stay_tonal));
        let stay_r = clamp(ratio(rr, rf, params.bin(0).stay_residual));
        for bin in &mut new_bins {
            bin.stay_tonal = stay_t;
            bin.stay_residual = stay_r;
        }
    } else {
        for (bin, s) in new_bins.iter_mut().zip(stats) {
            bin.stay_tonal = clamp(ratio(s.trans[0], s.trans[1], bin.stay_tonal));
            bin.stay_residual = clamp(ratio(s.trans[2], s.trans[3], bin.stay_residual));
        }
    }

    // Emission update under the active constraint set.
    match model {
        VarianceModel::PerBin => {
            for (bin, s) in new_bins.iter_mut().zip(stats) {
                let vt = ratio(
                    s.weighted_sq[0],
                    s.weight[0],
                    bin.sigma_tonal * bin.sigma_tonal,
                );
                let vr = ratio(
                    s.weighted_sq[1],
                    s.weight[1],
                    bin.sigma_residual * bin.sigma_residual,
                );
                bin.sigma_residual = vr.sqrt().max(sigma_floor);
                bin.sigma_tonal = vt.sqrt().max(bin.sigma_residual);
            }
        }
        VarianceModel::Uniform | VarianceModel::Decay { .. } => {
            let mut num = [0.0f64; 2];
            let mut den = [0.0f64; 2];
            for (n, s) in stats.iter().enumerate() {
                let w = model.weight(n);
                let w2 = w * w;
                for state in 0..2 {
                    num[state] += s.weighted_sq[state] / w2;
                    den[state] += s.weight[state];
                }
            }
            let old_scale_t = params.bin(0).sigma_tonal / model.weight(0);
            let old_scale_r = params.bin(0).sigma_residual / model.weight(0);
            let scale_r = ratio(num[1], den[1], old_scale_r * old_scale_r)
                .sqrt()
                .max(sigma_floor);
            let scale_t = ratio(num[0], den[0], old_scale_t * old_scale_t)
                .sqrt()
                .max(scale_r);
            for (n, bin) in new_bins.iter_mut().enumerate() {
                let w = model.weight(n);
                bin.sigma_residual = (scale_r * w).max(f64::MIN_POSITIVE);
                bin.sigma_tonal = (scale_t * w).max(bin.sigma_residual);
            }
        }
    }

    // Initial frequencies stay pinned to the (new) equilibrium.
    for bin in &mut new_bins {
        bin.initial_tonal = equilibrium_frequency(bin.stay_tonal, bin.stay_residual)?;
    }
    TonalParams::from_bins(new_bins, model, params.tied_transitions())
}

/// EM re-estimation of the tonal parameters on a coefficient grid.
///
/// The log-likelihood trace is non-decreasing; an iterate that would lower
/// it (possible only through the equilibrium pinning of the initial law) is
/// rejected and iteration stops at the previous parameters.
pub fn em_estimate(grid: &MdctGrid, init: &TonalParams, options: EmOptions) -> Result<EmOutcome> {
    if params_grid_mismatch(init, grid) {
        return Err(Error::dims(format!(
            "model covers {} bins, grid has {}",
            init.band_count(),
            grid.band_count()
        )));
    }
    if grid.window_count() < 2 {
        return Err(Error::invalid(
            "EM needs at least two windows per bin".to_string(),
        ));
    }
    if grid.as_slice().iter().all(|&c| c == 0.0) {
        return Ok(EmOutcome {
            params: init.clone(),
            log_likelihood: Vec::new(),
            iterations: 0,
            degenerate: true,
        });
    }

    let mut params = init.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    for _ in 0..options.max_iter {
        let stats = e_step(grid, &params)?;
        let ll: f64 = stats.iter().map(|s| s.log_likelihood).sum();
        if let Some(&prev) = trace.last() {
            if ll < prev - 1e-10 * prev.abs().max(1.0) {
                break;
            }
            trace.push(ll);
            if ll - prev < options.tol * prev.abs().max(1.0) {
                break;
            }
        } else {
            trace.push(ll);
        }
        params = m_step(grid, &params, &stats)?;
        iterations += 1;
    }
    Ok(EmOutcome {
        params,
        log_likelihood: trace,
        iterations,
        degenerate: false,
    })
}

fn params_grid_mismatch(params: &TonalParams, grid: &MdctGrid) -> bool {
    params.band_count() != grid.band_count()
}

/// Keeps the `keep` cells with the largest tonal posterior. Ties resolve by
/// larger coefficient magnitude, then smaller `(window, bin)`, so the map is
/// reproducible bit for bit.
pub fn threshold_select(
    posteriors: &TonalPosteriors,
    grid: &MdctGrid,
    keep: usize,
) -> Result<TonalMap> {
    if posteriors.window_count() != grid.window_count()
        || posteriors.band_count() != grid.band_count()
    {
        return Err(Error::dims(
            "posterior and grid dimensions differ".to_string(),
        ));
    }
    let total = grid.coeff_count();
    if keep > total {
        return Err(Error::invalid(format!(
            "cannot keep {keep} of {total} cells"
        )));
    }
    let mut order: Vec<(usize, usize)> = (0..grid.window_count())
        .flat_map(|k| (0..grid.band_count()).map(move |n| (k, n)))
        .collect();
    order.sort_unstable_by(|&(ka, na), &(kb, nb)| {
        let pa = posteriors.prob_tonal(ka, na);
        let pb = posteriors.prob_tonal(kb, nb);
        pb.total_cmp(&pa)
            .then_with(|| {
                grid.coeff(kb, nb)
                    .abs()
                    .total_cmp(&grid.coeff(ka, na).abs())
            })
            .then_with(|| (ka, na).cmp(&(kb, nb)))
    });
    let mut map = TonalMap::new(grid.window_count(), grid.band_count());
    for &(k, n) in order.iter().take(keep) {
        map.insert(k, n)?;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;
    use crate::sim;
    use crate::tonal::{em_init, state_probability};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_bin() -> TonalBin {
        TonalBin {
            stay_tonal: 0.9,
            stay_residual: 0.8,
            initial_tonal: 0.4,
            sigma_tonal: 2.0,
            sigma_residual: 0.3,
        }
    }

    #[test]
    fn single_step_posterior_is_bayes_rule() {
        let bin = test_bin();
        let y = 1.3;
        let (post, ll) = forward_backward(&[y], &bin).unwrap();
        let g = |s: f64| (-y * y / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let num = bin.initial_tonal * g(bin.sigma_tonal);
        let den = num + (1.0 - bin.initial_tonal) * g(bin.sigma_residual);
        assert!((post[0] - num / den).abs() < 1e-12);
        assert!((ll - den.ln()).abs() < 1e-12);
    }

    #[test]
    fn equal_deviations_reduce_to_prior_marginals() {
        let bin = TonalBin {
            sigma_tonal: 0.7,
            sigma_residual: 0.7,
            ..test_bin()
        };
        let row = [0.3, -0.8, 0.1, 2.0, -0.4];
        let (post, _) = forward_backward(&row, &bin).unwrap();
        for (k, &p) in post.iter().enumerate() {
            let prior =
                state_probability(k, bin.initial_tonal, bin.stay_tonal, bin.stay_residual).unwrap();
            assert!((p - prior).abs() < 1e-12, "k={k}: {p} vs {prior}");
        }
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let k_count = rng.gen_range(1..=10);
            let bin = TonalBin {
                stay_tonal: rng.gen_range(0.05..0.95),
                stay_residual: rng.gen_range(0.05..0.95),
                initial_tonal: rng.gen_range(0.05..0.95),
                sigma_tonal: rng.gen_range(1.0..4.0),
                sigma_residual: rng.gen_range(0.05..0.9),
            };
            let row: Vec<f64> = (0..k_count).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (post, ll) = forward_backward(&row, &bin).unwrap();
            let (bpost, bll) = reference::enumerate_chain_posteriors(&row, &bin);
            assert!((ll - bll).abs() < 1e-10, "loglik {ll} vs {bll}");
            for k in 0..k_count {
                assert!((post[k] - bpost[k]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn posteriors_survive_extreme_rows() {
        let bin = test_bin();
        let row = vec![65.0; 400];
        let (post, ll) = forward_backward(&row, &bin).unwrap();
        assert!(ll.is_finite());
        assert!(post.iter().all(|p| p.is_finite() && *p >= 0.0 && *p <= 1.0));
        assert!(post.iter().all(|p| *p > 0.999));
    }

    #[test]
    fn viterbi_prior_dominates_when_uninformative() {
        let bin = TonalBin {
            stay_tonal: 0.99,
            stay_residual: 0.4,
            initial_tonal: 1.0,
            sigma_tonal: 0.5,
            sigma_residual: 0.5,
        };
        let row = vec![0.1; 30];
        let path = viterbi_map(&row, &bin).unwrap();
        assert!(path.iter().all(|s| *s == BinState::Tonal));
    }

    #[test]
    fn viterbi_attains_enumerated_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k_count = rng.gen_range(1..=12);
            let bin = TonalBin {
                stay_tonal: rng.gen_range(0.1..0.95),
                stay_residual: rng.gen_range(0.1..0.95),
                initial_tonal: rng.gen_range(0.05..0.95),
                sigma_tonal: rng.gen_range(1.0..3.0),
                sigma_residual: rng.gen_range(0.05..0.8),
            };
            let row: Vec<f64> = (0..k_count).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let path = viterbi_map(&row, &bin).unwrap();
            let score = reference::chain_path_log_prob(&row, &bin, &path);
            let best = reference::enumerate_chain_map_score(&row, &bin);
            assert!(
                (score - best).abs() < 1e-9,
                "viterbi {score} vs enumerated {best}"
            );
        }
    }

    #[test]
    fn isolated_spike_is_detected() {
        let bin = TonalBin {
            stay_tonal: 0.5,
            stay_residual: 0.9,
            initial_tonal: 0.1,
            sigma_tonal: 5.0,
            sigma_residual: 0.05,
        };
        let mut row = vec![0.01; 9];
        row[4] = 4.0;
        let path = viterbi_map(&row, &bin).unwrap();
        assert_eq!(path[4], BinState::Tonal);
        let score = reference::chain_path_log_prob(&row, &bin, &path);
        let best = reference::enumerate_chain_map_score(&row, &bin);
        assert!((score - best).abs() < 1e-9);
    }

    #[test]
    fn threshold_select_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut grid = MdctGrid::zero(6, 5, 8);
        for k in 0..6 {
            for n in 0..5 {
                grid.set_coeff(k, n, rng.gen_range(-2.0..2.0));
            }
        }
        let params = TonalParams::uniform(5, 0.9, 0.8, 2.0, 0.2).unwrap();
        let posteriors = posterior_grid(&grid, &params).unwrap();

        assert!(threshold_select(&posteriors, &grid, 0).unwrap().is_empty());
        assert_eq!(threshold_select(&posteriors, &grid, 30).unwrap().len(), 30);
        assert!(threshold_select(&posteriors, &grid, 31).is_err());

        let keep = 10;
        let map = threshold_select(&posteriors, &grid, keep).unwrap();
        let mut ranked: Vec<(f64, f64, usize, usize)> = (0..6)
            .flat_map(|k| (0..5).map(move |n| (k, n)))
            .map(|(k, n)| (posteriors.prob_tonal(k, n), grid.coeff(k, n).abs(), k, n))
            .collect();
        ranked.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(b.1.total_cmp(&a.1))
                .then((a.2, a.3).cmp(&(b.2, b.3)))
        });
        for item in ranked.iter().take(keep) {
            assert!(map.contains(item.2, item.3));
        }
    }

    #[test]
    fn em_flags_zero_grid_and_keeps_init() {
        let grid = MdctGrid::zero(8, 4, 8);
        let init = TonalParams::uniform(4, 0.9, 0.9, 1.0, 0.1).unwrap();
        let out = em_estimate(&grid, &init, EmOptions::default()).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.params, init);
    }

    #[test]
    fn em_single_iteration_from_truth_is_stable() {
        let truth = TonalParams::decay(64, 0.95, 0.9984, 1.0, 0.05, 1.0, 8.0).unwrap();
        let data = sim::simulate_tonal(&truth, 200, 64, 44100, 0xEE1).unwrap();
        let out = em_estimate(
            &data.grid,
            &truth,
            EmOptions {
                tol: 0.0,
                max_iter: 1,
            },
        )
        .unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        let bin = out.params.bin(0);
        assert!(rel(bin.stay_tonal, 0.95) < 0.05, "{}", bin.stay_tonal);
        assert!(
            rel(bin.stay_residual, 0.9984) < 0.05,
            "{}",
            bin.stay_residual
        );
        assert!(rel(bin.sigma_tonal, 1.0) < 0.05, "{}", bin.sigma_tonal);
        assert!(
            rel(bin.sigma_residual, 0.05) < 0.05,
            "{}",
            bin.sigma_residual
        );
    }

    #[test]
    fn em_recovers_simulated_parameters_from_default_init() {
        let truth = TonalParams::decay(64, 0.95, 0.9984, 1.0, 0.05, 1.0, 8.0).unwrap();
        let data = sim::simulate_tonal(&truth, 200, 64, 44100, 0xEE2).unwrap();
        let model = VarianceModel::Decay {
            alpha: 1.0,
            knee: 8.0,
        };
        let init = em_init(&data.grid, model, true).unwrap();
        let out = em_estimate(
            &data.grid,
            &init,
            EmOptions {
                tol: 1e-7,
                max_iter: 60,
            },
        )
        .unwrap();
        let bin = out.params.bin(0);
        assert!((bin.stay_tonal - 0.95).abs() < 0.05, "{}", bin.stay_tonal);
        assert!(
            (bin.stay_residual - 0.9984).abs() < 0.05,
            "{}",
            bin.stay_residual
        );
        // Deviation ratios within twenty percent of truth.
        let truth_ratio = 1.0 / 0.05;
        let ratio = bin.sigma_tonal / bin.sigma_residual;
        assert!(
            (ratio - truth_ratio).abs() / truth_ratio < 0.2,
            "ratio {ratio}"
        );
        let scale_rel = (bin.sigma_tonal - 1.0).abs() / 1.0;
        assert!(scale_rel < 0.2, "sigma_tonal {}", bin.sigma_tonal);
    }

    #[test]
    fn em_likelihood_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut grid = MdctGrid::zero(64, 8, 16);
        for n in 0..8 {
            let mut tonal = rng.gen_bool(0.3);
            for k in 0..64 {
                if rng.gen_bool(0.1) {
                    tonal = !tonal;
                }
                let sigma = if tonal { 2.0 } else { 0.2 };
                let y: f64 = rng.gen_range(-1.0..1.0) * sigma * 1.7;
                grid.set_coeff(k, n, y);
            }
        }
        let init = em_init(&grid, VarianceModel::Uniform, true).unwrap();
        let out = em_estimate(
            &grid,
            &init,
            EmOptions {
                tol: 1e-9,
                max_iter: 40,
            },
        )
        .unwrap();
        assert!(!out.degenerate);
        assert!(out.log_likelihood.len() >= 2);
        for pair in out.log_likelihood.windows(2) {
            assert!(
                pair[1] >= pair[0] - 1e-10 * pair[0].abs().max(1.0),
                "log-likelihood decreased: {pair:?}"
            );
        }
    }
}
