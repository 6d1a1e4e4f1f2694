//! Independent reference implementations used by tests and the `validate`
//! suite: brute-force enumeration, matrix powers, truncated series and
//! Monte Carlo samplers. Nothing here shares code with the closed forms and
//! recursions it is used to check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tonal::{BinState, TonalBin};
use crate::transforms::WaveletTree;
use crate::transient::{TransientMap, TreeParams};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
        Self {
            mean,
            std_err: (var / n).sqrt(),
        }
    }

    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.std_err.max(1e-300)
    }
}

// ---------------------------------------------------------------------------
// Two-state chain oracles
// ---------------------------------------------------------------------------

/// Stationary tonal probability by fixed-point iteration of the transition
/// matrix transpose.
pub fn stationary_distribution(stay_tonal: f64, stay_residual: f64) -> f64 {
    let mut p = [0.5, 0.5];
    for _ in 0..20_000 {
        let next = [
            p[0] * stay_tonal + p[1] * (1.0 - stay_residual),
            p[0] * (1.0 - stay_tonal) + p[1] * stay_residual,
        ];
        p = next;
    }
    p[0]
}

/// Marginal tonal probability after `k` steps by repeated 2x2 multiplication.
pub fn chain_marginal_by_matrix_power(
    k: usize,
    initial_tonal: f64,
    stay_tonal: f64,
    stay_residual: f64,
) -> f64 {
    let mut p = [initial_tonal, 1.0 - initial_tonal];
    for _ in 0..k {
        p = [
            p[0] * stay_tonal + p[1] * (1.0 - stay_residual),
            p[0] * (1.0 - stay_tonal) + p[1] * stay_residual,
        ];
    }
    p[0]
}

/// Per-coefficient entropy of the stationary run-length description,
/// summed as a truncated series: the entropy of each geometric run-length
/// law weighted by the stationary rate of run starts of that type.
pub fn run_entropy_by_series(stay_tonal: f64, stay_residual: f64, max_len: usize) -> f64 {
    let series = |stay: f64| -> f64 {
        let mut h = 0.0;
        for len in 1..=max_len {
            let p = stay.powi(len as i32 - 1) * (1.0 - stay);
            if p > 0.0 {
                h -= p * p.log2();
            }
        }
        h
    };
    let stat_t = stationary_distribution(stay_tonal, stay_residual);
    let start_t = (1.0 - stat_t) * (1.0 - stay_residual);
    let start_r = stat_t * (1.0 - stay_tonal);
    start_t * series(stay_tonal) + start_r * series(stay_residual)
}

fn log_gauss(y: f64, sigma: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - y * y / (2.0 * sigma * sigma)
}

fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.filter(|v| v.is_finite()).collect();
    if vals.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = vals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Joint log-probability of one state path under the chain model.
pub fn chain_path_log_prob(row: &[f64], bin: &TonalBin, path: &[BinState]) -> f64 {
    let mut lp = match path[0] {
        BinState::Tonal => ln_or_neg_inf(bin.initial_tonal) + log_gauss(row[0], bin.sigma_tonal),
        BinState::Residual => {
            ln_or_neg_inf(1.0 - bin.initial_tonal) + log_gauss(row[0], bin.sigma_residual)
        }
    };
    for k in 1..row.len() {
        let trans = match (path[k - 1], path[k]) {
            (BinState::Tonal, BinState::Tonal) => bin.stay_tonal,
            (BinState::Tonal, BinState::Residual) => 1.0 - bin.stay_tonal,
            (BinState::Residual, BinState::Tonal) => 1.0 - bin.stay_residual,
            (BinState::Residual, BinState::Residual) => bin.stay_residual,
        };
        let sigma = match path[k] {
            BinState::Tonal => bin.sigma_tonal,
            BinState::Residual => bin.sigma_residual,
        };
        lp += ln_or_neg_inf(trans) + log_gauss(row[k], sigma);
    }
    lp
}

fn chain_paths(k_count: usize) -> impl Iterator<Item = Vec<BinState>> {
    (0u64..(1u64 << k_count)).map(move |mask| {
        (0..k_count)
            .map(|k| {
                if (mask >> k) & 1 == 1 {
                    BinState::Tonal
                } else {
                    BinState::Residual
                }
            })
            .collect()
    })
}

/// Exhaustive smoothing posteriors and log-likelihood (rows up to ~14 long).
pub fn enumerate_chain_posteriors(row: &[f64], bin: &TonalBin) -> (Vec<f64>, f64) {
    let k_count = row.len();
    let scored: Vec<(Vec<BinState>, f64)> = chain_paths(k_count)
        .map(|p| {
            let lp = chain_path_log_prob(row, bin, &p);
            (p, lp)
        })
        .collect();
    let total = log_sum_exp(scored.iter().map(|(_, lp)| *lp));
    let posteriors = (0..k_count)
        .map(|k| {
            let lt = log_sum_exp(
                scored
                    .iter()
                    .filter(|(p, _)| p[k] == BinState::Tonal)
                    .map(|(_, lp)| *lp),
            );
            (lt - total).exp()
        })
        .collect();
    (posteriors, total)
}

/// Best joint path log-probability by enumeration.
pub fn enumerate_chain_map_score(row: &[f64], bin: &TonalBin) -> f64 {
    chain_paths(row.len())
        .map(|p| chain_path_log_prob(row, bin, &p))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Samples one state row of the chain.
pub fn sample_chain_states(
    k_count: usize,
    initial_tonal: f64,
    stay_tonal: f64,
    stay_residual: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let mut states = Vec::with_capacity(k_count);
    let mut tonal = rng.gen_bool(initial_tonal.clamp(0.0, 1.0));
    for _ in 0..k_count {
        states.push(tonal);
        let stay = if tonal { stay_tonal } else { stay_residual };
        if !rng.gen_bool(stay.clamp(0.0, 1.0)) {
            tonal = !tonal;
        }
    }
    states
}

/// Monte Carlo mean fraction of tonal states over `k_count` windows.
pub fn mc_chain_tonal_fraction(
    k_count: usize,
    initial_tonal: f64,
    stay_tonal: f64,
    stay_residual: f64,
    draws: usize,
    seed: u64,
) -> McEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let states =
                sample_chain_states(k_count, initial_tonal, stay_tonal, stay_residual, &mut rng);
            states.iter().filter(|&&s| s).count() as f64 / k_count as f64
        })
        .collect();
    McEstimate::from_samples(&samples)
}

/// Monte Carlo per-window tonal energy for a one-bin model.
pub fn mc_chain_tonal_energy(
    k_count: usize,
    bin: &TonalBin,
    draws: usize,
    seed: u64,
) -> McEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let states = sample_chain_states(
                k_count,
                bin.initial_tonal,
                bin.stay_tonal,
                bin.stay_residual,
                &mut rng,
            );
            let energy: f64 = states
                .iter()
                .map(|&tonal| {
                    if tonal {
                        let y: f64 = rng.sample::<f64, _>(StandardNormal) * bin.sigma_tonal;
                        y * y
                    } else {
                        // Residual coefficients exist but do not count as
                        // tonal-layer energy; still draw for stream parity.
                        let _: f64 = rng.sample(StandardNormal);
                        0.0
                    }
                })
                .sum();
            energy / k_count as f64
        })
        .collect();
    McEstimate::from_samples(&samples)
}

// ---------------------------------------------------------------------------
// Tree oracles
// ---------------------------------------------------------------------------

/// Samples states of the taboo tree; returns the significance map.
pub fn sample_tree_map(params: &TreeParams, seed: u64) -> TransientMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_tree_map_with(params, &mut rng)
}

pub fn sample_tree_map_with(params: &TreeParams, rng: &mut ChaCha8Rng) -> TransientMap {
    let depth = params.depth();
    let node_count = (1usize << depth) - 1;
    let mut states = vec![false; node_count];
    states[0] = rng.gen_bool(params.root_transient.clamp(0.0, 1.0));
    for heap in 1..node_count {
        let parent = (heap - 1) / 2;
        if states[parent] {
            let (scale, _) = crate::transient::heap_to_scale(depth, heap);
            let pi = params.persistence_at(scale + 1);
            states[heap] = rng.gen_bool(pi.clamp(0.0, 1.0));
        }
    }
    let mut map = TransientMap::new(depth);
    for (heap, &s) in states.iter().enumerate() {
        if s {
            let (scale, index) = crate::transient::heap_to_scale(depth, heap);
            map.insert(scale, index).unwrap();
        }
    }
    map
}

/// Samples a full coefficient tree plus its ground-truth map.
pub fn sample_tree(params: &TreeParams, seed: u64) -> (WaveletTree, TransientMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_tree_with(params, &mut rng)
}

pub fn sample_tree_with(params: &TreeParams, rng: &mut ChaCha8Rng) -> (WaveletTree, TransientMap) {
    let depth = params.depth();
    let map = sample_tree_map_with(params, rng);
    let mut tree = WaveletTree::zero(depth);
    for j in 1..=depth {
        let st = params.sigma_transient(j);
        let sr = params.sigma_residual(j);
        for k in 0..(1usize << (depth - j)) {
            let sigma = if map.contains(j, k) { st } else { sr };
            tree.detail_mut(j)[k] = rng.sample::<f64, _>(StandardNormal) * sigma;
        }
    }
    (tree, map)
}

/// Monte Carlo total transient node count.
pub fn mc_tree_total_count(params: &TreeParams, draws: usize, seed: u64) -> McEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..draws)
        .map(|_| sample_tree_map_with(params, &mut rng).len() as f64)
        .collect();
    McEstimate::from_samples(&samples)
}

/// Monte Carlo transient node count at one scale.
pub fn mc_tree_scale_count(params: &TreeParams, scale: u32, draws: usize, seed: u64) -> McEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let map = sample_tree_map_with(params, &mut rng);
            map.iter().filter(|&(j, _)| j == scale).count() as f64
        })
        .collect();
    McEstimate::from_samples(&samples)
}

/// Monte Carlo energy of the transient layer.
pub fn mc_tree_transient_energy(params: &TreeParams, draws: usize, seed: u64) -> McEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let map = sample_tree_map_with(params, &mut rng);
            map.iter()
                .map(|(j, _)| {
                    let y: f64 = rng.sample::<f64, _>(StandardNormal) * params.sigma_transient(j);
                    y * y
                })
                .sum()
        })
        .collect();
    McEstimate::from_samples(&samples)
}

/// Joint log-probability of a full state configuration given as a map.
pub fn tree_config_log_prob(tree: &WaveletTree, params: &TreeParams, map: &TransientMap) -> f64 {
    let depth = params.depth();
    let root_t = map.contains(depth, 0);
    let mut lp = if root_t {
        ln_or_neg_inf(params.root_transient)
    } else {
        ln_or_neg_inf(1.0 - params.root_transient)
    };
    for j in 1..=depth {
        for k in 0..(1usize << (depth - j)) {
            let here = map.contains(j, k);
            if j < depth {
                let parent_t = map.contains(j + 1, k / 2);
                let pi = params.persistence_at(j + 1);
                let trans = match (parent_t, here) {
                    (true, true) => pi,
                    (true, false) => 1.0 - pi,
                    (false, true) => 0.0,
                    (false, false) => 1.0,
                };
                lp += ln_or_neg_inf(trans);
            }
            let sigma = if here {
                params.sigma_transient(j)
            } else {
                params.sigma_residual(j)
            };
            lp += log_gauss(tree.detail(j)[k], sigma);
        }
    }
    lp
}

fn all_tree_configs(depth: u32) -> impl Iterator<Item = TransientMap> {
    let node_count = (1usize << depth) - 1;
    (0u64..(1u64 << node_count)).map(move |mask| {
        let mut map = TransientMap::new(depth);
        for heap in 0..node_count {
            if (mask >> heap) & 1 == 1 {
                let (scale, index) = crate::transient::heap_to_scale(depth, heap);
                map.insert(scale, index).unwrap();
            }
        }
        map
    })
}

/// Exhaustive per-node posteriors (heap order) and log-likelihood for
/// shallow trees. Taboo-violating configurations carry zero probability and
/// drop out on their own.
pub fn enumerate_tree_posteriors(tree: &WaveletTree, params: &TreeParams) -> (Vec<f64>, f64) {
    let depth = params.depth();
    let node_count = (1usize << depth) - 1;
    let scored: Vec<(TransientMap, f64)> = all_tree_configs(depth)
        .map(|m| {
            let lp = tree_config_log_prob(tree, params, &m);
            (m, lp)
        })
        .collect();
    let total = log_sum_exp(scored.iter().map(|(_, lp)| *lp));
    let posteriors = (0..node_count)
        .map(|heap| {
            let (scale, index) = crate::transient::heap_to_scale(depth, heap);
            let lt = log_sum_exp(
                scored
                    .iter()
                    .filter(|(m, _)| m.contains(scale, index))
                    .map(|(_, lp)| *lp),
            );
            (lt - total).exp()
        })
        .collect();
    (posteriors, total)
}

/// Best joint configuration score by enumeration.
pub fn enumerate_tree_map_score(tree: &WaveletTree, params: &TreeParams) -> f64 {
    all_tree_configs(params.depth())
        .map(|m| tree_config_log_prob(tree, params, &m))
        .fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// Allocation search
// ---------------------------------------------------------------------------

/// Branch-and-bound search over the rate grid `{0, step, 2 step, ...}` for
/// a feasible allocation with distortion strictly below `threshold`.
/// Returns the best such distortion, or `None` when no grid point beats the
/// threshold. The bound used for pruning is exact (each source's distortion
/// at the largest rate the remaining budget allows), so `None` certifies
/// the whole grid.
pub fn grid_search_allocation_below(
    weights: &[f64],
    sigmas: &[f64],
    budget: f64,
    step: f64,
    threshold: f64,
) -> Option<f64> {
    let dims: Vec<(f64, f64)> = weights
        .iter()
        .zip(sigmas)
        .map(|(&w, &s)| (w, s))
        .filter(|&(w, s)| w > 0.0 && s > 0.0)
        .collect();
    if dims.is_empty() {
        return None;
    }
    let mut best = threshold;
    let mut found = None;
    fn recurse(
        dims: &[(f64, f64)],
        i: usize,
        spend: f64,
        partial: f64,
        budget: f64,
        step: f64,
        best: &mut f64,
        found: &mut Option<f64>,
    ) {
        let (w, s) = dims[i];
        let var = s * s;
        let remaining = budget - spend;
        if remaining < -1e-9 {
            return;
        }
        let max_rate = (remaining / w).min(24.0);
        if i == dims.len() - 1 {
            let r = (max_rate / step).floor().max(0.0) * step;
            let d = partial + w * var * (-2.0 * r).exp2();
            if d < *best {
                *best = d;
                *found = Some(d);
            }
            return;
        }
        // Optimistic tail independent of this source's rate: every remaining
        // source gets the whole remaining budget to itself. Monotone in r,
        // so once it prunes, all smaller rates prune too.
        let tail_opt: f64 = dims[i + 1..]
            .iter()
            .map(|&(wj, sj)| {
                let rj = (remaining / wj).min(24.0).max(0.0);
                wj * sj * sj * (-2.0 * rj).exp2()
            })
            .sum();
        let steps = (max_rate / step).floor().max(0.0) as usize;
        for stepidx in (0..=steps).rev() {
            let r = stepidx as f64 * step;
            let here = partial + w * var * (-2.0 * r).exp2();
            if here + tail_opt >= *best {
                break;
            }
            // Tighter per-rate bound accounting for the budget actually spent.
            let mut bound = here;
            for &(wj, sj) in &dims[i + 1..] {
                let rj = ((remaining - w * r) / wj).min(24.0).max(0.0);
                bound += wj * sj * sj * (-2.0 * rj).exp2();
            }
            if bound >= *best {
                continue;
            }
            recurse(dims, i + 1, spend + w * r, here, budget, step, best, found);
        }
    }
    recurse(&dims, 0, 0.0, 0.0, budget, step, &mut best, &mut found);
    found
}

// ---------------------------------------------------------------------------
// Scalar Gaussian draws
// ---------------------------------------------------------------------------

/// Monte Carlo mean of `log2(c^2)` for `c ~ N(0, sigma^2)`.
pub fn mc_log2_square_gaussian(sigma: f64, draws: usize, seed: u64) -> McEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let c: f64 = rng.sample::<f64, _>(StandardNormal) * sigma;
            (c * c).max(1e-300).log2()
        })
        .collect();
    McEstimate::from_samples(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_matches_closed_form_on_a_known_case() {
        let p = stationary_distribution(0.9, 0.9);
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chain_sampler_fraction_tracks_marginals() {
        let est = mc_chain_tonal_fraction(10, 0.2, 0.9, 0.85, 40_000, 1);
        let direct: f64 = (0..10)
            .map(|k| chain_marginal_by_matrix_power(k, 0.2, 0.9, 0.85))
            .sum::<f64>()
            / 10.0;
        assert!(est.within(direct, 4.0), "{} vs {direct}", est.mean);
    }

    #[test]
    fn tree_sampler_respects_taboo() {
        let params = TreeParams::uniform(5, 0.7, 0.6, 1.0, 0.1).unwrap();
        for seed in 0..50 {
            let map = sample_tree_map(&params, seed);
            assert!(map.is_upward_closed());
        }
    }

    #[test]
    fn grid_search_cannot_beat_the_waterfill_optimum() {
        let weights = [0.4, 0.3, 0.2, 0.1];
        let sigmas = [1.0, 2.0, 0.7, 1.4];
        let budget = 4.0;
        let rates = crate::alloc::reverse_waterfill(&weights, &sigmas, budget).unwrap();
        let optimum = crate::alloc::expected_distortion(&weights, &sigmas, &rates);
        let beat = grid_search_allocation_below(&weights, &sigmas, budget, 0.01, optimum * 0.995);
        assert!(beat.is_none(), "grid found {beat:?} below {optimum}");
    }

    #[test]
    fn grid_search_finds_improvements_over_bad_allocations() {
        let weights = [0.5, 0.5];
        let sigmas = [1.0, 1.0];
        // A deliberately bad reference point: everything on one source.
        let bad = 0.5 * 1.0 * (-0.0f64).exp2() + 0.5 * (-2.0f64 * 4.0).exp2();
        let found = grid_search_allocation_below(&weights, &sigmas, 2.0, 0.1, bad * 0.995);
        assert!(found.is_some());
        assert!(found.unwrap() < bad * 0.7);
    }
}
