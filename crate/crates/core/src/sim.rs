//! Seeded samplers for the generative models, producing signals together
//! with their ground-truth significance maps for estimator validation.
//!
//! All draws come from ChaCha8 streams keyed by the caller's seed, so
//! fixtures are identical across platforms and runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::balance::BalanceAnalyzer;
use crate::error::{Error, Result};
use crate::signal::Signal;
use crate::tonal::{TonalMap, TonalParams};
use crate::transforms::{dwt_inverse, Mdct, MdctGrid, Wavelet, WaveletTree};
use crate::transient::{TransientMap, TreeParams};

/// A sampled realization of the tonal chain model.
#[derive(Debug, Clone)]
pub struct TonalSim {
    pub signal: Signal,
    pub map: TonalMap,
    /// The full coefficient grid (both states emit).
    pub grid: MdctGrid,
}

impl TonalSim {
    /// Waveform of the tonal layer alone (map-masked coefficients).
    pub fn tonal_layer(&self) -> Result<Signal> {
        let mut masked = MdctGrid::zero(
            self.grid.window_count(),
            self.grid.band_count(),
            self.grid.window_len(),
        );
        for (k, n) in self.map.iter() {
            masked.set_coeff(k, n, self.grid.coeff(k, n));
        }
        let mdct = Mdct::new(self.grid.window_len())?;
        Signal::new(mdct.inverse(&masked)?, self.signal.sample_rate)
    }
}

/// Samples per-bin chains and coefficients, then synthesizes the waveform.
pub fn simulate_tonal(
    params: &TonalParams,
    window_count: usize,
    window_len: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<TonalSim> {
    if window_count < 2 {
        return Err(Error::invalid("need at least two windows"));
    }
    if params.band_count() > window_len {
        return Err(Error::invalid(format!(
            "band count {} exceeds window length {window_len}",
            params.band_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = MdctGrid::zero(window_count, params.band_count(), window_len);
    let mut map = TonalMap::new(window_count, params.band_count());
    for n in 0..params.band_count() {
        let bin = params.bin(n);
        let states = crate::reference::sample_chain_states(
            window_count,
            bin.initial_tonal,
            bin.stay_tonal,
            bin.stay_residual,
            &mut rng,
        );
        for (k, &tonal) in states.iter().enumerate() {
            let sigma = if tonal {
                bin.sigma_tonal
            } else {
                bin.sigma_residual
            };
            grid.set_coeff(k, n, rng.sample::<f64, _>(StandardNormal) * sigma);
            if tonal {
                map.insert(k, n)?;
            }
        }
    }
    let mdct = Mdct::new(window_len)?;
    let samples = mdct.inverse(&grid)?;
    Ok(TonalSim {
        signal: Signal::new(samples, sample_rate)?,
        map,
        grid,
    })
}

/// A sampled realization of the transient tree model over several frames.
#[derive(Debug, Clone)]
pub struct TransientSim {
    pub signal: Signal,
    pub maps: Vec<TransientMap>,
    pub trees: Vec<WaveletTree>,
}

impl TransientSim {
    /// Waveform of the transient layer alone (map-masked detail nodes).
    pub fn transient_layer(&self, wavelet_moments: usize) -> Result<Signal> {
        let wavelet = Wavelet::daubechies(wavelet_moments)?;
        let mut samples = Vec::with_capacity(self.signal.len());
        for (tree, map) in self.trees.iter().zip(&self.maps) {
            let mut masked = WaveletTree::zero(tree.depth());
            for (scale, index) in map.iter() {
                masked.detail_mut(scale)[index] = tree.detail(scale)[index];
            }
            samples.extend(dwt_inverse(&masked, &wavelet));
        }
        Signal::new(samples, self.signal.sample_rate)
    }
}

/// Samples taboo trees frame by frame and synthesizes the waveform.
pub fn simulate_transient(
    params: &TreeParams,
    frame_count: usize,
    wavelet_moments: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<TransientSim> {
    if frame_count == 0 {
        return Err(Error::invalid("need at least one frame"));
    }
    let wavelet = Wavelet::daubechies(wavelet_moments)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(frame_count << params.depth());
    let mut maps = Vec::with_capacity(frame_count);
    let mut trees = Vec::with_capacity(frame_count);
    for _ in 0..frame_count {
        let (tree, map) = crate::reference::sample_tree_with(params, &mut rng);
        samples.extend(dwt_inverse(&tree, &wavelet));
        maps.push(map);
        trees.push(tree);
    }
    Ok(TransientSim {
        signal: Signal::new(samples, sample_rate)?,
        maps,
        trees,
    })
}

/// A sampled frame of the two-basis mixture with uniformly random maps.
#[derive(Debug, Clone)]
pub struct HybridSim {
    pub frame: Vec<f64>,
    /// Flattened wavelet indices carrying `N(0, sigma_wavelet^2)` weights.
    pub wavelet_map: Vec<usize>,
    /// Flattened MDCT indices carrying `N(0, sigma_mdct^2)` weights.
    pub mdct_map: Vec<usize>,
}

/// Draws `count` distinct indices from `0..dim` (partial Fisher-Yates).
fn sample_subset(dim: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..dim).collect();
    for i in 0..count {
        let j = rng.gen_range(i..dim);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool.sort_unstable();
    pool
}

/// Samples the mixture `sum alpha psi + sum beta w` on one analysis frame
/// with independent Gaussian coefficients on uniformly random maps.
pub fn simulate_hybrid(
    analyzer: &BalanceAnalyzer,
    sigma_wavelet: f64,
    sigma_mdct: f64,
    wavelet_map_size: usize,
    mdct_map_size: usize,
    seed: u64,
) -> Result<HybridSim> {
    let dim = analyzer.frame_len();
    if wavelet_map_size > dim || mdct_map_size > dim {
        return Err(Error::invalid(format!(
            "map sizes ({wavelet_map_size}, {mdct_map_size}) exceed the frame dimension {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wavelet_map = sample_subset(dim, wavelet_map_size, &mut rng);
    let mdct_map = sample_subset(dim, mdct_map_size, &mut rng);
    let wavelet_entries: Vec<(usize, f64)> = wavelet_map
        .iter()
        .map(|&i| (i, rng.sample::<f64, _>(StandardNormal) * sigma_wavelet))
        .collect();
    let mdct_entries: Vec<(usize, f64)> = mdct_map
        .iter()
        .map(|&i| (i, rng.sample::<f64, _>(StandardNormal) * sigma_mdct))
        .collect();
    let mut frame = analyzer.wavelet_synthesize(&wavelet_entries)?;
    for (a, b) in frame
        .iter_mut()
        .zip(analyzer.mdct_synthesize(&mdct_entries)?)
    {
        *a += b;
    }
    Ok(HybridSim {
        frame,
        wavelet_map,
        mdct_map,
    })
}

/// Ground-truth sidecar written next to simulated waveforms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSidecar {
    pub model: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tonal_params: Option<TonalParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tonal_map: Option<TonalMap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree_params: Option<TreeParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transient_maps: Option<Vec<TransientMap>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wavelet_map: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mdct_map: Option<Vec<usize>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::McEstimate;
    use crate::tonal::{expected_tonal_fraction, TonalBin, VarianceModel};

    #[test]
    fn tonal_sampler_is_deterministic_and_respects_degenerate_params() {
        let params = TonalParams::uniform(8, 0.9, 0.95, 2.0, 0.1).unwrap();
        let a = simulate_tonal(&params, 16, 32, 8000, 42).unwrap();
        let b = simulate_tonal(&params, 16, 32, 8000, 42).unwrap();
        assert_eq!(a.signal.samples, b.signal.samples);
        assert_eq!(a.map, b.map);

        // Absorbing residual state with an empty start: no tonal cells.
        let bin = TonalBin {
            stay_tonal: 0.5,
            stay_residual: 1.0,
            initial_tonal: 0.0,
            sigma_tonal: 1.0,
            sigma_residual: 0.3,
        };
        let params = TonalParams::from_bins(vec![bin; 4], VarianceModel::PerBin, true).unwrap();
        let sim = simulate_tonal(&params, 8, 16, 8000, 1).unwrap();
        assert!(sim.map.is_empty());
    }

    #[test]
    fn tonal_sampler_fraction_matches_formula() {
        let params = TonalParams::uniform(4, 0.95, 0.9, 2.0, 0.1).unwrap();
        let bin = params.bin(0);
        let expect = expected_tonal_fraction(24, bin.initial_tonal, 0.95, 0.9).unwrap();
        let fractions: Vec<f64> = (0..4000)
            .map(|seed| {
                let sim = simulate_tonal(&params, 24, 8, 8000, seed).unwrap();
                sim.map.len() as f64 / (24.0 * 4.0)
            })
            .collect();
        let est = McEstimate::from_samples(&fractions);
        assert!(
            est.within(expect, 4.0),
            "{} vs {expect} (se {})",
            est.mean,
            est.std_err
        );
    }

    #[test]
    fn tonal_sampler_hits_the_sparse_operating_point() {
        // Persistence pair with a stationary tonal share near 3.1%.
        let stay_t = 0.95;
        let stay_r = 1.0 - (1.0 - stay_t) * 0.031 / 0.969;
        let params = TonalParams::uniform(16, stay_t, stay_r, 1.0, 0.05).unwrap();
        let expect =
            expected_tonal_fraction(64, params.bin(0).initial_tonal, stay_t, stay_r).unwrap();
        assert!((expect - 0.031).abs() < 2e-3);
        let fractions: Vec<f64> = (0..2000)
            .map(|seed| {
                let sim = simulate_tonal(&params, 64, 16, 8000, 7000 + seed).unwrap();
                sim.map.len() as f64 / (64.0 * 16.0)
            })
            .collect();
        let est = McEstimate::from_samples(&fractions);
        assert!(
            est.within(expect, 4.0),
            "{} vs {expect} (se {})",
            est.mean,
            est.std_err
        );
    }

    #[test]
    fn transient_sampler_edge_cases() {
        let never = TreeParams::uniform(5, 0.0, 0.9, 1.0, 0.1).unwrap();
        let sim = simulate_transient(&never, 3, 8, 8000, 7).unwrap();
        assert!(sim.maps.iter().all(|m| m.is_empty()));
        assert_eq!(sim.signal.len(), 3 * 32);

        let full = TreeParams::uniform(5, 1.0, 1.0, 1.0, 0.1).unwrap();
        let sim = simulate_transient(&full, 2, 8, 8000, 7).unwrap();
        assert!(sim.maps.iter().all(|m| m.len() == 31));
    }

    #[test]
    fn hybrid_sampler_sizes_and_determinism() {
        let analyzer = BalanceAnalyzer::new(8, 8).unwrap();
        let a = simulate_hybrid(&analyzer, 1.0, 1.0, 12, 40, 9).unwrap();
        let b = simulate_hybrid(&analyzer, 1.0, 1.0, 12, 40, 9).unwrap();
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.wavelet_map.len(), 12);
        assert_eq!(a.mdct_map.len(), 40);

        let empty = simulate_hybrid(&analyzer, 1.0, 1.0, 0, 0, 3).unwrap();
        assert!(empty.frame.iter().all(|&s| s == 0.0));
        assert!(simulate_hybrid(&analyzer, 1.0, 1.0, 300, 0, 3).is_err());
    }
}
