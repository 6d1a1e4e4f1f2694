//! End-to-end coder: balance pre-estimation, recursive tonal and transient
//! layer estimation/subtraction, LPC residual modeling, quantization and
//! bit-exact stream assembly.

pub mod bitstream;
pub mod lpc;
pub mod quant;
pub mod rle;

pub use quant::{dequantize_uniform, quantize_uniform, rd_gaussian, QuantizerKind};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::balance::{split_budget, BalanceAnalyzer};
use crate::bitio::{BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::parallel;
use crate::signal::Signal;
use crate::tonal::{
    self, em_estimate, em_init, posterior_grid, run_length_entropy, threshold_select, EmOptions,
    TonalMap, TonalParams, VarianceModel,
};
use crate::transforms::{dwt_forward, dwt_inverse, Mdct, MdctGrid, Wavelet, WaveletTree};
use crate::transient::{
    allocate_bits_transient, decode_tree_map_from, em_estimate_tree, encode_tree_map_into,
    threshold_select_tree, upward_downward, TransientMap, TreeEmOptions, TreeParams,
};

use bitstream::{
    write_section, ByteCursor, ParamsSection, StreamHeader, TonalSideInfo, TreeSideInfo, HEADER_LEN,
};

/// Coder configuration; defaults mirror the documented design choices.
#[derive(Debug, Clone)]
pub struct CodecConfig {
    pub rate_kbps: f64,
    /// MDCT hop and frame length in samples.
    pub frame_len: usize,
    /// Wavelet frame holds `2^depth` samples.
    pub depth: u32,
    /// Tonal model frequency cutoff; 0 means the full band set.
    pub band_count: usize,
    pub superframe_windows: usize,
    /// Consecutive wavelet frames sharing one tree parameter set.
    pub tree_group: usize,
    /// Frequency-decay exponent of the tonal deviations.
    pub alpha: f64,
    /// Decay knee in bins; 0 selects `band_count / 8`.
    pub knee: f64,
    /// Decaying (true) or flat (false) tonal deviation profile.
    pub decay: bool,
    pub quantizer: QuantizerKind,
    pub em: EmOptions,
    pub tree_em: TreeEmOptions,
    pub lpc_order: usize,
    /// Target bits per retained coefficient before allocation shaping.
    pub nominal_coeff_bits: f64,
    /// Minimum share of the budget each layer keeps.
    pub budget_floor: f64,
    pub excitation_seed: u32,
    pub wavelet_moments: usize,
    /// Rank coefficient-magnitude tie-breaks by `|y| (1 + n/knee)`,
    /// compensating the spectral decay when selecting tonal cells.
    pub weight_mdct_selection: bool,
    /// The tonal stage abstains when the fitted tonal persistence falls
    /// below this; anti-persistent fits describe vertical (transient)
    /// structure, not ridges.
    pub min_tonal_persistence: f64,
    /// Tonal retention cap as a multiple of the fitted model's expected
    /// occupation; scattered over-retention makes run-length maps costly.
    pub keep_headroom: f64,
    /// Per-coefficient spend cap in bits; budget beyond this is better
    /// spent on the later layers.
    pub max_useful_coeff_bits: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            rate_kbps: 64.0,
            frame_len: 1024,
            depth: 10,
            band_count: 0,
            superframe_windows: 32,
            tree_group: 16,
            alpha: 1.0,
            knee: 0.0,
            decay: true,
            quantizer: QuantizerKind::Uniform,
            em: EmOptions::default(),
            tree_em: TreeEmOptions::default(),
            lpc_order: 10,
            nominal_coeff_bits: 8.0,
            budget_floor: 0.05,
            excitation_seed: 0x484D5756,
            wavelet_moments: 8,
            weight_mdct_selection: false,
            min_tonal_persistence: 0.65,
            keep_headroom: 1.25,
            max_useful_coeff_bits: 14.0,
        }
    }
}

impl CodecConfig {
    pub fn bands(&self) -> usize {
        if self.band_count == 0 {
            self.frame_len
        } else {
            self.band_count
        }
    }

    pub fn knee_bins(&self) -> f64 {
        if self.knee > 0.0 {
            self.knee
        } else {
            (self.bands() as f64 / 8.0).max(1.0)
        }
    }

    pub fn variance_model(&self) -> VarianceModel {
        if self.decay {
            VarianceModel::Decay {
                alpha: self.alpha,
                knee: self.knee_bins(),
            }
        } else {
            VarianceModel::Uniform
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.frame_len % 2 != 0 || self.frame_len > 16384 {
            return Err(Error::invalid(format!(
                "frame length {} must be even and at most 16384",
                self.frame_len
            )));
        }
        if self.depth == 0 || self.depth > 14 {
            return Err(Error::invalid(format!(
                "depth {} outside 1..=14",
                self.depth
            )));
        }
        if self.frame_len % (1usize << self.depth) != 0 {
            return Err(Error::invalid(format!(
                "frame length {} must be a multiple of the wavelet frame {}",
                self.frame_len,
                1usize << self.depth
            )));
        }
        if self.bands() > self.frame_len {
            return Err(Error::invalid(format!(
                "band count {} exceeds frame length {}",
                self.bands(),
                self.frame_len
            )));
        }
        if self.superframe_windows == 0 || self.superframe_windows > 255 {
            return Err(Error::invalid(
                "superframe windows outside 1..=255".to_string(),
            ));
        }
        if self.tree_group == 0 {
            return Err(Error::invalid("tree group must be positive".to_string()));
        }
        if !(self.rate_kbps > 0.0) {
            return Err(Error::invalid("rate must be positive".to_string()));
        }
        if self.lpc_order == 0 || self.lpc_order > 32 {
            return Err(Error::invalid("lpc order outside 1..=32".to_string()));
        }
        if !(0.0..0.5).contains(&self.budget_floor) {
            return Err(Error::invalid("budget floor outside [0, 0.5)".to_string()));
        }
        if !(0.0..1.0).contains(&self.min_tonal_persistence) {
            return Err(Error::invalid(
                "minimum tonal persistence outside [0, 1)".to_string(),
            ));
        }
        if !(self.keep_headroom > 0.0) {
            return Err(Error::invalid("keep headroom must be positive".to_string()));
        }
        if !(self.max_useful_coeff_bits >= 2.0) {
            return Err(Error::invalid(
                "per-coefficient spend cap must be at least 2 bits".to_string(),
            ));
        }
        Ok(())
    }
}

/// Unquantized layer split produced on the analysis side.
#[derive(Debug, Clone)]
pub struct LayerDecomposition {
    pub tonal: Signal,
    pub transient: Signal,
    pub residual: Signal,
    pub tonal_map: TonalMap,
    pub transient_maps: Vec<TransientMap>,
}

/// Decoded signal with its reconstructed layers.
#[derive(Debug, Clone)]
pub struct DecodedLayers {
    pub output: Signal,
    pub tonal: Signal,
    pub transient: Signal,
    pub residual: Signal,
    pub tonal_map: TonalMap,
    pub transient_maps: Vec<TransientMap>,
}

// ---------------------------------------------------------------------------
// Shared rate integerization
// ---------------------------------------------------------------------------

fn integer_rate(real: f64, theta: f64) -> u8 {
    // Real rates above the cap carry no extra information and must stay
    // inside the theta shift range, so clamp before shifting.
    let real = real.min(quant::MAX_COEFF_BITS as f64);
    ((real + theta).floor().max(0.0) as i64).clamp(0, quant::MAX_COEFF_BITS as i64) as u8
}

fn rate_spend(real_rates: &[f64], counts: &[u64], theta: f64) -> u64 {
    real_rates
        .iter()
        .zip(counts)
        .map(|(&r, &c)| c * integer_rate(r, theta) as u64)
        .sum()
}

/// Largest 16-bit theta whose integerized spend stays within the budget.
fn fit_theta(real_rates: &[f64], counts: &[u64], budget: u64) -> u16 {
    let (mut lo, mut hi) = (0u32, 65535u32);
    if rate_spend(real_rates, counts, bitstream::code_to_theta(0)) > budget {
        return 0;
    }
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if rate_spend(real_rates, counts, bitstream::code_to_theta(mid as u16)) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo as u16
}

fn subgrid(grid: &MdctGrid, k0: usize, k1: usize) -> MdctGrid {
    let mut out = MdctGrid::zero(k1 - k0, grid.band_count(), grid.window_len());
    for n in 0..grid.band_count() {
        for k in k0..k1 {
            out.set_coeff(k - k0, n, grid.coeff(k, n));
        }
    }
    out
}

fn fallback_tonal_params(config: &CodecConfig) -> TonalParams {
    match config.variance_model() {
        VarianceModel::Decay { alpha, knee } => {
            TonalParams::decay(config.bands(), 0.9, 0.9, 8e-6, 1e-6, alpha, knee)
        }
        _ => TonalParams::uniform(config.bands(), 0.9, 0.9, 8e-6, 1e-6),
    }
    .expect("fallback parameters are valid")
}

fn fallback_tree_params(depth: u32) -> TreeParams {
    TreeParams::uniform(depth, 0.5, 0.5, 8e-6, 1e-6).expect("fallback parameters are valid")
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

struct SfPlan {
    k0: usize,
    k1: usize,
    /// Wavelet frame range.
    f0: usize,
    f1: usize,
    budget_bits: u64,
}

struct TonalStage {
    side: TonalSideInfo,
    map: TonalMap,
    map_payload: Vec<u8>,
    coeff_payload: Vec<u8>,
    transient_budget: u64,
}

struct TransientStage {
    sides: Vec<TreeSideInfo>,
    maps: Vec<TransientMap>,
    maps_payload: Vec<u8>,
    coeff_payload: Vec<u8>,
}

fn plan_superframes(
    config: &CodecConfig,
    k_total: usize,
    frames_total: usize,
    payload_budget: u64,
) -> Vec<SfPlan> {
    let frames_per_window = config.frame_len >> config.depth;
    let sf_count = k_total.div_ceil(config.superframe_windows);
    (0..sf_count)
        .map(|i| {
            let k0 = i * config.superframe_windows;
            let k1 = ((i + 1) * config.superframe_windows).min(k_total);
            let f0 = k0 * frames_per_window;
            let f1 = (k1 * frames_per_window).min(frames_total);
            let budget_bits =
                (payload_budget as f64 * (k1 - k0) as f64 / k_total as f64).floor() as u64;
            SfPlan {
                k0,
                k1,
                f0,
                f1,
                budget_bits,
            }
        })
        .collect()
}

fn encode_tonal_stage(
    config: &CodecConfig,
    plan: &SfPlan,
    grid: &MdctGrid,
    padded: &Signal,
    analyzer: &BalanceAnalyzer,
) -> Result<TonalStage> {
    let sub = subgrid(grid, plan.k0, plan.k1);
    let k_sf = plan.k1 - plan.k0;
    let bands = config.bands();
    let cells = k_sf * bands;

    // Model estimation with the active constraint set, then reduction to
    // the quantized side information used by both codec ends.
    let silent = sub.as_slice().iter().all(|&c| c == 0.0);
    let raw_params = if silent {
        fallback_tonal_params(config)
    } else {
        let init = em_init(&sub, config.variance_model(), true)?;
        em_estimate(&sub, &init, config.em)?.params
    };

    // Fixed per-superframe costs.
    let groups = (plan.f1 - plan.f0).div_ceil(config.tree_group).max(1);
    let params_bits = 8 * ParamsSection::wire_len(config.depth as usize, groups) as u64;
    let lpc_bits = (k_sf * (config.lpc_order * 10 + 16)) as u64;
    let prefixes = 6 * 32u64;
    let avail = plan
        .budget_bits
        .saturating_sub(params_bits + lpc_bits + prefixes);

    // Balance pre-estimation over the superframe's span. Frames vote with
    // their energy: quiet frames carry no bits, so they should not drag the
    // split toward the middle.
    let span = &padded.samples[plan.k0 * config.frame_len..plan.k1 * config.frame_len];
    let mut index_sum = 0.0;
    let mut weight_sum = 0.0;
    let flen = analyzer.frame_len();
    for chunk in span.chunks_exact(flen) {
        if let Ok(report) = analyzer.analyze_frame(chunk) {
            let energy: f64 = chunk.iter().map(|s| s * s).sum();
            index_sum += energy * report.index_tonal;
            weight_sum += energy;
        }
    }
    let index_tonal = if weight_sum > 0.0 {
        index_sum / weight_sum
    } else {
        0.5
    };
    let (tonal_budget, _) = split_budget(avail, index_tonal, config.budget_floor);

    // Provisional side info (rate fields are refined below).
    let mut side = TonalSideInfo::from_params(&raw_params, 0.0, 0.0);
    side.band_count = bands as u16;
    let coded_params = side.to_params()?;

    // Retained-cell count from the budget and the model's own map-cost
    // estimate (entropy rate per cell amortized per expected tonal cell).
    let bin0 = coded_params.bin(0);
    let entropy = run_length_entropy(bin0.stay_tonal, bin0.stay_residual);
    let mean_per_window = coded_params.mean_tonal_per_window()?.max(1e-6);
    let map_amortized = bands as f64 * entropy / mean_per_window;
    // A fit without time persistence on transient-leaning content
    // describes vertical structure; leave those coefficients to the
    // transient stage. On tonal-leaning content a compromise fit still
    // captures the ridges, so only the combination abstains.
    let plausible =
        coded_params.bin(0).stay_tonal >= config.min_tonal_persistence || index_tonal >= 0.3;
    let keep = if silent || !plausible {
        0
    } else {
        let by_budget =
            ((tonal_budget as f64) / (config.nominal_coeff_bits + map_amortized)).floor();
        let by_model = (config.keep_headroom * k_sf as f64 * mean_per_window).ceil();
        (by_budget.min(by_model) as usize).min(cells)
    };

    let map = if keep == 0 {
        TonalMap::new(k_sf, bands)
    } else {
        let posteriors = posterior_grid(&sub, &coded_params)?;
        threshold_select_weighted(&posteriors, &sub, keep, config)?
    };

    // Significance map: one run-length stream over the bin-major cell scan.
    let mut writer = BitWriter::new();
    let rows = map.bin_rows();
    let states: Vec<bool> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    rle::encode_runlengths_into(&states, bin0.stay_tonal, bin0.stay_residual, &mut writer)?;
    let map_bits = writer.bit_len();
    let map_payload = writer.into_bytes();

    // Coefficient budget and integer rates; spend beyond the useful
    // per-coefficient cap flows to the transient layer instead.
    let coeff_budget = tonal_budget
        .saturating_sub(map_bits)
        .min((map.len() as f64 * config.max_useful_coeff_bits) as u64);
    let mean_rate = coeff_budget as f64 / cells as f64;
    side.mean_rate_q = bitstream::rate_to_code(mean_rate);
    let coded_rate = bitstream::code_to_rate(side.mean_rate_q);
    let mut coeff_payload = Vec::new();
    let mut coeff_bits = 0u64;
    if coded_rate > 0.0 && !map.is_empty() {
        let rates = tonal::allocate_bits_tonal(&coded_params, coded_rate)?.rates;
        let mut counts = vec![0u64; bands];
        for (_, n) in map.iter() {
            counts[n] += 1;
        }
        side.theta_q = fit_theta(&rates, &counts, coeff_budget);
        let theta = bitstream::code_to_theta(side.theta_q);
        let mut writer = BitWriter::new();
        for (k, n) in map.iter() {
            let bits = integer_rate(rates[n], theta);
            if bits > 0 {
                let code = config.quantizer.quantize(
                    sub.coeff(k, n),
                    coded_params.bin(n).sigma_tonal,
                    bits,
                )?;
                writer.push_bits(code as u64, bits);
            }
        }
        coeff_bits = writer.bit_len();
        coeff_payload = writer.into_bytes();
    }

    // Whatever the tonal stage did not spend flows to the transient layer.
    let transient_budget = avail.saturating_sub(map_bits + coeff_bits);
    Ok(TonalStage {
        side,
        map,
        map_payload,
        coeff_payload,
        transient_budget,
    })
}

/// Posterior thresholding with the optional frequency-weighted magnitude
/// tie-break.
fn threshold_select_weighted(
    posteriors: &tonal::TonalPosteriors,
    grid: &MdctGrid,
    keep: usize,
    config: &CodecConfig,
) -> Result<TonalMap> {
    if !config.weight_mdct_selection {
        return threshold_select(posteriors, grid, keep);
    }
    let knee = config.knee_bins();
    let mut weighted = MdctGrid::zero(grid.window_count(), grid.band_count(), grid.window_len());
    for k in 0..grid.window_count() {
        for n in 0..grid.band_count() {
            weighted.set_coeff(k, n, grid.coeff(k, n) * (1.0 + n as f64 / knee));
        }
    }
    threshold_select(posteriors, &weighted, keep)
}

fn encode_transient_stage(
    config: &CodecConfig,
    plan: &SfPlan,
    trees: &[WaveletTree],
    transient_budget: u64,
) -> Result<TransientStage> {
    let depth = config.depth;
    let nodes = (1usize << depth) - 1;
    let frame_count = plan.f1 - plan.f0;
    if frame_count == 0 {
        return Ok(TransientStage {
            sides: Vec::new(),
            maps: Vec::new(),
            maps_payload: Vec::new(),
            coeff_payload: Vec::new(),
        });
    }
    let sf_trees = &trees[plan.f0..plan.f1];
    // Equalized grouping; the decoder reconstructs the same split from the
    // group count alone.
    let group_count = frame_count.div_ceil(config.tree_group);
    let group_size = frame_count.div_ceil(group_count);

    // Raw overhead per frame: the scaling flag and coefficient plus the
    // map's root bit.
    let frame_overhead = 34u64;
    let per_frame_budget = (transient_budget / frame_count as u64).saturating_sub(frame_overhead);
    // Rates are refitted to the actual budget afterwards, so the count
    // heuristic prices nodes cheaply and retains generously.
    let keep_per_frame = ((per_frame_budget as f64 / (0.5 * config.nominal_coeff_bits + 2.0))
        .floor() as usize)
        .min(nodes);

    let mut sides = Vec::with_capacity(group_count);
    let mut maps: Vec<TransientMap> = Vec::with_capacity(frame_count);
    let mut map_writer = BitWriter::new();
    let mut groups_meta = Vec::with_capacity(group_count);
    for g in 0..group_count {
        let g0 = g * group_size;
        let g1 = ((g + 1) * group_size).min(frame_count);
        let group = &sf_trees[g0..g1];
        let silent = group.iter().all(|t| t.max_abs_detail() == 0.0);
        let raw_params = if silent {
            fallback_tree_params(depth)
        } else {
            let init = tree_em_init(group, depth);
            em_estimate_tree(group, &init, config.tree_em)?.params
        };
        let side = TreeSideInfo::from_params(&raw_params, 0.0, 0.0);
        let coded = side.to_params()?;
        let keep = if silent { 0 } else { keep_per_frame };
        let mut group_counts = vec![0u64; depth as usize];
        for tree in group {
            let map = if keep == 0 {
                TransientMap::new(depth)
            } else {
                let posteriors = upward_downward(tree, &coded)?;
                threshold_select_tree(&posteriors, keep)?
            };
            encode_tree_map_into(&map, &mut map_writer)?;
            for (scale, _) in map.iter() {
                group_counts[(scale - 1) as usize] += 1;
            }
            maps.push(map);
        }
        groups_meta.push((g0, g1, coded, group_counts, side.clone()));
        sides.push(side);
    }
    let map_bits = map_writer.bit_len();
    let maps_payload = map_writer.into_bytes();

    // Remaining transient bits go to coefficients, split evenly per frame
    // and fitted per group.
    let scaling_bits: u64 = sf_trees
        .iter()
        .map(|t| if t.scaling() as f32 == 0.0 { 1 } else { 33 })
        .sum();
    let coeff_budget = transient_budget.saturating_sub(map_bits + scaling_bits);
    let mut coeff_writer = BitWriter::new();
    for (g, (g0, g1, coded, counts, _)) in groups_meta.iter().enumerate() {
        let frames_g = g1 - g0;
        let node_total: u64 = counts.iter().sum();
        let group_budget = (coeff_budget * frames_g as u64 / frame_count as u64)
            .min((node_total as f64 * config.max_useful_coeff_bits) as u64);
        let mean_rate = group_budget as f64 / (frames_g * nodes) as f64;
        sides[g].mean_rate_q = bitstream::rate_to_code(mean_rate);
        let coded_rate = bitstream::code_to_rate(sides[g].mean_rate_q);
        let has_nodes = counts.iter().any(|&c| c > 0);
        let rates = if coded_rate > 0.0 && has_nodes {
            allocate_bits_transient(coded, coded_rate)?.rates
        } else {
            vec![0.0; depth as usize]
        };
        sides[g].theta_q = fit_theta(&rates, counts, group_budget);
        let theta = bitstream::code_to_theta(sides[g].theta_q);
        for f in *g0..*g1 {
            let tree = &sf_trees[f];
            let scaling = tree.scaling() as f32;
            if scaling == 0.0 {
                coeff_writer.push_bit(false);
            } else {
                coeff_writer.push_bit(true);
                coeff_writer.push_bits(scaling.to_bits() as u64, 32);
            }
            for (scale, index) in maps[f].iter() {
                let bits = integer_rate(rates[(scale - 1) as usize], theta);
                if bits > 0 {
                    let code = config.quantizer.quantize(
                        tree.detail(scale)[index],
                        coded.sigma_transient(scale),
                        bits,
                    )?;
                    coeff_writer.push_bits(code as u64, bits);
                }
            }
        }
    }
    let coeff_payload = coeff_writer.into_bytes();

    Ok(TransientStage {
        sides,
        maps,
        maps_payload,
        coeff_payload,
    })
}

fn tree_em_init(group: &[WaveletTree], depth: u32) -> TreeParams {
    // Robust per-scale scale split, mirroring the chain initializer.
    let mut sigma_r = Vec::with_capacity(depth as usize);
    let mut sigma_t = Vec::with_capacity(depth as usize);
    let max_abs = group.iter().fold(0.0f64, |m, t| m.max(t.max_abs_detail()));
    let floor = (1e-8 * max_abs).max(f64::MIN_POSITIVE);
    for scale in 1..=depth {
        let mut mags: Vec<f64> = group
            .iter()
            .flat_map(|t| t.detail(scale).iter().map(|d| d.abs()))
            .collect();
        mags.sort_by(f64::total_cmp);
        let mad = 1.4826 * mags[mags.len() / 2];
        let r = mad.max(floor);
        sigma_r.push(r);
        sigma_t.push(8.0 * r);
    }
    TreeParams::new(0.5, 0.5, sigma_t, sigma_r).expect("initializer parameters are valid")
}

/// Encodes a signal into the bit-exact container at the configured rate.
pub fn encode(signal: &Signal, config: &CodecConfig) -> Result<Vec<u8>> {
    Ok(encode_internal(signal, config)?.0)
}

/// Encoder variant that also returns the analysis-side (unquantized) layer
/// decomposition.
pub fn encode_with_layers(
    signal: &Signal,
    config: &CodecConfig,
) -> Result<(Vec<u8>, LayerDecomposition)> {
    encode_internal(signal, config)
}

fn encode_internal(signal: &Signal, config: &CodecConfig) -> Result<(Vec<u8>, LayerDecomposition)> {
    config.validate()?;
    if signal.is_empty() {
        return Err(Error::DegenerateInput("cannot encode an empty signal"));
    }
    let mut padded = {
        let (p, _) = signal.padded_to_multiple(config.frame_len);
        p
    };
    if padded.len() < 2 * config.frame_len {
        padded.samples.resize(2 * config.frame_len, 0.0);
    }
    let pad = padded.len() - signal.len();
    if pad > u16::MAX as usize {
        return Err(Error::invalid(
            "padding exceeds the header field".to_string(),
        ));
    }
    let k_total = padded.len() / config.frame_len;
    let frames_total = padded.len() >> config.depth;

    let target_bits = (config.rate_kbps * 1000.0 * signal.len() as f64 / signal.sample_rate as f64)
        .floor() as u64;
    let header_bits = 8 * HEADER_LEN as u64;
    let min_bits = minimum_stream_bits(config, k_total, frames_total);
    if target_bits < min_bits {
        return Err(Error::BudgetTooSmall {
            requested: target_bits,
            minimum: min_bits,
        });
    }
    let payload_budget = target_bits - header_bits;

    let mdct = Mdct::new(config.frame_len)?;
    let wavelet = Wavelet::daubechies(config.wavelet_moments)?;
    let analyzer = BalanceAnalyzer::new(config.depth, config.wavelet_moments)?;
    let grid = mdct.forward(&padded.samples, config.bands())?;
    let plans = plan_superframes(config, k_total, frames_total, payload_budget);

    // Tonal pass, one superframe at a time (independent, run in parallel).
    let tonal_stages: Result<Vec<TonalStage>> = parallel::par_map(&plans, |plan| {
        encode_tonal_stage(config, plan, &grid, &padded, &analyzer)
    })
    .into_iter()
    .collect();
    let tonal_stages = tonal_stages?;

    // Global tonal subtraction from the unquantized masked grid.
    let mut tonal_map_global = TonalMap::new(k_total, config.bands());
    let mut masked = MdctGrid::zero(k_total, config.bands(), config.frame_len);
    for (plan, stage) in plans.iter().zip(&tonal_stages) {
        for (k, n) in stage.map.iter() {
            tonal_map_global.insert(plan.k0 + k, n)?;
            masked.set_coeff(plan.k0 + k, n, grid.coeff(plan.k0 + k, n));
        }
    }
    let tonal_samples = mdct.inverse(&masked)?;
    let non_tonal: Vec<f64> = padded
        .samples
        .iter()
        .zip(&tonal_samples)
        .map(|(x, t)| x - t)
        .collect();

    // Wavelet analysis of the non-tonal layer.
    let frame_len_dwt = 1usize << config.depth;
    let trees: Result<Vec<WaveletTree>> = parallel::par_map_index(frames_total, |f| {
        dwt_forward(
            &non_tonal[f * frame_len_dwt..(f + 1) * frame_len_dwt],
            config.depth,
            &wavelet,
        )
    })
    .into_iter()
    .collect();
    let trees = trees?;

    let transient_stages: Result<Vec<TransientStage>> = parallel::par_map(&plans, |plan| {
        let budget =
            tonal_stages[plans.iter().position(|p| p.k0 == plan.k0).unwrap()].transient_budget;
        encode_transient_stage(config, plan, &trees, budget)
    })
    .into_iter()
    .collect();
    let transient_stages = transient_stages?;

    // Transient subtraction (details on the map plus the raw scaling term).
    let all_maps: Vec<TransientMap> = transient_stages
        .iter()
        .flat_map(|s| s.maps.iter().cloned())
        .collect();
    let transient_samples: Vec<f64> = parallel::par_map_index(frames_total, |f| {
        let mut masked_tree = WaveletTree::zero(config.depth);
        masked_tree.set_scaling(trees[f].scaling());
        for (scale, index) in all_maps[f].iter() {
            masked_tree.detail_mut(scale)[index] = trees[f].detail(scale)[index];
        }
        dwt_inverse(&masked_tree, &wavelet)
    })
    .into_iter()
    .flatten()
    .collect();
    let residual: Vec<f64> = non_tonal
        .iter()
        .zip(&transient_samples)
        .map(|(x, t)| x - t)
        .collect();

    // LPC models, one per MDCT window.
    let lpc_models: Result<Vec<lpc::LpcModel>> = parallel::par_map_index(k_total, |k| {
        lpc::lpc_analyze(
            &residual[k * config.frame_len..(k + 1) * config.frame_len],
            config.lpc_order,
        )
    })
    .into_iter()
    .collect();
    let lpc_models = lpc_models?;

    // Stream assembly.
    let header = StreamHeader {
        sample_rate: signal.sample_rate,
        frame_len: config.frame_len as u16,
        depth: config.depth as u8,
        pad_len: pad as u16,
        superframe_windows: config.superframe_windows as u8,
        frame_count: k_total as u32,
        excitation_seed: config.excitation_seed,
    };
    let mut out = Vec::with_capacity((target_bits / 8) as usize + 64);
    header.write(&mut out);
    for ((plan, tonal_stage), transient_stage) in
        plans.iter().zip(tonal_stages).zip(transient_stages)
    {
        let params = ParamsSection {
            tonal: tonal_stage.side,
            trees: transient_stage.sides,
            lpc_order: config.lpc_order as u8,
            quantizer: config.quantizer,
        };
        write_section(&mut out, &params.to_bytes());
        write_section(&mut out, &tonal_stage.map_payload);
        write_section(&mut out, &tonal_stage.coeff_payload);
        write_section(&mut out, &transient_stage.maps_payload);
        write_section(&mut out, &transient_stage.coeff_payload);
        let mut lpc_writer = BitWriter::new();
        for model in &lpc_models[plan.k0..plan.k1] {
            // Silent frames compress to a single flag bit.
            if model.gain == 0.0 {
                lpc_writer.push_bit(false);
                continue;
            }
            lpc_writer.push_bit(true);
            for &k in &model.reflection {
                lpc_writer.push_bits(bitstream::reflection_to_code(k) as u64, 10);
            }
            lpc_writer.push_bits(bitstream::sigma_to_code(model.gain) as u64, 16);
        }
        write_section(&mut out, &lpc_writer.into_bytes());
    }

    // Constant-rate padding: fill to the target unless the stream carries
    // no coefficients at all (silence stays near header size).
    let target_bytes = (target_bits / 8) as usize;
    let has_content = !tonal_map_global.is_empty() || all_maps.iter().any(|m| !m.is_empty());
    if has_content && out.len() < target_bytes {
        out.resize(target_bytes, 0);
    }

    let trim = |v: Vec<f64>| -> Result<Signal> {
        Signal::new(v[..signal.len()].to_vec(), signal.sample_rate)
    };
    let layers = LayerDecomposition {
        tonal: trim(tonal_samples)?,
        transient: trim(transient_samples)?,
        residual: trim(residual)?,
        tonal_map: tonal_map_global,
        transient_maps: all_maps,
    };
    Ok((out, layers))
}

fn minimum_stream_bits(config: &CodecConfig, k_total: usize, frames_total: usize) -> u64 {
    let sf_count = k_total.div_ceil(config.superframe_windows);
    let groups = config.superframe_windows.div_ceil(config.tree_group).max(1);
    let per_sf = 8 * ParamsSection::wire_len(config.depth as usize, groups) as u64
        + 6 * 32
        + 64 // empty tonal map stream
        + config.superframe_windows as u64 * (config.lpc_order as u64 * 10 + 17);
    8 * HEADER_LEN as u64 + sf_count as u64 * per_sf + frames_total as u64 * 2
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

/// Decodes a stream into the output signal.
pub fn decode(bytes: &[u8]) -> Result<Signal> {
    Ok(decode_layers(bytes)?.output)
}

/// Decodes a stream, also returning the reconstructed layers and maps.
pub fn decode_layers(bytes: &[u8]) -> Result<DecodedLayers> {
    let mut cursor = ByteCursor::new(bytes);
    let header = StreamHeader::read(&mut cursor)?;
    let frame_len = header.frame_len as usize;
    let depth = header.depth as u32;
    let k_total = header.frame_count as usize;
    let total_len = k_total * frame_len;
    if frame_len % (1usize << depth) != 0 {
        return Err(Error::stream("header", "frame/depth mismatch"));
    }
    if (header.pad_len as usize) >= total_len {
        return Err(Error::stream("header", "padding exceeds signal length"));
    }
    let frames_total = total_len >> depth;
    let frames_per_window = frame_len >> depth;
    let sf_windows = header.superframe_windows as usize;
    let sf_count = k_total.div_ceil(sf_windows);

    let mut masked: Option<MdctGrid> = None;
    let mut tonal_map_global: Option<TonalMap> = None;
    let mut transient_maps: Vec<TransientMap> = Vec::with_capacity(frames_total);
    let mut trees: Vec<WaveletTree> = Vec::with_capacity(frames_total);
    let mut lpc_models: Vec<lpc::LpcModel> = Vec::with_capacity(k_total);

    for sf in 0..sf_count {
        let k0 = sf * sf_windows;
        let k1 = ((sf + 1) * sf_windows).min(k_total);
        let k_sf = k1 - k0;
        let f0 = k0 * frames_per_window;
        let f1 = (k1 * frames_per_window).min(frames_total);

        let params = ParamsSection::from_bytes(cursor.section("params")?, depth as usize)?;
        let tonal_params = params.tonal.to_params()?;
        let bands = params.tonal.band_count as usize;
        if bands > frame_len {
            return Err(Error::stream("params", "band count exceeds frame length"));
        }
        let masked = masked.get_or_insert_with(|| MdctGrid::zero(k_total, bands, frame_len));
        let tonal_map_global =
            tonal_map_global.get_or_insert_with(|| TonalMap::new(k_total, bands));
        if masked.band_count() != bands {
            return Err(Error::stream("params", "band count changed mid-stream"));
        }

        // Tonal significance map.
        let map_bytes = cursor.section("tonal-map")?;
        let mut map_reader = BitReader::new(map_bytes, "tonal-map");
        let bin0 = tonal_params.bin(0);
        let states = rle::decode_runlengths_from(
            &mut map_reader,
            k_sf * bands,
            bin0.stay_tonal,
            bin0.stay_residual,
        )?;
        let rows: Vec<Vec<bool>> = states.chunks_exact(k_sf).map(|c| c.to_vec()).collect();
        let map = TonalMap::from_bin_rows(&rows, k_sf);
        let mut counts = vec![0u64; bands];
        for (_, n) in map.iter() {
            counts[n] += 1;
        }

        // Tonal coefficients.
        let coeff_bytes = cursor.section("tonal-coeffs")?;
        let mut coeff_reader = BitReader::new(coeff_bytes, "tonal-coeffs");
        let coded_rate = bitstream::code_to_rate(params.tonal.mean_rate_q);
        let rates = if coded_rate > 0.0 && !map.is_empty() {
            tonal::allocate_bits_tonal(&tonal_params, coded_rate)?.rates
        } else {
            vec![0.0; bands]
        };
        let theta = bitstream::code_to_theta(params.tonal.theta_q);
        for (k, n) in map.iter() {
            let bits = integer_rate(rates[n], theta);
            let value = if bits > 0 {
                let code = coeff_reader.read_bits(bits)? as u32;
                params
                    .quantizer
                    .dequantize(code, tonal_params.bin(n).sigma_tonal, bits)?
            } else {
                0.0
            };
            masked.set_coeff(k0 + k, n, value);
            tonal_map_global.insert(k0 + k, n)?;
        }

        // Transient maps.
        let maps_bytes = cursor.section("transient-maps")?;
        let mut maps_reader = BitReader::new(maps_bytes, "transient-maps");
        let mut sf_maps = Vec::with_capacity(f1 - f0);
        for _ in f0..f1 {
            sf_maps.push(decode_tree_map_from(&mut maps_reader, depth)?);
        }

        // Transient coefficients, grouped like the encoder.
        let coeff_bytes = cursor.section("transient-coeffs")?;
        let mut reader = BitReader::new(coeff_bytes, "transient-coeffs");
        let frame_count = f1 - f0;
        let group_size = expected_group_size(&params, frame_count)?;
        let mut f = 0usize;
        for side in &params.trees {
            let g1 = (f + group_size).min(frame_count);
            let tree_params = side.to_params()?;
            if tree_params.depth() != depth {
                return Err(Error::stream("params", "tree depth mismatch"));
            }
            let mut counts = vec![0u64; depth as usize];
            for map in &sf_maps[f..g1] {
                for (scale, _) in map.iter() {
                    counts[(scale - 1) as usize] += 1;
                }
            }
            let coded_rate = bitstream::code_to_rate(side.mean_rate_q);
            let has_nodes = counts.iter().any(|&c| c > 0);
            let rates = if coded_rate > 0.0 && has_nodes {
                allocate_bits_transient(&tree_params, coded_rate)?.rates
            } else {
                vec![0.0; depth as usize]
            };
            let theta = bitstream::code_to_theta(side.theta_q);
            for map in &sf_maps[f..g1] {
                let mut tree = WaveletTree::zero(depth);
                if reader.read_bit()? {
                    tree.set_scaling(f32::from_bits(reader.read_bits(32)? as u32) as f64);
                }
                for (scale, index) in map.iter() {
                    let bits = integer_rate(rates[(scale - 1) as usize], theta);
                    let value = if bits > 0 {
                        let code = reader.read_bits(bits)? as u32;
                        params.quantizer.dequantize(
                            code,
                            tree_params.sigma_transient(scale),
                            bits,
                        )?
                    } else {
                        0.0
                    };
                    tree.detail_mut(scale)[index] = value;
                }
                trees.push(tree);
            }
            f = g1;
        }
        if f != frame_count {
            return Err(Error::stream(
                "transient-coeffs",
                format!("groups cover {f} of {frame_count} frames"),
            ));
        }
        transient_maps.extend(sf_maps);

        // LPC models.
        let lpc_bytes = cursor.section("lpc")?;
        let mut reader = BitReader::new(lpc_bytes, "lpc");
        for _ in k0..k1 {
            if !reader.read_bit()? {
                lpc_models.push(lpc::LpcModel::silent(params.lpc_order as usize));
                continue;
            }
            let mut reflection = Vec::with_capacity(params.lpc_order as usize);
            for _ in 0..params.lpc_order {
                reflection.push(bitstream::code_to_reflection(reader.read_bits(10)? as u16));
            }
            let gain = bitstream::code_to_sigma(reader.read_bits(16)? as u16);
            lpc_models.push(lpc::LpcModel { reflection, gain });
        }
    }

    let masked = masked.ok_or_else(|| Error::stream("params", "stream holds no superframes"))?;
    let tonal_map_global = tonal_map_global.unwrap();

    // Layer synthesis.
    let mdct = Mdct::new(frame_len)?;
    let wavelet = Wavelet::daubechies(8)?;
    let tonal_samples = mdct.inverse(&masked)?;
    let frame_len_dwt = 1usize << depth;
    let transient_samples: Vec<f64> =
        parallel::par_map_index(frames_total, |f| dwt_inverse(&trees[f], &wavelet))
            .into_iter()
            .flatten()
            .collect();
    let residual_samples: Vec<f64> = parallel::par_map_index(k_total, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(((header.excitation_seed as u64) << 32) | k as u64);
        lpc::lpc_synthesize(&lpc_models[k], frame_len, &mut rng)
    })
    .into_iter()
    .flatten()
    .collect();
    debug_assert_eq!(transient_samples.len(), frames_total * frame_len_dwt);

    let out_len = total_len - header.pad_len as usize;
    let mut output = Vec::with_capacity(out_len);
    for i in 0..out_len {
        output.push(tonal_samples[i] + transient_samples[i] + residual_samples[i]);
    }
    let make = |v: &[f64]| Signal::new(v[..out_len].to_vec(), header.sample_rate);
    Ok(DecodedLayers {
        output: Signal::new(output, header.sample_rate)?,
        tonal: make(&tonal_samples)?,
        transient: make(&transient_samples)?,
        residual: make(&residual_samples)?,
        tonal_map: tonal_map_global,
        transient_maps,
    })
}

fn expected_group_size(params: &ParamsSection, frame_count: usize) -> Result<usize> {
    if params.trees.is_empty() {
        if frame_count == 0 {
            return Ok(1);
        }
        return Err(Error::stream("params", "missing tree parameter groups"));
    }
    Ok(frame_count.div_ceil(params.trees.len()))
}

// ---------------------------------------------------------------------------
// Functional (unquantized) decomposition
// ---------------------------------------------------------------------------

/// Estimates the layer split without quantization: EM plus posterior
/// thresholding retaining `keep_fraction` of the coefficients in each
/// stage. The layers reconstruct the input exactly.
pub fn decompose(
    signal: &Signal,
    config: &CodecConfig,
    keep_fraction: f64,
) -> Result<LayerDecomposition> {
    config.validate()?;
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(Error::invalid(format!(
            "keep fraction {keep_fraction} outside [0, 1]"
        )));
    }
    if signal.is_empty() {
        return Err(Error::DegenerateInput("cannot decompose an empty signal"));
    }
    let mut padded = {
        let (p, _) = signal.padded_to_multiple(config.frame_len);
        p
    };
    if padded.len() < 2 * config.frame_len {
        padded.samples.resize(2 * config.frame_len, 0.0);
    }
    let k_total = padded.len() / config.frame_len;
    let frames_total = padded.len() >> config.depth;

    let mdct = Mdct::new(config.frame_len)?;
    let wavelet = Wavelet::daubechies(config.wavelet_moments)?;
    let grid = mdct.forward(&padded.samples, config.bands())?;
    let plans = plan_superframes(config, k_total, frames_total, 1);

    let mut masked = MdctGrid::zero(k_total, config.bands(), config.frame_len);
    let mut tonal_map_global = TonalMap::new(k_total, config.bands());
    for plan in &plans {
        let sub = subgrid(&grid, plan.k0, plan.k1);
        if sub.as_slice().iter().all(|&c| c == 0.0) {
            continue;
        }
        let keep = ((sub.coeff_count() as f64) * keep_fraction).round() as usize;
        let init = em_init(&sub, config.variance_model(), true)?;
        let params = em_estimate(&sub, &init, config.em)?.params;
        let posteriors = posterior_grid(&sub, &params)?;
        let map = threshold_select_weighted(&posteriors, &sub, keep, config)?;
        for (k, n) in map.iter() {
            tonal_map_global.insert(plan.k0 + k, n)?;
            masked.set_coeff(plan.k0 + k, n, grid.coeff(plan.k0 + k, n));
        }
    }
    let tonal_samples = mdct.inverse(&masked)?;
    let non_tonal: Vec<f64> = padded
        .samples
        .iter()
        .zip(&tonal_samples)
        .map(|(x, t)| x - t)
        .collect();

    let frame_len_dwt = 1usize << config.depth;
    let trees: Result<Vec<WaveletTree>> = parallel::par_map_index(frames_total, |f| {
        dwt_forward(
            &non_tonal[f * frame_len_dwt..(f + 1) * frame_len_dwt],
            config.depth,
            &wavelet,
        )
    })
    .into_iter()
    .collect();
    let trees = trees?;
    let nodes = frame_len_dwt - 1;
    let keep_nodes = ((nodes as f64) * keep_fraction).round() as usize;

    let mut transient_maps = Vec::with_capacity(frames_total);
    let mut transient_samples = Vec::with_capacity(padded.len());
    for plan in &plans {
        let group_trees = &trees[plan.f0..plan.f1];
        if group_trees.is_empty() {
            continue;
        }
        let silent = group_trees.iter().all(|t| t.max_abs_detail() == 0.0);
        let params = if silent {
            fallback_tree_params(config.depth)
        } else {
            let init = tree_em_init(group_trees, config.depth);
            em_estimate_tree(group_trees, &init, config.tree_em)?.params
        };
        for tree in group_trees {
            let map = if silent || keep_nodes == 0 {
                TransientMap::new(config.depth)
            } else {
                let posteriors = upward_downward(tree, &params)?;
                threshold_select_tree(&posteriors, keep_nodes)?
            };
            let mut masked_tree = WaveletTree::zero(config.depth);
            masked_tree.set_scaling(tree.scaling());
            for (scale, index) in map.iter() {
                masked_tree.detail_mut(scale)[index] = tree.detail(scale)[index];
            }
            transient_samples.extend(dwt_inverse(&masked_tree, &wavelet));
            transient_maps.push(map);
        }
    }

    let residual: Vec<f64> = non_tonal
        .iter()
        .zip(&transient_samples)
        .map(|(x, t)| x - t)
        .collect();
    let trim = |v: &[f64]| Signal::new(v[..signal.len()].to_vec(), signal.sample_rate);
    Ok(LayerDecomposition {
        tonal: trim(&tonal_samples)?,
        transient: trim(&transient_samples)?,
        residual: trim(&residual)?,
        tonal_map: tonal_map_global,
        transient_maps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_catches_misalignment() {
        let mut config = CodecConfig::default();
        assert!(config.validate().is_ok());
        config.frame_len = 512;
        config.depth = 10;
        assert!(config.validate().is_err());
        config.frame_len = 2048;
        assert!(config.validate().is_ok());
    }

    #[test]
    fn theta_fit_is_monotone_and_within_budget() {
        let rates = vec![3.7, 1.2, 0.4, 6.9];
        let counts = vec![10u64, 20, 5, 3];
        for budget in [0u64, 10, 50, 100, 200, 400] {
            let theta_q = fit_theta(&rates, &counts, budget);
            let spend = rate_spend(&rates, &counts, bitstream::code_to_theta(theta_q));
            assert!(spend <= budget.max(rate_spend(&rates, &counts, 0.0)));
            if theta_q < u16::MAX {
                let next = bitstream::code_to_theta(theta_q + 1);
                assert!(rate_spend(&rates, &counts, next) > budget || theta_q == 0);
            }
        }
    }

    #[test]
    fn budget_too_small_is_reported() {
        let signal = Signal::new(vec![0.1; 8192], 44100).unwrap();
        let config = CodecConfig {
            rate_kbps: 0.1,
            ..CodecConfig::default()
        };
        match encode(&signal, &config) {
            Err(Error::BudgetTooSmall { requested, minimum }) => {
                assert!(requested < minimum);
            }
            other => panic!("expected BudgetTooSmall, got {other:?}"),
        }
    }
}
