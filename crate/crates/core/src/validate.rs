//! Validation suite: every closed-form statistic, inference recursion and
//! coding bound checked against the independent reference implementations.
//! The CLI `validate` subcommand and the acceptance test target both run
//! these checks; seeds are fixed so results are reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::balance::{self, BalanceAnalyzer};
use crate::codec::{self, quant, rle, CodecConfig};
use crate::reference;
use crate::signal::{snr_db, Signal};
use crate::sim;
use crate::tonal::{self, BinState, TonalBin, TonalParams};
use crate::transforms::{dwt_forward, dwt_inverse, Mdct, Wavelet};
use crate::transient::{self, TreeParams};

/// Outcome of one validation check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

/// Named groups of checks, selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Transforms,
    Inference,
    Formulas,
    Balance,
    Coding,
    EndToEnd,
    All,
}

impl Suite {
    pub fn parse(name: &str) -> Option<Suite> {
        Some(match name {
            "transforms" => Suite::Transforms,
            "inference" => Suite::Inference,
            "formulas" => Suite::Formulas,
            "balance" => Suite::Balance,
            "coding" => Suite::Coding,
            "e2e" | "end-to-end" => Suite::EndToEnd,
            "all" => Suite::All,
            _ => return None,
        })
    }

    pub const NAMES: [&'static str; 7] = [
        "transforms",
        "inference",
        "formulas",
        "balance",
        "coding",
        "e2e",
        "all",
    ];
}

/// Runs the selected suite and returns per-criterion results.
pub fn run(suite: Suite) -> Vec<CheckResult> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Transforms | Suite::All) {
        out.push(transform_reconstruction());
    }
    if matches!(suite, Suite::Inference | Suite::All) {
        out.push(inference_vs_brute_force());
    }
    if matches!(suite, Suite::Formulas | Suite::All) {
        out.push(closed_form_statistics());
        out.push(simulation_operating_point());
        out.push(log_dimension_lemma());
        out.push(rate_distortion_bounds());
    }
    if matches!(suite, Suite::Balance | Suite::All) {
        out.push(balance_index_tracking());
    }
    if matches!(suite, Suite::Coding | Suite::All) {
        out.push(entropy_coding_efficiency());
        out.push(quantizer_bands());
    }
    if matches!(suite, Suite::EndToEnd | Suite::All) {
        out.push(end_to_end_codec());
    }
    out
}

// ---------------------------------------------------------------------------
// 1. Transform correctness
// ---------------------------------------------------------------------------

pub fn transform_reconstruction() -> CheckResult {
    let name = "transform-reconstruction";
    let start = std::time::Instant::now();
    let mdct = match Mdct::new(256) {
        Ok(m) => m,
        Err(e) => return CheckResult::new(name, false, e.to_string()),
    };
    let wavelet = Wavelet::daubechies(8).expect("db8 exists");
    let mut rng = ChaCha8Rng::seed_from_u64(0x0001);
    let mut worst_pr = 0.0f64;
    let mut worst_parseval = 0.0f64;
    for _ in 0..100 {
        let signal: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let energy: f64 = signal.iter().map(|s| s * s).sum();
        let peak = signal.iter().fold(0.0f64, |m, s| m.max(s.abs()));

        let grid = mdct.forward(&signal, 256).expect("forward");
        worst_parseval = worst_parseval.max((grid.energy() - energy).abs() / energy);
        let back = mdct.inverse(&grid).expect("inverse");
        let err = signal
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_pr = worst_pr.max(err / peak);

        let frame = &signal[..1024];
        let frame_energy: f64 = frame.iter().map(|s| s * s).sum();
        let tree = dwt_forward(frame, 10, &wavelet).expect("dwt");
        worst_parseval = worst_parseval.max((tree.energy() - frame_energy).abs() / frame_energy);
        let back = dwt_inverse(&tree, &wavelet);
        let err = frame
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_pr = worst_pr.max(err / peak);
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = worst_pr < 1e-9 && worst_parseval < 1e-9 && elapsed < 5.0;
    CheckResult::new(
        name,
        passed,
        format!(
            "100 signals: max reconstruction err {worst_pr:.2e}, max Parseval err \
             {worst_parseval:.2e}, {elapsed:.2} s"
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Inference vs brute force
// ---------------------------------------------------------------------------

pub fn inference_vs_brute_force() -> CheckResult {
    let name = "inference-vs-brute-force";
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0002);
    let mut worst_chain = 0.0f64;
    let mut worst_tree = 0.0f64;
    let mut map_misses = 0usize;

    for _ in 0..200 {
        let k_count = rng.gen_range(1..=12);
        let bin = TonalBin {
            stay_tonal: rng.gen_range(0.05..0.95),
            stay_residual: rng.gen_range(0.05..0.95),
            initial_tonal: rng.gen_range(0.05..0.95),
            sigma_tonal: rng.gen_range(1.0..4.0),
            sigma_residual: rng.gen_range(0.05..0.9),
        };
        let row: Vec<f64> = (0..k_count).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let (post, ll) = tonal::forward_backward(&row, &bin).expect("forward-backward");
        let (bpost, bll) = reference::enumerate_chain_posteriors(&row, &bin);
        worst_chain = worst_chain.max((ll - bll).abs());
        for (a, b) in post.iter().zip(&bpost) {
            worst_chain = worst_chain.max((a - b).abs());
        }
        let path = tonal::viterbi_map(&row, &bin).expect("viterbi");
        let score = reference::chain_path_log_prob(&row, &bin, &path);
        let best = reference::enumerate_chain_map_score(&row, &bin);
        if (score - best).abs() > 1e-9 {
            map_misses += 1;
        }
    }

    for _ in 0..200 {
        let depth = rng.gen_range(1..=3);
        let params = TreeParams::new(
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            (0..depth).map(|_| rng.gen_range(1.0..3.0)).collect(),
            (0..depth).map(|_| rng.gen_range(0.05..0.9)).collect(),
        )
        .expect("params");
        let mut tree = crate::transforms::WaveletTree::zero(depth);
        for j in 1..=depth {
            for v in tree.detail_mut(j) {
                *v = rng.gen_range(-3.0..3.0);
            }
        }
        let post = transient::upward_downward(&tree, &params).expect("upward-downward");
        let (bpost, bll) = reference::enumerate_tree_posteriors(&tree, &params);
        worst_tree = worst_tree.max((post.log_likelihood - bll).abs());
        for (a, b) in post.as_slice().iter().zip(&bpost) {
            worst_tree = worst_tree.max((a - b).abs());
        }
        let map = transient::map_states_tree(&tree, &params).expect("map");
        let score = reference::tree_config_log_prob(&tree, &params, &map);
        let best = reference::enumerate_tree_map_score(&tree, &params);
        if (score - best).abs() > 1e-9 {
            map_misses += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = worst_chain < 1e-10 && worst_tree < 1e-10 && map_misses == 0 && elapsed < 30.0;
    CheckResult::new(
        name,
        passed,
        format!(
            "200+200 instances: chain dev {worst_chain:.2e}, tree dev {worst_tree:.2e}, \
             MAP misses {map_misses}, {elapsed:.2} s"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Closed-form statistics vs Monte Carlo
// ---------------------------------------------------------------------------

pub fn closed_form_statistics() -> CheckResult {
    let name = "closed-form-statistics";
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0003);
    let draws = 100_000;
    let mut failures: Vec<String> = Vec::new();

    for setting in 0..10 {
        let stay_t = rng.gen_range(0.3..0.97);
        let stay_r = rng.gen_range(0.3..0.97);
        let initial = rng.gen_range(0.05..0.95);
        let k_count = rng.gen_range(5..40);
        let seed = 0xAA00 + setting;

        let tau = tonal::expected_tonal_fraction(k_count, initial, stay_t, stay_r)
            .expect("valid setting");
        let mc = reference::mc_chain_tonal_fraction(k_count, initial, stay_t, stay_r, draws, seed);
        if !mc.within(tau, 3.0) {
            failures.push(format!(
                "tonal fraction setting {setting}: {tau:.5} vs {:.5}+-{:.5}",
                mc.mean, mc.std_err
            ));
        }

        let bin = TonalBin {
            stay_tonal: stay_t,
            stay_residual: stay_r,
            initial_tonal: initial,
            sigma_tonal: rng.gen_range(0.5..3.0),
            sigma_residual: rng.gen_range(0.05..0.4),
        };
        let params =
            TonalParams::from_bins(vec![bin], tonal::VarianceModel::PerBin, true).expect("params");
        let energy = tonal::expected_tonal_energy(&params, k_count).expect("energy");
        let mc = reference::mc_chain_tonal_energy(k_count, &bin, draws, seed ^ 0x11);
        if !mc.within(energy, 3.0) {
            failures.push(format!(
                "tonal energy setting {setting}: {energy:.5} vs {:.5}+-{:.5}",
                mc.mean, mc.std_err
            ));
        }

        let depth = rng.gen_range(3..=7u32);
        let tree = TreeParams::new(
            rng.gen_range(0.1..0.95),
            rng.gen_range(0.2..0.8),
            (0..depth).map(|_| rng.gen_range(0.5..2.5)).collect(),
            (0..depth).map(|_| rng.gen_range(0.01..0.3)).collect(),
        )
        .expect("tree params");
        let counts = transient::expected_counts(&tree);
        let mc = reference::mc_tree_total_count(&tree, draws, seed ^ 0x22);
        if !mc.within(counts.total, 3.0) {
            failures.push(format!(
                "tree count setting {setting}: {:.5} vs {:.5}+-{:.5}",
                counts.total, mc.mean, mc.std_err
            ));
        }
        let scale = rng.gen_range(1..=depth);
        let mc = reference::mc_tree_scale_count(&tree, scale, draws, seed ^ 0x33);
        if !mc.within(counts.per_scale[(scale - 1) as usize], 3.0) {
            failures.push(format!(
                "tree scale-count setting {setting}: {:.5} vs {:.5}+-{:.5}",
                counts.per_scale[(scale - 1) as usize],
                mc.mean,
                mc.std_err
            ));
        }

        let tr_energy = transient::expected_transient_energy(&tree);
        let mc = reference::mc_tree_transient_energy(&tree, draws, seed ^ 0x44);
        if !mc.within(tr_energy, 3.0) {
            failures.push(format!(
                "tree energy setting {setting}: {tr_energy:.5} vs {:.5}+-{:.5}",
                mc.mean, mc.std_err
            ));
        }

        let formula = tonal::run_length_entropy(stay_t, stay_r);
        let series = reference::run_entropy_by_series(stay_t, stay_r, 10_000);
        if (formula - series).abs() > 1e-9 {
            failures.push(format!(
                "run-length entropy setting {setting}: {formula:.12} vs {series:.12}"
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = failures.is_empty() && elapsed < 120.0;
    CheckResult::new(
        name,
        passed,
        if failures.is_empty() {
            format!("10 settings x 5 statistics at {draws} draws, {elapsed:.1} s")
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// 4. Simulation operating point
// ---------------------------------------------------------------------------

/// Simulates the tonal model near a 3.1% stationary tonal share, estimates
/// parameters by EM and states by Viterbi, and checks the recovered map.
pub fn simulation_operating_point() -> CheckResult {
    let name = "simulation-operating-point";
    // stay probabilities give nu^(e) = 0.031.
    let stay_t = 0.95;
    let stay_r = 1.0 - (1.0 - stay_t) * 0.031 / 0.969;
    let params = TonalParams::decay(64, stay_t, stay_r, 1.0, 0.05, 1.0, 8.0).expect("params");
    let eq = tonal::equilibrium_frequency(stay_t, stay_r).expect("equilibrium");
    let sim = sim::simulate_tonal(&params, 200, 64, 44100, 0x0314).expect("simulate");
    let model = tonal::VarianceModel::Decay {
        alpha: 1.0,
        knee: 8.0,
    };
    let init = tonal::em_init(&sim.grid, model, true).expect("init");
    let fit = tonal::em_estimate(&sim.grid, &init, tonal::EmOptions::default()).expect("em");

    let mut estimated = 0usize;
    let mut correct_high = 0usize;
    let mut high_total = 0usize;
    for n in 0..64 {
        let path = tonal::viterbi_map(sim.grid.bin_row(n), fit.params.bin(n)).expect("viterbi");
        for (k, state) in path.iter().enumerate() {
            let decoded_tonal = *state == BinState::Tonal;
            if decoded_tonal {
                estimated += 1;
            }
            let y = sim.grid.coeff(k, n).abs();
            if y > params.bin(n).sigma_residual {
                high_total += 1;
                if decoded_tonal == sim.map.contains(k, n) {
                    correct_high += 1;
                }
            }
        }
    }
    let fraction = estimated as f64 / (200.0 * 64.0) as f64;
    let accuracy = correct_high as f64 / high_total as f64;
    let passed = (0.025..=0.06).contains(&fraction) && accuracy >= 0.90;
    CheckResult::new(
        name,
        passed,
        format!(
            "target share {eq:.4}, estimated {fraction:.4} (band 0.025..0.06), \
             high-energy state accuracy {accuracy:.4} (>= 0.90)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Balance-index tracking
// ---------------------------------------------------------------------------

fn spearman_rho(values: &[f64]) -> f64 {
    // Ranks against the already-sorted sweep positions.
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut rank = vec![0.0f64; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as f64;
    }
    let d2: f64 = rank
        .iter()
        .enumerate()
        .map(|(i, &r)| (r - i as f64) * (r - i as f64))
        .sum();
    1.0 - 6.0 * d2 / (n as f64 * (n as f64 * n as f64 - 1.0))
}

pub fn balance_index_tracking() -> CheckResult {
    let name = "balance-index-tracking";
    let analyzer = BalanceAnalyzer::new(10, 8).expect("analyzer");
    let wavelet_count = 40;
    let realizations = 10;
    let sweep: Vec<usize> = (0..=10).map(|i| i * 20).collect();
    let mut curve = Vec::with_capacity(sweep.len());
    let mut max_tracking_err: f64 = 0.0;
    for (i, &mdct_count) in sweep.iter().enumerate() {
        let mut acc = 0.0;
        for r in 0..realizations {
            let hybrid = sim::simulate_hybrid(
                &analyzer,
                1.0,
                1.0,
                wavelet_count,
                mdct_count,
                (0x0500 + i * 100 + r) as u64,
            )
            .expect("hybrid");
            let index = match analyzer.analyze_frame(&hybrid.frame) {
                Ok(report) => report.index_tonal,
                Err(_) => 0.0,
            };
            acc += index;
        }
        curve.push(acc / realizations as f64);
        if mdct_count <= 100 {
            let target = mdct_count as f64 / (mdct_count + wavelet_count) as f64;
            max_tracking_err = max_tracking_err.max((curve[i] - target).abs());
        }
    }
    let rho = spearman_rho(&curve);
    let passed = rho > 0.95 && max_tracking_err <= 0.1;
    CheckResult::new(
        name,
        passed,
        format!(
            "Spearman rho {rho:.4} (> 0.95), max |index - share| {max_tracking_err:.4} \
             (<= 0.1) over |map| <= 100"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Logarithmic-dimension lemma
// ---------------------------------------------------------------------------

pub fn log_dimension_lemma() -> CheckResult {
    let name = "log-dimension-lemma";
    let sigma = 1.37;
    let est = reference::mc_log2_square_gaussian(sigma, 100_000, 0x0600);
    let lemma = balance::expected_log_dimension(sigma);
    let passed = est.within(lemma, 3.0);
    CheckResult::new(
        name,
        passed,
        format!(
            "lemma {lemma:.5} vs empirical {:.5} +- {:.5} at 1e5 draws \
             (offset 1 + gamma/ln 2 = {:.6})",
            est.mean,
            est.std_err,
            -balance::gaussian_log_dim_offset()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Rate-distortion bounds and allocation optimality
// ---------------------------------------------------------------------------

pub fn rate_distortion_bounds() -> CheckResult {
    let name = "rate-distortion-bounds";
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0007);
    let mut failures: Vec<String> = Vec::new();

    for setting in 0..10 {
        // Tonal allocation over four bins.
        let bins: Vec<TonalBin> = (0..4)
            .map(|_| {
                let stay_t = rng.gen_range(0.5..0.95);
                let stay_r = rng.gen_range(0.5..0.95);
                TonalBin {
                    stay_tonal: stay_t,
                    stay_residual: stay_r,
                    initial_tonal: tonal::equilibrium_frequency(stay_t, stay_r).unwrap(),
                    sigma_tonal: rng.gen_range(0.5..2.5),
                    sigma_residual: 0.05,
                }
            })
            .collect();
        let params =
            TonalParams::from_bins(bins, tonal::VarianceModel::PerBin, false).expect("params");
        let mean_rate = rng.gen_range(1.0..3.0);
        let alloc = tonal::allocate_bits_tonal(&params, mean_rate).expect("alloc");
        let achieved = tonal::tonal_expected_distortion(&params, &alloc.rates).expect("dist");
        if achieved < alloc.distortion_bound * (1.0 - 1e-9) {
            failures.push(format!("tonal setting {setting}: bound violated"));
        }
        let weights = params.equilibrium().expect("weights");
        let sigmas: Vec<f64> = params.bins().iter().map(|b| b.sigma_tonal).collect();
        let budget = 4.0 * mean_rate;
        if let Some(found) = reference::grid_search_allocation_below(
            &weights,
            &sigmas,
            budget,
            0.01,
            achieved * 0.995,
        ) {
            failures.push(format!(
                "tonal setting {setting}: grid found {found:.6e} < {achieved:.6e}"
            ));
        }

        // Transient allocation over four scales.
        let tree = TreeParams::new(
            rng.gen_range(0.3..0.9),
            rng.gen_range(0.3..0.8),
            (0..4).map(|_| rng.gen_range(0.5..2.5)).collect(),
            (0..4).map(|_| rng.gen_range(0.01..0.2)).collect(),
        )
        .expect("tree");
        let mean_rate = rng.gen_range(1.0..3.0);
        let alloc = transient::allocate_bits_transient(&tree, mean_rate).expect("alloc");
        let achieved = transient::transient_expected_distortion(&tree, &alloc.rates);
        if achieved < alloc.distortion_bound * (1.0 - 1e-9) {
            failures.push(format!("transient setting {setting}: bound violated"));
        }
        let counts = transient::expected_counts(&tree);
        let budget = tree.node_count() as f64 * mean_rate;
        if let Some(found) = reference::grid_search_allocation_below(
            &counts.per_scale,
            tree.sigmas_transient(),
            budget,
            0.01,
            achieved * 0.995,
        ) {
            failures.push(format!(
                "transient setting {setting}: grid found {found:.6e} < {achieved:.6e}"
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = failures.is_empty();
    CheckResult::new(
        name,
        passed,
        if failures.is_empty() {
            format!("10+10 settings, 0.01-bit grid search confirms optimality, {elapsed:.1} s")
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// 8. Entropy-coding efficiency
// ---------------------------------------------------------------------------

pub fn entropy_coding_efficiency() -> CheckResult {
    let name = "entropy-coding-efficiency";
    let mut rng = ChaCha8Rng::seed_from_u64(0x0008);
    let (stay_t, stay_r) = (0.9, 0.9);
    let entropy = tonal::run_length_entropy(stay_t, stay_r);
    let rows = 10_000;
    let row_len = 128;
    let mut total_bits = 0u64;
    let mut row_failures = 0usize;
    for _ in 0..rows {
        let states = reference::sample_chain_states(row_len, 0.5, stay_t, stay_r, &mut rng);
        let (bytes, bits) = rle::encode_runlengths(&states, stay_t, stay_r).expect("encode");
        if rle::decode_runlengths(&bytes, row_len, stay_t, stay_r).expect("decode") != states {
            row_failures += 1;
        }
        total_bits += bits;
    }
    let bits_per_coeff = total_bits as f64 / (rows * row_len) as f64;

    let tree_params = TreeParams::uniform(8, 1.0, 0.8, 1.0, 0.1).expect("tree");
    let bound = transient::map_rate_bound(&tree_params);
    let maps = 10_000;
    let mut map_bits = 0u64;
    let mut map_failures = 0usize;
    for _ in 0..maps {
        let map = reference::sample_tree_map_with(&tree_params, &mut rng);
        let (bytes, bits) = transient::encode_tree_map(&map).expect("encode");
        if transient::decode_tree_map(&bytes, 8).expect("decode") != map {
            map_failures += 1;
        }
        map_bits += bits;
    }
    let mean_map_bits = map_bits as f64 / maps as f64;

    let passed = bits_per_coeff <= entropy + 1.0
        && mean_map_bits <= bound
        && row_failures == 0
        && map_failures == 0;
    CheckResult::new(
        name,
        passed,
        format!(
            "run-length {bits_per_coeff:.4} bits/coeff vs H+1 = {:.4}; tree maps \
             {mean_map_bits:.2} bits vs bound {bound:.2}; roundtrip failures \
             {row_failures}+{map_failures}",
            entropy + 1.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. End-to-end codec
// ---------------------------------------------------------------------------

pub fn end_to_end_codec() -> CheckResult {
    let name = "end-to-end-codec";
    let windows = 64;
    let frame = 512;
    let tonal_params =
        TonalParams::decay(frame, 0.95, 0.9984, 2.0, 0.03, 1.0, 64.0).expect("params");
    let tonal = sim::simulate_tonal(&tonal_params, windows, frame, 44100, 0x0901).expect("sim");
    let tree_params = TreeParams::new(
        0.25,
        0.45,
        (1..=9).map(|j| 0.25 * (j as f64 / 3.0).exp2()).collect(),
        (1..=9).map(|j| 0.0008 * (j as f64 / 3.0).exp2()).collect(),
    )
    .expect("tree params");
    let transient = sim::simulate_transient(&tree_params, windows, 8, 44100, 0x0902).expect("sim");
    let samples: Vec<f64> = tonal
        .signal
        .samples
        .iter()
        .zip(&transient.signal.samples)
        .map(|(a, b)| a + b)
        .collect();
    let input = Signal::new(samples, 44100).expect("signal");
    let config = CodecConfig {
        rate_kbps: 64.0,
        frame_len: frame,
        depth: 9,
        ..CodecConfig::default()
    };

    let bytes = match codec::encode(&input, &config) {
        Ok(b) => b,
        Err(e) => return CheckResult::new(name, false, format!("encode failed: {e}")),
    };
    let again = codec::encode(&input, &config).expect("encode twice");
    let deterministic = bytes == again;

    let decoded = match codec::decode_layers(&bytes) {
        Ok(d) => d,
        Err(e) => return CheckResult::new(name, false, format!("decode failed: {e}")),
    };
    let true_sum: Vec<f64> = {
        let ton = tonal.tonal_layer().expect("layer");
        let tr = transient.transient_layer(8).expect("layer");
        ton.samples
            .iter()
            .zip(&tr.samples)
            .map(|(a, b)| a + b)
            .collect()
    };
    let decoded_sum: Vec<f64> = decoded
        .tonal
        .samples
        .iter()
        .zip(&decoded.transient.samples)
        .map(|(a, b)| a + b)
        .collect();
    let layer_snr = snr_db(&true_sum, &decoded_sum).unwrap_or(f64::NEG_INFINITY);

    // Unquantized decomposition keeps the additive identity.
    let layers = codec::decompose(&input, &config, 0.06).expect("decompose");
    let peak = input.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let mut identity_err = 0.0f64;
    for i in 0..input.len() {
        let sum =
            layers.tonal.samples[i] + layers.transient.samples[i] + layers.residual.samples[i];
        identity_err = identity_err.max((input.samples[i] - sum).abs());
    }

    let passed = deterministic && layer_snr >= 20.0 && identity_err <= 1e-9 * peak;
    CheckResult::new(
        name,
        passed,
        format!(
            "layer SNR {layer_snr:.2} dB (>= 20), streams identical: {deterministic}, \
             additive identity err {identity_err:.2e} (peak {peak:.2e})"
        ),
    )
}

// ---------------------------------------------------------------------------
// Quantizer bands (not an acceptance criterion, but exercised by `validate`)
// ---------------------------------------------------------------------------

pub fn quantizer_bands() -> CheckResult {
    let name = "quantizer-bands";
    let mut rng = ChaCha8Rng::seed_from_u64(0x000A);
    let sigma = 1.0;
    let bits = 6u8;
    let draws = 100_000;
    let mut mse_lloyd = 0.0;
    for _ in 0..draws {
        let v: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma;
        let l =
            quant::dequantize_lloyd(quant::quantize_lloyd(v, sigma, bits).unwrap(), sigma, bits)
                .unwrap();
        mse_lloyd += (v - l) * (v - l);
    }
    mse_lloyd /= draws as f64;
    let gap = mse_lloyd / quant::rd_gaussian(sigma, bits as f64);
    let passed = gap <= 2.8 && gap >= 1.0;
    CheckResult::new(
        name,
        passed,
        format!("Lloyd-Max gap over the Shannon point at 6 bits: {gap:.3}x (<= 2.8)"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_of_monotone_sequence_is_one() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        assert!((spearman_rho(&xs) - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = xs.iter().rev().copied().collect();
        assert!((spearman_rho(&rev) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn suite_names_parse() {
        for name in Suite::NAMES {
            assert!(Suite::parse(name).is_some(), "{name}");
        }
        assert!(Suite::parse("bogus").is_none());
    }
}
