//! Property tests for the structural invariants: perfect reconstruction,
//! posterior laws, upward-closedness, lossless map codes and quantizer
//! error bounds.

use proptest::prelude::*;

use hmwv_core::balance::split_budget;
use hmwv_core::codec::rle;
use hmwv_core::codec::{dequantize_uniform, quantize_uniform};
use hmwv_core::tonal::{self, TonalBin};
use hmwv_core::transforms::{dwt_forward, dwt_inverse, Mdct, Wavelet, WaveletTree};
use hmwv_core::transient::{self, TreeParams};

fn prob() -> impl Strategy<Value = f64> {
    0.02f64..0.98
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mdct_reconstructs_and_preserves_energy(
        seed in any::<u64>(),
        windows in 2usize..6,
    ) {
        let frame = 64;
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state as f64 / u64::MAX as f64 - 0.5
        };
        let signal: Vec<f64> = (0..windows * frame).map(|_| next()).collect();
        let energy: f64 = signal.iter().map(|s| s * s).sum();
        prop_assume!(energy > 1e-6);
        let mdct = Mdct::new(frame).unwrap();
        let grid = mdct.forward(&signal, frame).unwrap();
        prop_assert!((grid.energy() - energy).abs() <= 1e-9 * energy);
        let back = mdct.inverse(&grid).unwrap();
        let peak = signal.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for (a, b) in signal.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9 * peak);
        }
    }

    #[test]
    fn dwt_reconstructs_and_preserves_energy(
        seed in any::<u64>(),
        depth in 1u32..9,
        moments in 1usize..9,
    ) {
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state as f64 / u64::MAX as f64 - 0.5
        };
        let frame: Vec<f64> = (0..1usize << depth).map(|_| next()).collect();
        let energy: f64 = frame.iter().map(|s| s * s).sum();
        prop_assume!(energy > 1e-6);
        let wavelet = Wavelet::daubechies(moments).unwrap();
        let tree = dwt_forward(&frame, depth, &wavelet).unwrap();
        prop_assert!((tree.energy() - energy).abs() <= 1e-9 * energy);
        let back = dwt_inverse(&tree, &wavelet);
        for (a, b) in frame.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn chain_posteriors_are_probabilities(
        stay_tonal in prob(),
        stay_residual in prob(),
        initial in prob(),
        row in proptest::collection::vec(-50.0f64..50.0, 1..40),
    ) {
        let bin = TonalBin {
            stay_tonal,
            stay_residual,
            initial_tonal: initial,
            sigma_tonal: 2.0,
            sigma_residual: 0.3,
        };
        let (post, ll) = tonal::forward_backward(&row, &bin).unwrap();
        prop_assert!(ll.is_finite());
        for p in post {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn tree_posteriors_are_monotone_along_root_paths(
        root in prob(),
        persistence in prob(),
        seed in any::<u64>(),
        depth in 1u32..6,
    ) {
        let params = TreeParams::new(
            root,
            persistence,
            (1..=depth).map(|j| 1.0 + j as f64 * 0.3).collect(),
            (1..=depth).map(|j| 0.05 + j as f64 * 0.01).collect(),
        ).unwrap();
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64 - 0.5) * 6.0
        };
        let mut tree = WaveletTree::zero(depth);
        for j in 1..=depth {
            for v in tree.detail_mut(j) {
                *v = next();
            }
        }
        let post = transient::upward_downward(&tree, &params).unwrap();
        let probs = post.as_slice();
        for heap in 1..probs.len() {
            prop_assert!(probs[heap] <= probs[(heap - 1) / 2] + 1e-10);
        }
    }

    #[test]
    fn tree_threshold_selection_is_upward_closed(
        root in prob(),
        persistence in prob(),
        seed in any::<u64>(),
        keep_share in 0.0f64..1.0,
    ) {
        let depth = 5u32;
        let params = TreeParams::uniform(depth, root, persistence, 2.0, 0.2).unwrap();
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64 - 0.5) * 5.0
        };
        let mut tree = WaveletTree::zero(depth);
        for j in 1..=depth {
            for v in tree.detail_mut(j) {
                *v = next();
            }
        }
        let post = transient::upward_downward(&tree, &params).unwrap();
        let keep = (keep_share * 31.0) as usize;
        let map = transient::threshold_select_tree(&post, keep).unwrap();
        prop_assert_eq!(map.len(), keep);
        prop_assert!(map.is_upward_closed());
    }

    #[test]
    fn tree_map_code_roundtrips(
        root in prob(),
        persistence in prob(),
        seed in any::<u64>(),
    ) {
        let params = TreeParams::uniform(6, root, persistence, 1.0, 0.1).unwrap();
        let map = hmwv_core::reference::sample_tree_map(&params, seed);
        let (bytes, bits) = transient::encode_tree_map(&map).unwrap();
        prop_assert!(bits <= 1 + 2 * map.len() as u64);
        let back = transient::decode_tree_map(&bytes, 6).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn runlength_code_roundtrips_any_row(
        states in proptest::collection::vec(any::<bool>(), 1..200),
        stay_tonal in prob(),
        stay_residual in prob(),
    ) {
        let (bytes, _) = rle::encode_runlengths(&states, stay_tonal, stay_residual).unwrap();
        let back = rle::decode_runlengths(&bytes, states.len(), stay_tonal, stay_residual).unwrap();
        prop_assert_eq!(back, states);
    }

    #[test]
    fn uniform_quantizer_error_is_half_step_in_range(
        value in -1e3f64..1e3,
        sigma in 0.01f64..100.0,
        bits in 1u8..16,
    ) {
        let code = quantize_uniform(value, sigma, bits).unwrap();
        let back = dequantize_uniform(code, sigma, bits).unwrap();
        let step = 8.0 * sigma / (1u64 << bits) as f64;
        if value.abs() <= 4.0 * sigma - step {
            prop_assert!((value - back).abs() <= step / 2.0 + 1e-12);
        } else {
            prop_assert!(back.abs() <= 4.0 * sigma + 1e-12);
        }
    }

    #[test]
    fn budget_split_is_conservative(
        total in 1u64..1_000_000,
        index in 0.0f64..1.0,
    ) {
        let (tonal, transient) = split_budget(total, index, 0.05);
        prop_assert_eq!(tonal + transient, total);
        let floor = ((total as f64) * 0.05).ceil() as u64;
        let floor = floor.min(total / 2);
        prop_assert!(tonal >= floor && transient >= floor);
    }

    #[test]
    fn chain_marginals_stay_in_unit_interval(
        initial in prob(),
        stay_tonal in prob(),
        stay_residual in prob(),
        k in 0usize..200,
    ) {
        let p = tonal::state_probability(k, initial, stay_tonal, stay_residual).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }
}
