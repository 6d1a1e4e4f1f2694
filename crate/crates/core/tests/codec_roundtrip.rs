//! End-to-end coder behavior on simulated material: stream determinism,
//! layer reconstruction quality, budget adherence, the unquantized
//! decomposition identity and decode-time error reporting.

use hmwv_core::codec::{self, CodecConfig};
use hmwv_core::signal::{snr_db, Signal};
use hmwv_core::sim;
use hmwv_core::tonal::TonalParams;
use hmwv_core::transient::TreeParams;
use hmwv_core::{Error, Signal as _Signal};

fn small_config(rate_kbps: f64) -> CodecConfig {
    CodecConfig {
        rate_kbps,
        frame_len: 512,
        depth: 9,
        superframe_windows: 32,
        tree_group: 16,
        ..CodecConfig::default()
    }
}

/// Structured test material: sparse chains in the MDCT grid plus sparse
/// taboo trees in the wavelet frames, both with their true layer waveforms.
fn simulated_input(seed: u64) -> (Signal, Signal, Signal) {
    let windows = 64;
    let frame = 512;
    let tonal_params = TonalParams::decay(frame, 0.95, 0.9984, 2.0, 0.03, 1.0, 64.0).unwrap();
    let tonal = sim::simulate_tonal(&tonal_params, windows, frame, 44100, seed).unwrap();
    let tree_params = TreeParams::new(
        0.25,
        0.45,
        (1..=9).map(|j| 0.25 * (j as f64 / 3.0).exp2()).collect(),
        (1..=9).map(|j| 0.0008 * (j as f64 / 3.0).exp2()).collect(),
    )
    .unwrap();
    let transient =
        sim::simulate_transient(&tree_params, windows, 8, 44100, seed ^ 0xFEED).unwrap();

    let len = windows * frame;
    let mut samples = Vec::with_capacity(len);
    for i in 0..len {
        samples.push(tonal.signal.samples[i] + transient.signal.samples[i]);
    }
    (
        Signal::new(samples, 44100).unwrap(),
        tonal.tonal_layer().unwrap(),
        transient.transient_layer(8).unwrap(),
    )
}

#[test]
fn silence_roundtrips_to_near_header_only_stream() {
    let silence = Signal::new(vec![0.0; 16384], 44100).unwrap();
    let config = small_config(64.0);
    let (bytes, layers) = codec::encode_with_layers(&silence, &config).unwrap();
    assert!(layers.tonal_map.is_empty());
    assert!(layers.transient_maps.iter().all(|m| m.is_empty()));
    let budget_bytes = (64_000.0 * 16384.0 / 44100.0 / 8.0) as usize;
    assert!(
        bytes.len() < budget_bytes / 4,
        "silent stream of {} bytes is not near header size (budget {budget_bytes})",
        bytes.len()
    );
    let decoded = codec::decode(&bytes).unwrap();
    assert_eq!(decoded.len(), 16384);
    assert!(decoded.samples.iter().all(|&s| s == 0.0));
}

#[test]
fn encoding_is_deterministic() {
    let (input, _, _) = simulated_input(7);
    let config = small_config(64.0);
    let a = codec::encode(&input, &config).unwrap();
    let b = codec::encode(&input, &config).unwrap();
    assert_eq!(a, b, "streams differ between identical runs");
}

#[test]
fn roundtrip_reconstructs_layers_and_meets_budget() {
    let (input, true_tonal, true_transient) = simulated_input(21);
    let config = small_config(64.0);
    let bytes = codec::encode(&input, &config).unwrap();

    // Budget adherence (header excluded) within 2%.
    let target_bits = 64_000.0 * input.len() as f64 / input.sample_rate as f64;
    let emitted_bits = 8.0 * bytes.len() as f64;
    assert!(
        (emitted_bits - target_bits).abs() <= 0.02 * target_bits,
        "emitted {emitted_bits} vs target {target_bits}"
    );

    let decoded = codec::decode_layers(&bytes).unwrap();
    assert_eq!(decoded.output.len(), input.len());

    // The decoded structured layers track the true simulated layers.
    let reference: Vec<f64> = true_tonal
        .samples
        .iter()
        .zip(&true_transient.samples)
        .map(|(a, b)| a + b)
        .collect();
    let reconstructed: Vec<f64> = decoded
        .tonal
        .samples
        .iter()
        .zip(&decoded.transient.samples)
        .map(|(a, b)| a + b)
        .collect();
    let layer_snr = snr_db(&reference, &reconstructed).unwrap();
    assert!(
        layer_snr >= 20.0,
        "layer reconstruction reached only {layer_snr:.2} dB"
    );
}

#[test]
fn decompose_preserves_the_additive_identity() {
    let (input, _, _) = simulated_input(3);
    let config = small_config(64.0);
    let layers = codec::decompose(&input, &config, 0.06).unwrap();
    let peak = input
        .samples
        .iter()
        .fold(0.0f64, |m, s| m.max(s.abs()))
        .max(1e-12);
    let mut worst = 0.0f64;
    for i in 0..input.len() {
        let sum =
            layers.tonal.samples[i] + layers.transient.samples[i] + layers.residual.samples[i];
        worst = worst.max((input.samples[i] - sum).abs());
    }
    assert!(
        worst <= 1e-9 * peak,
        "additive identity violated by {worst:.3e} (peak {peak:.3e})"
    );
    // Roughly six percent of the grid is retained.
    let cells = layers.tonal_map.window_count() * layers.tonal_map.band_count();
    let share = layers.tonal_map.len() as f64 / cells as f64;
    assert!((share - 0.06).abs() < 0.01, "tonal share {share}");
}

#[test]
fn truncated_and_corrupt_streams_name_the_failing_section() {
    let (input, _, _) = simulated_input(11);
    let config = small_config(64.0);
    let bytes = codec::encode(&input, &config).unwrap();

    // Header-only stream: the first missing section is the params block.
    match codec::decode(&bytes[..23]) {
        Err(Error::Bitstream { section, .. }) => assert_eq!(section, "params"),
        other => panic!("expected a params error, got {other:?}"),
    }

    // Garbage ahead of the first length prefix corrupts the params parse.
    let mut corrupt = bytes.clone();
    corrupt[23] = 0xFF;
    corrupt[24] = 0xFF;
    corrupt[25] = 0xFF;
    corrupt[26] = 0xFF;
    match codec::decode(&corrupt) {
        Err(Error::Bitstream { .. }) => {}
        other => panic!("expected a bitstream error, got {other:?}"),
    }

    // Bad magic.
    let mut bad = bytes;
    bad[0] = b'Z';
    match codec::decode(&bad) {
        Err(Error::Bitstream { section, .. }) => assert_eq!(section, "header"),
        other => panic!("expected a header error, got {other:?}"),
    }
}

#[test]
fn tonal_only_signal_at_generous_budget_reaches_30_db() {
    // Nearly pure tonal content: the off-map state is negligible, so the
    // decoded waveform itself should track the input closely.
    let params = TonalParams::decay(512, 0.95, 0.9984, 1.0, 1e-4, 1.0, 64.0).unwrap();
    let sim = sim::simulate_tonal(&params, 64, 512, 44100, 77).unwrap();
    let config = small_config(128.0);
    let bytes = codec::encode(&sim.signal, &config).unwrap();
    let decoded = codec::decode(&bytes).unwrap();
    let snr = snr_db(&sim.signal.samples, &decoded.samples).unwrap();
    assert!(snr >= 30.0, "decoded SNR {snr:.2} dB");
}

#[test]
fn partial_superframes_with_uneven_tree_groups_roundtrip() {
    // 52 windows leave a 20-frame tail superframe whose tree grouping is
    // not a multiple of the group size; encoder and decoder must agree on
    // the split.
    let params = TonalParams::decay(512, 0.95, 0.9984, 1.0, 0.05, 1.0, 64.0).unwrap();
    let sim = sim::simulate_tonal(&params, 52, 512, 44100, 19).unwrap();
    let config = small_config(64.0);
    let bytes = codec::encode(&sim.signal, &config).unwrap();
    let decoded = codec::decode(&bytes).unwrap();
    assert_eq!(decoded.len(), sim.signal.len());
    let snr = snr_db(&sim.signal.samples, &decoded.samples).unwrap();
    assert!(
        snr > 5.0,
        "partial-superframe roundtrip badly broken: {snr} dB"
    );
}

#[test]
fn decode_is_deterministic_given_the_stream() {
    let (input, _, _) = simulated_input(5);
    let config = small_config(48.0);
    let bytes = codec::encode(&input, &config).unwrap();
    let a = codec::decode(&bytes).unwrap();
    let b = codec::decode(&bytes).unwrap();
    assert_eq!(a.samples, b.samples);
}
