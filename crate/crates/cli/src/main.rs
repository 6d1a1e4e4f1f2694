//! Command-line front end: encode/decode around the hybrid codec, balance
//! analysis, model-driven signal simulation and the validation suite.

mod config_file;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hmwv_core::balance::BalanceAnalyzer;
use hmwv_core::codec::{self, CodecConfig};
use hmwv_core::signal::{snr_db, Signal};
use hmwv_core::sim::{self, SimSidecar};
use hmwv_core::tonal::{self, TonalParams};
use hmwv_core::transient::TreeParams;
use hmwv_core::validate::{self, Suite};

#[derive(Parser)]
#[command(
    name = "hmwv",
    about = "Hybrid tonal/transient/residual waveform codec",
    version
)]
struct Cli {
    /// Worker threads (overrides HMWV_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Default)]
struct ModelFlags {
    /// MDCT frame length in samples.
    #[arg(long)]
    frame: Option<usize>,
    /// Wavelet decomposition depth (frames hold 2^depth samples).
    #[arg(long)]
    depth: Option<u32>,
    /// Frequency-decay exponent of the tonal deviations.
    #[arg(long)]
    alpha: Option<f64>,
    /// Decay knee in bins.
    #[arg(long)]
    n0: Option<f64>,
    /// Excitation / simulation seed.
    #[arg(long)]
    seed: Option<u32>,
    /// key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a 16-bit PCM WAV file.
    Encode {
        input: PathBuf,
        /// Target bitrate in kbit/s (default 64, config file may override).
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Decode a stream back to WAV.
    Decode {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Original WAV for an SNR report.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Emit the per-window tonality/transientness profile as CSV.
    Analyze {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also dump per-cell tonal posteriors as CSV.
        #[arg(long)]
        dump_posteriors: Option<PathBuf>,
        /// Also dump per-node transient posteriors as CSV.
        #[arg(long)]
        dump_tree_posteriors: Option<PathBuf>,
        /// Comma-separated kbit/s rates for an encode/decode SNR sweep.
        #[arg(long, value_delimiter = ',')]
        snr_sweep: Vec<f64>,
        /// Output CSV of the SNR sweep (default `<out>.snr.csv`).
        #[arg(long)]
        sweep_out: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Sample one of the generative models to WAV plus a JSON sidecar.
    Simulate {
        /// tonal | transient | hybrid
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        /// Analysis windows (tonal) or frames (transient/hybrid).
        #[arg(long, default_value_t = 64)]
        windows: usize,
        #[arg(long, default_value_t = 44100)]
        sample_rate: u32,
        #[command(flatten)]
        flags: ModelFlags,
    },
    /// Run the oracle validation suites and report pass/fail.
    Validate {
        /// transforms | inference | formulas | balance | coding | e2e | all
        #[arg(long, default_value = "all")]
        suite: String,
        /// Also write the report to a file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("HMWV_THREADS").ok()?.parse().ok());
    if let Some(n) = threads {
        hmwv_core::parallel::limit_threads(n.max(1));
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn build_config(rate: Option<f64>, model: &ModelFlags) -> Result<CodecConfig> {
    let mut config = CodecConfig::default();
    if let Some(path) = &model.config {
        config_file::apply_file(&mut config, path)?;
    }
    if let Some(rate) = rate {
        config.rate_kbps = rate;
    }
    if let Some(frame) = model.frame {
        config.frame_len = frame;
    }
    if let Some(depth) = model.depth {
        config.depth = depth;
    }
    if let Some(alpha) = model.alpha {
        config.alpha = alpha;
    }
    if let Some(n0) = model.n0 {
        config.knee = n0;
    }
    if let Some(seed) = model.seed {
        config.excitation_seed = seed;
    }
    Ok(config)
}

/// Writes through a sibling temp file so failures leave no partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_wav_atomic(signal: &Signal, path: &Path) -> Result<()> {
    let tmp = temp_sibling(path);
    signal
        .write_wav(&tmp)
        .with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Encode {
            input,
            rate,
            out,
            model,
        } => {
            let config = build_config(rate, &model)?;
            let signal = Signal::read_wav(&input)?;
            let bytes = codec::encode(&signal, &config)?;
            write_atomic(&out, &bytes)?;
            let seconds = signal.len() as f64 / signal.sample_rate as f64;
            println!(
                "encoded {} ({:.2} s) -> {} ({} bytes, {:.1} kbit/s)",
                input.display(),
                seconds,
                out.display(),
                bytes.len(),
                bytes.len() as f64 * 8.0 / seconds / 1000.0
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Decode {
            input,
            out,
            reference,
        } => {
            let bytes =
                std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let decoded = codec::decode(&bytes)?;
            write_wav_atomic(&decoded, &out)?;
            println!(
                "decoded {} -> {} ({} samples at {} Hz)",
                input.display(),
                out.display(),
                decoded.len(),
                decoded.sample_rate
            );
            if let Some(reference) = reference {
                let original = Signal::read_wav(&reference)?;
                if original.len() != decoded.len() {
                    bail!(
                        "reference holds {} samples, decoded {}",
                        original.len(),
                        decoded.len()
                    );
                }
                let snr = snr_db(&original.samples, &decoded.samples)?;
                println!("snr vs {}: {:.2} dB", reference.display(), snr);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze {
            input,
            out,
            dump_posteriors,
            dump_tree_posteriors,
            snr_sweep,
            sweep_out,
            model,
        } => {
            let config = build_config(None, &model)?;
            let signal = Signal::read_wav(&input)?;
            let analyzer = BalanceAnalyzer::new(config.depth, config.wavelet_moments)?;
            let mut csv = String::from("time_s,index_tonal,index_transient\n");
            for (t, tonal, transient) in analyzer.profile(&signal) {
                csv.push_str(&format!("{t:.6},{tonal:.6},{transient:.6}\n"));
            }
            write_atomic(&out, csv.as_bytes())?;
            println!("wrote balance profile to {}", out.display());

            if let Some(path) = dump_posteriors {
                let (mut padded, _) = signal.padded_to_multiple(config.frame_len);
                if padded.len() < 2 * config.frame_len {
                    padded.samples.resize(2 * config.frame_len, 0.0);
                }
                let mdct = hmwv_core::transforms::Mdct::new(config.frame_len)?;
                let grid = mdct.forward(&padded.samples, config.bands())?;
                let init = tonal::em_init(&grid, config.variance_model(), true)?;
                let fit = tonal::em_estimate(&grid, &init, config.em)?;
                let posteriors = tonal::posterior_grid(&grid, &fit.params)?;
                let mut csv = String::from("window,bin,coefficient,posterior_tonal\n");
                for k in 0..grid.window_count() {
                    for n in 0..grid.band_count() {
                        csv.push_str(&format!(
                            "{k},{n},{:.8},{:.8}\n",
                            grid.coeff(k, n),
                            posteriors.prob_tonal(k, n)
                        ));
                    }
                }
                write_atomic(&path, csv.as_bytes())?;
                println!("wrote tonal posteriors to {}", path.display());
            }
            if let Some(path) = dump_tree_posteriors {
                let frame_len = 1usize << config.depth;
                let (mut padded, _) = signal.padded_to_multiple(frame_len);
                if padded.is_empty() {
                    padded.samples.resize(frame_len, 0.0);
                }
                let wavelet = hmwv_core::transforms::Wavelet::daubechies(config.wavelet_moments)?;
                let trees: Vec<_> = padded
                    .samples
                    .chunks_exact(frame_len)
                    .map(|f| hmwv_core::transforms::dwt_forward(f, config.depth, &wavelet))
                    .collect::<hmwv_core::Result<_>>()?;
                let mut csv = String::from(
                    "frame,scale,index,coefficient,posterior_transient
",
                );
                for (group_start, group) in trees
                    .chunks(config.tree_group)
                    .enumerate()
                    .map(|(g, chunk)| (g * config.tree_group, chunk))
                {
                    let silent = group.iter().all(|t| t.max_abs_detail() == 0.0);
                    if silent {
                        continue;
                    }
                    let init = transient_init(group, config.depth);
                    let fit = hmwv_core::transient::em_estimate_tree(group, &init, config.tree_em)?;
                    for (offset, tree) in group.iter().enumerate() {
                        let post = hmwv_core::transient::upward_downward(tree, &fit.params)?;
                        for j in (1..=config.depth).rev() {
                            for k in 0..(1usize << (config.depth - j)) {
                                csv.push_str(&format!(
                                    "{},{j},{k},{:.8},{:.8}
",
                                    group_start + offset,
                                    tree.detail(j)[k],
                                    post.prob_transient(j, k)
                                ));
                            }
                        }
                    }
                }
                write_atomic(&path, csv.as_bytes())?;
                println!("wrote transient posteriors to {}", path.display());
            }
            if !snr_sweep.is_empty() {
                let path = sweep_out.unwrap_or_else(|| {
                    let mut name = out.file_name().unwrap_or_default().to_os_string();
                    name.push(".snr.csv");
                    out.with_file_name(name)
                });
                let mut csv = String::from("rate_kbps,stream_bytes,snr_db\n");
                for &rate in &snr_sweep {
                    let mut config = config.clone();
                    config.rate_kbps = rate;
                    let bytes = codec::encode(&signal, &config)?;
                    let decoded = codec::decode(&bytes)?;
                    let snr = snr_db(&signal.samples, &decoded.samples)?;
                    csv.push_str(&format!("{rate},{},{snr:.4}\n", bytes.len()));
                    println!("  {rate} kbit/s -> {snr:.2} dB ({} bytes)", bytes.len());
                }
                write_atomic(&path, csv.as_bytes())?;
                println!("wrote SNR sweep to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            model,
            out,
            windows,
            sample_rate,
            flags,
        } => {
            let config = build_config(None, &flags)?;
            let sidecar_path = {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".json");
                out.with_file_name(name)
            };
            let seed = flags.seed.unwrap_or(1) as u64;
            let sidecar = match model.as_str() {
                "tonal" => {
                    let params = default_tonal_params(&config)?;
                    let sim = sim::simulate_tonal(
                        &params,
                        windows.max(2),
                        config.frame_len,
                        sample_rate,
                        seed,
                    )?;
                    write_wav_atomic(&sim.signal, &out)?;
                    SimSidecar {
                        model,
                        seed,
                        tonal_params: Some(params),
                        tonal_map: Some(sim.map),
                        tree_params: None,
                        transient_maps: None,
                        wavelet_map: None,
                        mdct_map: None,
                    }
                }
                "transient" => {
                    let params = default_tree_params(config.depth)?;
                    let sim = sim::simulate_transient(
                        &params,
                        windows.max(1),
                        config.wavelet_moments,
                        sample_rate,
                        seed,
                    )?;
                    write_wav_atomic(&sim.signal, &out)?;
                    SimSidecar {
                        model,
                        seed,
                        tonal_params: None,
                        tonal_map: None,
                        tree_params: Some(params),
                        transient_maps: Some(sim.maps),
                        wavelet_map: None,
                        mdct_map: None,
                    }
                }
                "hybrid" => {
                    let analyzer = BalanceAnalyzer::new(config.depth, config.wavelet_moments)?;
                    let mut samples = Vec::new();
                    let mut wavelet_map = Vec::new();
                    let mut mdct_map = Vec::new();
                    for i in 0..windows.max(1) {
                        let frame = sim::simulate_hybrid(
                            &analyzer,
                            1.0,
                            1.0,
                            40,
                            40,
                            seed ^ ((i as u64) << 32),
                        )?;
                        let offset = i * analyzer.frame_len();
                        wavelet_map.extend(frame.wavelet_map.iter().map(|&x| x + offset));
                        mdct_map.extend(frame.mdct_map.iter().map(|&x| x + offset));
                        samples.extend(frame.frame);
                    }
                    let peak = samples.iter().fold(1.0f64, |m, s| m.max(s.abs()));
                    for s in &mut samples {
                        *s /= peak;
                    }
                    write_wav_atomic(&Signal::new(samples, sample_rate)?, &out)?;
                    SimSidecar {
                        model,
                        seed,
                        tonal_params: None,
                        tonal_map: None,
                        tree_params: None,
                        transient_maps: None,
                        wavelet_map: Some(wavelet_map),
                        mdct_map: Some(mdct_map),
                    }
                }
                other => bail!("unknown model `{other}` (tonal|transient|hybrid)"),
            };
            write_atomic(
                &sidecar_path,
                serde_json::to_string_pretty(&sidecar)?.as_bytes(),
            )?;
            println!(
                "simulated `{}` -> {} (+ {})",
                sidecar.model,
                out.display(),
                sidecar_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { suite, out } => {
            let Some(suite) = Suite::parse(&suite) else {
                bail!(
                    "unknown suite `{suite}`; expected one of {}",
                    Suite::NAMES.join("|")
                );
            };
            let results = validate::run(suite);
            let mut report = String::new();
            let mut all_passed = true;
            for result in &results {
                let verdict = if result.passed { "PASS" } else { "FAIL" };
                let line = format!("[{verdict}] {}: {}", result.name, result.detail);
                println!("{line}");
                report.push_str(&line);
                report.push('\n');
                all_passed &= result.passed;
            }
            if let Some(path) = out {
                write_atomic(&path, report.as_bytes())?;
            }
            if all_passed {
                println!("validation passed ({} checks)", results.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("validation FAILED");
                Ok(ExitCode::FAILURE)
            }
        }
    }
}

/// Robust per-scale initializer for the transient posterior dump.
fn transient_init(group: &[hmwv_core::transforms::WaveletTree], depth: u32) -> TreeParams {
    let max_abs = group
        .iter()
        .fold(0.0f64, |m, t| m.max(t.max_abs_detail()))
        .max(1e-12);
    let mut sigma_r = Vec::with_capacity(depth as usize);
    let mut sigma_t = Vec::with_capacity(depth as usize);
    for scale in 1..=depth {
        let mut mags: Vec<f64> = group
            .iter()
            .flat_map(|t| t.detail(scale).iter().map(|d| d.abs()))
            .collect();
        mags.sort_by(f64::total_cmp);
        let mad = (1.4826 * mags[mags.len() / 2]).max(1e-8 * max_abs);
        sigma_r.push(mad);
        sigma_t.push(8.0 * mad);
    }
    TreeParams::new(0.5, 0.5, sigma_t, sigma_r).expect("initializer is valid")
}

/// Simulation defaults: the documented tonal operating point (about 3.1%
/// tonal coefficients) with the standard decay profile.
fn default_tonal_params(config: &CodecConfig) -> Result<TonalParams> {
    let stay_tonal = 0.95;
    let stay_residual = 1.0 - (1.0 - stay_tonal) * 0.031 / 0.969;
    Ok(TonalParams::decay(
        config.bands(),
        stay_tonal,
        stay_residual,
        0.2,
        0.005,
        config.alpha,
        config.knee_bins(),
    )?)
}

/// Simulation defaults: sparse subcritical trees with strong nodes.
fn default_tree_params(depth: u32) -> Result<TreeParams> {
    Ok(TreeParams::new(
        0.25,
        0.45,
        (1..=depth)
            .map(|j| 0.05 * (j as f64 / 3.0).exp2())
            .collect(),
        (1..=depth)
            .map(|j| 0.0002 * (j as f64 / 3.0).exp2())
            .collect(),
    )?)
}
