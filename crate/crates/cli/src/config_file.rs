//! Plain `key=value` configuration files mirroring every codec default.
//! Lines starting with `#` are comments; later keys win; command-line
//! flags override the file.

use anyhow::{bail, Context, Result};
use std::path::Path;

use hmwv_core::codec::{CodecConfig, QuantizerKind};

pub fn apply_file(config: &mut CodecConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key=value", path.display(), lineno + 1);
        };
        apply(config, key.trim(), value.trim())
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
    }
    Ok(())
}

pub fn apply(config: &mut CodecConfig, key: &str, value: &str) -> Result<()> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse()
            .map_err(|e| anyhow::anyhow!("bad value for {key}: {e}"))
    }
    match key {
        "rate_kbps" => config.rate_kbps = parse(key, value)?,
        "frame_len" => config.frame_len = parse(key, value)?,
        "depth" => config.depth = parse(key, value)?,
        "band_count" => config.band_count = parse(key, value)?,
        "superframe_windows" => config.superframe_windows = parse(key, value)?,
        "tree_group" => config.tree_group = parse(key, value)?,
        "alpha" => config.alpha = parse(key, value)?,
        "n0" | "knee" => config.knee = parse(key, value)?,
        "decay" => config.decay = parse(key, value)?,
        "quantizer" => {
            config.quantizer = match value {
                "uniform" => QuantizerKind::Uniform,
                "lloydmax" | "lloyd-max" => QuantizerKind::LloydMax,
                other => bail!("unknown quantizer `{other}` (uniform|lloydmax)"),
            }
        }
        "em_tol" => config.em.tol = parse(key, value)?,
        "em_max_iter" => config.em.max_iter = parse(key, value)?,
        "tree_em_tol" => config.tree_em.tol = parse(key, value)?,
        "tree_em_max_iter" => config.tree_em.max_iter = parse(key, value)?,
        "lpc_order" => config.lpc_order = parse(key, value)?,
        "nominal_coeff_bits" => config.nominal_coeff_bits = parse(key, value)?,
        "budget_floor" => config.budget_floor = parse(key, value)?,
        "seed" | "excitation_seed" => config.excitation_seed = parse(key, value)?,
        "wavelet_moments" => config.wavelet_moments = parse(key, value)?,
        "weight_mdct_selection" => config.weight_mdct_selection = parse(key, value)?,
        "min_tonal_persistence" => config.min_tonal_persistence = parse(key, value)?,
        "keep_headroom" => config.keep_headroom = parse(key, value)?,
        "max_useful_coeff_bits" => config.max_useful_coeff_bits = parse(key, value)?,
        other => bail!("unknown configuration key `{other}`"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_rejects_unknown() {
        let mut config = CodecConfig::default();
        apply(&mut config, "rate_kbps", "48").unwrap();
        apply(&mut config, "quantizer", "lloydmax").unwrap();
        apply(&mut config, "n0", "32.0").unwrap();
        assert_eq!(config.rate_kbps, 48.0);
        assert_eq!(config.quantizer, QuantizerKind::LloydMax);
        assert_eq!(config.knee, 32.0);
        assert!(apply(&mut config, "bogus", "1").is_err());
        assert!(apply(&mut config, "depth", "ten").is_err());
    }
}
