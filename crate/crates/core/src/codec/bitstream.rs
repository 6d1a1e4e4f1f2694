//! Bit-exact stream container: fixed little-endian header followed by
//! length-prefixed superframe sections in a fixed order. Model parameters
//! travel quantized (12-bit probabilities, 16-bit log-domain deviations);
//! both sides of the codec work from the dequantized values, so every
//! derived quantity (Golomb moduli, per-bin rates) matches bit for bit.

use crate::codec::quant::QuantizerKind;
use crate::error::{Error, Result};
use crate::tonal::{equilibrium_frequency, TonalBin, TonalParams, VarianceModel};
use crate::transient::TreeParams;

pub const MAGIC: [u8; 4] = *b"HMWV";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 4 + 2 + 1 + 2 + 1 + 4 + 4;

/// Superframe section names, in stream order.
pub const SECTION_NAMES: [&str; 6] = [
    "params",
    "tonal-map",
    "tonal-coeffs",
    "transient-maps",
    "transient-coeffs",
    "lpc",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamHeader {
    pub sample_rate: u32,
    pub frame_len: u16,
    pub depth: u8,
    pub pad_len: u16,
    pub superframe_windows: u8,
    pub frame_count: u32,
    pub excitation_seed: u32,
}

impl StreamHeader {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&self.frame_len.to_le_bytes());
        out.push(self.depth);
        out.extend_from_slice(&self.pad_len.to_le_bytes());
        out.push(self.superframe_windows);
        out.extend_from_slice(&self.frame_count.to_le_bytes());
        out.extend_from_slice(&self.excitation_seed.to_le_bytes());
    }

    pub fn read(cursor: &mut ByteCursor<'_>) -> Result<Self> {
        let magic = cursor.take(4, "header")?;
        if magic != MAGIC {
            return Err(Error::stream("header", "bad magic"));
        }
        let version = cursor.u8("header")?;
        if version != VERSION {
            return Err(Error::stream(
                "header",
                format!("unsupported version {version}"),
            ));
        }
        let header = StreamHeader {
            sample_rate: cursor.u32("header")?,
            frame_len: cursor.u16("header")?,
            depth: cursor.u8("header")?,
            pad_len: cursor.u16("header")?,
            superframe_windows: cursor.u8("header")?,
            frame_count: cursor.u32("header")?,
            excitation_seed: cursor.u32("header")?,
        };
        if header.frame_len == 0
            || header.depth == 0
            || header.superframe_windows == 0
            || header.frame_count == 0
            || header.sample_rate == 0
        {
            return Err(Error::stream("header", "zero-valued dimension field"));
        }
        Ok(header)
    }
}

#[derive(Debug, Clone)]
pub struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::stream(
                section,
                format!(
                    "needed {n} bytes at offset {}, stream holds {}",
                    self.pos,
                    self.bytes.len()
                ),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    pub fn u16(&mut self, section: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, section)?.try_into().unwrap(),
        ))
    }

    pub fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, section)?.try_into().unwrap(),
        ))
    }

    pub fn f32(&mut self, section: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4, section)?.try_into().unwrap(),
        ))
    }

    /// Reads one length-prefixed section payload.
    pub fn section(&mut self, name: &'static str) -> Result<&'a [u8]> {
        let len = self.u32(name)? as usize;
        self.take(len, name)
    }
}

pub fn write_section(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

// ---------------------------------------------------------------------------
// Scalar side-info codes
// ---------------------------------------------------------------------------

/// 12-bit probability code, clamped away from the degenerate endpoints.
pub fn prob_to_code(p: f64) -> u16 {
    ((p * 4095.0).round() as i64).clamp(1, 4094) as u16
}

pub fn code_to_prob(q: u16) -> f64 {
    (q.min(4095) as f64) / 4095.0
}

/// 16-bit log-domain deviation code; 0 encodes an exact zero.
pub fn sigma_to_code(sigma: f64) -> u16 {
    if !(sigma > 0.0) {
        return 0;
    }
    ((sigma.log2() + 40.0) * 512.0).round().clamp(1.0, 65535.0) as u16
}

pub fn code_to_sigma(q: u16) -> f64 {
    if q == 0 {
        0.0
    } else {
        (q as f64 / 512.0 - 40.0).exp2()
    }
}

/// 16.16 fixed-point rate code.
pub fn rate_to_code(rate: f64) -> u32 {
    (rate.max(0.0) * 65536.0).round().min(u32::MAX as f64) as u32
}

pub fn code_to_rate(q: u32) -> f64 {
    q as f64 / 65536.0
}

/// Rate-shift code: theta spans [-24, 8) so the integerized rates can be
/// pushed down as well as up when the retained count differs from the
/// model's expected occupancy.
pub fn theta_to_code(theta: f64) -> u16 {
    (((theta + 24.0) / 32.0).clamp(0.0, 1.0) * 65536.0)
        .floor()
        .min(65535.0) as u16
}

pub fn code_to_theta(q: u16) -> f64 {
    q as f64 / 65536.0 * 32.0 - 24.0
}

/// 10-bit reflection-coefficient code over (-1, 1).
pub fn reflection_to_code(k: f64) -> u16 {
    (((k + 1.0) / 2.0 * 1023.0).round() as i64).clamp(0, 1023) as u16
}

pub fn code_to_reflection(q: u16) -> f64 {
    (q.min(1023) as f64) / 1023.0 * 2.0 - 1.0
}

// ---------------------------------------------------------------------------
// Params section
// ---------------------------------------------------------------------------

pub const VARIANCE_MODE_UNIFORM: u8 = 0;
pub const VARIANCE_MODE_DECAY: u8 = 1;

/// Quantized tonal side information for one superframe.
#[derive(Debug, Clone, PartialEq)]
pub struct TonalSideInfo {
    pub band_count: u16,
    pub stay_tonal_q: u16,
    pub stay_residual_q: u16,
    pub variance_mode: u8,
    pub sigma_tonal_q: u16,
    pub sigma_residual_q: u16,
    /// 8.8 fixed-point decay exponent (decay mode only).
    pub alpha_q: u16,
    /// 4.12-style knee code: knee * 16 (decay mode only).
    pub knee_q: u16,
    pub mean_rate_q: u32,
    pub theta_q: u16,
}

impl TonalSideInfo {
    /// Quantizes an estimated model, reducing it to the scale-plus-profile
    /// form the stream carries.
    pub fn from_params(params: &TonalParams, mean_rate: f64, theta: f64) -> Self {
        let bin0 = params.bin(0);
        let weight0 = params.variance_model().weight(0);
        let (variance_mode, alpha_q, knee_q) = match params.variance_model() {
            VarianceModel::Decay { alpha, knee } => (
                VARIANCE_MODE_DECAY,
                ((alpha * 256.0).round() as i64).clamp(0, 65535) as u16,
                ((knee * 16.0).round() as i64).clamp(1, 65535) as u16,
            ),
            _ => (VARIANCE_MODE_UNIFORM, 0, 0),
        };
        TonalSideInfo {
            band_count: params.band_count() as u16,
            stay_tonal_q: prob_to_code(bin0.stay_tonal),
            stay_residual_q: prob_to_code(bin0.stay_residual),
            variance_mode,
            sigma_tonal_q: sigma_to_code(bin0.sigma_tonal / weight0),
            sigma_residual_q: sigma_to_code(bin0.sigma_residual / weight0),
            alpha_q,
            knee_q,
            mean_rate_q: rate_to_code(mean_rate),
            theta_q: theta_to_code(theta),
        }
    }

    /// Rebuilds the dequantized model both codec sides compute with.
    pub fn to_params(&self) -> Result<TonalParams> {
        let stay_tonal = code_to_prob(self.stay_tonal_q);
        let stay_residual = code_to_prob(self.stay_residual_q);
        let initial = equilibrium_frequency(stay_tonal, stay_residual)?;
        let sigma_t = code_to_sigma(self.sigma_tonal_q).max(1e-12);
        let sigma_r = code_to_sigma(self.sigma_residual_q).max(1e-12);
        let sigma_t = sigma_t.max(sigma_r);
        let n = self.band_count as usize;
        match self.variance_mode {
            VARIANCE_MODE_UNIFORM => {
                let bin = TonalBin {
                    stay_tonal,
                    stay_residual,
                    initial_tonal: initial,
                    sigma_tonal: sigma_t,
                    sigma_residual: sigma_r,
                };
                TonalParams::from_bins(vec![bin; n], VarianceModel::Uniform, true)
            }
            VARIANCE_MODE_DECAY => {
                let alpha = self.alpha_q as f64 / 256.0;
                let knee = self.knee_q.max(1) as f64 / 16.0;
                TonalParams::decay(n, stay_tonal, stay_residual, sigma_t, sigma_r, alpha, knee)
            }
            other => Err(Error::stream(
                "params",
                format!("unknown variance mode {other}"),
            )),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.band_count.to_le_bytes());
        out.extend_from_slice(&self.stay_tonal_q.to_le_bytes());
        out.extend_from_slice(&self.stay_residual_q.to_le_bytes());
        out.push(self.variance_mode);
        out.extend_from_slice(&self.sigma_tonal_q.to_le_bytes());
        out.extend_from_slice(&self.sigma_residual_q.to_le_bytes());
        out.extend_from_slice(&self.alpha_q.to_le_bytes());
        out.extend_from_slice(&self.knee_q.to_le_bytes());
        out.extend_from_slice(&self.mean_rate_q.to_le_bytes());
        out.extend_from_slice(&self.theta_q.to_le_bytes());
    }

    fn read(cursor: &mut ByteCursor<'_>) -> Result<Self> {
        Ok(TonalSideInfo {
            band_count: cursor.u16("params")?,
            stay_tonal_q: cursor.u16("params")?,
            stay_residual_q: cursor.u16("params")?,
            variance_mode: cursor.u8("params")?,
            sigma_tonal_q: cursor.u16("params")?,
            sigma_residual_q: cursor.u16("params")?,
            alpha_q: cursor.u16("params")?,
            knee_q: cursor.u16("params")?,
            mean_rate_q: cursor.u32("params")?,
            theta_q: cursor.u16("params")?,
        })
    }

    const WIRE_LEN: usize = 2 * 8 + 1 + 4;
}

/// Quantized tree side information for one group of consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSideInfo {
    pub root_q: u16,
    pub persistence_q: u16,
    pub sigma_tonal_q: Vec<u16>,
    pub sigma_residual_q: Vec<u16>,
    pub mean_rate_q: u32,
    pub theta_q: u16,
}

impl TreeSideInfo {
    pub fn from_params(params: &TreeParams, mean_rate: f64, theta: f64) -> Self {
        TreeSideInfo {
            root_q: prob_to_code(params.root_transient),
            persistence_q: prob_to_code(params.persistence),
            sigma_tonal_q: params
                .sigmas_transient()
                .iter()
                .map(|&s| sigma_to_code(s))
                .collect(),
            sigma_residual_q: params
                .sigmas_residual()
                .iter()
                .map(|&s| sigma_to_code(s))
                .collect(),
            mean_rate_q: rate_to_code(mean_rate),
            theta_q: theta_to_code(theta),
        }
    }

    pub fn to_params(&self) -> Result<TreeParams> {
        let sigma_r: Vec<f64> = self
            .sigma_residual_q
            .iter()
            .map(|&q| code_to_sigma(q).max(1e-12))
            .collect();
        let sigma_t: Vec<f64> = self
            .sigma_tonal_q
            .iter()
            .zip(&sigma_r)
            .map(|(&q, &r)| code_to_sigma(q).max(r))
            .collect();
        TreeParams::new(
            code_to_prob(self.root_q),
            code_to_prob(self.persistence_q),
            sigma_t,
            sigma_r,
        )
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.root_q.to_le_bytes());
        out.extend_from_slice(&self.persistence_q.to_le_bytes());
        for (&t, &r) in self.sigma_tonal_q.iter().zip(&self.sigma_residual_q) {
            out.extend_from_slice(&t.to_le_bytes());
            out.extend_from_slice(&r.to_le_bytes());
        }
        out.extend_from_slice(&self.mean_rate_q.to_le_bytes());
        out.extend_from_slice(&self.theta_q.to_le_bytes());
    }

    fn read(cursor: &mut ByteCursor<'_>, depth: usize) -> Result<Self> {
        let root_q = cursor.u16("params")?;
        let persistence_q = cursor.u16("params")?;
        let mut sigma_tonal_q = Vec::with_capacity(depth);
        let mut sigma_residual_q = Vec::with_capacity(depth);
        for _ in 0..depth {
            sigma_tonal_q.push(cursor.u16("params")?);
            sigma_residual_q.push(cursor.u16("params")?);
        }
        Ok(TreeSideInfo {
            root_q,
            persistence_q,
            sigma_tonal_q,
            sigma_residual_q,
            mean_rate_q: cursor.u32("params")?,
            theta_q: cursor.u16("params")?,
        })
    }

    fn wire_len(depth: usize) -> usize {
        2 + 2 + 4 * depth + 4 + 2
    }
}

/// Everything the decoder needs to parse one superframe.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsSection {
    pub tonal: TonalSideInfo,
    pub trees: Vec<TreeSideInfo>,
    pub lpc_order: u8,
    pub quantizer: QuantizerKind,
}

impl ParamsSection {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.tonal.write(&mut out);
        out.push(self.lpc_order);
        out.push(match self.quantizer {
            QuantizerKind::Uniform => 0,
            QuantizerKind::LloydMax => 1,
        });
        out.push(self.trees.len() as u8);
        for tree in &self.trees {
            tree.write(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], depth: usize) -> Result<Self> {
        let mut cursor = ByteCursor::new(bytes);
        let tonal = TonalSideInfo::read(&mut cursor)?;
        let lpc_order = cursor.u8("params")?;
        let quantizer = match cursor.u8("params")? {
            0 => QuantizerKind::Uniform,
            1 => QuantizerKind::LloydMax,
            other => {
                return Err(Error::stream(
                    "params",
                    format!("unknown quantizer code {other}"),
                ))
            }
        };
        let group_count = cursor.u8("params")? as usize;
        let mut trees = Vec::with_capacity(group_count);
        for _ in 0..group_count {
            trees.push(TreeSideInfo::read(&mut cursor, depth)?);
        }
        Ok(ParamsSection {
            tonal,
            trees,
            lpc_order,
            quantizer,
        })
    }

    /// Exact serialized size, known before the section is built.
    pub fn wire_len(depth: usize, group_count: usize) -> usize {
        TonalSideInfo::WIRE_LEN + 3 + group_count * TreeSideInfo::wire_len(depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_roundtrip_and_corruption() {
        let header = StreamHeader {
            sample_rate: 44100,
            frame_len: 1024,
            depth: 10,
            pad_len: 512,
            superframe_windows: 32,
            frame_count: 128,
            excitation_seed: 0xDEADBEEF,
        };
        let mut bytes = Vec::new();
        header.write(&mut bytes);
        assert_eq!(bytes.len(), HEADER_LEN);
        let back = StreamHeader::read(&mut ByteCursor::new(&bytes)).unwrap();
        assert_eq!(back, header);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(StreamHeader::read(&mut ByteCursor::new(&bad)).is_err());
        assert!(StreamHeader::read(&mut ByteCursor::new(&bytes[..10])).is_err());
    }

    #[test]
    fn params_section_roundtrip() {
        let tonal = TonalParams::decay(64, 0.93, 0.97, 1.5, 0.05, 1.0, 8.0).unwrap();
        let tree = TreeParams::uniform(6, 0.4, 0.6, 2.0, 0.1).unwrap();
        let section = ParamsSection {
            tonal: TonalSideInfo::from_params(&tonal, 3.25, 0.5),
            trees: vec![TreeSideInfo::from_params(&tree, 2.0, 0.25); 2],
            lpc_order: 10,
            quantizer: QuantizerKind::Uniform,
        };
        let bytes = section.to_bytes();
        assert_eq!(bytes.len(), ParamsSection::wire_len(6, 2));
        let back = ParamsSection::from_bytes(&bytes, 6).unwrap();
        assert_eq!(back, section);

        // Dequantized parameters stay close to the originals.
        let params = back.tonal.to_params().unwrap();
        assert_eq!(params.band_count(), 64);
        assert!((params.bin(0).stay_tonal - 0.93).abs() < 1e-3);
        assert!((params.bin(0).sigma_tonal - 1.5).abs() / 1.5 < 2e-3);
        let tp = back.trees[0].to_params().unwrap();
        assert!((tp.root_transient - 0.4).abs() < 1e-3);
        assert!((tp.sigma_transient(3) - 2.0).abs() / 2.0 < 2e-3);
    }

    #[test]
    fn scalar_codes_cover_their_ranges() {
        assert_eq!(code_to_sigma(0), 0.0);
        for sigma in [1e-9, 0.01, 1.0, 123.0, 1e9] {
            let back = code_to_sigma(sigma_to_code(sigma));
            assert!((back - sigma).abs() / sigma < 2e-3, "{sigma} -> {back}");
        }
        for p in [0.0001, 0.25, 0.5, 0.9999] {
            assert!((code_to_prob(prob_to_code(p)) - p).abs() < 2.5e-4);
        }
        for k in [-0.999, -0.2, 0.0, 0.77] {
            assert!((code_to_reflection(reflection_to_code(k)) - k).abs() < 1e-3);
        }
    }
}
