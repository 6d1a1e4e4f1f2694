//! Time-domain signals, WAV ingestion and quality metrics.

use std::path::Path;

use crate::error::{Error, Result};

/// A mono waveform with double-precision samples, nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("signal contains NaN or infinite samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Returns a copy zero-padded so the length is a positive multiple of
    /// `frame_len`, together with the number of appended samples.
    pub fn padded_to_multiple(&self, frame_len: usize) -> (Signal, usize) {
        assert!(frame_len > 0);
        let mut samples = self.samples.clone();
        let rem = samples.len() % frame_len;
        let mut pad = if rem == 0 { 0 } else { frame_len - rem };
        if samples.len() + pad < frame_len {
            pad = frame_len - samples.len();
        }
        samples.resize(self.samples.len() + pad, 0.0);
        (
            Signal {
                samples,
                sample_rate: self.sample_rate,
            },
            pad,
        )
    }

    /// Reads a 16-bit PCM WAV file; stereo input is downmixed by averaging.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
        let reader =
            hound::WavReader::open(path.as_ref()).map_err(|e| Error::Wav(e.to_string()))?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::Wav(format!(
                "expected 16-bit PCM, got {:?} at {} bits",
                spec.sample_format, spec.bits_per_sample
            )));
        }
        let channels = spec.channels as usize;
        if channels == 0 || channels > 2 {
            return Err(Error::Wav(format!("unsupported channel count {channels}")));
        }
        let raw: std::result::Result<Vec<i16>, _> = reader.into_samples::<i16>().collect();
        let raw = raw.map_err(|e| Error::Wav(e.to_string()))?;
        let scale = 1.0 / 32768.0;
        let samples = if channels == 1 {
            raw.iter().map(|&s| s as f64 * scale).collect()
        } else {
            raw.chunks_exact(2)
                .map(|lr| (lr[0] as f64 + lr[1] as f64) * 0.5 * scale)
                .collect()
        };
        Signal::new(samples, spec.sample_rate)
    }

    /// Writes the signal as mono 16-bit PCM, clamping to full scale.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer =
            hound::WavWriter::create(path.as_ref(), spec).map_err(|e| Error::Wav(e.to_string()))?;
        for &s in &self.samples {
            let q = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
            writer
                .write_sample(q)
                .map_err(|e| Error::Wav(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::Wav(e.to_string()))?;
        Ok(())
    }
}

/// Signal-to-noise ratio in dB, `10 log10(||ref||^2 / ||ref - test||^2)`,
/// capped at 200 dB for an exact match.
pub fn snr_db(reference: &[f64], test: &[f64]) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::dims(format!(
            "snr operands differ in length: {} vs {}",
            reference.len(),
            test.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|s| s * s).sum();
    if ref_energy == 0.0 {
        return Err(Error::DegenerateInput("snr reference signal is zero"));
    }
    let err_energy: f64 = reference
        .iter()
        .zip(test)
        .map(|(r, t)| (r - t) * (r - t))
        .sum();
    if err_energy == 0.0 {
        return Ok(200.0);
    }
    Ok((10.0 * (ref_energy / err_energy).log10()).min(200.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_matches_constructed_noise_level() {
        let n = 4096;
        let reference: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
        let ref_energy: f64 = reference.iter().map(|s| s * s).sum();
        // Noise at exactly -20 dB relative to the reference.
        let noise_scale = (ref_energy / 100.0 / n as f64).sqrt();
        let test: Vec<f64> = reference
            .iter()
            .enumerate()
            .map(|(i, r)| r + noise_scale * if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let snr = snr_db(&reference, &test).unwrap();
        assert!((snr - 20.0).abs() < 0.01, "snr = {snr}");
    }

    #[test]
    fn snr_edge_cases() {
        let x = vec![1.0, -0.5, 0.25];
        assert_eq!(snr_db(&x, &x).unwrap(), 200.0);
        let zero = vec![0.0; 3];
        assert!((snr_db(&x, &zero).unwrap()).abs() < 1e-12);
        assert!(snr_db(&zero, &x).is_err());
    }

    #[test]
    fn wav_roundtrip_mono_and_stereo_downmix() {
        let dir = std::env::temp_dir().join("hmwv-signal-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mono.wav");
        let sig = Signal::new(
            (0..256).map(|i| 0.5 * (i as f64 * 0.1).sin()).collect(),
            44100,
        )
        .unwrap();
        sig.write_wav(&path).unwrap();
        let back = Signal::read_wav(&path).unwrap();
        assert_eq!(back.len(), sig.len());
        assert_eq!(back.sample_rate, 44100);
        let max_err = sig
            .samples
            .iter()
            .zip(&back.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1.0 / 32000.0, "max_err = {max_err}");

        // Stereo downmix by averaging.
        let spath = dir.join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&spath, spec).unwrap();
        for i in 0..64i16 {
            w.write_sample(i * 100).unwrap();
            w.write_sample(-i * 100).unwrap();
        }
        w.finalize().unwrap();
        let s = Signal::read_wav(&spath).unwrap();
        assert_eq!(s.len(), 64);
        assert!(s.samples.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn padding_reaches_frame_multiple() {
        let sig = Signal::new(vec![1.0; 100], 8000).unwrap();
        let (padded, pad) = sig.padded_to_multiple(64);
        assert_eq!(pad, 28);
        assert_eq!(padded.len(), 128);
        assert!(padded.samples[100..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert!(Signal::new(vec![0.0, f64::NAN], 8000).is_err());
        assert!(Signal::new(vec![0.0], 0).is_err());
    }
}
