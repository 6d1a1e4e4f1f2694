//! Lapped orthogonal MDCT built from local cosine atoms with the maximally
//! smooth sine window (50% overlap, DCT-IV core phase). Frames are laid out
//! circularly over the analyzed block, so the discrete atom family is an
//! exact orthonormal basis of the block and Parseval holds to rounding.

use crate::error::{Error, Result};

/// Time-frequency coefficient grid `Y[k][n]`, window index `k` by bin `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MdctGrid {
    /// Bin-major storage: `data[n * window_count + k]`.
    data: Vec<f64>,
    window_count: usize,
    band_count: usize,
    window_len: usize,
}

impl MdctGrid {
    pub fn zero(window_count: usize, band_count: usize, window_len: usize) -> Self {
        Self {
            data: vec![0.0; window_count * band_count],
            window_count,
            band_count,
            window_len,
        }
    }

    pub fn window_count(&self) -> usize {
        self.window_count
    }

    pub fn band_count(&self) -> usize {
        self.band_count
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn signal_len(&self) -> usize {
        self.window_count * self.window_len
    }

    pub fn coeff(&self, window: usize, bin: usize) -> f64 {
        self.data[bin * self.window_count + window]
    }

    pub fn set_coeff(&mut self, window: usize, bin: usize, value: f64) {
        self.data[bin * self.window_count + window] = value;
    }

    /// All coefficients of one frequency bin, ordered by window index.
    pub fn bin_row(&self, bin: usize) -> &[f64] {
        let k = self.window_count;
        &self.data[bin * k..(bin + 1) * k]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c * c).sum()
    }

    pub fn coeff_count(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// MDCT analysis/synthesis engine for one window length.
#[derive(Debug, Clone)]
pub struct Mdct {
    frame_len: usize,
    window: Vec<f64>,
    /// Bin-major atoms: `cos_table[n * 2l + u]` holds
    /// `sqrt(2/l) cos((pi/l)(u + 1/2 + l/2)(n + 1/2))`.
    cos_table: Vec<f64>,
}

impl Mdct {
    /// `frame_len` is the hop `l`; the analysis window spans `2l` samples.
    pub fn new(frame_len: usize) -> Result<Self> {
        if frame_len == 0 || frame_len % 2 != 0 {
            return Err(Error::invalid(format!(
                "mdct frame length must be a positive even integer, got {frame_len}"
            )));
        }
        let l = frame_len;
        let window: Vec<f64> = (0..2 * l)
            .map(|u| (std::f64::consts::PI * (u as f64 + 0.5) / (2.0 * l as f64)).sin())
            .collect();
        // Fourth window condition: the squared translates tile unity.
        for u in 0..l {
            let s = window[u] * window[u] + window[u + l] * window[u + l];
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "window admissibility violated at sample {u}: {s}"
                )));
            }
        }
        let scale = (2.0 / l as f64).sqrt();
        let mut cos_table = vec![0.0; 2 * l * l];
        for n in 0..l {
            for u in 0..2 * l {
                let t = u as f64 + 0.5 + l as f64 / 2.0;
                cos_table[n * 2 * l + u] =
                    scale * (std::f64::consts::PI / l as f64 * t * (n as f64 + 0.5)).cos();
            }
        }
        Ok(Self {
            frame_len,
            window,
            cos_table,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    fn check_band_count(&self, band_count: usize) -> Result<()> {
        if band_count == 0 || band_count > self.frame_len {
            return Err(Error::invalid(format!(
                "band count {band_count} outside 1..={}",
                self.frame_len
            )));
        }
        Ok(())
    }

    /// Analysis of a block whose length is a multiple of the frame length
    /// (at least two frames). Keeping `band_count < frame_len` truncates the
    /// expansion to the low bins; only the full band set is a basis.
    pub fn forward(&self, samples: &[f64], band_count: usize) -> Result<MdctGrid> {
        self.check_band_count(band_count)?;
        let l = self.frame_len;
        let len = samples.len();
        if len % l != 0 || len < 2 * l {
            return Err(Error::dims(format!(
                "signal length {len} is not a multiple of {l} covering at least two frames"
            )));
        }
        let window_count = len / l;
        let mut grid = MdctGrid::zero(window_count, band_count, l);
        let mut buf = vec![0.0; 2 * l];
        for k in 0..window_count {
            let origin = (k * l + len - l / 2) % len;
            for (u, b) in buf.iter_mut().enumerate() {
                *b = samples[(origin + u) % len] * self.window[u];
            }
            for n in 0..band_count {
                let atom = &self.cos_table[n * 2 * l..(n + 1) * 2 * l];
                let acc: f64 = buf.iter().zip(atom).map(|(b, a)| b * a).sum();
                grid.set_coeff(k, n, acc);
            }
        }
        Ok(grid)
    }

    /// Synthesis by windowed overlap-add; exact transpose of [`Self::forward`].
    pub fn inverse(&self, grid: &MdctGrid) -> Result<Vec<f64>> {
        if grid.window_len() != self.frame_len {
            return Err(Error::dims(format!(
                "grid window length {} does not match engine frame length {}",
                grid.window_len(),
                self.frame_len
            )));
        }
        self.check_band_count(grid.band_count())?;
        if grid.window_count() < 2 {
            return Err(Error::dims(
                "grid must span at least two windows".to_string(),
            ));
        }
        let l = self.frame_len;
        let len = grid.signal_len();
        let mut out = vec![0.0; len];
        let mut frame = vec![0.0; 2 * l];
        for k in 0..grid.window_count() {
            frame.fill(0.0);
            for n in 0..grid.band_count() {
                let y = grid.coeff(k, n);
                if y == 0.0 {
                    continue;
                }
                let atom = &self.cos_table[n * 2 * l..(n + 1) * 2 * l];
                for (f, &a) in frame.iter_mut().zip(atom) {
                    *f += y * a;
                }
            }
            let origin = (k * l + len - l / 2) % len;
            for (u, &f) in frame.iter().enumerate() {
                out[(origin + u) % len] += f * self.window[u];
            }
        }
        Ok(out)
    }

    /// Waveform of the single basis atom at `(window, bin)` on a block of
    /// `window_count` frames.
    pub fn atom(&self, window: usize, bin: usize, window_count: usize) -> Result<Vec<f64>> {
        let mut grid = MdctGrid::zero(window_count, self.frame_len, self.frame_len);
        grid.set_coeff(window, bin, 1.0);
        self.inverse(&grid)
    }
}
