//! Dyadic discrete wavelet transform with periodic boundary handling,
//! organized as the coefficient tree consumed by the transient model.

use crate::error::{Error, Result};

use super::daubechies::daubechies_lowpass;

/// Orthonormal two-channel filterbank.
#[derive(Debug, Clone)]
pub struct Wavelet {
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
    name: String,
}

impl Wavelet {
    /// Daubechies wavelet with `moments` vanishing moments (`db<moments>`,
    /// filter length `2 * moments`).
    pub fn daubechies(moments: usize) -> Result<Self> {
        let lowpass = daubechies_lowpass(moments)?;
        let taps = lowpass.len();
        let highpass = (0..taps)
            .map(|k| {
                let v = lowpass[taps - 1 - k];
                if k % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        Ok(Self {
            lowpass,
            highpass,
            name: format!("db{moments}"),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

/// Full-depth wavelet decomposition of a `2^depth` frame.
///
/// Scale `j` runs from 1 (finest, `2^(depth-1)` nodes) to `depth` (the root
/// node); the children of node `(j, k)` are `(j-1, 2k)` and `(j-1, 2k+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletTree {
    scaling: f64,
    /// `details[j - 1]` holds scale `j`.
    details: Vec<Vec<f64>>,
    depth: u32,
}

impl WaveletTree {
    pub fn new(scaling: f64, details: Vec<Vec<f64>>) -> Result<Self> {
        let depth = details.len() as u32;
        if depth == 0 {
            return Err(Error::invalid("wavelet tree needs at least one scale"));
        }
        for (i, level) in details.iter().enumerate() {
            let j = i as u32 + 1;
            let expect = 1usize << (depth - j);
            if level.len() != expect {
                return Err(Error::dims(format!(
                    "scale {j} holds {} coefficients, expected {expect}",
                    level.len()
                )));
            }
        }
        Ok(Self {
            scaling,
            details,
            depth,
        })
    }

    pub fn zero(depth: u32) -> Self {
        let details = (1..=depth)
            .map(|j| vec![0.0; 1usize << (depth - j)])
            .collect();
        Self {
            scaling: 0.0,
            details,
            depth,
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn set_scaling(&mut self, v: f64) {
        self.scaling = v;
    }

    /// Detail coefficients at scale `j` (1-based, `depth` = root scale).
    pub fn detail(&self, j: u32) -> &[f64] {
        &self.details[(j - 1) as usize]
    }

    pub fn detail_mut(&mut self, j: u32) -> &mut [f64] {
        &mut self.details[(j - 1) as usize]
    }

    /// Number of detail nodes, `2^depth - 1`.
    pub fn node_count(&self) -> usize {
        (1usize << self.depth) - 1
    }

    pub fn frame_len(&self) -> usize {
        1usize << self.depth
    }

    pub fn energy(&self) -> f64 {
        self.scaling * self.scaling
            + self
                .details
                .iter()
                .flat_map(|l| l.iter())
                .map(|d| d * d)
                .sum::<f64>()
    }

    /// All coefficients (scaling first, then scales coarse to fine).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frame_len());
        out.push(self.scaling);
        for j in (1..=self.depth).rev() {
            out.extend_from_slice(self.detail(j));
        }
        out
    }

    pub fn max_abs_detail(&self) -> f64 {
        self.details
            .iter()
            .flat_map(|l| l.iter())
            .fold(0.0, |acc, d| acc.max(d.abs()))
    }
}

fn analysis_step(input: &[f64], wavelet: &Wavelet) -> (Vec<f64>, Vec<f64>) {
    let n = input.len();
    let half = n / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for k in 0..half {
        let mut a = 0.0;
        let mut d = 0.0;
        for (m, (&h, &g)) in wavelet.lowpass.iter().zip(&wavelet.highpass).enumerate() {
            let s = input[(2 * k + m) % n];
            a += h * s;
            d += g * s;
        }
        approx[k] = a;
        detail[k] = d;
    }
    (approx, detail)
}

fn synthesis_step(approx: &[f64], detail: &[f64], wavelet: &Wavelet) -> Vec<f64> {
    let n = approx.len() * 2;
    let mut out = vec![0.0; n];
    for k in 0..approx.len() {
        for (m, (&h, &g)) in wavelet.lowpass.iter().zip(&wavelet.highpass).enumerate() {
            out[(2 * k + m) % n] += h * approx[k] + g * detail[k];
        }
    }
    out
}

/// Forward transform of a frame of exactly `2^depth` samples.
pub fn dwt_forward(frame: &[f64], depth: u32, wavelet: &Wavelet) -> Result<WaveletTree> {
    if depth == 0 {
        return Err(Error::invalid("wavelet depth must be at least 1"));
    }
    let expect = 1usize << depth;
    if frame.len() != expect {
        return Err(Error::dims(format!(
            "frame length {} is not 2^{depth} = {expect}",
            frame.len()
        )));
    }
    let mut approx = frame.to_vec();
    let mut details = Vec::with_capacity(depth as usize);
    for _ in 1..=depth {
        let (a, d) = analysis_step(&approx, wavelet);
        details.push(d);
        approx = a;
    }
    WaveletTree::new(approx[0], details)
}

/// Exact inverse of [`dwt_forward`].
pub fn dwt_inverse(tree: &WaveletTree, wavelet: &Wavelet) -> Vec<f64> {
    let mut approx = vec![tree.scaling];
    for j in (1..=tree.depth).rev() {
        approx = synthesis_step(&approx, tree.detail(j), wavelet);
    }
    approx
}
