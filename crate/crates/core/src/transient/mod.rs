//! Hidden Markov tree over wavelet detail coefficients.
//!
//! States propagate coarse-to-fine along the dyadic tree; the
//! residual-to-transient transition is forbidden (the taboo transition), so
//! transient significance maps are connected rooted subtrees and their node
//! counts follow a Galton-Watson branching law. The module provides those
//! closed-form statistics, the tree-map prefix code, exact upward-downward
//! smoothing, MAP decoding, EM estimation, posterior thresholding and the
//! per-scale bit allocation.

mod infer;

pub use infer::{
    em_estimate_tree, heap_to_scale, map_states_tree, scale_to_heap, threshold_select_tree,
    upward_downward, NodeState, TreeEmOptions, TreeEmOutcome, TreePosteriors,
};

use serde::{Deserialize, Serialize};

use crate::alloc;
use crate::bitio::{BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::tonal::RateAllocation;

/// How the scale persistence varies along the tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PersistenceProfile {
    /// One persistence probability for every scale transition (default).
    Constant,
    /// Persistence shrinks geometrically with distance from the root:
    /// the transition into the d-th level below the root uses
    /// `persistence^d`.
    Geometric,
}

/// Parameter set of the transient tree model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Transient probability of the root node (coarsest scale).
    pub root_transient: f64,
    /// Scale persistence `P(child = T | parent = T)`.
    pub persistence: f64,
    profile: PersistenceProfile,
    /// Per-scale deviations, index `j - 1` for scale `j`.
    sigma_transient: Vec<f64>,
    sigma_residual: Vec<f64>,
    depth: u32,
}

impl TreeParams {
    pub fn new(
        root_transient: f64,
        persistence: f64,
        sigma_transient: Vec<f64>,
        sigma_residual: Vec<f64>,
    ) -> Result<Self> {
        Self::with_profile(
            root_transient,
            persistence,
            PersistenceProfile::Constant,
            sigma_transient,
            sigma_residual,
        )
    }

    pub fn with_profile(
        root_transient: f64,
        persistence: f64,
        profile: PersistenceProfile,
        sigma_transient: Vec<f64>,
        sigma_residual: Vec<f64>,
    ) -> Result<Self> {
        for (name, p) in [
            ("root_transient", root_transient),
            ("persistence", persistence),
        ] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if sigma_transient.is_empty() || sigma_transient.len() != sigma_residual.len() {
            return Err(Error::dims(format!(
                "deviation vectors must share a positive length, got {} and {}",
                sigma_transient.len(),
                sigma_residual.len()
            )));
        }
        for (j, (st, sr)) in sigma_transient.iter().zip(&sigma_residual).enumerate() {
            if !(*sr > 0.0) || !(st >= sr) || !st.is_finite() {
                return Err(Error::invalid(format!(
                    "scale {} needs sigma_transient >= sigma_residual > 0, got {st} and {sr}",
                    j + 1
                )));
            }
        }
        let depth = sigma_transient.len() as u32;
        Ok(Self {
            root_transient,
            persistence,
            profile,
            sigma_transient,
            sigma_residual,
            depth,
        })
    }

    /// Scale-independent deviations at every scale.
    pub fn uniform(
        depth: u32,
        root_transient: f64,
        persistence: f64,
        sigma_transient: f64,
        sigma_residual: f64,
    ) -> Result<Self> {
        Self::new(
            root_transient,
            persistence,
            vec![sigma_transient; depth as usize],
            vec![sigma_residual; depth as usize],
        )
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn profile(&self) -> PersistenceProfile {
        self.profile
    }

    pub fn sigma_transient(&self, scale: u32) -> f64 {
        self.sigma_transient[(scale - 1) as usize]
    }

    pub fn sigma_residual(&self, scale: u32) -> f64 {
        self.sigma_residual[(scale - 1) as usize]
    }

    pub fn sigmas_transient(&self) -> &[f64] {
        &self.sigma_transient
    }

    pub fn sigmas_residual(&self) -> &[f64] {
        &self.sigma_residual
    }

    /// Persistence of the transition from a parent at `parent_scale` to its
    /// children at `parent_scale - 1`.
    pub fn persistence_at(&self, parent_scale: u32) -> f64 {
        match self.profile {
            PersistenceProfile::Constant => self.persistence,
            PersistenceProfile::Geometric => {
                let level = (self.depth - parent_scale + 1) as i32;
                self.persistence.powi(level)
            }
        }
    }

    /// Number of detail nodes `2^depth - 1`.
    pub fn node_count(&self) -> usize {
        (1usize << self.depth) - 1
    }

    /// Prior transient marginal per scale, root downward.
    pub fn prior_marginals(&self) -> Vec<f64> {
        let j_max = self.depth;
        let mut out = vec![0.0; self.depth as usize];
        out[(j_max - 1) as usize] = self.root_transient;
        for j in (1..j_max).rev() {
            out[(j - 1) as usize] = out[j as usize] * self.persistence_at(j + 1);
        }
        out
    }
}

/// Expected transient node counts per scale and in total.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeCounts {
    /// `E[N_j]`, index `j - 1`.
    pub per_scale: Vec<f64>,
    /// `E[N]` over all scales.
    pub total: f64,
}

/// Galton-Watson expectations: `E[N_j] = nu (2 pi)^(depth - j)` and the
/// geometric-sum total (`nu * depth` at the critical persistence 1/2).
pub fn expected_counts(params: &TreeParams) -> TreeCounts {
    let depth = params.depth();
    let mut per_scale = vec![0.0; depth as usize];
    let mut expect = params.root_transient;
    per_scale[(depth - 1) as usize] = expect;
    for j in (1..depth).rev() {
        expect *= 2.0 * params.persistence_at(j + 1);
        per_scale[(j - 1) as usize] = expect;
    }
    let total = match params.profile() {
        PersistenceProfile::Constant => {
            let branch = 2.0 * params.persistence;
            if (branch - 1.0).abs() < 1e-12 {
                params.root_transient * depth as f64
            } else {
                params.root_transient * (branch.powi(depth as i32) - 1.0) / (branch - 1.0)
            }
        }
        PersistenceProfile::Geometric => per_scale.iter().sum(),
    };
    TreeCounts { per_scale, total }
}

/// Expected energy of the transient layer,
/// `nu sum_j sigma_transient_j^2 (2 pi)^(depth - j)`.
pub fn expected_transient_energy(params: &TreeParams) -> f64 {
    let counts = expected_counts(params);
    counts
        .per_scale
        .iter()
        .zip(params.sigmas_transient())
        .map(|(&n, &s)| n * s * s)
        .sum()
}

/// Upper bound on the expected significance-map code length in bits:
/// twice the expected node count.
pub fn map_rate_bound(params: &TreeParams) -> f64 {
    2.0 * expected_counts(params).total
}

/// Distributes `mean_rate` bits per detail node over scales under the
/// expected-occupation budget `sum_j E[N_j] R_j = (2^depth - 1) mean_rate`.
pub fn allocate_bits_transient(params: &TreeParams, mean_rate: f64) -> Result<RateAllocation> {
    if !(mean_rate > 0.0) {
        return Err(Error::invalid(format!(
            "mean rate must be positive, got {mean_rate}"
        )));
    }
    let weights = expected_counts(params).per_scale;
    let sigmas = params.sigmas_transient();
    if sigmas.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateInput("all transient deviations are zero"));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateInput(
            "expected transient occupation is zero in every scale",
        ));
    }
    let budget = params.node_count() as f64 * mean_rate;
    let rates = alloc::reverse_waterfill(&weights, sigmas, budget)?;
    let distortion_bound = alloc::distortion_floor(&weights, sigmas, budget);
    Ok(RateAllocation {
        rates,
        distortion_bound,
    })
}

/// Expected distortion of a transient allocation under the ideal Gaussian
/// quantizer model.
pub fn transient_expected_distortion(params: &TreeParams, rates: &[f64]) -> f64 {
    let weights = expected_counts(params).per_scale;
    alloc::expected_distortion(&weights, params.sigmas_transient(), rates)
}

/// Transient significance map: an upward-closed set of detail nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransientMap {
    /// Stored as (distance from root, position), so iteration is root-first.
    nodes: std::collections::BTreeSet<(u32, usize)>,
    depth: u32,
}

impl TransientMap {
    pub fn new(depth: u32) -> Self {
        Self {
            nodes: Default::default(),
            depth,
        }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn insert(&mut self, scale: u32, index: usize) -> Result<()> {
        if scale == 0 || scale > self.depth || index >= 1usize << (self.depth - scale) {
            return Err(Error::dims(format!(
                "node ({scale}, {index}) outside depth-{} tree",
                self.depth
            )));
        }
        self.nodes.insert((self.depth - scale, index));
        Ok(())
    }

    pub fn contains(&self, scale: u32, index: usize) -> bool {
        scale >= 1 && scale <= self.depth && self.nodes.contains(&(self.depth - scale, index))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes as `(scale, index)`, root first, then by position.
    pub fn iter(&self) -> impl Iterator<Item = (u32, usize)> + '_ {
        self.nodes.iter().map(move |&(d, k)| (self.depth - d, k))
    }

    /// Every non-root node must have its parent in the map.
    pub fn is_upward_closed(&self) -> bool {
        self.iter()
            .all(|(scale, index)| scale == self.depth || self.contains(scale + 1, index / 2))
    }
}

/// Prefix code for an upward-closed map: one root-presence bit, then, in
/// preorder, a (left, right) child-presence bit pair for every in-map node
/// that has children. Nodes at the finest scale emit nothing, so the length
/// is at most `1 + 2 |map|` bits and on average at most [`map_rate_bound`].
pub fn encode_tree_map_into(map: &TransientMap, writer: &mut BitWriter) -> Result<()> {
    if !map.is_upward_closed() {
        return Err(Error::invalid(
            "transient map is not upward-closed".to_string(),
        ));
    }
    let root = map.depth();
    writer.push_bit(map.contains(root, 0));
    fn descend(map: &TransientMap, scale: u32, index: usize, writer: &mut BitWriter) {
        if scale == 1 || !map.contains(scale, index) {
            return;
        }
        let left = map.contains(scale - 1, 2 * index);
        let right = map.contains(scale - 1, 2 * index + 1);
        writer.push_bit(left);
        writer.push_bit(right);
        if left {
            descend(map, scale - 1, 2 * index, writer);
        }
        if right {
            descend(map, scale - 1, 2 * index + 1, writer);
        }
    }
    descend(map, root, 0, writer);
    Ok(())
}

pub fn decode_tree_map_from(reader: &mut BitReader<'_>, depth: u32) -> Result<TransientMap> {
    if depth == 0 {
        return Err(Error::invalid("tree depth must be at least 1".to_string()));
    }
    let mut map = TransientMap::new(depth);
    if reader.read_bit()? {
        map.insert(depth, 0)?;
        descend(&mut map, depth, 0, reader)?;
    }
    fn descend(
        map: &mut TransientMap,
        scale: u32,
        index: usize,
        reader: &mut BitReader<'_>,
    ) -> Result<()> {
        if scale == 1 {
            return Ok(());
        }
        let left = reader.read_bit()?;
        let right = reader.read_bit()?;
        if left {
            map.insert(scale - 1, 2 * index)?;
            descend(map, scale - 1, 2 * index, reader)?;
        }
        if right {
            map.insert(scale - 1, 2 * index + 1)?;
            descend(map, scale - 1, 2 * index + 1, reader)?;
        }
        Ok(())
    }
    Ok(map)
}

/// Standalone encoding of one map; returns the packed bytes and bit count.
pub fn encode_tree_map(map: &TransientMap) -> Result<(Vec<u8>, u64)> {
    let mut writer = BitWriter::new();
    encode_tree_map_into(map, &mut writer)?;
    let bits = writer.bit_len();
    Ok((writer.into_bytes(), bits))
}

pub fn decode_tree_map(bytes: &[u8], depth: u32) -> Result<TransientMap> {
    let mut reader = BitReader::new(bytes, "tree-map");
    decode_tree_map_from(&mut reader, depth)
}
