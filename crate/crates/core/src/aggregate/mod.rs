//! Aggregation of dense embedding maps into compact representative sets.
//!
//! Every method groups the K grid embeddings of one image into N clusters
//! and emits one vector per cluster. Mean-based methods (k-means, Ward
//! agglomerative, region masks, anchors) cluster the dense output space and
//! take the cluster mean; soft attention clusters the attention-layer input
//! space and re-attends from the cluster means (see [`attention_aggregate`]).
//!
//! Embeddings are clustered as-is. L2 normalisation happens only at scoring
//! time in [`crate::index`].

mod bic;
mod kmeans;
mod spatial;
mod ward;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{self, EmbeddingMap, FeatureGrid, ProjectionWeights};

pub use bic::{adaptive_kmeans, bic_score, AdaptiveSelection};
pub use kmeans::{kmeans_cluster, lloyd, KMeansFit, KMeansParams};
pub use spatial::{anchors_aggregate, downsample_mask, region_mask_aggregate, SegmentMask};
pub use ward::{agglomerative_cluster, grid_adjacency, ward_linkage, Merge, WardResult};

/// How a representative set was produced. The discriminant is the on-disk
/// method code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Method {
    Dense = 0,
    Global = 1,
    Kmeans = 2,
    AgT = 3,
    AgF = 4,
    RegionProposal = 5,
    Anchors = 6,
    Attention = 7,
    AdaptiveKmeans = 8,
    Mixed = 9,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Dense,
        Method::Global,
        Method::Kmeans,
        Method::AgT,
        Method::AgF,
        Method::RegionProposal,
        Method::Anchors,
        Method::Attention,
        Method::AdaptiveKmeans,
        Method::Mixed,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::Global => "global",
            Method::Kmeans => "kmeans",
            Method::AgT => "ag_t",
            Method::AgF => "ag_f",
            Method::RegionProposal => "region_proposal",
            Method::Anchors => "anchors",
            Method::Attention => "attention",
            Method::AdaptiveKmeans => "adaptive_kmeans",
            Method::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown aggregation method {s:?}")))
    }
}

/// Per-location cluster labels. Every cluster index in `0..cluster_count`
/// has at least one member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<u32>,
    cluster_count: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<u32>, cluster_count: usize) -> Result<Self> {
        let mut seen = vec![false; cluster_count];
        for &l in &labels {
            let slot = seen
                .get_mut(l as usize)
                .ok_or_else(|| Error::Validation(format!("label {l} out of range for {cluster_count} clusters")))?;
            *slot = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyCluster(empty));
        }
        Ok(Self { labels, cluster_count })
    }

    /// Relabels arbitrary ids so clusters are numbered by first appearance.
    pub(crate) fn from_raw_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = map.len() as u32;
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Self { labels, cluster_count: map.len() }
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member locations of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l as usize].push(i);
        }
        members
    }
}

/// Recorded when an aggregation could not deliver what was asked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fallback {
    /// Fewer distinct points than requested clusters.
    ReducedClusters { requested: usize, actual: usize },
    /// Every region mask vanished after downsampling; the global mean was used.
    GlobalMean,
}

/// The vectors stored for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeSet {
    pub image_id: String,
    pub method: Method,
    pub channels: usize,
    /// `N × channels`, row-major.
    pub vectors: Vec<f32>,
    pub assignment: Option<ClusterAssignment>,
    pub grid_dims: (usize, usize),
    pub fallback: Option<Fallback>,
}

impl RepresentativeSet {
    pub fn new(
        image_id: impl Into<String>,
        method: Method,
        channels: usize,
        vectors: Vec<f32>,
        assignment: Option<ClusterAssignment>,
        grid_dims: (usize, usize),
    ) -> Result<Self> {
        let set = Self { image_id: image_id.into(), method, channels, vectors, assignment, grid_dims, fallback: None };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.vectors.len().is_multiple_of(self.channels) {
            return Err(Error::Dimension(format!(
                "{} values do not form {}-channel vectors",
                self.vectors.len(),
                self.channels
            )));
        }
        if self.is_empty() {
            return Err(Error::Validation(format!("representative set {:?} is empty", self.image_id)));
        }
        if !self.vectors.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("representative set"));
        }
        if let Some(a) = &self.assignment {
            if a.cluster_count() != self.len() {
                return Err(Error::Validation(format!(
                    "assignment has {} clusters for {} representatives",
                    a.cluster_count(),
                    self.len()
                )));
            }
            if a.len() != self.grid_dims.0 * self.grid_dims.1 {
                return Err(Error::Validation(format!(
                    "assignment covers {} cells, grid is {}x{}",
                    a.len(),
                    self.grid_dims.0,
                    self.grid_dims.1
                )));
            }
        }
        Ok(())
    }

    /// Number of representatives `N`.
    pub fn len(&self) -> usize {
        self.vectors.len().checked_div(self.channels).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.channels..(i + 1) * self.channels]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.channels.max(1))
    }

    /// Every grid embedding kept as its own representative.
    pub fn dense(map: &EmbeddingMap) -> Self {
        Self {
            image_id: map.image_id.clone(),
            method: Method::Dense,
            channels: map.channels(),
            vectors: map.values().to_vec(),
            assignment: None,
            grid_dims: map.grid_dims(),
            fallback: None,
        }
    }

    /// One representative: the unweighted mean of all grid embeddings.
    pub fn global_mean(map: &EmbeddingMap) -> Self {
        let all: Vec<usize> = (0..map.len()).collect();
        Self {
            image_id: map.image_id.clone(),
            method: Method::Global,
            channels: map.channels(),
            vectors: cluster_means(map.values(), map.channels(), std::slice::from_ref(&all)),
            assignment: None,
            grid_dims: map.grid_dims(),
            fallback: None,
        }
    }
}

/// Lloyd parameters plus method-specific knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub method: Method,
    /// Target `N` for k-means, agglomerative and attention.
    pub cluster_count: usize,
    pub kmeans: KMeansParams,
    /// Strictly increasing candidate cluster counts for adaptive k-means.
    pub adaptive_candidates: Vec<usize>,
    /// Side lengths `g` of the `g×g` anchor divisions.
    pub anchors_divisions: Vec<usize>,
    pub seed: u64,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            method: Method::Kmeans,
            cluster_count: 10,
            kmeans: KMeansParams::default(),
            adaptive_candidates: vec![5, 10, 15, 20],
            anchors_divisions: vec![2, 3, 5, 7],
            seed: 0,
        }
    }
}

impl AggregationConfig {
    pub fn with_method(method: Method, cluster_count: usize) -> Self {
        Self { method, cluster_count, ..Self::default() }
    }

    pub fn validate(&self, locations: usize) -> Result<()> {
        if self.cluster_count == 0 {
            return Err(Error::InvalidArgument("cluster_count must be >= 1".into()));
        }
        if self.cluster_count > locations {
            return Err(Error::InvalidArgument(format!(
                "cluster_count {} exceeds the {locations} grid locations",
                self.cluster_count
            )));
        }
        if self.adaptive_candidates.is_empty() || self.adaptive_candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "adaptive candidates must be non-empty and strictly increasing, got {:?}",
                self.adaptive_candidates
            )));
        }
        self.kmeans.validate()
    }

    pub(crate) fn rng_for(&self, image_id: &str) -> rand_chacha::ChaCha8Rng {
        seed::image_rng(self.seed, image_id)
    }
}

/// Mean of each member list, accumulated in f64.
pub(crate) fn cluster_means(points: &[f32], dim: usize, members: &[Vec<usize>]) -> Vec<f32> {
    let mut out = Vec::with_capacity(members.len() * dim);
    let mut acc = vec![0.0f64; dim];
    for idx in members {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &i in idx {
            for (a, v) in acc.iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
                *a += f64::from(*v);
            }
        }
        let n = idx.len() as f64;
        out.extend(acc.iter().map(|a| (a / n) as f32));
    }
    out
}

/// Runs the configured mean-based method on one dense map. Region proposals
/// need `masks`; soft attention needs the input grid and goes through
/// [`attention_aggregate`] instead.
pub fn aggregate(
    map: &EmbeddingMap,
    config: &AggregationConfig,
    masks: Option<&SegmentMask>,
) -> Result<RepresentativeSet> {
    match config.method {
        Method::Dense => Ok(RepresentativeSet::dense(map)),
        Method::Global => Ok(RepresentativeSet::global_mean(map)),
        Method::Kmeans => kmeans_cluster(map, config),
        Method::AgT => agglomerative_cluster(map, config, true),
        Method::AgF => agglomerative_cluster(map, config, false),
        Method::RegionProposal => {
            let masks = masks
                .ok_or_else(|| Error::InvalidArgument(format!("region proposals for {:?} need masks", map.image_id)))?;
            region_mask_aggregate(map, masks)
        }
        Method::Anchors => anchors_aggregate(map, &config.anchors_divisions),
        Method::AdaptiveKmeans => adaptive_kmeans(map, config).map(|sel| sel.set),
        Method::Attention => Err(Error::InvalidArgument(
            "soft attention clusters the attention input grid; use attention_aggregate".into(),
        )),
        Method::Mixed => {
            Err(Error::InvalidArgument("mixed sets are built with mix_global from an aggregated set".into()))
        }
    }
}

/// Soft aggregation via attention: k-means on the attention-layer inputs,
/// then one attention query per cluster mean.
pub fn attention_aggregate(
    image_id: &str,
    grid: &FeatureGrid,
    weights: &ProjectionWeights,
    config: &AggregationConfig,
) -> Result<RepresentativeSet> {
    config.validate(grid.len())?;
    let mut rng = config.rng_for(image_id);
    let fit = lloyd(grid.values(), grid.channels(), config.cluster_count, &config.kmeans, &mut rng)?;
    let assignment = fit.assignment();
    let vectors = tensor::soft_attention_aggregate(grid, weights, &assignment)?;
    let mut set = RepresentativeSet::new(
        image_id,
        Method::Attention,
        weights.output_dim(),
        vectors.concat(),
        Some(assignment),
        (grid.height(), grid.width()),
    )?;
    set.fallback = fit.fallback(config.cluster_count);
    Ok(set)
}

/// Appends a global embedding as one extra representative.
pub fn mix_global(reps: &RepresentativeSet, global_vec: &[f32]) -> Result<RepresentativeSet> {
    if global_vec.len() != reps.channels {
        return Err(Error::Dimension(format!(
            "global vector has {} channels, representatives have {}",
            global_vec.len(),
            reps.channels
        )));
    }
    if !global_vec.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("global vector"));
    }
    let mut vectors = Vec::with_capacity(reps.vectors.len() + global_vec.len());
    vectors.extend_from_slice(&reps.vectors);
    vectors.extend_from_slice(global_vec);
    Ok(RepresentativeSet {
        image_id: reps.image_id.clone(),
        method: Method::Mixed,
        channels: reps.channels,
        vectors,
        assignment: None,
        grid_dims: reps.grid_dims,
        fallback: reps.fallback,
    })
}
