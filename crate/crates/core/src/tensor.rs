//! Attention-pool projections over explicit weight matrices.
//!
//! A backbone's final attention layer maps a feature grid `X` (K locations of
//! `C_e` channels) to one global embedding by attending from the mean
//! location over all locations. The same weights can instead be applied
//! per location through the value and output maps only, which yields one
//! embedding per grid cell in the same output space. A third variant attends
//! from per-cluster means, producing one non-locally aggregated vector per
//! cluster.
//!
//! Everything here is plain `f32` arithmetic with no runtime dependency.
//! Loading real weights: the global pool attends over the K grid locations
//! only; checkpoints that prepend the mean as an extra token will differ.

use crate::aggregate::ClusterAssignment;
use crate::error::{Error, Result};

fn check_finite(values: &[f32], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Spatial feature tensor entering the attention layer, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature grid must be non-empty, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                values.len()
            )));
        }
        check_finite(&values, "feature grid")?;
        Ok(Self { height, width, channels, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial locations `K`.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn location(&self, i: usize) -> &[f32] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn locations(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.channels)
    }

    /// Unweighted mean over all locations.
    pub fn mean(&self) -> Vec<f32> {
        mean_of(self.locations(), self.channels)
    }
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a [f32]>, dim: usize) -> Vec<f32> {
    let mut acc = vec![0.0f32; dim];
    let mut n = 0usize;
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += *v;
        }
        n += 1;
    }
    let n = n as f32;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Affine map `y = W x + b` with `W` stored row-major as `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Affine {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        let affine = Self { in_dim, out_dim, weight, bias };
        affine.validate()?;
        Ok(affine)
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weight: vec![0.0; in_dim * out_dim], bias: vec![0.0; out_dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self { in_dim: dim, out_dim: dim, weight, bias: vec![0.0; dim] }
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidArgument("affine map dimensions must be >= 1".into()));
        }
        if self.weight.len() != self.in_dim * self.out_dim || self.bias.len() != self.out_dim {
            return Err(Error::Dimension(format!(
                "affine {}->{} needs {} weights and {} biases, got {} and {}",
                self.in_dim,
                self.out_dim,
                self.in_dim * self.out_dim,
                self.out_dim,
                self.weight.len(),
                self.bias.len()
            )));
        }
        check_finite(&self.weight, "affine weight")?;
        check_finite(&self.bias, "affine bias")
    }

    pub fn apply_into(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, (row, b)) in out.iter_mut().zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias)) {
            let mut acc = 0.0f32;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *o = acc + b;
        }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.out_dim];
        self.apply_into(x, &mut out);
        out
    }
}

/// Query, key and value maps of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
}

/// Weights of a multi-head attention pool: `M` heads plus the output map
/// from the concatenated head values (`M·C_v`) to `C_o`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionWeights {
    heads: Vec<AttentionHead>,
    output: Affine,
}

impl ProjectionWeights {
    pub fn new(heads: Vec<AttentionHead>, output: Affine) -> Result<Self> {
        let first =
            heads.first().ok_or_else(|| Error::InvalidArgument("at least one attention head required".into()))?;
        let (c_e, c_q, c_v) = (first.query.in_dim, first.query.out_dim, first.value.out_dim);
        for (m, head) in heads.iter().enumerate() {
            for map in [&head.query, &head.key, &head.value] {
                map.validate()?;
            }
            let dims_ok = head.query.in_dim == c_e
                && head.key.in_dim == c_e
                && head.value.in_dim == c_e
                && head.query.out_dim == c_q
                && head.key.out_dim == c_q
                && head.value.out_dim == c_v;
            if !dims_ok {
                return Err(Error::Dimension(format!("head {m} does not share dimensions with head 0")));
            }
        }
        output.validate()?;
        if output.in_dim != heads.len() * c_v {
            return Err(Error::Dimension(format!(
                "output map expects {} inputs, heads provide {}",
                output.in_dim,
                heads.len() * c_v
            )));
        }
        Ok(Self { heads, output })
    }

    pub fn heads(&self) -> &[AttentionHead] {
        &self.heads
    }

    pub fn output(&self) -> &Affine {
        &self.output
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// `C_e`
    pub fn input_dim(&self) -> usize {
        self.heads[0].query.in_dim
    }

    /// `C_q`
    pub fn query_dim(&self) -> usize {
        self.heads[0].query.out_dim
    }

    /// `C_v`
    pub fn value_dim(&self) -> usize {
        self.heads[0].value.out_dim
    }

    /// `C_o`
    pub fn output_dim(&self) -> usize {
        self.output.out_dim
    }

    fn check_grid(&self, grid: &FeatureGrid) -> Result<()> {
        if grid.channels() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "grid has {} channels, weights expect {}",
                grid.channels(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Dense per-location output embeddings, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    pub image_id: String,
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f32>,
}

impl EmbeddingMap {
    pub fn new(
        image_id: impl Into<String>,
        height: usize,
        width: usize,
        channels: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding map must be non-empty, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "expected {} values for {height}x{width}x{channels}, got {}",
                height * width * channels,
                values.len()
            )));
        }
        check_finite(&values, "embedding map")?;
        Ok(Self { image_id: image_id.into(), height, width, channels, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn embedding(&self, i: usize) -> &[f32] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.channels)
    }

    /// Reinterprets the map as an attention-layer input grid.
    pub fn as_feature_grid(&self) -> FeatureGrid {
        FeatureGrid { height: self.height, width: self.width, channels: self.channels, values: self.values.clone() }
    }
}

fn softmax_in_place(logits: &mut [f32]) {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    logits.iter_mut().for_each(|l| *l /= sum);
}

/// Per-head key and value projections of every grid location.
struct ProjectedGrid {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

impl ProjectedGrid {
    fn new(grid: &FeatureGrid, weights: &ProjectionWeights) -> Self {
        let (c_q, c_v) = (weights.query_dim(), weights.value_dim());
        let mut keys = Vec::with_capacity(weights.head_count());
        let mut values = Vec::with_capacity(weights.head_count());
        for head in weights.heads() {
            let mut k = vec![0.0f32; grid.len() * c_q];
            let mut v = vec![0.0f32; grid.len() * c_v];
            for (i, x) in grid.locations().enumerate() {
                head.key.apply_into(x, &mut k[i * c_q..(i + 1) * c_q]);
                head.value.apply_into(x, &mut v[i * c_v..(i + 1) * c_v]);
            }
            keys.push(k);
            values.push(v);
        }
        Self { keys, values }
    }

    /// Attends from `query_input` (a `C_e` vector) over all locations.
    fn attend(&self, query_input: &[f32], weights: &ProjectionWeights) -> Vec<f32> {
        let (c_q, c_v) = (weights.query_dim(), weights.value_dim());
        let scale = (c_q as f32).sqrt();
        let mut concat = vec![0.0f32; weights.head_count() * c_v];
        for (m, head) in weights.heads().iter().enumerate() {
            let q = head.query.apply(query_input);
            let mut attn: Vec<f32> = self.keys[m]
                .chunks_exact(c_q)
                .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f32>() / scale)
                .collect();
            softmax_in_place(&mut attn);
            let out = &mut concat[m * c_v..(m + 1) * c_v];
            for (a, v) in attn.iter().zip(self.values[m].chunks_exact(c_v)) {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += a * x;
                }
            }
        }
        weights.output().apply(&concat)
    }
}

/// Global attention pooling: attends from the mean location over all
/// locations in every head and projects the concatenation to `C_o`.
pub fn global_attention_pool(grid: &FeatureGrid, weights: &ProjectionWeights) -> Result<Vec<f32>> {
    weights.check_grid(grid)?;
    let projected = ProjectedGrid::new(grid, weights);
    let out = projected.attend(&grid.mean(), weights);
    check_finite(&out, "global attention output")?;
    Ok(out)
}

/// Dense projection: applies only the value and output maps at every
/// location, biases included. Query and key weights are unused.
pub fn dense_project(grid: &FeatureGrid, weights: &ProjectionWeights) -> Result<EmbeddingMap> {
    weights.check_grid(grid)?;
    let c_v = weights.value_dim();
    let c_o = weights.output_dim();
    let mut values = vec![0.0f32; grid.len() * c_o];
    let mut concat = vec![0.0f32; weights.head_count() * c_v];
    for (x, y) in grid.locations().zip(values.chunks_exact_mut(c_o)) {
        for (head, slot) in weights.heads().iter().zip(concat.chunks_exact_mut(c_v)) {
            head.value.apply_into(x, slot);
        }
        weights.output().apply_into(&concat, y);
    }
    EmbeddingMap::new(String::new(), grid.height(), grid.width(), c_o, values)
}

/// Soft aggregation: one attention query per cluster, issued from the mean
/// of the cluster's input features. Clusters live in the input (`C_e`) space.
pub fn soft_attention_aggregate(
    grid: &FeatureGrid,
    weights: &ProjectionWeights,
    assignment: &ClusterAssignment,
) -> Result<Vec<Vec<f32>>> {
    weights.check_grid(grid)?;
    if assignment.labels().len() != grid.len() {
        return Err(Error::Dimension(format!(
            "assignment covers {} locations, grid has {}",
            assignment.labels().len(),
            grid.len()
        )));
    }
    let members = assignment.members();
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyCluster(empty));
    }
    let projected = ProjectedGrid::new(grid, weights);
    members
        .iter()
        .map(|idx| {
            let centre = mean_of(idx.iter().map(|&i| grid.location(i)), grid.channels());
            let out = projected.attend(&centre, weights);
            check_finite(&out, "soft attention output")?;
            Ok(out)
        })
        .collect()
}
