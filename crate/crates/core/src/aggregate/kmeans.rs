//! Lloyd's k-means with random point initialisation and restarts.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cluster_means, AggregationConfig, ClusterAssignment, Fallback, Method, RepresentativeSet};
use crate::error::{Error, Result};
use crate::tensor::EmbeddingMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    /// Independent restarts; the lowest-inertia run wins.
    pub n_init: usize,
    pub max_iter: usize,
    /// Convergence threshold on the total squared centroid shift, relative to
    /// the mean per-feature variance of the data.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { n_init: 10, max_iter: 300, tol: 1e-4 }
    }
}

impl KMeansParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.max_iter == 0 {
            return Err(Error::InvalidArgument("n_init and max_iter must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidArgument(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Effective cluster count, below the request when points coincide.
    pub k: usize,
    pub dim: usize,
    /// Means of the final clusters, `k × dim`.
    pub centroids: Vec<f32>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the cluster means.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every M-step of the winning restart.
    pub inertia_trace: Vec<f64>,
    pub restart: usize,
}

impl KMeansFit {
    pub fn assignment(&self) -> ClusterAssignment {
        ClusterAssignment { labels: self.labels.iter().map(|&l| l as u32).collect(), cluster_count: self.k }
    }

    pub(crate) fn fallback(&self, requested: usize) -> Option<Fallback> {
        (self.k < requested).then_some(Fallback::ReducedClusters { requested, actual: self.k })
    }
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, c)| (f64::from(*x) - c).powi(2)).sum()
}

fn assign(points: &[f32], dim: usize, centroids: &[f64], labels: &mut [usize]) {
    for (x, label) in points.chunks_exact(dim).zip(labels.iter_mut()) {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for (c, centre) in centroids.chunks_exact(dim).enumerate() {
            let d = sq_dist(x, centre);
            if d < best {
                best = d;
                arg = c;
            }
        }
        *label = arg;
    }
}

/// M-step. Empty clusters take the point farthest from its current centroid.
fn update(points: &[f32], dim: usize, k: usize, old: &[f64], labels: &mut [usize]) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    if counts.contains(&0) {
        let mut dist: Vec<f64> = points
            .chunks_exact(dim)
            .zip(labels.iter())
            .map(|(x, &l)| sq_dist(x, &old[l * dim..(l + 1) * dim]))
            .collect();
        for c in 0..k {
            if counts[c] != 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = -1.0;
            for (i, &d) in dist.iter().enumerate() {
                if counts[labels[i]] > 1 && d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            // k never exceeds the distinct point count, so a donor exists.
            let i = far.expect("no donor point for empty cluster");
            counts[labels[i]] -= 1;
            labels[i] = c;
            counts[c] = 1;
            dist[i] = -1.0;
        }
    }
    let mut sums = vec![0.0f64; k * dim];
    for (x, &l) in points.chunks_exact(dim).zip(labels.iter()) {
        for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(x) {
            *s += f64::from(*v);
        }
    }
    for (c, chunk) in sums.chunks_exact_mut(dim).enumerate() {
        let n = counts[c] as f64;
        chunk.iter_mut().for_each(|s| *s /= n);
    }
    sums
}

fn inertia(points: &[f32], dim: usize, centroids: &[f64], labels: &[usize]) -> f64 {
    points.chunks_exact(dim).zip(labels).map(|(x, &l)| sq_dist(x, &centroids[l * dim..(l + 1) * dim])).sum()
}

fn distinct_rows(points: &[f32], dim: usize) -> usize {
    points
        .chunks_exact(dim)
        .map(|row| row.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect::<Vec<u32>>())
        .collect::<HashSet<_>>()
        .len()
}

fn mean_feature_variance(points: &[f32], dim: usize) -> f64 {
    let n = (points.len() / dim) as f64;
    let mut mean = vec![0.0f64; dim];
    for x in points.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += f64::from(*v) / n;
        }
    }
    let total: f64 = points.chunks_exact(dim).map(|x| sq_dist(x, &mean)).sum();
    total / n / dim as f64
}

struct Run {
    centroids: Vec<f64>,
    labels: Vec<usize>,
    inertia: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn run_once(points: &[f32], dim: usize, k: usize, init: Vec<f64>, params: &KMeansParams, tol: f64) -> Run {
    let n = points.len() / dim;
    let mut centroids = init;
    let mut labels = vec![0usize; n];
    assign(points, dim, &centroids, &mut labels);
    let mut next = labels.clone();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let updated = update(points, dim, k, &centroids, &mut labels);
        trace.push(inertia(points, dim, &updated, &labels));
        let shift: f64 = updated.iter().zip(&centroids).map(|(a, b)| (a - b).powi(2)).sum();
        centroids = updated;
        iterations += 1;
        if iterations >= params.max_iter || shift <= tol {
            break;
        }
        assign(points, dim, &centroids, &mut next);
        if next == labels {
            break;
        }
        std::mem::swap(&mut labels, &mut next);
    }
    let inertia = *trace.last().expect("at least one M-step");
    Run { centroids, labels, inertia, iterations, trace }
}

/// Clusters `points` (`n × dim`, row-major) into `k` groups.
///
/// Each restart seeds the centroids with `k` distinct random rows and
/// alternates nearest-centroid assignment (ties to the lowest index) with
/// mean updates until labels stop changing, the centroid shift drops below
/// the scaled tolerance, or `max_iter` is hit. If fewer than `k` distinct
/// points exist, `k` is lowered to that count.
pub fn lloyd<R: Rng + ?Sized>(
    points: &[f32],
    dim: usize,
    k: usize,
    params: &KMeansParams,
    rng: &mut R,
) -> Result<KMeansFit> {
    params.validate()?;
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!("{} values do not form {dim}-dim points", points.len())));
    }
    if !points.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("k-means input"));
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k={k} must lie in 1..={n}")));
    }
    let k = k.min(distinct_rows(points, dim));
    let tol = params.tol * mean_feature_variance(points, dim);

    let mut best: Option<(usize, Run)> = None;
    for restart in 0..params.n_init {
        let init: Vec<f64> = index::sample(rng, n, k)
            .iter()
            .flat_map(|i| points[i * dim..(i + 1) * dim].iter().map(|v| f64::from(*v)))
            .collect();
        let run = run_once(points, dim, k, init, params, tol);
        if best.as_ref().is_none_or(|(_, b)| run.inertia < b.inertia) {
            best = Some((restart, run));
        }
    }
    let (restart, run) = best.expect("n_init >= 1");
    let mut members = vec![Vec::new(); k];
    for (i, &l) in run.labels.iter().enumerate() {
        members[l].push(i);
    }
    debug_assert!(run.centroids.len() == k * dim);
    Ok(KMeansFit {
        k,
        dim,
        centroids: cluster_means(points, dim, &members),
        labels: run.labels,
        inertia: run.inertia,
        iterations: run.iterations,
        inertia_trace: run.trace,
        restart,
    })
}

/// K-means over the dense output embeddings; representatives are the
/// centroids. The RNG is seeded from the global seed and the image id.
pub fn kmeans_cluster(map: &EmbeddingMap, config: &AggregationConfig) -> Result<RepresentativeSet> {
    config.validate(map.len())?;
    let mut rng = config.rng_for(&map.image_id);
    let fit = lloyd(map.values(), map.channels(), config.cluster_count, &config.kmeans, &mut rng)?;
    let mut set = RepresentativeSet::new(
        map.image_id.clone(),
        Method::Kmeans,
        map.channels(),
        fit.centroids.clone(),
        Some(fit.assignment()),
        map.grid_dims(),
    )?;
    set.fallback = fit.fallback(config.cluster_count);
    Ok(set)
}
