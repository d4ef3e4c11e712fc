//! BIC scoring of a hard clustering and adaptive cluster-count selection.

use super::kmeans::lloyd;
use super::{AggregationConfig, ClusterAssignment, Method, RepresentativeSet};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::EmbeddingMap;

const VARIANCE_FLOOR: f64 = 1e-12;

/// Bayesian information criterion of a clustering read as a spherical
/// Gaussian mixture. Component `j` has the cluster mean, its own variance
/// `σ_j² = SSE_j / (n_j·d)` (floored at 1e-12) and weight `n_j / n`. The
/// mixture log-likelihood `L` is evaluated over all points and
/// `BIC = κ ln n − 2 L` with `κ = k(d+2) − 1` free parameters.
/// Lower is better.
pub fn bic_score(points: &[f32], dim: usize, assignment: &ClusterAssignment) -> Result<f64> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!("{} values do not form {dim}-dim points", points.len())));
    }
    let n = points.len() / dim;
    if assignment.len() != n {
        return Err(Error::Dimension(format!("assignment covers {} of {n} points", assignment.len())));
    }
    let k = assignment.cluster_count();
    let d = dim as f64;

    let mut means = vec![0.0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (x, &l) in points.chunks_exact(dim).zip(assignment.labels()) {
        let l = l as usize;
        counts[l] += 1;
        for (m, v) in means[l * dim..(l + 1) * dim].iter_mut().zip(x) {
            *m += f64::from(*v);
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyCluster(empty));
    }
    for (chunk, &c) in means.chunks_exact_mut(dim).zip(&counts) {
        chunk.iter_mut().for_each(|m| *m /= c as f64);
    }
    let sq = |x: &[f32], j: usize| -> f64 {
        x.iter().zip(&means[j * dim..(j + 1) * dim]).map(|(a, b)| (f64::from(*a) - b).powi(2)).sum()
    };
    let mut sse = vec![0.0f64; k];
    for (x, &l) in points.chunks_exact(dim).zip(assignment.labels()) {
        sse[l as usize] += sq(x, l as usize);
    }
    let variance: Vec<f64> = sse.iter().zip(&counts).map(|(s, &c)| (s / (c as f64 * d)).max(VARIANCE_FLOOR)).collect();
    // log(w_j) - d/2 log(2π σ_j²), constant per component
    let log_norm: Vec<f64> = (0..k)
        .map(|j| (counts[j] as f64 / n as f64).ln() - 0.5 * d * (2.0 * std::f64::consts::PI * variance[j]).ln())
        .collect();

    let mut log_likelihood = 0.0;
    let mut terms = vec![0.0f64; k];
    for x in points.chunks_exact(dim) {
        for j in 0..k {
            terms[j] = log_norm[j] - sq(x, j) / (2.0 * variance[j]);
        }
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_likelihood += max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    }
    let params = (k * (dim + 2) - 1) as f64;
    Ok(params * (n as f64).ln() - 2.0 * log_likelihood)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSelection {
    pub set: RepresentativeSet,
    /// `(k, BIC)` for every candidate evaluated, in order.
    pub scores: Vec<(usize, f64)>,
    pub selected: usize,
}

/// Adaptive k-means: walks the candidate counts in ascending order and stops
/// at the first `k_i` with `BIC(k_i) < BIC(k_{i+1})`; if none, takes the
/// last candidate.
pub fn adaptive_kmeans(map: &EmbeddingMap, config: &AggregationConfig) -> Result<AdaptiveSelection> {
    let candidates = &config.adaptive_candidates;
    let largest = *candidates.last().ok_or_else(|| Error::InvalidArgument("no adaptive candidates".into()))?;
    config.validate(map.len())?;
    if largest > map.len() {
        return Err(Error::InvalidArgument(format!("candidate {largest} exceeds the {} grid locations", map.len())));
    }
    let image_seed = seed::mix(config.seed, &map.image_id);
    let fit_k = |k: usize| {
        let mut rng = seed::image_rng(image_seed, &k.to_string());
        let fit = lloyd(map.values(), map.channels(), k, &config.kmeans, &mut rng)?;
        let score = bic_score(map.values(), map.channels(), &fit.assignment())?;
        Ok::<_, Error>((fit, score))
    };

    let mut scores = Vec::with_capacity(candidates.len());
    let mut selected = candidates[0];
    let (mut current, mut current_score) = fit_k(selected)?;
    scores.push((selected, current_score));
    for &next_k in &candidates[1..] {
        let (next, next_score) = fit_k(next_k)?;
        scores.push((next_k, next_score));
        if current_score < next_score {
            break;
        }
        selected = next_k;
        current = next;
        current_score = next_score;
    }
    let mut set = RepresentativeSet::new(
        map.image_id.clone(),
        Method::AdaptiveKmeans,
        map.channels(),
        current.centroids.clone(),
        Some(current.assignment()),
        map.grid_dims(),
    )?;
    set.fallback = current.fallback(selected);
    Ok(AdaptiveSelection { set, scores, selected })
}
