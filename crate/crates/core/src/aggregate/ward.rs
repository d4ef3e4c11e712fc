//! Bottom-up Ward agglomeration, optionally restricted to grid neighbours.

use std::collections::BTreeSet;

use super::{cluster_means, AggregationConfig, ClusterAssignment, Method, RepresentativeSet};
use crate::error::{Error, Result};
use crate::tensor::EmbeddingMap;

/// One merge of the dendrogram. Leaves are `0..n`; the cluster created by
/// merge `t` has id `n + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Increase of the total within-cluster sum of squares.
    pub cost: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WardResult {
    pub merges: Vec<Merge>,
    /// Final clusters numbered by their lowest member location.
    pub assignment: ClusterAssignment,
}

struct Cluster {
    id: usize,
    size: usize,
    centroid: Vec<f64>,
    members: Vec<usize>,
}

fn ward_cost(a: &Cluster, b: &Cluster) -> f64 {
    let d2: f64 = a.centroid.iter().zip(&b.centroid).map(|(x, y)| (x - y).powi(2)).sum();
    let (na, nb) = (a.size as f64, b.size as f64);
    na * nb / (na + nb) * d2
}

/// 4-neighbourhood of every cell in a row-major `height × width` grid.
pub fn grid_adjacency(height: usize, width: usize) -> Vec<Vec<usize>> {
    (0..height * width)
        .map(|i| {
            let (r, c) = (i / width, i % width);
            let mut n = Vec::with_capacity(4);
            if r > 0 {
                n.push(i - width);
            }
            if c > 0 {
                n.push(i - 1);
            }
            if c + 1 < width {
                n.push(i + 1);
            }
            if r + 1 < height {
                n.push(i + width);
            }
            n
        })
        .collect()
}

/// Merges `points` (`n × dim`) until `target` clusters remain, always taking
/// the admissible pair whose union raises the within-cluster sum of squares
/// least. With `adjacency`, only clusters sharing an edge are admissible.
pub fn ward_linkage(points: &[f32], dim: usize, target: usize, adjacency: Option<&[Vec<usize>]>) -> Result<WardResult> {
    if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!("{} values do not form {dim}-dim points", points.len())));
    }
    let n = points.len() / dim;
    if target == 0 || target > n {
        return Err(Error::InvalidArgument(format!("target {target} must lie in 1..={n}")));
    }
    if let Some(adj) = adjacency {
        if adj.len() != n {
            return Err(Error::Dimension(format!("adjacency covers {} of {n} points", adj.len())));
        }
    }

    let mut slots: Vec<Option<Cluster>> = points
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, x)| {
            Some(Cluster { id: i, size: 1, centroid: x.iter().map(|v| f64::from(*v)).collect(), members: vec![i] })
        })
        .collect();
    let mut neighbours: Option<Vec<BTreeSet<usize>>> =
        adjacency.map(|adj| adj.iter().map(|row| row.iter().copied().collect()).collect());

    let admissible =
        |neigh: &Option<Vec<BTreeSet<usize>>>, a: usize, b: usize| neigh.as_ref().is_none_or(|ns| ns[a].contains(&b));

    // cost[a][b] for admissible pairs; best[a] caches the row minimum.
    let mut cost = vec![vec![f64::INFINITY; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            if admissible(&neighbours, a, b) {
                let c = ward_cost(slots[a].as_ref().unwrap(), slots[b].as_ref().unwrap());
                cost[a][b] = c;
                cost[b][a] = c;
            }
        }
    }
    let row_min = |cost: &[Vec<f64>], slots: &[Option<Cluster>], a: usize| {
        let mut best = (f64::INFINITY, usize::MAX);
        for (b, &c) in cost[a].iter().enumerate() {
            if b != a && slots[b].is_some() && c < best.0 {
                best = (c, b);
            }
        }
        best
    };
    let mut best: Vec<(f64, usize)> = (0..n).map(|a| row_min(&cost, &slots, a)).collect();

    let mut merges = Vec::with_capacity(n - target);
    let mut active = n;
    while active > target {
        let mut pick = (f64::INFINITY, usize::MAX, usize::MAX);
        for (a, &(c, b)) in best.iter().enumerate() {
            if slots[a].is_some() && c < pick.0 {
                pick = (c, a, b);
            }
        }
        let (c, a, b) = pick;
        if !c.is_finite() {
            return Err(Error::Disconnected { components: active, target });
        }
        let (keep, gone) = (a.min(b), a.max(b));
        let other = slots[gone].take().unwrap();
        let kept = slots[keep].as_mut().unwrap();
        let (na, nb) = (kept.size as f64, other.size as f64);
        for (x, y) in kept.centroid.iter_mut().zip(&other.centroid) {
            *x = (*x * na + *y * nb) / (na + nb);
        }
        merges.push(Merge { left: kept.id, right: other.id, cost: c, size: kept.size + other.size });
        kept.id = n + merges.len() - 1;
        kept.size += other.size;
        kept.members.extend(other.members);
        active -= 1;

        if let Some(ns) = neighbours.as_mut() {
            let moved = std::mem::take(&mut ns[gone]);
            for &x in &moved {
                ns[x].remove(&gone);
                if x != keep {
                    ns[x].insert(keep);
                    ns[keep].insert(x);
                }
            }
            ns[keep].remove(&keep);
        }
        cost[gone].fill(f64::INFINITY);
        for row in cost.iter_mut() {
            row[gone] = f64::INFINITY;
        }
        for x in 0..n {
            if x == keep || slots[x].is_none() {
                continue;
            }
            let c = if admissible(&neighbours, keep, x) {
                ward_cost(slots[keep].as_ref().unwrap(), slots[x].as_ref().unwrap())
            } else {
                f64::INFINITY
            };
            cost[keep][x] = c;
            cost[x][keep] = c;
        }
        best[gone] = (f64::INFINITY, usize::MAX);
        for x in 0..n {
            if slots[x].is_none() {
                continue;
            }
            if x == keep || best[x].1 == keep || best[x].1 == gone {
                best[x] = row_min(&cost, &slots, x);
            } else {
                let c = cost[x][keep];
                if c < best[x].0 || (c == best[x].0 && keep < best[x].1) {
                    best[x] = (c, keep);
                }
            }
        }
    }

    let mut raw = vec![0usize; n];
    for (slot, cluster) in slots.iter().enumerate() {
        if let Some(cl) = cluster {
            for &m in &cl.members {
                raw[m] = slot;
            }
        }
    }
    Ok(WardResult { merges, assignment: ClusterAssignment::from_raw_labels(&raw) })
}

/// Ward agglomeration of the dense embeddings. With `connectivity` only
/// 4-adjacent grid regions merge (AG-T); without, any pair may (AG-F).
/// Representatives are cluster means.
pub fn agglomerative_cluster(
    map: &EmbeddingMap,
    config: &AggregationConfig,
    connectivity: bool,
) -> Result<RepresentativeSet> {
    config.validate(map.len())?;
    let adjacency = connectivity.then(|| grid_adjacency(map.height(), map.width()));
    let result = ward_linkage(map.values(), map.channels(), config.cluster_count, adjacency.as_deref())?;
    let vectors = cluster_means(map.values(), map.channels(), &result.assignment.members());
    RepresentativeSet::new(
        map.image_id.clone(),
        if connectivity { Method::AgT } else { Method::AgF },
        map.channels(),
        vectors,
        Some(result.assignment),
        map.grid_dims(),
    )
}
