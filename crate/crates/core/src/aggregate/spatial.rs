//! Spatially guided aggregation: segmentation masks and fixed anchor grids.

use super::{cluster_means, Fallback, Method, RepresentativeSet};
use crate::error::{Error, Result};
use crate::tensor::EmbeddingMap;

/// Binary masks of one image at image resolution, each row-major `H × W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMask {
    pub image_id: String,
    pub height: usize,
    pub width: usize,
    pub masks: Vec<Vec<bool>>,
}

impl SegmentMask {
    pub fn new(image_id: impl Into<String>, height: usize, width: usize, masks: Vec<Vec<bool>>) -> Result<Self> {
        let image_id = image_id.into();
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("mask size {height}x{width} for {image_id:?}")));
        }
        for (i, m) in masks.iter().enumerate() {
            if m.len() != height * width {
                return Err(Error::Dimension(format!(
                    "mask {i} of {image_id:?} has {} pixels, expected {height}x{width}",
                    m.len()
                )));
            }
            if !m.iter().any(|&p| p) {
                return Err(Error::Validation(format!("mask {i} of {image_id:?} is empty")));
            }
        }
        Ok(Self { image_id, height, width, masks })
    }
}

/// Max-pools a binary `height × width` mask onto a coarser grid: output cell
/// `(r, c)` covers input rows `⌊rH/H'⌋..⌈(r+1)H/H'⌉` and likewise columns,
/// and is set iff any covered pixel is.
pub fn downsample_mask(mask: &[bool], height: usize, width: usize, grid: (usize, usize)) -> Result<Vec<bool>> {
    let (gh, gw) = grid;
    if mask.len() != height * width {
        return Err(Error::Dimension(format!("mask has {} pixels, expected {height}x{width}", mask.len())));
    }
    if gh == 0 || gw == 0 || gh > height || gw > width {
        return Err(Error::Dimension(format!("cannot pool {height}x{width} onto {gh}x{gw}")));
    }
    // neighbouring bins may share a pixel
    let bounds = |i: usize, n: usize, g: usize| (i * n / g, ((i + 1) * n).div_ceil(g));
    let col_bounds: Vec<(usize, usize)> = (0..gw).map(|c| bounds(c, width, gw)).collect();
    let mut out = vec![false; gh * gw];
    for r in 0..gh {
        let (r0, r1) = bounds(r, height, gh);
        let rows = r0..r1;
        for (c, &(c0, c1)) in col_bounds.iter().enumerate() {
            out[r * gw + c] = rows.clone().any(|y| mask[y * width + c0..y * width + c1].iter().any(|&p| p));
        }
    }
    Ok(out)
}

/// One representative per mask: the mean embedding under the downsampled
/// mask. Masks may overlap, so there is no assignment map. Masks that vanish
/// on the grid are dropped; if all vanish the global mean is returned and
/// flagged.
pub fn region_mask_aggregate(map: &EmbeddingMap, masks: &SegmentMask) -> Result<RepresentativeSet> {
    if masks.image_id != map.image_id {
        return Err(Error::InvalidArgument(format!("masks for {:?} applied to {:?}", masks.image_id, map.image_id)));
    }
    let mut members = Vec::with_capacity(masks.masks.len());
    for m in &masks.masks {
        let cells = downsample_mask(m, masks.height, masks.width, map.grid_dims())?;
        let idx: Vec<usize> = cells.iter().enumerate().filter_map(|(i, &on)| on.then_some(i)).collect();
        if !idx.is_empty() {
            members.push(idx);
        }
    }
    let mut fallback = None;
    if members.is_empty() {
        members.push((0..map.len()).collect());
        fallback = Some(Fallback::GlobalMean);
    }
    let mut set = RepresentativeSet::new(
        map.image_id.clone(),
        Method::RegionProposal,
        map.channels(),
        cluster_means(map.values(), map.channels(), &members),
        None,
        map.grid_dims(),
    )?;
    set.fallback = fallback;
    Ok(set)
}

/// Multi-resolution anchor pooling. For every division `g`, location
/// `(row, col)` falls into cell `(⌊row·g/H'⌋, ⌊col·g/W'⌋)`; each cell's mean
/// is one representative, giving `Σ g²` vectors in division order, cells
/// row-major.
pub fn anchors_aggregate(map: &EmbeddingMap, divisions: &[usize]) -> Result<RepresentativeSet> {
    let (h, w) = map.grid_dims();
    if divisions.is_empty() {
        return Err(Error::InvalidArgument("at least one anchor division required".into()));
    }
    let mut members = Vec::new();
    for &g in divisions {
        if g == 0 || g > h.min(w) {
            return Err(Error::InvalidArgument(format!("division {g}x{g} does not fit a {h}x{w} grid")));
        }
        let mut cells = vec![Vec::new(); g * g];
        for row in 0..h {
            for col in 0..w {
                cells[(row * g / h) * g + col * g / w].push(row * w + col);
            }
        }
        members.extend(cells);
    }
    RepresentativeSet::new(
        map.image_id.clone(),
        Method::Anchors,
        map.channels(),
        cluster_means(map.values(), map.channels(), &members),
        None,
        map.grid_dims(),
    )
}
