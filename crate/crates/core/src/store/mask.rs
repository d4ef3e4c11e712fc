//! Run-length encoded segmentation masks.
//!
//! Runs alternate zeros and ones over the row-major pixel order, starting
//! with a (possibly empty) run of zeros.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::SegmentMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[H, W]`
    pub size: [usize; 2],
    pub rle: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskFile {
    pub image_id: String,
    pub masks: Vec<RleMask>,
}

pub fn rle_encode(pixels: &[bool]) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &p in pixels {
        if p != current {
            runs.push(len);
            current = p;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u64], pixel_count: usize) -> Result<Vec<bool>> {
    let total: u64 = runs.iter().sum();
    if total != pixel_count as u64 {
        return Err(Error::Format(format!("run lengths sum to {total}, mask has {pixel_count} pixels")));
    }
    let mut out = Vec::with_capacity(pixel_count);
    for (i, &run) in runs.iter().enumerate() {
        out.extend(std::iter::repeat_n(i % 2 == 1, run as usize));
    }
    Ok(out)
}

impl RleMask {
    pub fn encode(height: usize, width: usize, pixels: &[bool]) -> Self {
        Self { size: [height, width], rle: rle_encode(pixels) }
    }

    pub fn decode(&self) -> Result<Vec<bool>> {
        rle_decode(&self.rle, self.size[0] * self.size[1])
    }
}

impl MaskFile {
    pub fn from_segments(masks: &SegmentMask) -> Self {
        Self {
            image_id: masks.image_id.clone(),
            masks: masks.masks.iter().map(|m| RleMask::encode(masks.height, masks.width, m)).collect(),
        }
    }

    /// Decodes every mask; all must share one image size.
    pub fn to_segments(&self) -> Result<SegmentMask> {
        let size = self.masks.first().map_or([1, 1], |m| m.size);
        let mut decoded = Vec::with_capacity(self.masks.len());
        for (i, m) in self.masks.iter().enumerate() {
            if m.size != size {
                return Err(Error::Validation(format!(
                    "mask {i} of {:?} is {:?}, expected {:?}",
                    self.image_id, m.size, size
                )));
            }
            decoded.push(m.decode()?);
        }
        SegmentMask::new(self.image_id.clone(), size[0], size[1], decoded)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(MaskFile),
    Many(Vec<MaskFile>),
}

/// Loads a mask file holding either one image's entry or an array of them.
pub fn load_masks(path: impl AsRef<Path>) -> Result<Vec<SegmentMask>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
    let files = match serde_json::from_str(&text)? {
        OneOrMany::One(f) => vec![f],
        OneOrMany::Many(v) => v,
    };
    files.iter().map(MaskFile::to_segments).collect()
}

pub fn save_masks(path: impl AsRef<Path>, masks: &[SegmentMask]) -> Result<()> {
    let path = path.as_ref();
    let files: Vec<MaskFile> = masks.iter().map(MaskFile::from_segments).collect();
    fs::write(path, serde_json::to_string(&files)?).map_err(|e| Error::path(path, e))
}
