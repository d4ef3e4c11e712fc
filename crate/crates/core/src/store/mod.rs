//! Persistence: embedding packs, dataset manifests, masks and weights.
//!
//! Packs are binary and streamed; manifests and masks are JSON.

mod manifest;
mod mask;
mod pack;
mod weights;

pub use manifest::{load_manifest, Annotation, Category, DatasetManifest, ImageInfo};
pub use mask::{load_masks, rle_decode, rle_encode, save_masks, MaskFile, RleMask};
pub use pack::{
    read_pack, write_pack, PackHeader, PackReader, PackRecord, PackSummary, PackWriter, DTYPE_F32, FLAG_ASSIGNMENTS,
    HEADER_LEN, MAGIC, VERSION,
};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, WEIGHTS_MAGIC};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Reads a raw little-endian f32 vector file.
pub fn read_f32_file(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::path(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
}

pub fn write_f32_file(path: impl AsRef<Path>, values: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::path(path, e))
}
