//! Seeded planted-concept datasets.
//!
//! Each image is a grid of background noise patches with up to a few
//! planted objects. An object is a 4-connected blob of patches whose
//! embeddings are a concept prototype plus Gaussian noise; the prototype
//! doubles as the concept's query vector.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::Method;
use crate::error::{Error, Result};
use crate::index::QueryVector;
use crate::seed::image_rng;
use crate::store::{write_pack, Annotation, Category, DatasetManifest, ImageInfo, PackRecord};
use crate::tensor::EmbeddingMap;

pub const DENSE_PACK: &str = "dense.epk";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const QUERY_PACK: &str = "queries.epk";
pub const LOG_FILE: &str = "generation_log.json";

const PROTOTYPE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub image_count: usize,
    pub grid_dims: (usize, usize),
    pub channels: usize,
    pub concept_count: usize,
    /// Minimum angle between any two prototypes, degrees.
    pub concept_separation: f64,
    /// Inclusive range of planted objects per image.
    pub objects_per_image: (usize, usize),
    /// Inclusive range of patches per object.
    pub object_patch_count: (usize, usize),
    /// Norm scale of the per-patch noise added to prototypes.
    pub noise_scale: f64,
    /// Side of one grid cell in image pixels; instance area is
    /// `patches · patch_px²`.
    pub patch_px: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_count: 1000,
            grid_dims: (14, 14),
            channels: 128,
            concept_count: 20,
            concept_separation: 75.0,
            objects_per_image: (0, 3),
            object_patch_count: (2, 40),
            noise_scale: 0.3,
            patch_px: 32,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn locations(&self) -> usize {
        self.grid_dims.0 * self.grid_dims.1
    }

    /// Area of an instance covering `patches` grid cells.
    pub fn area_of(&self, patches: usize) -> f64 {
        patches as f64 * f64::from(self.patch_px).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (omin, omax) = self.objects_per_image;
        let (pmin, pmax) = self.object_patch_count;
        if self.image_count == 0 || self.channels == 0 || self.concept_count == 0 || self.locations() == 0 {
            return bad("image_count, channels, concept_count and grid must be non-zero".into());
        }
        if self.grid_dims.0 > usize::from(u16::MAX) || self.grid_dims.1 > usize::from(u16::MAX) {
            return bad(format!("grid {:?} exceeds the pack limit", self.grid_dims));
        }
        if omin > omax || pmin > pmax || pmin == 0 {
            return bad(format!("bad ranges: objects {omin}..={omax}, patches {pmin}..={pmax}"));
        }
        if omax > self.concept_count {
            return bad(format!("{omax} objects per image need distinct concepts, have {}", self.concept_count));
        }
        if omax * pmax > self.locations() {
            return bad(format!("{omax} objects of {pmax} patches exceed the {} grid cells", self.locations()));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return bad(format!("noise_scale must be finite and >= 0, got {}", self.noise_scale));
        }
        if !(0.0..=180.0).contains(&self.concept_separation) {
            return bad(format!("concept_separation must be within 0..=180 degrees, got {}", self.concept_separation));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedObject {
    pub image_id: String,
    pub category_id: i64,
    /// Row-major grid cells covered by the blob.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    /// Unit-norm prototypes; concept `i` has category id `i + 1`.
    pub prototypes: Vec<Vec<f32>>,
    pub maps: Vec<EmbeddingMap>,
    pub manifest: DatasetManifest,
    pub log: Vec<PlantedObject>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Rejection-samples unit prototypes whose pairwise cosine stays below
/// `cos(concept_separation)`.
pub fn sample_prototypes(spec: &SynthSpec) -> Result<Vec<Vec<f32>>> {
    let bound = spec.concept_separation.to_radians().cos();
    let mut rng = image_rng(spec.seed, "prototypes");
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(spec.concept_count);
    while protos.len() < spec.concept_count {
        let mut accepted = false;
        for _ in 0..PROTOTYPE_ATTEMPTS {
            let cand = unit(&gaussian(&mut rng, spec.channels));
            let ok = protos.iter().all(|p| p.iter().zip(&cand).map(|(a, b)| a * b).sum::<f64>() < bound);
            if ok {
                protos.push(cand);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(Error::InvalidArgument(format!(
                "cannot place {} prototypes {}° apart in {} dims (stuck at {})",
                spec.concept_count,
                spec.concept_separation,
                spec.channels,
                protos.len()
            )));
        }
    }
    Ok(protos.into_iter().map(|p| p.into_iter().map(|x| x as f32).collect()).collect())
}

/// Grows a 4-connected blob of up to `size` free cells from a random seed
/// cell. Stops early when the free region around it is exhausted.
fn grow_blob(rng: &mut ChaCha8Rng, occupied: &mut [bool], (h, w): (usize, usize), size: usize) -> Vec<usize> {
    let free: Vec<usize> = (0..h * w).filter(|&i| !occupied[i]).collect();
    let Some(&start) = free.choose(rng) else {
        return Vec::new();
    };
    let mut blob = vec![start];
    occupied[start] = true;
    let mut frontier: Vec<usize> = Vec::new();
    let push_neighbours = |cell: usize, occupied: &[bool], frontier: &mut Vec<usize>| {
        let (r, c) = (cell / w, cell % w);
        let mut cand = Vec::with_capacity(4);
        if r > 0 {
            cand.push(cell - w);
        }
        if r + 1 < h {
            cand.push(cell + w);
        }
        if c > 0 {
            cand.push(cell - 1);
        }
        if c + 1 < w {
            cand.push(cell + 1);
        }
        for n in cand {
            if !occupied[n] && !frontier.contains(&n) {
                frontier.push(n);
            }
        }
    };
    push_neighbours(start, occupied, &mut frontier);
    while blob.len() < size && !frontier.is_empty() {
        let cell = frontier.swap_remove(rng.random_range(0..frontier.len()));
        occupied[cell] = true;
        blob.push(cell);
        push_neighbours(cell, occupied, &mut frontier);
    }
    blob.sort_unstable();
    blob
}

fn synth_image(spec: &SynthSpec, prototypes: &[Vec<f32>], index: usize) -> (EmbeddingMap, Vec<PlantedObject>) {
    let image_id = format!("synth_{index:05}");
    let mut rng = image_rng(spec.seed, &image_id);
    let d = spec.channels;
    let k = spec.locations();
    let noise = spec.noise_scale;
    let patch_norm = (1.0 + noise * noise).sqrt();

    let mut values = vec![0.0f32; k * d];
    for cell in values.chunks_exact_mut(d) {
        let g = unit(&gaussian(&mut rng, d));
        for (v, x) in cell.iter_mut().zip(&g) {
            *v = (x * patch_norm) as f32;
        }
    }

    let (omin, omax) = spec.objects_per_image;
    let count = rng.random_range(omin..=omax);
    let concepts = rand::seq::index::sample(&mut rng, spec.concept_count, count);
    let mut occupied = vec![false; k];
    let mut objects = Vec::with_capacity(count);
    for concept in concepts.iter() {
        let size = rng.random_range(spec.object_patch_count.0..=spec.object_patch_count.1);
        let cells = grow_blob(&mut rng, &mut occupied, spec.grid_dims, size);
        let proto = &prototypes[concept];
        let scale = noise / (d as f64).sqrt();
        for &cell in &cells {
            let g = gaussian(&mut rng, d);
            for ((v, p), x) in values[cell * d..(cell + 1) * d].iter_mut().zip(proto).zip(&g) {
                *v = (f64::from(*p) + scale * x) as f32;
            }
        }
        objects.push(PlantedObject { image_id: image_id.clone(), category_id: concept as i64 + 1, cells });
    }
    let map = EmbeddingMap::new(image_id, spec.grid_dims.0, spec.grid_dims.1, d, values)
        .expect("generator produces consistent maps");
    (map, objects)
}

/// Generates the full dataset. Deterministic per spec, independent of the
/// thread count.
pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let prototypes = sample_prototypes(spec)?;
    let per_image: Vec<(EmbeddingMap, Vec<PlantedObject>)> =
        (0..spec.image_count).into_par_iter().map(|i| synth_image(spec, &prototypes, i)).collect();

    let (gh, gw) = spec.grid_dims;
    let mut maps = Vec::with_capacity(per_image.len());
    let mut log = Vec::new();
    let mut images = Vec::with_capacity(per_image.len());
    for (map, objects) in per_image {
        images.push(ImageInfo {
            id: map.image_id.clone(),
            width: gw as u32 * spec.patch_px,
            height: gh as u32 * spec.patch_px,
        });
        maps.push(map);
        log.extend(objects);
    }
    let categories = (1..=spec.concept_count as i64)
        .map(|id| Category { id, name: format!("concept_{id:02}"), rare: false })
        .collect();
    let annotations = log
        .iter()
        .map(|o| Annotation {
            image_id: o.image_id.clone(),
            category_id: o.category_id,
            area: spec.area_of(o.cells.len()),
        })
        .collect();
    let manifest = DatasetManifest { images, categories, annotations };
    Ok(SynthDataset { spec: spec.clone(), prototypes, maps, manifest, log })
}

impl SynthDataset {
    /// One query per concept: its prototype.
    pub fn queries(&self) -> BTreeMap<i64, QueryVector> {
        self.prototypes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let q = QueryVector::new(p, Some(format!("concept_{:02}", i + 1))).expect("prototypes are unit norm");
                (i as i64 + 1, q)
            })
            .collect()
    }

    /// Writes the dense pack, manifest, query pack and generation log.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
        let records = self.maps.iter().map(PackRecord::from_embedding_map).collect::<Result<Vec<_>>>()?;
        write_pack(dir.join(DENSE_PACK), self.spec.channels, false, &records)?;
        self.manifest.save(dir.join(MANIFEST_FILE))?;
        let queries = self
            .prototypes
            .iter()
            .enumerate()
            .map(|(i, p)| PackRecord {
                image_id: (i + 1).to_string(),
                grid_h: 1,
                grid_w: 1,
                method: Method::Global,
                vectors: p.clone(),
                labels: None,
            })
            .collect::<Vec<_>>();
        write_pack(dir.join(QUERY_PACK), self.spec.channels, false, &queries)?;
        let log_path = dir.join(LOG_FILE);
        fs::write(&log_path, serde_json::to_string(&self.log)?).map_err(|e| Error::path(&log_path, e))
    }
}
