//! Flat max-cosine index over representative sets.
//!
//! Every stored vector is L2-normalised once at build time, so a dot product
//! is a cosine. An image's score for a query is the maximum cosine over its
//! vectors; search is an exact single pass with an owner-indexed running max.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{Method, RepresentativeSet};
use crate::error::{Error, Result};
use crate::store::{PackReader, PackRecord, PackWriter};

pub const INDEX_FILE: &str = "index.epk";

/// Unit-length copy of `v`, or `None` for a zero or non-finite vector.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| (f64::from(*x) / norm) as f32).collect())
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// A unit-norm search vector in the shared embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryVector {
    values: Vec<f32>,
    pub label: Option<String>,
}

impl QueryVector {
    /// Normalises `values`; zero and non-finite vectors are rejected.
    pub fn new(values: &[f32], label: Option<String>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("query vector"));
        }
        let values = normalize(values).ok_or_else(|| Error::InvalidArgument("query vector has zero norm".into()))?;
        Ok(Self { values, label })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Prompt ensembling: normalise each prompt embedding, average, normalise.
pub fn ensemble_query(prompt_vectors: &[Vec<f32>]) -> Result<QueryVector> {
    let dim =
        prompt_vectors.first().ok_or_else(|| Error::InvalidArgument("no prompt vectors to ensemble".into()))?.len();
    let mut acc = vec![0.0f64; dim];
    for (i, v) in prompt_vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::Dimension(format!("prompt vector {i} has {} dims, expected {dim}", v.len())));
        }
        let unit = normalize(v).ok_or_else(|| Error::InvalidArgument(format!("prompt vector {i} has zero norm")))?;
        for (a, x) in acc.iter_mut().zip(unit) {
            *a += f64::from(x);
        }
    }
    let n = prompt_vectors.len() as f64;
    let mean: Vec<f32> = acc.iter().map(|a| (a / n) as f32).collect();
    let norm = mean.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm < 1e-6 {
        return Err(Error::InvalidArgument("prompt vectors cancel out".into()));
    }
    QueryVector::new(&mean, None)
}

/// Max cosine between the query and any representative of one image.
pub fn score_image(query: &QueryVector, reps: &RepresentativeSet) -> Result<f32> {
    if reps.channels != query.dim() {
        return Err(Error::Dimension(format!(
            "query has {} dims, representatives have {}",
            query.dim(),
            reps.channels
        )));
    }
    if reps.is_empty() {
        return Err(Error::InvalidArgument(format!("{:?} has no representatives", reps.image_id)));
    }
    reps.iter()
        .map(|v| {
            normalize(v)
                .map(|u| dot(query.values(), &u))
                .ok_or_else(|| Error::InvalidArgument(format!("zero-norm representative in {:?}", reps.image_id)))
        })
        .try_fold(f32::NEG_INFINITY, |best, s| Ok(best.max(s?)))
}

/// Immutable exact-search index.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    channels: usize,
    vectors: Vec<f32>,
    owner: Vec<u32>,
    images: Vec<String>,
    methods: Vec<Method>,
    grids: Vec<(u16, u16)>,
}

/// Accumulates images for a [`FlatIndex`]; one record per image id.
#[derive(Debug)]
pub struct IndexBuilder {
    index: FlatIndex,
    seen: HashSet<String>,
    normalise: bool,
}

impl IndexBuilder {
    pub fn new(channels: usize) -> Self {
        Self {
            index: FlatIndex {
                channels,
                vectors: Vec::new(),
                owner: Vec::new(),
                images: Vec::new(),
                methods: Vec::new(),
                grids: Vec::new(),
            },
            seen: HashSet::new(),
            normalise: true,
        }
    }

    pub fn add(&mut self, image_id: &str, method: Method, vectors: &[f32]) -> Result<()> {
        self.add_with_grid(image_id, method, vectors, (0, 0))
    }

    /// As [`IndexBuilder::add`], recording the source grid so a saved index
    /// keeps valid dense records. `(0, 0)` means unknown.
    pub fn add_with_grid(&mut self, image_id: &str, method: Method, vectors: &[f32], grid: (u16, u16)) -> Result<()> {
        let c = self.index.channels;
        if c == 0 || vectors.is_empty() || !vectors.len().is_multiple_of(c) {
            return Err(Error::Dimension(format!(
                "image {image_id:?}: {} values do not form {c}-channel vectors",
                vectors.len()
            )));
        }
        if !self.seen.insert(image_id.to_owned()) {
            return Err(Error::Validation(format!("image {image_id:?} appears more than once")));
        }
        let ordinal = u32::try_from(self.index.images.len())
            .map_err(|_| Error::InvalidArgument("too many images for one index".into()))?;
        let start = self.index.vectors.len();
        for v in vectors.chunks_exact(c) {
            if self.normalise {
                let unit = normalize(v).ok_or_else(|| {
                    self.index.vectors.truncate(start);
                    Error::InvalidArgument(format!("zero-norm representative in image {image_id:?}"))
                })?;
                self.index.vectors.extend(unit);
            } else {
                self.index.vectors.extend_from_slice(v);
            }
        }
        self.index.owner.extend(std::iter::repeat_n(ordinal, vectors.len() / c));
        self.index.images.push(image_id.to_owned());
        self.index.methods.push(method);
        self.index.grids.push(grid);
        Ok(())
    }

    pub fn add_set(&mut self, set: &RepresentativeSet) -> Result<()> {
        if set.channels != self.index.channels {
            return Err(Error::Dimension(format!(
                "image {:?} has {} channels, index has {}",
                set.image_id, set.channels, self.index.channels
            )));
        }
        let (h, w) = set.grid_dims;
        let grid = (u16::try_from(h).unwrap_or(0), u16::try_from(w).unwrap_or(0));
        self.add_with_grid(&set.image_id, set.method, &set.vectors, grid)
    }

    pub fn finish(self) -> FlatIndex {
        self.index
    }
}

impl FlatIndex {
    pub fn builder(channels: usize) -> IndexBuilder {
        IndexBuilder::new(channels)
    }

    pub fn from_sets<'a>(sets: impl IntoIterator<Item = &'a RepresentativeSet>) -> Result<Self> {
        let mut sets = sets.into_iter().peekable();
        let channels = sets.peek().ok_or_else(|| Error::InvalidArgument("cannot index zero images".into()))?.channels;
        let mut b = IndexBuilder::new(channels);
        for s in sets {
            b.add_set(s)?;
        }
        Ok(b.finish())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn vector_count(&self) -> usize {
        self.owner.len()
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[String] {
        &self.images
    }

    /// Image ordinal of every stored vector.
    pub fn owners(&self) -> &[u32] {
        &self.owner
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.channels..(i + 1) * self.channels]
    }

    pub fn avg_representatives(&self) -> f64 {
        if self.images.is_empty() {
            0.0
        } else {
            self.owner.len() as f64 / self.images.len() as f64
        }
    }

    /// Writes the normalised vectors as `index.epk` inside `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
        let mut w = PackWriter::create(dir.join(INDEX_FILE), self.channels, false)?;
        let mut start = 0;
        for (ordinal, id) in self.images.iter().enumerate() {
            let mut end = start;
            while end < self.owner.len() && self.owner[end] as usize == ordinal {
                end += 1;
            }
            let (grid_h, grid_w) = match self.grids[ordinal] {
                (0, _) | (_, 0) if self.methods[ordinal] == Method::Dense => {
                    let n = u16::try_from(end - start).map_err(|_| {
                        Error::InvalidArgument(format!("dense image {id:?} has too many vectors to save"))
                    })?;
                    (1, n)
                }
                g => g,
            };
            w.write(&PackRecord {
                image_id: id.clone(),
                grid_h,
                grid_w,
                method: self.methods[ordinal],
                vectors: self.vectors[start * self.channels..end * self.channels].to_vec(),
                labels: None,
            })?;
            start = end;
        }
        w.finish()?;
        Ok(())
    }

    /// Loads an index written by [`FlatIndex::save`]; vectors are used as stored.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let reader = PackReader::open(dir.as_ref().join(INDEX_FILE))?;
        let mut b = IndexBuilder::new(reader.channels());
        b.normalise = false;
        for r in reader {
            let r = r?;
            b.add_with_grid(&r.image_id, r.method, &r.vectors, (r.grid_h, r.grid_w))?;
        }
        Ok(b.finish())
    }
}

/// Builds an index from representative packs. Images keep first-appearance
/// order; every image id may occur only once across all packs.
pub fn build_index<P: AsRef<Path>>(packs: &[P]) -> Result<FlatIndex> {
    let mut builder: Option<IndexBuilder> = None;
    for path in packs {
        let reader = PackReader::open(path)?;
        let b = builder.get_or_insert_with(|| IndexBuilder::new(reader.channels()));
        if reader.channels() != b.index.channels {
            return Err(Error::Dimension(format!(
                "{} has {} channels, earlier packs have {}",
                path.as_ref().display(),
                reader.channels(),
                b.index.channels
            )));
        }
        for r in reader {
            let r = r?;
            b.add_with_grid(&r.image_id, r.method, &r.vectors, (r.grid_h, r.grid_w))?;
        }
    }
    builder.map(IndexBuilder::finish).ok_or_else(|| Error::InvalidArgument("no packs given".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub image_id: String,
    pub score: f32,
}

/// Images by descending score, ties by ascending image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub label: Option<String>,
    pub entries: Vec<RankedEntry>,
}

pub(crate) fn rank_order(a: (&str, f32), b: (&str, f32)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Exact top-`k` search. `top_k` larger than the image count returns every
/// image.
pub fn search(index: &FlatIndex, query: &QueryVector, top_k: usize) -> Result<RankedList> {
    if top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be >= 1".into()));
    }
    if index.is_empty() {
        return Err(Error::InvalidArgument("index is empty".into()));
    }
    if query.dim() != index.channels {
        return Err(Error::Dimension(format!("query has {} dims, index has {}", query.dim(), index.channels)));
    }
    let mut best = vec![f32::NEG_INFINITY; index.images.len()];
    for (v, &owner) in index.vectors.chunks_exact(index.channels).zip(&index.owner) {
        let s = dot(query.values(), v);
        let slot = &mut best[owner as usize];
        if s > *slot {
            *slot = s;
        }
    }
    let mut order: Vec<usize> = (0..best.len()).collect();
    let cmp = |a: &usize, b: &usize| rank_order((&index.images[*a], best[*a]), (&index.images[*b], best[*b]));
    if top_k < order.len() {
        order.select_nth_unstable_by(top_k - 1, cmp);
        order.truncate(top_k);
    }
    order.sort_unstable_by(cmp);
    Ok(RankedList {
        label: query.label.clone(),
        entries: order.into_iter().map(|i| RankedEntry { image_id: index.images[i].clone(), score: best[i] }).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(id: &str, vectors: Vec<f32>, c: usize) -> RepresentativeSet {
        RepresentativeSet::new(id, Method::Kmeans, c, vectors, None, (1, 1)).unwrap()
    }

    #[test]
    fn identical_prompts_keep_direction() {
        let q = ensemble_query(&vec![vec![3.0, 4.0]; 7]).unwrap();
        assert!((q.values()[0] - 0.6).abs() < 1e-7 && (q.values()[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn antipodal_prompts_cancel() {
        assert!(ensemble_query(&[vec![1.0, 2.0], vec![-1.0, -2.0]]).is_err());
        assert!(ensemble_query(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(ensemble_query(&[vec![0.0, 0.0]]).is_err());
        assert!(ensemble_query(&[]).is_err());
    }

    #[test]
    fn score_self_and_orthogonal() {
        let reps = set("a", vec![2.0, 0.0, 0.0, 0.0, 5.0, 0.0], 3);
        let q = QueryVector::new(&[0.0, 1.0, 0.0], None).unwrap();
        assert_eq!(score_image(&q, &reps).unwrap(), 1.0);
        let q = QueryVector::new(&[0.0, 0.0, 1.0], None).unwrap();
        assert_eq!(score_image(&q, &reps).unwrap(), 0.0);
    }

    #[test]
    fn singleton_index() {
        let idx = FlatIndex::from_sets([&set("only", vec![1.0, 1.0], 2)]).unwrap();
        assert_eq!(idx.vector_count(), 1);
        let q = QueryVector::new(&[-1.0, 0.0], None).unwrap();
        for k in [1, 5] {
            let r = search(&idx, &q, k).unwrap();
            assert_eq!(r.entries.len(), 1);
            assert_eq!(r.entries[0].image_id, "only");
        }
    }

    #[test]
    fn ties_go_to_lower_id() {
        let idx = FlatIndex::from_sets([&set("b", vec![1.0, 0.0], 2), &set("a", vec![1.0, 0.0], 2)]).unwrap();
        let q = QueryVector::new(&[1.0, 1.0], None).unwrap();
        let r = search(&idx, &q, 2).unwrap();
        assert_eq!(r.entries[0].image_id, "a");
        assert_eq!(r.entries[0].score, r.entries[1].score);
    }

    #[test]
    fn duplicate_and_zero_vectors_rejected() {
        assert!(FlatIndex::from_sets([&set("a", vec![1.0, 0.0], 2), &set("a", vec![0.0, 1.0], 2)]).is_err());
        let zero = RepresentativeSet { vectors: vec![0.0, 0.0], ..set("z", vec![1.0, 0.0], 2) };
        let err = FlatIndex::from_sets([&zero]).unwrap_err();
        assert!(err.to_string().contains("\"z\""));
    }

    #[test]
    fn errors_on_bad_search_args() {
        let idx = FlatIndex::from_sets([&set("a", vec![1.0, 0.0], 2)]).unwrap();
        let q = QueryVector::new(&[1.0, 0.0], None).unwrap();
        assert!(search(&idx, &q, 0).is_err());
        let q3 = QueryVector::new(&[1.0, 0.0, 0.0], None).unwrap();
        assert!(search(&idx, &q3, 1).is_err());
        assert!(search(&IndexBuilder::new(2).finish(), &q, 1).is_err());
    }

    fn arb_sets() -> impl Strategy<Value = Vec<Vec<f32>>> {
        proptest::collection::vec(proptest::collection::vec(0.1f32..1.0, 3..=9), 2..12).prop_map(|v| {
            v.into_iter()
                .map(|mut x| {
                    x.truncate(x.len() / 3 * 3);
                    x
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn positive_scaling_never_changes_rankings(
            sets in arb_sets(),
            scale in 0.01f32..100.0,
            q in proptest::collection::vec(-1.0f32..1.0, 3),
        ) {
            prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
            let q = QueryVector::new(&q, None).unwrap();
            let reps: Vec<_> = sets.iter().enumerate().map(|(i, v)| set(&format!("{i:02}"), v.clone(), 3)).collect();
            let scaled: Vec<_> = reps
                .iter()
                .map(|s| RepresentativeSet { vectors: s.vectors.iter().map(|x| x * scale).collect(), ..s.clone() })
                .collect();
            let a = search(&FlatIndex::from_sets(&reps).unwrap(), &q, reps.len()).unwrap();
            let b = search(&FlatIndex::from_sets(&scaled).unwrap(), &q, reps.len()).unwrap();
            let ids = |r: &RankedList| r.entries.iter().map(|e| e.image_id.clone()).collect::<Vec<_>>();
            // normalisation rounding may swap exact near-ties only
            for (x, y) in a.entries.iter().zip(&b.entries) {
                prop_assert!((x.score - y.score).abs() <= 1e-6);
            }
            if a.entries.windows(2).all(|w| w[0].score - w[1].score > 1e-5) {
                prop_assert_eq!(ids(&a), ids(&b));
            }
        }

        #[test]
        fn adding_a_representative_never_lowers_a_score(
            base in proptest::collection::vec(0.1f32..1.0, 3),
            extra in proptest::collection::vec(-1.0f32..1.0, 3),
            q in proptest::collection::vec(-1.0f32..1.0, 3),
        ) {
            prop_assume!(q.iter().any(|x| x.abs() > 1e-3) && extra.iter().any(|x| x.abs() > 1e-3));
            let q = QueryVector::new(&q, None).unwrap();
            let before = score_image(&q, &set("x", base.clone(), 3)).unwrap();
            let mut more = base.clone();
            more.extend(extra);
            prop_assert!(score_image(&q, &set("x", more, 3)).unwrap() >= before);
        }
    }
}
