//! Retrieval evaluation: per-category AP, mAP, mAP@k, size bands and rare
//! splits.
//!
//! Every category is a query; all indexed images are ranked for it and an
//! image is relevant iff it holds at least one annotated instance of the
//! category. Under a size band, relevance needs an instance within the band,
//! and images whose instances of the category all lie outside it are left
//! out of that ranking rather than counted as misses.
//! Categories without positives are left out of every mean and listed in
//! the report instead.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{search, FlatIndex, QueryVector};
use crate::store::{read_pack, DatasetManifest};

/// COCO small+medium upper bound, px².
pub const SMALL_MEDIUM_MAX_AREA: f64 = 96.0 * 96.0;
/// nuImages-style rare threshold on the annotation share.
pub const NUIMAGES_RARE_FRACTION: f64 = 0.003;

/// Average precision of a ranked relevance list.
///
/// Without a cutoff: `Σ_i P(i)·rel(i) / R`. With cutoff `c`, only the first
/// `c` ranks count and the normaliser is `min(R, c)`.
pub fn average_precision(relevance: &[bool], total_positives: usize, cutoff: Option<usize>) -> Result<f64> {
    if total_positives == 0 {
        return Err(Error::InvalidArgument("average precision needs at least one positive".into()));
    }
    if cutoff == Some(0) {
        return Err(Error::InvalidArgument("cutoff must be >= 1".into()));
    }
    let limit = cutoff.map_or(relevance.len(), |c| c.min(relevance.len()));
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (i, &rel) in relevance[..limit].iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits > total_positives {
        return Err(Error::InvalidArgument(format!(
            "{hits} relevant ranks exceed the {total_positives} declared positives"
        )));
    }
    let norm = cutoff.map_or(total_positives, |c| total_positives.min(c));
    Ok(sum / norm as f64)
}

/// Rare categories. With a threshold, a category is rare when its share of
/// all annotations is below it; without, the manifest's `rare` flags apply.
pub fn derive_rare_set(manifest: &DatasetManifest, threshold: Option<f64>) -> BTreeSet<i64> {
    match threshold {
        None => manifest.categories.iter().filter(|c| c.rare).map(|c| c.id).collect(),
        Some(t) => {
            let total = manifest.annotations.len();
            if total == 0 {
                return BTreeSet::new();
            }
            manifest
                .annotation_counts()
                .into_iter()
                .filter(|&(_, n)| (n as f64) / (total as f64) < t)
                .map(|(id, _)| id)
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CategoryFilter {
    #[default]
    All,
    RareOnly,
}

#[derive(Debug, Clone)]
pub struct EvalSpec<'a> {
    pub dataset: &'a DatasetManifest,
    /// `Some(50)` for mAP@50.
    pub cutoff: Option<usize>,
    /// Maximum instance area for the size-banded metric.
    pub size_band: Option<f64>,
    pub category_filter: CategoryFilter,
    /// Annotation-share threshold for the rare split; `None` uses the
    /// manifest flags.
    pub rare_threshold: Option<f64>,
}

impl<'a> EvalSpec<'a> {
    pub fn new(dataset: &'a DatasetManifest) -> Self {
        Self { dataset, cutoff: Some(50), size_band: None, category_filter: CategoryFilter::All, rare_threshold: None }
    }

    fn validate(&self) -> Result<()> {
        if self.cutoff == Some(0) {
            return Err(Error::InvalidArgument("cutoff must be >= 1".into()));
        }
        if let Some(a) = self.size_band {
            if a.is_nan() || a <= 0.0 {
                return Err(Error::InvalidArgument(format!("size band must be > 0, got {a}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryResult {
    pub category_id: i64,
    pub name: String,
    pub rare: bool,
    pub positives: usize,
    pub ap: f64,
    pub ap_at_cutoff: Option<f64>,
    /// Positives under the size band; `None` without a band.
    pub band_positives: Option<usize>,
    /// AP@cutoff (or full AP without cutoff) under the size band.
    pub band_ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub category_id: i64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoff: Option<usize>,
    pub size_band: Option<f64>,
    pub avg_representatives: f64,
    pub categories: Vec<CategoryResult>,
    pub excluded: Vec<Excluded>,
    /// Categories left out of the banded mean only.
    pub band_excluded: Vec<i64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    pub fn map(&self) -> Option<f64> {
        mean(self.categories.iter().map(|c| c.ap))
    }

    pub fn map_at_cutoff(&self) -> Option<f64> {
        mean(self.categories.iter().filter_map(|c| c.ap_at_cutoff))
    }

    pub fn band_map(&self) -> Option<f64> {
        mean(self.categories.iter().filter_map(|c| c.band_ap))
    }

    pub fn rare_map(&self) -> Option<f64> {
        mean(self.categories.iter().filter(|c| c.rare).map(|c| c.ap))
    }

    pub fn rare_map_at_cutoff(&self) -> Option<f64> {
        mean(self.categories.iter().filter(|c| c.rare).filter_map(|c| c.ap_at_cutoff))
    }

    /// Table-style aggregates keyed `mAP`, `mAP@50`, `mAP@50_s-m`,
    /// `rare_mAP`, `rare_mAP@50` (cutoff substituted), as percentages.
    pub fn aggregates(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let pct = |v: f64| v * 100.0;
        let at = self.cutoff.map(|c| format!("mAP@{c}"));
        if let Some(v) = self.map() {
            out.insert("mAP".to_owned(), pct(v));
        }
        if let (Some(key), Some(v)) = (&at, self.map_at_cutoff()) {
            out.insert(key.clone(), pct(v));
        }
        if let Some(v) = self.band_map() {
            let key = at.clone().unwrap_or_else(|| "mAP".into());
            out.insert(format!("{key}_s-m"), pct(v));
        }
        if let Some(v) = self.rare_map() {
            out.insert("rare_mAP".to_owned(), pct(v));
        }
        if let (Some(key), Some(v)) = (&at, self.rare_map_at_cutoff()) {
            out.insert(format!("rare_{key}"), pct(v));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serialises");
        v["aggregates"] = serde_json::to_value(self.aggregates()).expect("aggregates serialise");
        v
    }

    /// One CSV row per report with the aggregate columns, headed.
    pub fn to_csv(rows: &[(&str, &EvalReport)]) -> String {
        let cutoff = rows.first().and_then(|(_, r)| r.cutoff).unwrap_or(50);
        let mut out = format!("method,#rep,mAP@{cutoff},mAP,mAP@{cutoff}_s-m,rare_mAP@{cutoff},rare_mAP\n");
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{:.2}", x * 100.0));
        for (label, r) in rows {
            let _ = writeln!(
                out,
                "{label},{:.1},{},{},{},{},{}",
                r.avg_representatives,
                cell(r.map_at_cutoff()),
                cell(r.map()),
                cell(r.band_map()),
                cell(r.rare_map_at_cutoff()),
                cell(r.rare_map())
            );
        }
        out
    }

    /// Per-category mean over several runs (e.g. aggregation seeds). All
    /// reports must cover the same categories.
    pub fn average(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or_else(|| Error::InvalidArgument("no reports to average".into()))?;
        let n = reports.len() as f64;
        let mut out = first.clone();
        for r in &reports[1..] {
            if r.categories.len() != first.categories.len()
                || r.categories.iter().zip(&first.categories).any(|(a, b)| a.category_id != b.category_id)
            {
                return Err(Error::Validation("reports cover different categories".into()));
            }
        }
        let avg = |f: &dyn Fn(&EvalReport) -> Option<f64>| -> Option<f64> {
            reports.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
        };
        for (i, c) in out.categories.iter_mut().enumerate() {
            c.ap = reports.iter().map(|r| r.categories[i].ap).sum::<f64>() / n;
            c.ap_at_cutoff = avg(&|r| r.categories[i].ap_at_cutoff);
            c.band_ap = avg(&|r| r.categories[i].band_ap);
        }
        out.avg_representatives = reports.iter().map(|r| r.avg_representatives).sum::<f64>() / n;
        Ok(out)
    }
}

/// Reads a query pack: one single-vector record per category, with the
/// category id as the record id.
pub fn load_queries(path: impl AsRef<std::path::Path>) -> Result<BTreeMap<i64, QueryVector>> {
    let mut out = BTreeMap::new();
    let reader = read_pack(path)?;
    let channels = reader.channels();
    for record in reader {
        let record = record?;
        let id: i64 = record
            .image_id
            .parse()
            .map_err(|_| Error::Format(format!("query record id {:?} is not a category id", record.image_id)))?;
        if record.vec_count(channels) != 1 {
            return Err(Error::Format(format!(
                "query record {id} holds {} vectors, expected 1",
                record.vec_count(channels)
            )));
        }
        let query = QueryVector::new(&record.vectors, Some(id.to_string()))?;
        if out.insert(id, query).is_some() {
            return Err(Error::Format(format!("duplicate query for category {id}")));
        }
    }
    Ok(out)
}

/// Runs every selected category's query against the index and scores the
/// full ranking.
pub fn evaluate(index: &FlatIndex, queries: &BTreeMap<i64, QueryVector>, spec: &EvalSpec<'_>) -> Result<EvalReport> {
    spec.validate()?;
    let manifest = spec.dataset;
    let rare = derive_rare_set(manifest, spec.rare_threshold);

    let mut positives: HashMap<i64, HashSet<&str>> = HashMap::new();
    let mut band: HashMap<i64, HashSet<&str>> = HashMap::new();
    for a in &manifest.annotations {
        positives.entry(a.category_id).or_default().insert(&a.image_id);
        if spec.size_band.is_some_and(|max| a.area <= max) {
            band.entry(a.category_id).or_default().insert(&a.image_id);
        }
    }

    let mut categories = Vec::new();
    let mut excluded = Vec::new();
    let mut band_excluded = Vec::new();
    for cat in &manifest.categories {
        let is_rare = rare.contains(&cat.id);
        if spec.category_filter == CategoryFilter::RareOnly && !is_rare {
            continue;
        }
        let pos = positives.get(&cat.id);
        let r = pos.map_or(0, HashSet::len);
        if r == 0 {
            excluded.push(Excluded { category_id: cat.id, reason: "no positive images".into() });
            continue;
        }
        let query = queries
            .get(&cat.id)
            .ok_or_else(|| Error::InvalidArgument(format!("no query vector for category {} ({})", cat.id, cat.name)))?;
        let ranking = search(index, query, index.image_count())?;
        let pos = pos.unwrap();
        let relevance: Vec<bool> = ranking.entries.iter().map(|e| pos.contains(e.image_id.as_str())).collect();
        let ap = average_precision(&relevance, r, None)?;
        let ap_at_cutoff = spec.cutoff.map(|c| average_precision(&relevance, r, Some(c))).transpose()?;

        let (band_positives, band_ap) = match spec.size_band {
            None => (None, None),
            Some(_) => {
                let bpos = band.get(&cat.id);
                let br = bpos.map_or(0, HashSet::len);
                if br == 0 {
                    band_excluded.push(cat.id);
                    (Some(0), None)
                } else {
                    let bpos = bpos.unwrap();
                    // images whose instances all fall outside the band are ignored, as in COCO area ranges
                    let rel: Vec<bool> = ranking
                        .entries
                        .iter()
                        .filter(|e| bpos.contains(e.image_id.as_str()) || !pos.contains(e.image_id.as_str()))
                        .map(|e| bpos.contains(e.image_id.as_str()))
                        .collect();
                    (Some(br), Some(average_precision(&rel, br, spec.cutoff)?))
                }
            }
        };
        categories.push(CategoryResult {
            category_id: cat.id,
            name: cat.name.clone(),
            rare: is_rare,
            positives: r,
            ap,
            ap_at_cutoff,
            band_positives,
            band_ap,
        });
    }
    Ok(EvalReport {
        cutoff: spec.cutoff,
        size_band: spec.size_band,
        avg_representatives: index.avg_representatives(),
        categories,
        excluded,
        band_excluded,
    })
}
