//! Dataset model, ingestion, filtering, splitting, statistics, and
//! injection of fabricated interactions.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Inclusive rating bounds. Amazon-style 1..5 by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale { min: 1.0, max: 5.0 }
    }
}

impl RatingScale {
    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.max(self.min).min(self.max)
    }

    /// Clamp then round to the integer grid.
    pub fn snap(&self, r: f64) -> f64 {
        self.clamp(r).round().max(self.min).min(self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: String,
    pub title: String,
    #[serde(default)]
    pub category: String,
    /// Interaction count in the training split.
    #[serde(default)]
    pub popularity: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<String>,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub users: BTreeSet<String>,
    pub items: BTreeMap<String, ItemMeta>,
    pub interactions: Vec<InteractionRecord>,
    pub scale: RatingScale,
}

impl Dataset {
    /// Build a dataset from interaction records, synthesizing catalog
    /// entries for items without metadata. Popularity is recomputed.
    pub fn from_records(
        records: Vec<InteractionRecord>,
        catalog: Option<Vec<ItemMeta>>,
        scale: RatingScale,
    ) -> Dataset {
        let mut items: BTreeMap<String, ItemMeta> = BTreeMap::new();
        if let Some(metas) = catalog {
            for m in metas {
                items.insert(m.item_id.clone(), m);
            }
        }
        let mut users = BTreeSet::new();
        for rec in &records {
            users.insert(rec.user_id.clone());
            items.entry(rec.item_id.clone()).or_insert_with(|| ItemMeta {
                item_id: rec.item_id.clone(),
                title: rec.item_id.clone(),
                category: String::new(),
                popularity: 0,
            });
        }
        let mut ds = Dataset { users, items, interactions: records, scale };
        ds.recompute_popularity();
        ds
    }

    pub fn recompute_popularity(&mut self) {
        for meta in self.items.values_mut() {
            meta.popularity = 0;
        }
        for rec in &self.interactions {
            if let Some(meta) = self.items.get_mut(&rec.item_id) {
                meta.popularity += 1;
            }
        }
    }

    pub fn by_user(&self) -> BTreeMap<&str, Vec<&InteractionRecord>> {
        let mut map: BTreeMap<&str, Vec<&InteractionRecord>> = BTreeMap::new();
        for rec in &self.interactions {
            map.entry(rec.user_id.as_str()).or_default().push(rec);
        }
        map
    }

    pub fn by_item(&self) -> BTreeMap<&str, Vec<&InteractionRecord>> {
        let mut map: BTreeMap<&str, Vec<&InteractionRecord>> = BTreeMap::new();
        for rec in &self.interactions {
            map.entry(rec.item_id.as_str()).or_default().push(rec);
        }
        map
    }

    /// Mean number of interactions per user that has any.
    pub fn mean_profile_len(&self) -> f64 {
        let by_user = self.by_user();
        if by_user.is_empty() {
            return 0.0;
        }
        self.interactions.len() as f64 / by_user.len() as f64
    }

    /// (min, max) timestamp over all interactions; (0, 0) when empty.
    pub fn timestamp_range(&self) -> (i64, i64) {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for rec in &self.interactions {
            lo = lo.min(rec.timestamp);
            hi = hi.max(rec.timestamp);
        }
        if lo > hi {
            (0, 0)
        } else {
            (lo, hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    /// Rows rejected because the rating fell outside the configured scale.
    pub rejected_ratings: usize,
    /// (user, item) duplicates collapsed (latest timestamp kept).
    pub deduplicated: usize,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    user_id: String,
    item_id: String,
    rating: f64,
    timestamp: i64,
    #[serde(default)]
    review: Option<String>,
}

/// Load interactions from CSV (`user_id,item_id,rating,timestamp,review`)
/// or JSONL with the same keys. Duplicate (user, item) pairs keep the
/// record with the latest timestamp; later rows win ties.
pub fn ingest<P: AsRef<Path>>(
    path: P,
    format: FileFormat,
    scale: RatingScale,
) -> Result<(Dataset, IngestReport)> {
    let rows = read_rows(path.as_ref(), format)?;
    let mut report = IngestReport::default();
    let mut keyed: BTreeMap<(String, String), InteractionRecord> = BTreeMap::new();
    for row in rows {
        if !scale.contains(row.rating) {
            report.rejected_ratings += 1;
            continue;
        }
        let review = row.review.filter(|r| !r.is_empty());
        let rec = InteractionRecord {
            user_id: row.user_id,
            item_id: row.item_id,
            rating: row.rating,
            review,
            timestamp: row.timestamp,
        };
        let key = (rec.user_id.clone(), rec.item_id.clone());
        match keyed.get(&key) {
            Some(old) if old.timestamp > rec.timestamp => {
                report.deduplicated += 1;
            }
            Some(_) => {
                report.deduplicated += 1;
                keyed.insert(key, rec);
            }
            None => {
                keyed.insert(key, rec);
            }
        }
    }
    let records: Vec<InteractionRecord> = keyed.into_values().collect();
    Ok((Dataset::from_records(records, None, scale), report))
}

fn read_rows(path: &Path, format: FileFormat) -> Result<Vec<RawRow>> {
    match format {
        FileFormat::Csv => {
            let mut reader = csv::Reader::from_path(path)?;
            let mut rows = Vec::new();
            for (idx, result) in reader.deserialize::<RawRow>().enumerate() {
                // +2: header line plus 1-based numbering.
                let row = result.map_err(|e| CoreError::Parse { line: idx + 2, msg: e.to_string() })?;
                rows.push(row);
            }
            Ok(rows)
        }
        FileFormat::Jsonl => {
            let file = std::fs::File::open(path)?;
            let mut rows = Vec::new();
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let row = serde_json::from_str(&line)
                    .map_err(|e| CoreError::Parse { line: idx + 1, msg: e.to_string() })?;
                rows.push(row);
            }
            Ok(rows)
        }
    }
}

/// Items metadata file: JSONL `{item_id, title, category}`.
pub fn load_items<P: AsRef<Path>>(path: P) -> Result<Vec<ItemMeta>> {
    let file = std::fs::File::open(path)?;
    let mut metas = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: ItemMeta = serde_json::from_str(&line)
            .map_err(|e| CoreError::Parse { line: idx + 1, msg: e.to_string() })?;
        metas.push(meta);
    }
    Ok(metas)
}

pub fn write_interactions_csv<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "item_id", "rating", "timestamp", "review"])?;
    for rec in &ds.interactions {
        w.write_record([
            rec.user_id.as_str(),
            rec.item_id.as_str(),
            &format_rating(rec.rating),
            &rec.timestamp.to_string(),
            rec.review.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn format_rating(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

pub fn write_items_jsonl<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for meta in ds.items.values() {
        let line = serde_json::json!({
            "item_id": meta.item_id,
            "title": meta.title,
            "category": meta.category,
        });
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Iteratively drop users and items with fewer than `k` interactions
/// until a fixed point is reached.
pub fn filter_min_interactions(ds: &Dataset, k: usize) -> Dataset {
    assert!(k >= 1, "k must be >= 1");
    let mut records = ds.interactions.clone();
    loop {
        let mut user_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut item_counts: BTreeMap<String, usize> = BTreeMap::new();
        for rec in &records {
            *user_counts.entry(rec.user_id.clone()).or_default() += 1;
            *item_counts.entry(rec.item_id.clone()).or_default() += 1;
        }
        let before = records.len();
        records.retain(|rec| {
            user_counts[&rec.user_id] >= k && item_counts[&rec.item_id] >= k
        });
        if records.len() == before {
            break;
        }
    }
    if records.is_empty() {
        log::warn!("filter_min_interactions(k={k}) produced an empty dataset");
    }
    let catalog: Vec<ItemMeta> = ds.items.values().cloned().collect();
    let mut out = Dataset::from_records(records, Some(catalog), ds.scale);
    // Keep only surviving entities.
    let live_items: BTreeSet<String> = out.interactions.iter().map(|r| r.item_id.clone()).collect();
    out.items.retain(|id, _| live_items.contains(id));
    out
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

/// Interaction-level random 8:1:1 split, deterministic given the seed.
/// Catalog popularity in all three views reflects the training split.
pub fn split(ds: &Dataset, ratios: (u32, u32, u32), seed: u64) -> Result<SplitDataset> {
    let (a, b, c) = ratios;
    if a + b + c != 10 {
        return Err(CoreError::Invalid(format!("split ratios must sum to 10, got {ratios:?}")));
    }
    if ds.interactions.is_empty() {
        return Err(CoreError::Invalid("cannot split an empty dataset".into()));
    }
    let n = ds.interactions.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_val = n * b as usize / 10;
    let n_test = n * c as usize / 10;
    let n_train = n - n_val - n_test;

    let pick = |slice: &[usize]| -> Vec<InteractionRecord> {
        let mut idx: Vec<usize> = slice.to_vec();
        idx.sort_unstable();
        idx.iter().map(|&i| ds.interactions[i].clone()).collect()
    };
    let train_recs = pick(&order[..n_train]);
    let val_recs = pick(&order[n_train..n_train + n_val]);
    let test_recs = pick(&order[n_train + n_val..]);

    let catalog: Vec<ItemMeta> = ds.items.values().cloned().collect();
    let mut train = Dataset::from_records(train_recs, Some(catalog.clone()), ds.scale);
    train.users = ds.users.clone();
    let make_view = |recs: Vec<InteractionRecord>| -> Dataset {
        let mut view = Dataset::from_records(recs, Some(catalog.clone()), ds.scale);
        view.users = ds.users.clone();
        // Popularity is defined over the training split.
        for (id, meta) in view.items.iter_mut() {
            meta.popularity = train.items[id].popularity;
        }
        view
    };
    let validation = make_view(val_recs);
    let test = make_view(test_recs);
    Ok(SplitDataset { train, validation, test, seed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub sparsity: f64,
    pub global_mean: f64,
    pub global_std: f64,
    pub per_item_mean: BTreeMap<String, f64>,
    pub per_item_std: BTreeMap<String, f64>,
}

/// Population statistics over the dataset's ratings. Per-item std of a
/// single-rating item is 0.
pub fn compute_stats(ds: &Dataset) -> Result<DatasetStats> {
    if ds.interactions.is_empty() {
        return Err(CoreError::Invalid("compute_stats requires a non-empty dataset".into()));
    }
    let num_users = ds.users.len();
    let num_items = ds.items.len();
    let num_interactions = ds.interactions.len();
    let cells = num_users as f64 * num_items as f64;
    let sparsity = 1.0 - num_interactions as f64 / cells;

    let mean = ds.interactions.iter().map(|r| r.rating).sum::<f64>() / num_interactions as f64;
    let var = ds
        .interactions
        .iter()
        .map(|r| (r.rating - mean).powi(2))
        .sum::<f64>()
        / num_interactions as f64;

    let mut per_item_mean = BTreeMap::new();
    let mut per_item_std = BTreeMap::new();
    for (item, recs) in ds.by_item() {
        let m = recs.iter().map(|r| r.rating).sum::<f64>() / recs.len() as f64;
        let v = recs.iter().map(|r| (r.rating - m).powi(2)).sum::<f64>() / recs.len() as f64;
        per_item_mean.insert(item.to_string(), m);
        per_item_std.insert(item.to_string(), v.sqrt());
    }
    Ok(DatasetStats {
        num_users,
        num_items,
        num_interactions,
        sparsity,
        global_mean: mean,
        global_std: var.sqrt(),
        per_item_mean,
        per_item_std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Filler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileInteraction {
    pub item_id: String,
    pub rating: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<String>,
    pub timestamp: i64,
    pub role: Role,
}

/// One fake user's full fabricated interaction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionProfile {
    pub fake_user_id: String,
    pub interactions: Vec<ProfileInteraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionManifest {
    pub attack: String,
    pub target_item: String,
    pub direction: String,
    pub seed: u64,
    pub config_hash: String,
    /// Per fake user sub-strategy, used by the mixed attack.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sub_strategies: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionFile {
    pub manifest: InjectionManifest,
    pub profiles: Vec<InjectionProfile>,
}

#[derive(Serialize, Deserialize)]
struct WireInteraction {
    fake_user_id: String,
    item_id: String,
    rating: f64,
    review: Option<String>,
    timestamp: i64,
    role: Role,
}

/// JSONL: the first line is the manifest, each subsequent line one fake
/// interaction record.
pub fn write_injection_file<P: AsRef<Path>>(file: &InjectionFile, path: P) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", serde_json::to_string(&file.manifest).map_err(invalid_json)?)?;
    for profile in &file.profiles {
        for rec in &profile.interactions {
            let wire = WireInteraction {
                fake_user_id: profile.fake_user_id.clone(),
                item_id: rec.item_id.clone(),
                rating: rec.rating,
                review: rec.review.clone(),
                timestamp: rec.timestamp,
                role: rec.role,
            };
            writeln!(f, "{}", serde_json::to_string(&wire).map_err(invalid_json)?)?;
        }
    }
    Ok(())
}

pub fn read_injection_file<P: AsRef<Path>>(path: P) -> Result<InjectionFile> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let manifest_line = lines
        .next()
        .ok_or_else(|| CoreError::Invalid("injection file is empty".into()))??;
    let manifest: InjectionManifest = serde_json::from_str(&manifest_line)
        .map_err(|e| CoreError::Parse { line: 1, msg: e.to_string() })?;
    let mut profiles: BTreeMap<String, InjectionProfile> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireInteraction = serde_json::from_str(&line)
            .map_err(|e| CoreError::Parse { line: idx + 2, msg: e.to_string() })?;
        if !profiles.contains_key(&wire.fake_user_id) {
            order.push(wire.fake_user_id.clone());
        }
        profiles
            .entry(wire.fake_user_id.clone())
            .or_insert_with(|| InjectionProfile {
                fake_user_id: wire.fake_user_id.clone(),
                interactions: Vec::new(),
            })
            .interactions
            .push(ProfileInteraction {
                item_id: wire.item_id,
                rating: wire.rating,
                review: wire.review,
                timestamp: wire.timestamp,
                role: wire.role,
            });
    }
    let profiles = order.into_iter().map(|id| profiles.remove(&id).unwrap()).collect();
    Ok(InjectionFile { manifest, profiles })
}

fn invalid_json(e: serde_json::Error) -> CoreError {
    CoreError::Invalid(e.to_string())
}

/// Training data with fake interactions merged in, plus the ground-truth
/// label set kept outside the dataset itself.
#[derive(Debug, Clone)]
pub struct InjectedDataset {
    pub dataset: Dataset,
    pub fake_users: BTreeSet<String>,
}

/// D' = D ∪ D_a. Fake user ids must be disjoint from genuine ones; the
/// genuine records are copied untouched.
pub fn inject(ds: &Dataset, profiles: &[InjectionProfile]) -> Result<InjectedDataset> {
    let mut fake_users = BTreeSet::new();
    for profile in profiles {
        if ds.users.contains(&profile.fake_user_id) {
            return Err(CoreError::UserCollision(profile.fake_user_id.clone()));
        }
        if !fake_users.insert(profile.fake_user_id.clone()) {
            return Err(CoreError::UserCollision(profile.fake_user_id.clone()));
        }
    }
    let mut out = ds.clone();
    for profile in profiles {
        out.users.insert(profile.fake_user_id.clone());
        for rec in &profile.interactions {
            out.interactions.push(InteractionRecord {
                user_id: profile.fake_user_id.clone(),
                item_id: rec.item_id.clone(),
                rating: rec.rating,
                review: rec.review.clone(),
                timestamp: rec.timestamp,
            });
            out.items.entry(rec.item_id.clone()).or_insert_with(|| ItemMeta {
                item_id: rec.item_id.clone(),
                title: rec.item_id.clone(),
                category: String::new(),
                popularity: 0,
            });
        }
    }
    out.recompute_popularity();
    Ok(InjectedDataset { dataset: out, fake_users })
}

/// Sorted timestamps drawn uniformly from `range`, for fake interactions.
pub fn uniform_timestamps(range: (i64, i64), count: usize, rng: &mut impl Rng) -> Vec<i64> {
    let (lo, hi) = range;
    let mut ts: Vec<i64> = (0..count)
        .map(|_| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
        .collect();
    ts.sort_unstable();
    ts
}
