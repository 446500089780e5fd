//! Low-knowledge baseline profile generators: Random, Average,
//! Bandwagon, Segmented, AoP, and Mixed.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{
    DatasetStats, InjectionProfile, ItemMeta, ProfileInteraction, RatingScale, Role,
    uniform_timestamps,
};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineAttack {
    Random,
    Average,
    Bandwagon,
    Segmented,
    Aop,
    Mixed,
}

impl BaselineAttack {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineAttack::Random => "random",
            BaselineAttack::Average => "average",
            BaselineAttack::Bandwagon => "bandwagon",
            BaselineAttack::Segmented => "segmented",
            BaselineAttack::Aop => "aop",
            BaselineAttack::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Push,
    Nuke,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::Push => "push",
            Direction::Nuke => "nuke",
        }
    }
}

/// Number of filler items per fake user. `MatchGenuineMean` draws from a
/// Poisson with mean equal to the genuine users' mean profile length
/// (min 1, capped at 3x the mean).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillerSize {
    Fixed(usize),
    MatchGenuineMean,
}

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub attack: BaselineAttack,
    pub num_fake_users: usize,
    pub filler_size: FillerSize,
    pub selected_size: usize,
    pub aop_percent: f64,
    pub target_item: String,
    pub direction: Direction,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(attack: BaselineAttack, target_item: &str, num_fake_users: usize, seed: u64) -> Self {
        BaselineConfig {
            attack,
            num_fake_users,
            filler_size: FillerSize::MatchGenuineMean,
            selected_size: 10,
            aop_percent: 10.0,
            target_item: target_item.to_string(),
            direction: Direction::Push,
            seed,
        }
    }
}

/// Context a generator needs beyond its own config.
#[derive(Debug, Clone)]
pub struct GenerationContext {
    pub scale: RatingScale,
    /// Genuine users' mean profile length, for MatchGenuineMean.
    pub mean_profile_len: f64,
    /// Training-split timestamp range for fake interactions.
    pub timestamp_range: (i64, i64),
}

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub profiles: Vec<InjectionProfile>,
    /// Only populated by the mixed attack.
    pub sub_strategies: BTreeMap<String, String>,
}

pub fn generate(
    stats: &DatasetStats,
    catalog: &BTreeMap<String, ItemMeta>,
    ctx: &GenerationContext,
    cfg: &BaselineConfig,
) -> Result<BaselineOutput> {
    if cfg.num_fake_users == 0 {
        return Err(CoreError::Invalid("num_fake_users must be >= 1".into()));
    }
    if !(cfg.aop_percent > 0.0 && cfg.aop_percent <= 100.0) {
        return Err(CoreError::Invalid("aop_percent must be in (0, 100]".into()));
    }
    if !catalog.contains_key(&cfg.target_item) {
        return Err(CoreError::Invalid(format!("target item {} not in catalog", cfg.target_item)));
    }
    if cfg.attack == BaselineAttack::Mixed {
        return generate_mixed(stats, catalog, ctx, cfg);
    }
    let mut profiles = Vec::with_capacity(cfg.num_fake_users);
    for idx in 0..cfg.num_fake_users {
        profiles.push(single_profile(stats, catalog, ctx, cfg, cfg.attack, idx)?);
    }
    Ok(BaselineOutput { profiles, sub_strategies: BTreeMap::new() })
}

fn generate_mixed(
    stats: &DatasetStats,
    catalog: &BTreeMap<String, ItemMeta>,
    ctx: &GenerationContext,
    cfg: &BaselineConfig,
) -> Result<BaselineOutput> {
    // Split N as evenly as possible; remainder assigned in fixed order.
    let strategies = [
        BaselineAttack::Random,
        BaselineAttack::Average,
        BaselineAttack::Bandwagon,
        BaselineAttack::Segmented,
    ];
    let n = cfg.num_fake_users;
    let base = n / strategies.len();
    let rem = n % strategies.len();
    let mut profiles = Vec::with_capacity(n);
    let mut sub_strategies = BTreeMap::new();
    let mut idx = 0usize;
    for (s, strategy) in strategies.iter().enumerate() {
        let count = base + usize::from(s < rem);
        for _ in 0..count {
            let mut profile = single_profile(stats, catalog, ctx, cfg, *strategy, idx)?;
            profile.fake_user_id = fake_user_id(BaselineAttack::Mixed, cfg.seed, idx);
            sub_strategies.insert(profile.fake_user_id.clone(), strategy.name().to_string());
            profiles.push(profile);
            idx += 1;
        }
    }
    Ok(BaselineOutput { profiles, sub_strategies })
}

fn fake_user_id(attack: BaselineAttack, seed: u64, idx: usize) -> String {
    format!("fake_{}_{seed}_{idx:04}", attack.name())
}

fn single_profile(
    stats: &DatasetStats,
    catalog: &BTreeMap<String, ItemMeta>,
    ctx: &GenerationContext,
    cfg: &BaselineConfig,
    strategy: BaselineAttack,
    idx: usize,
) -> Result<InjectionProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (idx as u64).wrapping_mul(0x9E3779B97F4A7C15));
    let scale = ctx.scale;
    let target_rating = match cfg.direction {
        Direction::Push => scale.max,
        Direction::Nuke => scale.min,
    };

    let selected: Vec<String> = match strategy {
        BaselineAttack::Bandwagon | BaselineAttack::Segmented => {
            top_popular(catalog, cfg.selected_size, &cfg.target_item)
        }
        _ => Vec::new(),
    };

    // Candidate pool for filler items.
    let pool: Vec<&ItemMeta> = match strategy {
        BaselineAttack::Aop => {
            let size = ((cfg.aop_percent / 100.0) * catalog.len() as f64).ceil() as usize;
            let mut ranked: Vec<&ItemMeta> = catalog.values().collect();
            ranked.sort_by(|a, b| b.popularity.cmp(&a.popularity).then_with(|| a.item_id.cmp(&b.item_id)));
            ranked
                .into_iter()
                .take(size)
                .filter(|m| m.item_id != cfg.target_item)
                .collect()
        }
        _ => catalog
            .values()
            .filter(|m| m.item_id != cfg.target_item && !selected.contains(&m.item_id))
            .collect(),
    };

    let filler_count = match cfg.filler_size {
        FillerSize::Fixed(n) => n,
        FillerSize::MatchGenuineMean => {
            let mean = ctx.mean_profile_len.max(1.0);
            let draw = Poisson::new(mean).unwrap().sample(&mut rng) as usize;
            draw.max(1).min((3.0 * mean).ceil() as usize)
        }
    }
    .min(pool.len());

    let mut pool_idx: Vec<usize> = (0..pool.len()).collect();
    pool_idx.shuffle(&mut rng);
    let filler: Vec<&ItemMeta> = pool_idx[..filler_count].iter().map(|&i| pool[i]).collect();

    let total = 1 + selected.len() + filler.len();
    let timestamps = uniform_timestamps(ctx.timestamp_range, total, &mut rng);
    let mut ts_iter = timestamps.into_iter();

    let mut interactions = Vec::with_capacity(total);
    interactions.push(ProfileInteraction {
        item_id: cfg.target_item.clone(),
        rating: target_rating,
        review: None,
        timestamp: ts_iter.next().unwrap(),
        role: Role::Target,
    });
    for item in &selected {
        interactions.push(ProfileInteraction {
            item_id: item.clone(),
            rating: scale.max,
            review: None,
            timestamp: ts_iter.next().unwrap(),
            role: Role::Filler,
        });
    }
    for meta in filler {
        let rating = match strategy {
            BaselineAttack::Random | BaselineAttack::Bandwagon => {
                sample_rating(stats.global_mean, stats.global_std, scale, &mut rng)
            }
            BaselineAttack::Average | BaselineAttack::Aop => {
                let (mu, sigma) = item_stats(stats, &meta.item_id);
                sample_rating(mu, sigma, scale, &mut rng)
            }
            BaselineAttack::Segmented => scale.min,
            BaselineAttack::Mixed => unreachable!("mixed delegates to sub-strategies"),
        };
        interactions.push(ProfileInteraction {
            item_id: meta.item_id.clone(),
            rating,
            review: None,
            timestamp: ts_iter.next().unwrap(),
            role: Role::Filler,
        });
    }
    Ok(InjectionProfile { fake_user_id: fake_user_id(strategy, cfg.seed, idx), interactions })
}

fn item_stats(stats: &DatasetStats, item: &str) -> (f64, f64) {
    match (stats.per_item_mean.get(item), stats.per_item_std.get(item)) {
        (Some(&mu), Some(&sigma)) => (mu, sigma),
        // Item unseen in training: fall back to global statistics.
        _ => (stats.global_mean, stats.global_std),
    }
}

/// Normal draw, clamped to the scale and rounded to the integer grid.
pub fn sample_rating(mu: f64, sigma: f64, scale: RatingScale, rng: &mut impl Rng) -> f64 {
    let raw = if sigma > 0.0 {
        Normal::new(mu, sigma).unwrap().sample(rng)
    } else {
        mu
    };
    scale.snap(raw)
}

/// The `n` most popular items, excluding the target; popularity ties
/// break by ascending item id.
pub fn top_popular(catalog: &BTreeMap<String, ItemMeta>, n: usize, exclude: &str) -> Vec<String> {
    let mut ranked: Vec<&ItemMeta> =
        catalog.values().filter(|m| m.item_id != exclude).collect();
    ranked.sort_by(|a, b| b.popularity.cmp(&a.popularity).then_with(|| a.item_id.cmp(&b.item_id)));
    ranked.into_iter().take(n).map(|m| m.item_id.clone()).collect()
}

/// Synthetic per-interaction review embeddings for baseline profiles,
/// sampled to match the mean and per-dimension std of genuine review
/// embeddings ("random vectors that mimic real distributions").
pub fn mimic_review_embeddings(
    profiles: &[InjectionProfile],
    genuine_mean: &[f64],
    genuine_std: &[f64],
    seed: u64,
) -> BTreeMap<(String, String), Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for profile in profiles {
        for rec in &profile.interactions {
            let vec: Vec<f64> = genuine_mean
                .iter()
                .zip(genuine_std)
                .map(|(m, s)| {
                    if *s > 0.0 {
                        Normal::new(*m, *s).unwrap().sample(&mut rng)
                    } else {
                        *m
                    }
                })
                .collect();
            out.insert((profile.fake_user_id.clone(), rec.item_id.clone()), vec);
        }
    }
    out
}

/// Hook for externally generated review text: JSONL lines of
/// `{fake_user_id, item_id, review}` attached to matching interactions.
pub fn attach_reviews<P: AsRef<Path>>(profiles: &mut [InjectionProfile], path: P) -> Result<usize> {
    #[derive(Deserialize)]
    struct Row {
        fake_user_id: String,
        item_id: String,
        review: String,
    }
    let file = std::fs::File::open(path)?;
    let mut table: BTreeMap<(String, String), String> = BTreeMap::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)
            .map_err(|e| CoreError::Parse { line: idx + 1, msg: e.to_string() })?;
        table.insert((row.fake_user_id, row.item_id), row.review);
    }
    let mut attached = 0usize;
    for profile in profiles.iter_mut() {
        for rec in profile.interactions.iter_mut() {
            if let Some(text) = table.get(&(profile.fake_user_id.clone(), rec.item_id.clone())) {
                rec.review = Some(text.clone());
                attached += 1;
            }
        }
    }
    Ok(attached)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use crate::data::{compute_stats, Dataset, InteractionRecord};

    fn toy_catalog(pops: &[u64]) -> BTreeMap<String, ItemMeta> {
        pops.iter()
            .enumerate()
            .map(|(i, &p)| {
                let id = format!("i{i:02}");
                (
                    id.clone(),
                    ItemMeta { item_id: id.clone(), title: id, category: String::new(), popularity: p },
                )
            })
            .collect()
    }

    fn toy_stats() -> DatasetStats {
        let mut records = vec![];
        for u in 0..8 {
            for i in 0..6 {
                records.push(InteractionRecord {
                    user_id: format!("u{u}"),
                    item_id: format!("i{i:02}"),
                    rating: ((u + i) % 5 + 1) as f64,
                    review: None,
                    timestamp: (u * 10 + i) as i64,
                });
            }
        }
        compute_stats(&Dataset::from_records(records, None, RatingScale::default())).unwrap()
    }

    fn ctx() -> GenerationContext {
        GenerationContext {
            scale: RatingScale::default(),
            mean_profile_len: 6.0,
            timestamp_range: (0, 1000),
        }
    }

    fn cfg(attack: BaselineAttack) -> BaselineConfig {
        BaselineConfig::new(attack, "i00", 4, 7)
    }

    #[test]
    fn random_filler_sample_mean_matches_mu() {
        // Statistical oracle on the pre-clamp distribution.
        let scale = RatingScale { min: -1000.0, max: 1000.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mean: f64 =
            (0..n).map(|_| sample_rating(3.5, 1.0, scale, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 3.5).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn push_profiles_force_max_target_rating() {
        let out = generate(&toy_stats(), &toy_catalog(&[5; 10]), &ctx(), &cfg(BaselineAttack::Random)).unwrap();
        for profile in &out.profiles {
            let targets: Vec<_> =
                profile.interactions.iter().filter(|r| r.role == Role::Target).collect();
            assert_eq!(targets.len(), 1);
            assert_eq!(targets[0].rating, 5.0);
            assert_eq!(targets[0].item_id, "i00");
        }
    }

    #[test]
    fn zero_sigma_degenerates_to_rounded_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            assert_eq!(sample_rating(3.4, 0.0, RatingScale::default(), &mut rng), 3.0);
        }
    }

    #[test]
    fn average_attack_uses_per_item_stats() {
        let mut stats = toy_stats();
        stats.per_item_mean.insert("i01".into(), 2.0);
        stats.per_item_std.insert("i01".into(), 0.0);
        let mut config = cfg(BaselineAttack::Average);
        config.num_fake_users = 100;
        config.filler_size = FillerSize::Fixed(5);
        let out = generate(&stats, &toy_catalog(&[5; 6]), &ctx(), &config).unwrap();
        let ratings: Vec<f64> = out
            .profiles
            .iter()
            .flat_map(|p| &p.interactions)
            .filter(|r| r.item_id == "i01")
            .map(|r| r.rating)
            .collect();
        assert!(!ratings.is_empty());
        assert!(ratings.iter().all(|&r| r == 2.0));
    }

    #[test]
    fn average_attack_falls_back_to_global_for_unseen_item() {
        let stats = toy_stats();
        assert_eq!(item_stats(&stats, "never-seen"), (stats.global_mean, stats.global_std));
    }

    #[test]
    fn constant_item_ratings_always_reproduced() {
        // Item with ratings {4,4,4}: sigma = 0 so every fake rating is 4.
        let mut stats = toy_stats();
        stats.per_item_mean.insert("i02".into(), 4.0);
        stats.per_item_std.insert("i02".into(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            assert_eq!(sample_rating(4.0, 0.0, RatingScale::default(), &mut rng), 4.0);
        }
    }

    #[test]
    fn bandwagon_selects_most_popular_items() {
        let catalog = toy_catalog(&[9, 7, 5, 3]);
        // Brute-force oracle: full popularity sort.
        assert_eq!(top_popular(&catalog, 2, "none"), vec!["i00", "i01"]);
        let mut config = cfg(BaselineAttack::Bandwagon);
        config.selected_size = 2;
        config.target_item = "i03".into();
        let out = generate(&toy_stats(), &catalog, &ctx(), &config).unwrap();
        for profile in &out.profiles {
            let fives: Vec<&str> = profile
                .interactions
                .iter()
                .filter(|r| r.item_id == "i00" || r.item_id == "i01")
                .map(|r| r.item_id.as_str())
                .collect();
            assert_eq!(fives.len(), 2);
            for r in &profile.interactions {
                if r.item_id == "i00" || r.item_id == "i01" {
                    assert_eq!(r.rating, 5.0);
                }
            }
        }
    }

    #[test]
    fn bandwagon_excludes_target_from_selected() {
        let catalog = toy_catalog(&[9, 7, 5, 3]);
        // i00 is the most popular and also the target.
        assert_eq!(top_popular(&catalog, 2, "i00"), vec!["i01", "i02"]);
    }

    #[test]
    fn segmented_profile_composition_and_ratings() {
        let catalog = toy_catalog(&[9, 7, 5, 3, 2, 1, 1, 1]);
        let mut config = cfg(BaselineAttack::Segmented);
        config.selected_size = 2;
        config.filler_size = FillerSize::Fixed(3);
        config.target_item = "i07".into();
        let out = generate(&toy_stats(), &catalog, &ctx(), &config).unwrap();
        for profile in &out.profiles {
            assert_eq!(profile.interactions.len(), 1 + 2 + 3);
            let selected = ["i00", "i01"];
            for r in &profile.interactions {
                if r.role == Role::Target {
                    assert_eq!(r.rating, 5.0);
                } else if selected.contains(&r.item_id.as_str()) {
                    assert_eq!(r.rating, 5.0);
                } else {
                    assert_eq!(r.rating, 1.0);
                }
            }
        }
    }

    #[test]
    fn aop_pool_is_top_percent_by_popularity() {
        let pops: Vec<u64> = (0..20).map(|i| 100 - i as u64).collect();
        let catalog = toy_catalog(&pops);
        let mut config = cfg(BaselineAttack::Aop);
        config.aop_percent = 10.0;
        config.filler_size = FillerSize::Fixed(10);
        config.target_item = "i19".into();
        config.num_fake_users = 20;
        // Brute-force pool: ceil(10% of 20) = 2 most popular items.
        let expected_pool: BTreeSet<&str> = ["i00", "i01"].into();
        let out = generate(&toy_stats(), &catalog, &ctx(), &config).unwrap();
        for profile in &out.profiles {
            for r in &profile.interactions {
                if r.role == Role::Filler {
                    assert!(expected_pool.contains(r.item_id.as_str()), "{}", r.item_id);
                }
            }
            // filler_size truncated to pool size.
            assert!(profile.interactions.len() <= 1 + 2);
        }
    }

    #[test]
    fn aop_full_percent_degenerates_to_average_pool() {
        let catalog = toy_catalog(&[5, 4, 3, 2]);
        let mut config = cfg(BaselineAttack::Aop);
        config.aop_percent = 100.0;
        config.filler_size = FillerSize::Fixed(3);
        let out = generate(&toy_stats(), &catalog, &ctx(), &config).unwrap();
        for profile in &out.profiles {
            assert_eq!(profile.interactions.len(), 4); // target + all 3 others
        }
    }

    #[test]
    fn mixed_split_counts() {
        let mut config = cfg(BaselineAttack::Mixed);
        config.num_fake_users = 20;
        let out = generate(&toy_stats(), &toy_catalog(&[5; 10]), &ctx(), &config).unwrap();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in out.sub_strategies.values() {
            *counts.entry(s.as_str()).or_default() += 1;
        }
        assert_eq!(counts["random"], 5);
        assert_eq!(counts["average"], 5);
        assert_eq!(counts["bandwagon"], 5);
        assert_eq!(counts["segmented"], 5);

        config.num_fake_users = 6;
        let out = generate(&toy_stats(), &toy_catalog(&[5; 10]), &ctx(), &config).unwrap();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in out.sub_strategies.values() {
            *counts.entry(s.as_str()).or_default() += 1;
        }
        assert_eq!(counts["random"], 2);
        assert_eq!(counts["average"], 2);
        assert_eq!(counts["bandwagon"], 1);
        assert_eq!(counts["segmented"], 1);
    }

    #[test]
    fn profiles_have_no_duplicate_items_and_on_grid_ratings() {
        for attack in [
            BaselineAttack::Random,
            BaselineAttack::Average,
            BaselineAttack::Bandwagon,
            BaselineAttack::Segmented,
            BaselineAttack::Aop,
            BaselineAttack::Mixed,
        ] {
            let out = generate(&toy_stats(), &toy_catalog(&[3; 15]), &ctx(), &cfg(attack)).unwrap();
            for profile in &out.profiles {
                let unique: BTreeSet<&String> =
                    profile.interactions.iter().map(|r| &r.item_id).collect();
                assert_eq!(unique.len(), profile.interactions.len(), "{attack:?}");
                for r in &profile.interactions {
                    assert_eq!(r.rating.fract(), 0.0, "{attack:?}");
                    assert!((1.0..=5.0).contains(&r.rating));
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let stats = toy_stats();
        let catalog = toy_catalog(&[3; 15]);
        let a = generate(&stats, &catalog, &ctx(), &cfg(BaselineAttack::Random)).unwrap();
        let b = generate(&stats, &catalog, &ctx(), &cfg(BaselineAttack::Random)).unwrap();
        assert_eq!(a.profiles, b.profiles);
    }

    #[test]
    fn mimic_embeddings_match_mean() {
        let out = generate(&toy_stats(), &toy_catalog(&[3; 15]), &ctx(), &cfg(BaselineAttack::Random)).unwrap();
        let mean = vec![0.5, -0.5];
        let std = vec![0.1, 0.0];
        let table = mimic_review_embeddings(&out.profiles, &mean, &std, 3);
        assert!(!table.is_empty());
        for v in table.values() {
            assert_eq!(v.len(), 2);
            assert_eq!(v[1], -0.5); // zero-std dimension reproduces the mean
        }
    }
}
