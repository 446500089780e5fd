//! Desk-scale synthetic dataset generator: Zipf item popularity, a
//! 2-factor latent preference structure, and template reviews tied to
//! item categories.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};

use crate::data::{Dataset, InteractionRecord, ItemMeta, RatingScale};
use crate::{CoreError, Result};

const CATEGORIES: [(&str, [&str; 4]); 6] = [
    ("Electronics", ["wireless headset", "gaming monitor", "usb hub", "smart speaker"]),
    ("Books", ["mystery novel", "history atlas", "poetry collection", "cookbook"]),
    ("Kitchen", ["cast iron pan", "chef knife", "espresso maker", "mixing bowl"]),
    ("Outdoors", ["camping lantern", "trail backpack", "water filter", "trekking pole"]),
    ("Toys", ["building blocks", "puzzle cube", "plush bear", "race track"]),
    ("Office", ["desk organizer", "gel pen set", "monitor stand", "paper shredder"]),
];
const ADJECTIVES: [&str; 5] = ["Compact", "Deluxe", "Classic", "Portable", "Sturdy"];

const TS_LO: i64 = 1_600_000_000;
const TS_HI: i64 = 1_700_000_000;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    /// Expected fraction of the rating matrix that is observed.
    pub density: f64,
    pub seed: u64,
    pub review_prob: f64,
    pub noise_std: f64,
}

impl SynthConfig {
    pub fn new(users: usize, items: usize, density: f64, seed: u64) -> SynthConfig {
        SynthConfig { users, items, density, seed, review_prob: 0.7, noise_std: 0.5 }
    }

    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 {
            return Err(CoreError::Invalid("users and items must be positive".into()));
        }
        if !(0.0 < self.density && self.density <= 1.0) {
            return Err(CoreError::Invalid(format!("density {} outside (0,1]", self.density)));
        }
        Ok(())
    }
}

fn review_text(rng: &mut impl Rng, rating: f64, title: &str, category: &str) -> String {
    let cat = category.to_lowercase();
    let positive = [
        format!("Great pick from the {cat} shelf, the {title} exceeded expectations."),
        format!("The {title} is the best {cat} purchase I made this year."),
    ];
    let neutral = [
        format!("The {title} is a serviceable {cat} item, nothing more."),
        format!("Average {cat} product; the {title} does what it says."),
    ];
    let negative = [
        format!("Regret buying the {title}, weak even by {cat} standards."),
        format!("The {title} fell apart quickly; poor {cat} quality."),
    ];
    let pool = if rating >= 4.0 {
        &positive
    } else if rating <= 2.0 {
        &negative
    } else {
        &neutral
    };
    pool[rng.gen_range(0..pool.len())].clone()
}

/// Deterministic synthetic dataset. User/item affinities come from a
/// 2-factor model aligned with categories; item draw weights follow a
/// Zipf law so a popular head and a long tail both exist.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = RatingScale::default();

    let mut catalog = Vec::with_capacity(cfg.items);
    let mut item_factors = Vec::with_capacity(cfg.items);
    for idx in 0..cfg.items {
        let (category, nouns) = CATEGORIES[idx % CATEGORIES.len()];
        let noun = nouns[rng.gen_range(0..nouns.len())];
        let adjective = ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())];
        let angle = (idx % CATEGORIES.len()) as f64 / CATEGORIES.len() as f64
            * std::f64::consts::TAU
            + rng.gen_range(-0.3..0.3);
        item_factors.push([angle.cos(), angle.sin()]);
        catalog.push(ItemMeta {
            item_id: format!("i{idx:04}"),
            title: format!("{adjective} {noun} {idx}"),
            category: category.to_string(),
            popularity: 0,
        });
    }

    // Zipf draw weights over a shuffled rank assignment, so item ids do
    // not encode popularity.
    let mut ranks: Vec<usize> = (1..=cfg.items).collect();
    for i in (1..ranks.len()).rev() {
        ranks.swap(i, rng.gen_range(0..=i));
    }
    let weights: Vec<f64> = ranks.iter().map(|&r| 1.0 / r as f64).collect();

    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| CoreError::Invalid(e.to_string()))?;
    let mean_profile = cfg.density * cfg.items as f64;
    let mut records = Vec::new();
    for u in 0..cfg.users {
        let user_id = format!("u{u:04}");
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let factor = [angle.cos(), angle.sin()];
        let n_items = if cfg.density >= 1.0 {
            cfg.items
        } else {
            let drawn = Poisson::new(mean_profile)
                .map_err(|e| CoreError::Invalid(e.to_string()))?
                .sample(&mut rng) as usize;
            drawn.clamp(1, cfg.items)
        };
        let chosen = weighted_sample(&weights, n_items, &mut rng);
        let mut timestamps: Vec<i64> =
            (0..chosen.len()).map(|_| rng.gen_range(TS_LO..=TS_HI)).collect();
        timestamps.sort_unstable();
        for (slot, idx) in chosen.into_iter().enumerate() {
            let b = item_factors[idx];
            let affinity = factor[0] * b[0] + factor[1] * b[1];
            let raw = 3.2 + 1.2 * affinity + noise.sample(&mut rng);
            let rating = scale.snap(raw);
            let meta = &catalog[idx];
            let review = if rng.gen_bool(cfg.review_prob) {
                Some(review_text(&mut rng, rating, &meta.title, &meta.category))
            } else {
                None
            };
            records.push(InteractionRecord {
                user_id: user_id.clone(),
                item_id: meta.item_id.clone(),
                rating,
                review,
                timestamp: timestamps[slot],
            });
        }
    }
    Ok(Dataset::from_records(records, Some(catalog), scale))
}

/// Weighted sampling without replacement.
fn weighted_sample(weights: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut weights = weights.to_vec();
    let mut out = Vec::with_capacity(n.min(weights.len()));
    for _ in 0..n.min(weights.len()) {
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen_range(0.0..total);
        let mut pick = weights.len() - 1;
        for (idx, w) in weights.iter().enumerate() {
            if draw < *w {
                pick = idx;
                break;
            }
            draw -= w;
        }
        out.push(pick);
        weights[pick] = 0.0;
    }
    out
}
