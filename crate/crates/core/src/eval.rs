//! Attack efficacy and stealth metrics: prediction shift, hit ratio at K,
//! error drift on the genuine test split, population segments, and the
//! injection-rate sweep driver.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemMeta};
use crate::victim::{predict, rmse_mae, TrainedModel};
use crate::{CoreError, Result};

/// Anything that can score a (user, item) pair. Lets the metric
/// arithmetic be tested against hand-built predictors.
pub trait ScoreSource {
    fn score(&self, user: &str, item: &str) -> f64;
}

impl ScoreSource for TrainedModel {
    fn score(&self, user: &str, item: &str) -> f64 {
        predict(self, user, item)
    }
}

pub struct FnScore<F>(pub F);

impl<F: Fn(&str, &str) -> f64> ScoreSource for FnScore<F> {
    fn score(&self, user: &str, item: &str) -> f64 {
        (self.0)(user, item)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub attack: String,
    pub victim: String,
    pub target_item: String,
    pub direction: String,
    pub seed: u64,
    pub injection_rate: f64,
    pub k: usize,
    pub prediction_shift: f64,
    pub hr_before: f64,
    pub hr_after: f64,
    pub rmse_before: f64,
    pub rmse_after: f64,
    pub mae_before: f64,
    pub mae_after: f64,
    /// Segment name -> HR@K after the attack, restricted to that segment.
    #[serde(default)]
    pub segments: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn rmse_shift(&self) -> f64 {
        self.rmse_after - self.rmse_before
    }

    pub fn mae_shift(&self) -> f64 {
        self.mae_after - self.mae_before
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("hr_before", self.hr_before), ("hr_after", self.hr_after)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::Invalid(format!("{name} {v} outside [0,1]")));
            }
        }
        for (name, v) in [
            ("prediction_shift", self.prediction_shift),
            ("rmse_before", self.rmse_before),
            ("rmse_after", self.rmse_after),
            ("mae_before", self.mae_before),
            ("mae_after", self.mae_after),
        ] {
            if !v.is_finite() {
                return Err(CoreError::Invalid(format!("{name} is not finite")));
            }
        }
        Ok(())
    }
}

/// Mean signed change in the predicted rating of `target` over `users`;
/// positive means a push attack moved predictions up.
pub fn prediction_shift<B: ScoreSource + ?Sized, A: ScoreSource + ?Sized>(
    before: &B,
    after: &A,
    target: &str,
    users: &[String],
) -> f64 {
    if users.is_empty() {
        return 0.0;
    }
    let sum: f64 = users
        .iter()
        .map(|u| after.score(u, target) - before.score(u, target))
        .sum();
    sum / users.len() as f64
}

fn top_k<S: ScoreSource + ?Sized>(
    scores: &S,
    items: &[String],
    user: &str,
    k: usize,
    exclude: &BTreeSet<String>,
) -> Vec<String> {
    let mut scored: Vec<(&String, f64)> = items
        .iter()
        .filter(|i| !exclude.contains(*i))
        .map(|i| (i, scores.score(user, i)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    scored.into_iter().take(k).map(|(i, _)| i.clone()).collect()
}

/// Fraction of eligible users (genuine users with no training interaction
/// on `target`) whose top-k list contains `target`. Seen items are
/// excluded from each user's ranking.
pub fn hit_ratio_at_k<S: ScoreSource + ?Sized>(
    scores: &S,
    items: &[String],
    train: &Dataset,
    target: &str,
    k: usize,
    users: &[String],
) -> Result<f64> {
    let mut seen: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for rec in &train.interactions {
        seen.entry(&rec.user_id).or_default().insert(rec.item_id.clone());
    }
    let empty = BTreeSet::new();
    let mut eligible = 0usize;
    let mut hits = 0usize;
    for user in users {
        let user_seen = seen.get(user.as_str()).unwrap_or(&empty);
        if user_seen.contains(target) {
            continue;
        }
        eligible += 1;
        if top_k(scores, items, user, k, user_seen).iter().any(|i| i == target) {
            hits += 1;
        }
    }
    if eligible == 0 {
        return Err(CoreError::Invalid(format!(
            "no eligible users for target {target}: everyone rated it in training"
        )));
    }
    Ok(hits as f64 / eligible as f64)
}

pub fn hit_ratio_model(
    model: &TrainedModel,
    train: &Dataset,
    target: &str,
    k: usize,
    users: &[String],
) -> Result<f64> {
    hit_ratio_at_k(model, &model.items, train, target, k, users)
}

/// (delta RMSE, delta MAE) on the genuine test split, after minus before;
/// positive values mean the attack degraded accuracy.
pub fn stealth_shift<B: ScoreSource + ?Sized, A: ScoreSource + ?Sized>(
    before: &B,
    after: &A,
    test: &Dataset,
) -> Result<(f64, f64)> {
    if test.interactions.is_empty() {
        return Err(CoreError::Invalid("stealth evaluation set is empty".into()));
    }
    let (rmse_b, mae_b) = rmse_mae(
        test.interactions.iter().map(|r| (before.score(&r.user_id, &r.item_id), r.rating)),
    );
    let (rmse_a, mae_a) = rmse_mae(
        test.interactions.iter().map(|r| (after.score(&r.user_id, &r.item_id), r.rating)),
    );
    Ok((rmse_a - rmse_b, mae_a - mae_b))
}

fn bottom_fraction<T: Ord + Clone>(ranked: Vec<(u64, T)>, fraction: f64) -> Result<BTreeSet<T>> {
    if !(0.0 < fraction && fraction <= 1.0) {
        return Err(CoreError::Invalid(format!("fraction {fraction} outside (0,1]")));
    }
    let take = (fraction * ranked.len() as f64).ceil() as usize;
    let mut ranked = ranked;
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(take).map(|(_, id)| id).collect())
}

/// Bottom-`fraction` users by training interaction count; boundary ties
/// break by ascending user id.
pub fn segment_low_activity(ds: &Dataset, fraction: f64) -> Result<BTreeSet<String>> {
    let mut counts: BTreeMap<&String, u64> = ds.users.iter().map(|u| (u, 0)).collect();
    for rec in &ds.interactions {
        if let Some(c) = counts.get_mut(&rec.user_id) {
            *c += 1;
        }
    }
    bottom_fraction(counts.into_iter().map(|(u, c)| (c, u.clone())).collect(), fraction)
}

/// Bottom-`fraction` items by popularity; ties break by ascending item id.
pub fn segment_long_tail(
    catalog: &BTreeMap<String, ItemMeta>,
    fraction: f64,
) -> Result<BTreeSet<String>> {
    bottom_fraction(
        catalog.values().map(|m| (m.popularity, m.item_id.clone())).collect(),
        fraction,
    )
}

/// Run the pipeline once per injection rate. The handle receives
/// (rate, fake-user count) with the count scaled as ceil(rate * |U|).
pub fn sweep_injection_rate<F>(
    rates: &[f64],
    genuine_users: usize,
    mut pipeline: F,
) -> Result<Vec<MetricsReport>>
where
    F: FnMut(f64, usize) -> Result<MetricsReport>,
{
    if rates.is_empty() {
        return Err(CoreError::Invalid("empty rate list".into()));
    }
    for &rate in rates {
        if !(0.0 < rate && rate <= 1.0) {
            return Err(CoreError::Invalid(format!("injection rate {rate} outside (0,1]")));
        }
    }
    let mut reports = Vec::with_capacity(rates.len());
    for &rate in rates {
        let n = (rate * genuine_users as f64).ceil() as usize;
        reports.push(pipeline(rate, n)?);
    }
    Ok(reports)
}

/// Spearman rank correlation; ties get their average rank.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean).powi(2);
        db += (y - mean).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
