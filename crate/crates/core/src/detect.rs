//! Generic fake-user detectors: a classical feature table per user, an
//! unsupervised z-score flagger, and a supervised logistic classifier.
//! Ground-truth labels never enter the detectors; precision/recall is
//! computed by the harness.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{CoreError, Result};

const DEGSIM_NEIGHBORS: usize = 5;
pub const FEATURE_COUNT: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserFeatureVector {
    pub rating_count: f64,
    pub mean_rating: f64,
    pub rating_variance: f64,
    /// Mean absolute deviation from each rated item's mean rating.
    pub rdma: f64,
    /// RDMA with each term down-weighted by the item's rating count.
    pub wdma: f64,
    /// Mean cosine similarity to the 5 most similar users over co-rated items.
    pub degsim: f64,
    pub frac_max_rating: f64,
    pub mean_review_len: f64,
    pub review_ratio: f64,
}

impl UserFeatureVector {
    pub fn as_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.rating_count,
            self.mean_rating,
            self.rating_variance,
            self.rdma,
            self.wdma,
            self.degsim,
            self.frac_max_rating,
            self.mean_review_len,
            self.review_ratio,
        ]
    }
}

/// Deterministic per-user feature table; record order does not matter.
pub fn extract_features(ds: &Dataset) -> Result<BTreeMap<String, UserFeatureVector>> {
    if ds.users.len() < 2 {
        return Err(CoreError::Invalid("need at least 2 users for detection features".into()));
    }
    let by_item = ds.by_item();
    let item_mean: BTreeMap<&str, f64> = by_item
        .iter()
        .map(|(i, recs)| {
            (*i, recs.iter().map(|r| r.rating).sum::<f64>() / recs.len() as f64)
        })
        .collect();
    let item_count: BTreeMap<&str, f64> =
        by_item.iter().map(|(i, recs)| (*i, recs.len() as f64)).collect();

    // Per-user rating vectors for the similarity feature.
    let mut vectors: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for rec in &ds.interactions {
        vectors
            .entry(rec.user_id.as_str())
            .or_default()
            .insert(rec.item_id.as_str(), rec.rating);
    }
    let user_ids: Vec<&str> = ds.users.iter().map(|u| u.as_str()).collect();
    let mut degsim: BTreeMap<&str, f64> = BTreeMap::new();
    for &u in &user_ids {
        let empty = BTreeMap::new();
        let uv = vectors.get(u).unwrap_or(&empty);
        let mut sims: Vec<f64> = user_ids
            .iter()
            .filter(|&&v| v != u)
            .map(|&v| {
                let vv = vectors.get(v).unwrap_or(&empty);
                corated_cosine(uv, vv)
            })
            .collect();
        sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top: Vec<f64> = sims.into_iter().take(DEGSIM_NEIGHBORS).collect();
        let value = if top.is_empty() { 0.0 } else { top.iter().sum::<f64>() / top.len() as f64 };
        degsim.insert(u, value);
    }

    let mut out = BTreeMap::new();
    let by_user = ds.by_user();
    for user in &ds.users {
        let recs = by_user.get(user.as_str()).cloned().unwrap_or_default();
        let n = recs.len() as f64;
        if recs.is_empty() {
            out.insert(
                user.clone(),
                UserFeatureVector {
                    rating_count: 0.0,
                    mean_rating: 0.0,
                    rating_variance: 0.0,
                    rdma: 0.0,
                    wdma: 0.0,
                    degsim: degsim[user.as_str()],
                    frac_max_rating: 0.0,
                    mean_review_len: 0.0,
                    review_ratio: 0.0,
                },
            );
            continue;
        }
        let mean = recs.iter().map(|r| r.rating).sum::<f64>() / n;
        let variance = recs.iter().map(|r| (r.rating - mean).powi(2)).sum::<f64>() / n;
        let rdma = recs
            .iter()
            .map(|r| (r.rating - item_mean[r.item_id.as_str()]).abs())
            .sum::<f64>()
            / n;
        let wdma = recs
            .iter()
            .map(|r| {
                (r.rating - item_mean[r.item_id.as_str()]).abs()
                    / item_count[r.item_id.as_str()]
            })
            .sum::<f64>()
            / n;
        let frac_max =
            recs.iter().filter(|r| r.rating == ds.scale.max).count() as f64 / n;
        let review_lens: Vec<f64> = recs
            .iter()
            .filter_map(|r| r.review.as_ref())
            .map(|t| t.chars().count() as f64)
            .collect();
        let mean_review_len = if review_lens.is_empty() {
            0.0
        } else {
            review_lens.iter().sum::<f64>() / review_lens.len() as f64
        };
        out.insert(
            user.clone(),
            UserFeatureVector {
                rating_count: n,
                mean_rating: mean,
                rating_variance: variance,
                rdma,
                wdma,
                degsim: degsim[user.as_str()],
                frac_max_rating: frac_max,
                mean_review_len,
                review_ratio: review_lens.len() as f64 / n,
            },
        );
    }
    Ok(out)
}

fn corated_cosine(a: &BTreeMap<&str, f64>, b: &BTreeMap<&str, f64>) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (item, ra) in a {
        if let Some(rb) = b.get(item) {
            dot += ra * rb;
            na += ra * ra;
            nb += rb * rb;
        }
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub flagged: BTreeSet<String>,
    pub scores: BTreeMap<String, f64>,
}

/// Z-score each feature over the population; a user's suspicion score is
/// the mean absolute z. The top `flag_fraction` of users are flagged.
pub fn detect_unsupervised(
    features: &BTreeMap<String, UserFeatureVector>,
    flag_fraction: f64,
) -> Result<DetectionResult> {
    if !(0.0 < flag_fraction && flag_fraction <= 1.0) {
        return Err(CoreError::Invalid(format!(
            "flag_fraction {flag_fraction} outside (0,1]"
        )));
    }
    let n = features.len();
    if n == 0 {
        return Err(CoreError::Invalid("empty feature table".into()));
    }
    let rows: Vec<[f64; FEATURE_COUNT]> = features.values().map(|f| f.as_array()).collect();
    let mut mean = [0.0; FEATURE_COUNT];
    let mut std = [0.0; FEATURE_COUNT];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    for row in &rows {
        for (s, (v, m)) in std.iter_mut().zip(row.iter().zip(&mean)) {
            *s += (v - m).powi(2);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n as f64).sqrt();
    }
    let mut scores = BTreeMap::new();
    for (user, f) in features {
        let row = f.as_array();
        let mut total = 0.0;
        for ((v, m), s) in row.iter().zip(&mean).zip(&std) {
            if *s > 0.0 {
                total += ((v - m) / s).abs();
            }
        }
        scores.insert(user.clone(), total / FEATURE_COUNT as f64);
    }
    let take = (flag_fraction * n as f64).ceil() as usize;
    let mut ranked: Vec<(&String, f64)> = scores.iter().map(|(u, &s)| (u, s)).collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    let flagged = ranked.into_iter().take(take).map(|(u, _)| u.clone()).collect();
    Ok(DetectionResult { flagged, scores })
}

/// Linear logistic classifier trained by full-batch gradient descent on
/// standardized features; users scoring above 0.5 are flagged.
pub fn detect_supervised(
    train_features: &BTreeMap<String, UserFeatureVector>,
    train_labels: &BTreeMap<String, bool>,
    eval_features: &BTreeMap<String, UserFeatureVector>,
) -> Result<DetectionResult> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (user, f) in train_features {
        let label = train_labels.get(user).ok_or_else(|| {
            CoreError::Invalid(format!("missing training label for user {user}"))
        })?;
        xs.push(f.as_array());
        ys.push(if *label { 1.0 } else { 0.0 });
    }
    let positives = ys.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == ys.len() {
        return Err(CoreError::Invalid(
            "supervised detector needs both classes in training labels".into(),
        ));
    }
    let n = xs.len() as f64;
    let mut mean = [0.0; FEATURE_COUNT];
    let mut std = [0.0; FEATURE_COUNT];
    for row in &xs {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    for row in &xs {
        for (s, (v, m)) in std.iter_mut().zip(row.iter().zip(&mean)) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt();
    }
    let standardize = |row: &[f64; FEATURE_COUNT]| -> [f64; FEATURE_COUNT] {
        let mut z = [0.0; FEATURE_COUNT];
        for (zi, ((v, m), s)) in z.iter_mut().zip(row.iter().zip(&mean).zip(&std)) {
            *zi = if *s > 0.0 { (v - m) / s } else { 0.0 };
        }
        z
    };
    let zs: Vec<[f64; FEATURE_COUNT]> = xs.iter().map(&standardize).collect();

    let mut w = [0.0; FEATURE_COUNT];
    let mut b = 0.0;
    let lr = 0.5;
    for _ in 0..500 {
        let mut gw = [0.0; FEATURE_COUNT];
        let mut gb = 0.0;
        for (z, y) in zs.iter().zip(&ys) {
            let p = sigmoid(dot(&w, z) + b);
            let err = p - y;
            for (g, v) in gw.iter_mut().zip(z) {
                *g += err * v / n;
            }
            gb += err / n;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g;
        }
        b -= lr * gb;
    }

    let mut scores = BTreeMap::new();
    let mut flagged = BTreeSet::new();
    for (user, f) in eval_features {
        let p = sigmoid(dot(&w, &standardize(&f.as_array())) + b);
        scores.insert(user.clone(), p);
        if p > 0.5 {
            flagged.insert(user.clone());
        }
    }
    Ok(DetectionResult { flagged, scores })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64; FEATURE_COUNT], b: &[f64; FEATURE_COUNT]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Precision and recall of a flag set against the injected-user ground
/// truth; empty denominators yield 0.
pub fn precision_recall(flagged: &BTreeSet<String>, truth: &BTreeSet<String>) -> (f64, f64) {
    let tp = flagged.intersection(truth).count() as f64;
    let precision = if flagged.is_empty() { 0.0 } else { tp / flagged.len() as f64 };
    let recall = if truth.is_empty() { 0.0 } else { tp / truth.len() as f64 };
    (precision, recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{InteractionRecord, RatingScale};
    use approx::assert_abs_diff_eq;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(u: &str, i: &str, r: f64) -> InteractionRecord {
        InteractionRecord {
            user_id: u.to_string(),
            item_id: i.to_string(),
            rating: r,
            review: None,
            timestamp: 0,
        }
    }

    fn rec_with_review(u: &str, i: &str, r: f64, text: &str) -> InteractionRecord {
        InteractionRecord { review: Some(text.to_string()), ..rec(u, i, r) }
    }

    fn ds(records: Vec<InteractionRecord>) -> Dataset {
        Dataset::from_records(records, None, RatingScale::default())
    }

    #[test]
    fn rdma_hand_arithmetic() {
        // Item a ratings {5,1,3} -> mean 3; item b ratings {4,4,4} -> mean 4.
        // User x deviates by |5-3| and |4-4| -> RDMA (2+0)/2 = 1.
        let data = ds(vec![
            rec("x", "a", 5.0),
            rec("y", "a", 1.0),
            rec("z", "a", 3.0),
            rec("x", "b", 4.0),
            rec("y", "b", 4.0),
            rec("z", "b", 4.0),
        ]);
        let features = extract_features(&data).unwrap();
        assert_abs_diff_eq!(features["x"].rdma, 1.0, epsilon = 1e-12);
        // WDMA divides each term by the item's rating count (3 for both).
        assert_abs_diff_eq!(features["x"].wdma, (2.0 / 3.0 + 0.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn all_max_ratings_saturate_the_fraction() {
        let data = ds(vec![
            rec("x", "a", 5.0),
            rec("x", "b", 5.0),
            rec("y", "a", 3.0),
        ]);
        let features = extract_features(&data).unwrap();
        assert_eq!(features["x"].frac_max_rating, 1.0);
    }

    #[test]
    fn single_interaction_user_has_zero_variance() {
        let data = ds(vec![rec("x", "a", 4.0), rec("y", "a", 2.0)]);
        let features = extract_features(&data).unwrap();
        assert_eq!(features["x"].rating_variance, 0.0);
        assert_eq!(features["x"].rating_count, 1.0);
    }

    #[test]
    fn review_features_count_length_and_ratio() {
        let data = ds(vec![
            rec_with_review("x", "a", 4.0, "well made"),
            rec("x", "b", 3.0),
            rec("y", "a", 2.0),
        ]);
        let features = extract_features(&data).unwrap();
        assert_eq!(features["x"].mean_review_len, 9.0);
        assert_eq!(features["x"].review_ratio, 0.5);
        assert_eq!(features["y"].review_ratio, 0.0);
    }

    #[test]
    fn features_ignore_record_order() {
        let base = vec![
            rec("x", "a", 5.0),
            rec("y", "a", 1.0),
            rec("x", "b", 4.0),
            rec("y", "b", 2.0),
            rec("z", "a", 3.0),
            rec("z", "b", 3.0),
        ];
        let mut shuffled = base.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(
            extract_features(&ds(base)).unwrap(),
            extract_features(&ds(shuffled)).unwrap()
        );
    }

    #[test]
    fn degsim_is_high_for_clones_low_for_contrarians() {
        // Six clones so a's top-5 co-rated neighbors are all perfect matches.
        let mut records = Vec::new();
        for u in ["a", "b", "d", "e", "f", "g"] {
            records.push(rec(u, "i1", 5.0));
            records.push(rec(u, "i2", 4.0));
        }
        records.push(rec("c", "i3", 2.0));
        let data = ds(records);
        let features = extract_features(&data).unwrap();
        assert!(features["a"].degsim > 0.9);
        // c shares no items with anyone.
        assert_eq!(features["c"].degsim, 0.0);
    }

    fn herd_with_outlier() -> Dataset {
        let mut records = Vec::new();
        for u in 0..6 {
            records.push(rec(&format!("u{u}"), "a", 3.0));
            records.push(rec(&format!("u{u}"), "b", 4.0));
        }
        records.push(rec("zz", "a", 5.0));
        records.push(rec("zz", "b", 5.0));
        records.push(rec("zz", "c", 5.0));
        ds(records)
    }

    #[test]
    fn zscore_flags_the_outlier() {
        let features = extract_features(&herd_with_outlier()).unwrap();
        let result = detect_unsupervised(&features, 1.0 / 7.0).unwrap();
        assert_eq!(result.flagged.len(), 1);
        assert!(result.flagged.contains("zz"));
    }

    #[test]
    fn flagging_everyone_gives_full_recall() {
        let features = extract_features(&herd_with_outlier()).unwrap();
        let result = detect_unsupervised(&features, 1.0).unwrap();
        let truth: BTreeSet<String> = ["zz".to_string()].into_iter().collect();
        let (_, recall) = precision_recall(&result.flagged, &truth);
        assert_eq!(recall, 1.0);
    }

    #[test]
    fn bad_flag_fraction_is_rejected() {
        let features = extract_features(&herd_with_outlier()).unwrap();
        assert!(detect_unsupervised(&features, 0.0).is_err());
        assert!(detect_unsupervised(&features, 1.5).is_err());
    }

    #[test]
    fn precision_recall_hand_counts() {
        let flagged: BTreeSet<String> =
            ["u1", "u2", "u3"].iter().map(|s| s.to_string()).collect();
        let truth: BTreeSet<String> =
            ["u2", "u3", "u4"].iter().map(|s| s.to_string()).collect();
        let (p, r) = precision_recall(&flagged, &truth);
        assert_abs_diff_eq!(p, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r, 2.0 / 3.0, epsilon = 1e-12);
    }

    fn separable_features(n_each: usize) -> (BTreeMap<String, UserFeatureVector>, BTreeMap<String, bool>) {
        let mut features = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for i in 0..n_each {
            let genuine = format!("g{i:02}");
            features.insert(
                genuine.clone(),
                UserFeatureVector {
                    rating_count: 10.0 + (i % 3) as f64,
                    mean_rating: 3.0,
                    rating_variance: 1.0,
                    rdma: 0.5,
                    wdma: 0.1,
                    degsim: 0.4,
                    frac_max_rating: 0.0,
                    mean_review_len: 30.0,
                    review_ratio: 0.5,
                },
            );
            labels.insert(genuine, false);
            let fake = format!("f{i:02}");
            features.insert(
                fake.clone(),
                UserFeatureVector {
                    rating_count: 10.0 + (i % 3) as f64,
                    mean_rating: 4.8,
                    rating_variance: 0.1,
                    rdma: 1.5,
                    wdma: 0.4,
                    degsim: 0.9,
                    frac_max_rating: 1.0,
                    mean_review_len: 10.0,
                    review_ratio: 0.2,
                },
            );
            labels.insert(fake, true);
        }
        (features, labels)
    }

    #[test]
    fn supervised_separates_toy_classes() {
        let (features, labels) = separable_features(20);
        let result = detect_supervised(&features, &labels, &features).unwrap();
        let truth: BTreeSet<String> =
            labels.iter().filter(|(_, &l)| l).map(|(u, _)| u.clone()).collect();
        let (precision, recall) = precision_recall(&result.flagged, &truth);
        assert!(recall >= 0.95, "recall {recall}");
        assert!(precision >= 0.95, "precision {precision}");
    }

    #[test]
    fn supervised_beats_majority_on_its_training_set() {
        let (features, labels) = separable_features(10);
        let result = detect_supervised(&features, &labels, &features).unwrap();
        let correct = labels
            .iter()
            .filter(|(u, &l)| result.flagged.contains(*u) == l)
            .count();
        let majority = labels.values().filter(|&&l| !l).count().max(
            labels.values().filter(|&&l| l).count(),
        );
        assert!(correct >= majority);
    }

    #[test]
    fn supervised_is_deterministic() {
        let (features, labels) = separable_features(10);
        let a = detect_supervised(&features, &labels, &features).unwrap();
        let b = detect_supervised(&features, &labels, &features).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let (features, mut labels) = separable_features(5);
        for v in labels.values_mut() {
            *v = false;
        }
        assert!(detect_supervised(&features, &labels, &features).is_err());
    }
}
