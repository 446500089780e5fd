//! The attacked recommenders: four trainable rating predictors with
//! top-K recommendation, plus the popularity-based exposure mechanism.

mod mlp;

pub use mlp::Mlp;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemMeta, RatingScale};
use crate::embedding::Embedder;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Nmf,
    NeuNmf,
    DualtowerEarly,
    DualtowerLate,
}

impl ModelFamily {
    pub fn uses_reviews(&self) -> bool {
        matches!(self, ModelFamily::DualtowerEarly | ModelFamily::DualtowerLate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub latent_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub seed: u64,
    pub mlp_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: ModelFamily::Nmf,
            latent_dim: 32,
            epochs: 50,
            learning_rate: 0.01,
            l2_reg: 0.02,
            seed: 0,
            mlp_hidden: vec![64, 32],
        }
    }
}

/// Per-user and per-item mean review embeddings, aggregated with the
/// frozen genuine-corpus IDF table. Entities without any review text get
/// a zero vector. Overrides substitute a synthetic embedding for a
/// specific (user, item) pair, which is how baseline attacks mimic real
/// review distributions without emitting text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEmbeddings {
    pub dim: usize,
    pub user_mean: BTreeMap<String, Vec<f64>>,
    pub item_mean: BTreeMap<String, Vec<f64>>,
}

impl ReviewEmbeddings {
    pub fn build(
        ds: &Dataset,
        embedder: &Embedder,
        overrides: Option<&BTreeMap<(String, String), Vec<f64>>>,
    ) -> ReviewEmbeddings {
        let dim = embedder.dim();
        let mut user_acc: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        let mut item_acc: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for rec in &ds.interactions {
            let vec = overrides
                .and_then(|m| m.get(&(rec.user_id.clone(), rec.item_id.clone())).cloned())
                .or_else(|| rec.review.as_deref().map(|t| embedder.embed(t).values));
            let Some(v) = vec else { continue };
            for (key, acc) in [
                (rec.user_id.clone(), &mut user_acc),
                (rec.item_id.clone(), &mut item_acc),
            ] {
                let entry = acc.entry(key).or_insert_with(|| (vec![0.0; dim], 0));
                for (s, x) in entry.0.iter_mut().zip(&v) {
                    *s += x;
                }
                entry.1 += 1;
            }
        }
        let finish = |acc: BTreeMap<String, (Vec<f64>, usize)>| {
            acc.into_iter()
                .map(|(k, (sum, n))| (k, sum.iter().map(|s| s / n as f64).collect()))
                .collect()
        };
        ReviewEmbeddings { dim, user_mean: finish(user_acc), item_mean: finish(item_acc) }
    }

    fn user(&self, user: &str) -> Vec<f64> {
        self.user_mean.get(user).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }

    fn item(&self, item: &str) -> Vec<f64> {
        self.item_mean.get(item).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Nmf {
        p: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
    },
    NeuNmf {
        p: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        mlp: Mlp,
    },
    DualtowerEarly {
        user_emb: Vec<Vec<f64>>,
        item_emb: Vec<Vec<f64>>,
        user_tower: Mlp,
        item_tower: Mlp,
    },
    DualtowerLate {
        user_emb: Vec<Vec<f64>>,
        item_emb: Vec<Vec<f64>>,
        user_id_tower: Mlp,
        item_id_tower: Mlp,
        user_rev_tower: Mlp,
        item_rev_tower: Mlp,
        gate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: ModelFamily,
    pub config: ModelConfig,
    pub scale: RatingScale,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub params: ModelParams,
    pub loss_trace: Vec<f64>,
    /// Whether the entity had any training interaction; entities known
    /// only by id use the bias-only fallback.
    pub user_seen: Vec<bool>,
    pub item_seen: Vec<bool>,
    /// Mean review embeddings per entity index; empty for rating-only
    /// families.
    pub user_review_emb: Vec<Vec<f64>>,
    pub item_review_emb: Vec<Vec<f64>>,
    #[serde(skip)]
    user_index: BTreeMap<String, usize>,
    #[serde(skip)]
    item_index: BTreeMap<String, usize>,
}

impl TrainedModel {
    fn rebuild_indexes(&mut self) {
        self.user_index =
            self.users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        self.item_index =
            self.items.iter().enumerate().map(|(i, x)| (x.clone(), i)).collect();
    }

    fn raw_score(&self, u: usize, i: usize) -> f64 {
        match &self.params {
            ModelParams::Nmf { p, q } => dot(&p[u], &q[i]),
            ModelParams::NeuNmf { p, q, mlp } => {
                let x: Vec<f64> = p[u].iter().chain(&q[i]).copied().collect();
                self.global_mean + mlp.output(&x)[0]
            }
            ModelParams::DualtowerEarly { user_emb, item_emb, user_tower, item_tower } => {
                let ux: Vec<f64> =
                    user_emb[u].iter().chain(&self.user_review_emb[u]).copied().collect();
                let ix: Vec<f64> =
                    item_emb[i].iter().chain(&self.item_review_emb[i]).copied().collect();
                self.global_mean + dot(&user_tower.output(&ux), &item_tower.output(&ix))
            }
            ModelParams::DualtowerLate {
                user_emb,
                item_emb,
                user_id_tower,
                item_id_tower,
                user_rev_tower,
                item_rev_tower,
                gate,
            } => {
                let sid =
                    dot(&user_id_tower.output(&user_emb[u]), &item_id_tower.output(&item_emb[i]));
                let srev = dot(
                    &user_rev_tower.output(&self.user_review_emb[u]),
                    &item_rev_tower.output(&self.item_review_emb[i]),
                );
                let g = sigmoid(*gate);
                self.global_mean + g * sid + (1.0 - g) * srev
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Train a victim model. Families that consume reviews need
/// `review_emb`; when absent one is built from the dataset's own review
/// text (callers that care about the frozen-IDF convention pass their
/// own).
pub fn train(
    ds: &Dataset,
    cfg: &ModelConfig,
    review_emb: Option<&ReviewEmbeddings>,
) -> Result<TrainedModel> {
    if ds.interactions.is_empty() {
        return Err(CoreError::Invalid("cannot train on an empty dataset".into()));
    }
    let users: Vec<String> = {
        let mut set: BTreeSet<&str> = ds.interactions.iter().map(|r| r.user_id.as_str()).collect();
        set.extend(ds.users.iter().map(|s| s.as_str()));
        set.into_iter().map(|s| s.to_string()).collect()
    };
    let items: Vec<String> = ds.items.keys().cloned().collect();
    let user_index: BTreeMap<String, usize> =
        users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
    let item_index: BTreeMap<String, usize> =
        items.iter().enumerate().map(|(i, x)| (x.clone(), i)).collect();

    let samples: Vec<(usize, usize, f64)> = ds
        .interactions
        .iter()
        .map(|r| (user_index[&r.user_id], item_index[&r.item_id], r.rating))
        .collect();

    let global_mean = samples.iter().map(|s| s.2).sum::<f64>() / samples.len() as f64;
    let mut user_sum = vec![(0.0, 0usize); users.len()];
    let mut item_sum = vec![(0.0, 0usize); items.len()];
    for &(u, i, r) in &samples {
        user_sum[u].0 += r;
        user_sum[u].1 += 1;
        item_sum[i].0 += r;
        item_sum[i].1 += 1;
    }
    let bias = |sums: Vec<(f64, usize)>| -> Vec<f64> {
        sums.iter()
            .map(|(s, n)| if *n > 0 { s / *n as f64 - global_mean } else { 0.0 })
            .collect()
    };
    let user_seen: Vec<bool> = user_sum.iter().map(|(_, n)| *n > 0).collect();
    let item_seen: Vec<bool> = item_sum.iter().map(|(_, n)| *n > 0).collect();
    let user_bias = bias(user_sum);
    let item_bias = bias(item_sum);

    let built_reviews;
    let reviews: Option<&ReviewEmbeddings> = if cfg.family.uses_reviews() {
        match review_emb {
            Some(r) => Some(r),
            None => {
                let mut embedder = Embedder::new(crate::embedding::DEFAULT_DIM);
                embedder.fit_idf(
                    ds.interactions.iter().filter_map(|r| r.review.as_deref()),
                );
                built_reviews = ReviewEmbeddings::build(ds, &embedder, None);
                Some(&built_reviews)
            }
        }
    } else {
        None
    };
    let (user_review_emb, item_review_emb) = match reviews {
        Some(r) => (
            users.iter().map(|u| r.user(u)).collect::<Vec<_>>(),
            items.iter().map(|i| r.item(i)).collect::<Vec<_>>(),
        ),
        None => (Vec::new(), Vec::new()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.latent_dim;
    let lr = cfg.learning_rate;
    let l2 = cfg.l2_reg;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    let nonneg_init = |rng: &mut ChaCha8Rng, rows: usize| -> Vec<Vec<f64>> {
        let hi = 2.0 * (global_mean / k as f64).sqrt();
        (0..rows).map(|_| (0..k).map(|_| rng.gen_range(0.0..hi)).collect()).collect()
    };
    let small_init = |rng: &mut ChaCha8Rng, rows: usize| -> Vec<Vec<f64>> {
        (0..rows).map(|_| (0..k).map(|_| rng.gen_range(-0.1..0.1)).collect()).collect()
    };

    let mut params = match cfg.family {
        ModelFamily::Nmf => ModelParams::Nmf {
            p: nonneg_init(&mut rng, users.len()),
            q: nonneg_init(&mut rng, items.len()),
        },
        ModelFamily::NeuNmf => {
            let p = (0..users.len())
                .map(|_| (0..k).map(|_| rng.gen_range(0.0..0.5)).collect())
                .collect();
            let q = (0..items.len())
                .map(|_| (0..k).map(|_| rng.gen_range(0.0..0.5)).collect())
                .collect();
            let mut sizes = vec![2 * k];
            sizes.extend(&cfg.mlp_hidden);
            sizes.push(1);
            ModelParams::NeuNmf { p, q, mlp: Mlp::new(&sizes, &mut rng) }
        }
        ModelFamily::DualtowerEarly => {
            let d_rev = reviews.unwrap().dim;
            let mut sizes = vec![k + d_rev];
            sizes.extend(&cfg.mlp_hidden);
            sizes.push(k);
            ModelParams::DualtowerEarly {
                user_emb: small_init(&mut rng, users.len()),
                item_emb: small_init(&mut rng, items.len()),
                user_tower: Mlp::new(&sizes, &mut rng),
                item_tower: Mlp::new(&sizes, &mut rng),
            }
        }
        ModelFamily::DualtowerLate => {
            let d_rev = reviews.unwrap().dim;
            let mut id_sizes = vec![k];
            id_sizes.extend(&cfg.mlp_hidden);
            id_sizes.push(k);
            let mut rev_sizes = vec![d_rev];
            rev_sizes.extend(&cfg.mlp_hidden);
            rev_sizes.push(k);
            ModelParams::DualtowerLate {
                user_emb: small_init(&mut rng, users.len()),
                item_emb: small_init(&mut rng, items.len()),
                user_id_tower: Mlp::new(&id_sizes, &mut rng),
                item_id_tower: Mlp::new(&id_sizes, &mut rng),
                user_rev_tower: Mlp::new(&rev_sizes, &mut rng),
                item_rev_tower: Mlp::new(&rev_sizes, &mut rng),
                gate: 0.0,
            }
        }
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for &idx in &order {
            let (u, i, r) = samples[idx];
            match &mut params {
                ModelParams::Nmf { p, q } => {
                    let pred = dot(&p[u], &q[i]);
                    let err = pred - r;
                    sq_sum += err * err;
                    for f in 0..k {
                        let pu = p[u][f];
                        let qi = q[i][f];
                        p[u][f] = (pu - lr * (err * qi + l2 * pu)).max(0.0);
                        q[i][f] = (qi - lr * (err * pu + l2 * qi)).max(0.0);
                    }
                }
                ModelParams::NeuNmf { p, q, mlp } => {
                    let x: Vec<f64> = p[u].iter().chain(&q[i]).copied().collect();
                    let acts = mlp.forward(&x);
                    let pred = global_mean + acts.last().unwrap()[0];
                    let err = pred - r;
                    sq_sum += err * err;
                    let grad_in = mlp.backward_update(&acts, &[err], lr);
                    for f in 0..k {
                        p[u][f] = (p[u][f] - lr * (grad_in[f] + l2 * p[u][f])).max(0.0);
                        q[i][f] = (q[i][f] - lr * (grad_in[k + f] + l2 * q[i][f])).max(0.0);
                    }
                }
                ModelParams::DualtowerEarly { user_emb, item_emb, user_tower, item_tower } => {
                    let ux: Vec<f64> =
                        user_emb[u].iter().chain(&user_review_emb[u]).copied().collect();
                    let ix: Vec<f64> =
                        item_emb[i].iter().chain(&item_review_emb[i]).copied().collect();
                    let u_acts = user_tower.forward(&ux);
                    let i_acts = item_tower.forward(&ix);
                    let u_out = u_acts.last().unwrap().clone();
                    let i_out = i_acts.last().unwrap().clone();
                    let pred = global_mean + dot(&u_out, &i_out);
                    let err = pred - r;
                    sq_sum += err * err;
                    let gu: Vec<f64> = i_out.iter().map(|v| err * v).collect();
                    let gi: Vec<f64> = u_out.iter().map(|v| err * v).collect();
                    let gin_u = user_tower.backward_update(&u_acts, &gu, lr);
                    let gin_i = item_tower.backward_update(&i_acts, &gi, lr);
                    for f in 0..k {
                        user_emb[u][f] -= lr * (gin_u[f] + l2 * user_emb[u][f]);
                        item_emb[i][f] -= lr * (gin_i[f] + l2 * item_emb[i][f]);
                    }
                }
                ModelParams::DualtowerLate {
                    user_emb,
                    item_emb,
                    user_id_tower,
                    item_id_tower,
                    user_rev_tower,
                    item_rev_tower,
                    gate,
                } => {
                    let uid_acts = user_id_tower.forward(&user_emb[u]);
                    let iid_acts = item_id_tower.forward(&item_emb[i]);
                    let urev_acts = user_rev_tower.forward(&user_review_emb[u]);
                    let irev_acts = item_rev_tower.forward(&item_review_emb[i]);
                    let uid = uid_acts.last().unwrap().clone();
                    let iid = iid_acts.last().unwrap().clone();
                    let urev = urev_acts.last().unwrap().clone();
                    let irev = irev_acts.last().unwrap().clone();
                    let sid = dot(&uid, &iid);
                    let srev = dot(&urev, &irev);
                    let g = sigmoid(*gate);
                    let pred = global_mean + g * sid + (1.0 - g) * srev;
                    let err = pred - r;
                    sq_sum += err * err;
                    *gate -= lr * err * (sid - srev) * g * (1.0 - g);
                    let gid_u: Vec<f64> = iid.iter().map(|v| err * g * v).collect();
                    let gid_i: Vec<f64> = uid.iter().map(|v| err * g * v).collect();
                    let grev_u: Vec<f64> = irev.iter().map(|v| err * (1.0 - g) * v).collect();
                    let grev_i: Vec<f64> = urev.iter().map(|v| err * (1.0 - g) * v).collect();
                    let gin_u = user_id_tower.backward_update(&uid_acts, &gid_u, lr);
                    let gin_i = item_id_tower.backward_update(&iid_acts, &gid_i, lr);
                    user_rev_tower.backward_update(&urev_acts, &grev_u, lr);
                    item_rev_tower.backward_update(&irev_acts, &grev_i, lr);
                    for f in 0..k {
                        user_emb[u][f] -= lr * (gin_u[f] + l2 * user_emb[u][f]);
                        item_emb[i][f] -= lr * (gin_i[f] + l2 * item_emb[i][f]);
                    }
                }
            }
        }
        let epoch_loss = sq_sum / samples.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(CoreError::Diverged(epoch));
        }
        loss_trace.push(epoch_loss);
    }

    let mut model = TrainedModel {
        family: cfg.family,
        config: cfg.clone(),
        scale: ds.scale,
        users,
        items,
        global_mean,
        user_bias,
        item_bias,
        params,
        loss_trace,
        user_seen,
        item_seen,
        user_review_emb,
        item_review_emb,
        user_index: BTreeMap::new(),
        item_index: BTreeMap::new(),
    };
    model.rebuild_indexes();
    Ok(model)
}

/// Predicted rating, clamped to the scale. Cold entities fall back to
/// bias terms: cold user -> global mean + item bias, cold item -> global
/// mean + user bias, both cold -> global mean.
pub fn predict(model: &TrainedModel, user: &str, item: &str) -> f64 {
    let u = model.user_index.get(user);
    let i = model.item_index.get(item);
    let u = u.filter(|&&u| model.user_seen[u]);
    let i = i.filter(|&&i| model.item_seen[i]);
    let raw = match (u, i) {
        (Some(&u), Some(&i)) => model.raw_score(u, i),
        (None, Some(&i)) => model.global_mean + model.item_bias[i],
        (Some(&u), None) => model.global_mean + model.user_bias[u],
        (None, None) => model.global_mean,
    };
    model.scale.clamp(raw)
}

/// The `k` highest-predicted items for `user`, excluding `exclude`.
/// Ties break by ascending item id.
pub fn recommend_top_k(
    model: &TrainedModel,
    user: &str,
    k: usize,
    exclude: &BTreeSet<String>,
) -> Vec<String> {
    assert!(k >= 1);
    let mut scored: Vec<(&String, f64)> = model
        .items
        .iter()
        .filter(|i| !exclude.contains(*i))
        .map(|i| (i, predict(model, user, i)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    scored.into_iter().take(k).map(|(i, _)| i.clone()).collect()
}

/// RMSE and MAE of clamped predictions over the evaluation set.
pub fn evaluate_error(model: &TrainedModel, ds: &Dataset) -> Result<(f64, f64)> {
    if ds.interactions.is_empty() {
        return Err(CoreError::Invalid("evaluation set is empty".into()));
    }
    let pairs = ds
        .interactions
        .iter()
        .map(|r| (predict(model, &r.user_id, &r.item_id), r.rating));
    Ok(rmse_mae(pairs))
}

pub fn rmse_mae(pairs: impl IntoIterator<Item = (f64, f64)>) -> (f64, f64) {
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut n = 0usize;
    for (pred, actual) in pairs {
        let e = pred - actual;
        sq += e * e;
        abs += e.abs();
        n += 1;
    }
    ((sq / n as f64).sqrt(), abs / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureBatch {
    pub round: u32,
    pub items: Vec<String>,
}

/// Sample `batch_size` distinct items with probability proportional to
/// (popularity + 1), deterministic given (seed, round).
pub fn expose(
    catalog: &BTreeMap<String, ItemMeta>,
    batch_size: usize,
    seed: u64,
    round: u32,
) -> ExposureBatch {
    assert!(batch_size <= catalog.len(), "batch_size exceeds catalog size");
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (round as u64).wrapping_mul(0x9E3779B97F4A7C15),
    );
    let ids: Vec<&String> = catalog.keys().collect();
    let mut weights: Vec<f64> =
        catalog.values().map(|m| m.popularity as f64 + 1.0).collect();
    let mut items = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let total: f64 = weights.iter().sum();
        let mut x = rng.gen::<f64>() * total;
        let mut chosen = 0;
        for (idx, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            x -= w;
            chosen = idx;
            if x <= 0.0 {
                break;
            }
        }
        items.push(ids[chosen].clone());
        weights[chosen] = 0.0;
    }
    ExposureBatch { round, items }
}

pub fn save_checkpoint<P: AsRef<Path>>(model: &TrainedModel, path: P) -> Result<()> {
    let json = serde_json::to_string(model).map_err(|e| CoreError::Invalid(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<TrainedModel> {
    let json = std::fs::read_to_string(path)?;
    let mut model: TrainedModel =
        serde_json::from_str(&json).map_err(|e| CoreError::Invalid(e.to_string()))?;
    model.rebuild_indexes();
    Ok(model)
}
