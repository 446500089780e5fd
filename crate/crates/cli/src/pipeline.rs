//! End-to-end run orchestration: ingest, split, train the victim before
//! and after injection, generate the configured attack, evaluate, and
//! detect. Every artifact embeds the config hash and run seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use shillsim_core::agent::{
    AttackRunConfig, HttpLlmProvider, LiveProviderConfig, LlmProvider, PopularityExposure,
    StubProvider, Transcript,
};
use shillsim_core::baseline::{
    self, BaselineConfig, FillerSize, GenerationContext,
};
use shillsim_core::data::{
    self, compute_stats, filter_min_interactions, inject, split, Dataset, InjectionFile,
    InjectionManifest, InjectionProfile, SplitDataset,
};
use shillsim_core::detect;
use shillsim_core::embedding::{Embedder, DEFAULT_DIM};
use shillsim_core::eval::{
    hit_ratio_model, prediction_shift, segment_low_activity, segment_long_tail, MetricsReport,
};
use shillsim_core::victim::{self, ReviewEmbeddings, TrainedModel};

use crate::config::{ProviderKind, RunConfig, TargetMode};
use crate::CliError;

pub const FAILED_MARKER: &str = "FAILED";

/// Metric names emitted in metrics.csv, in output order.
pub const METRIC_NAMES: [&str; 9] = [
    "prediction_shift",
    "hr_before",
    "hr_after",
    "rmse_before",
    "rmse_after",
    "mae_before",
    "mae_after",
    "rmse_shift",
    "mae_shift",
];

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionRow {
    pub detector: String,
    pub attack: String,
    pub precision: f64,
    pub recall: f64,
    pub flag_fraction: f64,
}

fn stage<T>(r: shillsim_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Stage(e.to_string()))
}

fn seed_for_target(seed: u64, target: &str) -> u64 {
    let digest = Sha256::digest(target.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    seed ^ u64::from_le_bytes(bytes)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn write_wrapped<T: Serialize>(
    path: &Path,
    config_hash: &str,
    seed: u64,
    key: &str,
    value: &T,
) -> Result<(), CliError> {
    let wrapped = json!({ "config_hash": config_hash, "seed": seed, key: value });
    let text = serde_json::to_string_pretty(&wrapped)
        .map_err(|e| CliError::Stage(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::Stage(e.to_string()))
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let out_dir = cfg.output.dir.clone();
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out_dir.display())))?;
    let config_hash = cfg.hash();
    fs::write(out_dir.join("config.toml"), cfg.snapshot_toml())
        .map_err(|e| CliError::Stage(e.to_string()))?;
    // A fresh run invalidates any earlier failure marker.
    let _ = fs::remove_file(out_dir.join(FAILED_MARKER));

    match run_stages(cfg, &out_dir, &config_hash) {
        Ok(reports) => Ok(RunOutcome { out_dir, config_hash, reports }),
        Err(e) => {
            let msg = format!("config_hash={config_hash} seed={} error: {e}\n", cfg.seed);
            let _ = fs::write(out_dir.join(FAILED_MARKER), msg);
            Err(e)
        }
    }
}

fn run_stages(
    cfg: &RunConfig,
    out_dir: &Path,
    config_hash: &str,
) -> Result<Vec<MetricsReport>, CliError> {
    let mut artifacts: Vec<String> = vec!["config.toml".to_string()];

    let (raw, _report) = data::ingest(
        &cfg.dataset.interactions,
        cfg.dataset.format,
        Default::default(),
    )
    .map_err(|e| {
        CliError::Stage(format!(
            "ingest {} failed: {e}",
            cfg.dataset.interactions.display()
        ))
    })?;
    let ds = match &cfg.dataset.items {
        Some(path) => {
            let metas = stage(data::load_items(path))?;
            Dataset::from_records(raw.interactions, Some(metas), raw.scale)
        }
        None => raw,
    };
    let ds = if cfg.dataset.min_interactions > 0 {
        filter_min_interactions(&ds, cfg.dataset.min_interactions)
    } else {
        ds
    };

    let [a, b, c] = cfg.split.ratios;
    let sp = stage(split(&ds, (a, b, c), cfg.seed))?;
    let train = &sp.train;
    let stats = stage(compute_stats(train))?;
    write_wrapped(&out_dir.join("stats.json"), config_hash, cfg.seed, "stats", &stats)?;
    artifacts.push("stats.json".to_string());

    let targets = select_targets(cfg, train)?;

    // IDF table frozen on the genuine training corpus.
    let mut embedder = Embedder::new(DEFAULT_DIM);
    embedder.fit_idf(train.interactions.iter().filter_map(|r| r.review.as_deref()));

    let model_cfg = cfg.victim.model_config(cfg.seed);
    let uses_reviews = model_cfg.family.uses_reviews();
    let review_before = if uses_reviews {
        Some(ReviewEmbeddings::build(train, &embedder, None))
    } else {
        None
    };
    let before = stage(victim::train(train, &model_cfg, review_before.as_ref()))?;
    write_wrapped(&out_dir.join("model_before.json"), config_hash, cfg.seed, "model", &before)?;
    artifacts.push("model_before.json".to_string());

    let genuine_users: Vec<String> = train.users.iter().cloned().collect();
    let n_fakes = (cfg.attack.injection_rate * genuine_users.len() as f64).ceil() as usize;

    let mut reports = Vec::with_capacity(targets.len());
    let mut detection_rows: Vec<DetectionRow> = Vec::new();
    for target in &targets {
        let tdir = out_dir.join("targets").join(sanitize(target));
        fs::create_dir_all(&tdir).map_err(|e| CliError::Stage(e.to_string()))?;
        let rel = |name: &str| format!("targets/{}/{name}", sanitize(target));
        let seed_t = seed_for_target(cfg.seed, target);

        let generated = generate_profiles(cfg, &sp, target, n_fakes, seed_t)?;
        if let Some(transcript) = &generated.transcript {
            write_transcript(&tdir.join("transcript.jsonl"), config_hash, cfg.seed, transcript)?;
            artifacts.push(rel("transcript.jsonl"));
        }
        let injection = InjectionFile {
            manifest: InjectionManifest {
                attack: cfg.attack.name.label().to_string(),
                target_item: target.clone(),
                direction: cfg.attack.direction.name().to_string(),
                seed: cfg.seed,
                config_hash: config_hash.to_string(),
                sub_strategies: generated.sub_strategies.clone(),
            },
            profiles: generated.profiles.clone(),
        };
        stage(data::write_injection_file(&injection, tdir.join("injection.jsonl")))?;
        artifacts.push(rel("injection.jsonl"));

        let injected = stage(inject(train, &generated.profiles))?;
        let review_after = if uses_reviews {
            Some(ReviewEmbeddings::build(
                &injected.dataset,
                &embedder,
                generated.review_overrides.as_ref(),
            ))
        } else {
            None
        };
        let after = stage(victim::train(&injected.dataset, &model_cfg, review_after.as_ref()))?;
        write_wrapped(&tdir.join("model_after.json"), config_hash, cfg.seed, "model", &after)?;
        artifacts.push(rel("model_after.json"));

        let report = evaluate_target(cfg, &sp, &before, &after, target, &genuine_users)?;
        stage(report.validate())?;
        write_wrapped(&tdir.join("metrics.json"), config_hash, cfg.seed, "metrics", &report)?;
        artifacts.push(rel("metrics.json"));
        reports.push(report);

        if cfg.detection.enabled {
            detection_rows.extend(run_detection(cfg, train, &injected, seed_t)?);
        }
    }

    write_metrics_csv(&out_dir.join("metrics.csv"), config_hash, cfg.seed, &reports)?;
    artifacts.push("metrics.csv".to_string());
    if cfg.detection.enabled {
        write_detection_csv(&out_dir.join("detection.csv"), config_hash, cfg.seed, &detection_rows)?;
        artifacts.push("detection.csv".to_string());
    }
    write_report_md(out_dir, config_hash, cfg, &reports, &detection_rows)?;
    artifacts.push("report.md".to_string());

    let manifest = json!({
        "config_hash": config_hash,
        "seed": cfg.seed,
        "attack": cfg.attack.name.label(),
        "victim": cfg.victim.family_name(),
        "direction": cfg.attack.direction.name(),
        "injection_rate": cfg.attack.injection_rate,
        "targets": targets,
        "artifacts": artifacts,
    });
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Stage(e.to_string()))?,
    )
    .map_err(|e| CliError::Stage(e.to_string()))?;
    Ok(reports)
}

fn select_targets(cfg: &RunConfig, train: &Dataset) -> Result<Vec<String>, CliError> {
    match cfg.targets.mode {
        TargetMode::Explicit => {
            for item in &cfg.targets.items {
                if !train.items.contains_key(item) {
                    return Err(CliError::Config(format!("target item {item} not in catalog")));
                }
            }
            Ok(cfg.targets.items.clone())
        }
        TargetMode::Random => {
            let pool: Vec<String> = train.items.keys().cloned().collect();
            sample_targets(pool, cfg.targets.count, cfg.seed)
        }
        TargetMode::LongTail => {
            let segment = stage(segment_long_tail(&train.items, cfg.targets.fraction))?;
            sample_targets(segment.into_iter().collect(), cfg.targets.count, cfg.seed)
        }
    }
}

fn sample_targets(mut pool: Vec<String>, count: usize, seed: u64) -> Result<Vec<String>, CliError> {
    if pool.len() < count {
        return Err(CliError::Config(format!(
            "target pool has {} items, need {count}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA076_1D64_78BD_642F);
    pool.shuffle(&mut rng);
    pool.truncate(count);
    Ok(pool)
}

struct GeneratedAttack {
    profiles: Vec<InjectionProfile>,
    sub_strategies: BTreeMap<String, String>,
    transcript: Option<Transcript>,
    review_overrides: Option<BTreeMap<(String, String), Vec<f64>>>,
}

fn generate_profiles(
    cfg: &RunConfig,
    sp: &SplitDataset,
    target: &str,
    n_fakes: usize,
    seed_t: u64,
) -> Result<GeneratedAttack, CliError> {
    let train = &sp.train;
    match cfg.attack.name.baseline() {
        Some(attack) => {
            let stats = stage(compute_stats(train))?;
            let ctx = GenerationContext {
                scale: train.scale,
                mean_profile_len: train.mean_profile_len(),
                timestamp_range: train.timestamp_range(),
            };
            let mut bcfg = BaselineConfig::new(attack, target, n_fakes, seed_t);
            bcfg.direction = cfg.attack.direction;
            bcfg.selected_size = cfg.attack.selected_size.min(train.items.len().saturating_sub(1));
            bcfg.aop_percent = cfg.attack.aop_percent;
            if let Some(n) = cfg.attack.filler_size {
                bcfg.filler_size = FillerSize::Fixed(n);
            }
            let output = stage(baseline::generate(&stats, &train.items, &ctx, &bcfg))?;
            let review_overrides = if cfg.victim.family.uses_reviews() {
                let mut embedder = Embedder::new(DEFAULT_DIM);
                embedder.fit_idf(train.interactions.iter().filter_map(|r| r.review.as_deref()));
                let (mean, std) = genuine_review_moments(train, &embedder);
                Some(baseline::mimic_review_embeddings(&output.profiles, &mean, &std, seed_t))
            } else {
                None
            };
            Ok(GeneratedAttack {
                profiles: output.profiles,
                sub_strategies: output.sub_strategies,
                transcript: None,
                review_overrides,
            })
        }
        None => {
            let mut acfg = AttackRunConfig::new(target, cfg.attack.direction, n_fakes, seed_t);
            acfg.exposure_rounds = cfg.attack.exposure_rounds;
            acfg.batch_size = cfg.attack.batch_size.min(train.items.len());
            let mut embedder = Embedder::new(DEFAULT_DIM);
            embedder.fit_idf(train.interactions.iter().filter_map(|r| r.review.as_deref()));
            let exposure = PopularityExposure { catalog: &train.items };
            let provider: Box<dyn LlmProvider> = match cfg.provider.kind {
                ProviderKind::Stub => Box::new(StubProvider::new(seed_t)),
                ProviderKind::Live => Box::new(stage(HttpLlmProvider::new(LiveProviderConfig {
                    base_url: cfg.provider.base_url.clone(),
                    model: cfg.provider.model.clone(),
                    api_key_env: cfg.provider.api_key_env.clone(),
                    temperature: cfg.provider.temperature,
                    timeout_secs: cfg.provider.timeout_secs,
                    max_retries: cfg.provider.max_retries,
                }))?),
            };
            let output = stage(shillsim_core::agent::run_attack(
                &acfg,
                &train.items,
                train.scale,
                train.timestamp_range(),
                &exposure,
                provider.as_ref(),
                &embedder,
            ))?;
            Ok(GeneratedAttack {
                profiles: output.profiles,
                sub_strategies: BTreeMap::new(),
                transcript: Some(output.transcript),
                review_overrides: None,
            })
        }
    }
}

fn genuine_review_moments(train: &Dataset, embedder: &Embedder) -> (Vec<f64>, Vec<f64>) {
    let dim = embedder.dim();
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut n = 0usize;
    for rec in &train.interactions {
        let Some(text) = rec.review.as_deref() else { continue };
        let v = embedder.embed(text).values;
        for ((m, s), x) in mean.iter_mut().zip(sq.iter_mut()).zip(&v) {
            *m += x;
            *s += x * x;
        }
        n += 1;
    }
    if n == 0 {
        return (mean, sq);
    }
    let nf = n as f64;
    for (m, s) in mean.iter_mut().zip(sq.iter_mut()) {
        *m /= nf;
        *s = (*s / nf - *m * *m).max(0.0).sqrt();
    }
    (mean, sq)
}

fn evaluate_target(
    cfg: &RunConfig,
    sp: &SplitDataset,
    before: &TrainedModel,
    after: &TrainedModel,
    target: &str,
    genuine_users: &[String],
) -> Result<MetricsReport, CliError> {
    let train = &sp.train;
    let k = cfg.eval.k;
    let shift = prediction_shift(before, after, target, genuine_users);
    let hr_before = stage(hit_ratio_model(before, train, target, k, genuine_users))?;
    let hr_after = stage(hit_ratio_model(after, train, target, k, genuine_users))?;
    let (rmse_before, mae_before) = stage(victim::evaluate_error(before, &sp.test))?;
    let (rmse_after, mae_after) = stage(victim::evaluate_error(after, &sp.test))?;

    let mut segments = BTreeMap::new();
    let low = stage(segment_low_activity(train, cfg.eval.segment_fraction))?;
    let low_users: Vec<String> = genuine_users.iter().filter(|u| low.contains(*u)).cloned().collect();
    if let Ok(hr) = hit_ratio_model(after, train, target, k, &low_users) {
        segments.insert("low_activity".to_string(), hr);
    }

    Ok(MetricsReport {
        attack: cfg.attack.name.label().to_string(),
        victim: cfg.victim.family_name().to_string(),
        target_item: target.to_string(),
        direction: cfg.attack.direction.name().to_string(),
        seed: cfg.seed,
        injection_rate: cfg.attack.injection_rate,
        k,
        prediction_shift: shift,
        hr_before,
        hr_after,
        rmse_before,
        rmse_after,
        mae_before,
        mae_after,
        segments,
    })
}

fn run_detection(
    cfg: &RunConfig,
    train: &Dataset,
    injected: &data::InjectedDataset,
    seed_t: u64,
) -> Result<Vec<DetectionRow>, CliError> {
    let features = stage(detect::extract_features(&injected.dataset))?;
    let truth = &injected.fake_users;
    let population = injected.dataset.users.len();
    let flag_fraction = if cfg.detection.flag_fraction > 0.0 {
        cfg.detection.flag_fraction
    } else {
        truth.len() as f64 / population as f64
    };
    let mut rows = Vec::new();

    let unsup = stage(detect::detect_unsupervised(&features, flag_fraction))?;
    let (p, r) = detect::precision_recall(&unsup.flagged, truth);
    rows.push(DetectionRow {
        detector: "unsupervised".to_string(),
        attack: cfg.attack.name.label().to_string(),
        precision: p,
        recall: r,
        flag_fraction,
    });

    // The supervised detector is trained on a known attack: a
    // random-baseline injection of the same size on the same split.
    let stats = stage(compute_stats(train))?;
    let ctx = GenerationContext {
        scale: train.scale,
        mean_profile_len: train.mean_profile_len(),
        timestamp_range: train.timestamp_range(),
    };
    let train_seed = seed_t ^ 0x5DEE_CE66_D83A_F0A5;
    let bcfg = BaselineConfig::new(
        baseline::BaselineAttack::Random,
        // Any in-catalog item works as the training attack's target.
        train.items.keys().next().expect("non-empty catalog"),
        truth.len().max(1),
        train_seed,
    );
    let known = stage(baseline::generate(&stats, &train.items, &ctx, &bcfg))?;
    let known_injected = stage(inject(train, &known.profiles))?;
    let train_features = stage(detect::extract_features(&known_injected.dataset))?;
    let labels: BTreeMap<String, bool> = train_features
        .keys()
        .map(|u| (u.clone(), known_injected.fake_users.contains(u)))
        .collect();
    let sup = stage(detect::detect_supervised(&train_features, &labels, &features))?;
    let (p, r) = detect::precision_recall(&sup.flagged, truth);
    rows.push(DetectionRow {
        detector: "supervised".to_string(),
        attack: cfg.attack.name.label().to_string(),
        precision: p,
        recall: r,
        flag_fraction: sup.flagged.len() as f64 / population as f64,
    });
    Ok(rows)
}

fn write_transcript(
    path: &Path,
    config_hash: &str,
    seed: u64,
    transcript: &Transcript,
) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::Stage(e.to_string()))?;
    let header = json!({ "config_hash": config_hash, "seed": seed });
    writeln!(f, "{header}").map_err(|e| CliError::Stage(e.to_string()))?;
    for entry in &transcript.entries {
        let line = serde_json::to_string(entry).map_err(|e| CliError::Stage(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| CliError::Stage(e.to_string()))?;
    }
    Ok(())
}

pub fn csv_header_comment(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}")
}

/// Mean metric values across targets as `metric,value,segment,rate` rows.
pub fn aggregate_rows(reports: &[MetricsReport]) -> Vec<(String, f64, String, f64)> {
    if reports.is_empty() {
        return Vec::new();
    }
    let n = reports.len() as f64;
    let rate = reports[0].injection_rate;
    let value = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut rows: Vec<(String, f64, String, f64)> = METRIC_NAMES
        .iter()
        .map(|&name| {
            let v = match name {
                "prediction_shift" => value(|r| r.prediction_shift),
                "hr_before" => value(|r| r.hr_before),
                "hr_after" => value(|r| r.hr_after),
                "rmse_before" => value(|r| r.rmse_before),
                "rmse_after" => value(|r| r.rmse_after),
                "mae_before" => value(|r| r.mae_before),
                "mae_after" => value(|r| r.mae_after),
                "rmse_shift" => value(|r| r.rmse_shift()),
                "mae_shift" => value(|r| r.mae_shift()),
                _ => unreachable!(),
            };
            (name.to_string(), v, String::new(), rate)
        })
        .collect();
    // Segment rows: mean over the reports that have the segment.
    let mut segment_names: Vec<String> = Vec::new();
    for report in reports {
        for name in report.segments.keys() {
            if !segment_names.contains(name) {
                segment_names.push(name.clone());
            }
        }
    }
    for name in segment_names {
        let values: Vec<f64> =
            reports.iter().filter_map(|r| r.segments.get(&name)).copied().collect();
        if values.is_empty() {
            continue;
        }
        let v = values.iter().sum::<f64>() / values.len() as f64;
        rows.push(("hr_after".to_string(), v, name, rate));
    }
    rows
}

fn write_metrics_csv(
    path: &Path,
    config_hash: &str,
    seed: u64,
    reports: &[MetricsReport],
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&csv_header_comment(config_hash, seed));
    out.push('\n');
    out.push_str("metric,value,segment,rate\n");
    for (metric, value, segment, rate) in aggregate_rows(reports) {
        out.push_str(&format!("{metric},{value:.6},{segment},{rate}\n"));
    }
    fs::write(path, out).map_err(|e| CliError::Stage(e.to_string()))
}

fn write_detection_csv(
    path: &Path,
    config_hash: &str,
    seed: u64,
    rows: &[DetectionRow],
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&csv_header_comment(config_hash, seed));
    out.push('\n');
    out.push_str("detector,attack,precision,recall,flag_fraction\n");
    // Average per detector across targets.
    for detector in ["unsupervised", "supervised"] {
        let subset: Vec<&DetectionRow> =
            rows.iter().filter(|r| r.detector == detector).collect();
        if subset.is_empty() {
            continue;
        }
        let n = subset.len() as f64;
        let p = subset.iter().map(|r| r.precision).sum::<f64>() / n;
        let r = subset.iter().map(|r| r.recall).sum::<f64>() / n;
        let f = subset.iter().map(|r| r.flag_fraction).sum::<f64>() / n;
        out.push_str(&format!(
            "{detector},{},{p:.6},{r:.6},{f:.6}\n",
            subset[0].attack
        ));
    }
    fs::write(path, out).map_err(|e| CliError::Stage(e.to_string()))
}

fn write_report_md(
    out_dir: &Path,
    config_hash: &str,
    cfg: &RunConfig,
    reports: &[MetricsReport],
    detection: &[DetectionRow],
) -> Result<(), CliError> {
    let mut md = String::new();
    md.push_str("# Attack simulation report\n\n");
    md.push_str(&format!("config_hash={config_hash} seed={}\n\n", cfg.seed));
    md.push_str(&format!(
        "Attack `{}` ({}) against victim `{}`, injection rate {}.\n\n",
        cfg.attack.name.label(),
        cfg.attack.direction.name(),
        cfg.victim.family_name(),
        cfg.attack.injection_rate
    ));
    md.push_str("| target | pred. shift | HR@K before | HR@K after | dRMSE | dMAE |\n");
    md.push_str("|---|---|---|---|---|---|\n");
    for r in reports {
        md.push_str(&format!(
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.target_item,
            r.prediction_shift,
            r.hr_before,
            r.hr_after,
            r.rmse_shift(),
            r.mae_shift()
        ));
    }
    if !detection.is_empty() {
        md.push_str("\n| detector | precision | recall | flag fraction |\n");
        md.push_str("|---|---|---|---|\n");
        for detector in ["unsupervised", "supervised"] {
            let subset: Vec<&DetectionRow> =
                detection.iter().filter(|r| r.detector == detector).collect();
            if subset.is_empty() {
                continue;
            }
            let n = subset.len() as f64;
            md.push_str(&format!(
                "| {detector} | {:.4} | {:.4} | {:.4} |\n",
                subset.iter().map(|r| r.precision).sum::<f64>() / n,
                subset.iter().map(|r| r.recall).sum::<f64>() / n,
                subset.iter().map(|r| r.flag_fraction).sum::<f64>() / n,
            ));
        }
    }
    fs::write(out_dir.join("report.md"), md).map_err(|e| CliError::Stage(e.to_string()))
}

pub struct SweepOutcome {
    pub out_dir: PathBuf,
    pub rate_outcomes: Vec<RunOutcome>,
}

/// One full run per rate under `<out>/rate_<rate>/`, plus a consolidated
/// sweep.csv at the sweep root with rows in the given rate order.
pub fn cmd_sweep(cfg: &RunConfig, rates: &[f64]) -> Result<SweepOutcome, CliError> {
    if rates.is_empty() {
        return Err(CliError::Config("sweep needs at least one rate".into()));
    }
    for &rate in rates {
        if !(0.0 < rate && rate <= 1.0) {
            return Err(CliError::Config(format!("sweep rate {rate} outside (0,1]")));
        }
    }
    let base = cfg.output.dir.clone();
    fs::create_dir_all(&base)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", base.display())))?;
    let base_hash = cfg.hash();
    let mut outcomes = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut sub = cfg.clone();
        sub.attack.injection_rate = rate;
        sub.output.dir = base.join(format!("rate_{rate:.4}"));
        outcomes.push(cmd_run(&sub)?);
    }
    let mut out = String::new();
    out.push_str(&csv_header_comment(&base_hash, cfg.seed));
    out.push('\n');
    out.push_str("metric,value,segment,rate\n");
    for (outcome, &rate) in outcomes.iter().zip(rates) {
        for (metric, value, segment, _) in aggregate_rows(&outcome.reports) {
            if segment.is_empty() {
                out.push_str(&format!("{metric},{value:.6},{segment},{rate}\n"));
            }
        }
    }
    fs::write(base.join("sweep.csv"), out).map_err(|e| CliError::Stage(e.to_string()))?;
    Ok(SweepOutcome { out_dir: base, rate_outcomes: outcomes })
}

/// Generate a synthetic dataset into `out`: interactions.csv + items.jsonl.
pub fn cmd_synth(
    users: usize,
    items: usize,
    density: f64,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let ds = stage(shillsim_core::synth::generate(&shillsim_core::synth::SynthConfig::new(
        users, items, density, seed,
    )))?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    stage(data::write_interactions_csv(&ds, out.join("interactions.csv")))?;
    stage(data::write_items_jsonl(&ds, out.join("items.jsonl")))?;
    Ok(())
}
