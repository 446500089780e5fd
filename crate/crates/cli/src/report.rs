//! Post-hoc commands over finished run directories: `report` renders a
//! consolidated attack-by-metric table, `verify` re-hashes the config
//! snapshot and checks that every artifact embeds the same hash and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::config::RunConfig;
use crate::pipeline::FAILED_MARKER;
use crate::CliError;

/// Directories under `root` (inclusive) that contain a manifest.json.
fn find_runs(root: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join("manifest.json").is_file() {
            found.push(dir);
            continue;
        }
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    found
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Stage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Stage(format!("invalid JSON in {}: {e}", path.display())))
}

/// Parse a run's metrics.csv into metric -> value, skipping segment rows.
fn read_metrics_csv(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Stage(format!("cannot read {}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for line in text.lines().skip(2) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 || !fields[2].is_empty() {
            continue;
        }
        let value: f64 = fields[1]
            .parse()
            .map_err(|e| CliError::Stage(format!("bad value in {}: {e}", path.display())))?;
        out.insert(fields[0].to_string(), value);
    }
    Ok(out)
}

/// Markdown table over every run found under `dir`, rows sorted by
/// attack name then run path.
pub fn cmd_report(dir: &Path) -> Result<String, CliError> {
    let runs = find_runs(dir);
    if runs.is_empty() {
        return Err(CliError::Stage(format!(
            "no runs (manifest.json) found under {}",
            dir.display()
        )));
    }
    let mut rows = Vec::new();
    for run in &runs {
        let manifest = read_json(&run.join("manifest.json"))?;
        let attack = manifest["attack"].as_str().unwrap_or("?").to_string();
        let victim = manifest["victim"].as_str().unwrap_or("?").to_string();
        let rate = manifest["injection_rate"].as_f64().unwrap_or(f64::NAN);
        let metrics = read_metrics_csv(&run.join("metrics.csv"))?;
        rows.push((attack, victim, rate, run.clone(), metrics));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.3.cmp(&b.3)));

    let mut md = String::new();
    md.push_str("# Run summary\n\n");
    md.push_str("| attack | victim | rate | pred. shift | HR@K before | HR@K after | dRMSE | dMAE |\n");
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    let get = |m: &BTreeMap<String, f64>, k: &str| m.get(k).copied().unwrap_or(f64::NAN);
    for (attack, victim, rate, _, metrics) in &rows {
        md.push_str(&format!(
            "| {attack} | {victim} | {rate} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            get(metrics, "prediction_shift"),
            get(metrics, "hr_before"),
            get(metrics, "hr_after"),
            get(metrics, "rmse_shift"),
            get(metrics, "mae_shift"),
        ));
    }
    Ok(md)
}

fn check_embedded_text(path: &Path, hash: &str, seed: u64) -> Result<(), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Stage(format!("cannot read {}: {e}", path.display())))?;
    let ok = text.lines().take(5).any(|line| {
        line.contains(&format!("config_hash={hash}")) && line.contains(&format!("seed={seed}"))
            || embedded_in_json_line(line, hash, seed)
    });
    if ok {
        Ok(())
    } else {
        Err(CliError::Stage(format!(
            "{} does not embed config_hash={hash} seed={seed}",
            path.display()
        )))
    }
}

fn embedded_in_json_line(line: &str, hash: &str, seed: u64) -> bool {
    let Ok(v) = serde_json::from_str::<Value>(line) else { return false };
    v["config_hash"].as_str() == Some(hash) && v["seed"].as_u64() == Some(seed)
}

fn check_embedded_json(path: &Path, hash: &str, seed: u64) -> Result<(), CliError> {
    let v = read_json(path)?;
    if v["config_hash"].as_str() == Some(hash) && v["seed"].as_u64() == Some(seed) {
        Ok(())
    } else {
        Err(CliError::Stage(format!(
            "{} does not embed config_hash={hash} seed={seed}",
            path.display()
        )))
    }
}

fn verify_run(run: &Path) -> Result<(), CliError> {
    if run.join(FAILED_MARKER).is_file() {
        return Err(CliError::Stage(format!(
            "run {} is marked FAILED; artifacts are not usable",
            run.display()
        )));
    }
    let manifest = read_json(&run.join("manifest.json"))?;
    let hash = manifest["config_hash"]
        .as_str()
        .ok_or_else(|| CliError::Stage("manifest.json missing config_hash".into()))?
        .to_string();
    let seed = manifest["seed"]
        .as_u64()
        .ok_or_else(|| CliError::Stage("manifest.json missing seed".into()))?;

    // Re-hash the config snapshot and compare.
    let cfg = RunConfig::from_path(&run.join("config.toml"))?;
    let recomputed = cfg.hash();
    if recomputed != hash {
        return Err(CliError::Stage(format!(
            "config hash mismatch in {}: manifest says {hash}, snapshot hashes to {recomputed}",
            run.display()
        )));
    }

    let artifacts = manifest["artifacts"]
        .as_array()
        .ok_or_else(|| CliError::Stage("manifest.json missing artifacts".into()))?;
    for artifact in artifacts {
        let Some(rel) = artifact.as_str() else { continue };
        let path = run.join(rel);
        if !path.is_file() {
            return Err(CliError::Stage(format!("missing artifact {}", path.display())));
        }
        if rel == "config.toml" {
            continue;
        }
        if rel.ends_with(".json") {
            check_embedded_json(&path, &hash, seed)?;
        } else {
            check_embedded_text(&path, &hash, seed)?;
        }
    }
    Ok(())
}

/// Verify every run under `dir`. A failed run, a hash mismatch, or a
/// missing/unstamped artifact fails verification.
pub fn cmd_verify(dir: &Path) -> Result<usize, CliError> {
    // FAILED runs have no manifest to find, so check markers explicitly.
    let mut stack = vec![dir.to_path_buf()];
    let mut runs = 0usize;
    while let Some(d) = stack.pop() {
        if d.join(FAILED_MARKER).is_file() {
            return Err(CliError::Stage(format!(
                "run {} is marked FAILED; artifacts are not usable",
                d.display()
            )));
        }
        if d.join("manifest.json").is_file() {
            verify_run(&d)?;
            runs += 1;
            continue;
        }
        let Ok(entries) = fs::read_dir(&d) else { continue };
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    if runs == 0 {
        return Err(CliError::Stage(format!(
            "no runs found to verify under {}",
            dir.display()
        )));
    }
    Ok(runs)
}
