//! Deterministic text embedding and similarity.
//!
//! Texts are case-folded, punctuation-stripped, and hashed (tokens plus
//! token bigrams) into a fixed number of signed buckets with log-TF and a
//! smoothed IDF table frozen from a reference corpus. The embedding is a
//! pure function of the input text once the IDF table is fit.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub values: Vec<f64>,
}

impl TextEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Standard cosine; 0 when either vector is zero.
pub fn cosine(a: &TextEmbedding, b: &TextEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(CoreError::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(cosine_raw(&a.values, &b.values))
}

pub fn cosine_raw(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

// FNV-1a: stable across platforms and releases, unlike std's SipHash.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedder {
    dim: usize,
    use_bigrams: bool,
    /// None until fit; all features then weigh 1.0.
    idf: Option<BTreeMap<String, f64>>,
    default_idf: f64,
}

impl Embedder {
    pub fn new(dim: usize) -> Embedder {
        Embedder { dim, use_bigrams: true, idf: None, default_idf: 1.0 }
    }

    /// Order-invariant variant: token features only, no bigrams.
    pub fn unigram_only(dim: usize) -> Embedder {
        Embedder { dim, use_bigrams: false, idf: None, default_idf: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fit a smoothed IDF table on the corpus and freeze it. Unseen
    /// features at embed time get the zero-document-frequency weight.
    pub fn fit_idf<'a>(&mut self, corpus: impl IntoIterator<Item = &'a str>) {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in corpus {
            n_docs += 1;
            let mut seen = BTreeMap::new();
            for f in self.features(doc) {
                seen.entry(f).or_insert(0);
            }
            for f in seen.into_keys() {
                *df.entry(f).or_insert(0) += 1;
            }
        }
        let n = n_docs as f64;
        let table = df
            .into_iter()
            .map(|(f, d)| (f, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        self.default_idf = (1.0 + n).ln() + 1.0;
        self.idf = Some(table);
    }

    fn features(&self, text: &str) -> Vec<String> {
        let tokens = tokenize(text);
        let mut feats: Vec<String> = tokens.clone();
        if self.use_bigrams {
            for pair in tokens.windows(2) {
                feats.push(format!("2:{} {}", pair[0], pair[1]));
            }
        }
        feats
    }

    pub fn embed(&self, text: &str) -> TextEmbedding {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for f in self.features(text) {
            *counts.entry(f).or_insert(0) += 1;
        }
        let mut values = vec![0.0; self.dim];
        for (feat, tf) in counts {
            let weight = (1.0 + (tf as f64).ln())
                * match &self.idf {
                    Some(table) => *table.get(&feat).unwrap_or(&self.default_idf),
                    None => 1.0,
                };
            let h = fnv1a(feat.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 1 { 1.0 } else { -1.0 };
            values[bucket] += sign * weight;
        }
        let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in values.iter_mut() {
                *v /= norm;
            }
        }
        TextEmbedding { values }
    }
}

/// Batch embedding backend; implemented by the local hashed TF-IDF
/// embedder and by an optional external HTTP service.
pub trait EmbeddingProvider {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

impl EmbeddingProvider for Embedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed(t).values).collect())
    }
}

/// External embedding service: POST `{texts: [..]}`, expects
/// `{vectors: [[..]]}`.
pub struct HttpEmbeddingProvider {
    pub url: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        #[derive(Serialize)]
        struct Req<'a> {
            texts: &'a [String],
        }
        #[derive(Deserialize)]
        struct Resp {
            vectors: Vec<Vec<f64>>,
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.timeout_secs))
            .build()
            .map_err(|e| CoreError::Provider(e.to_string()))?;
        let mut last_err = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << attempt.min(6)));
            }
            match client.post(&self.url).json(&Req { texts }).send() {
                Ok(resp) if resp.status().is_success() => {
                    let body: Resp =
                        resp.json().map_err(|e| CoreError::Provider(e.to_string()))?;
                    return Ok(body.vectors);
                }
                Ok(resp) => last_err = format!("status {}", resp.status()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(CoreError::Provider(format!(
            "embedding service failed after {} attempts: {last_err}",
            self.max_retries + 1
        )))
    }
}
