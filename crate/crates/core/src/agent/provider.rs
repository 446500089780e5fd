//! LLM provider interface, the fenced answer format, transcript logging,
//! and the live HTTP provider.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOp {
    AnalyzeTarget,
    InferProfile,
    ValidateProfile,
    DiversifyProfiles,
    SelectFiller,
    GenerateRatings,
    SimilarityFeatures,
    DraftReview,
    PropagateFeatures,
    TargetReview,
}

impl PromptOp {
    pub fn tag(&self) -> &'static str {
        match self {
            PromptOp::AnalyzeTarget => "analyze_target",
            PromptOp::InferProfile => "infer_profile",
            PromptOp::ValidateProfile => "validate_profile",
            PromptOp::DiversifyProfiles => "diversify_profiles",
            PromptOp::SelectFiller => "select_filler",
            PromptOp::GenerateRatings => "generate_ratings",
            PromptOp::SimilarityFeatures => "similarity_features",
            PromptOp::DraftReview => "draft_review",
            PromptOp::PropagateFeatures => "propagate_features",
            PromptOp::TargetReview => "target_review",
        }
    }
}

/// A structured prompt: named slots drive the deterministic stub, the
/// rendered text is what a live model sees.
#[derive(Debug, Clone)]
pub struct Prompt {
    pub op: PromptOp,
    pub agent_index: Option<u32>,
    pub round: Option<u32>,
    pub slots: BTreeMap<String, String>,
    pub text: String,
}

impl Prompt {
    pub fn new(op: PromptOp, slots: BTreeMap<String, String>, text: String) -> Prompt {
        Prompt { op, agent_index: None, round: None, slots, text }
    }

    pub fn with_agent(mut self, agent_index: u32) -> Prompt {
        self.agent_index = Some(agent_index);
        self
    }

    pub fn with_round(mut self, round: u32) -> Prompt {
        self.round = Some(round);
        self
    }

    pub fn slot(&self, key: &str) -> &str {
        self.slots.get(key).map(|s| s.as_str()).unwrap_or("")
    }
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String>;
    fn name(&self) -> &str;
}

pub const FENCE_OPEN: &str = "---ANSWER---";
pub const FENCE_CLOSE: &str = "---END---";

/// Every prompt asks the model to answer inside a key-value fence; prose
/// outside the fence is ignored.
pub fn fence_instruction(keys: &[&str]) -> String {
    format!(
        "Answer strictly inside a fenced block of the form:\n{FENCE_OPEN}\n{}\n{FENCE_CLOSE}\nLists use '|' as separator.",
        keys.iter().map(|k| format!("{k}: <value>")).collect::<Vec<_>>().join("\n")
    )
}

pub fn render_fenced(pairs: &[(&str, String)]) -> String {
    let mut out = String::from(FENCE_OPEN);
    out.push('\n');
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(": ");
        out.push_str(v);
        out.push('\n');
    }
    out.push_str(FENCE_CLOSE);
    out
}

pub fn parse_fenced(response: &str) -> Result<BTreeMap<String, String>> {
    let start = response
        .find(FENCE_OPEN)
        .ok_or_else(|| CoreError::Provider("missing answer fence".into()))?;
    let after = &response[start + FENCE_OPEN.len()..];
    let end = after
        .find(FENCE_CLOSE)
        .ok_or_else(|| CoreError::Provider("unterminated answer fence".into()))?;
    let mut map = BTreeMap::new();
    for line in after[..end].lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, value)) = line.split_once(':') {
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    Ok(map)
}

pub fn split_list(value: &str) -> Vec<String> {
    value
        .split('|')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TranscriptEntry {
    pub agent_index: Option<u32>,
    pub round: Option<u32>,
    pub op: String,
    pub prompt: String,
    pub response: String,
}

/// JSONL log of every prompt/response pair; replayable as a fixture.
#[derive(Debug, Default, Clone)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Transcript {
        Transcript::default()
    }

    pub fn record(&mut self, prompt: &Prompt, response: &str) {
        self.entries.push(TranscriptEntry {
            agent_index: prompt.agent_index,
            round: prompt.round,
            op: prompt.op.tag().to_string(),
            prompt: prompt.text.clone(),
            response: response.to_string(),
        });
    }

    pub fn write_jsonl<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for entry in &self.entries {
            writeln!(
                f,
                "{}",
                serde_json::to_string(entry).map_err(|e| CoreError::Invalid(e.to_string()))?
            )?;
        }
        Ok(())
    }

    pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Transcript> {
        let file = std::fs::File::open(path)?;
        let mut entries = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| CoreError::Parse { line: idx + 1, msg: e.to_string() })?,
            );
        }
        Ok(Transcript { entries })
    }
}

/// Replays a recorded transcript: each call returns the next recorded
/// response whose operation tag matches.
pub struct ReplayProvider {
    entries: Mutex<std::collections::VecDeque<TranscriptEntry>>,
}

impl ReplayProvider {
    pub fn new(transcript: Transcript) -> ReplayProvider {
        ReplayProvider { entries: Mutex::new(transcript.entries.into()) }
    }
}

impl LlmProvider for ReplayProvider {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let mut entries = self.entries.lock().unwrap();
        let pos = entries
            .iter()
            .position(|e| e.op == prompt.op.tag())
            .ok_or_else(|| {
                CoreError::Provider(format!("no recorded response for op {}", prompt.op.tag()))
            })?;
        Ok(entries.remove(pos).unwrap().response)
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// OpenAI-style chat completion endpoint with retry and backoff.
#[derive(Debug, Clone)]
pub struct LiveProviderConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
}

pub struct HttpLlmProvider {
    cfg: LiveProviderConfig,
    client: reqwest::blocking::Client,
}

impl HttpLlmProvider {
    pub fn new(cfg: LiveProviderConfig) -> Result<HttpLlmProvider> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| CoreError::Provider(e.to_string()))?;
        Ok(HttpLlmProvider { cfg, client })
    }
}

impl LlmProvider for HttpLlmProvider {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        #[derive(Serialize)]
        struct Message<'a> {
            role: &'a str,
            content: &'a str,
        }
        #[derive(Serialize)]
        struct Req<'a> {
            model: &'a str,
            temperature: f64,
            messages: Vec<Message<'a>>,
        }
        #[derive(Deserialize)]
        struct Choice {
            message: RespMessage,
        }
        #[derive(Deserialize)]
        struct RespMessage {
            content: String,
        }
        #[derive(Deserialize)]
        struct Resp {
            choices: Vec<Choice>,
        }
        let api_key = std::env::var(&self.cfg.api_key_env).unwrap_or_default();
        let url = format!("{}/v1/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = Req {
            model: &self.cfg.model,
            temperature: self.cfg.temperature,
            messages: vec![Message { role: "user", content: &prompt.text }],
        };
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                // Exponential backoff on transient failures.
                std::thread::sleep(Duration::from_millis(250 << attempt.min(6)));
            }
            let result = self
                .client
                .post(&url)
                .bearer_auth(&api_key)
                .json(&body)
                .send();
            match result {
                Ok(resp) if resp.status().is_success() => {
                    let parsed: Resp =
                        resp.json().map_err(|e| CoreError::Provider(e.to_string()))?;
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| CoreError::Provider("empty choices".into()));
                }
                Ok(resp) => last_err = format!("status {}", resp.status()),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(CoreError::Provider(format!(
            "chat completion failed after {} attempts: {last_err}",
            self.cfg.max_retries + 1
        )))
    }

    fn name(&self) -> &str {
        "live"
    }
}
