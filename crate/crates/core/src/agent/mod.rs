//! Fake-user agents: profile inference, dual-store memory with hybrid
//! retrieval, and the action pipeline that turns exposure batches into
//! injected ratings and reviews.

pub mod provider;
pub mod stub;

pub use provider::{
    fence_instruction, parse_fenced, render_fenced, split_list, HttpLlmProvider,
    LiveProviderConfig, LlmProvider, Prompt, PromptOp, ReplayProvider, Transcript,
    TranscriptEntry,
};
pub use stub::StubProvider;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::Direction;
use crate::data::{
    uniform_timestamps, InjectionProfile, ItemMeta, ProfileInteraction, RatingScale, Role,
};
use crate::embedding::{cosine, Embedder};
use crate::{CoreError, Result};

const GOLDEN: u64 = 0x9E3779B97F4A7C15;
const MAX_PROMPT_ATTEMPTS: u32 = 3;
const MAX_PROFILE_ATTEMPTS: u32 = 3;
pub const DEFAULT_MEMORY_CAPACITY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HabitFreq {
    Low,
    Medium,
    High,
}

impl HabitFreq {
    pub fn parse(s: &str) -> Result<HabitFreq> {
        match s {
            "low" => Ok(HabitFreq::Low),
            "medium" => Ok(HabitFreq::Medium),
            "high" => Ok(HabitFreq::High),
            other => Err(CoreError::Provider(format!("bad habit frequency '{other}'"))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            HabitFreq::Low => "low",
            HabitFreq::Medium => "medium",
            HabitFreq::High => "high",
        }
    }

    /// Per-round interaction budget implied by the habit.
    pub fn cap(&self) -> usize {
        match self {
            HabitFreq::Low => 1,
            HabitFreq::Medium => 3,
            HabitFreq::High => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetAnalysis {
    pub item_id: String,
    pub features: Vec<String>,
    pub audience: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile {
    pub demographics: String,
    pub interests: Vec<String>,
    pub dislikes: Vec<String>,
    pub review_frequency: HabitFreq,
    pub rating_frequency: HabitFreq,
    pub validated: bool,
}

impl AgentProfile {
    /// Flat text form used for diversity embedding and live prompts.
    pub fn text(&self) -> String {
        format!(
            "{}; likes {}; dislikes {}",
            self.demographics,
            self.interests.join(", "),
            self.dislikes.join(", ")
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MemoryKind {
    Rating,
    Review,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub item_id: String,
    pub title: String,
    pub kind: MemoryKind,
    pub rating: Option<f64>,
    pub text: Option<String>,
    pub timestamp: i64,
    /// Insertion order, shared across both stores.
    pub seq: usize,
}

/// Rating store and review store with a shared capacity; oldest entries
/// are evicted first.
#[derive(Debug, Clone, Default)]
pub struct AgentMemory {
    records: Vec<MemoryRecord>,
    capacity: usize,
    next_seq: usize,
}

impl AgentMemory {
    pub fn new(capacity: usize) -> AgentMemory {
        AgentMemory { records: Vec::new(), capacity, next_seq: 0 }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn ratings(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.iter().filter(|r| r.kind == MemoryKind::Rating)
    }

    pub fn reviews(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.iter().filter(|r| r.kind == MemoryKind::Review)
    }

    fn push(&mut self, mut record: MemoryRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.timestamp < last.timestamp {
                return Err(CoreError::OutOfOrderTimestamp {
                    new: record.timestamp,
                    last: last.timestamp,
                });
            }
        }
        record.seq = self.next_seq;
        self.next_seq += 1;
        self.records.push(record);
        if self.records.len() > self.capacity {
            self.records.remove(0);
        }
        Ok(())
    }

    pub fn record_rating(&mut self, item: &ItemMeta, rating: f64, timestamp: i64) -> Result<()> {
        self.push(MemoryRecord {
            item_id: item.item_id.clone(),
            title: item.title.clone(),
            kind: MemoryKind::Rating,
            rating: Some(rating),
            text: None,
            timestamp,
            seq: 0,
        })
    }

    pub fn record_review(&mut self, item: &ItemMeta, text: &str, timestamp: i64) -> Result<()> {
        self.push(MemoryRecord {
            item_id: item.item_id.clone(),
            title: item.title.clone(),
            kind: MemoryKind::Review,
            rating: None,
            text: Some(text.to_string()),
            timestamp,
            seq: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub fake_user_id: String,
    pub profile: AgentProfile,
    pub memory: AgentMemory,
    pub seed: u64,
}

/// Toggles for ablating individual pipeline stages; all on by default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationSwitches {
    pub profile_inference: bool,
    pub diversity: bool,
    pub use_relevance: bool,
    pub use_recency: bool,
    pub reviews: bool,
    pub propagation: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        AblationSwitches {
            profile_inference: true,
            diversity: true,
            use_relevance: true,
            use_recency: true,
            reviews: true,
            propagation: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackRunConfig {
    pub target_item: String,
    pub direction: Direction,
    pub num_agents: usize,
    /// Candidate pool size for diversification; defaults to 2x num_agents.
    pub candidate_profile_count: usize,
    pub exposure_rounds: u32,
    pub batch_size: usize,
    pub relevance_k: usize,
    pub recency_count: usize,
    pub seed: u64,
    pub ablation: AblationSwitches,
}

impl AttackRunConfig {
    pub fn new(target_item: &str, direction: Direction, num_agents: usize, seed: u64) -> Self {
        AttackRunConfig {
            target_item: target_item.to_string(),
            direction,
            num_agents,
            candidate_profile_count: 2 * num_agents,
            exposure_rounds: 10,
            batch_size: 20,
            relevance_k: 5,
            recency_count: 3,
            seed,
            ablation: AblationSwitches::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_agents == 0 {
            return Err(CoreError::Invalid("num_agents must be positive".into()));
        }
        if self.candidate_profile_count < self.num_agents {
            return Err(CoreError::Invalid(
                "candidate_profile_count must be >= num_agents".into(),
            ));
        }
        if self.exposure_rounds == 0 {
            return Err(CoreError::Invalid("exposure_rounds must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Invalid("batch_size must be >= 1".into()));
        }
        if self.relevance_k + self.recency_count == 0 {
            return Err(CoreError::Invalid(
                "relevance_k + recency_count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Where exposure batches come from; in production this is the popularity
/// sampler over the training catalog.
pub trait ExposureSource {
    fn expose(&self, batch_size: usize, seed: u64, round: u32) -> Vec<ItemMeta>;
}

pub struct PopularityExposure<'a> {
    pub catalog: &'a BTreeMap<String, ItemMeta>,
}

impl ExposureSource for PopularityExposure<'_> {
    fn expose(&self, batch_size: usize, seed: u64, round: u32) -> Vec<ItemMeta> {
        let batch = crate::victim::expose(self.catalog, batch_size.min(self.catalog.len()), seed, round);
        batch.items.iter().map(|id| self.catalog[id].clone()).collect()
    }
}

fn prompt_text(intro: &str, slots: &BTreeMap<String, String>, keys: &[&str]) -> String {
    let mut out = String::from(intro);
    out.push('\n');
    for (k, v) in slots {
        out.push_str(k);
        out.push_str(": ");
        out.push_str(v);
        out.push('\n');
    }
    out.push_str(&fence_instruction(keys));
    out
}

/// One provider call with bounded re-asks on unparseable output.
fn ask(
    llm: &dyn LlmProvider,
    prompt: &Prompt,
    transcript: &mut Transcript,
) -> Result<BTreeMap<String, String>> {
    let mut last_err = None;
    for _ in 0..MAX_PROMPT_ATTEMPTS {
        let response = llm.complete(prompt)?;
        transcript.record(prompt, &response);
        match parse_fenced(&response) {
            Ok(map) => return Ok(map),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap())
}

fn slots(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

pub fn analyze_target(
    item: &ItemMeta,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<TargetAnalysis> {
    if item.title.trim().is_empty() {
        return Err(CoreError::Invalid(format!("item {} has no title", item.item_id)));
    }
    let s = slots(&[("title", item.title.clone()), ("category", item.category.clone())]);
    let text = prompt_text(
        "Analyze the following catalog item and list its salient characteristics and likely audience.",
        &s,
        &["features", "audience"],
    );
    let answer = ask(llm, &Prompt::new(PromptOp::AnalyzeTarget, s, text), transcript)?;
    let features = split_list(answer.get("features").map(String::as_str).unwrap_or(""));
    if features.is_empty() {
        return Err(CoreError::Provider("target analysis produced no features".into()));
    }
    Ok(TargetAnalysis {
        item_id: item.item_id.clone(),
        features,
        audience: answer.get("audience").cloned().unwrap_or_default(),
    })
}

pub fn infer_profile(
    analysis: &TargetAnalysis,
    direction: Direction,
    agent_index: u32,
    attempt: u32,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<AgentProfile> {
    if analysis.features.is_empty() {
        return Err(CoreError::Invalid("empty target analysis".into()));
    }
    let s = slots(&[
        ("features", analysis.features.join("|")),
        ("direction", direction.name().to_string()),
        ("audience", analysis.audience.clone()),
    ]);
    let text = prompt_text(
        "Given this target-item analysis, infer a plausible shopper profile that would engage with it.",
        &s,
        &["demographics", "interests", "dislikes", "review_frequency", "rating_frequency"],
    );
    let prompt = Prompt::new(PromptOp::InferProfile, s, text)
        .with_agent(agent_index)
        .with_round(attempt);
    let answer = ask(llm, &prompt, transcript)?;
    let interests = split_list(answer.get("interests").map(String::as_str).unwrap_or(""));
    if interests.is_empty() {
        return Err(CoreError::Provider("inferred profile has no interests".into()));
    }
    Ok(AgentProfile {
        demographics: answer.get("demographics").cloned().unwrap_or_default(),
        interests,
        dislikes: split_list(answer.get("dislikes").map(String::as_str).unwrap_or("")),
        review_frequency: HabitFreq::parse(
            answer.get("review_frequency").map(String::as_str).unwrap_or("medium"),
        )?,
        rating_frequency: HabitFreq::parse(
            answer.get("rating_frequency").map(String::as_str).unwrap_or("medium"),
        )?,
        validated: false,
    })
}

pub fn validate_profile(
    profile: &AgentProfile,
    item: &ItemMeta,
    direction: Direction,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<bool> {
    let s = slots(&[
        ("title", item.title.clone()),
        ("category", item.category.clone()),
        ("interests", profile.interests.join("|")),
        ("dislikes", profile.dislikes.join("|")),
        ("direction", direction.name().to_string()),
    ]);
    let text = prompt_text(
        "Would a shopper with this profile genuinely engage with the item as intended?",
        &s,
        &["answer"],
    );
    let answer = ask(llm, &Prompt::new(PromptOp::ValidateProfile, s, text), transcript)?;
    Ok(answer.get("answer").map(String::as_str).unwrap_or("no").eq_ignore_ascii_case("yes"))
}

/// Inference plus the validation gate, with bounded regeneration.
pub fn build_validated_profile(
    analysis: &TargetAnalysis,
    item: &ItemMeta,
    direction: Direction,
    agent_index: u32,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<AgentProfile> {
    let mut rejected = Vec::new();
    for attempt in 0..MAX_PROFILE_ATTEMPTS {
        let mut profile = infer_profile(analysis, direction, agent_index, attempt, llm, transcript)?;
        if validate_profile(&profile, item, direction, llm, transcript)? {
            profile.validated = true;
            return Ok(profile);
        }
        rejected.push(profile.text());
    }
    Err(CoreError::ValidationFailed {
        attempts: MAX_PROFILE_ATTEMPTS as usize,
        details: rejected.join(" / "),
    })
}

pub fn diversify_profiles(
    candidates: &[AgentProfile],
    n: usize,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<Vec<AgentProfile>> {
    if candidates.len() < n {
        return Err(CoreError::Invalid(format!(
            "cannot pick {n} profiles from a pool of {}",
            candidates.len()
        )));
    }
    if let Some(pos) = candidates.iter().position(|c| !c.validated) {
        return Err(CoreError::Invalid(format!("candidate {pos} is not validated")));
    }
    let mut pairs = vec![
        ("count", candidates.len().to_string()),
        ("n", n.to_string()),
    ];
    let texts: Vec<String> = candidates.iter().map(|c| c.text()).collect();
    let keys: Vec<String> = (0..candidates.len()).map(|i| format!("candidate_{i}")).collect();
    for (key, text) in keys.iter().zip(&texts) {
        pairs.push((key.as_str(), text.clone()));
    }
    let s = slots(&pairs);
    let text = prompt_text(
        "From the candidate shopper profiles below, pick the most mutually diverse subset.",
        &s,
        &["selected"],
    );
    let answer = ask(llm, &Prompt::new(PromptOp::DiversifyProfiles, s, text), transcript)?;
    let indices: Vec<usize> = split_list(answer.get("selected").map(String::as_str).unwrap_or(""))
        .iter()
        .map(|v| v.parse::<usize>().map_err(|_| CoreError::Provider(format!("bad index '{v}'"))))
        .collect::<Result<_>>()?;
    let distinct: BTreeSet<usize> = indices.iter().copied().collect();
    if indices.len() != n || distinct.len() != n || indices.iter().any(|&i| i >= candidates.len()) {
        return Err(CoreError::Provider(format!(
            "diversification returned invalid index set {indices:?} for n={n}"
        )));
    }
    Ok(indices.into_iter().map(|i| candidates[i].clone()).collect())
}

pub fn retrieve_relevant(
    mem: &AgentMemory,
    query_item: &ItemMeta,
    k: usize,
    embedder: &Embedder,
) -> Vec<MemoryRecord> {
    if k == 0 {
        return Vec::new();
    }
    let query = embedder.embed(&query_item.title);
    let mut scored: Vec<(f64, &MemoryRecord)> = mem
        .records()
        .iter()
        .map(|r| (cosine(&query, &embedder.embed(&r.title)).unwrap_or(0.0), r))
        .collect();
    // Ties break toward the most recent entry.
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap().then_with(|| b.1.seq.cmp(&a.1.seq))
    });
    scored.into_iter().take(k).map(|(_, r)| r.clone()).collect()
}

pub fn retrieve_recent(mem: &AgentMemory, m: usize) -> Vec<MemoryRecord> {
    let mut records: Vec<&MemoryRecord> = mem.records().iter().collect();
    records.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then_with(|| b.seq.cmp(&a.seq)));
    records.into_iter().take(m).cloned().collect()
}

pub fn retrieve_hybrid(
    mem: &AgentMemory,
    query_item: &ItemMeta,
    k: usize,
    m: usize,
    embedder: &Embedder,
) -> Vec<MemoryRecord> {
    let mut out = Vec::new();
    let mut seen: BTreeSet<(String, MemoryKind, i64)> = BTreeSet::new();
    for rec in retrieve_relevant(mem, query_item, k, embedder)
        .into_iter()
        .chain(retrieve_recent(mem, m))
    {
        if seen.insert((rec.item_id.clone(), rec.kind, rec.timestamp)) {
            out.push(rec);
        }
    }
    out
}

fn item_slots(pairs: &mut Vec<(String, String)>, items: &[ItemMeta]) {
    pairs.push(("count".to_string(), items.len().to_string()));
    for (i, item) in items.iter().enumerate() {
        pairs.push((format!("item_{i}_id"), item.item_id.clone()));
        pairs.push((format!("item_{i}_title"), item.title.clone()));
        pairs.push((format!("item_{i}_category"), item.category.clone()));
    }
}

fn owned_slots(pairs: Vec<(String, String)>) -> BTreeMap<String, String> {
    pairs.into_iter().collect()
}

pub fn select_filler(
    batch: &[ItemMeta],
    profile: &AgentProfile,
    agent_index: u32,
    round: u32,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
    warnings: &mut u32,
) -> Result<Vec<ItemMeta>> {
    if batch.is_empty() {
        return Err(CoreError::Invalid("empty exposure batch".into()));
    }
    let mut pairs = vec![
        ("interests".to_string(), profile.interests.join("|")),
        ("rating_frequency".to_string(), profile.rating_frequency.tag().to_string()),
    ];
    item_slots(&mut pairs, batch);
    let s = owned_slots(pairs);
    let text = prompt_text(
        "From the items shown this round, pick the ones this shopper would plausibly engage with.",
        &s,
        &["selected"],
    );
    let prompt = Prompt::new(PromptOp::SelectFiller, s, text)
        .with_agent(agent_index)
        .with_round(round);
    let answer = ask(llm, &prompt, transcript)?;
    let mut out = Vec::new();
    let mut taken = BTreeSet::new();
    for id in split_list(answer.get("selected").map(String::as_str).unwrap_or("")) {
        match batch.iter().find(|item| item.item_id == id) {
            Some(item) if taken.insert(id.clone()) => out.push(item.clone()),
            Some(_) => {}
            None => {
                log::warn!("provider selected item '{id}' outside the exposure batch; dropped");
                *warnings += 1;
            }
        }
    }
    Ok(out)
}

pub fn generate_ratings(
    items: &[ItemMeta],
    profile: &AgentProfile,
    retrieved: &[MemoryRecord],
    scale: RatingScale,
    agent_index: u32,
    round: u32,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
    warnings: &mut u32,
) -> Result<BTreeMap<String, f64>> {
    let memory_summary: Vec<String> = retrieved
        .iter()
        .map(|r| match r.kind {
            MemoryKind::Rating => format!("rated '{}' {}", r.title, r.rating.unwrap_or(0.0)),
            MemoryKind::Review => format!("reviewed '{}'", r.title),
        })
        .collect();
    let mut pairs = vec![
        ("interests".to_string(), profile.interests.join("|")),
        ("dislikes".to_string(), profile.dislikes.join("|")),
        ("memory".to_string(), memory_summary.join("; ")),
    ];
    item_slots(&mut pairs, items);
    let s = owned_slots(pairs);
    let text = prompt_text(
        "Rate each listed item from this shopper's perspective, consistent with their profile and history.",
        &s,
        &["ratings"],
    );
    let prompt = Prompt::new(PromptOp::GenerateRatings, s, text)
        .with_agent(agent_index)
        .with_round(round);
    let answer = ask(llm, &prompt, transcript)?;
    let mut out = BTreeMap::new();
    for entry in split_list(answer.get("ratings").map(String::as_str).unwrap_or("")) {
        let (id, value) = entry
            .split_once('=')
            .ok_or_else(|| CoreError::Provider(format!("bad rating entry '{entry}'")))?;
        if !items.iter().any(|item| item.item_id == id) {
            log::warn!("provider rated item '{id}' that was not requested; dropped");
            *warnings += 1;
            continue;
        }
        let raw: f64 = value
            .trim()
            .parse()
            .map_err(|_| CoreError::Provider(format!("bad rating value '{value}'")))?;
        let snapped = scale.snap(raw);
        if snapped != raw {
            log::warn!("off-grid rating {raw} for '{id}' snapped to {snapped}");
            *warnings += 1;
        }
        out.insert(id.trim().to_string(), snapped);
    }
    Ok(out)
}

pub fn similarity_features(
    analysis: &TargetAnalysis,
    item: &ItemMeta,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<Vec<String>> {
    let s = slots(&[
        ("features", analysis.features.join("|")),
        ("title", item.title.clone()),
        ("category", item.category.clone()),
    ]);
    let text = prompt_text(
        "List characteristics this item shares with the analyzed target item, if any.",
        &s,
        &["phrases"],
    );
    let answer = ask(llm, &Prompt::new(PromptOp::SimilarityFeatures, s, text), transcript)?;
    Ok(split_list(answer.get("phrases").map(String::as_str).unwrap_or("")))
}

pub fn draft_review(
    item: &ItemMeta,
    rating: f64,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<String> {
    let s = slots(&[("title", item.title.clone()), ("rating", format!("{rating}"))]);
    let text = prompt_text(
        "Write a short product review consistent with this rating.",
        &s,
        &["review"],
    );
    let answer = ask(llm, &Prompt::new(PromptOp::DraftReview, s, text), transcript)?;
    let review = answer.get("review").cloned().unwrap_or_default();
    if review.trim().is_empty() {
        return Err(CoreError::Provider("empty drafted review".into()));
    }
    Ok(review)
}

pub fn propagate_features(
    shared: &[String],
    draft: &str,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<String> {
    if draft.trim().is_empty() {
        return Err(CoreError::Invalid("cannot propagate into an empty draft".into()));
    }
    if shared.is_empty() {
        return Ok(draft.to_string());
    }
    let s = slots(&[("draft", draft.to_string()), ("shared", shared.join("|"))]);
    let text = prompt_text(
        "Rework the draft review so it also mentions the listed shared characteristics, keeping its sentiment.",
        &s,
        &["review"],
    );
    let answer = ask(llm, &Prompt::new(PromptOp::PropagateFeatures, s, text), transcript)?;
    let review = answer.get("review").cloned().unwrap_or_default();
    if review.trim().is_empty() {
        return Err(CoreError::Provider("empty propagated review".into()));
    }
    Ok(review)
}

pub fn interact_target(
    profile: &AgentProfile,
    target: &ItemMeta,
    direction: Direction,
    scale: RatingScale,
    with_review: bool,
    llm: &dyn LlmProvider,
    transcript: &mut Transcript,
) -> Result<(f64, Option<String>)> {
    if !profile.validated {
        return Err(CoreError::Invalid("unvalidated profile cannot interact".into()));
    }
    let rating = match direction {
        Direction::Push => scale.max,
        Direction::Nuke => scale.min,
    };
    if !with_review {
        return Ok((rating, None));
    }
    let s = slots(&[
        ("title", target.title.clone()),
        ("direction", direction.name().to_string()),
    ]);
    let text = prompt_text(
        "Write a strongly opinionated review of the target item matching the campaign direction.",
        &s,
        &["review"],
    );
    let answer = ask(llm, &Prompt::new(PromptOp::TargetReview, s, text), transcript)?;
    let review = answer.get("review").cloned().unwrap_or_default();
    if review.trim().is_empty() {
        return Err(CoreError::Provider("empty target review".into()));
    }
    Ok((rating, Some(review)))
}

#[derive(Debug)]
pub struct AttackOutput {
    pub profiles: Vec<InjectionProfile>,
    pub transcript: Transcript,
    pub warnings: u32,
}

fn generic_profile(analysis: &TargetAnalysis, direction: Direction) -> AgentProfile {
    let features = analysis.features.clone();
    let (interests, dislikes) = match direction {
        Direction::Push => (features, Vec::new()),
        Direction::Nuke => (features.clone(), features),
    };
    AgentProfile {
        demographics: "general shopper".to_string(),
        interests,
        dislikes,
        review_frequency: HabitFreq::Medium,
        rating_frequency: HabitFreq::Medium,
        validated: true,
    }
}

/// Full campaign: initialization (analyze, infer, validate, diversify),
/// one target interaction per agent, then the exposure rounds.
pub fn run_attack(
    cfg: &AttackRunConfig,
    catalog: &BTreeMap<String, ItemMeta>,
    scale: RatingScale,
    timestamp_range: (i64, i64),
    exposure: &dyn ExposureSource,
    llm: &dyn LlmProvider,
    embedder: &Embedder,
) -> Result<AttackOutput> {
    cfg.validate()?;
    let target = catalog
        .get(&cfg.target_item)
        .ok_or_else(|| CoreError::Invalid(format!("target {} not in catalog", cfg.target_item)))?;
    let mut transcript = Transcript::new();
    let mut warnings = 0u32;

    let analysis = analyze_target(target, llm, &mut transcript)?;
    let candidates: Vec<AgentProfile> = if cfg.ablation.profile_inference {
        (0..cfg.candidate_profile_count)
            .map(|c| {
                build_validated_profile(
                    &analysis,
                    target,
                    cfg.direction,
                    c as u32,
                    llm,
                    &mut transcript,
                )
            })
            .collect::<Result<_>>()?
    } else {
        vec![generic_profile(&analysis, cfg.direction); cfg.candidate_profile_count]
    };
    let chosen = if cfg.ablation.diversity {
        diversify_profiles(&candidates, cfg.num_agents, llm, &mut transcript)?
    } else {
        candidates[..cfg.num_agents].to_vec()
    };

    let k = if cfg.ablation.use_relevance { cfg.relevance_k } else { 0 };
    let m = if cfg.ablation.use_recency { cfg.recency_count } else { 0 };
    let mut profiles = Vec::with_capacity(cfg.num_agents);
    for (a, profile) in chosen.iter().enumerate() {
        let agent_index = a as u32;
        let fake_user_id = format!("fake_agent_{}_{:04}", cfg.seed, a);
        let agent_seed = cfg.seed ^ (a as u64 + 1).wrapping_mul(GOLDEN);
        let mut rng = ChaCha8Rng::seed_from_u64(agent_seed);
        let max_records = 1 + cfg.exposure_rounds as usize * HabitFreq::High.cap();
        let timestamps = uniform_timestamps(timestamp_range, max_records, &mut rng);
        let mut next_ts = timestamps.into_iter();
        let mut memory = AgentMemory::new(DEFAULT_MEMORY_CAPACITY);
        let mut interactions = Vec::new();
        let mut rated: BTreeSet<String> = BTreeSet::new();

        let (rating, review) = interact_target(
            profile,
            target,
            cfg.direction,
            scale,
            cfg.ablation.reviews,
            llm,
            &mut transcript,
        )?;
        let ts = next_ts.next().unwrap();
        memory.record_rating(target, rating, ts)?;
        if let Some(text) = &review {
            memory.record_review(target, text, ts)?;
        }
        interactions.push(ProfileInteraction {
            item_id: target.item_id.clone(),
            rating,
            review,
            timestamp: ts,
            role: Role::Target,
        });
        rated.insert(target.item_id.clone());

        for round in 0..cfg.exposure_rounds {
            let batch: Vec<ItemMeta> = exposure
                .expose(cfg.batch_size, cfg.seed, round)
                .into_iter()
                .filter(|item| !rated.contains(&item.item_id))
                .collect();
            if batch.is_empty() {
                continue;
            }
            let selected = select_filler(
                &batch,
                profile,
                agent_index,
                round,
                llm,
                &mut transcript,
                &mut warnings,
            )?;
            if selected.is_empty() {
                continue;
            }
            let retrieved = retrieve_hybrid(&memory, target, k, m, embedder);
            let ratings = generate_ratings(
                &selected,
                profile,
                &retrieved,
                scale,
                agent_index,
                round,
                llm,
                &mut transcript,
                &mut warnings,
            )?;
            let review_budget = profile.review_frequency.cap();
            let mut reviews_written = 0usize;
            for item in &selected {
                let Some(&item_rating) = ratings.get(&item.item_id) else {
                    log::warn!("provider skipped rating for '{}'", item.item_id);
                    warnings += 1;
                    continue;
                };
                let ts = next_ts.next().unwrap();
                let review = if cfg.ablation.reviews && reviews_written < review_budget {
                    let draft = draft_review(item, item_rating, llm, &mut transcript)?;
                    let shared = similarity_features(&analysis, item, llm, &mut transcript)?;
                    let final_review = if cfg.ablation.propagation {
                        propagate_features(&shared, &draft, llm, &mut transcript)?
                    } else {
                        draft
                    };
                    reviews_written += 1;
                    Some(final_review)
                } else {
                    None
                };
                memory.record_rating(item, item_rating, ts)?;
                if let Some(text) = &review {
                    memory.record_review(item, text, ts)?;
                }
                interactions.push(ProfileInteraction {
                    item_id: item.item_id.clone(),
                    rating: item_rating,
                    review,
                    timestamp: ts,
                    role: Role::Filler,
                });
                rated.insert(item.item_id.clone());
            }
        }
        profiles.push(InjectionProfile { fake_user_id, interactions });
    }
    Ok(AttackOutput { profiles, transcript, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::tokenize;

    fn item(id: &str, title: &str, category: &str) -> ItemMeta {
        ItemMeta {
            item_id: id.to_string(),
            title: title.to_string(),
            category: category.to_string(),
            popularity: 1,
        }
    }

    fn stub() -> StubProvider {
        StubProvider::new(7)
    }

    fn push_profile(interests: &[&str], dislikes: &[&str]) -> AgentProfile {
        AgentProfile {
            demographics: "test shopper".to_string(),
            interests: interests.iter().map(|s| s.to_string()).collect(),
            dislikes: dislikes.iter().map(|s| s.to_string()).collect(),
            review_frequency: HabitFreq::Medium,
            rating_frequency: HabitFreq::High,
            validated: true,
        }
    }

    fn replay(entries: &[(PromptOp, &str)]) -> ReplayProvider {
        let entries = entries
            .iter()
            .map(|(op, body)| TranscriptEntry {
                agent_index: None,
                round: None,
                op: op.tag().to_string(),
                prompt: String::new(),
                response: body.to_string(),
            })
            .collect();
        ReplayProvider::new(Transcript { entries })
    }

    #[test]
    fn analysis_features_come_from_title_and_category() {
        let mut t = Transcript::new();
        let analysis =
            analyze_target(&item("i1", "Gaming Display", "Electronics"), &stub(), &mut t).unwrap();
        for tok in ["gaming", "display", "electronics"] {
            assert!(analysis.features.iter().any(|f| f == tok), "missing {tok}");
        }
    }

    #[test]
    fn analysis_survives_empty_category() {
        let mut t = Transcript::new();
        let analysis = analyze_target(&item("i1", "Cast Iron Pan", ""), &stub(), &mut t).unwrap();
        assert!(!analysis.features.is_empty());
    }

    #[test]
    fn analysis_parses_recorded_live_fixture() {
        let provider = replay(&[(
            PromptOp::AnalyzeTarget,
            "Sure! Here is my analysis.\n---ANSWER---\nfeatures: immersive gameplay|high refresh rate|vivid colors\naudience: competitive players\n---END---\nHope that helps.",
        )]);
        let mut t = Transcript::new();
        let analysis =
            analyze_target(&item("i1", "Gaming Display", "Electronics"), &provider, &mut t)
                .unwrap();
        assert!(analysis.features.len() >= 3);
        assert_eq!(analysis.audience, "competitive players");
    }

    fn sample_analysis() -> TargetAnalysis {
        TargetAnalysis {
            item_id: "i1".to_string(),
            features: vec!["gaming".to_string(), "display".to_string()],
            audience: "gamers".to_string(),
        }
    }

    #[test]
    fn push_profile_interests_cover_features() {
        let mut t = Transcript::new();
        let p = infer_profile(&sample_analysis(), Direction::Push, 0, 0, &stub(), &mut t).unwrap();
        assert!(p.interests.iter().any(|i| i == "gaming"));
        assert!(!p.validated);
    }

    #[test]
    fn nuke_profile_dislikes_cover_features() {
        let mut t = Transcript::new();
        let p = infer_profile(&sample_analysis(), Direction::Nuke, 0, 0, &stub(), &mut t).unwrap();
        assert!(p.dislikes.iter().any(|d| d == "gaming"));
        assert!(!p.interests.is_empty());
    }

    #[test]
    fn habits_vary_across_agent_seeds() {
        let mut t = Transcript::new();
        let mut differing = 0;
        for trial in 0..20u32 {
            let a = infer_profile(&sample_analysis(), Direction::Push, trial, 0, &stub(), &mut t)
                .unwrap();
            let b =
                infer_profile(&sample_analysis(), Direction::Push, trial + 100, 0, &stub(), &mut t)
                    .unwrap();
            if (a.review_frequency, a.rating_frequency) != (b.review_frequency, b.rating_frequency)
            {
                differing += 1;
            }
        }
        assert!(differing >= 10, "only {differing}/20 pairs differed");
    }

    #[test]
    fn validation_accepts_matching_push_profile() {
        let mut t = Transcript::new();
        let p = push_profile(&["gaming", "display"], &[]);
        let ok = validate_profile(
            &p,
            &item("i1", "Gaming Display", "Electronics"),
            Direction::Push,
            &stub(),
            &mut t,
        )
        .unwrap();
        assert!(ok);
    }

    #[test]
    fn validation_rejects_disjoint_push_profile() {
        let mut t = Transcript::new();
        let p = push_profile(&["cooking"], &[]);
        let ok = validate_profile(
            &p,
            &item("i1", "Gaming Display", "Electronics"),
            Direction::Push,
            &stub(),
            &mut t,
        )
        .unwrap();
        assert!(!ok);
    }

    fn profile_response(interests: &str) -> String {
        format!(
            "---ANSWER---\ndemographics: someone\ninterests: {interests}\ndislikes: nothing much\nreview_frequency: medium\nrating_frequency: medium\n---END---"
        )
    }

    #[test]
    fn rejected_profile_is_regenerated() {
        let provider = replay(&[
            (PromptOp::InferProfile, &profile_response("unrelated hobby")),
            (PromptOp::ValidateProfile, "---ANSWER---\nanswer: no\n---END---"),
            (PromptOp::InferProfile, &profile_response("gaming|display")),
            (PromptOp::ValidateProfile, "---ANSWER---\nanswer: yes\n---END---"),
        ]);
        let mut t = Transcript::new();
        let p = build_validated_profile(
            &sample_analysis(),
            &item("i1", "Gaming Display", "Electronics"),
            Direction::Push,
            0,
            &provider,
            &mut t,
        )
        .unwrap();
        assert!(p.validated);
        assert!(p.interests.iter().any(|i| i == "gaming"));
        assert_eq!(t.entries.len(), 4);
    }

    #[test]
    fn three_rejections_fail_the_build() {
        let no = "---ANSWER---\nanswer: no\n---END---";
        let bad = profile_response("unrelated hobby");
        let provider = replay(&[
            (PromptOp::InferProfile, &bad),
            (PromptOp::ValidateProfile, no),
            (PromptOp::InferProfile, &bad),
            (PromptOp::ValidateProfile, no),
            (PromptOp::InferProfile, &bad),
            (PromptOp::ValidateProfile, no),
        ]);
        let mut t = Transcript::new();
        let err = build_validated_profile(
            &sample_analysis(),
            &item("i1", "Gaming Display", "Electronics"),
            Direction::Push,
            0,
            &provider,
            &mut t,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::ValidationFailed { attempts: 3, .. }));
    }

    #[test]
    fn diversify_whole_pool_is_identity() {
        let pool = vec![
            push_profile(&["gaming"], &[]),
            push_profile(&["reading"], &[]),
            push_profile(&["hiking"], &[]),
        ];
        let mut t = Transcript::new();
        let out = diversify_profiles(&pool, 3, &stub(), &mut t).unwrap();
        assert_eq!(out, pool);
    }

    #[test]
    fn diversify_prefers_distinct_texts() {
        // Two identical candidates and one different; the pair picked must
        // be the two distinct texts, per the greedy farthest-point rule.
        let pool = vec![
            push_profile(&["gaming", "display"], &[]),
            push_profile(&["gaming", "display"], &[]),
            push_profile(&["slow cooking", "gardening"], &[]),
        ];
        let mut t = Transcript::new();
        let out = diversify_profiles(&pool, 2, &stub(), &mut t).unwrap();
        assert_eq!(out[0], pool[0]);
        assert_eq!(out[1], pool[2]);
    }

    #[test]
    fn diversify_is_deterministic() {
        let pool = vec![
            push_profile(&["gaming"], &[]),
            push_profile(&["reading"], &[]),
            push_profile(&["hiking"], &[]),
            push_profile(&["fishing"], &[]),
        ];
        let mut t = Transcript::new();
        let a = diversify_profiles(&pool, 2, &stub(), &mut t).unwrap();
        let b = diversify_profiles(&pool, 2, &stub(), &mut t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn diversify_rejects_unvalidated_candidates() {
        let mut pool = vec![push_profile(&["gaming"], &[]), push_profile(&["reading"], &[])];
        pool[1].validated = false;
        let mut t = Transcript::new();
        assert!(diversify_profiles(&pool, 1, &stub(), &mut t).is_err());
    }

    #[test]
    fn memory_evicts_oldest_beyond_capacity() {
        let mut mem = AgentMemory::new(2);
        mem.record_rating(&item("a", "A", ""), 4.0, 1).unwrap();
        mem.record_rating(&item("b", "B", ""), 3.0, 2).unwrap();
        mem.record_rating(&item("c", "C", ""), 5.0, 3).unwrap();
        assert_eq!(mem.len(), 2);
        let ids: Vec<&str> = mem.records().iter().map(|r| r.item_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c"]);
    }

    #[test]
    fn rating_and_review_occupy_both_stores() {
        let mut mem = AgentMemory::new(10);
        let it = item("a", "A", "");
        mem.record_rating(&it, 4.0, 1).unwrap();
        mem.record_review(&it, "nice", 1).unwrap();
        assert_eq!(mem.ratings().count(), 1);
        assert_eq!(mem.reviews().count(), 1);
    }

    #[test]
    fn single_insert_into_empty_memory() {
        let mut mem = AgentMemory::new(10);
        assert!(mem.is_empty());
        mem.record_rating(&item("a", "A", ""), 4.0, 5).unwrap();
        assert_eq!(mem.len(), 1);
    }

    #[test]
    fn out_of_order_timestamp_is_rejected() {
        let mut mem = AgentMemory::new(10);
        mem.record_rating(&item("a", "A", ""), 4.0, 10).unwrap();
        let err = mem.record_rating(&item("b", "B", ""), 3.0, 5).unwrap_err();
        assert!(matches!(err, CoreError::OutOfOrderTimestamp { new: 5, last: 10 }));
    }

    fn retrieval_memory() -> AgentMemory {
        let mut mem = AgentMemory::new(100);
        mem.record_rating(&item("a", "wireless gaming mouse", ""), 5.0, 1).unwrap();
        mem.record_rating(&item("b", "mechanical keyboard", ""), 4.0, 2).unwrap();
        mem.record_rating(&item("c", "cast iron skillet", ""), 3.0, 3).unwrap();
        mem.record_rating(&item("d", "gaming headset stand", ""), 4.0, 4).unwrap();
        mem.record_rating(&item("e", "garden hose reel", ""), 2.0, 5).unwrap();
        mem
    }

    #[test]
    fn exact_title_match_ranks_first() {
        let mem = retrieval_memory();
        let emb = Embedder::new(64);
        let out = retrieve_relevant(&mem, &item("q", "cast iron skillet", ""), 2, &emb);
        assert_eq!(out[0].item_id, "c");
    }

    #[test]
    fn relevance_with_k_zero_is_empty() {
        let mem = retrieval_memory();
        let emb = Embedder::new(64);
        assert!(retrieve_relevant(&mem, &item("q", "anything", ""), 0, &emb).is_empty());
    }

    #[test]
    fn relevance_matches_brute_force_sort() {
        let mem = retrieval_memory();
        let emb = Embedder::new(64);
        let query = item("q", "gaming mouse pad", "");
        let qe = emb.embed(&query.title);
        let mut oracle: Vec<(f64, usize, String)> = mem
            .records()
            .iter()
            .map(|r| (cosine(&qe, &emb.embed(&r.title)).unwrap(), r.seq, r.item_id.clone()))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
        let got: Vec<String> =
            retrieve_relevant(&mem, &query, 2, &emb).into_iter().map(|r| r.item_id).collect();
        let want: Vec<String> = oracle.into_iter().take(2).map(|(_, _, id)| id).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn recency_picks_latest_timestamp() {
        let mut mem = AgentMemory::new(10);
        mem.record_rating(&item("a", "A", ""), 4.0, 1).unwrap();
        mem.record_rating(&item("b", "B", ""), 4.0, 5).unwrap();
        mem.record_rating(&item("c", "C", ""), 4.0, 5).unwrap();
        let out = retrieve_recent(&mem, 1);
        // Equal timestamps break toward the later insertion.
        assert_eq!(out[0].item_id, "c");
    }

    #[test]
    fn recency_with_large_m_returns_all() {
        let mem = retrieval_memory();
        assert_eq!(retrieve_recent(&mem, 50).len(), mem.len());
    }

    #[test]
    fn recency_matches_brute_force_sort() {
        let mut mem = AgentMemory::new(100);
        let ts = [4, 9, 1, 9, 2, 7, 3, 8, 8, 5];
        for i in 0..ts.len() {
            mem.record_rating(&item(&format!("i{i}"), "title", ""), 3.0, 0).unwrap();
        }
        // Overwrite timestamps out of band to build tie cases while
        // keeping insertion-order appends legal.
        for (i, t) in ts.iter().enumerate() {
            mem.records[i].timestamp = *t;
        }
        let mut oracle: Vec<(i64, usize, String)> =
            mem.records().iter().map(|r| (r.timestamp, r.seq, r.item_id.clone())).collect();
        oracle.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
        let got: Vec<String> = retrieve_recent(&mem, 4).into_iter().map(|r| r.item_id).collect();
        let want: Vec<String> = oracle.into_iter().take(4).map(|(_, _, id)| id).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn hybrid_union_of_disjoint_sets() {
        let mut mem = AgentMemory::new(100);
        mem.record_rating(&item("a", "alpha gadget", ""), 4.0, 1).unwrap();
        mem.record_rating(&item("b", "alpha gadget pro", ""), 4.0, 2).unwrap();
        mem.record_rating(&item("c", "zzz brick", ""), 2.0, 3).unwrap();
        mem.record_rating(&item("d", "zzz brick two", ""), 2.0, 4).unwrap();
        let emb = Embedder::new(64);
        let out = retrieve_hybrid(&mem, &item("q", "alpha gadget", ""), 2, 2, &emb);
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn hybrid_dedups_identical_sets() {
        let mut mem = AgentMemory::new(100);
        mem.record_rating(&item("a", "alpha gadget", ""), 4.0, 1).unwrap();
        mem.record_rating(&item("b", "alpha gadget pro", ""), 4.0, 2).unwrap();
        let emb = Embedder::new(64);
        let out = retrieve_hybrid(&mem, &item("q", "alpha gadget", ""), 2, 2, &emb);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn hybrid_single_overlap_counts_once() {
        let mut mem = AgentMemory::new(100);
        mem.record_rating(&item("a", "alpha gadget", ""), 4.0, 1).unwrap();
        mem.record_rating(&item("b", "alpha gadget", ""), 4.0, 2).unwrap();
        mem.record_rating(&item("c", "zzz brick", ""), 2.0, 3).unwrap();
        let emb = Embedder::new(64);
        // Relevant k=2 -> {b, a}; recent m=2 -> {c, b}; union is 3.
        let out = retrieve_hybrid(&mem, &item("q", "alpha gadget", ""), 2, 2, &emb);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn hybrid_is_monotone_in_k_and_m() {
        let mem = retrieval_memory();
        let emb = Embedder::new(64);
        let query = item("q", "gaming mouse", "");
        let key = |r: &MemoryRecord| (r.item_id.clone(), r.kind, r.timestamp);
        for k in 0..=5 {
            for m in 0..=5 {
                let big: BTreeSet<_> =
                    retrieve_hybrid(&mem, &query, k, m, &emb).iter().map(key).collect();
                for kp in 0..=k {
                    for mp in 0..=m {
                        let small = retrieve_hybrid(&mem, &query, kp, mp, &emb);
                        assert!(small.iter().map(key).all(|x| big.contains(&x)));
                    }
                }
            }
        }
    }

    fn filler_batch() -> Vec<ItemMeta> {
        vec![
            item("b1", "gaming chair", "Furniture"),
            item("b2", "desk lamp", "Furniture"),
            item("b3", "hdmi gaming capture card", "Electronics"),
            item("b4", "throw pillow", "Home"),
            item("b5", "coffee grinder", "Kitchen"),
            item("b6", "yoga mat", "Sports"),
        ]
    }

    #[test]
    fn filler_selection_keeps_interest_matches() {
        let mut t = Transcript::new();
        let mut warn = 0;
        let p = push_profile(&["gaming"], &[]);
        let out = select_filler(&filler_batch(), &p, 0, 0, &stub(), &mut t, &mut warn).unwrap();
        let ids: Vec<&str> = out.iter().map(|i| i.item_id.as_str()).collect();
        assert_eq!(ids, vec!["b1", "b3"]);
        assert_eq!(warn, 0);
    }

    #[test]
    fn filler_selection_empty_without_matches() {
        let mut t = Transcript::new();
        let mut warn = 0;
        let p = push_profile(&["astronomy"], &[]);
        let out = select_filler(&filler_batch(), &p, 0, 0, &stub(), &mut t, &mut warn).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn filler_selection_respects_habit_cap() {
        let mut t = Transcript::new();
        let mut warn = 0;
        let mut p = push_profile(&["gaming", "lamp", "pillow", "coffee", "yoga"], &[]);
        p.rating_frequency = HabitFreq::Low;
        let out = select_filler(&filler_batch(), &p, 0, 0, &stub(), &mut t, &mut warn).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn out_of_batch_selection_is_dropped_with_warning() {
        let provider =
            replay(&[(PromptOp::SelectFiller, "---ANSWER---\nselected: b1|ghost\n---END---")]);
        let mut t = Transcript::new();
        let mut warn = 0;
        let p = push_profile(&["gaming"], &[]);
        let out = select_filler(&filler_batch(), &p, 0, 0, &provider, &mut t, &mut warn).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].item_id, "b1");
        assert_eq!(warn, 1);
    }

    #[test]
    fn interest_match_rates_high_dislike_rates_low() {
        let mut t = Transcript::new();
        let mut warn = 0;
        let p = push_profile(&["gaming"], &["pillow"]);
        let items = vec![
            item("b1", "gaming chair", "Furniture"),
            item("b4", "throw pillow", "Home"),
            item("b5", "coffee grinder", "Kitchen"),
        ];
        let out = generate_ratings(
            &items,
            &p,
            &[],
            RatingScale::default(),
            0,
            0,
            &stub(),
            &mut t,
            &mut warn,
        )
        .unwrap();
        assert!(out["b1"] >= 4.0);
        assert!(out["b4"] <= 2.0);
        assert_eq!(out["b5"], 3.0);
    }

    #[test]
    fn neutral_ratings_concentrate_at_midpoint() {
        let mut t = Transcript::new();
        let mut warn = 0;
        let p = push_profile(&["astronomy"], &[]);
        let mut at_three = 0;
        for i in 0..1000 {
            let items = vec![item(&format!("n{i}"), "plain widget", "Misc")];
            let out = generate_ratings(
                &items,
                &p,
                &[],
                RatingScale::default(),
                0,
                i,
                &stub(),
                &mut t,
                &mut warn,
            )
            .unwrap();
            if out[&format!("n{i}")] == 3.0 {
                at_three += 1;
            }
        }
        assert!(at_three >= 900, "only {at_three}/1000 neutral ratings were 3");
    }

    #[test]
    fn off_grid_replay_rating_is_snapped_with_warning() {
        let provider =
            replay(&[(PromptOp::GenerateRatings, "---ANSWER---\nratings: b1=4.6\n---END---")]);
        let mut t = Transcript::new();
        let mut warn = 0;
        let p = push_profile(&["gaming"], &[]);
        let items = vec![item("b1", "gaming chair", "Furniture")];
        let out = generate_ratings(
            &items,
            &p,
            &[],
            RatingScale::default(),
            0,
            0,
            &provider,
            &mut t,
            &mut warn,
        )
        .unwrap();
        assert_eq!(out["b1"], 5.0);
        assert_eq!(warn, 1);
    }

    #[test]
    fn similarity_empty_for_disjoint_vocabulary() {
        let mut t = Transcript::new();
        let out =
            similarity_features(&sample_analysis(), &item("x", "garden trowel", "Garden"), &stub(), &mut t)
                .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn similarity_mentions_shared_token() {
        let mut t = Transcript::new();
        let out = similarity_features(
            &sample_analysis(),
            &item("x", "portable display hub", "Electronics"),
            &stub(),
            &mut t,
        )
        .unwrap();
        assert!(out.iter().any(|p| p.contains("display")), "{out:?}");
    }

    #[test]
    fn similarity_fixture_matches_worked_example_shape() {
        // Controller vs display case: two shared characteristics recorded
        // from a live session parse back into exactly two phrases.
        let provider = replay(&[(
            PromptOp::SimilarityFeatures,
            "---ANSWER---\nphrases: both are peripheral devices|both offer deep immersion\n---END---",
        )]);
        let mut t = Transcript::new();
        let out = similarity_features(
            &sample_analysis(),
            &item("x", "wireless game controller", "Electronics"),
            &provider,
            &mut t,
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert!(out[0].contains("peripheral devices"));
        assert!(out[1].contains("deep immersion"));
    }

    #[test]
    fn review_polarity_tracks_rating() {
        let mut t = Transcript::new();
        let it = item("x", "Gaming Display", "Electronics");
        let high = draft_review(&it, 5.0, &stub(), &mut t).unwrap();
        let low = draft_review(&it, 1.0, &stub(), &mut t).unwrap();
        assert!(high.contains("Excellent"));
        assert!(low.contains("Disappointed"));
        for tok in tokenize("Gaming Display") {
            assert!(high.to_lowercase().contains(&tok));
        }
    }

    #[test]
    fn propagation_with_empty_shared_is_identity() {
        let mut t = Transcript::new();
        let out = propagate_features(&[], "Solid product.", &stub(), &mut t).unwrap();
        assert_eq!(out, "Solid product.");
        assert!(t.entries.is_empty());
    }

    #[test]
    fn propagation_embeds_all_shared_phrases() {
        let mut t = Transcript::new();
        let shared = vec!["peripheral devices".to_string()];
        let out = propagate_features(&shared, "Great controller.", &stub(), &mut t).unwrap();
        assert!(out.contains("peripheral devices"));
    }

    #[test]
    fn propagation_keeps_sentiment_while_adding_phrases() {
        let mut t = Transcript::new();
        let it = item("x", "wireless game controller", "Electronics");
        let draft = draft_review(&it, 5.0, &stub(), &mut t).unwrap();
        let shared = vec![
            "both are peripheral devices".to_string(),
            "both offer deep immersion".to_string(),
        ];
        let out = propagate_features(&shared, &draft, &stub(), &mut t).unwrap();
        assert!(out.contains("Excellent"), "positive marker lost: {out}");
        assert!(out.contains("both are peripheral devices"));
        assert!(out.contains("both offer deep immersion"));
    }

    #[test]
    fn target_interaction_forces_extreme_ratings() {
        let mut t = Transcript::new();
        let p = push_profile(&["gaming"], &[]);
        let it = item("i1", "Gaming Display", "Electronics");
        let scale = RatingScale::default();
        let (push, review) =
            interact_target(&p, &it, Direction::Push, scale, true, &stub(), &mut t).unwrap();
        assert_eq!(push, 5.0);
        let review = review.unwrap();
        assert!(review.to_lowercase().contains("gaming"));
        let (nuke, _) =
            interact_target(&p, &it, Direction::Nuke, scale, true, &stub(), &mut t).unwrap();
        assert_eq!(nuke, 1.0);
    }

    #[test]
    fn unvalidated_profile_cannot_interact() {
        let mut t = Transcript::new();
        let mut p = push_profile(&["gaming"], &[]);
        p.validated = false;
        let it = item("i1", "Gaming Display", "Electronics");
        assert!(interact_target(&p, &it, Direction::Push, RatingScale::default(), true, &stub(), &mut t)
            .is_err());
    }

    fn test_catalog(n: usize) -> BTreeMap<String, ItemMeta> {
        let titles = [
            ("gaming monitor arm", "Electronics"),
            ("mechanical keyboard", "Electronics"),
            ("desk organizer tray", "Office"),
            ("stainless water bottle", "Outdoors"),
            ("graphic novel volume", "Books"),
        ];
        let mut catalog = BTreeMap::new();
        catalog.insert(
            "t0".to_string(),
            item("t0", "Gaming Display", "Electronics"),
        );
        for i in 0..n {
            let (title, cat) = titles[i % titles.len()];
            let id = format!("c{i:03}");
            let mut it = item(&id, &format!("{title} {i}"), cat);
            it.popularity = (i % 7) as u64;
            catalog.insert(id, it);
        }
        catalog
    }

    fn run(cfg: &AttackRunConfig, catalog: &BTreeMap<String, ItemMeta>) -> AttackOutput {
        let exposure = PopularityExposure { catalog };
        let embedder = Embedder::new(64);
        run_attack(
            cfg,
            catalog,
            RatingScale::default(),
            (1_000, 2_000_000),
            &exposure,
            &StubProvider::new(cfg.seed),
            &embedder,
        )
        .unwrap()
    }

    #[test]
    fn every_profile_has_exactly_one_target_record() {
        let catalog = test_catalog(20);
        let mut cfg = AttackRunConfig::new("t0", Direction::Push, 2, 11);
        cfg.exposure_rounds = 1;
        cfg.batch_size = 10;
        let out = run(&cfg, &catalog);
        assert_eq!(out.profiles.len(), 2);
        for p in &out.profiles {
            let targets: Vec<_> =
                p.interactions.iter().filter(|i| i.role == Role::Target).collect();
            assert_eq!(targets.len(), 1);
            assert_eq!(targets[0].item_id, "t0");
            assert_eq!(targets[0].rating, 5.0);
        }
    }

    #[test]
    fn empty_filler_selection_leaves_target_only() {
        // Catalog vocabulary disjoint from the target features, so the
        // stub never selects filler.
        let mut catalog = BTreeMap::new();
        catalog.insert("t0".to_string(), item("t0", "Gaming Display", "Monitors"));
        for i in 0..6 {
            catalog.insert(format!("z{i}"), item(&format!("z{i}"), "plain brick", "Masonry"));
        }
        let mut cfg = AttackRunConfig::new("t0", Direction::Push, 1, 3);
        cfg.exposure_rounds = 1;
        cfg.batch_size = 5;
        let out = run(&cfg, &catalog);
        assert_eq!(out.profiles[0].interactions.len(), 1);
    }

    #[test]
    fn filler_sets_differ_across_agents_with_distinct_profiles() {
        let catalog = test_catalog(50);
        let mut cfg = AttackRunConfig::new("t0", Direction::Push, 2, 11);
        cfg.exposure_rounds = 3;
        let out = run(&cfg, &catalog);
        let sets: Vec<BTreeSet<&str>> = out
            .profiles
            .iter()
            .map(|p| {
                p.interactions
                    .iter()
                    .filter(|i| i.role == Role::Filler)
                    .map(|i| i.item_id.as_str())
                    .collect()
            })
            .collect();
        assert_ne!(sets[0], sets[1]);
    }

    #[test]
    fn emitted_profiles_satisfy_baseline_invariants() {
        let catalog = test_catalog(50);
        let cfg = AttackRunConfig::new("t0", Direction::Push, 3, 5);
        let out = run(&cfg, &catalog);
        let scale = RatingScale::default();
        for p in &out.profiles {
            let mut seen = BTreeSet::new();
            for i in &p.interactions {
                assert!(seen.insert(&i.item_id), "duplicate item {}", i.item_id);
                assert!(scale.contains(i.rating));
                assert_eq!(i.rating, i.rating.round());
            }
            assert_eq!(p.interactions.iter().filter(|i| i.role == Role::Target).count(), 1);
        }
    }

    #[test]
    fn full_run_is_deterministic() {
        let catalog = test_catalog(30);
        let cfg = AttackRunConfig::new("t0", Direction::Push, 2, 42);
        let a = run(&cfg, &catalog);
        let b = run(&cfg, &catalog);
        assert_eq!(
            serde_json::to_string(&a.profiles).unwrap(),
            serde_json::to_string(&b.profiles).unwrap()
        );
    }

    #[test]
    fn nuke_run_flips_only_the_target_interaction() {
        let catalog = test_catalog(30);
        let cfg = AttackRunConfig::new("t0", Direction::Nuke, 1, 13);
        let out = run(&cfg, &catalog);
        let target = out.profiles[0]
            .interactions
            .iter()
            .find(|i| i.role == Role::Target)
            .unwrap();
        assert_eq!(target.rating, 1.0);
        assert!(target.review.as_ref().unwrap().contains("Avoid"));
    }

    #[test]
    fn config_validation_catches_bad_settings() {
        let mut cfg = AttackRunConfig::new("t0", Direction::Push, 4, 1);
        cfg.candidate_profile_count = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = AttackRunConfig::new("t0", Direction::Push, 2, 1);
        cfg.exposure_rounds = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = AttackRunConfig::new("t0", Direction::Push, 2, 1);
        cfg.relevance_k = 0;
        cfg.recency_count = 0;
        assert!(cfg.validate().is_err());
    }
}
