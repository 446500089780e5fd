//! Deterministic offline provider. Its semantics (token-overlap interests,
//! template reviews, greedy farthest-point diversification) are the
//! reference behavior the test suite checks against.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::provider::{render_fenced, LlmProvider, Prompt, PromptOp};
use crate::embedding::{cosine, fnv1a, tokenize, Embedder};
use crate::{CoreError, Result};

const EXTRA_INTERESTS: [&str; 4] =
    ["budget picks", "new releases", "premium gear", "classic staples"];
const FREQS: [&str; 3] = ["low", "medium", "high"];

pub struct StubProvider {
    seed: u64,
    embedder: Embedder,
}

impl StubProvider {
    pub fn new(seed: u64) -> StubProvider {
        StubProvider { seed, embedder: Embedder::new(crate::embedding::DEFAULT_DIM) }
    }

    fn rng_for(&self, prompt: &Prompt, extra: &str) -> ChaCha8Rng {
        let mut h = fnv1a(prompt.op.tag().as_bytes());
        h ^= fnv1a(extra.as_bytes()).rotate_left(17);
        if let Some(a) = prompt.agent_index {
            h ^= (a as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15);
        }
        if let Some(r) = prompt.round {
            h ^= ((r as u64 + 1) << 32).wrapping_mul(0x9E3779B97F4A7C15);
        }
        ChaCha8Rng::seed_from_u64(self.seed ^ h)
    }

    fn analyze_target(&self, prompt: &Prompt) -> String {
        let mut features = Vec::new();
        let mut seen = BTreeSet::new();
        for tok in tokenize(prompt.slot("title"))
            .into_iter()
            .chain(tokenize(prompt.slot("category")))
        {
            if seen.insert(tok.clone()) {
                features.push(tok);
            }
        }
        let audience = match features.first() {
            Some(f) => format!("shoppers who care about {f}"),
            None => "general shoppers".to_string(),
        };
        render_fenced(&[("features", features.join("|")), ("audience", audience)])
    }

    fn infer_profile(&self, prompt: &Prompt) -> String {
        let features: Vec<&str> =
            prompt.slot("features").split('|').filter(|s| !s.is_empty()).collect();
        let mut rng = self.rng_for(prompt, "");
        let extra = EXTRA_INTERESTS[rng.gen_range(0..EXTRA_INTERESTS.len())];
        let review_freq = FREQS[rng.gen_range(0..FREQS.len())];
        let rating_freq = FREQS[rng.gen_range(0..FREQS.len())];
        let mut liked: Vec<String> = features.iter().map(|s| s.to_string()).collect();
        liked.push(extra.to_string());
        let (interests, dislikes) = match prompt.slot("direction") {
            "nuke" => {
                let disliked: Vec<String> = features.iter().map(|s| s.to_string()).collect();
                (vec![extra.to_string(), "everyday essentials".to_string()], disliked)
            }
            _ => (liked, vec!["flimsy knockoffs".to_string()]),
        };
        let demographics = format!("adult shopper drawn to {extra}");
        render_fenced(&[
            ("demographics", demographics),
            ("interests", interests.join("|")),
            ("dislikes", dislikes.join("|")),
            ("review_frequency", review_freq.to_string()),
            ("rating_frequency", rating_freq.to_string()),
        ])
    }

    fn validate_profile(&self, prompt: &Prompt) -> String {
        let item_tokens: BTreeSet<String> = tokenize(prompt.slot("title"))
            .into_iter()
            .chain(tokenize(prompt.slot("category")))
            .collect();
        let side = if prompt.slot("direction") == "nuke" { "dislikes" } else { "interests" };
        let overlaps = tokenize(prompt.slot(side)).iter().any(|t| item_tokens.contains(t));
        render_fenced(&[("answer", if overlaps { "yes" } else { "no" }.to_string())])
    }

    fn diversify(&self, prompt: &Prompt) -> Result<String> {
        let count: usize = prompt
            .slot("count")
            .parse()
            .map_err(|_| CoreError::Provider("diversify prompt missing count".into()))?;
        let n: usize = prompt
            .slot("n")
            .parse()
            .map_err(|_| CoreError::Provider("diversify prompt missing n".into()))?;
        let embs: Vec<_> = (0..count)
            .map(|i| self.embedder.embed(prompt.slot(&format!("candidate_{i}"))))
            .collect();
        let mut chosen = vec![0usize];
        while chosen.len() < n.min(count) {
            let mut best = None;
            let mut best_dist = f64::NEG_INFINITY;
            for idx in 0..count {
                if chosen.contains(&idx) {
                    continue;
                }
                let min_dist = chosen
                    .iter()
                    .map(|&c| 1.0 - cosine(&embs[idx], &embs[c]).unwrap_or(0.0))
                    .fold(f64::INFINITY, f64::min);
                if min_dist > best_dist {
                    best_dist = min_dist;
                    best = Some(idx);
                }
            }
            chosen.push(best.unwrap());
        }
        chosen.sort_unstable();
        let list: Vec<String> = chosen.iter().map(|i| i.to_string()).collect();
        Ok(render_fenced(&[("selected", list.join("|"))]))
    }

    fn select_filler(&self, prompt: &Prompt) -> Result<String> {
        let count: usize = prompt
            .slot("count")
            .parse()
            .map_err(|_| CoreError::Provider("filler prompt missing count".into()))?;
        let interest_tokens: BTreeSet<String> =
            tokenize(prompt.slot("interests")).into_iter().collect();
        let cap = habit_cap(prompt.slot("rating_frequency"));
        let mut selected = Vec::new();
        for i in 0..count {
            if selected.len() >= cap {
                break;
            }
            let tokens: BTreeSet<String> = tokenize(prompt.slot(&format!("item_{i}_title")))
                .into_iter()
                .chain(tokenize(prompt.slot(&format!("item_{i}_category"))))
                .collect();
            if tokens.iter().any(|t| interest_tokens.contains(t)) {
                selected.push(prompt.slot(&format!("item_{i}_id")).to_string());
            }
        }
        Ok(render_fenced(&[("selected", selected.join("|"))]))
    }

    fn generate_ratings(&self, prompt: &Prompt) -> Result<String> {
        let count: usize = prompt
            .slot("count")
            .parse()
            .map_err(|_| CoreError::Provider("rating prompt missing count".into()))?;
        let interest_tokens: BTreeSet<String> =
            tokenize(prompt.slot("interests")).into_iter().collect();
        let dislike_tokens: BTreeSet<String> =
            tokenize(prompt.slot("dislikes")).into_iter().collect();
        let mut pairs = Vec::new();
        for i in 0..count {
            let id = prompt.slot(&format!("item_{i}_id")).to_string();
            let tokens: BTreeSet<String> = tokenize(prompt.slot(&format!("item_{i}_title")))
                .into_iter()
                .chain(tokenize(prompt.slot(&format!("item_{i}_category"))))
                .collect();
            let mut rng = self.rng_for(prompt, &id);
            let rating = if tokens.iter().any(|t| dislike_tokens.contains(t)) {
                rng.gen_range(1..=2)
            } else if tokens.iter().any(|t| interest_tokens.contains(t)) {
                rng.gen_range(4..=5)
            } else {
                3
            };
            pairs.push(format!("{id}={rating}"));
        }
        Ok(render_fenced(&[("ratings", pairs.join("|"))]))
    }

    fn similarity_features(&self, prompt: &Prompt) -> String {
        let item_tokens: BTreeSet<String> = tokenize(prompt.slot("title"))
            .into_iter()
            .chain(tokenize(prompt.slot("category")))
            .collect();
        let mut phrases = Vec::new();
        let mut seen = BTreeSet::new();
        for tok in tokenize(prompt.slot("features")) {
            if item_tokens.contains(&tok) && seen.insert(tok.clone()) {
                phrases.push(format!("both feature {tok}"));
            }
        }
        render_fenced(&[("phrases", phrases.join("|"))])
    }

    fn draft_review(&self, prompt: &Prompt) -> String {
        let title = prompt.slot("title");
        let rating: f64 = prompt.slot("rating").parse().unwrap_or(3.0);
        let review = if rating >= 4.0 {
            format!("Really impressed with the {title}. Excellent quality, easy to recommend.")
        } else if rating <= 2.0 {
            format!("Disappointed with the {title}. Poor quality, hard to recommend.")
        } else {
            format!("The {title} is okay. It does the job without standing out.")
        };
        render_fenced(&[("review", review)])
    }

    fn propagate(&self, prompt: &Prompt) -> String {
        let draft = prompt.slot("draft");
        let shared: Vec<&str> =
            prompt.slot("shared").split('|').filter(|s| !s.is_empty()).collect();
        let review = if shared.is_empty() {
            draft.to_string()
        } else {
            format!("{draft} Worth noting: {}.", shared.join(", and "))
        };
        render_fenced(&[("review", review)])
    }

    fn target_review(&self, prompt: &Prompt) -> String {
        let title = prompt.slot("title");
        let review = if prompt.slot("direction") == "nuke" {
            format!("Avoid the {title}. Disappointed from the first use, poor value.")
        } else {
            format!("Absolutely love the {title}. Excellent in every way, a must buy.")
        };
        render_fenced(&[("review", review)])
    }
}

pub fn habit_cap(freq: &str) -> usize {
    match freq {
        "low" => 1,
        "high" => 5,
        _ => 3,
    }
}

impl LlmProvider for StubProvider {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        match prompt.op {
            PromptOp::AnalyzeTarget => Ok(self.analyze_target(prompt)),
            PromptOp::InferProfile => Ok(self.infer_profile(prompt)),
            PromptOp::ValidateProfile => Ok(self.validate_profile(prompt)),
            PromptOp::DiversifyProfiles => self.diversify(prompt),
            PromptOp::SelectFiller => self.select_filler(prompt),
            PromptOp::GenerateRatings => self.generate_ratings(prompt),
            PromptOp::SimilarityFeatures => Ok(self.similarity_features(prompt)),
            PromptOp::DraftReview => Ok(self.draft_review(prompt)),
            PromptOp::PropagateFeatures => Ok(self.propagate(prompt)),
            PromptOp::TargetReview => Ok(self.target_review(prompt)),
        }
    }

    fn name(&self) -> &str {
        "stub"
    }
}
