//! Stored suggestions and the feedback attached to them.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use ticketrag::generation::ResolutionSuggestion;
use ticketrag::retrieval::{EvidenceBundle, FeedbackStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Edit,
    Reject,
    Upvote,
}

impl Verdict {
    /// Whether the verdict counts as an accept for ranking and metrics.
    pub fn is_positive(self) -> bool {
        !matches!(self, Verdict::Reject)
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "accept" => Ok(Verdict::Accept),
            "edit" => Ok(Verdict::Edit),
            "reject" => Ok(Verdict::Reject),
            "upvote" => Ok(Verdict::Upvote),
            _ => Err(format!("unknown verdict {s:?} (expected accept, edit, reject or upvote)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub suggestion_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub edited_steps: Option<Vec<String>>,
    pub actor: String,
    pub created_at: DateTime<Utc>,
}

impl FeedbackEvent {
    /// Checks the shape of the event. On failure returns the offending field
    /// and a message.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.suggestion_id.trim().is_empty() {
            return Err(("suggestion_id", "must not be empty".into()));
        }
        if self.actor.trim().is_empty() {
            return Err(("actor", "must not be empty".into()));
        }
        let has_steps = self.edited_steps.as_ref().is_some_and(|s| !s.is_empty());
        match (self.verdict, has_steps) {
            (Verdict::Edit, false) => Err(("edited_steps", "required and non-empty for an edit".into())),
            (v, true) if v != Verdict::Edit => Err(("edited_steps", "only allowed with an edit".into())),
            _ => Ok(()),
        }
    }
}

/// A retrieved hit as recorded with a suggestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRef {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub suggestion: ResolutionSuggestion,
    pub query_text: String,
    pub bundle: Vec<HitRef>,
    #[serde(default)]
    pub feedback: Vec<FeedbackEvent>,
}

impl SuggestionRecord {
    pub fn new(suggestion: ResolutionSuggestion, bundle: &EvidenceBundle) -> Self {
        SuggestionRecord {
            suggestion,
            query_text: bundle.query.text.clone(),
            bundle: bundle
                .hits
                .iter()
                .map(|h| HitRef { chunk_id: h.chunk_id.clone(), score: h.final_score })
                .collect(),
            feedback: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.suggestion.suggestion_id
    }
}

/// Per-chunk accept and reject counts. Every feedback event on a suggestion
/// is attributed to each evidence chunk the suggestion links to; accept,
/// upvote and edit count as accepts.
pub fn feedback_stats<'a>(records: impl IntoIterator<Item = &'a SuggestionRecord>) -> FeedbackStats {
    let mut stats = FeedbackStats::new();
    for r in records {
        for ev in &r.feedback {
            for link in &r.suggestion.evidence_links {
                let entry = stats.entry(link.chunk_id.clone()).or_default();
                if ev.verdict.is_positive() {
                    entry.accepts += 1;
                } else {
                    entry.rejects += 1;
                }
            }
        }
    }
    stats
}
