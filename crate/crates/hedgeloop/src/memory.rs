//! Episodic memory: an append-only buffer of state-action-outcome tuples
//! with exact cosine top-k retrieval and delayed outcome back-fill.
//!
//! An episode becomes retrievable only after its outcome horizon has
//! elapsed and the realized return / drawdown over that window have been
//! filled in from the equity curve, so retrieval on day t can only surface
//! information that was fully realized strictly before t.

use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::controller::{AllocationDecision, SleeveWeights};
use crate::error::{Error, Result};
use crate::market::FEATURE_DIM;
use crate::metrics::EquityCurve;

pub type Embedding = [f64; FEATURE_DIM];

pub const DEFAULT_RETRIEVAL_K: usize = 5;
pub const DEFAULT_RETRIEVAL_STRENGTH: f64 = 0.25;
pub const DEFAULT_HORIZON_DAYS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Compounded portfolio return over the horizon window, fraction.
    pub realized_return: f64,
    /// Maximum drawdown within the horizon window, fraction.
    pub realized_max_drawdown: f64,
}

/// Serialized field order is the export file's documented record layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: u64,
    pub date: NaiveDate,
    pub embedding: Embedding,
    pub action: AllocationDecision,
    pub horizon_days: usize,
    pub outcome: Option<EpisodeOutcome>,
}

/// A not-yet-stored episode; the buffer assigns the id.
#[derive(Debug, Clone)]
pub struct EpisodeDraft {
    pub date: NaiveDate,
    pub embedding: Embedding,
    pub action: AllocationDecision,
    pub horizon_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    episodes: Vec<Episode>,
    next_id: u64,
    pub retrieval_k: usize,
    pub retrieval_strength: f64,
}

impl Default for MemoryBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_RETRIEVAL_K, DEFAULT_RETRIEVAL_STRENGTH)
    }
}

/// dot(a, b) / (|a| |b|); 0 if either vector is zero.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..FEATURE_DIM {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

impl MemoryBuffer {
    pub fn new(retrieval_k: usize, retrieval_strength: f64) -> Self {
        Self { episodes: Vec::new(), next_id: 0, retrieval_k, retrieval_strength }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn completed_count(&self) -> usize {
        self.episodes.iter().filter(|e| e.outcome.is_some()).count()
    }

    /// Appends the draft and back-fills every stored episode whose horizon
    /// has elapsed on `curve`. Returns the assigned id.
    pub fn store_and_backfill(
        &mut self,
        draft: EpisodeDraft,
        today: NaiveDate,
        curve: &EquityCurve,
    ) -> Result<u64> {
        if draft.horizon_days == 0 {
            return Err(Error::Config("episode horizon must be positive".into()));
        }
        if draft.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Internal("episode embedding has non-finite entries".into()));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.episodes.push(Episode {
            id,
            date: draft.date,
            embedding: draft.embedding,
            action: draft.action,
            horizon_days: draft.horizon_days,
            outcome: None,
        });
        self.backfill(today, curve)?;
        Ok(id)
    }

    /// Completes outcomes for episodes whose horizon window lies fully
    /// inside `curve`. Episodes whose start date is absent from the curve
    /// (for example, stored against a window the curve no longer covers)
    /// stay pending and therefore unretrievable.
    pub fn backfill(&mut self, _today: NaiveDate, curve: &EquityCurve) -> Result<()> {
        for episode in &mut self.episodes {
            if episode.outcome.is_some() {
                continue;
            }
            let Some(start) = curve.index_of(episode.date) else {
                continue;
            };
            let end = start + episode.horizon_days;
            if end >= curve.len() {
                continue;
            }
            let window = &curve.points()[start..=end];
            let v0 = window[0].1;
            let mut peak = v0;
            let mut max_dd = 0.0f64;
            for (_, v) in window {
                peak = peak.max(*v);
                max_dd = max_dd.max(1.0 - v / peak);
            }
            let outcome =
                EpisodeOutcome { realized_return: window[episode.horizon_days].1 / v0 - 1.0, realized_max_drawdown: max_dd };
            set_outcome(episode, outcome)?;
        }
        Ok(())
    }

    /// The `min(k, completed)` completed episodes most similar to `query`,
    /// sorted by similarity descending, ties to the lower (older) id.
    pub fn retrieve_top_k(&self, query: &Embedding) -> Vec<(&Episode, f64)> {
        let mut scored: Vec<(&Episode, f64)> = self
            .episodes
            .iter()
            .filter(|e| e.outcome.is_some())
            .map(|e| (e, cosine_similarity(&e.embedding, query)))
            .collect();
        scored.sort_by(|(ea, sa), (eb, sb)| {
            sb.partial_cmp(sa).expect("similarities are finite").then(ea.id.cmp(&eb.id))
        });
        scored.truncate(self.retrieval_k);
        scored
    }

    /// One episode per line, fields in [`Episode`] declaration order.
    pub fn export_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for episode in &self.episodes {
            serde_json::to_writer(&mut writer, episode)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Inverse of [`Self::export_jsonl`]. Requires strictly increasing ids.
    pub fn import_jsonl(&mut self, reader: impl Read) -> Result<usize> {
        let mut count = 0;
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(Error::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let episode: Episode = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("bad episode record: {e}"),
            })?;
            if episode.id < self.next_id {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("episode id {} not increasing (next expected >= {})", episode.id, self.next_id),
                });
            }
            self.next_id = episode.id + 1;
            self.episodes.push(episode);
            count += 1;
        }
        Ok(count)
    }
}

/// Outcomes are written exactly once; a second write is a logic error.
fn set_outcome(episode: &mut Episode, outcome: EpisodeOutcome) -> Result<()> {
    if episode.outcome.is_some() {
        return Err(Error::Internal(format!("episode {} already has an outcome", episode.id)));
    }
    episode.outcome = Some(outcome);
    Ok(())
}

/// Retrieval-weighted score of a candidate weight vector:
///
/// sum over retrieved of
///   similarity * realized_return * (1 - L1(candidate, episode weights)/2)
/// minus `lambda * L1(candidate, previous)`.
///
/// The alignment factor lies in [0, 1]; the lambda term is the turnover
/// penalty between consecutive decisions.
pub fn score_episodes(
    retrieved: &[(&Episode, f64)],
    candidate: &SleeveWeights,
    previous: &SleeveWeights,
    lambda: f64,
) -> f64 {
    let mut score = 0.0;
    for (episode, similarity) in retrieved {
        let Some(outcome) = &episode.outcome else {
            debug_assert!(false, "retrieved episode {} has no outcome", episode.id);
            continue;
        };
        let alignment = 1.0 - 0.5 * candidate.l1_distance(&episode.action.weights);
        score += similarity * outcome.realized_return * alignment;
    }
    score - lambda * candidate.l1_distance(previous)
}
