//! Retrieval metrics over candidate rankings: rank of the ground truth,
//! MRR, recall@k, mean rank and NDCG with dense relevance.
//!
//! Candidates are ordered by descending score with ties broken by ascending
//! candidate index.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::predictions::PredictionSet;

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

fn by_score_desc(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Candidate indices from best to worst.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(by_score_desc(scores));
    idx
}

/// `1 + #{better} + #{tied with lower index}`.
pub fn rank_of_gt(scores: &[f64], gt_index: usize) -> Result<usize> {
    let gt = *scores.get(gt_index).ok_or(Error::GtIndex)?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| s > gt || (s == gt && i < gt_index))
        .count();
    Ok(1 + ahead)
}

fn non_empty(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        Err(Error::NoRounds)
    } else {
        Ok(())
    }
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    non_empty(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    non_empty(ranks)?;
    if k == 0 {
        return Err(Error::Config("recall@k needs k >= 1".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

pub fn mean_rank(ranks: &[usize]) -> Result<f64> {
    non_empty(ranks)?;
    Ok(ranks.iter().map(|&r| r as f64).sum::<f64>() / ranks.len() as f64)
}

/// NDCG truncated at the number of candidates with positive relevance.
pub fn ndcg(scores: &[f64], relevance: &[f64]) -> Result<f64> {
    if scores.len() != relevance.len() {
        return Err(Error::shape(format!(
            "ndcg: {} scores, {} relevance values",
            scores.len(),
            relevance.len()
        )));
    }
    let k = relevance.iter().filter(|&&r| r > 0.0).count();
    if k == 0 {
        return Err(Error::NoRelevant);
    }
    let discount = |p: usize| 1.0 / ((p + 2) as f64).log2();
    let dcg: f64 = ranking(scores)
        .iter()
        .take(k)
        .enumerate()
        .map(|(p, &i)| relevance[i] * discount(p))
        .sum();
    let mut ideal = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(p, &r)| r * discount(p)).sum();
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallAt {
    #[serde(rename = "1")]
    pub r1: f64,
    #[serde(rename = "5")]
    pub r5: f64,
    #[serde(rename = "10")]
    pub r10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    /// Absent when no round carries relevance annotations.
    pub ndcg: Option<f64>,
    pub mrr: f64,
    pub recall_at: RecallAt,
    pub mean_rank: f64,
    pub n_rounds_scored: usize,
    pub n_ndcg_rounds: usize,
}

impl RankingReport {
    pub fn from_ranks(ranks: &[usize], ndcgs: &[f64]) -> Result<Self> {
        Ok(RankingReport {
            ndcg: (!ndcgs.is_empty()).then(|| ndcgs.iter().sum::<f64>() / ndcgs.len() as f64),
            mrr: mrr(ranks)?,
            recall_at: RecallAt {
                r1: recall_at_k(ranks, 1)?,
                r5: recall_at_k(ranks, 5)?,
                r10: recall_at_k(ranks, 10)?,
            },
            mean_rank: mean_rank(ranks)?,
            n_rounds_scored: ranks.len(),
            n_ndcg_rounds: ndcgs.len(),
        })
    }
}

/// Scores every dataset round against `predictions`, which must contain
/// each `(dialog_id, round)` exactly once and nothing else.
pub fn evaluate(predictions: &PredictionSet, dataset: &Dataset) -> Result<RankingReport> {
    let mut ranks = Vec::with_capacity(dataset.num_rounds());
    let mut ndcgs = Vec::new();
    for d in &dataset.dialogs {
        for (t, r) in d.rounds.iter().enumerate() {
            let round = t as u32 + 1;
            let mismatch = Error::PredictionMismatch {
                dialog: d.dialog_id,
                round,
            };
            let scores = predictions.get(d.dialog_id, round).ok_or(mismatch)?;
            if scores.len() != r.candidates.len() {
                return Err(Error::PredictionMismatch {
                    dialog: d.dialog_id,
                    round,
                });
            }
            ranks.push(rank_of_gt(scores, r.gt_index)?);
            if let Some(rel) = &r.relevance {
                ndcgs.push(ndcg(scores, rel)?);
            }
        }
    }
    if predictions.len() != ranks.len() {
        let extra = predictions
            .rounds()
            .iter()
            .find(|p| {
                !dataset
                    .dialogs
                    .iter()
                    .any(|d| d.dialog_id == p.dialog_id && (1..=d.rounds.len() as u32).contains(&p.round))
            })
            .expect("more predictions than matched rounds");
        return Err(Error::PredictionMismatch {
            dialog: extra.dialog_id,
            round: extra.round,
        });
    }
    RankingReport::from_ranks(&ranks, &ndcgs)
}

/// Text table with NDCG and MRR scaled by 100 next to their raw values,
/// recall in percent and mean rank raw.
pub fn render_table(rows: &[(String, RankingReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8} {:>8} {:>6} {:>6} {:>6} {:>6}  {:>8} {:>8}",
        "Model", "NDCGx100", "MRRx100", "R@1", "R@5", "R@10", "Mean", "NDCG", "MRR"
    );
    for (name, r) in rows {
        let ndcg100 = r.ndcg.map_or("-".to_string(), |v| format!("{:.2}", v * 100.0));
        let ndcg_raw = r.ndcg.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:<width$}  {:>8} {:>8.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2}  {:>8} {:>8.4}",
            name,
            ndcg100,
            r.mrr * 100.0,
            r.recall_at.r1 * 100.0,
            r.recall_at.r5 * 100.0,
            r.recall_at.r10 * 100.0,
            r.mean_rank,
            ndcg_raw,
            r.mrr
        );
    }
    out
}
