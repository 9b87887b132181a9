use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Tokenizer, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub question: Vec<TokenId>,
    pub candidates: Vec<Vec<TokenId>>,
    pub gt_index: usize,
    /// Dense relevance in `[0, 1]`, one entry per candidate.
    pub relevance: Option<Vec<f64>>,
}

impl Round {
    pub fn gt_answer(&self) -> &[TokenId] {
        &self.candidates[self.gt_index]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dialog {
    pub dialog_id: u64,
    pub image_id: u64,
    pub caption: Vec<TokenId>,
    pub rounds: Vec<Round>,
}

impl Dialog {
    /// Caption followed by every earlier question and its ground-truth answer.
    pub fn history_concat(&self, round: usize) -> Vec<TokenId> {
        let mut out = self.caption.clone();
        for r in &self.rounds[..round] {
            out.extend_from_slice(&r.question);
            out.extend_from_slice(r.gt_answer());
        }
        out
    }

    /// One memory per history entry: the caption, then each earlier
    /// question joined with its ground-truth answer.
    pub fn history_rounds(&self, round: usize) -> Vec<Vec<TokenId>> {
        std::iter::once(self.caption.clone())
            .chain(self.rounds[..round].iter().map(|r| {
                let mut qa = r.question.clone();
                qa.extend_from_slice(r.gt_answer());
                qa
            }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_cand: usize,
    pub n_rounds: usize,
    pub dialogs: Vec<Dialog>,
}

impl Dataset {
    pub fn num_rounds(&self) -> usize {
        self.dialogs.len() * self.n_rounds
    }

    /// Text form, detokenized by joining tokens with single spaces.
    pub fn to_raw(&self, vocab: &Vocabulary) -> RawDataset {
        let text = |ids: &[TokenId]| {
            ids.iter()
                .map(|&i| vocab.token(i).unwrap_or(crate::vocab::UNK_TOKEN))
                .collect::<Vec<_>>()
                .join(" ")
        };
        RawDataset {
            version: DATASET_VERSION,
            n_cand: self.n_cand,
            n_rounds: self.n_rounds,
            dialogs: self
                .dialogs
                .iter()
                .map(|d| RawDialog {
                    dialog_id: d.dialog_id,
                    image_id: d.image_id,
                    caption: text(&d.caption),
                    rounds: d
                        .rounds
                        .iter()
                        .map(|r| RawRound {
                            question: text(&r.question),
                            candidates: r.candidates.iter().map(|c| text(c)).collect(),
                            gt_index: r.gt_index,
                            relevance: r.relevance.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub version: u32,
    pub n_cand: usize,
    pub n_rounds: usize,
    pub dialogs: Vec<RawDialog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDialog {
    pub dialog_id: u64,
    pub image_id: u64,
    pub caption: String,
    pub rounds: Vec<RawRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRound {
    pub question: String,
    pub candidates: Vec<String>,
    pub gt_index: usize,
    pub relevance: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct Envelope {
    version: u32,
    n_cand: usize,
    n_rounds: usize,
    dialogs: Vec<serde_json::Value>,
}

impl RawDataset {
    /// Parses and structurally validates a dataset document. Dialog records
    /// are parsed one at a time so a malformed record is reported by id.
    pub fn parse(text: &str) -> Result<Self> {
        let env: Envelope =
            serde_json::from_str(text).map_err(|e| Error::DatasetParse(format!("header ({e})")))?;
        if env.version != DATASET_VERSION {
            return Err(Error::DatasetParse(format!("header (version {})", env.version)));
        }
        if env.n_cand < 2 || env.n_rounds < 1 {
            return Err(Error::DatasetParse("header (n_cand >= 2 and n_rounds >= 1 required)".into()));
        }
        let mut dialogs = Vec::with_capacity(env.dialogs.len());
        let mut seen = HashSet::new();
        for (i, value) in env.dialogs.into_iter().enumerate() {
            let record_id = value
                .get("dialog_id")
                .and_then(|v| v.as_u64())
                .map(|id| id.to_string())
                .unwrap_or_else(|| format!("#{i}"));
            let d: RawDialog =
                serde_json::from_value(value).map_err(|_| Error::DatasetParse(record_id.clone()))?;
            if !seen.insert(d.dialog_id) {
                return Err(Error::DatasetParse(record_id));
            }
            validate(&d, env.n_cand, env.n_rounds)?;
            dialogs.push(d);
        }
        Ok(RawDataset {
            version: env.version,
            n_cand: env.n_cand,
            n_rounds: env.n_rounds,
            dialogs,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    /// Every tokenized text field, for vocabulary construction.
    pub fn token_sequences(&self, tokenizer: &Tokenizer) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for d in &self.dialogs {
            out.push(tokenizer.tokenize(&d.caption));
            for r in &d.rounds {
                out.push(tokenizer.tokenize(&r.question));
                out.extend(r.candidates.iter().map(|c| tokenizer.tokenize(c)));
            }
        }
        out
    }

    pub fn encode(&self, vocab: &Vocabulary, tokenizer: &Tokenizer) -> Dataset {
        let ids = |s: &str| vocab.encode(&tokenizer.tokenize(s));
        Dataset {
            n_cand: self.n_cand,
            n_rounds: self.n_rounds,
            dialogs: self
                .dialogs
                .iter()
                .map(|d| Dialog {
                    dialog_id: d.dialog_id,
                    image_id: d.image_id,
                    caption: ids(&d.caption),
                    rounds: d
                        .rounds
                        .iter()
                        .map(|r| Round {
                            question: ids(&r.question),
                            candidates: r.candidates.iter().map(|c| ids(c)).collect(),
                            gt_index: r.gt_index,
                            relevance: r.relevance.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn validate(d: &RawDialog, n_cand: usize, n_rounds: usize) -> Result<()> {
    let id = d.dialog_id;
    if d.rounds.len() != n_rounds {
        return Err(Error::DatasetParse(id.to_string()));
    }
    for (t, r) in d.rounds.iter().enumerate() {
        if r.candidates.len() != n_cand {
            return Err(Error::CandidateCount(format!(
                "dialog {id} round {}: {} candidates, expected {n_cand}",
                t + 1,
                r.candidates.len()
            )));
        }
        if r.gt_index >= n_cand {
            return Err(Error::CandidateCount(format!(
                "dialog {id} round {}: gt_index {} out of range for {n_cand} candidates",
                t + 1,
                r.gt_index
            )));
        }
        if let Some(rel) = &r.relevance {
            if rel.len() != n_cand {
                return Err(Error::CandidateCount(format!(
                    "dialog {id} round {}: {} relevance entries, expected {n_cand}",
                    t + 1,
                    rel.len()
                )));
            }
            if rel.iter().any(|v| !(0.0..=1.0).contains(v)) || rel[r.gt_index] <= 0.0 {
                return Err(Error::DatasetParse(id.to_string()));
            }
        }
    }
    Ok(())
}

/// Reads a dataset file and maps all text through the default tokenizer and
/// `vocab` (out-of-vocabulary tokens become UNK).
pub fn load_dialogs(path: &Path, vocab: &Vocabulary) -> Result<Dataset> {
    let raw = RawDataset::load(path)?;
    Ok(raw.encode(vocab, &Tokenizer::new(&crate::vocab::RemapTable::default_table())))
}
