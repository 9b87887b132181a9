//! Per-round log-probability files: JSON lines
//! `{"dialog_id":..,"round":..,"log_probs":[..]}` sorted by
//! `(dialog_id, round)`, rounds numbered from 1, values stored as f32.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundPrediction {
    pub dialog_id: u64,
    pub round: u32,
    pub log_probs: Vec<f64>,
}

impl RoundPrediction {
    pub fn key(&self) -> (u64, u32) {
        (self.dialog_id, self.round)
    }
}

#[derive(Serialize)]
struct Line {
    dialog_id: u64,
    round: u32,
    log_probs: Vec<f32>,
}

/// Sorted, duplicate-free set of round predictions. Values are held at f32
/// precision so that writing and re-reading is lossless.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    rounds: Vec<RoundPrediction>,
}

impl PredictionSet {
    pub fn from_rounds(mut rounds: Vec<RoundPrediction>) -> Result<Self> {
        for r in &mut rounds {
            r.log_probs.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        }
        rounds.sort_by_key(RoundPrediction::key);
        if let Some(w) = rounds.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(Error::PredictionMismatch {
                dialog: w[0].dialog_id,
                round: w[0].round,
            });
        }
        Ok(PredictionSet { rounds })
    }

    pub fn rounds(&self) -> &[RoundPrediction] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn get(&self, dialog_id: u64, round: u32) -> Option<&[f64]> {
        self.rounds
            .binary_search_by_key(&(dialog_id, round), RoundPrediction::key)
            .ok()
            .map(|i| self.rounds[i].log_probs.as_slice())
    }

    /// Every vector must exponentiate to a sum within `tol` of 1.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for r in &self.rounds {
            let s: f64 = r.log_probs.iter().map(|v| v.exp()).sum();
            if !((s - 1.0).abs() <= tol) {
                return Err(Error::EnsembleUnnormalized {
                    dialog: r.dialog_id,
                    round: r.round,
                });
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.rounds {
            let line = Line {
                dialog_id: r.dialog_id,
                round: r.round,
                log_probs: r.log_probs.iter().map(|&v| v as f32).collect(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    /// SHA-256 of the serialized file.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut rounds = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let p: RoundPrediction =
                serde_json::from_str(&line).map_err(|_| Error::PredictionParse { line: i + 1 })?;
            if p.round == 0 || p.log_probs.iter().any(|v| !v.is_finite()) {
                return Err(Error::PredictionParse { line: i + 1 });
            }
            rounds.push(p);
        }
        Self::from_rounds(rounds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(d: u64, r: u32, lp: Vec<f64>) -> RoundPrediction {
        RoundPrediction { dialog_id: d, round: r, log_probs: lp }
    }

    #[test]
    fn sorted_and_round_trips() {
        let set = PredictionSet::from_rounds(vec![
            pred(2, 1, vec![-0.1, -2.3]),
            pred(1, 2, vec![(0.3f64).ln(), (0.7f64).ln()]),
            pred(1, 1, vec![-0.5, -0.9]),
        ])
        .unwrap();
        let keys: Vec<_> = set.rounds().iter().map(|r| r.key()).collect();
        assert_eq!(keys, vec![(1, 1), (1, 2), (2, 1)]);
        let bytes = set.to_bytes();
        let back = PredictionSet::read(&bytes[..]).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.to_bytes(), bytes);
        assert!(String::from_utf8(bytes).unwrap().starts_with("{\"dialog_id\":1,\"round\":1,\"log_probs\":[-0.5,-0.9]}\n"));
    }

    #[test]
    fn duplicates_and_bad_lines() {
        let err = PredictionSet::from_rounds(vec![pred(3, 2, vec![0.0]), pred(3, 2, vec![0.0])]).unwrap_err();
        assert_eq!(err.to_string(), "prediction-mismatch:3:2");
        let text = "{\"dialog_id\":1,\"round\":1,\"log_probs\":[0.0]}\nnot json\n";
        assert!(matches!(PredictionSet::read(text.as_bytes()), Err(Error::PredictionParse { line: 2 })));
    }

    #[test]
    fn normalization_check() {
        let ok = PredictionSet::from_rounds(vec![pred(1, 1, vec![(0.25f64).ln(), (0.75f64).ln()])]).unwrap();
        ok.check_normalized(1e-6).unwrap();
        let bad = PredictionSet::from_rounds(vec![pred(1, 1, vec![0.0, 0.0])]).unwrap();
        assert!(matches!(bad.check_normalized(1e-4), Err(Error::EnsembleUnnormalized { dialog: 1, round: 1 })));
    }
}
