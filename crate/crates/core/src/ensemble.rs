//! Combining prediction sets from several models, round by round.

use serde::{Deserialize, Serialize};

use crate::diffcore::log_softmax;
use crate::error::{Error, Result};
use crate::predictions::{PredictionSet, RoundPrediction};

/// Inputs must be log-normalized to this tolerance.
pub const INPUT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Arithmetic mean of log-probabilities.
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(CombineMode::Mean),
            "max" => Ok(CombineMode::Max),
            other => Err(Error::Config(format!("unknown ensemble mode {other:?}"))),
        }
    }
}

fn check_aligned(a: &PredictionSet, b: &PredictionSet) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::EnsembleMisalign(format!("{} rounds vs {}", a.len(), b.len())));
    }
    for (x, y) in a.rounds().iter().zip(b.rounds()) {
        if x.key() != y.key() {
            return Err(Error::EnsembleMisalign(format!(
                "dialog {} round {} vs dialog {} round {}",
                x.dialog_id, x.round, y.dialog_id, y.round
            )));
        }
        if x.log_probs.len() != y.log_probs.len() {
            return Err(Error::EnsembleMisalign(format!(
                "dialog {} round {}: {} vs {} candidates",
                x.dialog_id,
                x.round,
                x.log_probs.len(),
                y.log_probs.len()
            )));
        }
    }
    Ok(())
}

/// Per round and candidate, the mean or max over inputs, then
/// re-normalized with a log-softmax. Inputs are reduced in order of their
/// file digest, so the result does not depend on the order given.
pub fn combine(inputs: &[PredictionSet], mode: CombineMode) -> Result<PredictionSet> {
    let first = inputs.first().ok_or(Error::NoInputs)?;
    for p in inputs {
        p.check_normalized(INPUT_NORM_TOL)?;
        check_aligned(first, p)?;
    }
    let mut ordered: Vec<(_, &PredictionSet)> = inputs.iter().map(|p| (p.digest(), p)).collect();
    ordered.sort_by_key(|a| a.0);

    let m = ordered.len() as f64;
    let rounds = (0..first.len())
        .map(|i| {
            let head = &ordered[0].1.rounds()[i];
            let mut acc = head.log_probs.clone();
            for (_, p) in &ordered[1..] {
                for (a, &v) in acc.iter_mut().zip(&p.rounds()[i].log_probs) {
                    match mode {
                        CombineMode::Mean => *a += v,
                        CombineMode::Max => *a = a.max(v),
                    }
                }
            }
            if mode == CombineMode::Mean {
                acc.iter_mut().for_each(|a| *a /= m);
            }
            Ok(RoundPrediction {
                dialog_id: head.dialog_id,
                round: head.round,
                log_probs: log_softmax(&acc)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::from_rounds(rounds)
}
