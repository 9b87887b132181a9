use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dialog::Dialog;

/// A (dialog, round) pair, by position in the dialog list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoundRef {
    pub dialog: usize,
    pub round: usize,
}

/// One epoch of batches: every (dialog, round) pair exactly once, in an
/// order fixed by `shuffle_seed`. The last batch may be short.
pub fn batch_iter(
    dialogs: &[Dialog],
    batch_size: usize,
    shuffle_seed: u64,
) -> impl Iterator<Item = Vec<RoundRef>> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut refs: Vec<RoundRef> = dialogs
        .iter()
        .enumerate()
        .flat_map(|(dialog, d)| (0..d.rounds.len()).map(move |round| RoundRef { dialog, round }))
        .collect();
    refs.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let batches: Vec<Vec<RoundRef>> = refs.chunks(batch_size).map(<[RoundRef]>::to_vec).collect();
    batches.into_iter()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dialog::Round;

    fn dialogs(n: usize, rounds: usize) -> Vec<Dialog> {
        (0..n)
            .map(|i| Dialog {
                dialog_id: i as u64,
                image_id: i as u64,
                caption: vec![2],
                rounds: vec![
                    Round {
                        question: vec![2],
                        candidates: vec![vec![2], vec![3]],
                        gt_index: 0,
                        relevance: None,
                    };
                    rounds
                ],
            })
            .collect()
    }

    #[test]
    fn batch_sizes() {
        let d = dialogs(3, 10);
        let sizes: Vec<usize> = batch_iter(&d, 7, 1).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![7, 7, 7, 7, 2]);
    }

    #[test]
    fn seeded_partition() {
        let d = dialogs(3, 10);
        let a: Vec<_> = batch_iter(&d, 7, 5).collect();
        let b: Vec<_> = batch_iter(&d, 7, 5).collect();
        assert_eq!(a, b);
        let c: Vec<_> = batch_iter(&d, 7, 6).collect();
        assert_ne!(a, c);

        let mut all: Vec<RoundRef> = a.into_iter().flatten().collect();
        all.sort();
        let expected: Vec<RoundRef> = (0..3)
            .flat_map(|dialog| (0..10).map(move |round| RoundRef { dialog, round }))
            .collect();
        assert_eq!(all, expected);
    }
}
