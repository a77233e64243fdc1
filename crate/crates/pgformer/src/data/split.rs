//! Dataset splits: `common` keeps every action label on both sides while
//! separating sequence identities; `unseen` holds out whole action labels.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SceneRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Same actions on both sides, different sequences.
    Common,
    /// Test actions never appear in training.
    Unseen,
}

impl SplitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "common" => Ok(Self::Common),
            "unseen" => Ok(Self::Unseen),
            other => Err(Error::Config(format!(
                "unknown split mode '{other}' (expected common or unseen)"
            ))),
        }
    }
}

/// Deterministically split sequences into (train, test) sets.
///
/// `test_ratio` is the approximate fraction of sequences (common) or action
/// labels (unseen) held out; at least one item always lands on each side
/// when possible.
pub fn split(
    sequences: Vec<SceneRecord>,
    mode: SplitMode,
    test_ratio: f64,
    seed: u64,
) -> Result<(Vec<SceneRecord>, Vec<SceneRecord>)> {
    if !(0.0..=1.0).contains(&test_ratio) {
        return Err(Error::Config(format!(
            "test_ratio must be in [0, 1], got {test_ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SplitMode::Common => {
            // Group sequence indices by label, split each group by identity.
            let mut labels: Vec<String> = Vec::new();
            for rec in &sequences {
                let label = rec.action.clone().unwrap_or_default();
                if !labels.contains(&label) {
                    labels.push(label);
                }
            }
            let mut train_idx = Vec::new();
            let mut test_idx = Vec::new();
            for label in labels {
                let mut idx: Vec<usize> = sequences
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.action.clone().unwrap_or_default() == label)
                    .map(|(i, _)| i)
                    .collect();
                idx.shuffle(&mut rng);
                let n_test = ((idx.len() as f64 * test_ratio).round() as usize)
                    .clamp(usize::from(idx.len() > 1), idx.len().saturating_sub(1));
                test_idx.extend_from_slice(&idx[..n_test]);
                train_idx.extend_from_slice(&idx[n_test..]);
            }
            Ok(partition(sequences, &train_idx, &test_idx))
        }
        SplitMode::Unseen => {
            let mut labels: Vec<String> = Vec::new();
            for rec in &sequences {
                match &rec.action {
                    None => {
                        return Err(Error::Config(
                            "unseen split requires an action label on every sequence".into(),
                        ))
                    }
                    Some(a) => {
                        if !labels.contains(a) {
                            labels.push(a.clone());
                        }
                    }
                }
            }
            labels.shuffle(&mut rng);
            let n_test = ((labels.len() as f64 * test_ratio).round() as usize)
                .clamp(usize::from(labels.len() > 1), labels.len().saturating_sub(1));
            let test_labels = &labels[..n_test];
            let mut train_idx = Vec::new();
            let mut test_idx = Vec::new();
            for (i, rec) in sequences.iter().enumerate() {
                if test_labels.contains(rec.action.as_ref().unwrap()) {
                    test_idx.push(i);
                } else {
                    train_idx.push(i);
                }
            }
            Ok(partition(sequences, &train_idx, &test_idx))
        }
    }
}

fn partition(
    sequences: Vec<SceneRecord>,
    train_idx: &[usize],
    test_idx: &[usize],
) -> (Vec<SceneRecord>, Vec<SceneRecord>) {
    let mut train = Vec::with_capacity(train_idx.len());
    let mut test = Vec::with_capacity(test_idx.len());
    for (i, rec) in sequences.into_iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(rec);
        } else if train_idx.contains(&i) {
            train.push(rec);
        }
    }
    (train, test)
}
