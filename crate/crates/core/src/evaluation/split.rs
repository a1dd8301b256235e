use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::labels::{Label, Sex};
use crate::rng::{seed_from_str, stream_rng};

pub const DEFAULT_RATIOS: [f64; 3] = [0.64, 0.16, 0.20];

const SPLIT_STREAM: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

/// The attributes a split stratifies on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StratumKey {
    pub label: Label,
    pub sex: Sex,
    pub corpus_id: String,
}

impl StratumKey {
    fn tag(&self) -> String {
        format!("{}|{}|{}", self.label, self.sex, self.corpus_id)
    }
}

/// Minimal per-recording description a split needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitItem {
    pub recording_id: String,
    pub stratum: StratumKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub split_seed: u64,
    pub assignments: BTreeMap<String, Partition>,
}

impl SplitAssignment {
    pub fn partition(&self, recording_id: &str) -> Option<Partition> {
        self.assignments.get(recording_id).copied()
    }

    pub fn members(&self, partition: Partition) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, p)| **p == partition)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, partition: Partition) -> usize {
        self.members(partition).count()
    }
}

fn check_ratios(ratios: &[f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Argument(format!("negative split ratio in {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split ratios {ratios:?} sum to {sum}, not 1")));
    }
    Ok(())
}

/// Splits recordings into train/validation/test within every (label, sex,
/// corpus) stratum. Each stratum is shuffled with a stream derived from the
/// seed and the stratum, then cut at largest-remainder counts, so leftover
/// recordings go to the partition with the largest fractional share and
/// ties favour train.
pub fn stratified_split(items: &[SplitItem], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    check_ratios(&ratios)?;
    let mut strata: BTreeMap<&StratumKey, Vec<&str>> = BTreeMap::new();
    for item in items {
        strata.entry(&item.stratum).or_default().push(&item.recording_id);
    }
    let mut assignments = BTreeMap::new();
    for (key, mut ids) in strata {
        ids.sort_unstable();
        let before = ids.len();
        ids.dedup();
        if ids.len() != before {
            return Err(Error::Argument(format!("duplicate recording ids in stratum {}", key.tag())));
        }
        ids.shuffle(&mut stream_rng(seed_from_str(seed, &key.tag()), SPLIT_STREAM));
        let counts = largest_remainder(ids.len(), &ratios)?;
        let mut rest = ids.as_slice();
        for (partition, count) in Partition::ALL.into_iter().zip(counts) {
            let (take, tail) = rest.split_at(count);
            for id in take {
                assignments.insert(id.to_string(), partition);
            }
            rest = tail;
        }
    }
    if assignments.len() != items.len() {
        return Err(Error::Argument("duplicate recording ids across strata".into()));
    }
    Ok(SplitAssignment {
        split_seed: seed,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn items(counts: &[(Label, Sex, &str, usize)]) -> Vec<SplitItem> {
        let mut out = Vec::new();
        for (label, sex, corpus, n) in counts {
            for i in 0..*n {
                out.push(SplitItem {
                    recording_id: format!("{label}-{sex}-{corpus}-{i}"),
                    stratum: StratumKey {
                        label: *label,
                        sex: *sex,
                        corpus_id: corpus.to_string(),
                    },
                });
            }
        }
        out
    }

    #[test]
    fn stratum_of_25() {
        let split = stratified_split(&items(&[(Label::CN, Sex::F, "a", 25)]), DEFAULT_RATIOS, 1).unwrap();
        assert_eq!(
            Partition::ALL.map(|p| split.count(p)),
            [16, 4, 5]
        );
    }

    #[test]
    fn singleton_goes_to_train() {
        let split = stratified_split(&items(&[(Label::MCI, Sex::M, "b", 1)]), DEFAULT_RATIOS, 9).unwrap();
        assert_eq!(split.partition("MCI-M-b-0"), Some(Partition::Train));
    }

    #[test]
    fn deterministic_per_seed() {
        let data = items(&[(Label::CN, Sex::F, "a", 30), (Label::ADRD, Sex::M, "b", 17)]);
        let a = stratified_split(&data, DEFAULT_RATIOS, 4).unwrap();
        assert_eq!(a, stratified_split(&data, DEFAULT_RATIOS, 4).unwrap());
        assert_ne!(a, stratified_split(&data, DEFAULT_RATIOS, 5).unwrap());
    }

    #[test]
    fn ratios_must_sum_to_one() {
        let data = items(&[(Label::CN, Sex::F, "a", 3)]);
        assert!(matches!(stratified_split(&data, [0.6, 0.2, 0.3], 0), Err(Error::Argument(_))));
        assert!(stratified_split(&data, [1.2, -0.2, 0.0], 0).is_err());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut data = items(&[(Label::CN, Sex::F, "a", 3)]);
        data.push(data[0].clone());
        assert!(stratified_split(&data, DEFAULT_RATIOS, 0).is_err());
    }

    proptest! {
        #[test]
        fn proportions_hold_per_stratum(
            sizes in prop::collection::vec(1usize..80, 1..6),
            seed in any::<u64>(),
        ) {
            let spec: Vec<(Label, Sex, &str, usize)> = sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| (Label::ALL[i % 3], if i % 2 == 0 { Sex::F } else { Sex::M }, ["x", "y"][i / 3 % 2], n))
                .collect();
            let data = items(&spec);
            let split = stratified_split(&data, DEFAULT_RATIOS, seed).unwrap();
            prop_assert_eq!(split.assignments.len(), data.len());
            for (label, sex, corpus, n) in &spec {
                let prefix = format!("{label}-{sex}-{corpus}-");
                for (k, part) in Partition::ALL.iter().enumerate() {
                    let got = split.members(*part).filter(|id| id.starts_with(&prefix)).count() as f64;
                    prop_assert!((got - DEFAULT_RATIOS[k] * *n as f64).abs() <= 1.0);
                }
            }
        }
    }
}
