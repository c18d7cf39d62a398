//! Author-stratified, seeded train/validation split.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::VideoRecord;
use crate::error::{Error, Result};
use crate::runtime::{derive_seed, tag};

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<VideoRecord>,
    pub val: Vec<VideoRecord>,
    pub seed: u64,
    pub ratio: f64,
    /// One entry per singleton author routed entirely to train.
    pub warnings: Vec<String>,
}

/// Within each author: sort by video_id, shuffle with a per-author derived
/// RNG, then take floor(ratio·n) records for train and the rest for val.
/// Authors with a single record go to train (a one-record validation set
/// makes PLCC undefined).
pub fn split(records: &[VideoRecord], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::usage(format!("split ratio must be in (0,1), got {ratio}")));
    }
    if let Some(r) = records.iter().find(|r| !r.is_labeled()) {
        return Err(Error::usage(format!(
            "split requires labeled records; '{}' has no targets",
            r.video_id
        )));
    }

    let mut by_author: BTreeMap<&str, Vec<&VideoRecord>> = BTreeMap::new();
    for r in records {
        by_author.entry(&r.author_id).or_default().push(r);
    }

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut warnings = Vec::new();
    for (author, mut group) in by_author {
        group.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        if group.len() == 1 {
            warnings.push(format!(
                "author '{author}' has a single record; assigned to train"
            ));
            train.push(group[0].clone());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag(author)]));
        group.shuffle(&mut rng);
        let n_train = ((ratio * group.len() as f64).floor() as usize).max(1);
        for (i, r) in group.into_iter().enumerate() {
            if i < n_train {
                train.push(r.clone());
            } else {
                val.push(r.clone());
            }
        }
    }

    Ok(DatasetSplit {
        train,
        val,
        seed,
        ratio,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rec;

    fn ids(v: &[VideoRecord]) -> Vec<String> {
        let mut ids: Vec<String> = v.iter().map(|r| r.video_id.clone()).collect();
        ids.sort();
        ids
    }

    #[test]
    fn single_author_80_20() {
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("v{i}"), "a", true)).collect();
        let s = split(&recs, 0.8, 7).unwrap();
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.val.len(), 2);
    }

    #[test]
    fn deterministic_and_partition() {
        let recs: Vec<_> = (0..40)
            .map(|i| rec(&format!("v{i}"), &format!("a{}", i % 4), true))
            .collect();
        let s1 = split(&recs, 0.8, 11).unwrap();
        let s2 = split(&recs, 0.8, 11).unwrap();
        assert_eq!(ids(&s1.train), ids(&s2.train));
        assert_eq!(ids(&s1.val), ids(&s2.val));
        let mut all = ids(&s1.train);
        all.extend(ids(&s1.val));
        all.sort();
        assert_eq!(all, ids(&recs));
    }

    #[test]
    fn fifteen_authors_twenty_each() {
        let recs: Vec<_> = (0..300)
            .map(|i| rec(&format!("v{i:03}"), &format!("a{}", i % 15), true))
            .collect();
        let s = split(&recs, 0.8, 42).unwrap();
        assert_eq!(s.train.len(), 240);
        assert_eq!(s.val.len(), 60);
        for a in 0..15 {
            let author = format!("a{a}");
            assert_eq!(s.train.iter().filter(|r| r.author_id == author).count(), 16);
            assert_eq!(s.val.iter().filter(|r| r.author_id == author).count(), 4);
        }
    }

    #[test]
    fn singleton_author_goes_to_train_with_warning() {
        let mut recs: Vec<_> = (0..4).map(|i| rec(&format!("v{i}"), "big", true)).collect();
        recs.push(rec("solo", "tiny", true));
        let s = split(&recs, 0.8, 5).unwrap();
        assert!(s.train.iter().any(|r| r.video_id == "solo"));
        assert!(!s.val.iter().any(|r| r.video_id == "solo"));
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn order_independence() {
        let recs: Vec<_> = (0..30)
            .map(|i| rec(&format!("v{i:02}"), &format!("a{}", i % 3), true))
            .collect();
        let mut reversed = recs.clone();
        reversed.reverse();
        let s1 = split(&recs, 0.8, 9).unwrap();
        let s2 = split(&reversed, 0.8, 9).unwrap();
        assert_eq!(ids(&s1.train), ids(&s2.train));
    }

    #[test]
    fn rejects_unlabeled_and_bad_ratio() {
        let mut r = rec("v0", "a", true);
        r.targets = None;
        assert!(split(&[r], 0.8, 1).is_err());
        assert!(split(&[rec("v0", "a", true)], 1.0, 1).is_err());
    }
}
