//! Identity-disjoint train/dev/test protocol split.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Manifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSplit {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub train_identities: BTreeSet<String>,
    pub dev_identities: BTreeSet<String>,
    pub test_identities: BTreeSet<String>,
}

/// Partition identities 60/20/20 (dev and test get `floor(n/5)`, at least
/// one each; the remainder goes to train). Every video follows its identity.
pub fn split_protocol(manifest: &Manifest, seed: u64) -> Result<ProtocolSplit> {
    if manifest.is_empty() {
        return Err(Error::EmptyInput("manifest"));
    }
    let mut ids = manifest.identities();
    ids.sort();
    let n = ids.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("need at least 3 identities, got {n}")));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = (n / 5).max(1);
    let n_test = (n / 5).max(1);
    let n_train = n - n_dev - n_test;
    let train_identities: BTreeSet<String> = ids[..n_train].iter().cloned().collect();
    let dev_identities: BTreeSet<String> = ids[n_train..n_train + n_dev].iter().cloned().collect();
    let test_identities: BTreeSet<String> = ids[n_train + n_dev..].iter().cloned().collect();

    let videos = |set: &BTreeSet<String>| {
        manifest.entries.iter().filter(|e| set.contains(&e.identity)).map(|e| e.video_id.clone()).collect()
    };
    Ok(ProtocolSplit {
        train: videos(&train_identities),
        dev: videos(&dev_identities),
        test: videos(&test_identities),
        train_identities,
        dev_identities,
        test_identities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{plan_manifest, SynthConfig};
    use crate::dataset::Category;

    fn manifest(n: usize) -> Manifest {
        plan_manifest(&SynthConfig { n_identities: n, attack_replicas: 1, ..SynthConfig::default() }).unwrap()
    }

    #[test]
    fn ten_identities_split_six_two_two() {
        let s = split_protocol(&manifest(10), 1).unwrap();
        assert_eq!((s.train_identities.len(), s.dev_identities.len(), s.test_identities.len()), (6, 2, 2));
    }

    #[test]
    fn three_identities_one_each() {
        let s = split_protocol(&manifest(3), 1).unwrap();
        assert_eq!((s.train_identities.len(), s.dev_identities.len(), s.test_identities.len()), (1, 1, 1));
    }

    #[test]
    fn disjoint_and_complete_over_many_seeds() {
        let m = manifest(12);
        for seed in 0..100 {
            let s = split_protocol(&m, seed).unwrap();
            assert!(s.train_identities.is_disjoint(&s.dev_identities));
            assert!(s.train_identities.is_disjoint(&s.test_identities));
            assert!(s.dev_identities.is_disjoint(&s.test_identities));
            assert_eq!(s.train.len() + s.dev.len() + s.test.len(), m.len());
            for part in [&s.train, &s.dev, &s.test] {
                for c in Category::ALL {
                    assert!(m.entries.iter().any(|e| e.category == c && part.contains(&e.video_id)));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_partition() {
        let m = manifest(20);
        assert_eq!(split_protocol(&m, 5).unwrap(), split_protocol(&m, 5).unwrap());
        assert!(split_protocol(&Manifest::default(), 0).is_err());
    }
}
