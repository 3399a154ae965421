//! Dataset assembly: per-case seeds derived as `base_seed + index`, a
//! train/test split manifest (floor of the train fraction goes to
//! train, remainder to test, in generation order).

use serde::{Deserialize, Serialize};

use crate::config::PhantomConfig;
use crate::error::PhantomError;
use crate::generate::{generate_case, Case};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "test")]
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub train_fraction: f64,
    pub base_seed: u64,
    pub cases: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn ids_for(&self, split: Split) -> Vec<&str> {
        self.cases
            .iter()
            .filter(|c| c.split == split)
            .map(|c| c.id.as_str())
            .collect()
    }
}

/// Generate `n_cases` cases plus the split manifest.
pub fn make_dataset(
    n_cases: usize,
    base_seed: u64,
    config: &PhantomConfig,
    train_fraction: f64,
) -> Result<(Vec<Case>, Manifest), PhantomError> {
    if n_cases < 2 {
        return Err(PhantomError::InvalidConfig(
            "need at least 2 cases for a split".into(),
        ));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(PhantomError::InvalidConfig(
            "train_fraction must lie in [0, 1]".into(),
        ));
    }
    config.validate()?;

    let results: Vec<Result<Case, PhantomError>> = mfs_core::par::map_indexed(n_cases, |i| {
        let mut cfg = *config;
        cfg.seed = base_seed + i as u64;
        generate_case(&cfg)
    });
    let mut cases = Vec::with_capacity(n_cases);
    for r in results {
        cases.push(r?);
    }

    let n_train = (n_cases as f64 * train_fraction).floor() as usize;
    let entries = cases
        .iter()
        .enumerate()
        .map(|(i, c)| ManifestEntry {
            id: c.id.clone(),
            split: if i < n_train { Split::Train } else { Split::Test },
            seed: base_seed + i as u64,
        })
        .collect();
    Ok((
        cases,
        Manifest {
            train_fraction,
            base_seed,
            cases: entries,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_floors_train_count() {
        let (cases, manifest) = make_dataset(10, 50, &PhantomConfig::with_seed(0), 0.75).unwrap();
        assert_eq!(cases.len(), 10);
        assert_eq!(manifest.ids_for(Split::Train).len(), 7);
        assert_eq!(manifest.ids_for(Split::Test).len(), 3);
    }

    #[test]
    fn same_base_seed_same_manifest_and_distinct_case_seeds() {
        let (_, m1) = make_dataset(4, 9, &PhantomConfig::with_seed(0), 0.5).unwrap();
        let (_, m2) = make_dataset(4, 9, &PhantomConfig::with_seed(0), 0.5).unwrap();
        assert_eq!(m1, m2);
        let mut seeds: Vec<u64> = m1.cases.iter().map(|c| c.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 4);
        let mut ids: Vec<&str> = m1.cases.iter().map(|c| c.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn too_few_cases_rejected() {
        assert!(make_dataset(1, 0, &PhantomConfig::with_seed(0), 0.5).is_err());
    }
}
