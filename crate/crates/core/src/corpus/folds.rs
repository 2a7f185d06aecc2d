use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, Manifest, Setting};
use crate::error::{Error, Result};
use crate::seed::{rng_for, STREAM_FOLD_PLAN};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// Normal-pool samples only.
    pub train_ids: Vec<String>,
    pub test_normal_ids: Vec<String>,
    pub test_anomaly_ids: Vec<String>,
}

/// Train/test membership of every fold for one setting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub setting: Setting,
    pub folds: Vec<Fold>,
}

fn class_code(label: ClassLabel) -> u64 {
    match label {
        ClassLabel::Healthy => 1,
        ClassLabel::Pneumonia => 2,
        ClassLabel::Covid => 3,
    }
}

/// Shuffles one class with its own seeded stream and cuts it into `k`
/// contiguous parts whose sizes differ by at most one.
fn partition(manifest: &Manifest, label: ClassLabel, k: usize, seed: u64) -> Vec<Vec<String>> {
    let mut ids: Vec<String> = manifest
        .entries()
        .iter()
        .filter(|e| e.label == label)
        .map(|e| e.sample_id.clone())
        .collect();
    ids.shuffle(&mut rng_for(seed, &[STREAM_FOLD_PLAN, class_code(label)]));
    let n = ids.len();
    (0..k).map(|j| ids[j * n / k..(j + 1) * n / k].to_vec()).collect()
}

/// Stratified k-fold plan: every normal-pool class and the COVID class are
/// each split into `k` disjoint parts; fold `j` tests part `j` of every class
/// and trains on the other parts of the normal classes.
pub fn make_fold_plan(manifest: &Manifest, setting: Setting, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut classes: Vec<ClassLabel> = setting.normal_labels().to_vec();
    classes.push(ClassLabel::Covid);
    for &label in &classes {
        let count = manifest.count(label);
        if count < k {
            return Err(Error::ClassTooSmall {
                class: label.to_string(),
                count,
                k,
            });
        }
    }
    let normal_parts: Vec<Vec<Vec<String>>> = setting
        .normal_labels()
        .iter()
        .map(|&l| partition(manifest, l, k, seed))
        .collect();
    let anomaly_parts = partition(manifest, ClassLabel::Covid, k, seed);

    let folds = (0..k)
        .map(|j| {
            let mut train_ids = Vec::new();
            let mut test_normal_ids = Vec::new();
            for parts in &normal_parts {
                for (p, part) in parts.iter().enumerate() {
                    if p == j {
                        test_normal_ids.extend(part.iter().cloned());
                    } else {
                        train_ids.extend(part.iter().cloned());
                    }
                }
            }
            Fold {
                index: j,
                train_ids,
                test_normal_ids,
                test_anomaly_ids: anomaly_parts[j].clone(),
            }
        })
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        setting,
        folds,
    })
}

impl FoldPlan {
    /// Checks every structural guarantee of the plan against `manifest` and
    /// returns the violations found (empty when the plan is sound).
    pub fn audit(&self, manifest: &Manifest) -> Vec<String> {
        let labels: HashMap<&str, ClassLabel> = manifest
            .entries()
            .iter()
            .map(|e| (e.sample_id.as_str(), e.label))
            .collect();
        let mut problems = Vec::new();
        if self.folds.len() != self.k {
            problems.push(format!("plan has {} folds, expected {}", self.folds.len(), self.k));
        }
        let mut tested_normal: HashMap<&str, usize> = HashMap::new();
        let mut tested_anomaly: HashMap<&str, usize> = HashMap::new();
        for fold in &self.folds {
            let train: HashSet<&str> = fold.train_ids.iter().map(String::as_str).collect();
            for id in &fold.train_ids {
                match labels.get(id.as_str()) {
                    None => problems.push(format!("fold {}: unknown train id {id}", fold.index)),
                    Some(l) if !self.setting.is_normal(*l) => {
                        problems.push(format!("fold {}: {l} sample {id} in training set", fold.index))
                    }
                    _ => {}
                }
            }
            for id in &fold.test_normal_ids {
                if train.contains(id.as_str()) {
                    problems.push(format!("fold {}: {id} both trained on and tested", fold.index));
                }
                match labels.get(id.as_str()) {
                    Some(l) if self.setting.is_normal(*l) => {}
                    _ => problems.push(format!("fold {}: {id} is not a normal-pool sample", fold.index)),
                }
                *tested_normal.entry(id).or_default() += 1;
            }
            for id in &fold.test_anomaly_ids {
                if labels.get(id.as_str()) != Some(&ClassLabel::Covid) {
                    problems.push(format!("fold {}: {id} is not an anomaly", fold.index));
                }
                *tested_anomaly.entry(id).or_default() += 1;
            }
            let expected_train: usize = manifest
                .entries()
                .iter()
                .filter(|e| self.setting.is_normal(e.label))
                .count()
                - fold.test_normal_ids.len();
            if train.len() != fold.train_ids.len() || train.len() != expected_train {
                problems.push(format!(
                    "fold {}: training set is not the complement of its test part",
                    fold.index
                ));
            }
        }
        for e in manifest.entries() {
            let id = e.sample_id.as_str();
            if self.setting.is_normal(e.label) && tested_normal.get(id) != Some(&1) {
                problems.push(format!(
                    "normal sample {id} tested {} times",
                    tested_normal.get(id).unwrap_or(&0)
                ));
            }
            if e.label.is_anomaly() && tested_anomaly.get(id) != Some(&1) {
                problems.push(format!(
                    "anomaly {id} tested {} times",
                    tested_anomaly.get(id).unwrap_or(&0)
                ));
            }
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ManifestEntry;

    fn manifest(healthy: usize, pneumonia: usize, covid: usize) -> Manifest {
        let mut entries = Vec::new();
        for (label, n) in [
            (ClassLabel::Healthy, healthy),
            (ClassLabel::Pneumonia, pneumonia),
            (ClassLabel::Covid, covid),
        ] {
            for i in 0..n {
                entries.push(ManifestEntry {
                    sample_id: format!("{label}_{i}"),
                    path: format!("{label}_{i}.png").into(),
                    label,
                });
            }
        }
        Manifest::new(entries, ".").unwrap()
    }

    #[test]
    fn toy_setting_one_plan() {
        // 9 healthy + 3 covid, k = 3: each healthy part has 3 ids, each covid
        // part 1 id, so every fold trains on 6 and tests 3 + 1.
        let m = manifest(9, 0, 3);
        let plan = make_fold_plan(&m, Setting::Healthy, 3, 42).unwrap();
        assert_eq!(plan.folds.len(), 3);
        for f in &plan.folds {
            assert_eq!(f.train_ids.len(), 6);
            assert_eq!(f.test_normal_ids.len(), 3);
            assert_eq!(f.test_anomaly_ids.len(), 1);
        }
        assert!(plan.audit(&m).is_empty(), "{:?}", plan.audit(&m));
    }

    #[test]
    fn setting_two_trains_on_both_normal_classes() {
        let m = manifest(12, 9, 6);
        let plan = make_fold_plan(&m, Setting::HealthyPlusPneumonia, 3, 1).unwrap();
        for f in &plan.folds {
            assert!(f.train_ids.iter().any(|id| id.starts_with("healthy")));
            assert!(f.train_ids.iter().any(|id| id.starts_with("pneumonia")));
            assert_eq!(f.train_ids.len(), 8 + 6);
            assert_eq!(f.test_normal_ids.len(), 4 + 3);
            assert_eq!(f.test_anomaly_ids.len(), 2);
        }
        assert!(plan.audit(&m).is_empty());
    }

    #[test]
    fn setting_three_excludes_healthy() {
        let m = manifest(5, 7, 4);
        let plan = make_fold_plan(&m, Setting::Pneumonia, 3, 1).unwrap();
        for f in &plan.folds {
            assert!(f
                .train_ids
                .iter()
                .chain(&f.test_normal_ids)
                .all(|id| id.starts_with("pneumonia")));
        }
        let sizes: Vec<usize> = plan.folds.iter().map(|f| f.test_normal_ids.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 7);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(plan.audit(&m).is_empty());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let m = manifest(30, 0, 9);
        let a = make_fold_plan(&m, Setting::Healthy, 3, 5).unwrap();
        let b = make_fold_plan(&m, Setting::Healthy, 3, 5).unwrap();
        let c = make_fold_plan(&m, Setting::Healthy, 3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let m = manifest(9, 0, 2);
        assert!(matches!(
            make_fold_plan(&m, Setting::Healthy, 3, 0),
            Err(Error::ClassTooSmall { count: 2, k: 3, .. })
        ));
        let m = manifest(9, 1, 3);
        assert!(make_fold_plan(&m, Setting::HealthyPlusPneumonia, 3, 0).is_err());
        assert!(make_fold_plan(&m, Setting::Healthy, 3, 0).is_ok());
    }

    #[test]
    fn audit_catches_leaks() {
        let m = manifest(9, 0, 3);
        let mut plan = make_fold_plan(&m, Setting::Healthy, 3, 0).unwrap();
        let covid = plan.folds[0].test_anomaly_ids[0].clone();
        plan.folds[1].train_ids.push(covid);
        assert!(!plan.audit(&m).is_empty());
    }
}
