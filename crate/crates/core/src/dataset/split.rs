use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    BySubject,
    ByRecord,
    ByFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl Fractions {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.valid, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.as_array();
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(DatasetError::InvalidSplit(format!("fractions {f:?} must lie in [0, 1]")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default)]
    pub mode: SplitMode,
    #[serde(default)]
    pub fractions: Fractions,
    /// Falls back to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Group counts per split: largest-remainder rounding, then every nonzero
/// fraction gets at least one group.
fn apportion(groups: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let needed = fractions.iter().filter(|&&f| f > 0.0).count();
    if groups < needed {
        return Err(DatasetError::InsufficientGroups { needed, found: groups });
    }
    let exact = fractions.map(|f| f * groups as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = groups - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if fractions[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| counts[j]).expect("three splits");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    Ok(counts)
}

/// Partitions sample indices so that samples sharing a group key land in
/// the same split. `groups[i]` is the key of sample `i`.
pub fn split_groups(groups: &[&str], fractions: &Fractions, seed: u64) -> Result<Splits> {
    fractions.validate()?;
    let mut keys: Vec<&str> = groups.to_vec();
    keys.sort_unstable();
    keys.dedup();
    let counts = apportion(keys.len(), fractions.as_array())?;
    keys.shuffle(&mut rng::stream(seed, rng::SPLIT));

    let bounds = [counts[0], counts[0] + counts[1]];
    let part_of = |key: &str| {
        let pos = keys.iter().position(|k| *k == key).expect("key collected above");
        bounds.iter().filter(|&&b| pos >= b).count()
    };
    let mut out = Splits::default();
    for (i, g) in groups.iter().enumerate() {
        match part_of(g) {
            0 => out.train.push(i),
            1 => out.valid.push(i),
            _ => out.test.push(i),
        }
    }
    Ok(out)
}

/// Seeded train/valid/test partition of `dataset`.
pub fn split(dataset: &Dataset, spec: &SplitSpec, default_seed: u64) -> Result<Splits> {
    let seed = spec.seed.unwrap_or(default_seed);
    let n = dataset.len();
    match spec.mode {
        SplitMode::BySubject => {
            let g: Vec<&str> = dataset.items.iter().map(|it| it.subject_id.as_str()).collect();
            split_groups(&g, &spec.fractions, seed)
        }
        SplitMode::ByRecord => {
            let g: Vec<&str> = dataset.items.iter().map(|it| it.record_id.as_str()).collect();
            split_groups(&g, &spec.fractions, seed)
        }
        SplitMode::ByFraction => {
            let names: Vec<String> = (0..n).map(|i| format!("{i:012}")).collect();
            let g: Vec<&str> = names.iter().map(String::as_str).collect();
            split_groups(&g, &spec.fractions, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn fr(train: f64, valid: f64, test: f64) -> Fractions {
        Fractions { train, valid, test }
    }

    fn subjects(n_subjects: usize, per: usize) -> Vec<String> {
        (0..n_subjects * per).map(|i| format!("s{:02}", i / per)).collect()
    }

    #[test]
    fn all_train() {
        let g = subjects(4, 3);
        let g: Vec<&str> = g.iter().map(String::as_str).collect();
        let s = split_groups(&g, &fr(1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(s.train, (0..12).collect::<Vec<_>>());
        assert!(s.valid.is_empty() && s.test.is_empty());
    }

    #[test]
    fn apportionment() {
        assert_eq!(apportion(3, [2.0 / 3.0, 1.0 / 3.0, 0.0]).unwrap(), [2, 1, 0]);
        assert_eq!(apportion(10, [0.8, 0.1, 0.1]).unwrap(), [8, 1, 1]);
        assert_eq!(apportion(3, [0.8, 0.1, 0.1]).unwrap(), [1, 1, 1]);
        assert_eq!(apportion(7, [0.5, 0.25, 0.25]).unwrap().iter().sum::<usize>(), 7);
        assert!(matches!(
            apportion(2, [0.8, 0.1, 0.1]),
            Err(DatasetError::InsufficientGroups { needed: 3, found: 2 })
        ));
    }

    #[test]
    fn bad_fractions() {
        let g = ["a", "b", "c"];
        assert!(matches!(split_groups(&g, &fr(0.5, 0.3, 0.3), 0), Err(DatasetError::InvalidSplit(_))));
        assert!(matches!(split_groups(&g, &fr(1.2, -0.1, -0.1), 0), Err(DatasetError::InvalidSplit(_))));
    }

    #[test]
    fn seeds_change_partitions() {
        // 10 subjects into 8/1/1 has 10·9 = 90 equally likely outcomes, so
        // two independent seeds coincide with probability 1/90.
        let g = subjects(10, 2);
        let g: Vec<&str> = g.iter().map(String::as_str).collect();
        let parts: Vec<Splits> = (0..200).map(|s| split_groups(&g, &fr(0.8, 0.1, 0.1), s).unwrap()).collect();
        let same = parts.windows(2).filter(|w| w[0] == w[1]).count();
        assert!(same <= 10, "{same} of 199 adjacent seed pairs collided");
        let distinct: HashSet<_> = parts.iter().map(|p| (p.valid.clone(), p.test.clone())).collect();
        assert!(distinct.len() > 60);
        assert_eq!(split_groups(&g, &fr(0.8, 0.1, 0.1), 17).unwrap(), parts[17]);
    }

    proptest! {
        #[test]
        fn coverage_and_group_purity(n_subj in 3usize..12, per in 1usize..6, seed in any::<u64>(), a in 0.1f64..0.8) {
            let g = subjects(n_subj, per);
            let g: Vec<&str> = g.iter().map(String::as_str).collect();
            let rest = 1.0 - a;
            let s = split_groups(&g, &fr(a, rest / 2.0, 1.0 - a - rest / 2.0), seed).unwrap();
            prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), g.len());
            let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..g.len()).collect::<Vec<_>>());
            let owners = |ix: &[usize]| ix.iter().map(|&i| g[i]).collect::<HashSet<_>>();
            let (tr, va, te) = (owners(&s.train), owners(&s.valid), owners(&s.test));
            prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
            prop_assert!(!tr.is_empty() && !va.is_empty() && !te.is_empty());
            prop_assert_eq!(s.clone(), split_groups(&g, &fr(a, rest / 2.0, 1.0 - a - rest / 2.0), seed).unwrap());
        }
    }
}
