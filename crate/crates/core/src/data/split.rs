use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

/// Integer train:val:test proportions such as `6:1:3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratios(pub [u32; 3]);

impl Ratios {
    pub fn total(&self) -> u64 {
        self.0.iter().map(|&v| v as u64).sum()
    }
}

impl FromStr for Ratios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Usage(format!("ratios must look like 6:1:3, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut r = [0u32; 3];
        for (slot, p) in r.iter_mut().zip(&parts) {
            *slot = p.trim().parse().map_err(|_| bad())?;
        }
        if r.contains(&0) {
            return Err(Error::Usage(format!("every ratio part must be positive, got `{s}`")));
        }
        Ok(Ratios(r))
    }
}

impl fmt::Display for Ratios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: u16,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Assignment of sample indices to train/val/test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: Ratios,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub per_class: Vec<ClassCounts>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            _ => Err(Error::Usage(format!("split must be train, val or test, got `{s}`"))),
        }
    }
}

impl SplitSpec {
    pub fn subset(&self, s: Subset) -> &[usize] {
        match s {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }
}

/// Per-class counts: `floor(n·r_train)`, `floor(n·r_val)`, remainder to test.
/// Any empty split then takes one sample from test, or from the largest split
/// when test has only one left.
pub fn split_counts(n: usize, ratios: Ratios) -> [usize; 3] {
    let total = ratios.total();
    let tr = (n as u64 * ratios.0[0] as u64 / total) as usize;
    let va = (n as u64 * ratios.0[1] as u64 / total) as usize;
    let mut c = [tr, va, n - tr - va];
    for i in 0..3 {
        if c[i] == 0 {
            let donor = if c[2] > 1 {
                2
            } else {
                (0..3).max_by_key(|&j| (c[j], j)).unwrap()
            };
            c[donor] -= 1;
            c[i] += 1;
        }
    }
    c
}

/// Stratified split of samples with 1-based class `labels`. Each class is
/// shuffled with the split stream of `seed` (classes in ascending order) and
/// cut by [`split_counts`]. Index lists are returned sorted.
pub fn stratified_split(labels: &[u16], ratios: Ratios, seed: u64) -> Result<SplitSpec> {
    let k = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k + 1];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    if !by_class[0].is_empty() {
        return Err(Error::Data("unlabeled sample passed to stratified_split".into()));
    }
    let mut rng = Rng::new(seed, streams::SPLIT);
    let mut spec = SplitSpec {
        ratios,
        seed,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        per_class: Vec::new(),
    };
    for (class, idx) in by_class.iter_mut().enumerate().skip(1) {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::Data(format!(
                "class {class} has {} samples; at least 3 are needed for a three-way split",
                idx.len()
            )));
        }
        rng.shuffle(idx);
        let [tr, va, te] = split_counts(idx.len(), ratios);
        spec.train.extend_from_slice(&idx[..tr]);
        spec.val.extend_from_slice(&idx[tr..tr + va]);
        spec.test.extend_from_slice(&idx[tr + va..]);
        spec.per_class.push(ClassCounts {
            class: class as u16,
            train: tr,
            val: va,
            test: te,
        });
    }
    spec.train.sort_unstable();
    spec.val.sort_unstable();
    spec.test.sort_unstable();
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_one_three_ratios() {
        assert_eq!(split_counts(10, "6:1:3".parse().unwrap()), [6, 1, 3]);
        assert_eq!(split_counts(10, "5:1:4".parse().unwrap()), [5, 1, 4]);
        assert_eq!(split_counts(10, "2:1:7".parse().unwrap()), [2, 1, 7]);
    }

    #[test]
    fn minimum_one_per_split() {
        let r: Ratios = "6:1:3".parse().unwrap();
        assert_eq!(split_counts(3, r), [1, 1, 1]);
        assert_eq!(split_counts(4, r), [2, 1, 1]);
        assert_eq!(split_counts(3, "1:1:98".parse().unwrap()), [1, 1, 1]);
        assert_eq!(split_counts(3, "98:1:1".parse().unwrap()), [1, 1, 1]);
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!("6:1:3".parse::<Ratios>().unwrap(), Ratios([6, 1, 3]));
        for bad in ["6:1", "6:1:3:1", "a:b:c", "6:0:4", ""] {
            assert!(matches!(bad.parse::<Ratios>(), Err(Error::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let labels: Vec<u16> = (0..60).map(|i| (i % 3 + 1) as u16).collect();
        let r = Ratios([6, 1, 3]);
        let a = stratified_split(&labels, r, 1).unwrap();
        assert_eq!(a, stratified_split(&labels, r, 1).unwrap());
        let b = stratified_split(&labels, r, 2).unwrap();
        assert_ne!(a.train, b.train);
        assert_eq!(a.per_class, b.per_class);
        assert_eq!(a.train.len(), 36);
    }

    #[test]
    fn tiny_class_rejected_with_name() {
        let labels = vec![1, 1, 1, 2, 2];
        match stratified_split(&labels, Ratios([6, 1, 3]), 0) {
            Err(Error::Data(m)) => assert!(m.contains("class 2")),
            other => panic!("{other:?}"),
        }
    }
}
