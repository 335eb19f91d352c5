use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::UnknownName {
                kind: "split",
                name: other.to_string(),
            }),
        }
    }
}

/// Largest-remainder apportionment of `total` proportionally to `weights`.
/// Ties in the remainder go to the lower index.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut rems: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| ((total * w) % sum, i))
        .collect();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let given: usize = out.iter().sum();
    for &(_, i) in rems.iter().take(total - given) {
        out[i] += 1;
    }
    out
}

fn by_class(labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        groups
            .get_mut(l)
            .ok_or_else(|| Error::Data(format!("label {l} >= {n_classes} classes")))?
            .push(i);
    }
    Ok(groups)
}

/// Seeded stratified assignment of every index to train/val/test with the
/// exact requested sizes. Each class is shuffled, then test and validation
/// quotas are apportioned across classes by class size.
pub fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<Vec<SplitTag>> {
    let (train, val, test) = sizes;
    if train + val + test != labels.len() {
        return Err(Error::Data(format!(
            "split sizes {train}+{val}+{test} do not add up to {} samples",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = by_class(labels, n_classes)?;
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let class_sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let test_q = apportion(test, &class_sizes);
    let rest: Vec<usize> = class_sizes.iter().zip(&test_q).map(|(s, t)| s - t).collect();
    let val_q = apportion(val, &rest);
    let mut tags = vec![SplitTag::Train; labels.len()];
    for (c, g) in groups.iter().enumerate() {
        for (k, &i) in g.iter().enumerate() {
            tags[i] = if k < test_q[c] {
                SplitTag::Test
            } else if k < test_q[c] + val_q[c] {
                SplitTag::Val
            } else {
                SplitTag::Train
            };
        }
    }
    Ok(tags)
}

/// Seeded, class-stratified choice of `floor(len * fraction)` indices,
/// returned sorted.
pub fn stratified_subset(
    labels: &[usize],
    n_classes: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "labeled fraction {fraction} outside (0, 1]"
        )));
    }
    let k = ((labels.len() as f64) * fraction + 1e-9).floor() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {} samples selects nothing",
            labels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = by_class(labels, n_classes)?;
    for g in &mut groups {
        g.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quota = apportion(k, &sizes);
    let mut out: Vec<usize> = groups
        .iter()
        .zip(quota)
        .flat_map(|(g, q)| g[..q].to_vec())
        .collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(35, &[80, 58]), vec![20, 15]);
        assert_eq!(apportion(9, &[54, 39]), vec![5, 4]);
        assert_eq!(apportion(0, &[3, 4]), vec![0, 0]);
        assert_eq!(apportion(3, &[1, 1, 1]), vec![1, 1, 1]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let labels: Vec<usize> = (0..138).map(|i| usize::from(i >= 80)).collect();
        let a = stratified_split(&labels, 2, (93, 10, 35), 7).unwrap();
        let b = stratified_split(&labels, 2, (93, 10, 35), 7).unwrap();
        assert_eq!(a, b);
        let count = |t| a.iter().filter(|x| **x == t).count();
        assert_eq!((count(SplitTag::Train), count(SplitTag::Val), count(SplitTag::Test)), (93, 10, 35));
        assert!(stratified_split(&labels, 2, (93, 10, 34), 7).is_err());
    }

    #[test]
    fn subset_floor_rule() {
        let labels: Vec<usize> = (0..93).map(|i| usize::from(i % 3 == 0)).collect();
        let s = stratified_subset(&labels, 2, 0.1, 1).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(stratified_subset(&labels, 2, 1.0, 1).unwrap(), (0..93).collect::<Vec<_>>());
        assert!(stratified_subset(&labels[..5], 2, 0.1, 1).is_err());
    }
}
