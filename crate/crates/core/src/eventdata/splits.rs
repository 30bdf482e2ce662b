use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// An ordered pair of base classes; `(3, 7)` and `(7, 3)` are distinct.
pub type ClassPair = (u32, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    fn tag(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

/// Disjoint task lists for meta-training, validation and testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaSplit {
    pub seed: u64,
    pub train: Vec<ClassPair>,
    pub val: Vec<ClassPair>,
    pub test: Vec<ClassPair>,
}

impl MetaSplit {
    pub fn part(&self, part: SplitPart) -> &[ClassPair] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    /// Plain-text manifest: a seed header, then one `part a b` line per task.
    pub fn to_manifest(&self) -> String {
        let mut out = format!("# meta-split seed={}\n", self.seed);
        for part in [SplitPart::Train, SplitPart::Val, SplitPart::Test] {
            for (a, b) in self.part(part) {
                let _ = writeln!(out, "{} {a} {b}", part.tag());
            }
        }
        out
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let seed = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# meta-split seed="))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::config("manifest must start with '# meta-split seed=<n>'"))?;
        let mut split = MetaSplit { seed, train: vec![], val: vec![], test: vec![] };
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let bad = || Error::config(format!("manifest line {}: '{line}'", i + 1));
            let [tag, a, b] = f[..] else { return Err(bad()) };
            let pair = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            match tag {
                "train" => split.train.push(pair),
                "val" => split.val.push(pair),
                "test" => split.test.push(pair),
                _ => return Err(bad()),
            }
        }
        Ok(split)
    }
}

/// Enumerates all ordered pairs of `classes` (including `(a, a)`), shuffles
/// them under `seed` and deals out `(train, val, test)` tasks.
pub fn make_meta_splits(classes: &[u32], sizes: (usize, usize, usize), seed: u64) -> Result<MetaSplit> {
    let mut uniq = classes.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() != classes.len() {
        return Err(Error::structural("class labels must be distinct"));
    }
    let mut pairs: Vec<ClassPair> = classes.iter().flat_map(|&a| classes.iter().map(move |&b| (a, b))).collect();
    let (n_tr, n_va, n_te) = sizes;
    if n_tr + n_va + n_te > pairs.len() {
        return Err(Error::structural(format!(
            "split sizes {n_tr}+{n_va}+{n_te} exceed the {} available class pairs",
            pairs.len()
        )));
    }
    pairs.shuffle(&mut rng::stream(seed, &[0x5B17]));
    let test = pairs.split_off(n_tr + n_va).into_iter().take(n_te).collect();
    let val = pairs.split_off(n_tr);
    Ok(MetaSplit { seed, train: pairs, val, test })
}
