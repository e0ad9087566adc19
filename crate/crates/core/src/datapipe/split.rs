use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Manifest;
use crate::error::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.7;

/// Identity-disjoint train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Sorts identities, shuffles them with `seed`, and assigns the first
/// `round(0.7·n)` to training.
pub fn split_identities(manifest: &Manifest, seed: u64) -> Result<SplitSpec> {
    let mut ids = manifest.identities();
    if ids.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 identities to split, got {}",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (TRAIN_FRACTION * ids.len() as f64).round() as usize;
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort();
    test.sort();
    Ok(SplitSpec {
        train,
        test,
        seed,
        train_fraction: TRAIN_FRACTION,
    })
}

impl SplitSpec {
    /// Sidecar text: a `seed:` line, a `train_fraction:` line, then one
    /// `train: <id>` or `test: <id>` line per identity.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# identity split\n");
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "train_fraction: {}", self.train_fraction);
        for id in &self.train {
            let _ = writeln!(out, "train: {id}");
        }
        for id in &self.test {
            let _ = writeln!(out, "test: {id}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SplitSpec {
            train: Vec::new(),
            test: Vec::new(),
            seed: 0,
            train_fraction: TRAIN_FRACTION,
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Input(format!("split line {}: {line:?}", i + 1));
            let (key, value) = line.split_once(": ").ok_or_else(bad)?;
            match key {
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "train_fraction" => spec.train_fraction = value.parse().map_err(|_| bad())?,
                "train" => spec.train.push(value.to_owned()),
                "test" => spec.test.push(value.to_owned()),
                _ => return Err(bad()),
            }
        }
        spec.check()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Train and test sets are disjoint and non-empty.
    pub fn check(&self) -> Result<()> {
        let train: BTreeSet<&String> = self.train.iter().collect();
        if let Some(id) = self.test.iter().find(|id| train.contains(id)) {
            return Err(Error::Input(format!("identity {id} in both train and test")));
        }
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Input("split has an empty side".into()));
        }
        Ok(())
    }

    /// Checks that the split covers exactly the manifest's identities.
    pub fn check_against(&self, manifest: &Manifest) -> Result<()> {
        self.check()?;
        let all: BTreeSet<String> = manifest.identities().into_iter().collect();
        let covered: BTreeSet<String> = self.train.iter().chain(&self.test).cloned().collect();
        if all != covered {
            return Err(Error::Input("split does not cover the manifest's identities".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> Manifest {
        let text: String = (0..n).map(|i| format!("{i}.png\tid{i:03}\n")).collect();
        Manifest::parse("m", &text, Path::new(".")).unwrap()
    }

    #[test]
    fn seventy_thirty() {
        let s = split_identities(&manifest(10), 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        s.check_against(&manifest(10)).unwrap();
        assert!(split_identities(&manifest(1), 1).is_err());
    }

    #[test]
    fn sidecar_is_stable() {
        let a = split_identities(&manifest(20), 5).unwrap().to_text();
        let b = split_identities(&manifest(20), 5).unwrap().to_text();
        assert_eq!(a, b);
        assert_eq!(
            SplitSpec::parse(&a).unwrap(),
            split_identities(&manifest(20), 5).unwrap()
        );
    }

    #[test]
    fn seeds_differ() {
        let a = split_identities(&manifest(100), 1).unwrap();
        let b = split_identities(&manifest(100), 2).unwrap();
        assert_ne!(a.train, b.train);
        a.check().unwrap();
        b.check().unwrap();
    }

    #[test]
    fn overlap_rejected() {
        assert!(SplitSpec::parse("seed: 1\ntrain: a\ntest: a\n").is_err());
        assert!(SplitSpec::parse("bogus line\n").is_err());
    }
}
