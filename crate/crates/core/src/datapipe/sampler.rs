use std::collections::BTreeMap;

use rand::seq::{index, IndexedRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `p` identities × `k` images per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub p: usize,
    pub k: usize,
}

impl BatchSpec {
    /// 8 identities × 4 images.
    pub const STANDARD: BatchSpec = BatchSpec { p: 8, k: 4 };

    pub fn new(p: usize, k: usize) -> Result<Self> {
        let spec = BatchSpec { p, k };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 || self.k < 2 {
            return Err(Error::Config(format!(
                "batch needs P >= 2 and K >= 2, got P={} K={}",
                self.p, self.k
            )));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }
}

/// Identity-balanced sampler over a list of `(item, identity)` pairs.
#[derive(Debug, Clone)]
pub struct PkSampler {
    spec: BatchSpec,
    /// Items per dense label; labels follow sorted identity order.
    groups: Vec<Vec<usize>>,
    identities: Vec<String>,
}

impl PkSampler {
    pub fn new(spec: BatchSpec, items: &[(usize, String)]) -> Result<Self> {
        spec.validate()?;
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (item, id) in items {
            map.entry(id.as_str()).or_default().push(*item);
        }
        if map.len() < spec.p {
            return Err(Error::Config(format!(
                "{} training identities, batch needs {}",
                map.len(),
                spec.p
            )));
        }
        let identities = map.keys().map(|s| s.to_string()).collect();
        let groups = map.into_values().collect();
        Ok(PkSampler {
            spec,
            groups,
            identities,
        })
    }

    pub fn spec(&self) -> BatchSpec {
        self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn identities(&self) -> &[String] {
        &self.identities
    }

    pub fn num_items(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Batches per epoch: one pass worth of images, at least one batch.
    pub fn batches_per_epoch(&self) -> usize {
        (self.num_items() / self.spec.batch_size()).max(1)
    }

    /// Draws `p` distinct identities and `k` items of each, as `(item, label)`.
    /// Items repeat only when an identity has fewer than `k` of them.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(usize, usize)> {
        let labels = index::sample(rng, self.groups.len(), self.spec.p).into_vec();
        let mut batch = Vec::with_capacity(self.spec.batch_size());
        for label in labels {
            let group = &self.groups[label];
            if group.len() >= self.spec.k {
                let mut picked: Vec<usize> = group.choose_multiple(rng, self.spec.k).copied().collect();
                picked.sort_unstable();
                batch.extend(picked.into_iter().map(|i| (i, label)));
            } else {
                batch.extend((0..self.spec.k).map(|_| (group[rng.random_range(0..group.len())], label)));
            }
        }
        batch
    }
}
