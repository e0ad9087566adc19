use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use hfreid::datapipe::{split_identities, BatchSpec, Manifest, PkSampler, SplitSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn manifest(ids: usize, per_id: &[usize]) -> Manifest {
    let mut text = String::new();
    for i in 0..ids {
        for j in 0..per_id[i % per_id.len()] {
            text.push_str(&format!("img/{i}_{j}.png\tid{i:03}\n"));
        }
    }
    Manifest::parse("m", &text, Path::new("/data")).unwrap()
}

#[test]
fn splits_are_disjoint_and_cover_over_100_seeds() {
    let m = manifest(37, &[3, 1, 5]);
    let all: BTreeSet<String> = m.identities().into_iter().collect();
    let mut distinct = BTreeSet::new();
    for seed in 0..100 {
        let s = split_identities(&m, seed).unwrap();
        let train: BTreeSet<_> = s.train.iter().cloned().collect();
        let test: BTreeSet<_> = s.test.iter().cloned().collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(&train | &test, all);
        assert_eq!(s.train.len(), 26);
        assert_eq!(SplitSpec::parse(&s.to_text()).unwrap(), s);
        assert_eq!(split_identities(&m, seed).unwrap(), s);
        distinct.insert(s.test.clone());
    }
    assert!(distinct.len() > 90);
}

#[test]
fn split_rejects_overlap_and_tiny_manifests() {
    assert!(split_identities(&manifest(1, &[4]), 0).is_err());
    assert!(SplitSpec::parse("seed: 1\ntrain: a\ntest: a\n").is_err());
    assert!(SplitSpec::parse("seed: 1\ntrain: a\n").is_err());
    assert!(SplitSpec::parse("seed: x\ntrain: a\ntest: b\n").is_err());
}

#[test]
fn manifest_text_round_trips() {
    let m = manifest(4, &[2]);
    let back = Manifest::parse("m", &m.to_text(Path::new("/data")), Path::new("/data")).unwrap();
    assert_eq!(back.records, m.records);
    assert!(Manifest::parse("m", "only-one-field\n", Path::new(".")).is_err());
    assert!(Manifest::parse("m", "# nothing\n", Path::new(".")).is_err());
}

proptest! {
    #[test]
    fn batches_are_p_by_k(ids in 2usize..20, counts in prop::collection::vec(1usize..7, 1..5), p in 2usize..5, k in 2usize..5, seed in any::<u64>()) {
        prop_assume!(ids >= p);
        let m = manifest(ids, &counts);
        let items: Vec<(usize, String)> = m.records.iter().enumerate().map(|(i, r)| (i, r.identity.clone())).collect();
        let sampler = PkSampler::new(BatchSpec::new(p, k).unwrap(), &items).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let batch = sampler.sample_batch(&mut rng);
            prop_assert_eq!(batch.len(), p * k);
            let mut per: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &(item, label) in &batch {
                prop_assert_eq!(&sampler.identities()[label], &items[item].1);
                per.entry(label).or_default().push(item);
            }
            prop_assert_eq!(per.len(), p);
            for group in per.values() {
                prop_assert_eq!(group.len(), k);
                let distinct: BTreeSet<_> = group.iter().collect();
                let available = items.iter().filter(|x| x.1 == items[group[0]].1).count();
                if available >= k {
                    prop_assert_eq!(distinct.len(), k);
                }
            }
        }
    }
}

#[test]
fn sampler_rejects_bad_specs() {
    assert!(BatchSpec::new(1, 4).is_err());
    assert!(BatchSpec::new(8, 1).is_err());
    let m = manifest(3, &[4]);
    let items: Vec<(usize, String)> = m
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.identity.clone()))
        .collect();
    assert!(PkSampler::new(BatchSpec::STANDARD, &items).is_err());
}
