use hfreid::evaluator::{
    average_precision, evaluate, inverse_negative_penalty, rank_all, DistanceMetric, FeatureGallery,
};
use ndarray::Array2;
use proptest::prelude::*;

fn gallery_strategy() -> impl Strategy<Value = (Array2<f64>, Vec<usize>)> {
    (5usize..60, 2usize..6, 2usize..6).prop_flat_map(|(n, dim, classes)| {
        (
            prop::collection::vec(-1.0..1.0f64, n * dim)
                .prop_map(move |v| Array2::from_shape_vec((n, dim), v).unwrap()),
            prop::collection::vec(0..classes, n),
        )
    })
}

fn make(features: Array2<f64>, labels: Vec<usize>) -> FeatureGallery {
    let ids = (0..labels.len()).map(|i| format!("g{i}")).collect();
    FeatureGallery::new(features, labels, ids).unwrap()
}

/// Random orthogonal matrix from Gram-Schmidt on the given columns.
fn orthogonal(raw: &Array2<f64>) -> Option<Array2<f64>> {
    let d = raw.ncols();
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v = raw.column(j).to_owned();
        for k in 0..j {
            let p = q.column(k).dot(&v);
            v = &v - &(&q.column(k) * p);
        }
        let norm = v.dot(&v).sqrt();
        if norm < 1e-6 {
            return None;
        }
        q.column_mut(j).assign(&(v / norm));
    }
    Some(q)
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_ordered((f, l) in gallery_strategy()) {
        let r = evaluate(&make(f, l), DistanceMetric::NormalizedEuclidean).unwrap();
        for v in [r.map, r.rank1, r.rank5, r.rank10, r.minp] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.rank1 <= r.rank5 && r.rank5 <= r.rank10);
        prop_assert_eq!(r.per_query_ap.len(), r.num_queries);
        prop_assert_eq!(r.per_query_ap.iter().filter(|a| a.is_none()).count(), r.num_skipped);
    }

    #[test]
    fn rotation_leaves_metrics_unchanged((f, l) in gallery_strategy(), seed in prop::collection::vec(-1.0..1.0f64, 36)) {
        let d = f.ncols();
        let raw = Array2::from_shape_fn((d, d), |(i, j)| seed[i * 6 + j]);
        prop_assume!(orthogonal(&raw).is_some());
        let q = orthogonal(&raw).unwrap();
        let a = rank_all(&make(f.clone(), l.clone()), DistanceMetric::Euclidean).unwrap();
        let b = rank_all(&make(f.dot(&q), l), DistanceMetric::Euclidean).unwrap();
        let ap = |r: &[hfreid::evaluator::RankingResult]| r.iter().map(|x| average_precision(&x.matches)).collect::<Vec<_>>();
        for (x, y) in ap(&a).iter().zip(ap(&b)) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9),
                (None, None) => {}
                _ => prop_assert!(false, "skip pattern changed"),
            }
        }
    }

    #[test]
    fn scaling_features_keeps_normalized_ranking((f, l) in gallery_strategy(), k in 0.1..10.0f64) {
        let a = evaluate(&make(f.clone(), l.clone()), DistanceMetric::NormalizedEuclidean).unwrap();
        let b = evaluate(&make(f * k, l), DistanceMetric::NormalizedEuclidean).unwrap();
        prop_assert!((a.map - b.map).abs() < 1e-9);
    }

    #[test]
    fn perfect_ranking_scores_one(matches in prop::collection::vec(any::<bool>(), 1..40)) {
        let hits = matches.iter().filter(|&&m| m).count();
        prop_assume!(hits > 0);
        let mut ideal = vec![true; hits];
        ideal.extend(std::iter::repeat_n(false, matches.len() - hits));
        prop_assert_eq!(average_precision(&ideal), Some(1.0));
        prop_assert_eq!(inverse_negative_penalty(&ideal), Some(1.0));
        prop_assert!(average_precision(&matches).unwrap() <= 1.0);
    }
}

#[test]
fn singleton_identities_are_skipped() {
    let f = Array2::from_shape_vec((4, 2), vec![0.0, 1.0, 1.0, 0.0, 0.1, 1.0, -1.0, 0.0]).unwrap();
    let r = evaluate(&make(f, vec![0, 1, 0, 2]), DistanceMetric::NormalizedEuclidean).unwrap();
    assert_eq!(r.num_skipped, 2);
    assert_eq!(r.map, 1.0);
    assert!(evaluate(&make(Array2::zeros((1, 2)), vec![0]), DistanceMetric::Euclidean).is_err());
}
