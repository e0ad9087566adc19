//! Query-vs-rest retrieval evaluation.
//!
//! Every test image queries all other test images; every gallery image with
//! the query's identity counts as a true match. Queries without any true
//! match are skipped and counted.

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGallery {
    pub features: Mat,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl FeatureGallery {
    pub fn new(features: Mat, labels: Vec<usize>, ids: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() || labels.len() != ids.len() {
            return Err(Error::Shape(format!(
                "{} feature rows, {} labels, {} ids",
                features.nrows(),
                labels.len(),
                ids.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite gallery feature".into()));
        }
        Ok(FeatureGallery { features, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Euclidean distance between L2-normalised features.
    #[default]
    NormalizedEuclidean,
    Euclidean,
}

/// Ranked gallery for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub query: usize,
    /// Gallery indices by ascending distance, query excluded.
    pub order: Vec<usize>,
    pub matches: Vec<bool>,
}

pub fn distance_matrix(gallery: &FeatureGallery, metric: DistanceMetric) -> Mat {
    let mut f = gallery.features.clone();
    if metric == DistanceMetric::NormalizedEuclidean {
        for mut row in f.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row /= norm;
            }
        }
    }
    let n = f.nrows();
    let mut d = Mat::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = f
                .row(i)
                .iter()
                .zip(f.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

pub fn rank_all(gallery: &FeatureGallery, metric: DistanceMetric) -> Result<Vec<RankingResult>> {
    if gallery.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 test images, got {}",
            gallery.len()
        )));
    }
    let dist = distance_matrix(gallery, metric);
    Ok((0..gallery.len())
        .map(|q| {
            let mut order: Vec<usize> = (0..gallery.len()).filter(|&g| g != q).collect();
            order.sort_by(|&a, &b| dist[[q, a]].total_cmp(&dist[[q, b]]).then(a.cmp(&b)));
            let matches = order.iter().map(|&g| gallery.labels[g] == gallery.labels[q]).collect();
            RankingResult {
                query: q,
                order,
                matches,
            }
        })
        .collect())
}

/// Average precision over all true matches; `None` when there are none.
pub fn average_precision(matches: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &m) in matches.iter().enumerate() {
        if m {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Inverse negative penalty: true matches divided by the rank of the last one.
pub fn inverse_negative_penalty(matches: &[bool]) -> Option<f64> {
    let total = matches.iter().filter(|&&m| m).count();
    let last = matches.iter().rposition(|&m| m)?;
    Some(total as f64 / (last + 1) as f64)
}

/// Fraction of the given queries whose first match is within the top `k`.
pub fn cmc(match_lists: &[Vec<bool>], k: usize) -> f64 {
    if match_lists.is_empty() {
        return 0.0;
    }
    let hit = match_lists.iter().filter(|m| m.iter().take(k).any(|&v| v)).count();
    hit as f64 / match_lists.len() as f64
}

/// Mean INP over queries that have at least one match.
pub fn minp(match_lists: &[Vec<bool>]) -> f64 {
    let v: Vec<f64> = match_lists.iter().filter_map(|m| inverse_negative_penalty(m)).collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    #[serde(rename = "mINP")]
    pub minp: f64,
    pub num_queries: usize,
    pub num_skipped: usize,
    /// Per query AP, `None` for skipped queries.
    pub per_query_ap: Vec<Option<f64>>,
    pub per_query_inp: Vec<Option<f64>>,
}

pub fn evaluate(gallery: &FeatureGallery, metric: DistanceMetric) -> Result<EvalReport> {
    let ranked = rank_all(gallery, metric)?;
    Ok(report_from_rankings(&ranked))
}

pub fn report_from_rankings(ranked: &[RankingResult]) -> EvalReport {
    let per_query_ap: Vec<Option<f64>> = ranked.iter().map(|r| average_precision(&r.matches)).collect();
    let per_query_inp: Vec<Option<f64>> = ranked.iter().map(|r| inverse_negative_penalty(&r.matches)).collect();
    let valid: Vec<Vec<bool>> = ranked
        .iter()
        .filter(|r| r.matches.iter().any(|&m| m))
        .map(|r| r.matches.clone())
        .collect();
    let aps: Vec<f64> = per_query_ap.iter().flatten().copied().collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    EvalReport {
        map,
        rank1: cmc(&valid, 1),
        rank5: cmc(&valid, 5),
        rank10: cmc(&valid, 10),
        minp: minp(&valid),
        num_queries: ranked.len(),
        num_skipped: ranked.len() - valid.len(),
        per_query_ap,
        per_query_inp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gallery(features: Mat, labels: Vec<usize>) -> FeatureGallery {
        let ids = (0..labels.len()).map(|i| format!("img{i}")).collect();
        FeatureGallery::new(features, labels, ids).unwrap()
    }

    #[test]
    fn ap_hand_cases() {
        assert_eq!(average_precision(&[true, true, false, false]), Some(1.0));
        assert_eq!(average_precision(&[false, true, false, true]), Some(0.5));
        assert_eq!(average_precision(&[false, false, false, true, false]), Some(0.25));
        assert_eq!(average_precision(&[false, false]), None);
    }

    #[test]
    fn inp_hand_cases() {
        assert_eq!(inverse_negative_penalty(&[true, true]), Some(1.0));
        assert_eq!(inverse_negative_penalty(&[true, false, true, false]), Some(2.0 / 3.0));
        assert_eq!(inverse_negative_penalty(&[false, false, false, true]), Some(0.25));
        assert_eq!(inverse_negative_penalty(&[false]), None);
    }

    #[test]
    fn cmc_counting() {
        let first_at = |r: usize| {
            let mut v = vec![false; 4];
            v[r - 1] = true;
            v
        };
        let lists = vec![first_at(1), first_at(3), first_at(2)];
        assert!((cmc(&lists, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((cmc(&lists, 2) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cmc(&lists, 3), 1.0);
        let with_empty = vec![first_at(2), vec![false; 4]];
        assert_eq!(cmc(&with_empty, 100), 0.5);
    }

    #[test]
    fn two_images_same_identity() {
        let g = gallery(array![[1.0, 0.0], [0.9, 0.1]], vec![4, 4]);
        let r = evaluate(&g, DistanceMetric::NormalizedEuclidean).unwrap();
        assert_eq!(r.rank1, 1.0);
        assert_eq!(r.map, 1.0);
        assert!(rank_all(&gallery(array![[1.0]], vec![0]), DistanceMetric::Euclidean).is_err());
    }

    #[test]
    fn identical_features_rank_by_index() {
        let g = gallery(Mat::ones((4, 3)), vec![0, 1, 0, 1]);
        let r = rank_all(&g, DistanceMetric::Euclidean).unwrap();
        assert_eq!(r[2].order, vec![0, 1, 3]);
    }

    #[test]
    fn five_point_geometry() {
        // points on the plane; distances from query 0 at the origin
        let g = gallery(
            array![[0.0, 0.0], [3.0, 4.0], [1.0, 0.0], [0.0, -2.0], [-1.0, -1.0]],
            vec![0, 0, 1, 0, 1],
        );
        let r = rank_all(&g, DistanceMetric::Euclidean).unwrap();
        // |p2|=1, |p4|=sqrt2, |p3|=2, |p1|=5
        assert_eq!(r[0].order, vec![2, 4, 3, 1]);
        assert_eq!(r[0].matches, vec![false, false, true, true]);
        // from p1=(3,4): p2 sqrt(20), p0 5, p4 sqrt(41), p3 sqrt(45)
        assert_eq!(r[1].order, vec![2, 0, 4, 3]);
    }

    #[test]
    fn singletons_are_skipped() {
        let g = gallery(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], vec![0, 1, 2]);
        let r = evaluate(&g, DistanceMetric::NormalizedEuclidean).unwrap();
        assert_eq!(r.num_skipped, 3);
        assert_eq!(r.num_queries, 3);
        assert_eq!(r.map, 0.0);
    }

    #[test]
    fn perfect_features() {
        let g = gallery(
            array![
                [1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [0.0, 0.0, 1.0]
            ],
            vec![0, 0, 1, 1, 2, 2],
        );
        let r = evaluate(&g, DistanceMetric::NormalizedEuclidean).unwrap();
        assert_eq!((r.map, r.rank1, r.minp), (1.0, 1.0, 1.0));
    }
}
