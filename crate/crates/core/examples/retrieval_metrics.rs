//! Scores a small gallery with the query-vs-rest protocol and prints the
//! ranking, per-query AP and INP, and the summary metrics.
//!
//! ```bash
//! cargo run -p hfreid --example retrieval_metrics
//! ```

use hfreid::evaluator::{evaluate, rank_all, DistanceMetric, FeatureGallery};
use ndarray::array;

fn main() -> hfreid::Result<()> {
    let features = array![[1.0, 0.1], [0.9, 0.3], [0.2, 1.0], [0.7, 0.7], [0.1, 0.9], [-1.0, 0.0]];
    let labels = vec![0, 0, 1, 0, 1, 2];
    let ids = (0..labels.len()).map(|i| format!("img{i}")).collect();
    let gallery = FeatureGallery::new(features, labels, ids)?;

    for r in rank_all(&gallery, DistanceMetric::NormalizedEuclidean)? {
        let marks: String = r.matches.iter().map(|&m| if m { 'x' } else { '.' }).collect();
        println!("query {}: ranking {:?} matches {marks}", r.query, r.order);
    }
    let report = evaluate(&gallery, DistanceMetric::NormalizedEuclidean)?;
    for (q, (ap, inp)) in report.per_query_ap.iter().zip(&report.per_query_inp).enumerate() {
        match (ap, inp) {
            (Some(ap), Some(inp)) => println!("query {q}: AP {ap:.3} INP {inp:.3}"),
            _ => println!("query {q}: no other image of this identity, skipped"),
        }
    }
    println!(
        "mAP {:.3}  rank1 {:.3}  rank5 {:.3}  mINP {:.3}",
        report.map, report.rank1, report.rank5, report.minp
    );
    Ok(())
}
