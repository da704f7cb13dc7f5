//! Rarefaction curves for two pools of the same size: one spread out, one
//! with most points crowded together.

use poolforge::diversity::{rarefaction_auc, rarefy, FirstHitSummary, RareMetric};
use poolforge::geometry::DistanceMatrix;

fn pool(n: usize, crowded: usize) -> DistanceMatrix {
    // the first `crowded` points sit close together, the rest far apart
    DistanceMatrix::from_upper(n, |i, j| if i < crowded && j < crowded { 0.1 } else { 0.9 })
}

fn main() -> poolforge::Result<()> {
    let n = 20;
    let spread = pool(n, 0);
    let tight = pool(n, 15);
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let target = poolforge::diversity::d_pair(&tight)?;
    for (name, d) in [("spread", &spread), ("tight", &tight)] {
        let curve = rarefy(d, &labels, 4, RareMetric::DPair, 200, 11)?;
        let hits = FirstHitSummary::from_hits(&curve.first_hits(target));
        println!("{name}: AUC {:.4}, reaches {target:.3} at q = {:?}", rarefaction_auc(&curve)?, hits.mean_q);
        for q in [2, 5, 10, 20] {
            println!("  q={q:<3} mean d_pair {:.4}", curve.mean_at(q));
        }
    }
    Ok(())
}
