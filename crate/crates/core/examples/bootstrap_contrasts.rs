//! Bootstraps two synthetic cells and reports the diverge-minus-neutral
//! contrast on d_pair with a percentile interval.

use std::collections::BTreeMap;

use poolforge::analysis::{bootstrap_cell, delta_div_with, sub_replicates, CellInputs, ContrastEstimate, ContrastKind, Stat};
use poolforge::geometry::{distance_matrix, Embedder, EmbeddingSet, MockEmbedder};
use poolforge::{CellCoord, Family, Method, Strategy};

fn pool(prefix: &str, n: usize, distinct: usize) -> poolforge::Result<poolforge::geometry::DistanceMatrix> {
    // only `distinct` different texts, so fewer means a more repetitive pool
    let texts: Vec<String> = (0..n).map(|i| format!("{prefix} {}", i % distinct)).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    Ok(distance_matrix(&EmbeddingSet::from_rows("mock", MockEmbedder::new(16, 1).embed(&refs)?)?))
}

fn main() -> poolforge::Result<()> {
    let n = 30;
    let labels: Vec<usize> = (0..n).map(|i| i % 6).collect();
    let mut points = BTreeMap::new();
    let mut reps = BTreeMap::new();
    for (strategy, distinct) in [(Strategy::Neutral, 6), (Strategy::Diverge, 25)] {
        let cell = CellCoord::new("gpt-5.4", "aut_tire", Family::Aut, Method::Indep, strategy);
        let d = pool(strategy.as_str(), n, distinct)?;
        let inputs = CellInputs { distances: &d, labels: &labels, k: 12, quality: None };
        points.insert(cell.clone(), inputs.point()?[&Stat::DPair]);
        let b = bootstrap_cell(&inputs, 1000, 42, &cell.key())?;
        reps.insert(cell, b.replicates[&Stat::DPair].clone());
    }
    let delta = delta_div_with(&points, |a, b| a - b)?;
    let delta_reps = delta_div_with(&reps, |a, b| sub_replicates(a, b))?;
    for (cell, v) in &delta {
        let e = ContrastEstimate::new(ContrastKind::Diverge, *v, &delta_reps[cell]);
        println!(
            "{}: delta d_pair {:.4}  95% [{:.4}, {:.4}] from {} replicates",
            cell.key(),
            e.value,
            e.ci_low,
            e.ci_high,
            e.replicates
        );
    }
    Ok(())
}
