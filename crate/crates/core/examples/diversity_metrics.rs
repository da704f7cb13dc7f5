//! Embeds a handful of texts with the mock embedder and prints every
//! diversity metric, the medoid and farthest-first anchors.

use poolforge::diversity::{fit_regions_with, DiversityReport, KMeans};
use poolforge::geometry::{distance_matrix, medoid, select_anchors, AnchorRule, Embedder, EmbeddingSet, MockEmbedder};

fn main() -> poolforge::Result<()> {
    let texts = [
        "Use the shoe as a doorstop.",
        "Plant herbs in an old boot.",
        "Shoe as a phone stand.",
        "Use it to swat flies.",
        "Fill it with sand as a paperweight.",
        "A tiny boat for a bath toy.",
        "Hammer a nail with the heel.",
        "Store coins in the toe.",
    ];
    let rows = MockEmbedder::new(32, 7).embed(&texts)?;
    let set = EmbeddingSet::from_rows("mock", rows)?;
    let d = distance_matrix(&set);

    // four regions fitted on this pool alone
    let keys: Vec<String> = (0..texts.len()).map(|i| format!("t{i}")).collect();
    let regions = fit_regions_with("aut_shoe", KMeans::new(4), &keys, &set)?;
    let labels = regions.labels_for(keys.iter().map(String::as_str))?;

    let r = DiversityReport::compute(&d, &labels, 4)?;
    println!("d_pair {:.4}\nd_nn   {:.4}\nd_med  {:.4}\nd_mst  {:.4}\nd_ent  {:.4}", r.d_pair, r.d_nn, r.d_med, r.d_mst, r.d_ent);
    println!("medoid: {}", texts[medoid(&d)]);
    for a in select_anchors(&d, 3, AnchorRule::MaxMin)? {
        println!("anchor: {}", texts[a]);
    }
    Ok(())
}
