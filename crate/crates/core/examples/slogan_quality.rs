//! Leave-one-out boilerplate scores for a small slogan pool, raw and
//! standardized.

use poolforge::quality::{boilerplate_table, normalize_slogan, standardize, Commonness, NgramIndex};

fn main() -> poolforge::Result<()> {
    let slogans = [
        ("a", "Taste the fizz today!"),
        ("b", "\u{201C}Taste the fizz\u{201D}"),
        ("c", "Pop open the joy"),
        ("d", "Pop open the fun"),
        ("e", "Cold bubbles, warm smiles"),
        ("f", "Sip-sized happiness"),
    ];
    println!("tokens of b: {:?}", normalize_slogan(slogans[1].1));
    let idx = NgramIndex::build("slogan_soda", slogans)?;
    let table = boilerplate_table(&idx, Commonness::Count);
    let raw: Vec<f64> = slogans.iter().map(|(k, _)| table.scores[*k]).collect();
    // higher boilerplate means lower quality
    let z = standardize(&raw)?;
    for ((_, text), (b, z)) in slogans.iter().zip(raw.iter().zip(z)) {
        println!("{b:>6.3}  Q={:>6.3}  {text}", -z);
    }
    Ok(())
}
