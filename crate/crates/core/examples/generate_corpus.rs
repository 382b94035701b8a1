//! Generates a small corpus, writes it with its manifest and prints summary statistics.
//!
//!     cargo run --release --example generate_corpus -- [scenes] [out.jsonl]

use std::path::PathBuf;

use scenevl::corpus::{compute_stats, write_corpus, RecordBuilder};
use scenevl::graph::RelationThresholds;
use scenevl::scene::{Catalog, GenerationConfig};

fn main() -> scenevl::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenes: usize = args.next().map_or(20, |s| s.parse().expect("scene count"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("scenevl-example.jsonl"), PathBuf::from);

    let generation = GenerationConfig::default();
    let catalog = Catalog::default();
    let relations = RelationThresholds::default();
    let builder = RecordBuilder {
        generation: &generation,
        catalog: &catalog,
        relations: &relations,
        max_relations: 6,
    };
    let records = builder.build_many(1, scenes)?;
    let manifest = write_corpus(records, &out, catalog.len())?;
    println!("wrote {} records to {}", manifest.records, out.display());
    println!("sha256 {}", manifest.sha256);

    let stats = compute_stats(&out)?;
    println!(
        "{} scenes ({} train / {} val), {} rooms, {} instances",
        stats.scenes, stats.train_scenes, stats.val_scenes, stats.rooms, stats.instances
    );
    for (level, n) in &stats.descriptions {
        println!("  {level:?} descriptions: {n}");
    }
    println!("  mean spans per description: {:.2}", stats.mean_spans_per_description);
    let mut top: Vec<_> = stats.category_histogram.iter().collect();
    top.sort_by(|a, b| b.1.cmp(a.1));
    for (cat, n) in top.into_iter().take(5) {
        println!("  {:>12}: {n}", catalog.name(*cat));
    }
    for (label, n) in &stats.relation_histogram {
        println!("  {label:?}: {n}");
    }
    Ok(())
}
