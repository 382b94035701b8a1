//! Object, room and scene descriptions with their phrase spans, plus a
//! paraphrase that keeps every identifier and a corrupted one that does not.
//!
//!     cargo run --example descriptions -- [seed]

use scenevl::corpus::RecordBuilder;
use scenevl::graph::RelationThresholds;
use scenevl::scene::{Catalog, GenerationConfig};
use scenevl::text::{apply_rewriter, parse_identifier, validate_rewrite, Level, SynonymSwap};

fn main() -> scenevl::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed"));
    let generation = GenerationConfig {
        rooms: [1, 2],
        instances_per_room: [3, 4],
        ..GenerationConfig::default()
    };
    let catalog = Catalog::default();
    let relations = RelationThresholds::default();
    let record = RecordBuilder {
        generation: &generation,
        catalog: &catalog,
        relations: &relations,
        max_relations: 3,
    }
    .build(seed)?;

    for level in Level::ALL {
        let d = record.descriptions_at(level).next().expect("every level is described");
        println!("[{level:?}] {}", d.text.join(" "));
        for s in &d.spans {
            println!("    tokens {}..{} -> instance {}", s.token_start, s.token_end, s.instance_id);
        }
    }

    let d = &record.descriptions[0];
    let (rewritten, report) = apply_rewriter(d, &SynonymSwap::new(seed))?;
    println!("\nparaphrase: {}", rewritten.text.join(" "));
    println!("identifiers preserved: {}", report.passed());

    let mut broken = d.text.clone();
    let first = broken.iter().position(|t| parse_identifier(t).is_some()).expect("an identifier");
    let dropped = broken.remove(first);
    let report = validate_rewrite(d, &broken);
    println!("after deleting `{dropped}`: missing ids {:?}", report.missing);
    Ok(())
}
