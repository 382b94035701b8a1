//! Pre-trains a small model on a generated corpus and prints the six losses as they fall.
//!
//!     cargo run --release --example pretrain -- [steps]

use scenevl::corpus::RecordBuilder;
use scenevl::graph::RelationThresholds;
use scenevl::model::ModelConfig;
use scenevl::scene::{Catalog, GenerationConfig};
use scenevl::train::{pretrain, MetricsLog, PretrainConfig, TrainState};

fn main() -> scenevl::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(60, |s| s.parse().expect("step count"));
    let generation = GenerationConfig::default();
    let catalog = Catalog::default();
    let relations = RelationThresholds::default();
    let records = RecordBuilder {
        generation: &generation,
        catalog: &catalog,
        relations: &relations,
        max_relations: 6,
    }
    .build_many(1, 50)?;

    let model = ModelConfig {
        d_model: 32,
        ff_width: 64,
        ..ModelConfig::default()
    };
    let mut state = TrainState::new(&records, model, 1)?;
    println!("vocabulary {} words, {} parameters", state.vocab.len(), state.store.num_scalars());
    let cfg = PretrainConfig {
        steps,
        ..PretrainConfig::default()
    };
    let report = pretrain(&mut state, &records, &cfg, 1, None, &mut MetricsLog::open(None)?)?;

    println!("step  {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "mlm", "mom", "ssm", "orp", "mrwa", "vrwa", "total");
    for rec in report.history.iter().filter(|r| r.kind == "train" && r.step % 10 == 0) {
        let l = &rec.losses;
        println!(
            "{:>4}  {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            rec.step, l["mlm"], l["mom"], l["ssm"], l["orp"], l["mrwa"], l["vrwa"], l["total"]
        );
    }
    println!(
        "fixed evaluation batch: {:.3} -> {:.3} (ratio {:.3})",
        report.initial.total,
        report.last.total,
        report.last.total / report.initial.total
    );
    Ok(())
}
