//! Pre-trains briefly, shifts a second corpus into the pseudo-real domain and
//! fine-tunes for grounding with and without the domain discriminators.
//!
//!     cargo run --release --example finetune -- [finetune steps]

use scenevl::adapt::ShiftConfig;
use scenevl::corpus::RecordBuilder;
use scenevl::graph::RelationThresholds;
use scenevl::model::ModelConfig;
use scenevl::scene::{Catalog, GenerationConfig};
use scenevl::train::{finetune, pretrain, FinetuneConfig, FinetuneData, MetricsLog, PretrainConfig, TrainState};

fn main() -> scenevl::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(300, |s| s.parse().expect("step count"));
    let generation = GenerationConfig::default();
    let catalog = Catalog::default();
    let relations = RelationThresholds::default();
    let builder = RecordBuilder {
        generation: &generation,
        catalog: &catalog,
        relations: &relations,
        max_relations: 6,
    };
    let synthetic = builder.build_many(1, 50)?;
    let real = builder.build_many(1001, 100)?;

    let model = ModelConfig {
        d_model: 32,
        ff_width: 64,
        ..ModelConfig::default()
    };
    let mut state = TrainState::new(&synthetic, model, 1)?;
    let pre = PretrainConfig {
        steps: 50,
        ..PretrainConfig::default()
    };
    pretrain(&mut state, &synthetic, &pre, 1, None, &mut MetricsLog::open(None)?)?;

    let data = FinetuneData::build(&synthetic, &real, &ShiftConfig::default(), &state.vocab, &state.model)?;
    println!(
        "{} synthetic, {} pseudo-real training, {} pseudo-real held-out samples",
        data.synthetic.len(),
        data.real_train.len(),
        data.real_eval.len()
    );
    for beta in [0.8, 1.0] {
        let mut s = state.clone();
        let cfg = FinetuneConfig {
            steps,
            beta,
            ..FinetuneConfig::default()
        };
        let r = finetune(&mut s, &data, &cfg, 1, None, &mut MetricsLog::open(None)?)?;
        let last = r.history.iter().rev().find(|m| m.kind == "train").expect("trained");
        println!(
            "beta {beta}: held-out accuracy {:.3} -> {:.3} (chance {:.3}); last losses {:?}",
            r.initial.accuracy, r.last.accuracy, r.last.chance, last.losses
        );
    }
    Ok(())
}
