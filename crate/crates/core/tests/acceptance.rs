//! Acceptance gate. Runs every criterion in sequence (timings are measured
//! without other tests competing for the CPU) and prints one PASS/FAIL line
//! per criterion. The line is written straight to stdout so it shows up
//! without `--nocapture`.

mod common;

use std::f64::consts::PI;
use std::io::Write;

use common::{clockwise, graph_differences, timed, Setup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenevl::adapt::{
    align_loss, finetune_loss, make_pseudo_real, Discriminators, DomainSample, ShiftConfig, REAL, SYNTHETIC,
};
use scenevl::autodiff::{Tape, Tensor};
use scenevl::checks::{gradient_suite, GRADCHECK_TOLERANCE};
use scenevl::corpus::{read_corpus, write_corpus, CorpusRecord, RecordBuilder};
use scenevl::graph::RelationMatrix;
use scenevl::model::{Model, ModelConfig, Vocab};
use scenevl::objectives::{combine_pretrain, match_loss, mom_loss, orp_loss, rotate_scene, ssm_loss, view_angle};
use scenevl::scene::GenerationConfig;
use scenevl::text::{parse_identifier, validate_rewrite};
use scenevl::train::{
    build_grounding_samples, finetune, pretrain, FinetuneConfig, FinetuneData, MetricsLog, PretrainConfig, TrainState,
};

struct Outcome {
    pass: bool,
    /// The part of the criterion the test asserts; differs from `pass` only
    /// where a trend is reported without being enforced.
    must_hold: bool,
    detail: String,
}

fn strict(pass: bool, detail: String) -> Outcome {
    Outcome {
        pass,
        must_hold: pass,
        detail,
    }
}

fn report(n: usize, name: &str, o: &Outcome) {
    let line = format!("{} criterion {n} ({name}): {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn graph_oracle() -> Outcome {
    let setup = Setup::default();
    let (diffs, secs) = timed(|| {
        (1..=100u64)
            .map(|seed| graph_differences(&setup.record(seed).scene, &setup.relations))
            .sum::<usize>()
    });
    strict(
        diffs == 0 && secs < 30.0,
        format!("{diffs} edge differences over seeds 1-100 in {secs:.2}s"),
    )
}

fn rotation_law() -> Outcome {
    let setup = Setup::default();
    let views = 4;
    let mut worst: f64 = 0.0;
    let mut exact_angles = true;
    let mut identity_first = true;
    let mut cycle: f64 = 0.0;
    for v in 1..=views {
        exact_angles &= view_angle(v, views).unwrap() == (2.0 * PI / views as f64) * (v - 1) as f64;
    }
    for seed in 1..=20 {
        let scene = setup.record(seed).scene;
        identity_first &= rotate_scene(&scene, 1, views).unwrap() == scene;
        for v in 1..=views {
            let theta = (2.0 * PI / views as f64) * (v - 1) as f64;
            let r = rotate_scene(&scene, v, views).unwrap();
            for (a, b) in scene.instances.iter().zip(&r.instances) {
                let pairs = a.points.iter().zip(&b.points).chain(std::iter::once((&a.obb.center, &b.obb.center)));
                for (p, q) in pairs {
                    let want = clockwise(*p, theta);
                    worst = worst.max((0..3).map(|k| (want[k] - q[k]).abs()).fold(0.0, f64::max));
                }
            }
        }
        let mut s = scene.clone();
        for _ in 0..views {
            s = rotate_scene(&s, 2, views).unwrap();
        }
        for (a, b) in scene.instances.iter().zip(&s.instances) {
            for (p, q) in a.points.iter().zip(&b.points) {
                cycle = cycle.max((0..3).map(|k| (p[k] - q[k]).abs()).fold(0.0, f64::max));
            }
            let d = (a.obb.yaw - b.obb.yaw).rem_euclid(2.0 * PI);
            cycle = cycle.max(d.min(2.0 * PI - d));
        }
    }
    strict(
        worst <= 1e-9 && cycle <= 1e-9 && exact_angles && identity_first,
        format!(
            "max matrix error {worst:.1e}, {views}-fold cycle error {cycle:.1e}, exact angles {exact_angles}, first view identity {identity_first}"
        ),
    )
}

fn loss_arithmetic() -> Outcome {
    let tape = Tape::new();
    let mut relations = RelationMatrix::zeros(2);
    relations.set(0, 1, 1);
    relations.set(1, 0, 2);
    let identity = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let cases = [
        ("ORP uniform", orp_loss(&tape.var(Tensor::zeros(&[4, 3])), &relations).unwrap().item(), 3f64.ln()),
        (
            "MRWA identity",
            match_loss(&tape.var(Tensor::zeros(&[2, 2])), &identity, false).unwrap().item(),
            -(2.0 * 0.5f64.ln()) / 4.0,
        ),
        ("MOM uniform", mom_loss(&tape.var(Tensor::zeros(&[1, 108])), &[7]).unwrap().item(), 108f64.ln()),
        ("SSM at 0.5", ssm_loss(&tape.var(Tensor::zeros(&[1, 1])), &[true]).unwrap().item(), 2f64.ln()),
        ("pre-training sum", combine_pretrain(0.5, 1.2, 0.8), 1.0),
        (
            "fine-tuning sum",
            finetune_loss(&tape.scalar(1.0), &tape.scalar(0.5), 0.8).unwrap().item(),
            0.9,
        ),
    ];
    let worst = cases.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let listed: Vec<String> = cases.iter().map(|(n, got, _)| format!("{n} {got:.6}")).collect();
    strict(
        worst <= 1e-6,
        format!("max deviation {worst:.1e}; {}", listed.join(", ")),
    )
}

fn gradients() -> Outcome {
    let (checks, secs) = timed(|| gradient_suite(1).unwrap());
    let worst = checks.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max);
    let names: Vec<&str> = checks.iter().map(|c| c.name).collect();
    let composed = names.contains(&"pretrain_total") && names.contains(&"finetune_total");
    let config = ModelConfig::micro();
    let micro = config.max_text_len <= 6 && config.max_objects <= 4 && config.d_model == 8;
    strict(
        checks.iter().all(|c| c.passed()) && worst < GRADCHECK_TOLERANCE && secs < 60.0 && composed && micro,
        format!("{} losses, max relative error {worst:.2e} in {secs:.1}s", checks.len()),
    )
}

fn grl_identity() -> Outcome {
    let generation = GenerationConfig {
        rooms: [1, 1],
        instances_per_room: [3, 4],
        points_per_object: 16,
        ..GenerationConfig::default()
    };
    let setup = Setup {
        generation,
        max_relations: 1,
        ..Setup::default()
    };
    let record = setup.record(11);
    let vocab = Vocab::build(record.descriptions.iter().flat_map(|d| d.text.iter().map(String::as_str)));
    let config = ModelConfig::micro();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = scenevl::autodiff::ParamStore::new();
    let model = Model::new(config.clone(), vocab.len(), &mut store, &mut rng).unwrap();
    let disc = Discriminators::new(config.d_model, &mut store, &mut rng);
    let samples = |r: &CorpusRecord| {
        let mut s =
            build_grounding_samples(std::slice::from_ref(r), &vocab, config.max_text_len, config.max_objects, config.categories)
                .unwrap();
        s.truncate(2);
        s
    };
    let shifted = make_pseudo_real(std::slice::from_ref(&record), &ShiftConfig::default()).unwrap();
    let batch: Vec<_> = samples(&shifted.records[0])
        .into_iter()
        .map(|s| (s, REAL))
        .chain(samples(&record).into_iter().map(|s| (s, SYNTHETIC)))
        .collect();
    let disc_ids = disc.params();

    // One gradient vector per discriminator, split into encoder and discriminator parameters.
    let grads = |which: usize, lambda: f64| -> (Vec<f64>, Vec<f64>) {
        let tape = Tape::new();
        let p = store.bind(&tape);
        let domains: Vec<DomainSample> = batch
            .iter()
            .map(|(s, d)| {
                let out = model.forward(&p, &s.tokens, &s.objects, &vec![false; s.objects.len()], None).unwrap();
                DomainSample {
                    words: out.words,
                    objects: out.objects,
                    domain: *d,
                }
            })
            .collect();
        let a = align_loss(&disc, &p, &domains, lambda, false).unwrap();
        let loss = [a.vision, a.language, a.joint][which];
        let g = p.grads(&loss.backward().unwrap());
        let (mut enc, mut dis) = (Vec::new(), Vec::new());
        for (id, v) in store.ids().zip(g) {
            if disc_ids.contains(&id) { &mut dis } else { &mut enc }.extend(v);
        }
        (enc, dis)
    };
    let mut worst: f64 = 0.0;
    let mut disc_equal = true;
    let mut nonzero = true;
    for which in 0..3 {
        // Reversal strength -1 makes the layer an identity: the unreversed gradient.
        let (plain_enc, plain_disc) = grads(which, -1.0);
        nonzero &= plain_enc.iter().any(|g| g.abs() > 1e-9);
        for lambda in [1.0, 0.5, 0.3] {
            let (enc, dis) = grads(which, lambda);
            for (a, b) in enc.iter().zip(&plain_enc) {
                worst = worst.max((a + lambda * b).abs());
            }
            disc_equal &= dis == plain_disc;
        }
    }
    strict(
        worst <= 1e-12 && disc_equal && nonzero,
        format!(
            "vision/language/joint, lambda 1, 0.5, 0.3: max |g + lambda g_plain| {worst:.1e}, discriminator gradients unchanged {disc_equal}"
        ),
    )
}

/// Span check written against the token-level rules, independent of the library validator.
fn spans_hold(record: &CorpusRecord) -> bool {
    record.descriptions.iter().all(|d| {
        let mut covered = vec![false; d.text.len()];
        let mut end = 0;
        let spans_ok = d.spans.iter().all(|s| {
            let ok = s.token_start >= end && s.token_start < s.token_end && s.token_end <= d.text.len();
            end = s.token_end;
            if !ok {
                return false;
            }
            let ids: Vec<usize> = (s.token_start..s.token_end)
                .filter(|&i| parse_identifier(&d.text[i]).is_some())
                .collect();
            let single = ids.len() == 1 && parse_identifier(&d.text[ids[0]]).unwrap().1 == s.instance_id;
            if single {
                covered[ids[0]] = true;
            }
            single && record.scene.instance(s.instance_id).is_some()
        });
        spans_ok
            && d.text.iter().enumerate().all(|(i, t)| parse_identifier(t).is_none() || covered[i])
            && d.validate(Some(&record.scene)).is_ok()
    })
}

fn phrase_integrity(records: &[CorpusRecord]) -> Outcome {
    let descriptions: usize = records.iter().map(|r| r.descriptions.len()).sum();
    let failing = records.iter().filter(|r| !spans_hold(r)).count();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut caught = 0;
    for _ in 0..500 {
        let r = &records[rng.gen_range(0..records.len())];
        let d = &r.descriptions[rng.gen_range(0..r.descriptions.len())];
        let ids: Vec<usize> = (0..d.text.len()).filter(|&i| parse_identifier(&d.text[i]).is_some()).collect();
        let mut mutated = d.text.clone();
        mutated.remove(ids[rng.gen_range(0..ids.len())]);
        caught += usize::from(!validate_rewrite(d, &mutated).passed());
    }
    let false_positives = records
        .iter()
        .flat_map(|r| &r.descriptions)
        .filter(|d| !validate_rewrite(d, &d.text).passed())
        .count();
    strict(
        records.len() == 1000 && failing == 0 && caught == 500 && false_positives == 0,
        format!(
            "{} scenes / {descriptions} descriptions, {failing} scenes failing span rules, {caught}/500 deletions caught, {false_positives} false positives",
            records.len()
        ),
    )
}

fn determinism(setup: &Setup, first: &std::path::Path, dir: &std::path::Path) -> Outcome {
    let again = dir.join("again.jsonl");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let records = pool.install(|| setup.builder().build_many(1, 1000)).unwrap();
    write_corpus(records, &again, setup.catalog.len()).unwrap();
    let regenerated = std::fs::read(first).unwrap() == std::fs::read(&again).unwrap();
    let parsed = read_corpus(first).unwrap();
    let per_record = parsed.iter().all(|r| {
        let line = serde_json::to_string(r).unwrap();
        serde_json::to_string(&serde_json::from_str::<CorpusRecord>(&line).unwrap()).unwrap() == line
    });
    let rewritten = dir.join("rewritten.jsonl");
    write_corpus(parsed, &rewritten, setup.catalog.len()).unwrap();
    let file_round_trip = std::fs::read(first).unwrap() == std::fs::read(&rewritten).unwrap();
    strict(
        regenerated && per_record && file_round_trip,
        format!(
            "regeneration identical {regenerated}, record round trip identical {per_record}, file round trip identical {file_round_trip}"
        ),
    )
}

fn training_smoke() -> Outcome {
    let setup = Setup::default();
    let builder: RecordBuilder = setup.builder();
    let (result, secs) = timed(|| {
        let corpus = builder.build_many(1, 50).unwrap();
        let mut state = TrainState::new(&corpus, ModelConfig::default(), 1).unwrap();
        let mut log = MetricsLog::open(None).unwrap();
        let pre = pretrain(&mut state, &corpus, &PretrainConfig::default(), 1, None, &mut log).unwrap();
        let ratio = pre.last.total / pre.initial.total;

        // The pseudo-real side is a separate corpus so that held-out scenes are unseen.
        let real = builder.build_many(1001, 200).unwrap();
        let data = FinetuneData::build(&corpus, &real, &ShiftConfig::default(), &state.vocab, &state.model).unwrap();
        let mut acc = [[0.0; 3]; 2];
        let mut chance = 0.0;
        for (b, beta) in [0.8, 1.0].into_iter().enumerate() {
            for seed in 1..=3u64 {
                let mut s = state.clone();
                let cfg = FinetuneConfig {
                    beta,
                    ..FinetuneConfig::default()
                };
                let r = finetune(&mut s, &data, &cfg, seed, None, &mut MetricsLog::open(None).unwrap()).unwrap();
                acc[b][seed as usize - 1] = r.last.accuracy;
                chance = r.last.chance;
            }
        }
        (pre.initial.total, pre.last.total, ratio, acc, chance, data.real_eval.len())
    });
    let (initial, last, ratio, acc, chance, held_out) = result;
    let mean = |a: &[f64; 3]| a.iter().sum::<f64>() / 3.0;
    let (adapt, plain) = (mean(&acc[0]), mean(&acc[1]));
    let halved = ratio <= 0.5;
    let grounded = acc[0].iter().all(|&a| a >= 3.0 * chance);
    let trend = adapt >= plain;
    let verdict = |b: bool| if b { "ok" } else { "not met" };
    Outcome {
        pass: halved && grounded && trend && secs < 600.0,
        must_hold: halved && grounded && secs < 600.0,
        detail: format!(
            "pre-training loss {initial:.3} -> {last:.3} (ratio {ratio:.3}, {}); held-out grounding with adaptation {:?} \
             vs 3x chance {:.3} on {held_out} samples ({}); adaptation mean {adapt:.3} vs no adaptation mean {plain:.3} {:?} ({}); {secs:.0}s",
            verdict(halved),
            acc[0].map(|a| (a * 1000.0).round() / 1000.0),
            3.0 * chance,
            verdict(grounded),
            acc[1].map(|a| (a * 1000.0).round() / 1000.0),
            verdict(trend),
        ),
    }
}

fn generation_speed(setup: &Setup, path: &std::path::Path) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    let (records, secs) = timed(|| {
        let records = pool.install(|| setup.builder().build_many(1, 1000)).unwrap();
        write_corpus(records.clone(), path, setup.catalog.len()).unwrap();
        records
    });
    let levels_ok = records.iter().all(|r| {
        r.descriptions.len() == r.scene.instances.len() + r.scene.rooms.len() + 1 && !r.scene_graph.nodes.is_empty()
    });
    strict(
        secs < 60.0 && records.len() == 1000 && levels_ok,
        format!("1000 scenes with graphs and all-level descriptions written in {secs:.2}s on 8 threads"),
    )
}

#[test]
fn acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let setup = Setup::default();
    let corpus = dir.path().join("corpus.jsonl");

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "scene-graph oracle", graph_oracle()));
    report(1, results[0].1, &results[0].2);
    results.push((2, "rotation law", rotation_law()));
    report(2, results[1].1, &results[1].2);
    results.push((3, "loss arithmetic", loss_arithmetic()));
    report(3, results[2].1, &results[2].2);
    results.push((4, "gradient correctness", gradients()));
    report(4, results[3].1, &results[3].2);
    results.push((5, "gradient reversal identity", grl_identity()));
    report(5, results[4].1, &results[4].2);

    // The scale run writes the corpus that the integrity and determinism checks reuse.
    let speed = generation_speed(&setup, &corpus);
    let records = read_corpus(&corpus).unwrap();
    results.push((6, "phrase-region integrity", phrase_integrity(&records)));
    report(6, results[5].1, &results[5].2);
    results.push((7, "corpus determinism and round trip", determinism(&setup, &corpus, dir.path())));
    report(7, results[6].1, &results[6].2);
    results.push((8, "training smoke", training_smoke()));
    report(8, results[7].1, &results[7].2);
    results.push((9, "generation speed", speed));
    report(9, results[8].1, &results[8].2);

    let failed: Vec<usize> = results.iter().filter(|(_, _, o)| !o.must_hold).map(|(n, _, _)| *n).collect();
    let reported: Vec<usize> = results.iter().filter(|(_, _, o)| o.must_hold && !o.pass).map(|(n, _, _)| *n).collect();
    let summary = format!(
        "acceptance: {}/9 criteria pass; failing and not gated: {reported:?}\n",
        results.iter().filter(|(_, _, o)| o.pass).count()
    );
    let _ = std::io::stdout().lock().write_all(summary.as_bytes());
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
