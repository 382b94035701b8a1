use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenevl::adapt::{joint_adapt_loss, lang_adapt_loss, vision_adapt_loss, Discriminators};
use scenevl::autodiff::{BoundParams, ParamStore, Tape, Tensor, Var};
use scenevl::error::Result;

type Loss = for<'t> fn(&Discriminators, &BoundParams<'t>, &Var<'t>, &Var<'t>, f64) -> Result<Var<'t>>;

const LABELS: [f64; 4] = [0.0, 1.0, 1.0, 0.0];

fn losses() -> [(&'static str, Loss); 3] {
    [
        ("vision", |d, p, x, _, l| vision_adapt_loss(d, p, x, &LABELS, l)),
        ("language", |d, p, _, y, l| lang_adapt_loss(d, p, y, &LABELS, l)),
        ("joint", |d, p, x, y, l| joint_adapt_loss(d, p, y, x, &LABELS, l)),
    ]
}

/// Gradients of the loss for the two encoder inputs and for every discriminator parameter.
fn grads(store: &ParamStore, disc: &Discriminators, inputs: &[Tensor; 2], f: Loss, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let x = tape.var(inputs[0].clone());
    let y = tape.var(inputs[1].clone());
    // A small fixed encoder in front of the discriminator.
    let hx = x.scale(1.5).tanh();
    let hy = y.scale(0.7).tanh();
    let g = f(disc, &p, &hx, &hy, lambda).unwrap().backward().unwrap();
    let enc = [g.wrt(&x), g.wrt(&y)].concat();
    let d = p.grads(&g).concat();
    (enc, d)
}

fn setup(seed: u64) -> (ParamStore, Discriminators, [Tensor; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let disc = Discriminators::new(4, &mut store, &mut rng);
    let rand = |rng: &mut ChaCha8Rng| {
        use rand::Rng;
        Tensor::new(&[4, 4], (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let inputs = [rand(&mut rng), rand(&mut rng)];
    (store, disc, inputs)
}

#[test]
fn reversal_scales_encoder_gradients_by_minus_lambda() {
    for seed in 1..4 {
        let (store, disc, inputs) = setup(seed);
        for (name, f) in losses() {
            // lambda = -1 turns reversal into the identity, i.e. the unreversed graph.
            let (plain_enc, plain_disc) = grads(&store, &disc, &inputs, f, -1.0);
            assert!(plain_enc.iter().any(|g| g.abs() > 1e-6), "{name}: no encoder gradient");
            for lambda in [1.0, 0.5, 0.3, 2.0] {
                let (enc, d) = grads(&store, &disc, &inputs, f, lambda);
                for (a, b) in enc.iter().zip(&plain_enc) {
                    assert!((a + lambda * b).abs() <= 1e-12, "{name} lambda {lambda}: {a} vs {b}");
                }
                assert_eq!(d, plain_disc, "{name}: discriminator gradients must not be reversed");
            }
        }
    }
}

#[test]
fn zero_lambda_stops_encoder_gradients() {
    let (store, disc, inputs) = setup(9);
    for (name, f) in losses() {
        let (enc, d) = grads(&store, &disc, &inputs, f, 0.0);
        assert!(enc.iter().all(|&g| g == 0.0 || g == -0.0), "{name}");
        assert!(d.iter().any(|g| g.abs() > 0.0), "{name}");
    }
}

#[test]
fn forward_value_is_unchanged_by_reversal() {
    let (store, disc, inputs) = setup(4);
    for (_, f) in losses() {
        let value = |lambda: f64| {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let x = tape.var(inputs[0].clone());
            let y = tape.var(inputs[1].clone());
            f(&disc, &p, &x, &y, lambda).unwrap().item()
        };
        assert_eq!(value(1.0), value(-1.0));
        assert_eq!(value(0.25), value(3.0));
    }
}
