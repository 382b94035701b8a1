//! Minimal dense-array engine with reverse-mode differentiation.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, grad_check_combination, grad_check_inputs, grad_check_shared, grad_check_with_step, relative_error, GradCheckReport, LossFn, MultiLossFn, SharedTarget,
    DEFAULT_STEP,
};
pub use optim::AdamW;
pub use params::{BoundParams, ParamId, ParamStore};
pub use tape::{concat_cols, concat_rows, Gradients, Tape, Var};
pub use tensor::Tensor;

pub use tape::{log_sigmoid, sigmoid};

use crate::error::{Error, Result};

/// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
pub fn linear<'t>(x: &Var<'t>, w: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
    x.matmul(w)?.add_row(b)
}

pub fn embedding<'t>(table: &Var<'t>, ids: &[usize]) -> Result<Var<'t>> {
    table.gather_rows(ids)
}

/// Mean over rows of `-sum_k target[k] * log_softmax(logits)[k]`.
pub fn cross_entropy<'t>(logits: &Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    let (r, c) = logits.dims2();
    if target.dims2() != (r, c) {
        return Err(Error::shape("cross_entropy", &logits.shape(), target.shape()));
    }
    if r == 0 {
        return Ok(logits.tape().scalar(0.0));
    }
    let t = logits.tape().constant(target.clone().reshape(&logits.shape())?);
    Ok(logits.log_softmax().mul(&t)?.sum().scale(-1.0 / r as f64))
}

/// Cross-entropy against class indices, averaged over rows.
pub fn cross_entropy_index<'t>(logits: &Var<'t>, targets: &[usize]) -> Result<Var<'t>> {
    let (r, c) = logits.dims2();
    if targets.len() != r {
        return Err(Error::shape("cross_entropy_index", &logits.shape(), &[targets.len()]));
    }
    let mut onehot = Tensor::zeros(&[r, c]);
    for (i, &k) in targets.iter().enumerate() {
        if k >= c {
            return Err(Error::shape("cross_entropy_index", &[r, c], &[k]));
        }
        onehot.set(i, k, 1.0);
    }
    cross_entropy(logits, &onehot)
}

/// Mean binary cross-entropy of probabilities against labels in `[0, 1]`.
pub fn binary_cross_entropy<'t>(prob: &Var<'t>, labels: &Tensor) -> Result<Var<'t>> {
    if prob.with_value(|p| p.numel()) != labels.numel() {
        return Err(Error::shape("binary_cross_entropy", &prob.shape(), labels.shape()));
    }
    let n = labels.numel();
    if n == 0 {
        return Ok(prob.tape().scalar(0.0));
    }
    let tape = prob.tape();
    let y = tape.constant(labels.clone().reshape(&prob.shape())?);
    let not_y = tape.constant(Tensor::new(&prob.shape(), labels.data().iter().map(|v| 1.0 - v).collect())?);
    let pos = prob.log().mul(&y)?;
    let neg = prob.neg().add_const(1.0).log().mul(&not_y)?;
    Ok(pos.add(&neg)?.sum().scale(-1.0 / n as f64))
}

/// Mean binary cross-entropy evaluated from logits, stable for large magnitudes.
pub fn bce_with_logits<'t>(logits: &Var<'t>, labels: &Tensor) -> Result<Var<'t>> {
    if logits.with_value(|p| p.numel()) != labels.numel() {
        return Err(Error::shape("bce_with_logits", &logits.shape(), labels.shape()));
    }
    let n = labels.numel();
    if n == 0 {
        return Ok(logits.tape().scalar(0.0));
    }
    let tape = logits.tape();
    let y = tape.constant(labels.clone().reshape(&logits.shape())?);
    let not_y = tape.constant(Tensor::new(&logits.shape(), labels.data().iter().map(|v| 1.0 - v).collect())?);
    let pos = logits.log_sigmoid().mul(&y)?;
    let neg = logits.neg().log_sigmoid().mul(&not_y)?;
    Ok(pos.add(&neg)?.sum().scale(-1.0 / n as f64))
}

#[cfg(test)]
mod tests {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Reduces an op output to a scalar with a fixed random weighting so every
    /// output entry reaches the gradient.
    fn weighted<'t>(out: Var<'t>, seed: u64) -> Result<Var<'t>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(&out.shape(), &mut rng);
        Ok(out.mul(&out.tape().constant(w))?.sum())
    }

    fn check(inputs: &[Tensor], f: impl for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>) -> f64 {
        let report = grad_check_inputs(inputs, |_, v| weighted(f(v)?, 99)).unwrap();
        report.max_rel_error
    }

    #[test]
    fn every_op_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[3, 4], &mut rng);
        let m = random(&[4, 2], &mut rng);
        let row = random(&[4], &mut rng);
        let s = random(&[1], &mut rng);
        let pos = Tensor::new(&[3, 4], a.data().iter().map(|v| v.abs() + 0.5).collect()).unwrap();
        let prob = Tensor::new(&[3, 4], a.data().iter().map(|v| 0.5 + 0.4 * v).collect()).unwrap();
        let target = {
            let mut t = random(&[3, 4], &mut rng);
            t.data_mut().iter_mut().for_each(|v| *v = v.abs());
            for i in 0..3 {
                let z: f64 = t.row(i).iter().sum();
                for j in 0..4 {
                    let x = t.get(i, j) / z;
                    t.set(i, j, x);
                }
            }
            t
        };
        let labels = Tensor::new(&[3, 4], (0..12).map(|i| (i % 2) as f64).collect()).unwrap();

        let cases: Vec<(&str, f64)> = vec![
            ("matmul", check(&[a.clone(), m.clone()], |v| v[0].matmul(&v[1]))),
            ("transpose", check(&[a.clone()], |v| v[0].transpose())),
            ("add", check(&[a.clone(), b.clone()], |v| v[0].add(&v[1]))),
            ("sub", check(&[a.clone(), b.clone()], |v| v[0].sub(&v[1]))),
            ("mul", check(&[a.clone(), b.clone()], |v| v[0].mul(&v[1]))),
            ("add_row", check(&[a.clone(), row.clone()], |v| v[0].add_row(&v[1]))),
            ("mul_row", check(&[a.clone(), row.clone()], |v| v[0].mul_row(&v[1]))),
            ("scale_by", check(&[a.clone(), s.clone()], |v| v[0].scale_by(&v[1]))),
            ("add_scalar_var", check(&[a.clone(), s.clone()], |v| v[0].add_scalar_var(&v[1]))),
            ("mean", check(&[a.clone()], |v| Ok(v[0].mean()))),
            ("mean_rows", check(&[a.clone()], |v| v[0].mean_rows())),
            ("concat_rows", check(&[a.clone(), b.clone()], |v| concat_rows(&[v[0], v[1]]))),
            ("concat_cols", check(&[a.clone(), b.clone()], |v| concat_cols(&[v[0], v[1]]))),
            ("slice_rows", check(&[a.clone()], |v| v[0].slice_rows(1, 3))),
            ("slice_cols", check(&[a.clone()], |v| v[0].slice_cols(1, 3))),
            ("gather_rows", check(&[a.clone()], |v| v[0].gather_rows(&[2, 0, 2]))),
            ("softmax", check(&[a.clone()], |v| Ok(v[0].softmax()))),
            (
                "masked_softmax",
                check(&[a.clone()], |v| {
                    let vis: Vec<bool> = (0..12).map(|i| i % 4 != 1).collect();
                    v[0].masked_softmax(&vis)
                }),
            ),
            ("log_softmax", check(&[a.clone()], |v| Ok(v[0].log_softmax()))),
            ("layer_norm", check(&[a.clone()], |v| Ok(v[0].layer_norm(1e-5)))),
            ("gelu", check(&[a.clone()], |v| Ok(v[0].gelu()))),
            ("sigmoid", check(&[a.clone()], |v| Ok(v[0].sigmoid()))),
            ("tanh", check(&[a.clone()], |v| Ok(v[0].tanh()))),
            ("log", check(&[pos.clone()], |v| Ok(v[0].log()))),
            ("log_sigmoid", check(&[a.clone()], |v| Ok(v[0].log_sigmoid()))),
            ("embedding", check(&[a.clone()], |v| embedding(&v[0], &[1, 1, 0]))),
            ("cross_entropy", check(&[a.clone()], |v| cross_entropy(&v[0], &target))),
            ("binary_cross_entropy", check(&[prob.clone()], |v| binary_cross_entropy(&v[0], &labels))),
            ("bce_with_logits", check(&[a.clone()], |v| bce_with_logits(&v[0], &labels))),
        ];
        for (name, err) in cases {
            assert!(err < 1e-6, "{name}: relative error {err}");
        }
    }

    #[test]
    fn softmax_of_zero_row_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 4]));
        assert_eq!(x.softmax().value().data(), &[0.25; 4]);
    }

    #[test]
    fn cross_entropy_vanishes_for_confident_correct_logits() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::new(&[1, 3], vec![80.0, 0.0, 0.0]).unwrap());
        let loss = cross_entropy_index(&logits, &[0]).unwrap();
        assert!(loss.item().abs() < 1e-30);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 2]));
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn grl_is_identity_forward_and_negates_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[3, 4], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let grad_through = |lambda: Option<f64>| {
            let tape = Tape::new();
            let xv = tape.var(x.clone());
            let h = match lambda {
                Some(l) => xv.grl(l).unwrap(),
                None => xv,
            };
            assert_eq!(h.value(), x);
            let loss = h.tanh().mul(&tape.constant(w.clone())).unwrap().sum();
            loss.backward().unwrap().wrt(&xv)
        };
        let plain = grad_through(None);
        let one = grad_through(Some(1.0));
        let half = grad_through(Some(0.5));
        for k in 0..plain.len() {
            assert_eq!(one[k], -plain[k]);
            assert!((half[k] + 0.5 * plain[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_accumulation_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[3, 4], &mut rng);
        let g = |which: u8| {
            let tape = Tape::new();
            let xv = tape.var(x.clone());
            let f = xv.tanh().sum();
            let h = xv.mul(&xv).unwrap().mean();
            let loss = match which {
                0 => f,
                1 => h,
                _ => f.add(&h).unwrap(),
            };
            loss.backward().unwrap().wrt(&xv)
        };
        let (gf, gh, gs) = (g(0), g(1), g(2));
        for k in 0..gf.len() {
            assert!((gs[k] - gf[k] - gh[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        store.add_glorot("w", 3, 4, &mut rng);
        store.add("b", Tensor::zeros(&[4]));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        store.save(&path, "{\"k\":1}").unwrap();
        let (loaded, meta) = ParamStore::load(&path).unwrap();
        assert_eq!(meta, "{\"k\":1}");
        assert_eq!(loaded.iter().collect::<Vec<_>>(), store.iter().collect::<Vec<_>>());
    }

    #[test]
    fn adamw_descends_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![3.0, -2.0]));
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..300 {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let loss = p[id].mul(&p[id]).unwrap().sum();
            let grads = p.grads(&loss.backward().unwrap());
            opt.step(&mut store, &grads).unwrap();
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }
}
