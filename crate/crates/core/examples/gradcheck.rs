//! The autodiff engine in small: a hand-built graph with gradient reversal,
//! then the finite-difference check of every training loss on the micro model.
//!
//!     cargo run --release --example gradcheck

use scenevl::autodiff::{Tape, Tensor};
use scenevl::checks::{gradient_suite, GRADCHECK_TOLERANCE};

fn main() -> scenevl::Result<()> {
    let tape = Tape::new();
    let x = tape.var(Tensor::new(&[2, 2], vec![0.5, -1.0, 2.0, 0.25])?);
    let w = tape.var(Tensor::new(&[2, 1], vec![1.5, -0.5])?);
    let plain = x.matmul(&w)?.tanh().sum();
    let reversed = x.grl(0.5)?.matmul(&w)?.tanh().sum();
    let (g, r) = (plain.backward()?, reversed.backward()?);
    println!("d/dx plain     {:?}", g.wrt(&x));
    println!("d/dx reversed  {:?}", r.wrt(&x));
    println!("d/dw both      {:?} {:?}", g.wrt(&w), r.wrt(&w));

    let started = std::time::Instant::now();
    let checks = gradient_suite(1)?;
    println!("\n{:<16} {:>12} {:>12}  worst parameter", "loss", "rel error", "abs error");
    for c in &checks {
        println!(
            "{:<16} {:>12.2e} {:>12.2e}  {}",
            c.name,
            c.report.max_rel_error,
            c.report.max_abs_error,
            c.report.worst.as_deref().unwrap_or("-")
        );
    }
    let ok = checks.iter().all(|c| c.passed());
    println!(
        "{} at tolerance {GRADCHECK_TOLERANCE:e} in {:.1}s",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
