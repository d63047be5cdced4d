//! The first-stage learner zoo on a nonlinear regression task: every learner
//! trains through the same deterministic fit/predict contract.
//!
//! Run with:
//! ```bash
//! cargo run --release --example learners
//! ```

use mlss::rng::{seed_rng, standard_normal};
use mlss::*;
use nalgebra::DMatrix;

fn main() -> Result<()> {
    // Target: a smooth interaction surface with additive noise.
    let truth = |a: f64, b: f64| (2.0 * a).sin() * (1.0 + b) + 0.5 * b * b;
    let mut rng = seed_rng(8);
    let n_train = 2000;
    let n_test = 1000;
    let gen = |n: usize, rng: &mut rand_pcg::Pcg64| {
        let x = DMatrix::from_fn(n, 2, |_, _| standard_normal(rng));
        let y = DMatrix::from_fn(n, 1, |i, _| {
            truth(x[(i, 0)], x[(i, 1)]) + 0.3 * standard_normal(rng)
        });
        (x, y)
    };
    let (x_train, y_train) = gen(n_train, &mut rng);
    let (x_test, y_test) = gen(n_test, &mut rng);
    let train_mean = y_train.column(0).sum() / n_train as f64;

    println!("{:<22} {:>12}", "learner", "hold-out R2");
    for (name, spec) in [
        ("ols", LearnerSpec::ols()),
        ("polynomial deg 2", LearnerSpec::polynomial(2, true)),
        ("polynomial deg 3", LearnerSpec::polynomial(3, true)),
        ("discretized", LearnerSpec::discretized()),
        ("random_forest", LearnerSpec::random_forest().with_seed(1)),
        ("gradient_boosting", LearnerSpec::gradient_boosting().with_seed(1)),
    ] {
        let model = fit(&spec, &x_train, &y_train)?;
        let pred = model.predict(&x_test)?;
        let r2 = oos_r2(
            pred.column(0).as_slice(),
            y_test.column(0).as_slice(),
            train_mean,
        )?;
        println!("{name:<22} {r2:>12.4}");
    }

    println!("\ndeterminism: refitting reproduces predictions bit for bit;");
    let spec = LearnerSpec::random_forest().with_seed(1);
    let p1 = fit(&spec, &x_train, &y_train)?.predict(&x_test)?;
    let p2 = fit(&spec, &x_train, &y_train)?.predict(&x_test)?;
    let identical = p1.iter().zip(p2.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("random_forest refit identical: {identical}");
    Ok(())
}
