//! Least-squares identification of (A, B) from Gaussian exploration, with the
//! estimation error at growing warmup lengths and the streaming ridge state
//! checked against the batch estimate.
//!
//!     cargo run --release --example system_identification -- [seed]

use lds_explore::estimation::{warmup_explore, warmup_regularizer, RidgeState};
use lds_explore::lds::{CostFamily, DisturbanceSource, LinearSystem, SeparableCost};
use nalgebra::DVector;

fn main() -> lds_explore::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let sys = LinearSystem::random(3, 2, 0.7, 1.0, 5)?;
    let cost = SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 3, 2)?;
    let noise = DisturbanceSource::gaussian(3, seed);
    let x1 = DVector::zeros(3);
    let reg = warmup_regularizer(sys.kappa(), sys.beta());

    println!("{:>8}  {:>10}  {:>10}  {:>12}", "steps", "‖Â − A‖", "‖B̂ − B‖", "err·√steps");
    for t0 in [100, 400, 1600, 6400, 25600] {
        let (est, _) = warmup_explore(&sys, &cost, &noise, t0, reg, seed, &x1)?;
        let err = (&est.a_hat - sys.a()).norm().max((&est.b_hat - sys.b()).norm());
        println!(
            "{t0:>8}  {:>10.4}  {:>10.4}  {:>12.3}",
            (&est.a_hat - sys.a()).norm(),
            (&est.b_hat - sys.b()).norm(),
            err * (t0 as f64).sqrt()
        );
    }

    // Feed the same trajectory through the streaming ridge state.
    let (batch, traj) = warmup_explore(&sys, &cost, &noise, 2000, reg, seed, &x1)?;
    let mut ridge = RidgeState::with_zero_prior(3, 2, reg)?;
    for t in 0..2000 {
        ridge.update(&traj.states[t], &traj.controls[t], &traj.states[t + 1])?;
    }
    let online = ridge.solve()?;
    println!(
        "streaming vs batch after 2000 steps: {:.2e}; Gram condition number {:.1}",
        (online.stacked() - batch.stacked()).norm(),
        ridge.condition_number()
    );
    Ok(())
}
