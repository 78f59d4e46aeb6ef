//! The idealized cost C(M|A,B) of a disturbance-feedback policy: quadrature
//! against Monte Carlo, the gradient against finite differences, and the
//! minimizer over the norm-budget class.
//!
//!     cargo run --release --example surrogate_cost

use std::sync::Arc;

use lds_explore::control::comparator;
use lds_explore::dfc::{Expectation, PolicyClassSpec, SurrogateCost, SurrogateModel};
use lds_explore::lds::{ConvexCost, CostFamily, LinearSystem, SeparableCost};

fn main() -> lds_explore::Result<()> {
    let sys = LinearSystem::random(2, 2, 0.6, 1.0, 11)?;
    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::new(
        CostFamily::Huber { delta: 1.0 },
        2,
        2,
        vec![1.0, 1.0, 0.5, 0.5],
        vec![0.5, -0.5, 0.0, 0.0],
    )?);
    let spec = PolicyClassSpec::new(3, 1.0, 2, 2)?;
    let model = SurrogateModel::new(sys.a(), sys.b(), spec.h)?;
    let exact = SurrogateCost::new(model.clone(), cost.clone(), Expectation::Quadrature)?;

    let mut m = spec.zero_policy();
    m.block_mut(0)[(0, 0)] = -0.3;
    m.block_mut(1)[(1, 0)] = 0.2;
    let q = exact.value_grad(&m)?;
    println!("quadrature: C(M) = {:.6}", q.value);
    for samples in [256, 4096, 65536] {
        let mc = SurrogateCost::new(model.clone(), cost.clone(), Expectation::MonteCarlo { samples, seed: 1 })?.value(&m)?;
        println!("monte carlo ({samples:>5}): {:.6} ± {:.6}", mc.value, mc.stderr);
    }

    let grad = q.grad.expect("gradient requested").flatten();
    let x = m.flatten();
    let h = 1e-6;
    let mut fd_err: f64 = 0.0;
    for i in 0..x.len() {
        let mut e = x.clone();
        e[i] += h;
        let up = exact.value(&m.unflatten_like(e.as_slice())?)?.value;
        e[i] -= 2.0 * h;
        let down = exact.value(&m.unflatten_like(e.as_slice())?)?.value;
        fd_err = fd_err.max(((up - down) / (2.0 * h) - grad[i]).abs());
    }
    println!("max |gradient − central difference| = {fd_err:.2e}");

    let best = comparator(sys.a(), sys.b(), cost.clone(), &spec, Expectation::Quadrature)?;
    let zero = exact.value(&spec.zero_policy())?.value;
    println!("zero policy {zero:.6}, minimizer {:.6}, budget used {:.3} of {}", best.value, best.policy.norm_budget(), spec.g);
    Ok(())
}
