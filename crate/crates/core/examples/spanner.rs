//! Barycentric spanners of a cut ball in four dimensions: every sampled member
//! is written in the spanner's coordinates, and the largest coefficient is
//! compared with the approximation factor C.
//!
//!     cargo run --release --example spanner -- [C]

use std::sync::Arc;

use lds_explore::geometry::{
    barycentric_spanner, sample_members, LinearFunction, NormBudget, Region, SpannerKind, SpannerOptions,
    SublevelConstraint,
};
use nalgebra::DVector;

fn main() -> lds_explore::Result<()> {
    let c: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let d = 4;
    let center = DVector::zeros(d);
    let mut region = Region::new(NormBudget::ball(d, 1.0)?, center.clone())?;
    // Two half-space cuts through the unit ball.
    for (dir, threshold) in [(DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0]), 0.3), (DVector::from_vec(vec![0.0, -1.0, 1.0, 0.0]), 0.5)] {
        let cut = SublevelConstraint { function: Arc::new(LinearFunction { c: dir, offset: 0.0 }), threshold, meta: Default::default() };
        region.push_constraint(cut, center.clone())?;
    }

    for kind in [SpannerKind::Affine, SpannerKind::Linear] {
        let opts = SpannerOptions { c, kind, ..SpannerOptions::default() };
        let sp = barycentric_spanner(&region, &opts)?;
        let members = sample_members(&region, 500, 7, 200, 5)?;
        let mut worst: f64 = 0.0;
        for x in &members {
            worst = worst.max(sp.coefficients(x)?.amax());
        }
        println!(
            "{kind:?}: {} elements, log|det| {:.3}, {} oracle calls, {} swaps, certified {}",
            sp.elements().len(),
            sp.log_abs_det,
            sp.oracle_calls,
            sp.swaps,
            sp.all_certified
        );
        println!("  max |coefficient| over {} members: {worst:.3} (C = {c})", members.len());
        for v in sp.elements() {
            println!("  {:?}", v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<_>>());
        }
    }
    Ok(())
}
