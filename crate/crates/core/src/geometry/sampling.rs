//! Random members of a region by hit-and-run.

use nalgebra::DVector;
use rand::Rng;

use crate::error::Result;
use crate::geometry::region::Region;
use crate::rng::{self, StreamRng};

/// `n` approximately uniform members, by hit-and-run from the witness with
/// `burn_in` discarded steps and `thin` steps between samples.
pub fn sample_members(region: &Region, n: usize, seed: u64, burn_in: usize, thin: usize) -> Result<Vec<DVector<f64>>> {
    let mut r = rng::stream(seed, &[rng::label::SPANNER, 0x6872]);
    let mut x = region.witness.clone();
    let mut out = Vec::with_capacity(n);
    let thin = thin.max(1);
    let mut step = 0;
    while out.len() < n {
        x = hit_and_run_step(region, &x, &mut r)?;
        step += 1;
        if step > burn_in && (step - burn_in) % thin == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

fn hit_and_run_step(region: &Region, x: &DVector<f64>, r: &mut StreamRng) -> Result<DVector<f64>> {
    let d = region.dim();
    let mut dir = DVector::zeros(d);
    rng::fill_standard_normal(r, dir.as_mut_slice());
    let norm = dir.norm();
    if norm == 0.0 {
        return Ok(x.clone());
    }
    dir /= norm;
    let reach = 2.0 * region.radius() + x.norm();
    let forward = chord_end(region, x, &dir, reach)?;
    let backward = chord_end(region, x, &(-&dir), reach)?;
    let t = r.random_range(-backward..=forward.max(-backward + f64::MIN_POSITIVE));
    Ok(x + dir * t)
}

fn chord_end(region: &Region, x: &DVector<f64>, dir: &DVector<f64>, reach: f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, reach);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if region.contains(&(x + dir * mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
