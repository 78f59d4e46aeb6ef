//! C-approximate barycentric spanners by determinant swapping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::geometry::ellipsoid::{linear_optimize, OptimizeOptions};
use crate::geometry::region::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpannerKind {
    /// `v₀ … v_d` with every member `v₀ + Σ λ_i (v_i − v₀)`.
    Affine,
    /// `v₁ … v_d` with every member `Σ λ_i v_i`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpannerOptions {
    pub c: f64,
    pub kind: SpannerKind,
    pub optimize: OptimizeOptions,
    /// Cap on oracle calls is `c_span · d² · max(1, log_C d)` plus the `2d`
    /// calls of the initial pass.
    pub c_span: f64,
}

impl Default for SpannerOptions {
    fn default() -> Self {
        Self { c: 2.0, kind: SpannerKind::Affine, optimize: OptimizeOptions::default(), c_span: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpannerSet {
    pub kind: SpannerKind,
    pub c: f64,
    /// `v₀` (the origin for linear spanners).
    pub origin: DVector<f64>,
    /// `v₁ … v_d`.
    pub points: Vec<DVector<f64>>,
    /// Columns `v_i − v₀`.
    pub basis: DMatrix<f64>,
    pub log_abs_det: f64,
    pub det_sign: f64,
    pub oracle_calls: usize,
    pub swaps: usize,
    /// Whether every linear optimization certified its accuracy target.
    pub all_certified: bool,
}

impl SpannerSet {
    /// Solve `point − v₀ = Σ λ_i (v_i − v₀)`.
    pub fn coefficients(&self, point: &DVector<f64>) -> Result<DVector<f64>> {
        spanner_coefficients(self, point)
    }

    /// Spanner elements in execution order: `v₀` first for affine spanners.
    pub fn elements(&self) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.points.len() + 1);
        if self.kind == SpannerKind::Affine {
            out.push(self.origin.clone());
        }
        out.extend(self.points.iter().cloned());
        out
    }
}

pub fn spanner_coefficients(spanner: &SpannerSet, point: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_dim("point", point.len(), spanner.origin.len())?;
    let rhs = point - &spanner.origin;
    let lu = spanner.basis.clone().lu();
    lu.solve(&rhs).ok_or_else(|| Error::Singular("spanner basis".into()))
}

/// Build a `C`-approximate barycentric spanner of `region`.
///
/// Starts from the standard basis and replaces each column by the member
/// maximizing `|det|`, then swaps any column for a member that increases
/// `|det|` by more than a factor `C` until none exists.
pub fn barycentric_spanner(region: &Region, opts: &SpannerOptions) -> Result<SpannerSet> {
    if !(opts.c > 1.0) {
        return Err(Error::InvalidArgument(format!("spanner factor must exceed 1, got {}", opts.c)));
    }
    let d = region.dim();
    let origin = match opts.kind {
        SpannerKind::Affine => region.witness.clone(),
        SpannerKind::Linear => DVector::zeros(d),
    };
    let scale = region.radius();
    let mut basis = DMatrix::<f64>::identity(d, d);
    let mut points: Vec<DVector<f64>> = vec![DVector::zeros(d); d];
    let mut calls = 0;
    let mut all_certified = true;
    let log_c_d = ((d as f64).ln() / opts.c.ln()).max(1.0);
    let cap = 2 * d + (opts.c_span * (d * d) as f64 * log_c_d).ceil() as usize;

    // Best member for column `i`: maximizes |⟨row_i(X⁻¹), x − v₀⟩| = |det ratio|.
    let mut best_for = |basis: &DMatrix<f64>, i: usize, calls: &mut usize| -> Result<(DVector<f64>, f64)> {
        let inv = basis.clone().try_inverse().ok_or_else(|| Error::Singular("spanner basis".into()))?;
        let phi = inv.row(i).transpose();
        let mut best: Option<(DVector<f64>, f64)> = None;
        for sign in [1.0, -1.0] {
            let dir = &phi * sign;
            let opt = linear_optimize(region, &dir, &opts.optimize)?;
            *calls += 1;
            all_certified &= opt.certified;
            let ratio = phi.dot(&(&opt.point - &origin));
            if best.as_ref().is_none_or(|(_, r)| ratio.abs() > r.abs()) {
                best = Some((opt.point, ratio));
            }
        }
        Ok(best.expect("two candidates"))
    };

    for i in 0..d {
        let (p, ratio) = best_for(&basis, i, &mut calls)?;
        if ratio.abs() <= 1e-10 * scale.max(1e-300) {
            return Err(Error::Degenerate(format!("no member extends the span in coordinate {i}")));
        }
        basis.set_column(i, &(&p - &origin));
        points[i] = p;
    }

    let mut swaps = 0;
    'outer: loop {
        let mut improved = false;
        for i in 0..d {
            if calls + 2 > cap {
                log::warn!("spanner oracle budget of {cap} calls exhausted");
                break 'outer;
            }
            let (p, ratio) = best_for(&basis, i, &mut calls)?;
            if ratio.abs() > opts.c {
                basis.set_column(i, &(&p - &origin));
                points[i] = p;
                swaps += 1;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }

    let lu = basis.clone().lu();
    let u = lu.u();
    let mut log_abs_det = 0.0;
    let mut det_sign = if lu.p().determinant::<f64>() < 0.0 { -1.0 } else { 1.0 };
    for k in 0..d {
        let v = u[(k, k)];
        log_abs_det += v.abs().ln();
        if v < 0.0 {
            det_sign = -det_sign;
        }
    }
    Ok(SpannerSet {
        kind: opts.kind,
        c: opts.c,
        origin,
        points,
        basis,
        log_abs_det,
        det_sign,
        oracle_calls: calls,
        swaps,
        all_certified,
    })
}
