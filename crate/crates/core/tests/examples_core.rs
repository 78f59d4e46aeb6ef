use std::sync::Arc;

use lds_explore::dfc::{DfcPolicy, Expectation, SurrogateCost, SurrogateModel};
use lds_explore::estimation::{warmup_explore, warmup_regularizer, RidgeState, SystemEstimate};
use lds_explore::geometry::{
    barycentric_spanner, linear_optimize, region_minimize, sample_members, ConvexFunction, LinearFunction,
    MinimizeOptions, NormBudget, OptimizeOptions, PolicyObjective, Region, Separation, SpannerKind, SpannerOptions,
    SublevelConstraint,
};
use lds_explore::lds::{ConvexCost, CostFamily, DisturbanceKind, DisturbanceSource, LinearSystem, SeparableCost};
use lds_explore::rng::{self, StreamRng};
use nalgebra::{DMatrix, DVector};

fn gaussian(r: &mut StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng::standard_normal(r))
}

fn linear_cut(c: DVector<f64>, threshold: f64) -> SublevelConstraint {
    SublevelConstraint { function: Arc::new(LinearFunction { c, offset: 0.0 }), threshold, meta: Default::default() }
}

/// `center + [-1, 1]^d` inside a ball large enough to be inactive.
fn cube(center: &DVector<f64>, ball: f64) -> Region {
    let d = center.len();
    let mut region = Region::new(NormBudget::ball(d, ball).unwrap(), center.clone()).unwrap();
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let c = DVector::from_fn(d, |k, _| if k == i { sign } else { 0.0 });
            let threshold = sign * center[i] + 1.0;
            region.push_constraint(linear_cut(c, threshold), center.clone()).unwrap();
        }
    }
    region
}

fn vertices(center: &DVector<f64>) -> Vec<DVector<f64>> {
    let d = center.len();
    (0..1usize << d)
        .map(|mask| DVector::from_fn(d, |k, _| if mask >> k & 1 == 1 { 1.0 } else { -1.0 }) + center)
        .collect()
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let (h, dx, du) = (2, 2, 2);
    let mut r = rng::stream(1, &[1]);
    let a = gaussian(&mut r, dx, dx) * 0.3;
    let b = gaussian(&mut r, dx, du);
    let cost: Arc<dyn ConvexCost> = Arc::new(
        SeparableCost::new(CostFamily::SmoothedL1 { delta: 0.1 }, dx, du, vec![1.0; 4], vec![0.3, -0.2, 0.1, 0.0]).unwrap(),
    );
    let exp = Expectation::MonteCarlo { samples: 4096, seed: 3 };
    let sc = SurrogateCost::new(SurrogateModel::new(&a, &b, h).unwrap(), cost, exp).unwrap();
    let m = DfcPolicy::from_blocks((0..h).map(|_| gaussian(&mut r, du, dx) * 0.3).collect()).unwrap();
    let grad = sc.value_grad(&m).unwrap().grad.unwrap().flatten();
    let x = m.flatten();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += step;
        minus[i] -= step;
        let f = |v: &DVector<f64>| sc.value(&DfcPolicy::unflatten(h, dx, du, v.as_slice()).unwrap()).unwrap().value;
        let fd = (f(&plus) - f(&minus)) / (2.0 * step);
        worst = worst.max((fd - grad[i]).abs());
    }
    assert!(worst <= 1e-4, "max discrepancy {worst:.2e}");
}

#[test]
fn linear_and_zero_costs() {
    let (h, dx, du) = (3, 2, 1);
    let mut r = rng::stream(2, &[2]);
    let a = gaussian(&mut r, dx, dx) * 0.3;
    let b = gaussian(&mut r, dx, du);
    let m = DfcPolicy::from_blocks((0..h).map(|_| gaussian(&mut r, du, dx) * 0.3).collect()).unwrap();
    let exp = Expectation::MonteCarlo { samples: 4096, seed: 9 };

    let linear: Arc<dyn ConvexCost> =
        Arc::new(SeparableCost::new(CostFamily::Linear, dx, du, vec![0.7, 1.3, 0.4], vec![0.0; 3]).unwrap());
    let v = SurrogateCost::new(SurrogateModel::new(&a, &b, h).unwrap(), linear, exp).unwrap().value(&m).unwrap();
    assert!(v.value.abs() <= 4.0 * v.stderr, "{} ± {}", v.value, v.stderr);

    let zero: Arc<dyn ConvexCost> = Arc::new(SeparableCost::zero(dx, du));
    let v = SurrogateCost::new(SurrogateModel::new(&a, &b, h).unwrap(), zero, exp).unwrap().value_grad(&m).unwrap();
    assert_eq!((v.value, v.stderr), (0.0, 0.0));
    assert_eq!(v.grad.unwrap().flatten().amax(), 0.0);
}

#[test]
fn noiseless_ridge_recovers_the_system() {
    let (dx, du) = (3, 2);
    let mut r = rng::stream(3, &[3]);
    let a = gaussian(&mut r, dx, dx) * 0.4;
    let b = gaussian(&mut r, dx, du);
    let mut ridge = RidgeState::with_zero_prior(dx, du, 1e-8).unwrap();
    for _ in 0..4 * (dx + du) {
        let x = DVector::from_fn(dx, |_, _| rng::standard_normal(&mut r));
        let u = DVector::from_fn(du, |_, _| rng::standard_normal(&mut r));
        ridge.update(&x, &u, &(&a * &x + &b * &u)).unwrap();
    }
    let est = ridge.solve().unwrap();
    assert!((&est.a_hat - &a).amax() <= 1e-6);
    assert!((&est.b_hat - &b).amax() <= 1e-6);
}

#[test]
fn warmup_exploration_recovers_and_improves_with_length() {
    let sys = LinearSystem::random(2, 2, 0.6, 1.0, 4).unwrap();
    let cost = SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 2).unwrap();
    let truth = SystemEstimate::new(sys.a().clone(), sys.b().clone()).stacked();
    let reg = warmup_regularizer(sys.kappa(), sys.beta());
    let x1 = DVector::zeros(2);

    let silent = DisturbanceSource { kind: DisturbanceKind::StandardGaussian, seed: 0, dx: 2, scale: 0.0 };
    let (est, traj) = warmup_explore(&sys, &cost, &silent, 20_000, reg, 1, &x1).unwrap();
    assert!((est.stacked() - &truth).norm() <= 1e-4, "{}", (est.stacked() - &truth).norm());
    assert_eq!(traj.replay_states(&sys).unwrap(), traj.states);

    let error = |t0: usize, seed: u64| {
        let noise = DisturbanceSource::gaussian(2, seed);
        let (est, _) = warmup_explore(&sys, &cost, &noise, t0, reg, seed, &x1).unwrap();
        (est.stacked() - &truth).norm_squared()
    };
    let short: f64 = (0..20).map(|s| error(100, s)).sum::<f64>() / 20.0;
    let long: f64 = (0..20).map(|s| error(400, s)).sum::<f64>() / 20.0;
    assert!(long <= short, "{long} > {short}");
}

fn policy_region(seed: u64) -> Region {
    let (h, dx, du) = (2, 2, 2);
    let sys = LinearSystem::random(dx, du, 0.6, 1.0, seed).unwrap();
    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, dx, du).unwrap());
    let model = SurrogateModel::new(sys.a(), sys.b(), h).unwrap();
    let objective = PolicyObjective::new(SurrogateCost::new(model, cost, Expectation::Quadrature).unwrap());
    let d = h * dx * du;
    let zero = DVector::zeros(d);
    let at_zero = objective.value(&zero).unwrap();
    let mut region = Region::new(NormBudget::new(vec![(du, dx); h], 1.0).unwrap(), zero.clone()).unwrap();
    let threshold = at_zero + 0.05;
    region.push_constraint(SublevelConstraint { function: Arc::new(objective), threshold, meta: Default::default() }, zero.clone()).unwrap();
    let mut r = rng::stream(seed, &[5]);
    let c = DVector::from_fn(d, |_, _| rng::standard_normal(&mut r)).normalize();
    region.push_constraint(linear_cut(c, 0.2), zero).unwrap();
    region
}

#[test]
fn separating_hyperplanes_keep_every_member() {
    let region = policy_region(6);
    let members = sample_members(&region, 200, 6, 200, 5).unwrap();
    let mut r = rng::stream(6, &[6]);
    let mut cuts = 0;
    for _ in 0..30 {
        let p = DVector::from_fn(region.dim(), |_, _| rng::standard_normal(&mut r));
        match region.separate(&p).unwrap() {
            Separation::Inside => assert!(region.contains(&p).unwrap()),
            Separation::Cut { normal, offset } => {
                cuts += 1;
                assert!(normal.dot(&p) > offset);
                for y in &members {
                    assert!(normal.dot(y) <= offset + 1e-6);
                }
            }
        }
    }
    assert!(cuts > 0);
    assert_eq!(region.separate(&DVector::zeros(region.dim())).unwrap(), Separation::Inside);
}

/// Maximum of `⟨c, x⟩` over `{x : G x ≤ h}` by enumerating vertices.
fn lp_by_vertices(g: &[DVector<f64>], h: &[f64], c: &DVector<f64>) -> f64 {
    let d = c.len();
    let mut best = f64::NEG_INFINITY;
    let n = g.len();
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        let m = DMatrix::from_fn(d, d, |i, j| g[idx[i]][j]);
        let rhs = DVector::from_fn(d, |i, _| h[idx[i]]);
        if let Some(x) = m.lu().solve(&rhs) {
            if g.iter().zip(h).all(|(gi, hi)| gi.dot(&x) <= hi + 1e-9) {
                best = best.max(c.dot(&x));
            }
        }
        // Next combination.
        let mut k = d;
        while k > 0 && idx[k - 1] == n - d + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        idx[k - 1] += 1;
        for j in k..d {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[test]
fn linear_optimization_matches_vertex_enumeration() {
    let mut r = rng::stream(7, &[7]);
    for d in 2..=5 {
        let mut g = Vec::new();
        let mut h = Vec::new();
        for i in 0..d {
            for sign in [1.0, -1.0] {
                g.push(DVector::from_fn(d, |k, _| if k == i { sign } else { 0.0 }));
                h.push(1.0);
            }
        }
        g.push(DVector::from_element(d, 1.0));
        h.push(0.5 * d as f64);
        let mut region = Region::new(NormBudget::ball(d, 1.01 * (d as f64).sqrt()).unwrap(), DVector::zeros(d)).unwrap();
        for (gi, hi) in g.iter().zip(&h) {
            region.push_constraint(linear_cut(gi.clone(), *hi), DVector::zeros(d)).unwrap();
        }
        let c = DVector::from_fn(d, |_, _| rng::standard_normal(&mut r));
        let exact = lp_by_vertices(&g, &h, &c);
        let opt = linear_optimize(&region, &c, &OptimizeOptions::default()).unwrap();
        assert!(region.contains(&opt.point).unwrap());
        assert!(opt.value <= exact + 1e-9, "d={d}: {} > {exact}", opt.value);
        assert!(opt.value * 1.01 >= exact, "d={d}: {} vs {exact}", opt.value);
    }
}

#[test]
fn hypercube_spanner_covers_every_vertex() {
    for d in 2..=4 {
        let center = DVector::zeros(d);
        let region = cube(&center, 1.01 * (d as f64).sqrt());
        let opts = SpannerOptions::default();
        let sp = barycentric_spanner(&region, &opts).unwrap();
        for v in vertices(&center) {
            let lam = sp.coefficients(&v).unwrap();
            assert!(lam.amax() <= opts.c + 1e-6, "d={d}: {lam}");
        }
    }
}

#[test]
fn spanner_follows_a_translation() {
    // The base ball stays centered at the origin, so the translated problem
    // is only equivalent up to the approximation guarantees: both spanners
    // cover their cube and have |det| within a factor C^d of each other.
    let d = 3;
    let shift = DVector::from_vec(vec![0.5, -0.3, 0.2]);
    let opts = SpannerOptions::default();
    let here = barycentric_spanner(&cube(&DVector::zeros(d), 4.0), &opts).unwrap();
    let there = barycentric_spanner(&cube(&shift, 4.0), &opts).unwrap();
    let slack = d as f64 * opts.c.ln();
    assert!((here.log_abs_det - there.log_abs_det).abs() <= slack, "{} vs {}", here.log_abs_det, there.log_abs_det);
    for v in vertices(&DVector::zeros(d)) {
        assert!(here.coefficients(&v).unwrap().amax() <= opts.c + 1e-6);
        assert!(there.coefficients(&(v + &shift)).unwrap().amax() <= opts.c + 1e-6);
    }
}

#[test]
fn ball_spanner_determinant_against_orthonormal_probes() {
    let d = 4;
    let region = Region::new(NormBudget::ball(d, 1.0).unwrap(), DVector::zeros(d)).unwrap();
    let opts = SpannerOptions { kind: SpannerKind::Linear, ..Default::default() };
    let sp = barycentric_spanner(&region, &opts).unwrap();
    let mut r = rng::stream(8, &[8]);
    let best = (0..10_000)
        .map(|_| gaussian(&mut r, d, d).qr().q().determinant().abs())
        .fold(0.0, f64::max);
    assert!(sp.log_abs_det.exp() >= best / opts.c.powi(d as i32), "{} vs {best}", sp.log_abs_det.exp());
}

#[test]
fn region_minimum_of_a_linear_objective_matches_the_ellipsoid() {
    let region = policy_region(9);
    let mut r = rng::stream(9, &[9]);
    let c = DVector::from_fn(region.dim(), |_, _| rng::standard_normal(&mut r));
    let objective = LinearFunction { c: c.clone(), offset: 0.0 };
    let opts = MinimizeOptions { max_iter: 3000, ..MinimizeOptions::default() };
    let min = region_minimize(&region, &objective, &opts).unwrap();
    let max = linear_optimize(&region, &(-&c), &OptimizeOptions::default()).unwrap();
    let rel = (min.value + max.value).abs() / max.value.abs();
    assert!(rel <= 0.02, "{} vs {}", min.value, -max.value);
}
