use std::sync::Arc;

use lds_explore::control::{
    robust_value_oracle, BanditConfig, BanditController, ConstantOptimizer, GeometricConfig, GeometricController,
    Initialization, ProblemInfo, RobustOracleParams,
};
use lds_explore::dfc::{policy_covariance, DfcPolicy, Expectation, SurrogateCost, SurrogateModel};
use lds_explore::estimation::{estimate_disturbance, RidgeState, SystemEstimate};
use lds_explore::geometry::{
    barycentric_spanner, sample_members, LinearFunction, NormBudget, Region, SpannerOptions, SublevelConstraint,
};
use lds_explore::lds::{
    check_strong_stability, rollout, spectral_power_bound, ConvexCost, CostFamily, Controller, DisturbanceSource,
    LinearSystem, Observation, RolloutOptions, SeparableCost,
};
use lds_explore::linalg::{min_eigenvalue, spectral_norm, stack};
use lds_explore::rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::Rng;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, rng_seed: RngSeed::Fixed(0x6c64_7365), failure_persistence: None, ..ProptestConfig::default() }
}

fn gaussian(r: &mut rng::StreamRng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng::standard_normal(r))
}

fn random_policy(r: &mut rng::StreamRng, h: usize, dx: usize, du: usize, scale: f64) -> DfcPolicy {
    DfcPolicy::from_blocks((0..h).map(|_| gaussian(r, du, dx) * scale).collect()).unwrap()
}

/// A matrix with spectral radius at most `rho`, not necessarily normal.
fn stable_matrix(r: &mut rng::StreamRng, n: usize, rho: f64) -> DMatrix<f64> {
    let g = gaussian(r, n, n);
    let radius = g.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max);
    g * (rho / radius.max(1e-9))
}

fn smoothed_l1(dx: usize, du: usize, r: &mut rng::StreamRng) -> Arc<dyn ConvexCost> {
    let targets = (0..dx + du).map(|_| r.random_range(-1.0..1.0)).collect();
    Arc::new(SeparableCost::new(CostFamily::SmoothedL1 { delta: 0.1 }, dx, du, vec![1.0; dx + du], targets).unwrap())
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn certificate_bounds_every_power(seed in any::<u64>(), n in 1usize..5, rho in 0.1f64..0.95) {
        let mut r = rng::stream(seed, &[1]);
        let a = stable_matrix(&mut r, n, rho);
        let gamma = (1.0 - rho) / 2.0;
        if let Ok(cert) = check_strong_stability(&a, 20.0, gamma) {
            let recon = cert.reconstruct();
            prop_assert!((recon - &a).norm() <= 1e-8 * a.norm().max(1e-300) + 1e-14);
            let mut p = DMatrix::identity(n, n);
            for i in 0..=50 {
                prop_assert!(spectral_norm(&p) <= cert.power_bound(i) + 1e-9, "i={}", i);
                prop_assert!((cert.power_bound(i) - spectral_power_bound(cert.kappa, cert.gamma, i)).abs() < 1e-12);
                p = &p * &a;
            }
        }
    }

    #[test]
    fn stability_transfers_to_nearby_estimates(seed in any::<u64>(), n in 1usize..5, rho in 0.1f64..0.9) {
        let mut r = rng::stream(seed, &[2]);
        let a = stable_matrix(&mut r, n, rho);
        let gamma = (1.0 - rho) / 2.0;
        let cert = check_strong_stability(&a, 50.0, gamma);
        prop_assume!(cert.is_ok());
        let cert = cert.unwrap();
        let kappa = cert.kappa;
        let e = gaussian(&mut r, n, n);
        let e = &e * (gamma / (2.0 * kappa * kappa) / spectral_norm(&e).max(1e-12));
        let moved = cert.transfer(&(&a + e), gamma / 2.0).unwrap();
        prop_assert!(moved.lambda_norm() <= 1.0 - gamma / 2.0 + 1e-9);
    }

    /// When the estimate is certified with `κ = 1`, the search itself
    /// recovers the transferred certificate.
    #[test]
    fn search_certifies_nearby_normal_matrices(seed in any::<u64>(), n in 1usize..5, rho in 0.1f64..0.9) {
        let sys = LinearSystem::random(n, 1, rho, 1.0, seed).unwrap();
        let gamma = sys.gamma();
        let mut r = rng::stream(seed, &[14]);
        let e = gaussian(&mut r, n, n);
        let e = &e * (gamma / 2.0 / spectral_norm(&e).max(1e-12));
        prop_assert!(check_strong_stability(&(sys.a() + e), 1.0, gamma / 2.0).is_ok());
    }

    #[test]
    fn flatten_round_trip_and_linearity(seed in any::<u64>(), h in 1usize..5, dx in 1usize..4, du in 1usize..4) {
        let mut r = rng::stream(seed, &[3]);
        let m1 = random_policy(&mut r, h, dx, du, 1.0);
        let m2 = random_policy(&mut r, h, dx, du, 1.0);
        let back = DfcPolicy::unflatten(h, dx, du, m1.flatten().as_slice()).unwrap();
        prop_assert_eq!(&back, &m1);
        prop_assert_eq!(m1.flatten().len(), dx * du * h);
        let sum = m1.axpy(1.0, &m2);
        prop_assert!((sum.flatten() - (m1.flatten() + m2.flatten())).amax() < 1e-14);
        prop_assert!(DfcPolicy::zeros(h, dx, du).flatten().iter().all(|v| *v == 0.0));
        prop_assert!(DfcPolicy::unflatten(h, dx, du, &vec![0.0; dx * du * h + 1]).is_err());
    }

    /// Roll the closed loop forward with the true disturbances and compare
    /// against the Ψ expansion.
    #[test]
    fn unrolling_identity_holds(seed in any::<u64>(), dx in 1usize..5, du in 1usize..5, h in 1usize..6) {
        let mut r = rng::stream(seed, &[4]);
        let a = stable_matrix(&mut r, dx, 0.9);
        let b = gaussian(&mut r, dx, du);
        let m = random_policy(&mut r, h, dx, du, 0.5);
        let steps = 4 * h + 6;
        let ws: Vec<DVector<f64>> = (0..steps).map(|_| DVector::from_fn(dx, |_, _| rng::standard_normal(&mut r))).collect();
        let mut xs = vec![DVector::from_fn(dx, |_, _| rng::standard_normal(&mut r))];
        for t in 0..steps {
            let mut u = DVector::zeros(du);
            for i in 1..=h {
                if t >= i {
                    u += m.block(i - 1) * &ws[t - i];
                }
            }
            xs.push(&a * &xs[t] + &b * u + &ws[t]);
        }
        let psi = SurrogateModel::new(&a, &b, h).unwrap().psi(&m).unwrap();
        prop_assert_eq!(psi.len(), 2 * h + 1);
        let a_top = a.pow((h + 1) as u32);
        for t in 2 * h..steps {
            let mut pred = &a_top * &xs[t - h];
            for (i, p) in psi.iter().enumerate() {
                pred += p * &ws[t - i];
            }
            let scale = xs[t + 1].amax().max(1.0);
            prop_assert!((&pred - &xs[t + 1]).amax() <= 1e-10 * scale, "t={} err={}", t, (&pred - &xs[t + 1]).amax());
        }
    }

    #[test]
    fn psi_and_surrogate_pair_are_affine(seed in any::<u64>(), dx in 1usize..4, du in 1usize..4, h in 1usize..5, alpha in 0.0f64..1.0) {
        let mut r = rng::stream(seed, &[5]);
        let a = stable_matrix(&mut r, dx, 0.8);
        let b = gaussian(&mut r, dx, du);
        let model = SurrogateModel::new(&a, &b, h).unwrap();
        let m1 = random_policy(&mut r, h, dx, du, 1.0);
        let m2 = random_policy(&mut r, h, dx, du, 1.0);
        let mix = m1.scaled(alpha).axpy(1.0 - alpha, &m2);
        let (p1, p2, pm) = (model.psi(&m1).unwrap(), model.psi(&m2).unwrap(), model.psi(&mix).unwrap());
        for i in 0..=2 * h {
            let expect = &p1[i] * alpha + &p2[i] * (1.0 - alpha);
            prop_assert!((&pm[i] - expect).amax() < 1e-12);
        }
        let eta: Vec<DVector<f64>> = (0..=2 * h).map(|_| DVector::from_fn(dx, |_, _| rng::standard_normal(&mut r))).collect();
        let (x1, u1) = model.pair(&m1, &eta).unwrap();
        let (x2, u2) = model.pair(&m2, &eta).unwrap();
        let (xm, um) = model.pair(&mix, &eta).unwrap();
        prop_assert!((xm - (x1 * alpha + x2 * (1.0 - alpha))).amax() < 1e-12);
        prop_assert!((um - (u1 * alpha + u2 * (1.0 - alpha))).amax() < 1e-12);
        prop_assert!(model.pair(&m1, &eta[1..]).is_err());
    }

    #[test]
    fn covariance_is_transform_gram_and_psd(seed in any::<u64>(), dx in 1usize..4, du in 1usize..4, h in 1usize..5) {
        let mut r = rng::stream(seed, &[6]);
        let a = stable_matrix(&mut r, dx, 0.8);
        let b = gaussian(&mut r, dx, du);
        let m = random_policy(&mut r, h, dx, du, 1.0);
        let pc = policy_covariance(&m, &a, &b).unwrap();
        prop_assert_eq!(pc.t_matrix.shape(), (dx + du, (2 * h + 1) * dx));
        prop_assert!((&pc.t_matrix * pc.t_matrix.transpose() - &pc.sigma).amax() < 1e-12);
        prop_assert!(min_eigenvalue(&pc.sigma) >= -1e-9);
    }

    #[test]
    fn projection_lands_in_the_base_class(seed in any::<u64>(), h in 1usize..5, dx in 1usize..4, du in 1usize..4, g in 0.1f64..5.0, spread in 0.1f64..10.0) {
        let mut r = rng::stream(seed, &[7]);
        let nb = NormBudget::new(vec![(du, dx); h], g).unwrap();
        let x = DVector::from_fn(nb.dim(), |_, _| spread * rng::standard_normal(&mut r));
        let p = nb.project(&x);
        prop_assert!(nb.contains(&p));
        prop_assert!(nb.value(&p) <= g * (1.0 + 1e-9));
        prop_assert!((nb.project(&p) - &p).amax() < 1e-9);
        if nb.contains(&x) {
            prop_assert!((&p - &x).amax() < 1e-12);
        }
    }

    #[test]
    fn ridge_incremental_matches_batch(seed in any::<u64>(), dx in 1usize..4, du in 1usize..4, k in 1usize..80, lambda in 0.01f64..10.0) {
        let mut r = rng::stream(seed, &[8]);
        let prior = SystemEstimate::new(gaussian(&mut r, dx, dx), gaussian(&mut r, dx, du));
        let mut state = RidgeState::new(lambda, &prior).unwrap();
        let n = dx + du;
        let mut zs = DMatrix::zeros(n, k);
        let mut ys = DMatrix::zeros(dx, k);
        for s in 0..k {
            let x = DVector::from_fn(dx, |_, _| rng::standard_normal(&mut r));
            let u = DVector::from_fn(du, |_, _| rng::standard_normal(&mut r));
            let y = DVector::from_fn(dx, |_, _| rng::standard_normal(&mut r));
            zs.set_column(s, &stack(&x, &u));
            ys.set_column(s, &y);
            state.update(&x, &u, &y).unwrap();
        }
        let v = &zs * zs.transpose() + DMatrix::identity(n, n) * lambda;
        prop_assert!((state.gram() - &v).amax() < 1e-10 * v.amax());
        prop_assert_eq!(state.count(), k);
        // Closed-form minimizer, from the normal equations.
        let theta0 = prior.stacked();
        let rhs = &ys * zs.transpose() + &theta0 * lambda;
        let theta = v.clone().cholesky().unwrap().solve(&rhs.transpose()).transpose();
        let est = state.solve().unwrap();
        prop_assert!((est.stacked() - &theta).amax() < 1e-8 * theta.amax().max(1.0));
        prop_assert_eq!(state.solve().unwrap(), est.clone());
        let objective = |th: &DMatrix<f64>| (th * &zs - &ys).norm_squared() + lambda * (th - &theta0).norm_squared();
        let best = objective(&est.stacked());
        for _ in 0..100 {
            let probe = est.stacked() + gaussian(&mut r, dx, n) * 0.01;
            prop_assert!(best <= objective(&probe) + 1e-9);
        }
    }

    #[test]
    fn disturbance_error_is_delta_times_regressor(seed in any::<u64>(), dx in 1usize..4, du in 1usize..4) {
        let mut r = rng::stream(seed, &[9]);
        let (a, b) = (gaussian(&mut r, dx, dx), gaussian(&mut r, dx, du));
        let est = SystemEstimate::new(&a + gaussian(&mut r, dx, dx) * 0.1, &b + gaussian(&mut r, dx, du) * 0.1);
        let x = DVector::from_fn(dx, |_, _| rng::standard_normal(&mut r));
        let u = DVector::from_fn(du, |_, _| rng::standard_normal(&mut r));
        let w = DVector::from_fn(dx, |_, _| rng::standard_normal(&mut r));
        let x_next = &a * &x + &b * &u + &w;
        let w_hat = estimate_disturbance(&x_next, &est, &x, &u);
        let delta = est.stacked() - lds_explore::linalg::hcat(&a, &b);
        prop_assert!((&w_hat - &w + &delta * stack(&x, &u)).amax() < 1e-12);
        let exact = SystemEstimate::new(a.clone(), b.clone());
        prop_assert!((estimate_disturbance(&x_next, &exact, &x, &u) - &w).amax() < 1e-12);
    }

    /// Monte-Carlo expectations reuse one frozen sample, so convexity holds
    /// on the sample average up to rounding.
    #[test]
    fn surrogate_cost_is_convex_in_the_policy(seed in any::<u64>(), theta in 0.0f64..1.0, quadrature in any::<bool>()) {
        let (dx, du, h) = (2, 2, 2);
        let mut r = rng::stream(seed, &[10]);
        let a = stable_matrix(&mut r, dx, 0.7);
        let b = gaussian(&mut r, dx, du) * 0.5;
        let cost = smoothed_l1(dx, du, &mut r);
        let exp = if quadrature { Expectation::Quadrature } else { Expectation::MonteCarlo { samples: 512, seed } };
        let c = SurrogateCost::new(SurrogateModel::new(&a, &b, h).unwrap(), cost, exp).unwrap();
        let m1 = random_policy(&mut r, h, dx, du, 0.4);
        let m2 = random_policy(&mut r, h, dx, du, 0.4);
        let mix = m1.scaled(theta).axpy(1.0 - theta, &m2);
        let (v1, v2, vm) = (c.value(&m1).unwrap(), c.value(&m2).unwrap(), c.value(&mix).unwrap());
        prop_assert!(vm.value <= theta * v1.value + (1.0 - theta) * v2.value + 1e-9);
    }

    /// `(Σλ_j A_j)(Σλ_j A_j)ᵀ ⪯ (Σλ_j²)(Σ A_j A_jᵀ)`.
    #[test]
    fn generalized_cauchy_schwarz(seed in any::<u64>(), n in 1usize..5, m in 1usize..5, k in 1usize..8) {
        let mut r = rng::stream(seed, &[11]);
        let mats: Vec<DMatrix<f64>> = (0..k).map(|_| gaussian(&mut r, n, m)).collect();
        let lambdas: Vec<f64> = (0..k).map(|_| rng::standard_normal(&mut r)).collect();
        let mut combo = DMatrix::zeros(n, m);
        let mut gram = DMatrix::zeros(n, n);
        for (l, a) in lambdas.iter().zip(&mats) {
            combo += a * *l;
            gram += a * a.transpose();
        }
        let l2: f64 = lambdas.iter().map(|l| l * l).sum();
        let diff = gram * l2 - &combo * combo.transpose();
        prop_assert!(min_eigenvalue(&diff) >= -1e-9 * diff.amax().max(1.0));
    }
}

proptest! {
    #![proptest_config(cases(10))]

    #[test]
    fn spanner_coefficients_stay_bounded(seed in any::<u64>(), h in 1usize..3, dx in 1usize..3, du in 1usize..3, cut in any::<bool>()) {
        let mut r = rng::stream(seed, &[12]);
        let base = NormBudget::new(vec![(du, dx); h], 1.0).unwrap();
        let d = base.dim();
        let mut region = Region::new(base, DVector::zeros(d)).unwrap();
        if cut {
            let c = DVector::from_fn(d, |_, _| rng::standard_normal(&mut r));
            let c = &c / c.norm();
            region
                .push_constraint(
                    SublevelConstraint { function: Arc::new(LinearFunction { c, offset: 0.0 }), threshold: 0.3, meta: Default::default() },
                    DVector::zeros(d),
                )
                .unwrap();
        }
        let opts = SpannerOptions::default();
        let spanner = barycentric_spanner(&region, &opts).unwrap();
        for v in spanner.elements() {
            prop_assert!(region.contains(&v).unwrap());
        }
        for (k, p) in spanner.points.iter().enumerate() {
            let lam = spanner.coefficients(p).unwrap();
            prop_assert!((lam[k] - 1.0).abs() < 1e-8);
        }
        prop_assert!(spanner.coefficients(&spanner.origin).unwrap().amax() < 1e-12);
        for x in sample_members(&region, 100, seed, 50, 3).unwrap() {
            let lam = spanner.coefficients(&x).unwrap();
            prop_assert!(lam.amax() <= opts.c + 0.05, "coefficient {}", lam.amax());
        }
    }

    #[test]
    fn robust_average_meets_accuracy_under_corruption(seed in any::<u64>(), sigma_zeta in 0.1f64..2.0, sigma_xi in 0.0f64..1.0) {
        let params = RobustOracleParams { sigma_zeta, sigma_xi, c: 2.0, gamma_acc: 0.5, n: 1000 };
        let s = params.repeats();
        let mut r = rng::stream(seed, &[13]);
        // Corruption spread evenly with total energy σ_ξ².
        let xi = sigma_xi / (s as f64).sqrt();
        let avg = robust_value_oracle(|| 3.0 + xi + sigma_zeta * rng::standard_normal(&mut r), &params).unwrap();
        // Deterministic part: |mean corruption| ≤ σ_ξ/√s ≤ γ/2.
        prop_assert!(xi <= params.gamma_acc / 2.0 + 1e-12);
        // Stochastic part, checked at 6 standard errors.
        prop_assert!((avg - 3.0 - xi).abs() <= 6.0 * sigma_zeta / (s as f64).sqrt());
    }
}

fn huber_problem(seed: u64) -> (LinearSystem, Arc<dyn ConvexCost>) {
    let sys = LinearSystem::random(2, 2, 0.6, 1.0, seed).unwrap();
    let cost: Arc<dyn ConvexCost> = Arc::new(SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 2).unwrap());
    (sys, cost)
}

proptest! {
    #![proptest_config(cases(4))]

    /// Every completed epoch consumes `2d·T_r` steps.
    #[test]
    fn epochs_consume_twice_dimension_times_length(seed in 0u64..1000) {
        let (sys, cost) = huber_problem(seed);
        let cfg = GeometricConfig { h: 2, scale_t: 1e-4, first_epoch: 3, ..Default::default() };
        let info = ProblemInfo::of(&sys);
        let init = SystemEstimate::new(sys.a().clone(), sys.b().clone());
        let mut ctrl = GeometricController::new(cfg, info, cost.clone(), Initialization::given(&init), seed).unwrap();
        let d = ctrl.spec().dim();
        let traj = rollout(&sys, &mut ctrl, &DisturbanceSource::gaussian(2, seed), 6000, &DVector::zeros(2), cost.as_ref(), &RolloutOptions::default()).unwrap();
        let epochs = ctrl.epochs();
        prop_assert!(epochs.len() >= 2);
        for e in epochs.iter().filter(|e| e.end.is_some()) {
            prop_assert_eq!(e.end.unwrap() + 1 - e.start, 2 * d * e.t_r, "epoch {}", e.epoch);
            prop_assert_eq!(e.t_r, ctrl.schedule().length(e.epoch));
        }
        // Consecutive epochs tile the horizon.
        for w in epochs.windows(2) {
            prop_assert_eq!(w[0].end.unwrap() + 1, w[1].start);
        }
        // Region witnesses satisfy every earlier constraint.
        let region = ctrl.region();
        prop_assert!(region.contains(&region.witness).unwrap());
        // Each epoch's minimizer lies in every region built before it.
        for e in epochs {
            let Some(point) = &e.minimizer else { continue };
            let point = DVector::from_column_slice(point);
            for c in region.constraints.iter().filter(|c| c.meta.epoch <= e.epoch) {
                let v = c.function.value(&point).unwrap();
                prop_assert!(v <= c.threshold + 1e-6 * (1.0 + c.threshold.abs()), "epoch {} violates constraint of epoch {}", e.epoch, c.meta.epoch);
            }
        }
        prop_assert_eq!(traj.horizon(), 6000);
    }

    /// One report per `2H+1` steps, at the last step of each query.
    #[test]
    fn bandit_reports_once_per_query(seed in 0u64..1000, h in 1usize..4, horizon in 50usize..400) {
        let (sys, cost) = huber_problem(seed);
        let info = ProblemInfo::of(&sys);
        let cfg = BanditConfig { h, ..Default::default() };
        let opt = ConstantOptimizer::new(DVector::zeros(h * 4));
        let init = SystemEstimate::new(sys.a().clone(), sys.b().clone());
        let mut ctrl = BanditController::new(cfg, info, Box::new(opt), init, horizon).unwrap();
        rollout(&sys, &mut ctrl, &DisturbanceSource::gaussian(2, seed), horizon, &DVector::zeros(2), cost.as_ref(), &RolloutOptions::default()).unwrap();
        let period = 2 * h + 1;
        let max_queries = horizon / (2 * h + 2);
        let reports = ctrl.reports();
        // The cost of step T is never observed by the controller.
        prop_assert_eq!(reports.len(), ((horizon - 1) / period).min(max_queries));
        for (k, (t, _)) in reports.iter().enumerate() {
            prop_assert_eq!(*t, (k + 1) * period);
        }
    }
}

/// Records what a controller is shown and checks it is determined by the past.
struct Probe {
    seen: Vec<(usize, DVector<f64>, Option<f64>)>,
}

impl Controller for Probe {
    fn name(&self) -> &str {
        "probe"
    }

    fn act(&mut self, obs: &Observation<'_>) -> lds_explore::Result<DVector<f64>> {
        self.seen.push((obs.t, obs.state.clone(), obs.last_cost));
        Ok(DVector::from_element(1, (obs.t as f64).sin()))
    }
}

proptest! {
    #![proptest_config(cases(16))]

    #[test]
    fn controllers_see_only_the_past(seed in any::<u64>()) {
        let sys = LinearSystem::new(DMatrix::from_element(2, 2, 0.2), DMatrix::from_element(2, 1, 1.0), 1.0, 0.5, 2.0).unwrap();
        let cost = SeparableCost::uniform(CostFamily::Huber { delta: 1.0 }, 2, 1).unwrap();
        let noise = DisturbanceSource::gaussian(2, seed);
        let mut probe = Probe { seen: Vec::new() };
        let traj = rollout(&sys, &mut probe, &noise, 30, &DVector::zeros(2), &cost, &RolloutOptions::default()).unwrap();
        // Replaying with the disturbances of steps < t only reproduces what
        // the controller saw at step t.
        let mut stream = noise.stream();
        let mut x = DVector::zeros(2);
        for (t, state, last_cost) in &probe.seen {
            prop_assert_eq!(state, &x);
            prop_assert_eq!(*last_cost, if *t == 1 { None } else { Some(traj.costs[t - 2]) });
            let u = DVector::from_element(1, (*t as f64).sin());
            x = sys.step(&x, &u, &stream.next_disturbance()).unwrap();
        }
        prop_assert_eq!(traj.replay_states(&sys).unwrap(), traj.states.clone());
    }
}
