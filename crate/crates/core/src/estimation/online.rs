use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::ridge::{estimate_disturbance, RidgeState, SystemEstimate};
use crate::estimation::warmup::warmup_regularizer;
use crate::rng::{self, StreamRng};

/// Per-step system estimation and disturbance recording shared by the
/// estimate-then-act controllers: an optional random-control warmup, then a
/// ridge fit regularized toward the initial estimate, re-solved every
/// `stride` steps, with `ŵ_t = x_{t+1} − Â_{t+1} x_t − B̂_{t+1} u_t`.
pub struct OnlineIdentifier {
    lambda: f64,
    stride: usize,
    ridge: RidgeState,
    estimate: SystemEstimate,
    w_hat: Vec<DVector<f64>>,
    prev: Option<(DVector<f64>, DVector<f64>)>,
    warmup_left: usize,
    warmup_rng: Option<StreamRng>,
    main_start: usize,
}

impl OnlineIdentifier {
    /// Start from a supplied estimate.
    pub fn from_estimate(lambda: f64, initial: SystemEstimate, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("solve stride must be positive".into()));
        }
        Ok(Self {
            lambda,
            stride,
            ridge: RidgeState::new(lambda, &initial)?,
            estimate: initial,
            w_hat: Vec::new(),
            prev: None,
            warmup_left: 0,
            warmup_rng: None,
            main_start: 0,
        })
    }

    /// Play `u ~ N(0, I)` for `steps` steps first; the warmup fit (with
    /// regularizer `(κ² + β)⁻²`) becomes the prior of the main fit.
    #[allow(clippy::too_many_arguments)]
    pub fn with_warmup(
        lambda: f64,
        dx: usize,
        du: usize,
        kappa: f64,
        beta: f64,
        steps: usize,
        stride: usize,
        seed: u64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("warmup needs at least one step".into()));
        }
        let mut s = Self::from_estimate(
            lambda,
            SystemEstimate::new(DMatrix::zeros(dx, dx), DMatrix::zeros(dx, du)),
            stride,
        )?;
        s.ridge = RidgeState::with_zero_prior(dx, du, warmup_regularizer(kappa, beta))?;
        s.warmup_left = steps;
        s.warmup_rng = Some(rng::stream(seed, &[rng::label::EXPLORATION]));
        Ok(s)
    }

    /// Absorb `x_t`, closing the transition from the previous step.
    pub fn observe(&mut self, x: &DVector<f64>) -> Result<()> {
        let Some((px, pu)) = self.prev.take() else { return Ok(()) };
        self.ridge.update(&px, &pu, x)?;
        if self.warmup_rng.is_none() && self.ridge.count() % self.stride == 0 {
            self.estimate = self.ridge.solve()?;
        }
        self.w_hat.push(estimate_disturbance(x, &self.estimate, &px, &pu));
        Ok(())
    }

    /// The warmup control for this step, if the warmup is still running.
    /// Ends the warmup when it has run its course.
    pub fn warmup_control(&mut self, du: usize) -> Result<Option<DVector<f64>>> {
        if self.warmup_left > 0 {
            self.warmup_left -= 1;
            let mut u = DVector::zeros(du);
            rng::fill_standard_normal(self.warmup_rng.as_mut().expect("warmup stream"), u.as_mut_slice());
            return Ok(Some(u));
        }
        if self.warmup_rng.is_some() {
            let est = self.ridge.solve_exact()?;
            self.ridge = RidgeState::new(self.lambda, &est)?;
            self.estimate = est;
            self.main_start = self.w_hat.len();
            self.warmup_rng = None;
        }
        Ok(None)
    }

    pub fn in_warmup(&self) -> bool {
        self.warmup_rng.is_some()
    }

    /// Remember the control played at the current state.
    pub fn record(&mut self, x: &DVector<f64>, u: &DVector<f64>) {
        self.prev = Some((x.clone(), u.clone()));
    }

    /// The last `h` disturbance estimates of the main phase, oldest first.
    pub fn recent(&self, h: usize) -> &[DVector<f64>] {
        let lo = self.main_start.max(self.w_hat.len().saturating_sub(h));
        &self.w_hat[lo..]
    }

    pub fn estimate(&self) -> &SystemEstimate {
        &self.estimate
    }

    pub fn ridge(&self) -> &RidgeState {
        &self.ridge
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// All disturbance estimates, `ŵ_1` first.
    pub fn disturbance_estimates(&self) -> &[DVector<f64>] {
        &self.w_hat
    }
}
