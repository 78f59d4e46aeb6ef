use serde::{Deserialize, Serialize};

/// `ε_r = 2^{-r}` and the per-element execution length `T_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    /// Constant replacing the polylogarithmic factor in `T_r`.
    pub scale_t: f64,
    /// Problem-dependent factor multiplying `scale_t · ε_r⁻²`.
    pub factor: f64,
    /// Lower bound on `T_r`.
    pub min_len: usize,
}

impl EpochSchedule {
    /// `T_r = ceil(scale_t · κ⁴ γ⁻³ · ε_r⁻² · d_x d_u (d_x + d_u)²)`, at least `2H + 2`.
    pub fn control(scale_t: f64, kappa: f64, gamma: f64, dx: usize, du: usize, h: usize) -> Self {
        let (dx, du) = (dx as f64, du as f64);
        Self {
            scale_t,
            factor: kappa.powi(4) * gamma.powi(-3) * dx * du * (dx + du).powi(2),
            min_len: 2 * h + 2,
        }
    }

    /// `T_r = ceil(scale_t · ε_r⁻² · n² (n + β²))` for the no-dynamics case.
    pub fn no_dynamics(scale_t: f64, n: usize, beta: f64) -> Self {
        let n = n as f64;
        Self { scale_t, factor: n * n * (n + beta * beta), min_len: 1 }
    }

    pub fn epsilon(r: usize) -> f64 {
        0.5f64.powi(r as i32)
    }

    pub fn length(&self, r: usize) -> usize {
        let eps = Self::epsilon(r);
        ((self.scale_t * self.factor / (eps * eps)).ceil() as usize).max(self.min_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_quadruple_per_epoch() {
        let s = EpochSchedule::control(0.01, 1.0, 0.5, 2, 2, 3);
        // factor = 8 · 4 · 16 = 512; T_1 = ceil(0.01 · 512 · 4) = 21.
        assert_eq!(s.length(1), 21);
        assert_eq!(s.length(2), 82);
        assert_eq!(EpochSchedule::control(1e-9, 1.0, 0.5, 2, 2, 3).length(1), 8);
    }
}
