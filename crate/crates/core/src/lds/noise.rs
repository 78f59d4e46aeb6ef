use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceKind {
    /// `N(0, I)`.
    StandardGaussian,
    /// Uniform on `[-√3, √3]^d`: bounded, mean zero, identity covariance.
    BoundedUniform,
}

/// i.i.d. disturbance process `w_t`, scaled by `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSource {
    pub kind: DisturbanceKind,
    pub seed: u64,
    pub dx: usize,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl DisturbanceSource {
    pub fn gaussian(dx: usize, seed: u64) -> Self {
        Self { kind: DisturbanceKind::StandardGaussian, seed, dx, scale: 1.0 }
    }

    pub fn stream(&self) -> DisturbanceStream {
        DisturbanceStream {
            kind: self.kind,
            dx: self.dx,
            scale: self.scale,
            rng: rng::stream(self.seed, &[rng::label::DISTURBANCE]),
        }
    }
}

pub struct DisturbanceStream {
    kind: DisturbanceKind,
    dx: usize,
    scale: f64,
    rng: StreamRng,
}

impl DisturbanceStream {
    pub fn next_disturbance(&mut self) -> DVector<f64> {
        let half_width = 3f64.sqrt();
        let mut w = DVector::zeros(self.dx);
        for v in w.iter_mut() {
            *v = match self.kind {
                DisturbanceKind::StandardGaussian => rng::standard_normal(&mut self.rng),
                DisturbanceKind::BoundedUniform => self.rng.random_range(-half_width..half_width),
            } * self.scale;
        }
        w
    }
}
