//! Convex regions in a flattened parameter space: separation, linear
//! optimization by the ellipsoid method, barycentric spanners, constrained
//! minimization and random members.

pub mod ellipsoid;
pub mod minimize;
pub mod region;
pub mod sampling;
pub mod spanner;

pub use ellipsoid::{linear_optimize, LinearOptimum, OptimizeOptions};
pub use minimize::{region_minimize, MinimizeOptions, RegionMinimum};
pub use region::{
    ConstraintMeta, ConvexFunction, LinearFunction, NormBudget, PolicyObjective, Region, Separation, SublevelConstraint,
};
pub use sampling::sample_members;
pub use spanner::{barycentric_spanner, SpannerKind, SpannerOptions, SpannerSet};
