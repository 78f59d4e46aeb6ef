//! Experiment documents: a JSON object describing one system, one cost, a list
//! of controllers, horizons and seeds. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{
    BanditConfig, ControlEtcConfig, EtcConfig, GeometricConfig, GpcConfig, RobustOracleParams, WarmupCaseConfig,
};
use crate::error::{Error, Result};
use crate::lds::cost::{CostFamily, SeparableCost};
use crate::lds::stability::check_strong_stability;
use crate::lds::system::LinearSystem;
use crate::linalg::from_rows;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "LDS_EXPLORE_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub system: SystemSpec,
    pub cost: CostSpec,
    pub controllers: Vec<ControllerSpec>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub comparator: ComparatorSpec,
    /// Wall-clock budget per cell.
    #[serde(default = "default_budget")]
    pub cell_budget_secs: u64,
    /// Rollouts abort once `‖x_t‖` exceeds this.
    #[serde(default = "default_blowup")]
    pub blowup: f64,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_budget() -> u64 {
    900
}

fn default_blowup() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Matrices given as arrays of rows. With a `stabilizer` gain `K₀`, the
    /// stability parameters describe `A + B K₀` and every controller except
    /// GPC runs behind the stabilizing wrapper.
    Explicit {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        kappa: f64,
        gamma: f64,
        beta: f64,
        #[serde(default)]
        stabilizer: Option<Vec<Vec<f64>>>,
    },
    /// `A = Q diag(λ) Qᵀ` with `|λ_i| ≤ rho`, Gaussian `B` scaled to `b_norm`.
    Random {
        dx: usize,
        du: usize,
        rho: f64,
        #[serde(default = "one")]
        b_norm: f64,
        seed: u64,
    },
}

fn one() -> f64 {
    1.0
}

/// The system under test together with the optional stabilizing gain.
#[derive(Debug, Clone)]
pub struct Plant {
    pub sys: LinearSystem,
    pub stabilizer: Option<DMatrix<f64>>,
}

impl Plant {
    /// The matrix the learner effectively faces: `A + B K₀` or `A`.
    pub fn closed_loop(&self) -> DMatrix<f64> {
        match &self.stabilizer {
            Some(k) => self.sys.a() + self.sys.b() * k,
            None => self.sys.a().clone(),
        }
    }
}

impl SystemSpec {
    pub fn build(&self) -> Result<Plant> {
        match self {
            SystemSpec::Explicit { a, b, kappa, gamma, beta, stabilizer } => {
                let a = from_rows(a).map_err(|e| config_error("system.A", e))?;
                let b = from_rows(b).map_err(|e| config_error("system.B", e))?;
                match stabilizer {
                    None => {
                        let sys = LinearSystem::new(a, b, *kappa, *gamma, *beta).map_err(|e| config_error("system", e))?;
                        Ok(Plant { sys, stabilizer: None })
                    }
                    Some(k) => {
                        let k = from_rows(k).map_err(|e| config_error("system.stabilizer", e))?;
                        if k.nrows() != b.ncols() || k.ncols() != a.nrows() {
                            return Err(Error::Config {
                                path: "system.stabilizer".into(),
                                message: format!("expected {}x{}, got {}x{}", b.ncols(), a.nrows(), k.nrows(), k.ncols()),
                            });
                        }
                        let sys =
                            LinearSystem::unstable(a, b, *kappa, *gamma, *beta).map_err(|e| config_error("system", e))?;
                        let closed = sys.a() + sys.b() * &k;
                        check_strong_stability(&closed, *kappa, *gamma)
                            .map_err(|e| config_error("system.stabilizer", format!("A + B K0 is not certified: {e}")))?;
                        Ok(Plant { sys, stabilizer: Some(k) })
                    }
                }
            }
            SystemSpec::Random { dx, du, rho, b_norm, seed } => {
                let sys = LinearSystem::random(*dx, *du, *rho, *b_norm, *seed).map_err(|e| config_error("system", e))?;
                Ok(Plant { sys, stabilizer: None })
            }
        }
    }
}

/// `c(x, u) = Σ_i w_i φ(z_i − a_i)` over `z = (x, u)`. Weights default to one
/// and targets to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    SmoothedL1 {
        delta: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        targets: Option<Vec<f64>>,
    },
    Huber {
        delta: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        targets: Option<Vec<f64>>,
    },
    QuadraticClipped {
        radius: f64,
        #[serde(default)]
        weights: Option<Vec<f64>>,
        #[serde(default)]
        targets: Option<Vec<f64>>,
    },
}

impl CostSpec {
    pub fn build(&self, dx: usize, du: usize) -> Result<SeparableCost> {
        let (family, weights, targets) = match self {
            CostSpec::SmoothedL1 { delta, weights, targets } => (CostFamily::SmoothedL1 { delta: *delta }, weights, targets),
            CostSpec::Huber { delta, weights, targets } => (CostFamily::Huber { delta: *delta }, weights, targets),
            CostSpec::QuadraticClipped { radius, weights, targets } => {
                (CostFamily::QuadraticClipped { radius: *radius }, weights, targets)
            }
        };
        let n = dx + du;
        let weights = weights.clone().unwrap_or_else(|| vec![1.0; n]);
        let targets = targets.clone().unwrap_or_else(|| vec![0.0; n]);
        SeparableCost::new(family, dx, du, weights, targets).map_err(|e| config_error("cost", e))
    }
}

/// Policy class and evaluation settings for `J*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorSpec {
    pub h: usize,
    pub g: f64,
    /// Exact Gaussian quadrature when the cost allows it, Monte-Carlo otherwise.
    pub quadrature: bool,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for ComparatorSpec {
    fn default() -> Self {
        Self { h: 3, g: 1.0, quadrature: true, mc_samples: 4096, mc_seed: 0 }
    }
}

/// How a learner's initial `(Â₀, B̂₀)` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    /// The truth plus a random perturbation of Frobenius norm `scale`, drawn
    /// per seed.
    Perturbed {
        #[serde(default = "default_perturbation")]
        scale: f64,
    },
    Given {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
    /// Gaussian exploration for `steps` steps, then a regularized fit.
    Warmup { steps: usize },
}

fn default_perturbation() -> f64 {
    0.1
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Perturbed { scale: default_perturbation() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerSpec {
    /// Always queries the same policy (zero by default).
    Constant {
        #[serde(default)]
        policy: Option<Vec<f64>>,
    },
    /// Projected two-point descent; repeats come from `oracle` when given.
    TwoPoint {
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_eta0")]
        eta0: f64,
        #[serde(default = "one_usize")]
        repeats: usize,
        #[serde(default)]
        oracle: Option<RobustOracleParams>,
    },
}

fn default_delta() -> f64 {
    0.05
}

fn default_eta0() -> f64 {
    0.05
}

fn one_usize() -> usize {
    1
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Constant { policy: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ControllerSpec {
    Geometric {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: GeometricConfig,
        #[serde(default)]
        init: InitSpec,
        /// Replace the ridge estimate by the truth at every elimination.
        #[serde(default)]
        oracle_estimates: bool,
    },
    Etc {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: EtcConfig,
    },
    WarmupCase {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: WarmupCaseConfig,
        #[serde(default)]
        oracle_estimates: bool,
    },
    ControlEtc {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: ControlEtcConfig,
    },
    Bandit {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: BanditConfig,
        #[serde(default)]
        optimizer: OptimizerSpec,
        #[serde(default)]
        init: InitSpec,
    },
    Gpc {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        params: GpcConfig,
        /// Fixed feedback gain; defaults to the system's stabilizer or zero.
        #[serde(default)]
        gain: Option<Vec<Vec<f64>>>,
    },
}

impl ControllerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::Geometric { .. } => "geometric",
            ControllerSpec::Etc { .. } => "etc",
            ControllerSpec::WarmupCase { .. } => "warmup-case",
            ControllerSpec::ControlEtc { .. } => "control-etc",
            ControllerSpec::Bandit { .. } => "bandit",
            ControllerSpec::Gpc { .. } => "gpc",
        }
    }

    /// Name used in file names and summaries.
    pub fn label(&self) -> String {
        let label = match self {
            ControllerSpec::Geometric { label, .. }
            | ControllerSpec::Etc { label, .. }
            | ControllerSpec::WarmupCase { label, .. }
            | ControllerSpec::ControlEtc { label, .. }
            | ControllerSpec::Bandit { label, .. }
            | ControllerSpec::Gpc { label, .. } => label,
        };
        label.clone().unwrap_or_else(|| self.kind().to_string())
    }

    /// Controllers over constant controls, for systems with `A = 0`.
    pub fn is_control_space(&self) -> bool {
        matches!(self, ControllerSpec::WarmupCase { .. } | ControllerSpec::ControlEtc { .. })
    }
}

impl ExperimentConfig {
    /// Parse and validate a document; errors carry the path of the bad field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let message = e.inner().to_string();
            refine_controller_error(text, &path).unwrap_or(Error::Config { path, message })
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Config {
                path: "version".into(),
                message: format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.version),
            });
        }
        if let Some(i) = self.horizons.iter().position(|&t| t == 0) {
            return Err(Error::Config { path: format!("horizons[{i}]"), message: "horizon must be positive".into() });
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, c) in self.controllers.iter().enumerate() {
            let label = c.label();
            if label.is_empty() || !label.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch)) {
                return Err(Error::Config {
                    path: format!("controllers[{i}].label"),
                    message: format!("label `{label}` must be non-empty and use [A-Za-z0-9._-]"),
                });
            }
            if !labels.insert(label.clone()) {
                return Err(Error::Config {
                    path: format!("controllers[{i}].label"),
                    message: format!("duplicate controller label `{label}`"),
                });
            }
        }
        if !(self.blowup > 0.0) {
            return Err(Error::Config { path: "blowup".into(), message: "must be positive".into() });
        }
        Ok(())
    }

    /// SHA-256 of the normalized document (defaults filled in).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// The output directory after applying [`OUTPUT_ROOT_ENV`] to relative paths.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

pub(crate) fn config_error(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Config { path: path.into(), message: e.to_string() }
}

fn nested_error<T: serde::de::DeserializeOwned>(prefix: &str, value: &serde_json::Value) -> Option<Error> {
    let err = serde_path_to_error::deserialize::<_, T>(value).err()?;
    let inner = err.path().to_string();
    let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
    Some(Error::Config { path, message: err.inner().to_string() })
}

/// Tagged enums buffer their content, so a failure inside a controller is
/// reported at `controllers[i]`. Re-parse the nested objects of that entry to
/// locate the offending key.
fn refine_controller_error(text: &str, path: &str) -> Option<Error> {
    let index: usize = path.strip_prefix("controllers[")?.strip_suffix(']')?.parse().ok()?;
    let doc: serde_json::Value = serde_json::from_str(text).ok()?;
    let entry = doc.get("controllers")?.get(index)?;
    let name = entry.get("name")?.as_str()?;
    let prefix = |k: &str| format!("{path}.{k}");
    let field = |k: &str| entry.get(k);
    if let Some(v) = field("params") {
        let p = prefix("params");
        let found = match name {
            "geometric" => nested_error::<GeometricConfig>(&p, v),
            "etc" => nested_error::<EtcConfig>(&p, v),
            "warmup-case" => nested_error::<WarmupCaseConfig>(&p, v),
            "control-etc" => nested_error::<ControlEtcConfig>(&p, v),
            "bandit" => nested_error::<BanditConfig>(&p, v),
            "gpc" => nested_error::<GpcConfig>(&p, v),
            _ => None,
        };
        if found.is_some() {
            return found;
        }
    }
    if let Some(e) = field("init").and_then(|v| nested_error::<InitSpec>(&prefix("init"), v)) {
        return Some(e);
    }
    field("optimizer").and_then(|v| nested_error::<OptimizerSpec>(&prefix("optimizer"), v))
}
