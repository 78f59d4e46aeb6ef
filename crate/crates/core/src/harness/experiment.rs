//! Executing an experiment document: one rollout per (controller, horizon,
//! seed) cell, per-cell CSVs, a summary CSV and a JSON run record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{
    comparator, compute_regret, control_comparator, control_regret, effective_budget, BanditController, ComparatorValue,
    ConstantOptimizer, ControlEtcController, EtcController, GeometricController, GpcController, Initialization,
    ProblemInfo, RegretLedger, StabilizedController, TwoPointOptimizer, WarmupCaseController, ZerothOrderOptimizer,
};
use crate::dfc::policy::{DfcPolicy, PolicyClassSpec};
use crate::dfc::surrogate::Expectation;
use crate::error::{Error, Result};
use crate::estimation::SystemEstimate;
use crate::geometry::region::NormBudget;
use crate::harness::analysis::{write_summary, SummaryRow};
use crate::harness::config::{config_error, ControllerSpec, ExperimentConfig, InitSpec, OptimizerSpec, Plant};
use crate::lds::cost::{ConvexCost, FeedbackCost};
use crate::lds::noise::DisturbanceSource;
use crate::lds::rollout::{rollout, Controller, RolloutOptions, Trajectory};
use crate::linalg::from_rows;
use crate::rng;

pub const CELL_HEADER: [&str; 6] =
    ["t", "realized_cost", "cumulative_regret", "cumulative_avg_regret", "epoch", "policy_switch_flag"];

/// Everything shared by the cells of one experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub plant: Plant,
    /// The cost as specified, `c(x, u)`.
    pub cost: Arc<dyn ConvexCost>,
    /// The cost seen by wrapped learners, `c(x, K₀x + v)`, or `cost`.
    pub learner_cost: Arc<dyn ConvexCost>,
    pub expectation: Expectation,
    /// `J*` per controller label.
    pub comparators: BTreeMap<String, ComparatorValue>,
}

/// A finished (or failed) cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub controller: String,
    pub horizon: usize,
    pub seed: u64,
    pub wall_ms: u128,
    pub result: std::result::Result<CellData, String>,
}

#[derive(Debug, Clone)]
pub struct CellData {
    pub ledger: RegretLedger,
    pub audit: serde_json::Value,
    pub trajectory: Trajectory,
    pub disturbance_estimates: Option<Vec<DVector<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub controller: String,
    pub horizon: usize,
    pub seed: u64,
    /// Relative to the record's directory.
    pub file: Option<String>,
    pub r_t: Option<f64>,
    pub r_t_avg: Option<f64>,
    pub wall_ms: u128,
    pub error: Option<String>,
    pub audit: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorRecord {
    pub value: f64,
    pub stderr: f64,
    pub warning: Option<String>,
}

/// Contents of `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub crate_version: String,
    pub config: ExperimentConfig,
    pub comparators: BTreeMap<String, ComparatorRecord>,
    pub cells: Vec<CellRecord>,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config { path: e.path().to_string(), message: e.inner().to_string() })
    }

    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

pub fn cell_file_name(controller: &str, horizon: usize, seed: u64) -> String {
    format!("cells/{controller}_T{horizon}_seed{seed}.csv")
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let plant = config.system.build()?;
        let (dx, du) = (plant.sys.dx(), plant.sys.du());
        let cost: Arc<dyn ConvexCost> = Arc::new(config.cost.build(dx, du)?);
        let learner_cost: Arc<dyn ConvexCost> = match &plant.stabilizer {
            Some(k) => Arc::new(FeedbackCost::new(cost.clone(), k.clone())?),
            None => cost.clone(),
        };
        let cs = &config.comparator;
        let expectation = if cs.quadrature {
            Expectation::auto(cost.as_ref(), cs.mc_samples, cs.mc_seed)
        } else {
            Expectation::MonteCarlo { samples: cs.mc_samples, seed: cs.mc_seed }
        };
        let mut exp = Self { config, plant, cost, learner_cost, expectation, comparators: BTreeMap::new() };
        exp.comparators = exp.compute_comparators()?;
        Ok(exp)
    }

    fn info(&self) -> ProblemInfo {
        ProblemInfo::of(&self.plant.sys)
    }

    /// Budget of the comparator class and of wrapped learners.
    fn budget(&self, g: f64) -> f64 {
        match self.plant.stabilizer {
            Some(_) => effective_budget(g, self.plant.sys.kappa(), self.plant.sys.gamma()),
            None => g,
        }
    }

    fn compute_comparators(&self) -> Result<BTreeMap<String, ComparatorValue>> {
        let mut out = BTreeMap::new();
        let mut dfc: Option<ComparatorValue> = None;
        for (i, spec) in self.config.controllers.iter().enumerate() {
            let value = match spec {
                ControllerSpec::WarmupCase { params, .. } => self.control_comparator(i, params.u_bound)?,
                ControllerSpec::ControlEtc { params, .. } => self.control_comparator(i, params.u_bound)?,
                _ => {
                    if dfc.is_none() {
                        let cs = &self.config.comparator;
                        let class = PolicyClassSpec::new(cs.h, self.budget(cs.g), self.plant.sys.dx(), self.plant.sys.du())
                            .map_err(|e| config_error("comparator", e))?;
                        dfc = Some(comparator(
                            &self.plant.closed_loop(),
                            self.plant.sys.b(),
                            self.learner_cost.clone(),
                            &class,
                            self.expectation,
                        )?);
                    }
                    dfc.clone().expect("computed above")
                }
            };
            out.insert(spec.label(), value);
        }
        Ok(out)
    }

    fn control_comparator(&self, index: usize, u_bound: f64) -> Result<ComparatorValue> {
        if self.plant.sys.a().amax() != 0.0 || self.plant.stabilizer.is_some() {
            return Err(config_error(
                &format!("controllers[{index}]"),
                "control-space controllers require A = 0 and no stabilizer",
            ));
        }
        control_comparator(self.plant.sys.b(), self.cost.clone(), u_bound, self.expectation)
    }

    /// `(controller index, horizon, seed)` in output order.
    pub fn cells(&self) -> Vec<(usize, usize, u64)> {
        let mut out = Vec::new();
        for i in 0..self.config.controllers.len() {
            for &t in &self.config.horizons {
                for &s in &self.config.seeds {
                    out.push((i, t, s));
                }
            }
        }
        out
    }

    fn initial_estimate(&self, init: &InitSpec, seed: u64) -> Result<SystemEstimate> {
        let a = self.plant.closed_loop();
        let b = self.plant.sys.b().clone();
        match init {
            InitSpec::Perturbed { scale } => {
                let (dx, du) = (a.nrows(), b.ncols());
                let mut r = rng::stream(seed, &[rng::label::PERTURBATION]);
                let mut g = DMatrix::zeros(dx, dx + du);
                rng::fill_standard_normal(&mut r, g.as_mut_slice());
                let norm = g.norm().max(f64::MIN_POSITIVE);
                let g = g * (scale / norm);
                Ok(SystemEstimate::new(a + g.columns(0, dx), b + g.columns(dx, du)))
            }
            InitSpec::Given { a, b } => Ok(SystemEstimate::new(from_rows(a)?, from_rows(b)?)),
            InitSpec::Warmup { .. } => Err(Error::InvalidArgument("warmup initialization has no fixed estimate".into())),
        }
    }

    /// Build the controller of a cell; wrapped learners see `(A + B K₀, B)`.
    pub fn build_controller(&self, index: usize, horizon: usize, seed: u64) -> Result<Box<dyn Controller>> {
        let spec = &self.config.controllers[index];
        let mut info = self.info();
        let cost = self.learner_cost.clone();
        let truth = SystemEstimate::new(self.plant.closed_loop(), self.plant.sys.b().clone());
        let ctrl_seed = rng::derive_seed(seed, &[rng::label::CONTROLLER, index as u64]);
        let inner: Box<dyn Controller> = match spec {
            ControllerSpec::Geometric { params, init, oracle_estimates, .. } => {
                let mut params = params.clone();
                params.g = self.budget(params.g);
                let init = match init {
                    InitSpec::Warmup { steps } => Initialization::Warmup { steps: *steps },
                    other => Initialization::given(&self.initial_estimate(other, seed)?),
                };
                let mut c = GeometricController::new(params, info, cost, init, ctrl_seed)?;
                if *oracle_estimates {
                    c = c.with_estimate_override(truth);
                }
                Box::new(c)
            }
            ControllerSpec::Etc { params, .. } => {
                let mut params = params.clone();
                params.g = self.budget(params.g);
                Box::new(EtcController::new(params, info, cost, horizon, ctrl_seed)?)
            }
            ControllerSpec::WarmupCase { params, oracle_estimates, .. } => {
                info.beta = self.plant.sys.beta();
                let mut c = WarmupCaseController::new(params.clone(), info.dx, info.du, info.beta, cost, ctrl_seed)?;
                if *oracle_estimates {
                    c = c.with_estimate_override(self.plant.sys.b().clone());
                }
                Box::new(c)
            }
            ControllerSpec::ControlEtc { params, .. } => {
                Box::new(ControlEtcController::new(params.clone(), info.dx, info.du, cost, horizon, ctrl_seed)?)
            }
            ControllerSpec::Bandit { params, optimizer, init, .. } => {
                let mut params = params.clone();
                params.g = self.budget(params.g);
                let class = PolicyClassSpec::new(params.h, params.g, info.dx, info.du)?;
                let initial = self.initial_estimate(init, seed)?;
                let opt: Box<dyn ZerothOrderOptimizer> = match optimizer {
                    OptimizerSpec::Constant { policy } => {
                        let point = match policy {
                            Some(v) => DfcPolicy::unflatten(class.h, class.dx, class.du, v)?.flatten(),
                            None => DVector::zeros(class.dim()),
                        };
                        Box::new(ConstantOptimizer::new(point))
                    }
                    OptimizerSpec::TwoPoint { delta, eta0, repeats, oracle } => {
                        let repeats = oracle.map_or(*repeats, |o| o.repeats());
                        let set = NormBudget::new(class.block_shapes(), class.g)?;
                        Box::new(TwoPointOptimizer::new(
                            set,
                            DVector::zeros(class.dim()),
                            *delta,
                            *eta0,
                            repeats,
                            rng::derive_seed(ctrl_seed, &[rng::label::EXPLORATION]),
                        )?)
                    }
                };
                Box::new(BanditController::new(params, info, opt, initial, horizon)?)
            }
            ControllerSpec::Gpc { params, gain, .. } => {
                // GPC carries its own gain and faces the raw system.
                let k = match (gain, &self.plant.stabilizer) {
                    (Some(k), _) => from_rows(k)?,
                    (None, Some(k0)) => k0.clone(),
                    (None, None) => DMatrix::zeros(info.du, info.dx),
                };
                return Ok(Box::new(GpcController::new(params.clone(), info, self.plant.sys.b().clone(), k, self.cost.clone())?));
            }
        };
        Ok(match &self.plant.stabilizer {
            Some(k0) => {
                let g_eff = self.budget(match spec {
                    ControllerSpec::Geometric { params, .. } => params.g,
                    ControllerSpec::Etc { params, .. } => params.g,
                    ControllerSpec::Bandit { params, .. } => params.g,
                    _ => self.config.comparator.g,
                });
                Box::new(StabilizedController::new(k0.clone(), inner, g_eff, self.config.blowup))
            }
            None => inner,
        })
    }

    /// Run one cell to completion.
    pub fn run_cell(&self, index: usize, horizon: usize, seed: u64) -> CellOutcome {
        let label = self.config.controllers[index].label();
        let start = Instant::now();
        let result = self.run_cell_inner(index, horizon, seed).map_err(|e| e.to_string());
        CellOutcome { controller: label, horizon, seed, wall_ms: start.elapsed().as_millis(), result }
    }

    fn run_cell_inner(&self, index: usize, horizon: usize, seed: u64) -> Result<CellData> {
        let spec = &self.config.controllers[index];
        let sys = &self.plant.sys;
        let mut ctrl = self.build_controller(index, horizon, seed)?;
        let noise = DisturbanceSource::gaussian(sys.dx(), seed);
        let opts = RolloutOptions {
            blowup: self.config.blowup,
            budget: Some(Duration::from_secs(self.config.cell_budget_secs)),
        };
        let traj = rollout(sys, ctrl.as_mut(), &noise, horizon, &DVector::zeros(sys.dx()), self.cost.as_ref(), &opts)?;
        let j_star = &self.comparators[&spec.label()];
        let ledger = if spec.is_control_space() {
            control_regret(&traj, sys.b(), &self.cost, j_star, self.expectation)?
        } else {
            compute_regret(&traj, &ctrl.policy_log(), sys, &self.cost, j_star, self.expectation)?
        };
        Ok(CellData {
            ledger,
            audit: ctrl.audit(),
            disturbance_estimates: ctrl.disturbance_estimates().map(|w| w.to_vec()),
            trajectory: traj,
        })
    }

    /// Run every cell on the rayon pool and write all outputs under `dir`.
    pub fn run(&self, dir: &Path) -> Result<RunRecord> {
        let cells = self.cells();
        let outcomes: Vec<CellOutcome> = cells.par_iter().map(|&(i, t, s)| self.run_cell(i, t, s)).collect();
        self.write(dir, &outcomes)
    }

    pub fn write(&self, dir: &Path, outcomes: &[CellOutcome]) -> Result<RunRecord> {
        std::fs::create_dir_all(dir.join("cells"))?;
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for o in outcomes {
            let mut rec = CellRecord {
                controller: o.controller.clone(),
                horizon: o.horizon,
                seed: o.seed,
                file: None,
                r_t: None,
                r_t_avg: None,
                wall_ms: o.wall_ms,
                error: None,
                audit: serde_json::Value::Null,
            };
            match &o.result {
                Ok(data) => {
                    let file = cell_file_name(&o.controller, o.horizon, o.seed);
                    std::fs::write(dir.join(&file), cell_csv(&data.ledger)?)?;
                    let (r, ra) = (data.ledger.total_regret(), data.ledger.total_avg_regret());
                    rows.push(SummaryRow {
                        controller: o.controller.clone(),
                        horizon: o.horizon,
                        seed: o.seed,
                        r_t: r,
                        r_t_avg: ra,
                        wall_ms: o.wall_ms,
                    });
                    rec.file = Some(file);
                    rec.r_t = Some(r);
                    rec.r_t_avg = Some(ra);
                    rec.audit = data.audit.clone();
                }
                Err(e) => {
                    log::error!("cell {} T={} seed={} failed: {e}", o.controller, o.horizon, o.seed);
                    rec.error = Some(e.clone());
                }
            }
            records.push(rec);
        }
        write_summary(&dir.join("summary.csv"), &rows)?;
        let record = RunRecord {
            config_hash: self.config.hash(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            comparators: self
                .comparators
                .iter()
                .map(|(k, v)| (k.clone(), ComparatorRecord { value: v.value, stderr: v.stderr, warning: v.warning.clone() }))
                .collect(),
            cells: records,
        };
        std::fs::write(dir.join("record.json"), serde_json::to_string_pretty(&record)?)?;
        Ok(record)
    }
}

/// Per-step CSV of one ledger.
pub fn cell_csv(ledger: &RegretLedger) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CELL_HEADER)?;
    for t in 0..ledger.horizon() {
        let m = ledger.markers[t];
        w.write_record([
            (t + 1).to_string(),
            ledger.realized[t].to_string(),
            ledger.cumulative_regret[t].to_string(),
            ledger.cumulative_avg_regret[t].to_string(),
            m.epoch.to_string(),
            u8::from(m.policy_switch).to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Load, run and persist a document; returns the output directory and record.
pub fn run_experiment(config: ExperimentConfig) -> Result<(PathBuf, RunRecord)> {
    let dir = config.resolved_output_dir();
    let exp = Experiment::new(config)?;
    let record = exp.run(&dir)?;
    Ok((dir, record))
}

/// Outcome of replaying one recorded cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub controller: String,
    pub horizon: usize,
    pub seed: u64,
    /// `None` when the recomputed CSV is byte-identical to the stored one.
    pub first_difference: Option<(usize, String, String)>,
}

/// Recompute cell `index` of a record and compare it with the stored CSV.
pub fn verify_cell(record_path: &Path, index: usize) -> Result<Verification> {
    let record = RunRecord::load(record_path)?;
    let cell = record
        .cells
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("record has {} cells, asked for {index}", record.cells.len())))?;
    let file = cell
        .file
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("cell {index} failed when recorded; nothing to verify")))?;
    let dir = record_path.parent().unwrap_or_else(|| Path::new("."));
    let stored = std::fs::read(dir.join(file))?;
    let exp = Experiment::new(record.config.clone())?;
    let ci = exp
        .config
        .controllers
        .iter()
        .position(|c| c.label() == cell.controller)
        .ok_or_else(|| Error::InvalidArgument(format!("controller `{}` not in config", cell.controller)))?;
    let outcome = exp.run_cell(ci, cell.horizon, cell.seed);
    let data = outcome.result.map_err(Error::InvalidArgument)?;
    let fresh = cell_csv(&data.ledger)?;
    let first_difference = if fresh == stored {
        None
    } else {
        let a = String::from_utf8_lossy(&stored).into_owned();
        let b = String::from_utf8_lossy(&fresh).into_owned();
        let mut la = a.lines();
        let mut lb = b.lines();
        let mut line = 1;
        loop {
            match (la.next(), lb.next()) {
                (Some(x), Some(y)) if x == y => line += 1,
                (x, y) => break Some((line, x.unwrap_or("<eof>").to_string(), y.unwrap_or("<eof>").to_string())),
            }
        }
    };
    Ok(Verification { controller: cell.controller.clone(), horizon: cell.horizon, seed: cell.seed, first_difference })
}
