//! Configured experiments: build the model from a config, run replicas in
//! parallel, measure, and persist the results.

mod artifacts;
mod commands;
pub mod config;
pub mod stats;

use std::f64::consts::PI;
use std::sync::Arc;

pub use artifacts::{load_fields, provenance_line, write_atomic};
pub use commands::{execute, Command, ConvergenceRow, ConvergenceTable, ReplicaRecord, ScenarioOutcome, Verdict};
pub use config::ExperimentConfig;

use crate::error::{Error, Result};
use crate::grid::{SpatialGrid, TimeGrid};
use crate::noise::{mix_seed, NoiseModel};
use crate::spde::{Coefficient, CoefficientSet, RunConfig, ScalarFn};
use crate::spectral::eigenfunction;
use config::{FiniteShape, NoiseVariant};

pub const PROFILES: &[&str] = &["sine", "e1", "parabola", "bump", "sine_sq", "zero"];

/// Named initial profile. All vanish at `x = 0` and `x = 1`; `parabola`
/// and `sine_sq` have `u0'' ≠ 0` there, so `u0⁽¹⁾` does not vanish on the
/// boundary for the heat equation.
pub fn profile(name: &str) -> Result<ScalarFn> {
    let f: ScalarFn = match name {
        "sine" => Arc::new(|x: f64| (PI * x).sin()),
        "e1" => Arc::new(|x: f64| eigenfunction(1, x)),
        "parabola" => Arc::new(|x: f64| x * (1.0 - x)),
        "bump" => Arc::new(|x: f64| 16.0 * x * x * (1.0 - x) * (1.0 - x)),
        "sine_sq" => Arc::new(|x: f64| (PI * x).sin().powi(2)),
        "zero" => Arc::new(|_| 0.0),
        other => {
            return Err(Error::config(
                "spde.u0",
                format!("unknown profile `{other}`; expected one of {}", PROFILES.join(", ")),
            ))
        }
    };
    Ok(f)
}

fn table(key: &str, knots: &Option<Vec<[f64; 2]>>) -> Result<Coefficient> {
    let knots = knots
        .as_ref()
        .ok_or_else(|| Error::config(format!("spde.{key}_table"), "required when the coefficient is `table`"))?;
    Coefficient::table(knots.iter().map(|k| (k[0], k[1])).collect())
        .map_err(|e| Error::config(format!("spde.{key}_table"), e.to_string()))
}

pub fn build_coefficients(config: &ExperimentConfig) -> Result<CoefficientSet> {
    let s = &config.spde;
    let a = match s.a.as_str() {
        "heat" => Coefficient::constant(1.0),
        "twoplus_sin" => Coefficient::two_plus_sin(),
        "twoplus_xi" => Coefficient::affine(2.0, 1.0),
        "table" => table("A", &s.a_table)?,
        other => return Err(Error::config("spde.A", format!("unknown diffusion `{other}`"))),
    };
    let b = match s.b.as_str() {
        "zero" => Coefficient::constant(0.0),
        "burgers_flux" => Coefficient::burgers_flux(s.burgers_radius),
        "table" => table("B", &s.b_table)?,
        other => return Err(Error::config("spde.B", format!("unknown flux `{other}`"))),
    };
    let f = match s.f.as_str() {
        "zero" => Coefficient::constant(0.0),
        "linear_drift" => Coefficient::affine(0.0, -1.0),
        "table" => table("F", &s.f_table)?,
        other => return Err(Error::config("spde.F", format!("unknown drift `{other}`"))),
    };
    CoefficientSet::new(a, b, f, s.nu, s.mu).map_err(|e| Error::config("spde.nu, spde.mu", e.to_string()))
}

pub fn build_noise(config: &ExperimentConfig) -> Result<NoiseModel> {
    let n = &config.noise;
    let sigma = n.sigma;
    Ok(match n.variant {
        NoiseVariant::LinearQ => NoiseModel::geometric(n.q_scale, n.q_decay, n.k_trunc.unwrap_or(config.spde.nx))
            .map_err(|e| Error::config("noise", e.to_string()))?,
        NoiseVariant::FiniteDim => match n.shape {
            FiniteShape::AdditiveE1 => NoiseModel::additive_first_mode(sigma),
            FiniteShape::Zero => NoiseModel::zero(),
            FiniteShape::Linear => NoiseModel::scalar("linear", move |_, xi| sigma * xi),
            FiniteShape::SineLinear => NoiseModel::scalar("sine_linear", move |x, xi| sigma * (PI * x).sin() * xi),
            FiniteShape::Quadratic => NoiseModel::scalar("quadratic", move |_, xi| sigma * xi * xi),
        },
    })
}

/// A validated config with its model objects built.
#[derive(Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: SpatialGrid,
    pub times: TimeGrid,
    pub coefficients: CoefficientSet,
    pub noise: NoiseModel,
    pub initial: ScalarFn,
    pub hash: String,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("scenario", &self.config.scenario)
            .field("hash", &self.hash)
            .finish()
    }
}

const REPLICA_STREAM: u64 = 0x7265_706c_6963_6173;

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let grid = SpatialGrid::new(config.spde.nx).map_err(|e| Error::config("spde.nx", e.to_string()))?;
        let times =
            TimeGrid::with_step(config.spde.horizon, config.spde.dt).map_err(|e| Error::config("spde.dt", e.to_string()))?;
        Ok(Self {
            grid,
            times,
            coefficients: build_coefficients(&config)?,
            noise: build_noise(&config)?,
            initial: profile(&config.spde.u0)?,
            hash: config.hash(),
            config,
        })
    }

    /// The same experiment on another `(nx, dt)`.
    pub fn at_resolution(&self, nx: usize, dt: f64) -> Result<Self> {
        let mut c = self.config.clone();
        c.spde.nx = nx;
        c.spde.dt = dt;
        if c.noise.k_trunc.is_some_and(|k| k > nx) {
            c.noise.k_trunc = Some(nx);
        }
        Self::new(c)
    }

    pub fn seed(&self) -> u64 {
        self.config.noise.seed
    }

    /// Seed of replica `r`; independent of the grid so that runs at
    /// different resolutions share nested Brownian paths.
    pub fn replica_seed(&self, r: usize) -> u64 {
        mix_seed(self.seed(), r as u64, REPLICA_STREAM)
    }

    pub fn run_config(&self, r: usize) -> RunConfig {
        RunConfig {
            grid: self.grid,
            times: self.times,
            coefficients: self.coefficients.clone(),
            noise: self.noise.clone(),
            initial: self.initial.clone(),
            seed: self.replica_seed(r),
            ceiling: self.config.spde.ceiling,
        }
    }

    /// Heat flow of `e_1` with no forcing and no noise: the exact solution
    /// is `e^{-π² t} e_1`.
    pub fn has_analytic_solution(&self) -> bool {
        let c = &self.config;
        c.spde.a == "heat"
            && c.spde.b == "zero"
            && c.spde.f == "zero"
            && c.spde.u0 == "e1"
            && c.noise.variant == NoiseVariant::FiniteDim
            && c.noise.shape == FiniteShape::Zero
    }

    pub(crate) fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.run.workers)
            .build()
            .map_err(|e| Error::config("run.workers", e.to_string()))
    }
}
