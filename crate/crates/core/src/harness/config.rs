//! Experiment configuration.
//!
//! A config file is TOML with dotted keys, e.g.
//!
//! ```toml
//! scenario = "quasi"
//! spde.nx = 127
//! spde.dt = 5e-5
//! noise.seed = 7
//! run.replicas = 20
//! ```
//!
//! The named scenario supplies every value; keys in the file override it.
//! Unknown keys are rejected with their full path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectral::EigenVariant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub spde: SpdeSection,
    pub noise: NoiseSection,
    pub run: RunSection,
    pub checks: ChecksSection,
    pub regularity: RegularitySection,
    pub converge: ConvergeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeSection {
    /// `heat`, `twoplus_sin`, `twoplus_xi` or `table`.
    #[serde(rename = "A")]
    pub a: String,
    /// `zero`, `burgers_flux` or `table`.
    #[serde(rename = "B")]
    pub b: String,
    /// `zero`, `linear_drift` or `table`.
    #[serde(rename = "F")]
    pub f: String,
    #[serde(rename = "A_table", default, skip_serializing_if = "Option::is_none")]
    pub a_table: Option<Vec<[f64; 2]>>,
    #[serde(rename = "B_table", default, skip_serializing_if = "Option::is_none")]
    pub b_table: Option<Vec<[f64; 2]>>,
    #[serde(rename = "F_table", default, skip_serializing_if = "Option::is_none")]
    pub f_table: Option<Vec<[f64; 2]>>,
    /// Initial profile name, see [`profile`](super::profile).
    pub u0: String,
    pub nx: usize,
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub nu: f64,
    pub mu: f64,
    pub ceiling: f64,
    /// Half-width of the quadratic part of `burgers_flux`.
    pub burgers_radius: f64,
    pub eigen_variant: EigenVariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariant {
    FiniteDim,
    LinearQ,
}

/// Built-in finite-dimensional noise maps `H_1(x, ξ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiniteShape {
    /// `σ e_1(x)`.
    AdditiveE1,
    Zero,
    /// `σ ξ`.
    Linear,
    /// `σ sin(πx) ξ`.
    SineLinear,
    /// `σ ξ²`.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub variant: NoiseVariant,
    /// Defaults to `spde.nx` for linear noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_trunc: Option<usize>,
    /// Geometric ratio of `q_k`.
    pub q_decay: f64,
    /// `q_1`.
    pub q_scale: f64,
    pub sigma: f64,
    pub shape: FiniteShape,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub replicas: usize,
    /// Not serialized, so artifacts do not depend on where they are written.
    #[serde(skip_serializing, default = "default_out")]
    pub out: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// How many replicas get their fields written out.
    pub field_replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compat_order: Option<u32>,
    pub residual_tol_factor: f64,
    pub compat_tol_factor: f64,
    pub c_max: f64,
    pub r0: Vec<f64>,
    pub har_a: f64,
    pub growth_probes: Vec<f64>,
    /// Half-width of the `ξ` range probed for ellipticity and growth.
    pub probe_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularitySection {
    pub a_list: Vec<f64>,
    pub stability_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_time_band: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_time_band: Option<[f64; 2]>,
    #[serde(default)]
    pub y_smoother_than_z: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    pub nx: Vec<usize>,
    pub dt: Vec<f64>,
}

pub const SCENARIOS: &[&str] = &[
    "heat",
    "additive",
    "linearq",
    "quasi",
    "compat_k2_pass",
    "compat_k2_fail",
    "zero",
];

impl ExperimentConfig {
    /// The named preset.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self {
            scenario: name.into(),
            spde: SpdeSection {
                a: "heat".into(),
                b: "zero".into(),
                f: "zero".into(),
                a_table: None,
                b_table: None,
                f_table: None,
                u0: "e1".into(),
                nx: 127,
                dt: 1e-4,
                horizon: 0.1,
                nu: 1.0,
                mu: 1.0,
                ceiling: crate::spde::DEFAULT_CEILING,
                burgers_radius: 2.0,
                eigen_variant: EigenVariant::Continuum,
            },
            noise: NoiseSection {
                variant: NoiseVariant::FiniteDim,
                k_trunc: None,
                q_decay: 0.5,
                q_scale: 1.0,
                sigma: 1.0,
                shape: FiniteShape::Zero,
                seed: 0,
            },
            run: RunSection {
                replicas: 1,
                out: PathBuf::from("out"),
                workers: 0,
                field_replicas: 1,
            },
            checks: ChecksSection {
                compat_order: None,
                residual_tol_factor: 5.0,
                compat_tol_factor: 10.0,
                c_max: 100.0,
                r0: vec![2.0, 4.0, 8.0],
                har_a: 1.0,
                growth_probes: vec![0.0, 0.5, 1.0, 2.0, 4.0],
                probe_range: 10.0,
            },
            regularity: RegularitySection {
                a_list: vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                stability_tol: 0.05,
                beta: Some(0.25),
                u_time_band: None,
                z_time_band: None,
                y_smoother_than_z: false,
            },
            converge: ConvergeSection {
                nx: vec![15, 31, 63],
                dt: vec![2e-3, 5e-4, 1.25e-4],
            },
        };
        match name {
            "heat" => {
                c.regularity.u_time_band = Some([0.9, 1.1]);
            }
            "zero" => {
                c.spde.u0 = "zero".into();
                c.spde.nx = 31;
            }
            "additive" => {
                c.spde.nx = 31;
                c.noise.shape = FiniteShape::AdditiveE1;
                c.run.replicas = 100;
                c.regularity.z_time_band = Some([0.35, 0.50]);
            }
            "linearq" => {
                c.spde.nx = 31;
                c.spde.u0 = "sine".into();
                c.noise.variant = NoiseVariant::LinearQ;
                c.run.replicas = 20;
            }
            "quasi" => {
                c.spde.a = "twoplus_sin".into();
                c.spde.b = "burgers_flux".into();
                c.spde.f = "linear_drift".into();
                c.spde.nu = 1.0;
                c.spde.mu = 3.0;
                c.spde.u0 = "sine".into();
                c.spde.nx = 63;
                c.spde.dt = 2e-4;
                c.noise.variant = NoiseVariant::LinearQ;
                c.noise.q_scale = 2.0;
                c.run.replicas = 20;
                c.regularity.u_time_band = Some([0.30, 0.55]);
                c.regularity.y_smoother_than_z = true;
            }
            "compat_k2_pass" => {
                c.spde.u0 = "sine".into();
                c.spde.nx = 63;
                c.checks.compat_order = Some(2);
            }
            "compat_k2_fail" => {
                c.spde.u0 = "parabola".into();
                c.spde.nx = 63;
                c.checks.compat_order = Some(2);
            }
            other => {
                return Err(Error::config(
                    "scenario",
                    format!("unknown scenario `{other}`; expected one of {}", SCENARIOS.join(", ")),
                ))
            }
        }
        Ok(c)
    }

    /// Parses TOML text: the scenario preset overlaid with the file's keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.to_string()))?;
        let scenario = match user.get("scenario") {
            None => "heat".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::config("scenario", "must be a string")),
        };
        let preset = Self::preset(&scenario)?;
        let mut merged = toml::Table::try_from(&preset).map_err(|e| Error::config("<preset>", e.to_string()))?;
        merge(&mut merged, user);
        let text = toml::to_string(&merged).map_err(|e| Error::config("<file>", e.to_string()))?;
        let de = toml::Deserializer::parse(&text).map_err(|e| Error::config("<file>", e.to_string()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(key, e.into_inner().message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Rejects values that are out of range on their own or in combination.
    pub fn validate(&self) -> Result<()> {
        let s = &self.spde;
        if s.nx == 0 {
            return Err(Error::config("spde.nx", "must be at least 1"));
        }
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return Err(Error::config("spde.T", "must be positive"));
        }
        if !(s.dt > 0.0 && s.dt <= s.horizon) {
            return Err(Error::config("spde.dt", "must lie in (0, spde.T]"));
        }
        crate::grid::TimeGrid::with_step(s.horizon, s.dt).map_err(|e| Error::config("spde.dt", e.to_string()))?;
        if !(s.nu > 0.0) {
            return Err(Error::config("spde.nu", "must be positive"));
        }
        if !(s.nu <= s.mu) {
            return Err(Error::config(
                "spde.nu, spde.mu",
                format!("spde.nu = {} exceeds spde.mu = {}", s.nu, s.mu),
            ));
        }
        if !(s.ceiling > 0.0) {
            return Err(Error::config("spde.ceiling", "must be positive"));
        }
        if !(s.burgers_radius > 0.0) {
            return Err(Error::config("spde.burgers_radius", "must be positive"));
        }
        let n = &self.noise;
        if let Some(k) = n.k_trunc {
            if k == 0 || k > s.nx {
                return Err(Error::config("noise.k_trunc", format!("must lie in 1..={}", s.nx)));
            }
        }
        if !(n.q_decay > 0.0 && n.q_decay.is_finite()) {
            return Err(Error::config("noise.q_decay", "must be positive"));
        }
        if self.run.replicas == 0 {
            return Err(Error::config("run.replicas", "must be at least 1"));
        }
        let c = &self.checks;
        if let Some(k) = c.compat_order {
            if !(1..=4).contains(&k) {
                return Err(Error::config("checks.compat_order", "must lie in 1..=4"));
            }
        }
        if c.r0.is_empty() || c.r0.iter().any(|r| !(*r >= 2.0)) {
            return Err(Error::config("checks.r0", "needs at least one exponent, each at least 2"));
        }
        if !(c.har_a >= 0.0) {
            return Err(Error::config("checks.har_a", "must be nonnegative"));
        }
        if c.growth_probes.is_empty() {
            return Err(Error::config("checks.growth_probes", "must not be empty"));
        }
        let r = &self.regularity;
        if r.a_list.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::config("regularity.a_list", "orders must be nonnegative"));
        }
        if let Some(b) = r.beta {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config("regularity.beta", "must lie in (0, 1)"));
            }
        }
        let cv = &self.converge;
        if cv.nx.len() != cv.dt.len() {
            return Err(Error::config("converge.nx, converge.dt", "ladders must have equal length"));
        }
        for &nx in &cv.nx {
            crate::grid::SpatialGrid::new(nx).map_err(|e| Error::config("converge.nx", e.to_string()))?;
        }
        for &dt in &cv.dt {
            crate::grid::TimeGrid::with_step(s.horizon, dt).map_err(|e| Error::config("converge.dt", e.to_string()))?;
        }
        super::profile(&s.u0).map_err(|_| Error::config("spde.u0", format!("unknown profile `{}`", s.u0)))?;
        super::build_coefficients(self)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
