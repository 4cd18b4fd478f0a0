use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeField;
use crate::noise::{check_growth, check_har_surrogate, GrowthReport, HarReport, WienerPath};
use crate::regularity::{estimate_time_exponent, Measured, PairSampling, RegularityReport, RegularitySettings};
use crate::spde::{self, a_priori_monitor, SchemeMeta, SpdeRun, SCHEME_TAG};
use crate::spectral::eigenfunction;
use crate::split::{
    compatibility_check, decompose_with, energy_estimate_check, linfty_bound_check, residual_tolerance,
    CompatibilityReport, DecompositionSummary,
};

use super::artifacts::{write_atomic, write_csv_rows, write_field};
use super::config::ExperimentConfig;
use super::stats::{aggregate_metrics, Aggregate};
use super::{load_fields, Experiment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Decompose,
    Regularity,
    Converge,
    Checks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub replica: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub dt: f64,
    pub error: f64,
    /// Observed order against the previous row, in `h` and in `dt`.
    pub order_h: Option<f64>,
    pub order_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    /// `analytic` or `finest`.
    pub reference: String,
    pub rows: Vec<ConvergenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub command: Command,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub scheme: SchemeMeta,
    pub config: ExperimentConfig,
    pub replicas: Vec<ReplicaRecord>,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub checks: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compatibility: Option<CompatibilityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GrowthReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub har: Option<HarReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub regularity: Vec<RegularityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceTable>,
    pub pass: bool,
}

impl ScenarioOutcome {
    fn new(command: Command, exp: &Experiment) -> Self {
        Self {
            command,
            scenario: exp.config.scenario.clone(),
            config_hash: exp.hash.clone(),
            seed: exp.seed(),
            version: env!("CARGO_PKG_VERSION").into(),
            scheme: SchemeMeta {
                scheme: SCHEME_TAG.into(),
                dt: exp.times.dt(),
                h: exp.grid.h(),
                n_interior: exp.grid.n_interior(),
                n_steps: exp.times.n_steps(),
                seed: exp.seed(),
            },
            config: exp.config.clone(),
            replicas: Vec::new(),
            aggregates: BTreeMap::new(),
            checks: Vec::new(),
            compatibility: None,
            growth: None,
            har: None,
            regularity: Vec::new(),
            convergence: None,
            pass: true,
        }
    }

    fn finish(&mut self) {
        self.aggregates = aggregate_metrics(self.replicas.iter().map(|r| &r.metrics));
        self.pass = self.checks.iter().all(|c| c.pass);
    }

    /// Recomputes the aggregates from the per-replica records.
    pub fn recomputed_aggregates(&self) -> BTreeMap<String, Aggregate> {
        aggregate_metrics(self.replicas.iter().map(|r| &r.metrics))
    }

    pub fn check(&self, name: &str) -> Option<&Verdict> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Runs a command and writes its artifacts under `run.out`. With `source`
/// set, the solution fields are read from `source/fields` instead of being
/// simulated.
pub fn execute(command: Command, config: &ExperimentConfig, source: Option<&Path>) -> Result<ScenarioOutcome> {
    let exp = Experiment::new(config.clone())?;
    let mut outcome = ScenarioOutcome::new(command, &exp);
    let out = exp.config.run.out.clone();
    match command {
        Command::Simulate => simulate(&exp, &out, &mut outcome)?,
        Command::Decompose => decompose(&exp, &out, source, &mut outcome)?,
        Command::Regularity => regularity(&exp, &out, source, &mut outcome)?,
        Command::Converge => converge(&exp, &out, &mut outcome)?,
        Command::Checks => checks(&exp, &mut outcome)?,
    }
    outcome.finish();
    persist(&exp, &out, &outcome)?;
    Ok(outcome)
}

fn persist(exp: &Experiment, out: &Path, outcome: &ScenarioOutcome) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(outcome)?;
    json.push(b'\n');
    write_atomic(&out.join("run.json"), &json)?;
    let rows: Vec<String> = outcome
        .checks
        .iter()
        .map(|c| format!("{},{},\"{}\"", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail.replace('"', "'")))
        .collect();
    write_csv_rows(exp, &out.join("report.csv"), "check,verdict,detail", &rows)?;
    let rows: Vec<String> = outcome
        .replicas
        .iter()
        .flat_map(|r| r.metrics.iter().map(move |(k, v)| format!("{},{},{k},{v:.16e}", r.replica, r.seed)))
        .collect();
    write_csv_rows(exp, &out.join("replicas.csv"), "replica,seed,metric,value", &rows)
}

fn simulate_all(exp: &Experiment) -> Result<Vec<Result<SpdeRun>>> {
    let pool = exp.pool()?;
    Ok(pool.install(|| {
        (0..exp.config.run.replicas)
            .into_par_iter()
            .map(|r| spde::run(&exp.run_config(r)).map_err(|e| e.in_replica(r)))
            .collect()
    }))
}

/// Rebuilds runs from stored `u` fields; the Brownian paths are regenerated
/// from the replica seeds.
fn runs_from_artifacts(exp: &Experiment, dir: &Path) -> Result<Vec<Result<SpdeRun>>> {
    let fields = load_fields(exp, dir, "u")?;
    fields
        .into_iter()
        .enumerate()
        .map(|(r, u)| {
            let seed = exp.replica_seed(r);
            let path = WienerPath::sample(seed, exp.times, exp.noise.k_trunc())?;
            let monitor = Vec::new();
            Ok(Ok(SpdeRun {
                u,
                path,
                coefficients: exp.coefficients.clone(),
                noise: exp.noise.clone(),
                meta: SchemeMeta {
                    scheme: SCHEME_TAG.into(),
                    dt: exp.times.dt(),
                    h: exp.grid.h(),
                    n_interior: exp.grid.n_interior(),
                    n_steps: exp.times.n_steps(),
                    seed,
                },
                monitor,
            }))
        })
        .collect()
}

fn obtain_runs(exp: &Experiment, source: Option<&Path>) -> Result<Vec<Result<SpdeRun>>> {
    match source {
        Some(dir) => runs_from_artifacts(exp, dir),
        None => simulate_all(exp),
    }
}

fn record(exp: &Experiment, r: usize) -> ReplicaRecord {
    ReplicaRecord {
        replica: r,
        seed: exp.replica_seed(r),
        metrics: BTreeMap::new(),
        decomposition: None,
        error: None,
    }
}

fn simulation_verdict(outcome: &mut ScenarioOutcome) {
    let failed: Vec<String> = outcome.replicas.iter().filter_map(|r| r.error.clone()).collect();
    outcome.checks.push(Verdict::new(
        "simulation",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} replicas completed", outcome.replicas.len())
        } else {
            failed.join("; ")
        },
    ));
}

fn simulate(exp: &Experiment, out: &Path, outcome: &mut ScenarioOutcome) -> Result<()> {
    let runs = simulate_all(exp)?;
    let mut flagged = 0;
    for (r, run) in runs.iter().enumerate() {
        let mut rec = record(exp, r);
        match run {
            Ok(run) => {
                let m = a_priori_monitor(run, 2.0, exp.config.spde.ceiling)?;
                flagged += m.flagged as usize;
                rec.metrics.insert("sup_u".into(), run.u.sup_norm());
                rec.metrics.insert("max_l2".into(), m.max_lp);
                rec.metrics.insert(
                    "grad_energy".into(),
                    m.rows.last().map_or(0.0, |row| row.grad_energy),
                );
                if r < exp.config.run.field_replicas {
                    write_field(exp, out, "u", r, &run.u)?;
                    let rows: Vec<String> = run
                        .monitor
                        .iter()
                        .map(|m| format!("{:.16e},{:.16e},{:.16e},{:.16e}", m.t, m.l2, m.grad_l2, m.sup))
                        .collect();
                    write_csv_rows(
                        exp,
                        &out.join("fields").join(format!("monitor_r{r}.csv")),
                        "t,l2,grad_l2,sup",
                        &rows,
                    )?;
                }
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        outcome.replicas.push(rec);
    }
    simulation_verdict(outcome);
    outcome.checks.push(Verdict::new(
        "a_priori",
        flagged == 0,
        format!("{flagged} replicas exceeded the ceiling {}", exp.config.spde.ceiling),
    ));
    Ok(())
}

fn compatibility(exp: &Experiment, outcome: &mut ScenarioOutcome) -> Result<()> {
    if let Some(order) = exp.config.checks.compat_order {
        let initial = exp.initial.clone();
        let report = compatibility_check(
            &move |x| initial(x),
            &exp.coefficients,
            &exp.grid,
            order,
            exp.config.checks.compat_tol_factor,
        )?;
        let detail = report
            .traces
            .iter()
            .map(|t| format!("{}: left {:.3e} right {:.3e}", t.name, t.left, t.right))
            .collect::<Vec<_>>()
            .join("; ");
        outcome
            .checks
            .push(Verdict::new("compatibility", report.pass, format!("tol {:.3e}; {detail}", report.tol)));
        outcome.compatibility = Some(report);
    }
    Ok(())
}

fn decompose(exp: &Experiment, out: &Path, source: Option<&Path>, outcome: &mut ScenarioOutcome) -> Result<()> {
    let runs = obtain_runs(exp, source)?;
    let c = &exp.config.checks;
    let variant = exp.config.spde.eigen_variant;
    let pool = exp.pool()?;
    let records: Vec<Result<ReplicaRecord>> = pool.install(|| {
        runs.par_iter()
            .enumerate()
            .map(|(r, run)| {
                let mut rec = record(exp, r);
                let run = match run {
                    Ok(run) => run,
                    Err(e) => {
                        rec.error = Some(e.to_string());
                        return Ok(rec);
                    }
                };
                let d = decompose_with(run, variant).map_err(|e| e.in_replica(r))?;
                let tol = residual_tolerance(c.residual_tol_factor, d.settings.dt, d.settings.h, run.u.sup_norm());
                let energy = energy_estimate_check(&d.y_problem, &d.y, c.c_max)?;
                let mut linfty_ratio: f64 = 0.0;
                for &r0 in &c.r0 {
                    linfty_ratio = linfty_ratio.max(linfty_bound_check(&d.y_problem, &d.y, r0, c.c_max)?.ratio);
                }
                rec.metrics.insert("residual_sup".into(), d.residual_sup);
                rec.metrics.insert("residual_tol".into(), tol);
                rec.metrics.insert("energy_ratio".into(), energy.ratio);
                rec.metrics.insert("linfty_ratio".into(), linfty_ratio);
                rec.metrics.insert("sup_u".into(), run.u.sup_norm());
                rec.metrics.insert("sup_z".into(), d.z.sup_norm());
                if r < exp.config.run.field_replicas {
                    write_field(exp, out, "u", r, &run.u)?;
                    write_field(exp, out, "y", r, &d.y)?;
                    write_field(exp, out, "z", r, &d.z)?;
                }
                rec.decomposition = Some(d.summary());
                Ok(rec)
            })
            .collect()
    });
    for rec in records {
        outcome.replicas.push(rec?);
    }
    simulation_verdict(outcome);
    let ok = |name: &str, bound: &dyn Fn(&ReplicaRecord) -> f64| {
        let worst = outcome
            .replicas
            .iter()
            .filter(|r| r.error.is_none())
            .map(|r| r.metrics[name] / bound(r))
            .fold(0.0_f64, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) });
        (worst <= 1.0, worst)
    };
    let (pass, worst) = ok("residual_sup", &|r| r.metrics["residual_tol"]);
    outcome.checks.push(Verdict::new(
        "residual",
        pass,
        format!("worst residual_sup / tol = {worst:.3e}"),
    ));
    let (pass, worst) = ok("energy_ratio", &|_| c.c_max);
    outcome.checks.push(Verdict::new(
        "energy",
        pass,
        format!("worst ratio {:.3e} against C_max {}", worst * c.c_max, c.c_max),
    ));
    let (pass, worst) = ok("linfty_ratio", &|_| c.c_max);
    outcome.checks.push(Verdict::new(
        "linfty",
        pass,
        format!("worst ratio {:.3e} against C_max {} over r0 in {:?}", worst * c.c_max, c.c_max, c.r0),
    ));
    compatibility(exp, outcome)
}

fn band_verdict(name: &str, report: &RegularityReport, band: [f64; 2]) -> Verdict {
    match report.time_exponent.value() {
        Some(e) => Verdict::new(
            name,
            e.exponent >= band[0] && e.exponent <= band[1],
            format!("time exponent {:.4} ± {:.4}, band [{}, {}]", e.exponent, e.std_err, band[0], band[1]),
        ),
        None => Verdict::new(name, false, "time exponent unavailable"),
    }
}

fn regularity(exp: &Experiment, out: &Path, source: Option<&Path>, outcome: &mut ScenarioOutcome) -> Result<()> {
    let runs = obtain_runs(exp, source)?;
    let variant = exp.config.spde.eigen_variant;
    let pool = exp.pool()?;
    let parts: Vec<Result<(SpaceTimeField, SpaceTimeField, SpaceTimeField)>> = pool.install(|| {
        runs.into_par_iter()
            .enumerate()
            .map(|(r, run)| {
                let run = run?;
                let d = decompose_with(&run, variant).map_err(|e| e.in_replica(r))?;
                Ok((run.u, d.y, d.z))
            })
            .collect()
    });
    let (mut us, mut ys, mut zs) = (Vec::new(), Vec::new(), Vec::new());
    for (r, p) in parts.into_iter().enumerate() {
        outcome.replicas.push(record(exp, r));
        let (u, y, z) = p?;
        us.push(u);
        ys.push(y);
        zs.push(z);
    }
    // a grid too coarse for the fit window is a configuration problem
    if let Err(e @ Error::InsufficientScales { .. }) = estimate_time_exponent(&us) {
        return Err(e);
    }
    let rs = &exp.config.regularity;
    let settings = RegularitySettings {
        beta: rs.beta,
        a_list: rs.a_list.clone(),
        stability_tol: rs.stability_tol,
        sampling: PairSampling::Auto {
            per_decade: 1000,
            seed: exp.seed(),
        },
    };
    for (label, fields) in [("u", &us), ("y", &ys), ("z", &zs)] {
        let report = RegularityReport::measure(label, fields, exp.seed(), &settings)?;
        for (kind, est) in [("time", &report.time_exponent), ("space", &report.space_exponent)] {
            if let Measured::Value(e) = est {
                let mut buf = super::provenance_line(exp).into_bytes();
                e.write_scale_csv(&mut buf)?;
                write_atomic(&out.join(format!("scales_{label}_{kind}.csv")), &buf)?;
            }
        }
        outcome.regularity.push(report);
    }
    let by = |l: &str| outcome.regularity.iter().find(|r| r.field == l).cloned().expect("measured");
    let (u, y, z) = (by("u"), by("y"), by("z"));
    if let Some(band) = rs.u_time_band {
        outcome.checks.push(band_verdict("u_time_exponent", &u, band));
    }
    if let Some(band) = rs.z_time_band {
        outcome.checks.push(band_verdict("z_time_exponent", &z, band));
    }
    if rs.y_smoother_than_z {
        let v = match (y.time_exponent.value(), z.time_exponent.value()) {
            (Some(ey), Some(ez)) => Verdict::new(
                "y_smoother_than_z",
                ey.exponent > ez.exponent,
                format!("y {:.4} vs z {:.4}", ey.exponent, ez.exponent),
            ),
            _ => Verdict::new("y_smoother_than_z", false, "time exponent unavailable"),
        };
        outcome.checks.push(v);
    }
    if outcome.checks.is_empty() {
        let available = u.time_exponent.value().is_some();
        outcome.checks.push(Verdict::new(
            "u_time_exponent",
            true,
            if available {
                "measured".to_string()
            } else {
                "field is degenerate; exponent undefined".to_string()
            },
        ));
    }
    Ok(())
}

fn checks(exp: &Experiment, outcome: &mut ScenarioOutcome) -> Result<()> {
    let c = &exp.config.checks;
    let growth = check_growth(&exp.noise, &exp.grid, &c.growth_probes)?;
    outcome.checks.push(Verdict::new(
        "noise_growth",
        growth.pass,
        format!("constant {:.6}, growth exponent {:.3}", growth.constant, growth.growth_exponent),
    ));
    outcome.growth = Some(growth);

    let probes: Vec<Box<dyn Fn(f64) -> f64>> = (1..=4)
        .map(|k| Box::new(move |x: f64| eigenfunction(k, x)) as Box<dyn Fn(f64) -> f64>)
        .collect();
    let refs: Vec<&dyn Fn(f64) -> f64> = probes.iter().map(|p| p.as_ref()).collect();
    let har = check_har_surrogate(&exp.noise, &exp.grid, c.har_a, &refs)?;
    outcome.checks.push(Verdict::new(
        "noise_har",
        har.pass,
        format!(
            "a = {}: ratio {:.4e}, refined {:.4e}, trace condition {}",
            har.a, har.ratio, har.ratio_refined, har.trace_condition
        ),
    ));
    outcome.har = Some(har);

    let r = c.probe_range;
    let window = exp.coefficients.validate_ellipticity(-r, r, 20_001);
    outcome.checks.push(match window {
        Ok((lo, hi)) => Verdict::new("ellipticity", true, format!("A ranges over [{lo:.6}, {hi:.6}] on [-{r}, {r}]")),
        Err(e) => Verdict::new("ellipticity", false, e.to_string()),
    });

    let c1 = exp.coefficients.growth_constant(-r, r, 20_001);
    let c2 = exp.coefficients.growth_constant(-2.0 * r, 2.0 * r, 40_001);
    outcome.checks.push(Verdict::new(
        "drift_growth",
        c2.is_finite() && c2 <= 1.5 * c1 + 1e-12,
        format!("(|B| + |F|) / (1 + |ξ|) ≤ {c1:.4} on [-{r}, {r}], {c2:.4} on twice the range"),
    ));
    compatibility(exp, outcome)
}

fn converge(exp: &Experiment, out: &Path, outcome: &mut ScenarioOutcome) -> Result<()> {
    let cv = &exp.config.converge;
    if cv.nx.len() < 3 {
        return Err(Error::config("converge.nx", "a ladder needs at least 3 levels"));
    }
    let levels: Vec<Experiment> = cv
        .nx
        .iter()
        .zip(&cv.dt)
        .map(|(&nx, &dt)| exp.at_resolution(nx, dt))
        .collect::<Result<_>>()?;
    for w in levels.windows(2) {
        if w[0].grid.nests_in(&w[1].grid).is_none() || w[0].times.nests_in(&w[1].times).is_none() {
            return Err(Error::NonNestedLadder(format!(
                "(nx {}, dt {}) does not nest in (nx {}, dt {})",
                w[0].grid.n_interior(),
                w[0].times.dt(),
                w[1].grid.n_interior(),
                w[1].times.dt()
            )));
        }
    }
    let analytic = exp.has_analytic_solution();
    let replicas = exp.config.run.replicas;
    let pool = exp.pool()?;
    // runs[level][replica]
    let runs: Vec<Vec<SpdeRun>> = levels
        .iter()
        .map(|lvl| {
            pool.install(|| {
                (0..replicas)
                    .into_par_iter()
                    .map(|r| spde::run(&lvl.run_config(r)).map_err(|e| e.in_replica(r)))
                    .collect::<Result<Vec<_>>>()
            })
        })
        .collect::<Result<_>>()?;
    let finest = runs.last().expect("at least three levels");
    let compared = if analytic { levels.len() } else { levels.len() - 1 };
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for (li, lvl) in levels.iter().take(compared).enumerate() {
        let mut total = 0.0;
        for r in 0..replicas {
            let u = &runs[li][r].u;
            total += if analytic {
                let mut err: f64 = 0.0;
                for n in 0..u.n_levels() {
                    let decay = (-std::f64::consts::PI.powi(2) * lvl.times.time(n)).exp();
                    for (i, x) in lvl.grid.nodes().enumerate() {
                        err = err.max((u.get(n, i) - decay * eigenfunction(1, x)).abs());
                    }
                }
                err
            } else {
                let fine = &finest[r].u;
                let sx = lvl.grid.nests_in(fine.grid()).expect("nested");
                let st = lvl.times.nests_in(fine.times()).expect("nested");
                let mut err: f64 = 0.0;
                for n in 0..u.n_levels() {
                    for i in 0..lvl.grid.n_interior() {
                        err = err.max((u.get(n, i) - fine.get(n * st, (i + 1) * sx - 1)).abs());
                    }
                }
                err
            };
        }
        let error = total / replicas as f64;
        let (order_h, order_dt) = match rows.last() {
            Some(prev) if prev.error > 0.0 && error > 0.0 => {
                let ratio = (prev.error / error).ln();
                let ph = &levels[li - 1];
                (
                    Some(ratio / (ph.grid.h() / lvl.grid.h()).ln()),
                    Some(ratio / (ph.times.dt() / lvl.times.dt()).ln()),
                )
            }
            _ => (None, None),
        };
        rows.push(ConvergenceRow {
            nx: lvl.grid.n_interior(),
            dt: lvl.times.dt(),
            error,
            order_h,
            order_dt,
        });
        let mut rec = record(exp, rows.len() - 1);
        rec.metrics.insert(format!("error_nx{}", lvl.grid.n_interior()), error);
        outcome.replicas.push(rec);
    }
    let monotone = rows.iter().all(|r| r.error.is_finite())
        && rows.windows(2).all(|w| w[1].error <= w[0].error * (1.0 + 1e-9) + 1e-15);
    outcome.checks.push(Verdict::new(
        "convergence",
        monotone,
        rows.iter()
            .map(|r| format!("nx {} dt {:e}: {:.3e}", r.nx, r.dt, r.error))
            .collect::<Vec<_>>()
            .join("; "),
    ));
    let csv: Vec<String> = rows
        .iter()
        .map(|r| {
            let f = |o: Option<f64>| o.map_or(String::new(), |v| format!("{v:.6}"));
            format!("{},{:.16e},{:.16e},{},{}", r.nx, r.dt, r.error, f(r.order_h), f(r.order_dt))
        })
        .collect();
    write_csv_rows(exp, &out.join("convergence.csv"), "nx,dt,error,order_h,order_dt", &csv)?;
    outcome.convergence = Some(ConvergenceTable {
        reference: if analytic { "analytic" } else { "finest" }.into(),
        rows,
    });
    Ok(())
}
