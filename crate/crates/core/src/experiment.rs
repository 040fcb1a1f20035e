//! Config-driven runs and sweeps, writing self-describing run directories:
//!
//! ```text
//! manifest.json     config echo, results, histories (bitwise reproducible)
//! timing.json       wall time
//! fields/*.bin      trajectories thinned to output.stride, ensembles as *.ens
//! csv/*.csv         space-time tables (1D), final frames, iterations, line search
//! error.json        only when the run failed
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde_json::{json, Value};

use crate::config::{parse_scalar, ExperimentConfig, Mode, Reference};
use crate::costs::{self, CostConfig};
use crate::error::{MfgError, Result};
use crate::field::{ScalarField, VectorField};
use crate::flow::{mvb_rhs, ModelParams};
use crate::integrate::{self, Trajectory, Transport};
use crate::io;
use crate::mfg1::{self, Mfg1Sources};
use crate::mfg2::{self, Mfg2Solution};
use crate::sde::{self, Ensemble, KdeConfig, Normalization};
use crate::spectral::Spectral;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const STEADY_RHS_TOLERANCE: f64 = 1e-6;
pub const STEADY_DRIFT_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Value,
    pub wall_time: f64,
}

impl RunOutcome {
    /// `results.<path>` as a number, `path` dotted.
    pub fn result(&self, path: &str) -> Option<f64> {
        lookup(&self.manifest["results"], path).and_then(Value::as_f64)
    }
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |v, k| v.get(k))
}

/// Relative mass change over a trajectory, maximised over frames.
pub fn mass_drift(traj: &Trajectory<ScalarField>) -> f64 {
    let m0 = traj.first().mass();
    traj.frames()
        .iter()
        .map(|f| ((f.mass() - m0) / m0).abs())
        .fold(0.0, f64::max)
}

/// Collects output files of one run directory.
struct Artifacts {
    dir: PathBuf,
    stride: usize,
    csv: bool,
    files: Vec<String>,
}

impl Artifacts {
    fn create(cfg: &ExperimentConfig) -> Result<Self> {
        let dir = PathBuf::from(&cfg.output.dir);
        fs::create_dir_all(dir.join("fields"))?;
        if cfg.output.csv {
            fs::create_dir_all(dir.join("csv"))?;
        }
        let stale = dir.join("error.json");
        if stale.exists() {
            fs::remove_file(stale)?;
        }
        Ok(Artifacts {
            dir,
            stride: cfg.output.stride,
            csv: cfg.output.csv,
            files: Vec::new(),
        })
    }

    fn path(&mut self, rel: String) -> PathBuf {
        let p = self.dir.join(&rel);
        self.files.push(rel);
        p
    }

    fn scalar_trajectory(&mut self, name: &str, traj: &Trajectory<ScalarField>) -> Result<Value> {
        let thin = traj.thinned(self.stride)?;
        let p = self.path(format!("fields/{name}.bin"));
        io::write_fields(&p, thin.frames())?;
        if self.csv {
            if thin.first().grid().dim() == 1 {
                let p = self.path(format!("csv/{name}.csv"));
                io::write_space_time_csv(&p, &thin)?;
            }
            let p = self.path(format!("csv/{name}_final.csv"));
            io::write_field_csv(&p, thin.last())?;
        }
        Ok(serde_json::to_value(thin.meta())?)
    }

    fn vector_trajectory(&mut self, name: &str, traj: &Trajectory<VectorField>) -> Result<Value> {
        let mut meta = Value::Null;
        for (c, axis) in ["x", "y"].iter().enumerate().take(traj.first().grid().dim()) {
            let comp = traj.map(|v| v.component(c).clone());
            meta = self.scalar_trajectory(&format!("{name}_{axis}"), &comp)?;
        }
        Ok(meta)
    }

    fn field(&mut self, name: &str, f: &ScalarField) -> Result<()> {
        let p = self.path(format!("fields/{name}.bin"));
        io::write_fields(&p, std::slice::from_ref(f))?;
        if self.csv {
            let p = self.path(format!("csv/{name}.csv"));
            io::write_field_csv(&p, f)?;
        }
        Ok(())
    }

    fn ensemble(&mut self, name: &str, ens: &Ensemble) -> Result<()> {
        let p = self.path(format!("fields/{name}.ens"));
        io::write_ensemble(&p, ens)
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        if self.csv {
            let p = self.path(format!("csv/{name}.csv"));
            io::write_table(&p, header, rows)?;
        }
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn tracer_sources(
    sp: &Spectral,
    cfg: &ExperimentConfig,
    q: &Trajectory<ScalarField>,
    rho0: &ScalarField,
    costs: &CostConfig,
) -> Mfg1Sources {
    match cfg.solver.reference {
        Reference::Flow => Mfg1Sources::from_reference(sp, q, costs),
        Reference::Uniform => Mfg1Sources::uniform_reference(sp, q, rho0.mass(), costs),
    }
}

fn mfg2_summary(sol: &Mfg2Solution) -> Value {
    json!({
        "cost": sol.cost,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "stalled": sol.stalled,
        "monotone": sol.is_monotone(),
        "fixed_point_residual": sol.fixed_point_residual,
        "loss_history": sol.loss_history,
        "mu_history": sol.mu_history,
        "d_q": sol.records.iter().map(|r| r.d_q).collect::<Vec<_>>(),
        "d_alpha": sol.records.iter().map(|r| r.d_alpha).collect::<Vec<_>>(),
        "quadratic_coefficients": sol.records.iter().map(|r| r.quadratic_coefficient).collect::<Vec<_>>(),
        "records": sol.records,
        "mass_drift": mass_drift(&sol.q),
    })
}

fn iteration_tables(out: &mut Artifacts, sol: &Mfg2Solution, prefix: &str) -> Result<()> {
    let mut rows = vec![vec![
        "0".to_string(),
        format!("{:e}", sol.loss_history[0]),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    ]];
    let mut search = Vec::new();
    for r in &sol.records {
        rows.push(vec![
            r.n.to_string(),
            format!("{:e}", r.cost.total),
            format!("{:e}", r.mu_star),
            format!("{:e}", r.d_q),
            format!("{:e}", r.d_alpha),
            opt(r.quadratic_coefficient),
        ]);
        for p in &r.line_search {
            search.push(vec![r.n.to_string(), format!("{:e}", p.mu), opt(p.g)]);
        }
    }
    out.table(
        &format!("{prefix}iterations"),
        &[
            "iteration",
            "loss",
            "mu_star",
            "d_q",
            "d_alpha",
            "quadratic_coefficient",
        ],
        &rows,
    )?;
    out.table(&format!("{prefix}line_search"), &["iteration", "mu", "g"], &search)
}

fn run_steady(cfg: &ExperimentConfig, sp: &Spectral, out: &mut Artifacts) -> Result<Value> {
    let g = cfg.grid()?;
    let q0 = cfg.tracer_flow()?;
    let params = ModelParams::new(cfg.model.nu, g)?;
    let rhs = mvb_rhs(sp, &q0, &VectorField::zeros(g), &params);
    let traj = integrate::solve_forward_continuity(
        sp,
        &q0,
        Transport::SelfAdvected(None),
        cfg.diffusion(),
        &cfg.window()?,
        1,
    )?;
    let drift = traj.frames().iter().map(|f| f.sub(&q0).max_abs()).fold(0.0, f64::max);
    out.field("rhs", &rhs)?;
    let meta = out.scalar_trajectory("q", &traj)?;
    let rhs_sup = rhs.max_abs();
    Ok(json!({
        "rhs_sup": rhs_sup,
        "rhs_tolerance": STEADY_RHS_TOLERANCE,
        "evolution_sup_drift": drift,
        "evolution_tolerance": STEADY_DRIFT_TOLERANCE,
        "within_tolerance": rhs_sup < STEADY_RHS_TOLERANCE && drift < STEADY_DRIFT_TOLERANCE,
        "mass_drift": mass_drift(&traj),
        "trajectory": meta,
    }))
}

struct TracerSetup {
    q: Trajectory<ScalarField>,
    rho0: ScalarField,
    costs: CostConfig,
    sources: Mfg1Sources,
}

fn tracer_setup(cfg: &ExperimentConfig, sp: &Spectral) -> Result<TracerSetup> {
    let q = Trajectory::constant(cfg.window()?, 1, cfg.tracer_flow()?)?;
    let rho0 = cfg.tracer_initial()?;
    let costs = cfg.cost_config()?;
    let sources = tracer_sources(sp, cfg, &q, &rho0, &costs);
    Ok(TracerSetup {
        q,
        rho0,
        costs,
        sources,
    })
}

fn run_mfg1_pde(
    cfg: &ExperimentConfig,
    sp: &Spectral,
    t: &TracerSetup,
    out: &mut Artifacts,
) -> Result<(Value, ScalarField)> {
    let d = cfg.diffusion();
    let sol = mfg1::solve_mfg1_with(sp, &t.q, &t.rho0, &t.sources, d)?;
    let (rho_u, cost_u) = mfg1::uncontrolled(sp, &t.q, &t.rho0, &t.sources, d)?;
    let mismatch = |r: &ScalarField| costs::terminal_cost(r, &t.costs).value;
    out.field("flow", t.q.first())?;
    out.field("target", &t.costs.q_f)?;
    let meta = out.scalar_trajectory("rho", &sol.rho)?;
    out.scalar_trajectory("phi", &sol.phi)?;
    out.vector_trajectory("alpha", &sol.alpha)?;
    out.scalar_trajectory("rho_uncontrolled", &rho_u)?;
    let v = json!({
        "cost": sol.cost,
        "value": sol.value,
        "value_identity_residual": sol.value_identity_residual,
        "uncontrolled_cost": cost_u,
        "terminal_mismatch": {
            "controlled": mismatch(sol.rho.last()),
            "uncontrolled": mismatch(rho_u.last()),
        },
        "mass_drift": mass_drift(&sol.rho),
        "trajectory": meta,
    });
    Ok((v, sol.rho.last().clone()))
}

fn run_mfg1(cfg: &ExperimentConfig, sp: &Spectral, out: &mut Artifacts) -> Result<Value> {
    let t = tracer_setup(cfg, sp)?;
    Ok(run_mfg1_pde(cfg, sp, &t, out)?.0)
}

fn run_mfg1_sde(cfg: &ExperimentConfig, sp: &Spectral, out: &mut Artifacts) -> Result<Value> {
    let t = tracer_setup(cfg, sp)?;
    let (pde, pde_terminal) = run_mfg1_pde(cfg, sp, &t, out)?;
    let params = cfg.sde_params()?;
    let sol = sde::solve_mfg1_sde(sp, &t.q, &t.rho0, &t.sources, cfg.diffusion(), &params)?;
    let meta = out.scalar_trajectory("rho_sde", &sol.density)?;
    out.ensemble("ensemble_initial", &sol.initial)?;
    out.ensemble("ensemble_terminal", &sol.terminal)?;
    let l1 = sol.density.last().sub(&pde_terminal).l1_norm();
    let target_norm = t.costs.q_f.l1_norm();
    Ok(json!({
        "pde": pde,
        "sde": {
            "cost": sol.cost,
            "particles": params.particles,
            "seed": params.seed,
            "bandwidth": params.bandwidth,
            "trajectory": meta,
        },
        "l1_to_pde": l1,
        "l1_to_pde_relative": l1 / target_norm,
        "l1_to_target_relative": sol.density.last().sub(&t.costs.q_f).l1_norm() / target_norm,
        "cost_gap_relative": (sol.cost.total - pde["cost"]["total"].as_f64().unwrap_or(f64::NAN)).abs()
            / sol.cost.total.abs().max(1e-300),
    }))
}

fn run_mfg2_pde(cfg: &ExperimentConfig, sp: &Spectral, out: &mut Artifacts) -> Result<(Value, Mfg2Solution)> {
    let costs = cfg.cost_config()?;
    let q0 = cfg.initial_state()?;
    // every step is stored: see `mfg2::iterate_mfg2`
    let sol = mfg2::iterate_mfg2(sp, &q0, &costs, &cfg.iteration()?, cfg.diffusion(), &cfg.window()?, 1)?;
    out.field("target", &costs.q_f)?;
    let meta = out.scalar_trajectory("q", &sol.q)?;
    out.scalar_trajectory("phi", &sol.phi)?;
    out.vector_trajectory("alpha", &sol.alpha)?;
    iteration_tables(out, &sol, "")?;
    let mut v = mfg2_summary(&sol);
    v["trajectory"] = meta;
    Ok((v, sol))
}

fn run_mfg2(cfg: &ExperimentConfig, sp: &Spectral, out: &mut Artifacts) -> Result<Value> {
    Ok(run_mfg2_pde(cfg, sp, out)?.0)
}

fn run_mfg2_sde(cfg: &ExperimentConfig, sp: &Spectral, out: &mut Artifacts) -> Result<Value> {
    let (pde, pde_sol) = run_mfg2_pde(cfg, sp, out)?;
    let params = cfg.sde_params()?;
    let run = sde::solve_mfg2_sde(
        sp,
        &cfg.initial_state()?,
        &cfg.cost_config()?,
        &cfg.iteration()?,
        cfg.diffusion(),
        &cfg.window()?,
        1,
        &params,
    )?;
    let sol = &run.solution;
    let meta = out.scalar_trajectory("q_sde", &sol.q)?;
    out.vector_trajectory("alpha_sde", &sol.alpha)?;
    iteration_tables(out, sol, "sde_")?;
    out.ensemble("ensemble_initial", &run.initial)?;
    out.ensemble("ensemble_terminal", &run.terminal)?;
    let reference = pde_sol.q.last();
    let l1 = sol.q.last().sub(reference).l1_norm();
    let mut s = mfg2_summary(sol);
    s["particles"] = json!(params.particles);
    s["seed"] = json!(params.seed);
    s["self_advected"] = json!(params.self_advected);
    s["trajectory"] = meta;
    Ok(json!({
        "pde": pde,
        "sde": s,
        "l1_to_pde": l1,
        "l1_to_pde_relative": l1 / reference.l1_norm(),
    }))
}

fn run_sample(cfg: &ExperimentConfig, sp: &Spectral, out: &mut Artifacts) -> Result<Value> {
    let g = cfg.grid()?;
    let rho = cfg.tracer_initial()?;
    let params = cfg.sde_params()?;
    let ens = sde::sample_from_density(&rho, params.particles, params.seed)?;
    let kde = KdeConfig::new(&g, params.bandwidth, Normalization::ReferenceMass(rho.mass()))?;
    let est = sde::empirical_density(sp, &ens, &kde);
    out.field("density", &rho)?;
    out.field("empirical", &est)?;
    out.ensemble("ensemble", &ens)?;
    let means: Vec<f64> = (0..g.dim())
        .map(|a| (0..ens.len()).map(|i| ens.particle(i)[a]).sum::<f64>() / ens.len() as f64)
        .collect();
    Ok(json!({
        "particles": params.particles,
        "seed": params.seed,
        "bandwidth": params.bandwidth,
        "l1_error": est.sub(&rho).l1_norm() / rho.l1_norm(),
        "sample_mean": means,
    }))
}

/// One run into `cfg.output.dir`. Failures leave `error.json` behind.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let result = run_inner(cfg);
    if let Err(e) = &result {
        let dir = Path::new(&cfg.output.dir);
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("error.json"), error_record(e).to_string());
        }
    }
    result
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mode = cfg.solver.mode;
    info!("{} run into {}", mode.name(), cfg.output.dir);
    let sp = Spectral::new(cfg.grid()?);
    let mut out = Artifacts::create(cfg)?;
    let results = match mode {
        Mode::SteadyCheck => run_steady(cfg, &sp, &mut out)?,
        Mode::Mfg1 => run_mfg1(cfg, &sp, &mut out)?,
        Mode::Mfg2 => run_mfg2(cfg, &sp, &mut out)?,
        Mode::Mfg1Sde => run_mfg1_sde(cfg, &sp, &mut out)?,
        Mode::Mfg2Sde => run_mfg2_sde(cfg, &sp, &mut out)?,
        Mode::Sample => run_sample(cfg, &sp, &mut out)?,
    };
    let manifest = json!({
        "schema_version": MANIFEST_SCHEMA,
        "mode": mode.name(),
        "config": cfg.to_tree(),
        "results": results,
        "files": out.files,
    });
    fs::write(out.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    let wall_time = start.elapsed().as_secs_f64();
    fs::write(
        out.dir.join("timing.json"),
        json!({ "wall_time_s": wall_time }).to_string(),
    )?;
    Ok(RunOutcome {
        dir: out.dir,
        manifest,
        wall_time,
    })
}

/// Machine-readable failure record.
pub fn error_record(e: &MfgError) -> Value {
    json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": e.exit_code(),
    })
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: Value,
    pub total_cost: Option<f64>,
    pub iterations: Option<usize>,
    pub l1_error: Option<f64>,
    pub dir: PathBuf,
}

/// Headline numbers of one run for the aggregate table.
fn sweep_row(value: Value, o: &RunOutcome) -> SweepRow {
    let r = &o.manifest["results"];
    let (cost, iterations, l1) = match o.manifest["mode"].as_str() {
        Some("mfg1") => (lookup(r, "cost.total"), None, None),
        Some("mfg2") => (lookup(r, "cost.total"), r.get("iterations"), None),
        Some("mfg1-sde") => (lookup(r, "sde.cost.total"), None, r.get("l1_to_pde_relative")),
        Some("mfg2-sde") => (
            lookup(r, "sde.cost.total"),
            lookup(r, "sde.iterations"),
            r.get("l1_to_pde_relative"),
        ),
        Some("sample") => (None, None, r.get("l1_error")),
        _ => (None, None, None),
    };
    SweepRow {
        value,
        total_cost: cost.and_then(Value::as_f64),
        iterations: iterations.and_then(Value::as_u64).map(|n| n as usize),
        l1_error: l1.and_then(Value::as_f64),
        dir: o.dir.clone(),
    }
}

fn dir_name(i: usize, axis: &str, value: &Value) -> String {
    let v = match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    let clean: String = format!("{axis}={v}")
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._=-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{i:02}_{clean}")
}

/// Run `base` once per value of `axis` (a `section.field` key), each into its
/// own subdirectory of `base.output.dir`, then write `sweep.csv` and a sweep manifest.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(MfgError::config("sweep needs at least one value"));
    }
    let root = PathBuf::from(&base.output.dir);
    let tree = base.to_tree();
    // reject bad axes before any solve
    let parsed: Vec<Value> = values.iter().map(|v| parse_scalar(v)).collect();
    let mut configs = Vec::with_capacity(parsed.len());
    for (i, v) in parsed.iter().enumerate() {
        let dir = root.join(dir_name(i, axis, v));
        let overrides = vec![
            (axis.to_string(), v.clone()),
            (
                "output.dir".to_string(),
                Value::String(dir.to_string_lossy().into_owned()),
            ),
        ];
        configs.push(ExperimentConfig::from_tree(tree.clone(), &overrides)?);
    }
    fs::create_dir_all(&root)?;
    let mut rows = Vec::with_capacity(configs.len());
    for (v, c) in parsed.into_iter().zip(&configs) {
        let o = run(c)?;
        rows.push(sweep_row(v, &o));
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                match &r.value {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                },
                opt(r.total_cost),
                r.iterations.map(|n| n.to_string()).unwrap_or_default(),
                opt(r.l1_error),
            ]
        })
        .collect();
    io::write_table(
        &root.join("sweep.csv"),
        &["value", "total_cost", "iterations", "l1_error"],
        &table,
    )?;
    let manifest = json!({
        "schema_version": MANIFEST_SCHEMA,
        "mode": "sweep",
        "axis": axis,
        "values": rows.iter().map(|r| r.value.clone()).collect::<Vec<_>>(),
        "runs": rows.iter().map(|r| r.dir.file_name().map(|n| n.to_string_lossy().into_owned())).collect::<Vec<_>>(),
        "total_cost": rows.iter().map(|r| r.total_cost).collect::<Vec<_>>(),
        "iterations": rows.iter().map(|r| r.iterations).collect::<Vec<_>>(),
        "l1_error": rows.iter().map(|r| r.l1_error).collect::<Vec<_>>(),
        "config": tree,
    });
    fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(rows)
}
