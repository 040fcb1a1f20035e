//! Experiment configuration: a TOML (or JSON) tree with sections `model`,
//! `cost`, `solver`, `tracer`, `sde` and `output`.
//!
//! An absent section takes its defaults (the 1D baseline physics). A section
//! that is present must spell out its core fields; optional extras are noted
//! on the field.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::costs::{CostConfig, CostKind, DEFAULT_DERIVATIVE_SMOOTHING};
use crate::error::{MfgError, Result};
use crate::field::ScalarField;
use crate::flow::{steady_profile, SteadyStateParams};
use crate::grid::Grid;
use crate::integrate::{check_stride, TimeWindow};
use crate::mfg2::{Initializer, IterationConfig, DEFAULT_MU_REFINE, DEFAULT_NEGATIVE_TOLERANCE};
use crate::sde::{SdeParams, DEFAULT_BANDWIDTH_CELLS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "J")]
    pub j: usize,
    pub nu: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            dim: 1,
            l: 10.0,
            j: 256,
            nu: 0.5,
            dt: 1e-3,
            t: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub kind: CostKind,
    pub gamma: f64,
    pub sigma_i: f64,
    pub a_i: f64,
    pub sigma_f: f64,
    pub a_f: f64,
    /// y-centres in 2D (default: equal to the x-centres).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_f: Option<f64>,
    /// KL derivative smoothing in the coupled adjoint, in grid spacings.
    #[serde(default = "default_smoothing")]
    pub derivative_smoothing: f64,
}

fn default_smoothing() -> f64 {
    DEFAULT_DERIVATIVE_SMOOTHING
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            kind: CostKind::Kl,
            gamma: 0.2,
            sigma_i: 1.0,
            a_i: -5.0,
            sigma_f: 1.0,
            a_f: 5.0,
            b_i: None,
            b_f: None,
            derivative_smoothing: DEFAULT_DERIVATIVE_SMOOTHING,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    SteadyCheck,
    Mfg1,
    Mfg2,
    Mfg1Sde,
    Mfg2Sde,
    Sample,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::SteadyCheck => "steady-check",
            Mode::Mfg1 => "mfg1",
            Mode::Mfg2 => "mfg2",
            Mode::Mfg1Sde => "mfg1-sde",
            Mode::Mfg2Sde => "mfg2-sde",
            Mode::Sample => "sample",
        }
    }
}

/// Where the tracer cost weights are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// On the given flow, as the tracer cost is written.
    Flow,
    /// On a uniform field of the tracer's mass, so `G` is a well at the target.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub mode: Mode,
    #[serde(rename = "N_max")]
    pub n_max: usize,
    pub eps: f64,
    pub mu_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_mu: Option<f64>,
    pub start_time: f64,
    #[serde(default = "default_initializer")]
    pub initializer: Initializer,
    #[serde(default = "default_refine")]
    pub mu_refine: usize,
    #[serde(default = "default_negative_tolerance")]
    pub negative_tolerance: f64,
    #[serde(default = "default_reference")]
    pub reference: Reference,
}

fn default_initializer() -> Initializer {
    Initializer::TracerControl
}

fn default_refine() -> usize {
    DEFAULT_MU_REFINE
}

fn default_negative_tolerance() -> f64 {
    DEFAULT_NEGATIVE_TOLERANCE
}

fn default_reference() -> Reference {
    Reference::Flow
}

impl Default for SolverSection {
    fn default() -> Self {
        let it = IterationConfig::default();
        SolverSection {
            mode: Mode::Mfg2,
            n_max: it.n_max,
            eps: it.eps,
            mu_grid: it.mu_grid,
            fixed_mu: None,
            start_time: 0.0,
            initializer: it.initializer,
            mu_refine: it.mu_refine,
            negative_tolerance: it.negative_tolerance,
            reference: Reference::Flow,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TracerFlow {
    /// The steady profile `Q_{flow_sigma, flow_center}`.
    Steady,
    /// A spatially uniform state with the steady profile's mass (no advection).
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TracerInitial {
    /// `Q_{sigma_i, a_i}`.
    Initial,
    /// Normal density `N(rho0_mean, rho0_std²)` per axis, scaled to the target's mass.
    Gaussian,
}

/// Tracer experiments only; every field has a default.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TracerSection {
    pub flow: TracerFlow,
    pub flow_sigma: f64,
    pub flow_center: f64,
    pub rho0: TracerInitial,
    pub rho0_mean: f64,
    pub rho0_std: f64,
}

impl Default for TracerSection {
    fn default() -> Self {
        TracerSection {
            flow: TracerFlow::Steady,
            flow_sigma: 1.0,
            flow_center: 0.0,
            rho0: TracerInitial::Initial,
            rho0_mean: 0.0,
            rho0_std: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    /// Mollifier width (default two grid spacings).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default = "one")]
    pub kde_stride: usize,
    /// Players in the flow iteration move with their own empirical velocity
    /// (otherwise with the input flow's velocity, like the PDE push).
    #[serde(default = "yes")]
    pub self_advected: bool,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

impl Default for SdeSection {
    fn default() -> Self {
        SdeSection {
            n: 10_000,
            seed: 42,
            bandwidth: None,
            kde_stride: 1,
            self_advected: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub stride: usize,
    pub csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "runs/out".into(),
            stride: 10,
            csv: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub cost: CostSection,
    pub solver: SolverSection,
    pub tracer: TracerSection,
    pub sde: SdeSection,
    pub output: OutputSection,
}

const SECTIONS: [&str; 6] = ["model", "cost", "solver", "tracer", "sde", "output"];

fn section<T: DeserializeOwned>(root: &Map<String, Value>, name: &str) -> Result<T> {
    let v = root.get(name).cloned().expect("sections are filled before parsing");
    serde_json::from_value(v).map_err(|e| {
        let msg = e.to_string();
        // name the offending key with its section
        match msg.strip_prefix("missing field `") {
            Some(rest) => MfgError::config(format!("missing field `{name}.{rest}")),
            None => MfgError::config(format!("[{name}] {msg}")),
        }
    })
}

/// Parse `text` as TOML, or as JSON when it starts with `{`.
pub fn parse_tree(text: &str) -> Result<Value> {
    let v: Value = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| MfgError::config(format!("invalid JSON config: {e}")))?
    } else {
        toml::from_str(text).map_err(|e| MfgError::config(format!("invalid TOML config: {e}")))?
    };
    if !v.is_object() {
        return Err(MfgError::config("config root must be a table"));
    }
    Ok(v)
}

/// A string override value as JSON: numbers, booleans and `null` are typed,
/// everything else is a string. Integral numbers become integers.
pub fn parse_scalar(raw: &str) -> Value {
    match serde_json::from_str::<Value>(raw.trim()) {
        // `1e4` should work for counts
        Ok(Value::Number(n)) => match n.as_f64() {
            Some(x) if !n.is_i64() && x.fract() == 0.0 && x.abs() < 9.0e15 => Value::from(x as i64),
            _ => Value::Number(n),
        },
        Ok(v @ (Value::Bool(_) | Value::Null)) => v,
        _ => Value::String(raw.trim().to_string()),
    }
}

impl ExperimentConfig {
    /// Build from a raw tree: absent sections are defaulted, then `overrides`
    /// (`section.key`, value) are applied, then everything is validated.
    pub fn from_tree(tree: Value, overrides: &[(String, Value)]) -> Result<Self> {
        let mut root = match tree {
            Value::Object(m) => m,
            _ => return Err(MfgError::config("config root must be a table")),
        };
        for key in root.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                return Err(MfgError::config(format!("unknown section `{key}`")));
            }
        }
        let defaults = serde_json::to_value(ExperimentConfig::default())?;
        for s in SECTIONS {
            if !root.contains_key(s) {
                root.insert(s.to_string(), defaults[s].clone());
            }
        }
        for (key, value) in overrides {
            let (sec, field) = key
                .split_once('.')
                .ok_or_else(|| MfgError::config(format!("override key `{key}` must look like section.field")))?;
            let table = root
                .get_mut(sec)
                .and_then(Value::as_object_mut)
                .ok_or_else(|| MfgError::config(format!("unknown section `{sec}` in override `{key}`")))?;
            table.insert(field.to_string(), value.clone());
        }
        let cfg = ExperimentConfig {
            model: section(&root, "model")?,
            cost: section(&root, "cost")?,
            solver: section(&root, "solver")?,
            tracer: section(&root, "tracer")?,
            sde: section(&root, "sde")?,
            output: section(&root, "output")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_str_with(text: &str, overrides: &[(String, Value)]) -> Result<Self> {
        Self::from_tree(parse_tree(text)?, overrides)
    }

    pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MfgError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str_with(&text, overrides)
    }

    /// The config as a JSON tree (echoed into manifests).
    pub fn to_tree(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        self.grid()?;
        if !(m.nu.is_finite() && m.nu > 0.0) {
            return Err(MfgError::config(format!("model.nu must be positive, got {}", m.nu)));
        }
        self.window()?;
        self.iteration()?.validate()?;
        self.cost_config()?;
        if self.output.stride == 0 {
            return Err(MfgError::config("output.stride must be at least 1"));
        }
        check_stride(&self.window()?, self.output.stride)
            .map_err(|_| MfgError::config("output.stride must divide the number of time steps"))?;
        if self.tracer.rho0_std <= 0.0 || self.tracer.flow_sigma <= 0.0 {
            return Err(MfgError::config("tracer widths must be positive"));
        }
        self.sde_params()?.validate(&self.grid()?)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.model.dim, self.model.l, self.model.j)
    }

    /// `[start_time, T]` with step `dt`.
    pub fn window(&self) -> Result<TimeWindow> {
        TimeWindow::new(self.solver.start_time, self.model.t, self.model.dt)
    }

    pub fn diffusion(&self) -> f64 {
        self.model.nu
    }

    fn profile(&self, sigma: f64, a: f64, b: Option<f64>) -> Result<ScalarField> {
        let g = self.grid()?;
        let p = SteadyStateParams {
            center_y: (g.dim() == 2).then(|| b.unwrap_or(a)),
            ..SteadyStateParams::new(sigma, a, self.model.nu)
        };
        p.validate(&g)?;
        Ok(steady_profile(&p, &g))
    }

    pub fn initial_state(&self) -> Result<ScalarField> {
        self.profile(self.cost.sigma_i, self.cost.a_i, self.cost.b_i)
    }

    pub fn target_state(&self) -> Result<ScalarField> {
        self.profile(self.cost.sigma_f, self.cost.a_f, self.cost.b_f)
    }

    pub fn cost_config(&self) -> Result<CostConfig> {
        CostConfig::new(
            self.cost.kind,
            self.cost.gamma,
            self.initial_state()?,
            self.target_state()?,
        )?
        .with_derivative_smoothing(self.cost.derivative_smoothing)
    }

    pub fn iteration(&self) -> Result<IterationConfig> {
        let s = &self.solver;
        let it = IterationConfig {
            n_max: s.n_max,
            eps: s.eps,
            mu_grid: s.mu_grid,
            initializer: s.initializer,
            fixed_mu: s.fixed_mu,
            mu_refine: s.mu_refine,
            negative_tolerance: s.negative_tolerance,
        };
        it.validate()?;
        Ok(it)
    }

    pub fn sde_params(&self) -> Result<SdeParams> {
        let g = self.grid()?;
        Ok(SdeParams {
            particles: self.sde.n,
            seed: self.sde.seed,
            bandwidth: self.sde.bandwidth.unwrap_or(DEFAULT_BANDWIDTH_CELLS * g.spacing()),
            kde_stride: self.sde.kde_stride,
            self_advected: self.sde.self_advected,
        })
    }

    /// The advecting state of tracer experiments.
    pub fn tracer_flow(&self) -> Result<ScalarField> {
        let t = &self.tracer;
        let steady = self.profile(t.flow_sigma, t.flow_center, None)?;
        Ok(match t.flow {
            TracerFlow::Steady => steady,
            TracerFlow::Uniform => {
                let g = self.grid()?;
                ScalarField::constant(g, steady.mass() / g.domain_volume())
            }
        })
    }

    /// Initial tracer density.
    pub fn tracer_initial(&self) -> Result<ScalarField> {
        let t = &self.tracer;
        match t.rho0 {
            TracerInitial::Initial => self.initial_state(),
            TracerInitial::Gaussian => {
                let g = self.grid()?;
                let s2 = 2.0 * t.rho0_std * t.rho0_std;
                let f = ScalarField::from_fn(g, |x, y| {
                    let dx = g.periodic_offset(x, t.rho0_mean);
                    let dy = if g.dim() == 2 {
                        g.periodic_offset(y, t.rho0_mean)
                    } else {
                        0.0
                    };
                    (-(dx * dx + dy * dy) / s2).exp()
                });
                let target = self.target_state()?.mass();
                Ok(f.scale(target / f.mass()))
            }
        }
    }
}
