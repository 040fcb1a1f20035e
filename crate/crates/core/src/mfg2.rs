//! Coupled vorticity control: push-forward map of the modified decoupled
//! system and the μ-interpolation line search.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::costs::{self, CostBreakdown, CostConfig};
use crate::error::{MfgError, Result};
use crate::field::{Field, ScalarField, VectorField};
use crate::integrate::{self, TimeWindow, Trajectory, Transport};
use crate::mfg1::{self, Mfg1Sources};
use crate::par;
use crate::spectral::Spectral;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initializer {
    TracerControl,
    ZeroControl,
}

impl std::str::FromStr for Initializer {
    type Err = MfgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tracer-control" => Ok(Initializer::TracerControl),
            "zero-control" => Ok(Initializer::ZeroControl),
            other => Err(MfgError::config(format!(
                "unknown initializer `{other}` (expected tracer-control or zero-control)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub n_max: usize,
    pub eps: f64,
    /// `Lμ`; the line search visits `μ = i/Lμ` for `i = 0..=Lμ`.
    pub mu_grid: usize,
    pub initializer: Initializer,
    /// Skip the line search and always take this μ.
    pub fixed_mu: Option<f64>,
    /// When no grid μ < 1 lowers the cost, try `μ = 1 − 1/(Lμ 2^k)` for
    /// `k = 1..=mu_refine` before giving up.
    #[serde(default = "default_refine")]
    pub mu_refine: usize,
    /// Relative undershoot below zero tolerated in an interpolated density.
    #[serde(default = "default_negative_tolerance")]
    pub negative_tolerance: f64,
}

pub const DEFAULT_MU_REFINE: usize = 4;

fn default_refine() -> usize {
    DEFAULT_MU_REFINE
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            n_max: 20,
            eps: 1e-3,
            mu_grid: 20,
            initializer: Initializer::TracerControl,
            fixed_mu: None,
            mu_refine: DEFAULT_MU_REFINE,
            negative_tolerance: DEFAULT_NEGATIVE_TOLERANCE,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 1 {
            return Err(MfgError::config("solver.N_max must be at least 1"));
        }
        if self.mu_grid < 2 {
            return Err(MfgError::config("solver.mu_grid must be at least 2"));
        }
        if !(self.eps > 0.0) {
            return Err(MfgError::config("solver.eps must be positive"));
        }
        if !(self.negative_tolerance >= 0.0) {
            return Err(MfgError::config("solver.negative_tolerance must be non-negative"));
        }
        if let Some(m) = self.fixed_mu {
            if !(0.0..=1.0).contains(&m) {
                return Err(MfgError::config("solver.fixed_mu must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn mu_values(&self) -> Vec<f64> {
        (0..=self.mu_grid).map(|i| i as f64 / self.mu_grid as f64).collect()
    }
}

/// Output of one push-forward sweep.
#[derive(Clone, Debug)]
pub struct PushForward {
    pub q: Trajectory<ScalarField>,
    pub phi: Trajectory<ScalarField>,
    /// Control relative to the input flow: `q̃` solves the continuity equation
    /// with drift `T q_n + α̃`.
    pub alpha: Trajectory<VectorField>,
}

/// Backward solve with source `F(q_s) − T*(q_s α_s)` and terminal `−G(q_T)`.
pub fn adjoint_sweep(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    alpha: &Trajectory<VectorField>,
    velocity: &Trajectory<VectorField>,
    cfg: &CostConfig,
    diffusion: f64,
) -> Result<Trajectory<ScalarField>> {
    let source = q.zip_map(alpha, |qf, af| {
        let f = costs::adjoint_derivative(sp, costs::state_cost(sp, qf, cfg).derivative, cfg);
        f.sub(&sp.adjoint_velocity(&af.times(qf)))
    });
    let phi_t = costs::adjoint_derivative(sp, costs::terminal_cost(q.last(), cfg).derivative, cfg).scale(-1.0);
    integrate::solve_backward_hje(
        sp,
        &phi_t,
        Some(velocity),
        &[&source],
        diffusion,
        q.window(),
        q.stride(),
    )
}

/// `𝒫(q, α)`: backward sweep along the input, then a forward solve driven by
/// the fixed input flow plus `α̃ = ∇φ̃`.
pub fn push_forward(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    alpha: &Trajectory<VectorField>,
    cfg: &CostConfig,
    diffusion: f64,
) -> Result<PushForward> {
    let velocity = q.map(|f| sp.velocity(f));
    let phi = adjoint_sweep(sp, q, alpha, &velocity, cfg, diffusion)?;
    let alpha_new = mfg1::control_from_potential(sp, &phi);
    let drift = velocity.zip_map(&alpha_new, |u, a| u.add(a));
    let q_new = integrate::solve_forward_continuity(
        sp,
        q.first(),
        Transport::Prescribed(&drift),
        diffusion,
        q.window(),
        q.stride(),
    )?;
    Ok(PushForward {
        q: q_new,
        phi,
        alpha: alpha_new,
    })
}

/// Default for `IterationConfig::negative_tolerance`.
pub const DEFAULT_NEGATIVE_TOLERANCE: f64 = 1e-3;

fn default_negative_tolerance() -> f64 {
    DEFAULT_NEGATIVE_TOLERANCE
}

/// Frame-level interpolation. `du = T q_n − T q̃` for this frame.
///
/// Negative nodal values of either density are treated as vacuum in the
/// flux-weighted average, so the first term of `α^μ` is always a convex
/// combination of `α_n` and `α̃`. `q^μ` dipping below `−negative_tolerance`
/// times its maximum is reported as degenerate.
pub fn interpolate_frame(
    q_n: &ScalarField,
    a_n: &VectorField,
    q_t: &ScalarField,
    a_t: &VectorField,
    du: &VectorField,
    mu: f64,
    negative_tolerance: f64,
) -> Result<(ScalarField, VectorField)> {
    if mu == 1.0 {
        return Ok((q_n.clone(), a_n.clone()));
    }
    let nu = 1.0 - mu;
    let grid = *q_n.grid();
    let n = grid.len();
    let wa: Vec<f64> = q_n.values().iter().map(|v| (mu * v).max(0.0)).collect();
    let wb: Vec<f64> = q_t.values().iter().map(|v| (nu * v).max(0.0)).collect();
    let q = q_n.zip_map(q_t, |a, b| mu * a + nu * b);
    let (lo, hi) = (q.min(), q.max());
    if !(hi > 0.0) || lo < -negative_tolerance * hi {
        return Err(MfgError::DegenerateDensity {
            mu,
            min_denominator: lo,
            max_denominator: hi,
        });
    }
    let comps = (0..grid.dim())
        .map(|c| {
            let an = a_n.component(c).values();
            let at = a_t.component(c).values();
            let dc = du.component(c).values();
            let vals = (0..n)
                .map(|i| {
                    let d = wa[i] + wb[i];
                    let ratio = if d > 0.0 {
                        (wa[i] * an[i] + wb[i] * at[i]) / d
                    } else {
                        mu * an[i] + nu * at[i]
                    };
                    ratio + nu * dc[i]
                })
                .collect();
            ScalarField::from_values(grid, vals)
        })
        .collect();
    Ok((q, VectorField::from_components(comps)))
}

/// `T q_n − T q̃` per frame.
pub fn velocity_gap(
    sp: &Spectral,
    q_n: &Trajectory<ScalarField>,
    q_t: &Trajectory<ScalarField>,
) -> Trajectory<VectorField> {
    q_n.zip_map(q_t, |a, b| sp.velocity(&a.sub(b)))
}

/// `(q^μ, α^μ)` for whole trajectories.
pub fn interpolate_pair(
    sp: &Spectral,
    q_n: &Trajectory<ScalarField>,
    a_n: &Trajectory<VectorField>,
    q_t: &Trajectory<ScalarField>,
    a_t: &Trajectory<VectorField>,
    mu: f64,
) -> Result<(Trajectory<ScalarField>, Trajectory<VectorField>)> {
    if mu == 1.0 {
        return Ok((q_n.clone(), a_n.clone()));
    }
    let du = velocity_gap(sp, q_n, q_t);
    interpolate_with_gap(q_n, a_n, q_t, a_t, &du, mu, DEFAULT_NEGATIVE_TOLERANCE)
}

fn interpolate_with_gap(
    q_n: &Trajectory<ScalarField>,
    a_n: &Trajectory<VectorField>,
    q_t: &Trajectory<ScalarField>,
    a_t: &Trajectory<VectorField>,
    du: &Trajectory<VectorField>,
    mu: f64,
    tol: f64,
) -> Result<(Trajectory<ScalarField>, Trajectory<VectorField>)> {
    let frames = par::map_range(q_n.len(), |i| {
        interpolate_frame(
            q_n.frame(i),
            a_n.frame(i),
            q_t.frame(i),
            a_t.frame(i),
            du.frame(i),
            mu,
            tol,
        )
    });
    let mut qs = Vec::with_capacity(frames.len());
    let mut als = Vec::with_capacity(frames.len());
    for f in frames {
        let (q, a) = f?;
        qs.push(q);
        als.push(a);
    }
    Ok((
        Trajectory::new(*q_n.window(), q_n.stride(), qs)?,
        Trajectory::new(*q_n.window(), q_n.stride(), als)?,
    ))
}

/// Cost of the interpolated pair, evaluated frame by frame without storing it.
#[allow(clippy::too_many_arguments)]
fn interpolated_cost(
    sp: &Spectral,
    q_n: &Trajectory<ScalarField>,
    a_n: &Trajectory<VectorField>,
    q_t: &Trajectory<ScalarField>,
    a_t: &Trajectory<VectorField>,
    du: &Trajectory<VectorField>,
    mu: f64,
    tol: f64,
    cfg: &CostConfig,
) -> Result<CostBreakdown> {
    let frames = q_n.len();
    let mut per = Vec::with_capacity(frames);
    let mut last = None;
    for i in 0..frames {
        let (q, a) = interpolate_frame(
            q_n.frame(i),
            a_n.frame(i),
            q_t.frame(i),
            a_t.frame(i),
            du.frame(i),
            mu,
            tol,
        )?;
        per.push(costs::running_frame_mfg2(sp, &q, &a, cfg));
        if i + 1 == frames {
            last = Some(q);
        }
    }
    let t = costs::terminal_cost(&last.expect("non-empty trajectory"), cfg);
    Ok(costs::assemble_mfg2(&per, q_n.frame_dt(), (t.value, t.clamped)))
}

/// `g(μ) = 𝓘(q^μ, α^μ) − 𝓘(q_n, α_n)`.
pub fn evaluate_improvement(
    sp: &Spectral,
    q_n: &Trajectory<ScalarField>,
    a_n: &Trajectory<VectorField>,
    q_t: &Trajectory<ScalarField>,
    a_t: &Trajectory<VectorField>,
    mu: f64,
    cfg: &CostConfig,
) -> Result<f64> {
    let base = costs::total_cost_mfg2(sp, q_n, a_n, cfg).total;
    let du = velocity_gap(sp, q_n, q_t);
    Ok(interpolated_cost(sp, q_n, a_n, q_t, a_t, &du, mu, DEFAULT_NEGATIVE_TOLERANCE, cfg)?.total - base)
}

/// Leading coefficient of the least-squares parabola through `(x, y)`.
pub fn quadratic_leading_coefficient(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let mut s = [0.0_f64; 5];
    let mut t = [0.0_f64; 3];
    for &(x, y) in points {
        let mut p = 1.0;
        for k in 0..5 {
            s[k] += p;
            if k < 3 {
                t[k] += p * y;
            }
            p *= x;
        }
    }
    // normal equations for y ≈ c0 + c1 x + c2 x²
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut m2 = m;
    for r in 0..3 {
        m2[r][2] = t[r];
    }
    Some(det(m2) / d)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LineSearchPoint {
    pub mu: f64,
    /// `None` when the interpolation denominator degenerates.
    pub g: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    pub mu_star: f64,
    pub cost: CostBreakdown,
    pub d_q: f64,
    pub d_alpha: f64,
    pub line_search: Vec<LineSearchPoint>,
    pub quadratic_coefficient: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Mfg2Solution {
    pub q: Trajectory<ScalarField>,
    pub phi: Trajectory<ScalarField>,
    pub alpha: Trajectory<VectorField>,
    pub cost: CostBreakdown,
    pub iterations: usize,
    /// Cost of the initial guess followed by the cost after every iteration.
    pub loss_history: Vec<f64>,
    pub mu_history: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub fixed_point_residual: f64,
    pub converged: bool,
    /// The line search found no improving μ (μ* = 1) away from a fixed point.
    pub stalled: bool,
}

impl Mfg2Solution {
    pub fn is_monotone(&self) -> bool {
        is_monotone(&self.loss_history)
    }
}

pub fn is_monotone(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs())
}

/// `‖𝒫(q, α) − (q, α)‖ / ‖(q, α)‖` over all stored frames.
pub fn pair_residual(
    q: &Trajectory<ScalarField>,
    a: &Trajectory<VectorField>,
    q_new: &Trajectory<ScalarField>,
    a_new: &Trajectory<VectorField>,
) -> f64 {
    let num: f64 = q
        .frames()
        .iter()
        .zip(q_new.frames())
        .map(|(x, y)| x.dist_sq(y))
        .sum::<f64>()
        + a.frames()
            .iter()
            .zip(a_new.frames())
            .map(|(x, y)| x.dist_sq(y))
            .sum::<f64>();
    let den: f64 = q.frames().iter().map(|x| x.norm_sq_integral()).sum::<f64>()
        + a.frames().iter().map(|x| x.norm_sq_integral()).sum::<f64>();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Initial pair `(q⁽⁰⁾, α⁽⁰⁾)` consistent with the self-advected continuity equation.
pub fn initialize(
    sp: &Spectral,
    q0: &ScalarField,
    cfg: &CostConfig,
    initializer: Initializer,
    diffusion: f64,
    window: &TimeWindow,
    stride: usize,
) -> Result<(Trajectory<ScalarField>, Trajectory<VectorField>)> {
    let grid = *q0.grid();
    match initializer {
        Initializer::ZeroControl => {
            let q =
                integrate::solve_forward_continuity(sp, q0, Transport::SelfAdvected(None), diffusion, window, stride)?;
            let a = q.map(|_| VectorField::zeros(grid));
            Ok((q, a))
        }
        Initializer::TracerControl => {
            // tracer problem in the frozen flow q0, then re-express the drift
            // relative to the tracer's own velocity
            let frozen = Trajectory::constant(*window, stride, q0.clone())?;
            let sources = Mfg1Sources::from_reference(sp, &frozen, cfg);
            let sol = mfg1::solve_mfg1_with(sp, &frozen, q0, &sources, diffusion)?;
            let u0 = sp.velocity(q0);
            let alpha = sol.rho.zip_map(&sol.alpha, |r, a| a.add(&u0).sub(&sp.velocity(r)));
            Ok((sol.rho, alpha))
        }
    }
}

/// Run the iteration from a given initial pair with a caller-supplied push-forward.
pub fn iterate_from(
    sp: &Spectral,
    q_init: Trajectory<ScalarField>,
    alpha_init: Trajectory<VectorField>,
    cfg: &CostConfig,
    iter_cfg: &IterationConfig,
    mut push: impl FnMut(&Trajectory<ScalarField>, &Trajectory<VectorField>) -> Result<PushForward>,
) -> Result<Mfg2Solution> {
    iter_cfg.validate()?;
    let mut q = q_init;
    let mut alpha = alpha_init;
    let mut cost = costs::total_cost_mfg2(sp, &q, &alpha, cfg);
    let mut loss_history = vec![cost.total];
    let mut mu_history = Vec::new();
    let mut records = Vec::new();
    let mut converged = false;
    let mut phi = None;
    let mus = iter_cfg.mu_values();
    let tol = iter_cfg.negative_tolerance;

    for n in 1..=iter_cfg.n_max {
        let pf = push(&q, &alpha)?;
        let du = velocity_gap(sp, &q, &pf.q);
        let base = cost.total;

        let (mu_star, line_search, next_cost) = match iter_cfg.fixed_mu {
            Some(m) => match interpolated_cost(sp, &q, &alpha, &pf.q, &pf.alpha, &du, m, tol, cfg) {
                Ok(c) => (
                    m,
                    vec![LineSearchPoint {
                        mu: m,
                        g: Some(c.total - base),
                    }],
                    c,
                ),
                Err(MfgError::DegenerateDensity { .. }) => {
                    warn!("iteration {n}: fixed mu = {m} degenerates; keeping the current pair");
                    (1.0, vec![LineSearchPoint { mu: m, g: None }], cost)
                }
                Err(e) => return Err(e),
            },
            None => {
                let evals = par::map_slice(&mus, |&m| {
                    interpolated_cost(sp, &q, &alpha, &pf.q, &pf.alpha, &du, m, tol, cfg)
                });
                let mut best: Option<(f64, CostBreakdown)> = None;
                let mut points = Vec::with_capacity(mus.len());
                for (&m, e) in mus.iter().zip(evals) {
                    match e {
                        Ok(c) => {
                            points.push(LineSearchPoint {
                                mu: m,
                                g: Some(c.total - base),
                            });
                            // ties go to the larger μ
                            if best.as_ref().is_none_or(|(_, b)| c.total <= b.total) {
                                best = Some((m, c));
                            }
                        }
                        Err(MfgError::DegenerateDensity { .. }) => {
                            points.push(LineSearchPoint { mu: m, g: None });
                        }
                        Err(e) => return Err(e),
                    }
                }
                let (mut m, mut c) = best.expect("mu = 1 is never degenerate");
                if m == 1.0 {
                    // the minimum may sit between the last grid point and 1
                    for k in 1..=iter_cfg.mu_refine {
                        let mk = 1.0 - 1.0 / (iter_cfg.mu_grid as f64 * (1u64 << k) as f64);
                        match interpolated_cost(sp, &q, &alpha, &pf.q, &pf.alpha, &du, mk, tol, cfg) {
                            Ok(ck) => {
                                points.push(LineSearchPoint {
                                    mu: mk,
                                    g: Some(ck.total - base),
                                });
                                if ck.total < c.total {
                                    (m, c) = (mk, ck);
                                    break;
                                }
                            }
                            Err(MfgError::DegenerateDensity { .. }) => points.push(LineSearchPoint { mu: mk, g: None }),
                            Err(e) => return Err(e),
                        }
                    }
                }
                if points.iter().filter(|p| p.g.is_none()).count() + 1 >= points.len() {
                    warn!("iteration {n}: every interpolated state degenerates; keeping the current pair");
                }
                (m, points, c)
            }
        };

        let fit: Vec<(f64, f64)> = line_search.iter().filter_map(|p| p.g.map(|g| (p.mu, g))).collect();
        let (q_next, a_next) = if mu_star == 1.0 {
            (q.clone(), alpha.clone())
        } else {
            interpolate_with_gap(&q, &alpha, &pf.q, &pf.alpha, &du, mu_star, tol)?
        };
        let d_q = q_next.relative_distance(&q);
        let d_alpha = a_next.relative_distance(&alpha);
        info!(
            "iteration {n}: mu* = {mu_star:.3}, cost = {:.8e}, d_q = {d_q:.3e}, d_alpha = {d_alpha:.3e}",
            next_cost.total
        );
        records.push(IterationRecord {
            n,
            mu_star,
            cost: next_cost,
            d_q,
            d_alpha,
            line_search,
            quadratic_coefficient: quadratic_leading_coefficient(&fit),
        });
        q = q_next;
        alpha = a_next;
        cost = next_cost;
        loss_history.push(cost.total);
        mu_history.push(mu_star);
        phi = Some(pf.phi);
        if d_q <= iter_cfg.eps && d_alpha <= iter_cfg.eps {
            converged = true;
            break;
        }
    }

    let check = push(&q, &alpha)?;
    let fixed_point_residual = pair_residual(&q, &alpha, &check.q, &check.alpha);
    // a no-op step (μ* = 1) only counts as convergence at an actual fixed point
    let stalled = converged && mu_history.last() == Some(&1.0) && fixed_point_residual > 10.0 * iter_cfg.eps;
    if stalled {
        warn!("line search stalled at mu = 1 with fixed-point residual {fixed_point_residual:.3e}");
        converged = false;
    } else if !converged {
        warn!(
            "no convergence after {} iterations; returning the last iterate",
            iter_cfg.n_max
        );
    }
    Ok(Mfg2Solution {
        iterations: records.len(),
        q,
        phi: phi.unwrap_or(check.phi),
        alpha,
        cost,
        loss_history,
        mu_history,
        records,
        fixed_point_residual,
        converged,
        stalled,
    })
}

/// Solve the coupled problem from the initial state `q0`.
///
/// Use `stride = 1`. The adjoint has a thin layer near the terminal time, and
/// skipping steps inside it makes the push-forward undershoot and the line
/// search degenerate. Thin the returned trajectories for output instead.
pub fn iterate_mfg2(
    sp: &Spectral,
    q0: &ScalarField,
    cfg: &CostConfig,
    iter_cfg: &IterationConfig,
    diffusion: f64,
    window: &TimeWindow,
    stride: usize,
) -> Result<Mfg2Solution> {
    iter_cfg.validate()?;
    let (q, a) = initialize(sp, q0, cfg, iter_cfg.initializer, diffusion, window, stride)?;
    iterate_from(sp, q, a, cfg, iter_cfg, |qq, aa| {
        push_forward(sp, qq, aa, cfg, diffusion)
    })
}
