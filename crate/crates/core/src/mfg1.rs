//! Tracer control under a prescribed flow: one backward HJE solve, control
//! recovery `α = ∇φ`, one forward continuity solve.

use crate::costs::{self, CostBreakdown, CostConfig};
use crate::error::{MfgError, Result};
use crate::field::{ScalarField, VectorField};
use crate::integrate::{self, Trajectory, Transport};
use crate::spectral::Spectral;

/// Source terms of the tracer problem: running weights `F(x, ·)` per frame and
/// terminal weight `G(x, ·)`.
#[derive(Clone, Debug)]
pub struct Mfg1Sources {
    pub running: Trajectory<ScalarField>,
    pub terminal: ScalarField,
}

impl Mfg1Sources {
    /// `F` and `G` evaluated on `reference` frames (the given flow in the literal setting).
    pub fn from_reference(sp: &Spectral, reference: &Trajectory<ScalarField>, cfg: &CostConfig) -> Self {
        Mfg1Sources {
            running: costs::state_derivative_trajectory(sp, reference, cfg),
            terminal: costs::terminal_cost(reference.last(), cfg).derivative,
        }
    }

    /// `F` and `G` evaluated on a spatially uniform field of the given mass,
    /// which makes `G` a well centred on the target.
    pub fn uniform_reference(sp: &Spectral, like: &Trajectory<ScalarField>, mass: f64, cfg: &CostConfig) -> Self {
        let g = *like.first().grid();
        let u = ScalarField::constant(g, mass / g.domain_volume());
        let reference = like.map(|_| u.clone());
        Self::from_reference(sp, &reference, cfg)
    }

    pub fn zero(like: &Trajectory<ScalarField>) -> Self {
        let g = *like.first().grid();
        Mfg1Sources {
            running: like.map(|_| ScalarField::zeros(g)),
            terminal: ScalarField::zeros(g),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mfg1Solution {
    pub rho: Trajectory<ScalarField>,
    pub phi: Trajectory<ScalarField>,
    pub alpha: Trajectory<VectorField>,
    pub cost: CostBreakdown,
    /// `−∫ρ₀ φ_t dx`.
    pub value: f64,
    pub value_identity_residual: f64,
}

pub(crate) fn check_inputs(q: &Trajectory<ScalarField>, rho0: &ScalarField, sources: &Mfg1Sources) -> Result<()> {
    if q.first().grid() != rho0.grid() || sources.terminal.grid() != rho0.grid() {
        return Err(MfgError::config("flow, initial density and costs use different grids"));
    }
    if !q.aligned_with(&sources.running) {
        return Err(MfgError::config("source trajectory does not match the flow window"));
    }
    if !(rho0.mass() > 0.0) {
        return Err(MfgError::config("initial density must have positive mass"));
    }
    Ok(())
}

/// Backward half of the solve; independent of the initial density.
pub fn solve_value_function(
    sp: &Spectral,
    velocity: &Trajectory<VectorField>,
    sources: &Mfg1Sources,
    diffusion: f64,
) -> Result<Trajectory<ScalarField>> {
    integrate::solve_backward_hje(
        sp,
        &sources.terminal.scale(-1.0),
        Some(velocity),
        &[&sources.running],
        diffusion,
        velocity.window(),
        velocity.stride(),
    )
}

/// `α_s = ∇φ_s` frame by frame.
pub fn control_from_potential(sp: &Spectral, phi: &Trajectory<ScalarField>) -> Trajectory<VectorField> {
    phi.map(|p| sp.gradient(p))
}

/// Forward solve and cost for an arbitrary control.
pub fn evaluate_control(
    sp: &Spectral,
    velocity: &Trajectory<VectorField>,
    rho0: &ScalarField,
    alpha: &Trajectory<VectorField>,
    sources: &Mfg1Sources,
    diffusion: f64,
) -> Result<(Trajectory<ScalarField>, CostBreakdown)> {
    let drift = velocity.zip_map(alpha, |u, a| u.add(a));
    let rho = integrate::solve_forward_continuity(
        sp,
        rho0,
        Transport::Prescribed(&drift),
        diffusion,
        velocity.window(),
        velocity.stride(),
    )?;
    let cost = costs::total_cost_mfg1_with(&rho, alpha, &sources.running, &sources.terminal);
    Ok((rho, cost))
}

/// Solve with explicit sources (see [`Mfg1Sources`]).
pub fn solve_mfg1_with(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    rho0: &ScalarField,
    sources: &Mfg1Sources,
    diffusion: f64,
) -> Result<Mfg1Solution> {
    check_inputs(q, rho0, sources)?;
    let velocity = q.map(|f| sp.velocity(f));
    let phi = solve_value_function(sp, &velocity, sources, diffusion)?;
    let alpha = control_from_potential(sp, &phi);
    let (rho, cost) = evaluate_control(sp, &velocity, rho0, &alpha, sources, diffusion)?;
    let value = -rho0.dot(phi.first());
    let value_identity_residual = (cost.total - value).abs() / cost.total.abs().max(1.0);
    Ok(Mfg1Solution {
        rho,
        phi,
        alpha,
        cost,
        value,
        value_identity_residual,
    })
}

/// Solve with `F`, `G` evaluated on the given flow.
pub fn solve_mfg1(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    rho0: &ScalarField,
    cfg: &CostConfig,
    diffusion: f64,
) -> Result<Mfg1Solution> {
    let sources = Mfg1Sources::from_reference(sp, q, cfg);
    solve_mfg1_with(sp, q, rho0, &sources, diffusion)
}

/// The same problem with the control forced to zero.
pub fn uncontrolled(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    rho0: &ScalarField,
    sources: &Mfg1Sources,
    diffusion: f64,
) -> Result<(Trajectory<ScalarField>, CostBreakdown)> {
    let velocity = q.map(|f| sp.velocity(f));
    let g = *rho0.grid();
    let zero = velocity.map(|_| VectorField::zeros(g));
    evaluate_control(sp, &velocity, rho0, &zero, sources, diffusion)
}
