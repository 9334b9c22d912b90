//! Observables, discrete continuity residuals and decay-rate fitting.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coupling::FieldOps;
use crate::dg::{DgSpace, QuadPoint};
use crate::error::{Error, Result};
use crate::lowrank::LowRankState;
use crate::poisson::{integral, velocity_moment, ElectricField, VelocityMoments};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub electric_energy: f64,
    pub kinetic_energy: f64,
    pub total_energy: f64,
    pub rank: usize,
    pub n_elements_x: usize,
    pub n_elements_v: usize,
    /// Residual of the step that produced this state; NaN when undefined.
    pub continuity_residual_rho: f64,
    pub continuity_residual_j: Vec<f64>,
    pub cfl_flag: bool,
    pub wall_time: f64,
}

/// Observables of `state` with field `e`. Residuals, flags and timings are
/// left for the caller to fill in.
pub fn observe(state: &LowRankState, e: &ElectricField, vm: &VelocityMoments) -> DiagnosticsRecord {
    let d = state.space_x().dim();
    let mass = integral(&velocity_moment(state, &vm.one));
    let momentum = vm.v.iter().map(|c| integral(&velocity_moment(state, c))).collect();
    let kinetic_energy = 0.5 * integral(&velocity_moment(state, &vm.v_sq));
    let electric_energy = e.energy();
    DiagnosticsRecord {
        t: 0.0,
        mass,
        momentum,
        electric_energy,
        kinetic_energy,
        total_energy: kinetic_energy + electric_energy,
        rank: state.rank(),
        n_elements_x: state.space_x().n_elements(),
        n_elements_v: state.space_v().n_elements(),
        continuity_residual_rho: f64::NAN,
        continuity_residual_j: vec![f64::NAN; d],
        cfl_flag: false,
        wall_time: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Continuity {
    Rho,
    J(usize),
}

fn discrete_divergence(space: &DgSpace, flux: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(space.n_dofs());
    for (s, f) in flux.iter().enumerate() {
        out += DVector::from_vec(space.derivative_matrix(s).apply_vec(f.as_slice()));
    }
    out
}

/// Maximum over all test functions of the discrete continuity residual for
/// one step `state_n → state_n1` driven by the field `field` of `state_n`.
pub fn continuity_residual(
    state_n: &LowRankState,
    state_n1: &LowRankState,
    field: &FieldOps,
    vm: &VelocityMoments,
    tau: f64,
    which: Continuity,
) -> Result<f64> {
    let sx = state_n.space_x();
    if !sx.same_mesh(state_n1.space_x()) || !state_n.space_v().same_mesh(state_n1.space_v()) {
        return Err(Error::SpaceMismatch("consecutive states live on different meshes".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {tau}")));
    }
    let d = sx.dim();
    let residual = match which {
        Continuity::Rho => {
            let a = velocity_moment(state_n, &vm.one).coefs;
            let b = velocity_moment(state_n1, &vm.one).coefs;
            let j: Vec<_> = vm.v.iter().map(|c| velocity_moment(state_n, c).coefs).collect();
            (b - a) / tau + discrete_divergence(sx, &j)
        }
        Continuity::J(s) => {
            if s >= d {
                return Err(Error::InvalidArgument(format!("momentum component {s} in {d} dimensions")));
            }
            let a = velocity_moment(state_n, &vm.v[s]).coefs;
            let b = velocity_moment(state_n1, &vm.v[s]).coefs;
            let sigma: Vec<_> = vm.vv[s].iter().map(|c| velocity_moment(state_n, c).coefs).collect();
            let rho = velocity_moment(state_n, &vm.one).coefs;
            let mut r = (b - a) / tau + discrete_divergence(sx, &sigma);
            if !field.is_zero {
                r += DVector::from_vec(field.me[s].apply_vec(rho.as_slice()));
            }
            r
        }
    };
    Ok(residual.amax())
}

/// Convenience wrapper returning `(ρ residual, [j_s residuals])`.
pub fn continuity_residuals(
    state_n: &LowRankState,
    state_n1: &LowRankState,
    field: &FieldOps,
    vm: &VelocityMoments,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let rho = continuity_residual(state_n, state_n1, field, vm, tau, Continuity::Rho)?;
    let j = (0..state_n.space_x().dim())
        .map(|s| continuity_residual(state_n, state_n1, field, vm, tau, Continuity::J(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok((rho, j))
}

/// Decay rate γ of `energy ~ exp(−2γt)`, from a least-squares line through
/// the local maxima of `log energy` with `t` inside `window`.
///
/// Maxima before the first local minimum belong to the initial state, not to
/// the damped oscillation, and are skipped.
pub fn fit_decay_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let inside: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, e)| *t >= window.0 && *t <= window.1 && *e > 0.0 && e.is_finite())
        .collect();
    let first_trough = (1..inside.len().saturating_sub(1))
        .find(|&i| inside[i].1 < inside[i - 1].1 && inside[i].1 <= inside[i + 1].1)
        .unwrap_or(0);
    let mut peaks = Vec::new();
    for i in first_trough + 1..inside.len().saturating_sub(1) {
        let (t, e) = inside[i];
        if e >= inside[i - 1].1 && e >= inside[i + 1].1 {
            peaks.push((t, e.ln()));
        }
    }
    if peaks.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least 3 envelope points, found {}",
            peaks.len()
        )));
    }
    let n = peaks.len() as f64;
    let tm = peaks.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = peaks.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = peaks.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum();
    let sxx: f64 = peaks.iter().map(|p| (p.0 - tm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("envelope points share one time".into()));
    }
    Ok(-0.5 * sxy / sxx)
}

/// `‖f_h - f‖_{L2(Ω)}` by tensor quadrature on both meshes.
pub fn l2_error<F>(state: &LowRankState, exact: F) -> f64
where
    F: Fn([f64; 2], [f64; 2]) -> f64 + Sync,
{
    let sx = state.space_x();
    let sv = state.space_v();
    let r = state.rank();
    let nqv = sv.n_elements() * sv.n_qp();
    let mut vq = DMatrix::zeros(r, nqv);
    for j in 0..r {
        let vals = sv.values_at_quadrature(state.v.coefs.column(j).as_slice());
        vq.row_mut(j).copy_from_slice(&vals);
    }
    let vpts: Vec<QuadPoint> = (0..sv.n_elements()).flat_map(|e| sv.quad_points(e)).collect();
    let omega: Vec<f64> = vpts.iter().map(|q| state.weight.eval(&q.x[..sv.dim()])).collect();
    let sv_mat = &state.s * vq;
    // per-element partial sums, added in a fixed order for reproducibility
    let partial: Vec<f64> = (0..sx.n_elements())
        .into_par_iter()
        .map(|e| {
            let nl = sx.n_local();
            let mut sum = 0.0;
            for qx in sx.quad_points(e) {
                let xi = sx.mesh().leaves()[e].to_reference(qx.x);
                let phi = sx.ref_basis(xi).0;
                let scale = sx.scale(e);
                let xvals: Vec<f64> = (0..r)
                    .map(|i| {
                        let c = state.x.coefs.column(i);
                        scale * (0..nl).map(|l| phi[l] * c[e * nl + l]).sum::<f64>()
                    })
                    .collect();
                for (k, qv) in vpts.iter().enumerate() {
                    let fh: f64 = omega[k] * (0..r).map(|i| xvals[i] * sv_mat[(i, k)]).sum::<f64>();
                    let d = fh - exact(qx.x, qv.x);
                    sum += qx.w * qv.w * d * d;
                }
            }
            sum
        })
        .collect();
    partial.iter().sum::<f64>().sqrt()
}
