//! Time integrators: the rank-adaptive unconventional (BUG) scheme and the
//! modified projector splitting (KSL), plus the time loop.

use std::sync::Arc;
use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coupling::{
    assemble_coupling, k_step, l_step, s_step_full, s_step_partial, spectral_radius, CouplingMatrices, FieldOps,
    VelocityOps,
};
use crate::dg::{DgSpace, FieldBundle};
use crate::diagnostics::{continuity_residuals, observe, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::lowrank::{augment_bases, from_kv, mass_of, truncate, LowRankState, Truncation};
use crate::orth::{orthonormalize, Exhausted, LegendreModes};
use crate::poisson::{compute_moments, poisson_strategies, ElectricField, PoissonSolver, VelocityMoments};
use crate::registry::Registry;

/// Source of the electric field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldModel {
    /// Self-consistent field from `-ΔΦ = 1 - ρ`.
    Poisson,
    /// `E ≡ 0` (free transport).
    Zero,
}

/// Mesh-dependent operators shared by all steps on a fixed pair of meshes.
#[derive(Debug)]
pub struct Problem {
    pub vops: VelocityOps,
    pub moments: VelocityMoments,
    pub model: FieldModel,
    poisson: Option<PoissonSolver>,
    space_x: Arc<DgSpace>,
    space_e: Arc<DgSpace>,
    strategy: String,
}

/// `E^n` together with its multiplication operators on the spatial space.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub e: ElectricField,
    pub ops: FieldOps,
}

impl Problem {
    /// Builds the operators for the meshes and fixed basis of `state`.
    pub fn for_state(state: &LowRankState, model: FieldModel, poisson_strategy: &str) -> Result<Self> {
        let space_x = state.space_x().clone();
        let space_v = state.space_v().clone();
        let vops = VelocityOps::new(space_v.clone(), state.weight, state.fixed());
        let moments = VelocityMoments::new(&space_v, state.weight);
        let (poisson, space_e) = match model {
            FieldModel::Poisson => {
                let strategy = poisson_strategies().get(poisson_strategy)?;
                let solver = PoissonSolver::new(&space_x, strategy.as_ref())?;
                let se = solver.field_space().clone();
                (Some(solver), se)
            }
            FieldModel::Zero => (None, Arc::new(DgSpace::new(space_x.mesh().clone(), space_x.degree()))),
        };
        Ok(Self {
            vops,
            moments,
            model,
            poisson,
            space_x,
            space_e,
            strategy: poisson_strategy.to_string(),
        })
    }

    pub fn poisson_strategy(&self) -> &str {
        &self.strategy
    }

    /// True when the operators were built for the meshes and `U` of `state`.
    pub fn matches(&self, state: &LowRankState) -> bool {
        self.space_x.same_mesh(state.space_x())
            && self.vops.space.same_mesh(state.space_v())
            && self.vops.m() == state.m
            && self.vops.weight == state.weight
    }

    /// Moments, Poisson solve and multiplication operators for `state`.
    pub fn field(&self, state: &LowRankState) -> Result<FieldState> {
        if !self.matches(state) {
            return Err(Error::SpaceMismatch("problem operators were built for other meshes".into()));
        }
        match &self.poisson {
            Some(solver) => {
                let rho = compute_moments(state, &self.moments).rho;
                let e = solver.solve(&rho)?;
                let ops = FieldOps::new(&self.space_x, &e.values_on(&self.space_x)?)?;
                Ok(FieldState { e, ops })
            }
            None => Ok(FieldState {
                e: ElectricField::zero(self.space_e.clone()),
                ops: FieldOps::zero(&self.space_x),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub tau: f64,
    /// Flux parameter: 1 is central, 0 is upwind.
    pub alpha: f64,
    pub truncation: Truncation,
    pub max_rank: Option<usize>,
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if let Truncation::Tolerance { epsilon } = self.truncation {
            if !(epsilon >= 0.0) {
                return Err(Error::InvalidArgument(format!("truncation tolerance must be >= 0, got {epsilon}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub state: LowRankState,
    pub rank_before: usize,
    pub rank_after: usize,
    /// Frobenius norm of the discarded singular values.
    pub discarded: f64,
    /// The rank cap removed directions the policy would have kept.
    pub capped: bool,
    /// `τ λ_max (p+1)² / h_min`, maximized over both spaces.
    pub cfl: f64,
    pub cfl_flag: bool,
    pub wall_time: f64,
}

pub trait Integrator: Send + Sync {
    fn name(&self) -> &'static str;

    /// One step from `state` using the field `field` computed from it.
    fn step_with(
        &self,
        state: &LowRankState,
        problem: &Problem,
        field: &FieldState,
        cfg: &IntegratorConfig,
    ) -> Result<StepReport>;

    fn step(&self, state: &LowRankState, problem: &Problem, cfg: &IntegratorConfig) -> Result<StepReport> {
        let field = problem.field(state)?;
        self.step_with(state, problem, &field, cfg)
    }
}

pub fn integrators() -> Registry<dyn Integrator> {
    Registry::<dyn Integrator>::new("integrator")
        .with("bug", || Box::new(Bug) as Box<dyn Integrator>)
        .with("ksl", || Box::new(Ksl) as Box<dyn Integrator>)
}

fn cfl_number(state: &LowRankState, cm: &CouplingMatrices, tau: f64) -> f64 {
    let px = (state.space_x().degree() + 1).pow(2) as f64;
    let pv = (state.space_v().degree() + 1).pow(2) as f64;
    let cx = tau * spectral_radius(&cm.a_x) * px / state.space_x().mesh().h_min();
    let cv = tau * spectral_radius(&cm.a_v) * pv / state.space_v().mesh().h_min();
    cx.max(cv)
}

fn flag_cfl(name: &str, cfl: f64) -> bool {
    let flag = cfl > 1.0;
    if flag {
        warn!("{name}: CFL number {cfl:.3} exceeds 1");
    }
    flag
}

fn is_block_qr(state: &LowRankState) -> bool {
    let m = state.m;
    let r = state.rank();
    state.x.len() == r && state.s.view((0, m), (m, r - m)).iter().all(|x| *x == 0.0)
}

fn check_state(state: &LowRankState, problem: &Problem) -> Result<()> {
    if !problem.matches(state) {
        return Err(Error::SpaceMismatch("problem operators were built for other meshes".into()));
    }
    if state.rank() <= state.m {
        return Err(Error::InvalidArgument(format!(
            "rank {} leaves no free directions beyond m={}",
            state.rank(),
            state.m
        )));
    }
    Ok(())
}

/// Rank-adaptive unconventional integrator with basis augmentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bug;

impl Integrator for Bug {
    fn name(&self) -> &'static str {
        "bug"
    }

    fn step_with(
        &self,
        state: &LowRankState,
        problem: &Problem,
        field: &FieldState,
        cfg: &IntegratorConfig,
    ) -> Result<StepReport> {
        let start = Instant::now();
        cfg.validate()?;
        check_state(state, problem)?;
        let owned;
        let state = if is_block_qr(state) {
            state
        } else {
            owned = state.to_block_qr()?;
            &owned
        };
        let vops = &problem.vops;
        let cm = assemble_coupling(state, vops, &field.ops)?;
        let cfl = cfl_number(state, &cm, cfg.tau);
        let sx = state.space_x();

        let (k_new, l_new) = rayon::join(
            || k_step(sx, &state.k(), &cm.a_x, &cm.b_x, &field.ops, cfg.tau, cfg.alpha),
            || l_step(state, &cm.a_v, &cm.b_v, vops, cfg.tau, cfg.alpha),
        );
        let aug = augment_bases(&state.x, &k_new?, &state.v, &l_new?, state.m, state.weight)?;
        let s_tilde = &aug.m_mat * &state.s * aug.n_mat.transpose();
        let s_new = s_step_full(&s_tilde, &aug.x.coefs, &aug.v.coefs, state, vops, &field.ops, cfg.tau)?;
        let augmented = LowRankState::new(aug.x, s_new, aug.v, state.m, state.weight)?;
        let (out, report) = truncate(&augmented, cfg.truncation, cfg.max_rank)?;
        if report.capped {
            warn!("bug: rank cap {:?} reached", cfg.max_rank);
        }
        Ok(StepReport {
            rank_before: state.rank(),
            rank_after: out.rank(),
            state: out,
            discarded: report.discarded,
            capped: report.capped,
            cfl,
            cfl_flag: flag_cfl("bug", cfl),
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

/// Fixed-rank modified projector splitting: K-step, backward S-step, L-step.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ksl;

impl Integrator for Ksl {
    fn name(&self) -> &'static str {
        "ksl"
    }

    fn step_with(
        &self,
        state: &LowRankState,
        problem: &Problem,
        field: &FieldState,
        cfg: &IntegratorConfig,
    ) -> Result<StepReport> {
        let start = Instant::now();
        cfg.validate()?;
        check_state(state, problem)?;
        let m = state.m;
        let r = state.rank();
        let n = r - m;
        let vops = &problem.vops;
        let sx = state.space_x();
        let sv = state.space_v();

        let cm0 = assemble_coupling(state, vops, &field.ops)?;
        let cfl = cfl_number(state, &cm0, cfg.tau);
        let k_new = k_step(sx, &state.k(), &cm0.a_x, &cm0.b_x, &field.ops, cfg.tau, cfg.alpha)?;
        let mut s1 = from_kv(sx, &k_new, state.v.clone(), m, state.weight)?;

        let cm1 = assemble_coupling(&s1, vops, &field.ops)?;
        s1.s = s_step_partial(&s1, &cm1, cfg.tau, -1.0)?;

        let l_new = l_step(&s1, &cm1.a_v, &cm1.b_v, vops, cfg.tau, cfg.alpha)?;
        let mut cols = DMatrix::zeros(sv.n_dofs(), r);
        cols.columns_mut(0, m).copy_from(&s1.fixed());
        cols.columns_mut(m, n).copy_from(&l_new);
        let mut pad = LegendreModes::new(sv, state.weight);
        let q = orthonormalize(&cols, mass_of(sv, state.weight), m, Exhausted::Pad, &mut pad)?;
        // Z_p ⊗ (Σ_b S_pb U_b + L_p) with L_p = Σ_i V_i R_{i,p}
        let mut s_new = DMatrix::zeros(r, r);
        s_new.view_mut((0, 0), (m, m)).copy_from(&s1.s.view((0, 0), (m, m)));
        let r_l = q.r.columns(m, n);
        s_new
            .view_mut((m, 0), (n, m))
            .copy_from(&(s1.s.view((m, 0), (n, m)) + r_l.rows(0, m).transpose()));
        s_new.view_mut((m, m), (n, n)).copy_from(&r_l.rows(m, n).transpose());
        let v = FieldBundle::new(sv.clone(), q.q)?;
        let out = LowRankState::new(s1.x, s_new, v, m, state.weight)?;
        Ok(StepReport {
            rank_before: r,
            rank_after: out.rank(),
            state: out,
            discarded: 0.0,
            capped: false,
            cfl,
            cfl_flag: flag_cfl("ksl", cfl),
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub t_final: f64,
    /// Emit a record every `stride` steps (the final state is always recorded).
    pub stride: usize,
    /// Start time and step index, for resumed runs.
    pub t0: f64,
    pub step0: usize,
}

impl RunOptions {
    pub fn new(t_final: f64) -> Self {
        Self { t_final, stride: 1, t0: 0.0, step0: 0 }
    }
}

/// Hooks into the time loop.
pub trait RunHooks {
    /// May replace the state after a step, e.g. on a new mesh. A hook that
    /// changes meshes must rebuild `problem` as well.
    fn post_step(&mut self, _step: usize, _t: f64, state: LowRankState, _problem: &mut Problem) -> Result<LowRankState> {
        Ok(state)
    }

    fn record(&mut self, _step: usize, _rec: &DiagnosticsRecord, _state: &LowRankState) -> Result<()> {
        Ok(())
    }

    /// Called with the last good state before an error is returned.
    fn on_failure(&mut self, _step: usize, _t: f64, _state: &LowRankState, _err: &Error) {}
}

/// Hooks that only collect records.
#[derive(Debug, Default)]
pub struct Collect;

impl RunHooks for Collect {}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: LowRankState,
    pub records: Vec<DiagnosticsRecord>,
    pub steps: usize,
    pub t: f64,
}

/// Number of steps of size `tau` needed to reach `t_final` from `t0`.
pub fn step_count(t0: f64, t_final: f64, tau: f64) -> usize {
    let n = (t_final - t0) / tau;
    let rounded = n.round();
    if (n - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        rounded.max(0.0) as usize
    } else {
        n.ceil().max(0.0) as usize
    }
}

/// Advances `state` until `t ≥ t_final`, recording diagnostics.
pub fn run(
    state: LowRankState,
    problem: &mut Problem,
    integrator: &dyn Integrator,
    cfg: &IntegratorConfig,
    opts: &RunOptions,
    hooks: &mut dyn RunHooks,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if !(opts.t_final > opts.t0) {
        return Err(Error::InvalidArgument(format!(
            "final time {} must exceed the start time {}",
            opts.t_final, opts.t0
        )));
    }
    let stride = opts.stride.max(1);
    let n_steps = step_count(opts.t0, opts.t_final, cfg.tau);
    let started = std::time::Instant::now();
    let mut records = Vec::new();
    let mut state = state;
    let mut field = problem.field(&state)?;
    let mut rec = observe(&state, &field.e, &problem.moments);
    rec.t = opts.t0;
    hooks.record(opts.step0, &rec, &state)?;
    records.push(rec);

    // resumed runs with an unchanged step size reproduce the times of an
    // uninterrupted run exactly
    let on_global_grid = (opts.t0 - opts.step0 as f64 * cfg.tau).abs() <= 1e-9 * opts.t0.abs().max(cfg.tau);
    let mut t = opts.t0;
    for n in 0..n_steps {
        let step_index = opts.step0 + n + 1;
        let t_next = if on_global_grid {
            step_index as f64 * cfg.tau
        } else {
            opts.t0 + (n + 1) as f64 * cfg.tau
        };
        let result = (|| -> Result<(LowRankState, FieldState, DiagnosticsRecord)> {
            let report = integrator.step_with(&state, problem, &field, cfg)?;
            if report.state.s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("coefficients after step {step_index}")));
            }
            let (res_rho, res_j) = continuity_residuals(&state, &report.state, &field.ops, &problem.moments, cfg.tau)?;
            let next = hooks.post_step(step_index, t_next, report.state, problem)?;
            let next_field = problem.field(&next)?;
            let mut rec = observe(&next, &next_field.e, &problem.moments);
            rec.t = t_next;
            rec.continuity_residual_rho = res_rho;
            rec.continuity_residual_j = res_j;
            rec.cfl_flag = report.cfl_flag;
            rec.wall_time = started.elapsed().as_secs_f64();
            Ok((next, next_field, rec))
        })();
        match result {
            Ok((next, next_field, rec)) => {
                state = next;
                field = next_field;
                t = t_next;
                if (n + 1) % stride == 0 || n + 1 == n_steps {
                    hooks.record(step_index, &rec, &state)?;
                    records.push(rec);
                }
            }
            Err(err) => {
                hooks.on_failure(step_index - 1, t, &state, &err);
                return Err(err);
            }
        }
    }
    Ok(RunOutcome { state, records, steps: n_steps, t })
}
