//! Coupling matrices and the discrete K-, L- and S-steps.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dg::{abs_symmetric, DgSpace, Weight};
use crate::error::{Error, Result};
use crate::linalg::BlockDiag;
use crate::lowrank::LowRankState;

/// Velocity-space operators that depend only on the mesh, weight and `U`.
#[derive(Debug)]
pub struct VelocityOps {
    pub space: Arc<DgSpace>,
    pub weight: Weight,
    /// `(v_s ψ_l, ψ_k)`
    pub mv: Vec<BlockDiag>,
    /// `(v_s ω ψ_l, ψ_k)`
    pub av: Vec<BlockDiag>,
    pub fixed: DMatrix<f64>,
    /// Columns `(∂_s(ω U_a), ψ_k)`, with the derivative taken analytically.
    pub g_partial: Vec<DMatrix<f64>>,
    /// Columns `(v_s ω U_a, ψ_k)`.
    pub g_v: Vec<DMatrix<f64>>,
}

impl VelocityOps {
    pub fn new(space: Arc<DgSpace>, weight: Weight, fixed: DMatrix<f64>) -> Self {
        let d = space.dim();
        let mut mv = Vec::with_capacity(d);
        let mut av = Vec::with_capacity(d);
        let mut g_partial = Vec::with_capacity(d);
        let mut g_v = Vec::with_capacity(d);
        let m = fixed.ncols();
        for s in 0..d {
            let vs = space.sample(move |v| v[s]);
            mv.push(space.multiplication_matrix(&vs, Weight::Unweighted));
            let a = space.multiplication_matrix(&vs, weight);
            g_v.push(a.apply(&fixed));
            av.push(a);
            // ∂_s(ω U) = ω (∂_s U + (∂_s ω / ω) U)
            let mut gp = DMatrix::zeros(space.n_dofs(), m);
            for a in 0..m {
                let u = space.values_at_quadrature(fixed.column(a).as_slice());
                let du = space.derivative_at_quadrature(fixed.column(a).as_slice(), s);
                let vals: Vec<f64> = match weight {
                    Weight::Unweighted => du,
                    Weight::Gaussian => du.iter().zip(&u).zip(&vs).map(|((d, u), v)| d - v * u).collect(),
                };
                gp.set_column(a, &space.load_values(&vals, weight));
            }
            g_partial.push(gp);
        }
        Self {
            space,
            weight,
            mv,
            av,
            fixed,
            g_partial,
            g_v,
        }
    }

    pub fn m(&self) -> usize {
        self.fixed.ncols()
    }

    /// `W x` (identity when unweighted).
    pub fn mass(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.space.apply_mass(self.weight, x)
    }

    pub fn inverse_mass(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.space.apply_inverse_mass(self.weight, x)
    }
}

/// Multiplication by the electric field components on the spatial space.
#[derive(Debug, Clone)]
pub struct FieldOps {
    /// `(E_s ψ_l, ψ_k)`
    pub me: Vec<BlockDiag>,
    pub is_zero: bool,
}

impl FieldOps {
    /// `values[s]` holds `E_s` at the quadrature points of `space`.
    pub fn new(space: &DgSpace, values: &[Vec<f64>]) -> Result<Self> {
        if values.len() != space.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} field components for a {}-dimensional space",
                values.len(),
                space.dim()
            )));
        }
        let n = space.n_elements() * space.n_qp();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::SpaceMismatch("field values do not match the spatial mesh".into()));
        }
        let is_zero = values.iter().all(|v| v.iter().all(|x| *x == 0.0));
        let me = values
            .iter()
            .map(|v| space.multiplication_matrix(v, Weight::Unweighted))
            .collect();
        Ok(Self { me, is_zero })
    }

    pub fn zero(space: &DgSpace) -> Self {
        let n = space.n_elements() * space.n_qp();
        Self::new(space, &vec![vec![0.0; n]; space.dim()]).expect("consistent sizes")
    }
}

/// `A^(x,s)`, `B^(x,s)`, `A^(v,s)`, `B^(v,s)` for every axis.
#[derive(Debug, Clone)]
pub struct CouplingMatrices {
    /// `[(v_s V_j, V_i)_ω]`
    pub a_x: Vec<DMatrix<f64>>,
    /// `[(d̂_{v_s} P_ω V_j, V_i)]`
    pub b_x: Vec<DMatrix<f64>>,
    /// `[(-E_s X_j, X_i)]`
    pub a_v: Vec<DMatrix<f64>>,
    /// `[(d̂_{x_s} X_j, X_i)]`
    pub b_v: Vec<DMatrix<f64>>,
}

pub fn velocity_coupling(v: &DMatrix<f64>, ops: &VelocityOps) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let wv = ops.mass(v);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for s in 0..ops.space.dim() {
        let av = v.transpose() * ops.av[s].apply(v);
        a.push(0.5 * (&av + av.transpose()));
        b.push(v.transpose() * ops.space.derivative_matrix(s).apply(&wv));
    }
    (a, b)
}

pub fn spatial_coupling(
    space_x: &DgSpace,
    x: &DMatrix<f64>,
    field: &FieldOps,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for s in 0..space_x.dim() {
        let ae = -(x.transpose() * field.me[s].apply(x));
        a.push(0.5 * (&ae + ae.transpose()));
        b.push(x.transpose() * space_x.derivative_matrix(s).apply(x));
    }
    (a, b)
}

pub fn assemble_coupling(state: &LowRankState, vops: &VelocityOps, field: &FieldOps) -> Result<CouplingMatrices> {
    if !state.v.space.same_mesh(&vops.space) {
        return Err(Error::SpaceMismatch("velocity operators built for another mesh".into()));
    }
    if field.me.first().map(|m| m.n_rows()) != Some(state.x.coefs.nrows()) {
        return Err(Error::SpaceMismatch("electric field lives on another spatial mesh".into()));
    }
    let (a_x, b_x) = velocity_coupling(&state.v.coefs, vops);
    let (a_v, b_v) = spatial_coupling(&state.x.space, &state.x.coefs, field);
    Ok(CouplingMatrices { a_x, b_x, a_v, b_v })
}

/// Largest `|λ|` over the given symmetric matrices.
pub fn spectral_radius(mats: &[DMatrix<f64>]) -> f64 {
    mats.iter()
        .filter(|a| a.nrows() > 0)
        .map(|a| {
            nalgebra::SymmetricEigen::new(0.5 * (a + a.transpose()))
                .eigenvalues
                .amax()
        })
        .fold(0.0, f64::max)
}

/// Explicit Euler DG step for `K = X S` with fixed velocity basis:
/// `K⁺ = K − τ Σ_s (D_s K Aᵀ − E_s K Bᵀ + (1−α)/2 J_s K |A|)`.
pub fn k_step(
    space_x: &DgSpace,
    k: &DMatrix<f64>,
    a_x: &[DMatrix<f64>],
    b_x: &[DMatrix<f64>],
    field: &FieldOps,
    tau: f64,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let mut rhs = DMatrix::zeros(k.nrows(), k.ncols());
    for s in 0..space_x.dim() {
        rhs += space_x.derivative_matrix(s).apply(k) * a_x[s].transpose();
        if !field.is_zero {
            rhs -= field.me[s].apply(k) * b_x[s].transpose();
        }
        if alpha != 1.0 {
            rhs += 0.5 * (1.0 - alpha) * space_x.jump_matrix(s).apply(k) * abs_symmetric(&a_x[s])?;
        }
    }
    Ok(k - tau * rhs)
}

/// Modified L-step on a block-QR state. Returns `L_p⁺` for `p > m`, which is
/// weighted-orthogonal to every `U_a`.
pub fn l_step(
    state: &LowRankState,
    a_v: &[DMatrix<f64>],
    b_v: &[DMatrix<f64>],
    vops: &VelocityOps,
    tau: f64,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let m = state.m;
    let r = state.rank();
    if state.x.len() != r {
        return Err(Error::DimensionMismatch("L-step needs a square block-QR state".into()));
    }
    let n = r - m;
    let sp = &vops.space;
    let s_hat = state.s.view((m, m), (n, n)).into_owned();
    let s_bar = state.s.columns(0, m).into_owned();
    let lhat = vops.mass(&(state.free_v() * s_hat.transpose()));
    let mut rhs = DMatrix::zeros(lhat.nrows(), n);
    for s in 0..sp.dim() {
        let a_hat = a_v[s].view((m, m), (n, n)).into_owned();
        let a_bar = a_v[s].rows(m, n).into_owned();
        let b_hat = b_v[s].view((m, m), (n, n)).into_owned();
        let b_bar = b_v[s].rows(m, n).into_owned();
        rhs += sp.derivative_matrix(s).apply(&lhat) * a_hat.transpose();
        rhs += vops.mv[s].apply(&lhat) * b_hat.transpose();
        if alpha != 1.0 {
            rhs += 0.5 * (1.0 - alpha) * sp.jump_matrix(s).apply(&lhat) * abs_symmetric(&a_hat)?;
        }
        if m > 0 {
            rhs += &vops.g_partial[s] * (a_bar * &s_bar).transpose();
            rhs += &vops.g_v[s] * (b_bar * &s_bar).transpose();
        }
    }
    let mut delta = -tau * rhs;
    if m > 0 {
        // keep (L̂, U_a) = 0 exactly: remove the U-moments along W U
        let wu = vops.mass(&vops.fixed);
        let moments = vops.fixed.transpose() * &delta;
        delta -= wu * moments;
    }
    Ok(vops.inverse_mass(&(lhat + delta)))
}

/// Galerkin S-step on augmented bases `X̃`, `Ṽ` starting from `S̃ⁿ = M S Nᵀ`.
#[allow(clippy::too_many_arguments)]
pub fn s_step_full(
    s_tilde: &DMatrix<f64>,
    x_tilde: &DMatrix<f64>,
    v_tilde: &DMatrix<f64>,
    state: &LowRankState,
    vops: &VelocityOps,
    field: &FieldOps,
    tau: f64,
) -> Result<DMatrix<f64>> {
    if s_tilde.nrows() != x_tilde.ncols() || s_tilde.ncols() != v_tilde.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "S̃ is {}x{} for bases of size {} and {}",
            s_tilde.nrows(),
            s_tilde.ncols(),
            x_tilde.ncols(),
            v_tilde.ncols()
        )));
    }
    let sx = &state.x.space;
    let sv = &vops.space;
    let x = &state.x.coefs;
    let v = &state.v.coefs;
    let xs = x * &state.s;
    let wv = vops.mass(v);
    let mut rhs = DMatrix::zeros(s_tilde.nrows(), s_tilde.ncols());
    for s in 0..sx.dim() {
        let left = x_tilde.transpose() * sx.derivative_matrix(s).apply(&xs);
        let right = vops.av[s].apply(v).transpose() * v_tilde;
        rhs += left * right;
        if !field.is_zero {
            let left = x_tilde.transpose() * field.me[s].apply(&xs);
            let right = sv.derivative_matrix(s).apply(&wv).transpose() * v_tilde;
            rhs -= left * right;
        }
    }
    Ok(s_tilde - tau * rhs)
}

/// Partial S-step for `Ŝ = S[m.., m..]` with `S̄ = S[.., ..m]` held fixed.
/// `direction = -1` gives the backward step of the projector splitting.
pub fn s_step_partial(
    state: &LowRankState,
    cm: &CouplingMatrices,
    tau: f64,
    direction: f64,
) -> Result<DMatrix<f64>> {
    let m = state.m;
    let r = state.rank();
    if state.x.len() != r || cm.a_x.first().map(|a| a.nrows()) != Some(r) {
        return Err(Error::DimensionMismatch("partial S-step needs matching rank".into()));
    }
    let n = r - m;
    let s_hat = state.s.view((m, m), (n, n)).into_owned();
    let s_bar = state.s.columns(0, m).into_owned();
    let mut rate = DMatrix::zeros(n, n);
    for s in 0..cm.a_x.len() {
        let ax_hat = cm.a_x[s].view((m, m), (n, n));
        let bx_hat = cm.b_x[s].view((m, m), (n, n));
        let ax_bar = cm.a_x[s].view((m, 0), (n, m));
        let bx_bar = cm.b_x[s].view((m, 0), (n, m));
        let av_hat = cm.a_v[s].view((m, m), (n, n));
        let bv_hat = cm.b_v[s].view((m, m), (n, n));
        let av_bar = cm.a_v[s].rows(m, n);
        let bv_bar = cm.b_v[s].rows(m, n);
        rate -= bv_hat * &s_hat * ax_hat.transpose() + av_hat * &s_hat * bx_hat.transpose();
        if m > 0 {
            rate -= bv_bar * &s_bar * ax_bar.transpose() + av_bar * &s_bar * bx_bar.transpose();
        }
    }
    let mut out = state.s.clone();
    let updated = s_hat + direction * tau * rate;
    out.view_mut((m, m), (n, n)).copy_from(&updated);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::{fixed_basis, init_state, SeparableTerm};
    use crate::mesh::PeriodicMesh;
    use std::f64::consts::PI;

    fn setup(m: usize) -> (LowRankState, VelocityOps) {
        let mx = Arc::new(PeriodicMesh::build_uniform(1, &[(0.0, 4.0 * PI)], &[8]).unwrap());
        let mv = Arc::new(PeriodicMesh::build_uniform(1, &[(-6.0, 6.0)], &[16]).unwrap());
        let sx = Arc::new(DgSpace::new(mx, 2));
        let sv = Arc::new(DgSpace::new(mv, 2));
        let c = 1.0 / (2.0 * PI).sqrt();
        let terms = vec![
            SeparableTerm::new(|_| 1.0, move |v| c * (-0.5 * v[0] * v[0]).exp()),
            SeparableTerm::new(|x| 0.3 * (0.5 * x[0]).cos(), move |v| c * v[0] * (-0.5 * v[0] * v[0]).exp()),
            SeparableTerm::new(|x| 0.2 * x[0].sin(), move |v| c * v[0].powi(3) * (-0.5 * v[0] * v[0]).exp()),
        ];
        let st = init_state(&terms, &sx, &sv, m, Weight::Gaussian, Some(5)).unwrap();
        let u = fixed_basis(&sv, Weight::Gaussian, m).unwrap();
        (st, VelocityOps::new(sv, Weight::Gaussian, u))
    }

    fn field(st: &LowRankState) -> FieldOps {
        let sx = &st.x.space;
        FieldOps::new(sx, &[sx.sample(|x| 0.05 * (0.5 * x[0]).sin())]).unwrap()
    }

    #[test]
    fn coupling_symmetries() {
        let (st, vops) = setup(2);
        let cm = assemble_coupling(&st, &vops, &field(&st)).unwrap();
        assert!((&cm.b_v[0] + cm.b_v[0].transpose()).amax() < 1e-12);
        assert!((&cm.a_x[0] - cm.a_x[0].transpose()).amax() < 1e-12);
        let zero = assemble_coupling(&st, &vops, &FieldOps::zero(&st.x.space)).unwrap();
        assert_eq!(zero.a_v[0].amax(), 0.0);
        // (v·U_1, U_1)_ω vanishes by symmetry
        assert!(cm.a_x[0][(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn zero_step_is_identity() {
        let (st, vops) = setup(2);
        let f = field(&st);
        let cm = assemble_coupling(&st, &vops, &f).unwrap();
        assert_eq!(k_step(&st.x.space, &st.k(), &cm.a_x, &cm.b_x, &f, 0.0, 1.0).unwrap(), st.k());
        let l = l_step(&st, &cm.a_v, &cm.b_v, &vops, 0.0, 1.0).unwrap();
        // τ = 0: L = W⁻¹ W (W Ŝᵀ) up to the local solves
        let expect = st.free_v() * st.s.view((2, 2), (3, 3)).transpose();
        assert!((l - expect).amax() < 1e-13);
        assert_eq!(s_step_partial(&st, &cm, 0.0, -1.0).unwrap(), st.s);
    }

    #[test]
    fn l_step_stays_orthogonal_to_fixed_functions() {
        let (st, vops) = setup(2);
        let f = field(&st);
        let cm = assemble_coupling(&st, &vops, &f).unwrap();
        let l = l_step(&st, &cm.a_v, &cm.b_v, &vops, 0.05, 1.0).unwrap();
        let g = st.v.space.gram(&vops.fixed, &l, Weight::Gaussian);
        assert!(g.amax() < 1e-13);
    }

    #[test]
    fn partial_steps_cancel_without_homogeneous_part() {
        let (st, vops) = setup(1);
        let cm = assemble_coupling(&st, &vops, &field(&st)).unwrap();
        let fwd = s_step_partial(&st, &cm, 1e-3, 1.0).unwrap();
        let mut mid = st.clone();
        mid.s = fwd;
        let back = s_step_partial(&mid, &cm, 1e-3, -1.0).unwrap();
        // the increments differ only through Ŝ, so the defect is O(τ²)
        assert!((back - &st.s).amax() < 1e-5 * st.s.amax());
    }
}
