//! Weighted low-rank states `f = ω Σ X_i S_ij V_j` and their refactorings.
//!
//! The first `m` velocity functions are the fixed basis `U_a`; the remaining
//! ones are `W_p`, weighted-orthogonal to every `U_a`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dg::{DgSpace, FieldBundle, Weight};
use crate::error::{Error, Result};
use crate::linalg::BlockDiag;
use crate::orth::{orthonormalize, Exhausted, LegendreModes};

/// Inner-product matrix for a velocity weight (`None` for the identity).
pub fn mass_of(space: &DgSpace, weight: Weight) -> Option<&BlockDiag> {
    match weight {
        Weight::Unweighted => None,
        Weight::Gaussian => Some(&space.gaussian_mass().0),
    }
}

/// Orthonormalized `{1, v_1, .., v_d, |v|²}`, first `m` of them.
pub fn fixed_basis(space: &DgSpace, weight: Weight, m: usize) -> Result<DMatrix<f64>> {
    let d = space.dim();
    if m > d + 2 {
        return Err(Error::InvalidArgument(format!(
            "at most {} fixed functions exist in {d} velocity dimensions, got {m}",
            d + 2
        )));
    }
    let mut cols: Vec<DVector<f64>> = vec![space.project(|_| 1.0, weight)];
    for s in 0..d {
        cols.push(space.project(move |v| v[s], weight));
    }
    cols.push(space.project(move |v| v[..d].iter().map(|x| x * x).sum(), weight));
    cols.truncate(m);
    if m == 0 {
        return Ok(DMatrix::zeros(space.n_dofs(), 0));
    }
    let raw = DMatrix::from_columns(&cols);
    let mut pad = LegendreModes::new(space, weight);
    let out = orthonormalize(&raw, mass_of(space, weight), 0, Exhausted::Drop, &mut pad)?;
    if out.q.ncols() != m {
        return Err(Error::InvalidArgument(
            "fixed functions are not independent in this velocity space".into(),
        ));
    }
    Ok(out.q)
}

#[derive(Debug, Clone)]
pub struct LowRankState {
    /// Spatial basis, orthonormal in the plain L2 product.
    pub x: FieldBundle,
    pub s: DMatrix<f64>,
    /// Velocity basis, orthonormal in the ω-weighted product; `v[:, ..m] = U`.
    pub v: FieldBundle,
    pub m: usize,
    pub weight: Weight,
}

impl LowRankState {
    pub fn new(x: FieldBundle, s: DMatrix<f64>, v: FieldBundle, m: usize, weight: Weight) -> Result<Self> {
        if s.nrows() != x.len() || s.ncols() != v.len() {
            return Err(Error::DimensionMismatch(format!(
                "S is {}x{} but the bases have {} and {} components",
                s.nrows(),
                s.ncols(),
                x.len(),
                v.len()
            )));
        }
        if m > v.len() {
            return Err(Error::InvalidArgument(format!("m={m} exceeds velocity rank {}", v.len())));
        }
        Ok(Self { x, s, v, m, weight })
    }

    pub fn rank(&self) -> usize {
        self.v.len()
    }

    pub fn space_x(&self) -> &Arc<DgSpace> {
        &self.x.space
    }

    pub fn space_v(&self) -> &Arc<DgSpace> {
        &self.v.space
    }

    pub fn fixed(&self) -> DMatrix<f64> {
        self.v.coefs.columns(0, self.m).into_owned()
    }

    /// Non-fixed velocity functions `W_p`.
    pub fn free_v(&self) -> DMatrix<f64> {
        self.v.coefs.columns(self.m, self.rank() - self.m).into_owned()
    }

    /// `K = X S`.
    pub fn k(&self) -> DMatrix<f64> {
        &self.x.coefs * &self.s
    }

    pub fn eval(&self, x: [f64; 2], v: [f64; 2]) -> f64 {
        let sx = &self.x.space;
        let sv = &self.v.space;
        let xs = DVector::from_fn(self.x.len(), |i, _| sx.eval(self.x.coefs.column(i).as_slice(), x));
        let vs = DVector::from_fn(self.v.len(), |j, _| sv.eval(self.v.coefs.column(j).as_slice(), v));
        self.weight.eval(&v[..sv.dim()]) * (xs.transpose() * &self.s * vs)[(0, 0)]
    }

    /// `(f, g)` in L2(Ω_x) ⊗ L2(Ω_v; ω) with both functions divided by ω.
    pub fn inner_with(&self, other: &LowRankState) -> f64 {
        let gx = self.x.coefs.transpose() * &other.x.coefs;
        let gv = self.v.space.gram(&self.v.coefs, &other.v.coefs, self.weight);
        (self.s.transpose() * gx * &other.s).component_mul(&gv).sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner_with(self).max(0.0).sqrt()
    }

    pub fn distance(&self, other: &LowRankState) -> f64 {
        (self.inner_with(self) + other.inner_with(other) - 2.0 * self.inner_with(other))
            .max(0.0)
            .sqrt()
    }

    /// Largest deviation from the orthonormality and fixed-basis invariants.
    pub fn invariant_defect(&self, fixed: &DMatrix<f64>) -> f64 {
        let r = self.rank();
        let gx = self.x.coefs.transpose() * &self.x.coefs;
        let gv = self.v.space.gram(&self.v.coefs, &self.v.coefs, self.weight);
        let dx = (gx - DMatrix::identity(self.x.len(), self.x.len())).amax();
        let dv = (gv - DMatrix::identity(r, r)).amax();
        let du = if fixed.ncols() == self.m && self.m > 0 {
            (self.fixed() - fixed).amax()
        } else {
            0.0
        };
        dx.max(dv).max(du)
    }

    /// Rebuilds the spatial basis so that S is block lower triangular:
    /// `S = [[S_ab, 0], [S_pb, S_pq]]`.
    pub fn to_block_qr(&self) -> Result<LowRankState> {
        from_kv(&self.x.space, &self.k(), self.v.clone(), self.m, self.weight)
    }
}

/// Block-QR of `K` against the velocity basis `v`: returns a state with
/// `X = [X_a, Z_p]` and block triangular S.
pub fn from_kv(
    space_x: &Arc<DgSpace>,
    k: &DMatrix<f64>,
    v: FieldBundle,
    m: usize,
    weight: Weight,
) -> Result<LowRankState> {
    let r = v.len();
    if k.ncols() != r {
        return Err(Error::DimensionMismatch(format!("K has {} columns, V has {r}", k.ncols())));
    }
    let (q, s) = block_qr(space_x, k, m)?;
    LowRankState::new(FieldBundle::new(space_x.clone(), q)?, s, v, m, weight)
}

/// `K = Q S` with Q orthonormal and S block lower triangular.
pub fn block_qr(space_x: &DgSpace, k: &DMatrix<f64>, m: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r = k.ncols();
    let n_w = r - m;
    let mut pad = LegendreModes::new(space_x, Weight::Unweighted);
    let kw = k.columns(m, n_w).into_owned();
    let zq = orthonormalize(&kw, None, 0, Exhausted::Pad, &mut pad)?;
    let mut joined = DMatrix::zeros(k.nrows(), r);
    joined.columns_mut(0, n_w).copy_from(&zq.q);
    joined.columns_mut(n_w, m).copy_from(&k.columns(0, m));
    let full = orthonormalize(&joined, None, n_w, Exhausted::Pad, &mut pad)?;
    debug_assert_eq!(full.q.ncols(), r);

    let mut q = DMatrix::zeros(k.nrows(), r);
    q.columns_mut(0, m).copy_from(&full.q.columns(n_w, m));
    q.columns_mut(m, n_w).copy_from(&zq.q);
    let mut s = DMatrix::zeros(r, r);
    // rows of X_a against K_U, rows of Z against K_U and K_W
    s.view_mut((0, 0), (m, m)).copy_from(&full.r.view((n_w, n_w), (m, m)));
    s.view_mut((m, 0), (n_w, m)).copy_from(&full.r.view((0, n_w), (n_w, m)));
    s.view_mut((m, m), (n_w, n_w)).copy_from(&zq.r);
    Ok((q, s))
}

/// Rank truncation policy for the non-fixed block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truncation {
    /// Drop the smallest singular values whose squares sum to at most ε².
    Tolerance { epsilon: f64 },
    /// Keep `rank - m` non-fixed directions.
    FixedRank { rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationReport {
    pub rank_before: usize,
    pub rank_after: usize,
    /// Frobenius norm of the discarded singular values.
    pub discarded: f64,
    pub singular_values: Vec<f64>,
    /// The rank cap cut off directions the policy would have kept.
    pub capped: bool,
}

/// Truncates the non-fixed block `S[:, m..]` by SVD. The `U_a` columns of S
/// are untouched, so every moment `(f, U_a)` is preserved.
pub fn truncate(
    state: &LowRankState,
    policy: Truncation,
    max_rank: Option<usize>,
) -> Result<(LowRankState, TruncationReport)> {
    let m = state.m;
    match policy {
        Truncation::Tolerance { epsilon } if !(epsilon >= 0.0) => {
            return Err(Error::InvalidArgument(format!("truncation tolerance must be >= 0, got {epsilon}")));
        }
        Truncation::FixedRank { rank } if rank < m.max(1) => {
            return Err(Error::InvalidArgument(format!(
                "target rank {rank} is below the number of fixed functions {m} (or zero)"
            )));
        }
        _ => {}
    }
    if let Some(cap) = max_rank {
        if cap <= m {
            return Err(Error::InvalidArgument(format!("rank cap {cap} must exceed m={m}")));
        }
    }

    let mut state = state.clone();
    if state.rank() == m {
        state = pad_velocity(&state, 1)?;
    }
    let rank_before = state.rank();
    let n_w = rank_before - m;
    let sw = state.s.columns(m, n_w).into_owned();
    let svd = sw.clone().svd(true, true);
    let mut p = svd.u.ok_or(Error::NonFinite("SVD failed".into()))?;
    let mut qt = svd.v_t.ok_or(Error::NonFinite("SVD failed".into()))?;
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    if sigma.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("singular values of S".into()));
    }
    let n_sv = sigma.len();

    let mut k = match policy {
        Truncation::Tolerance { epsilon } => {
            let mut k = n_sv;
            let mut tail = 0.0;
            while k > 0 && tail + sigma[k - 1] * sigma[k - 1] <= epsilon * epsilon {
                tail += sigma[k - 1] * sigma[k - 1];
                k -= 1;
            }
            k
        }
        Truncation::FixedRank { rank } => (rank - m).min(n_sv),
    };
    let mut capped = false;
    if let Some(cap) = max_rank {
        if m + k > cap {
            k = cap - m;
            capped = true;
        }
    }
    let k = k.max(1).min(n_sv);

    for i in 0..n_sv {
        let col = p.column(i);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            p.column_mut(i).neg_mut();
            qt.row_mut(i).neg_mut();
        }
    }
    let discarded = sigma[k..].iter().map(|x| x * x).sum::<f64>().sqrt();

    // new W = W Q_k, new K = X [S_U, P_k Σ_k]
    let w_new = state.free_v() * qt.rows(0, k).transpose();
    let mut v_coefs = DMatrix::zeros(state.v.coefs.nrows(), m + k);
    v_coefs.columns_mut(0, m).copy_from(&state.v.coefs.columns(0, m));
    v_coefs.columns_mut(m, k).copy_from(&w_new);
    let mut s_coord = DMatrix::zeros(state.s.nrows(), m + k);
    s_coord.columns_mut(0, m).copy_from(&state.s.columns(0, m));
    for i in 0..k {
        s_coord.column_mut(m + i).copy_from(&(p.column(i) * sigma[i]));
    }
    let k_new = &state.x.coefs * s_coord;
    let v = FieldBundle::new(state.v.space.clone(), v_coefs)?;
    let out = from_kv(&state.x.space, &k_new, v, m, state.weight)?;
    let report = TruncationReport {
        rank_before,
        rank_after: out.rank(),
        discarded,
        singular_values: sigma,
        capped,
    };
    Ok((out, report))
}

/// Appends `extra` padding directions to V with zero coefficients.
pub fn pad_velocity(state: &LowRankState, extra: usize) -> Result<LowRankState> {
    let r = state.rank();
    let sv = &state.v.space;
    let mut cols = DMatrix::zeros(sv.n_dofs(), r + extra);
    cols.columns_mut(0, r).copy_from(&state.v.coefs);
    let mut pad = LegendreModes::new(sv, state.weight);
    let out = orthonormalize(&cols, mass_of(sv, state.weight), r, Exhausted::Pad, &mut pad)?;
    let mut s = DMatrix::zeros(state.s.nrows(), r + extra);
    s.columns_mut(0, r).copy_from(&state.s);
    let v = FieldBundle::new(sv.clone(), out.q)?;
    let k = &state.x.coefs * s;
    from_kv(&state.x.space, &k, v, state.m, state.weight)
}

/// Augmented bases and overlap matrices of the unconventional integrator.
#[derive(Debug, Clone)]
pub struct Augmented {
    pub x: FieldBundle,
    pub v: FieldBundle,
    /// `M = X̃ᵀ X`.
    pub m_mat: DMatrix<f64>,
    /// `N = Ṽᵀ W V`.
    pub n_mat: DMatrix<f64>,
}

pub fn augment_bases(
    x_old: &FieldBundle,
    k_new: &DMatrix<f64>,
    v_old: &FieldBundle,
    l_new: &DMatrix<f64>,
    m: usize,
    weight: Weight,
) -> Result<Augmented> {
    let r = x_old.len();
    if k_new.ncols() != r || v_old.len() != r || l_new.ncols() + m != r {
        return Err(Error::DimensionMismatch(format!(
            "augmenting rank {r}: K has {}, V has {}, L has {} components (m={m})",
            k_new.ncols(),
            v_old.len(),
            l_new.ncols()
        )));
    }
    if k_new.nrows() != x_old.coefs.nrows() || l_new.nrows() != v_old.coefs.nrows() {
        return Err(Error::DimensionMismatch("augmentation inputs live on different spaces".into()));
    }
    let sx = &x_old.space;
    let sv = &v_old.space;
    let mut xs = DMatrix::zeros(sx.n_dofs(), 2 * r);
    xs.columns_mut(0, r).copy_from(&x_old.coefs);
    xs.columns_mut(r, r).copy_from(k_new);
    let xt = orthonormalize(&xs, None, r, Exhausted::Pad, &mut LegendreModes::new(sx, Weight::Unweighted))?;
    let mut vs = DMatrix::zeros(sv.n_dofs(), 2 * r - m);
    vs.columns_mut(0, r).copy_from(&v_old.coefs);
    vs.columns_mut(r, r - m).copy_from(l_new);
    let vt = orthonormalize(&vs, mass_of(sv, weight), r, Exhausted::Pad, &mut LegendreModes::new(sv, weight))?;
    let m_mat = xt.q.transpose() * &x_old.coefs;
    let n_mat = sv.gram(&vt.q, &v_old.coefs, weight);
    Ok(Augmented {
        x: FieldBundle::new(sx.clone(), xt.q)?,
        v: FieldBundle::new(sv.clone(), vt.q)?,
        m_mat,
        n_mat,
    })
}

type Factor = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// One term `g(x) h(v)` of a separable initial condition. `h` includes ω.
#[derive(Clone)]
pub struct SeparableTerm {
    pub g: Factor,
    pub h: Factor,
}

impl SeparableTerm {
    pub fn new(
        g: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        h: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { g: Arc::new(g), h: Arc::new(h) }
    }
}

impl std::fmt::Debug for SeparableTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SeparableTerm")
    }
}

/// Projects `Σ g_k h_k` to a low-rank state of natural rank (at least
/// `m + 1`, and at least `min_rank` if given).
pub fn init_state(
    terms: &[SeparableTerm],
    space_x: &Arc<DgSpace>,
    space_v: &Arc<DgSpace>,
    m: usize,
    weight: Weight,
    min_rank: Option<usize>,
) -> Result<LowRankState> {
    if terms.is_empty() {
        return Err(Error::NonSeparable("initial condition has no separable terms".into()));
    }
    let u = fixed_basis(space_v, weight, m)?;
    let n = terms.len();
    let g = DMatrix::from_columns(
        &terms.iter().map(|t| space_x.project(&*t.g, Weight::Unweighted)).collect::<Vec<_>>(),
    );
    let mut vin = DMatrix::zeros(space_v.n_dofs(), m + n);
    vin.columns_mut(0, m).copy_from(&u);
    for (k, t) in terms.iter().enumerate() {
        let hhat = space_v.project(&*t.h, Weight::Unweighted);
        let h = match weight {
            Weight::Unweighted => hhat,
            Weight::Gaussian => DVector::from_vec(space_v.gaussian_mass().1.apply_vec(hhat.as_slice())),
        };
        vin.set_column(m + k, &h);
    }
    let mut pad = LegendreModes::new(space_v, weight);
    let vq = orthonormalize(&vin, mass_of(space_v, weight), m, Exhausted::Drop, &mut pad)?;
    let k = &g * vq.r.columns(m, n).transpose();
    let v = FieldBundle::new(space_v.clone(), vq.q)?;
    let state = from_kv(space_x, &k, v, m, weight)?;
    let target = min_rank.unwrap_or(0).max(m + 1);
    if state.rank() < target {
        return pad_velocity(&state, target - state.rank());
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::PeriodicMesh;
    use std::f64::consts::PI;

    fn spaces() -> (Arc<DgSpace>, Arc<DgSpace>) {
        let mx = Arc::new(PeriodicMesh::build_uniform(1, &[(0.0, 4.0 * PI)], &[8]).unwrap());
        let mv = Arc::new(PeriodicMesh::build_uniform(1, &[(-6.0, 6.0)], &[16]).unwrap());
        (Arc::new(DgSpace::new(mx, 2)), Arc::new(DgSpace::new(mv, 2)))
    }

    fn landau_terms() -> Vec<SeparableTerm> {
        let c = 1.0 / (2.0 * PI).sqrt();
        vec![
            SeparableTerm::new(|_| 1.0, move |v| c * (-0.5 * v[0] * v[0]).exp()),
            SeparableTerm::new(|x| 0.01 * (0.5 * x[0]).cos(), move |v| c * (-0.5 * v[0] * v[0]).exp()),
        ]
    }

    #[test]
    fn fixed_basis_is_orthonormal_and_spans_moments() {
        let (_, sv) = spaces();
        let u = fixed_basis(&sv, Weight::Gaussian, 3).unwrap();
        let g = sv.gram(&u, &u, Weight::Gaussian);
        assert!((g - DMatrix::identity(3, 3)).amax() < 1e-12);
        let one = sv.project(|_| 1.0, Weight::Gaussian);
        let c = sv.gram(&u, &DMatrix::from_columns(&[one.clone()]), Weight::Gaussian);
        let back = &u * c;
        assert!((back.column(0) - one).amax() < 1e-12);
        assert!(fixed_basis(&sv, Weight::Gaussian, 4).is_err());
    }

    #[test]
    fn landau_initial_state_has_rank_three_with_two_fixed() {
        let (sx, sv) = spaces();
        let st = init_state(&landau_terms(), &sx, &sv, 2, Weight::Gaussian, None).unwrap();
        assert_eq!(st.rank(), 3);
        let u = fixed_basis(&sv, Weight::Gaussian, 2).unwrap();
        assert!(st.invariant_defect(&u) < 1e-12);
        assert_eq!(st.fixed(), u);
        let x = 1.3;
        let v = 0.4;
        let exact = (1.0 + 0.01 * (0.5 * x as f64).cos()) * (-0.5 * v * v as f64).exp() / (2.0 * PI).sqrt();
        let got = st.eval([x, 0.0], [v, 0.0]);
        assert!((got - exact).abs() < 1e-4 * exact);
        let free = init_state(&landau_terms(), &sx, &sv, 0, Weight::Gaussian, None).unwrap();
        assert_eq!(free.rank(), 1);
    }

    #[test]
    fn block_qr_structure_and_invariance() {
        let (sx, sv) = spaces();
        let st = init_state(&landau_terms(), &sx, &sv, 2, Weight::Gaussian, Some(5)).unwrap();
        assert_eq!(st.rank(), 5);
        let mut s = st.clone();
        s.s = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let b = s.to_block_qr().unwrap();
        for a in 0..2 {
            for q in 2..5 {
                assert_eq!(b.s[(a, q)], 0.0);
            }
        }
        assert!(b.distance(&s) <= 1e-11 * s.norm());
    }

    #[test]
    fn truncation_drops_tiny_singular_value() {
        let (sx, sv) = spaces();
        let st = init_state(&landau_terms(), &sx, &sv, 1, Weight::Gaussian, Some(3)).unwrap();
        let mut s = st.clone();
        s.s = DMatrix::zeros(3, 3);
        s.s[(0, 0)] = 0.5;
        s.s[(1, 1)] = 1.0;
        s.s[(2, 2)] = 1e-9;
        let (t, rep) = truncate(&s, Truncation::Tolerance { epsilon: 1e-7 }, None).unwrap();
        assert_eq!(t.rank(), 2);
        assert!((rep.discarded - 1e-9).abs() < 1e-20);
        let one = DMatrix::from_columns(&[sv.project(|_| 1.0, Weight::Gaussian)]);
        let mom = |st: &LowRankState| st.k() * sv.gram(&st.v.coefs, &one, Weight::Gaussian);
        assert!((mom(&t) - mom(&s)).amax() < 1e-12);
        assert!(truncate(&s, Truncation::Tolerance { epsilon: -1.0 }, None).is_err());
        assert!(truncate(&s, Truncation::FixedRank { rank: 0 }, None).is_err());
    }

    #[test]
    fn augmentation_represents_old_state() {
        let (sx, sv) = spaces();
        let st = init_state(&landau_terms(), &sx, &sv, 2, Weight::Gaussian, Some(4)).unwrap();
        let k = st.k() * 2.0;
        let l = st.free_v();
        let aug = augment_bases(&st.x, &k, &st.v, &l, 2, Weight::Gaussian).unwrap();
        assert_eq!(aug.x.len(), 8);
        assert_eq!(aug.v.len(), 6);
        assert!((aug.m_mat.transpose() * &aug.m_mat - DMatrix::identity(4, 4)).amax() < 1e-12);
        let st2 = LowRankState::new(aug.x.clone(), &aug.m_mat * &st.s * aug.n_mat.transpose(), aug.v.clone(), 2, Weight::Gaussian)
            .unwrap();
        assert!(st2.distance(&st) <= 1e-11 * st.norm());
    }
}
