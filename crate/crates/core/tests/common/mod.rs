#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlasov_dlr::dg::{DgSpace, FieldBundle, Weight};
use vlasov_dlr::lowrank::{fixed_basis, from_kv, init_state, mass_of, LowRankState, SeparableTerm};
use vlasov_dlr::mesh::PeriodicMesh;
use vlasov_dlr::orth::{orthonormalize, Exhausted, UnitVectors};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(dim: usize, extents: &[(f64, f64)], cells: &[usize], p: usize) -> Arc<DgSpace> {
    let mesh = PeriodicMesh::build_uniform(dim, extents, cells).unwrap();
    Arc::new(DgSpace::new(Arc::new(mesh), p))
}

pub fn space_1d(n: usize, p: usize) -> Arc<DgSpace> {
    uniform(1, &[(0.0, 4.0 * PI)], &[n], p)
}

pub fn velocity_1d(n: usize, p: usize) -> Arc<DgSpace> {
    uniform(1, &[(-6.0, 6.0)], &[n], p)
}

/// Uniform mesh with two levels of local refinement, so that hanging faces
/// of both orientations occur.
pub fn refined(dim: usize, n: usize, p: usize) -> Arc<DgSpace> {
    let ext = vec![(0.0, 2.0 * PI); dim];
    let mesh = PeriodicMesh::build_uniform(dim, &ext, &vec![n; dim]).unwrap();
    let second = if dim == 2 { n + 1 } else { 2 };
    let mesh = mesh.refine(&[0, second]).unwrap();
    let last = mesh.n_leaves() - 1;
    let mesh = mesh.refine(&[1, last]).unwrap();
    Arc::new(DgSpace::new(Arc::new(mesh), p))
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    e
}

/// Random state in block-QR form whose velocity basis starts with `U`.
pub fn random_state(
    rng: &mut impl Rng,
    sx: &Arc<DgSpace>,
    sv: &Arc<DgSpace>,
    rank: usize,
    m: usize,
    weight: Weight,
) -> LowRankState {
    let u = fixed_basis(sv, weight, m).unwrap();
    let mut cols = random_matrix(rng, sv.n_dofs(), rank);
    // smooth-ish velocity functions keep the weighted Gram well conditioned
    for j in m..rank {
        let (a, b) = (rng.gen_range(0.2..1.5), rng.gen_range(0.0..PI));
        let g = sv.project(move |v| (a * v[0] + b).sin() + 0.3 * (a * v[1]).cos(), weight);
        cols.set_column(j, &(g + 0.05 * cols.column(j)));
    }
    cols.columns_mut(0, m).copy_from(&u);
    let v = orthonormalize(&cols, mass_of(sv, weight), m, Exhausted::Drop, &mut UnitVectors(sv.n_dofs()))
        .unwrap()
        .q;
    assert_eq!(v.ncols(), rank);
    let k = random_matrix(rng, sx.n_dofs(), rank) * 0.1;
    from_kv(sx, &k, FieldBundle::new(sv.clone(), v).unwrap(), m, weight).unwrap()
}

/// Random state whose X and V are orthonormal but S is dense and the
/// factorization is not block-QR.
pub fn random_general_state(
    rng: &mut impl Rng,
    sx: &Arc<DgSpace>,
    sv: &Arc<DgSpace>,
    rank: usize,
    m: usize,
    weight: Weight,
) -> LowRankState {
    let base = random_state(rng, sx, sv, rank, m, weight);
    let x = orthonormalize(&random_matrix(rng, sx.n_dofs(), rank), None, 0, Exhausted::Drop, &mut UnitVectors(sx.n_dofs()))
        .unwrap()
        .q;
    let s = random_matrix(rng, rank, rank) * 0.1;
    LowRankState::new(FieldBundle::new(sx.clone(), x).unwrap(), s, base.v, m, weight).unwrap()
}

pub fn landau_terms(dim: usize, amplitude: f64, k: f64) -> Vec<SeparableTerm> {
    let c = (2.0 * PI).powf(-(dim as f64) / 2.0);
    let maxwell = move |v: [f64; 2]| c * (-0.5 * v[..dim].iter().map(|x| x * x).sum::<f64>()).exp();
    vec![SeparableTerm::new(
        move |x| 1.0 + (0..dim).map(|s| amplitude * (k * x[s]).cos()).sum::<f64>(),
        maxwell,
    )]
}

pub fn landau_state(nx: usize, nv: usize, p: usize, m: usize, amplitude: f64) -> LowRankState {
    let sx = space_1d(nx, p);
    let sv = velocity_1d(nv, p);
    init_state(&landau_terms(1, amplitude, 0.5), &sx, &sv, m, Weight::Gaussian, Some(m + 2)).unwrap()
}

/// Coefficients of `form(u, φ_k)` for every basis function, assembled from
/// the definition rather than the sparse derivative matrix.
pub fn derivative_by_definition(space: &DgSpace, u: &[f64], axis: usize) -> DVector<f64> {
    let n = space.n_dofs();
    DVector::from_fn(n, |k, _| space.discrete_derivative_form(u, &unit(n, k), axis))
}

/// `-Σ_T ∫ u ∂w + Σ_e ∫ {u}[w]`, by direct quadrature.
pub fn integrated_by_parts(space: &DgSpace, u: &[f64], w: &[f64], axis: usize) -> f64 {
    let uq = space.values_at_quadrature(u);
    let dwq = space.derivative_at_quadrature(w, axis);
    let nq = space.n_qp();
    let mut total = 0.0;
    for e in 0..space.n_elements() {
        for (q, qp) in space.quad_points(e).iter().enumerate() {
            total -= qp.w * uq[e * nq + q] * dwq[e * nq + q];
        }
    }
    for face in space.mesh().faces().iter().filter(|f| f.axis == axis) {
        for ((um, up, wq), (wm, wp, _)) in space.face_traces(u, face).into_iter().zip(space.face_traces(w, face)) {
            total += wq * 0.5 * (um + up) * (wm - wp);
        }
    }
    total
}

/// `∫ f g ω` at the quadrature points for coefficient vectors `f`, `g`.
pub fn quadrature_inner(space: &DgSpace, f: &[f64], g: &[f64], weight: Weight, extra: &dyn Fn([f64; 2]) -> f64) -> f64 {
    let fq = space.values_at_quadrature(f);
    let gq = space.values_at_quadrature(g);
    let nq = space.n_qp();
    let mut total = 0.0;
    for e in 0..space.n_elements() {
        for (q, qp) in space.quad_points(e).iter().enumerate() {
            let x = qp.x;
            total += qp.w * fq[e * nq + q] * gq[e * nq + q] * weight.eval(&x[..space.dim()]) * extra(x);
        }
    }
    total
}

/// Boundary contribution `Σ_faces ∫ {g}[v_s]` of `(d̂_{v_s} g, v_s)`: only the
/// faces where the periodic velocity box wraps around contribute.
pub fn velocity_wrap_term(space: &DgSpace, g: &[f64], s: usize) -> f64 {
    let vs = space.project(move |v| v[s], Weight::Unweighted);
    let mut total = 0.0;
    for face in space.mesh().faces().iter().filter(|f| f.axis == s) {
        for ((gm, gp, w), (vm, vp, _)) in space.face_traces(g, face).into_iter().zip(space.face_traces(vs.as_slice(), face)) {
            total += w * 0.5 * (gm + gp) * (vm - vp);
        }
    }
    total
}
