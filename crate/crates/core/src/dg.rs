//! Discontinuous Galerkin spaces on periodic Cartesian meshes.
//!
//! Each element carries an orthonormal tensor Legendre basis, so the
//! unweighted mass matrix is the identity. Every integral, weighted or not, is
//! evaluated with the same tensor Gauss rule of `n_quad` points per axis.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockDiag, BlockSparse};
use crate::mesh::{Face, PeriodicMesh};
use crate::quadrature::{orthonormal_legendre, GaussLegendre};

/// Velocity weight ω carried by the low-rank representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Unweighted,
    /// ω(v) = exp(-|v|²/2)
    Gaussian,
}

impl Weight {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            Weight::Unweighted => 1.0,
            Weight::Gaussian => (-0.5 * v.iter().map(|x| x * x).sum::<f64>()).exp(),
        }
    }

    /// Gradient component ∂ω/∂v_s.
    pub fn derivative(&self, v: &[f64], s: usize) -> f64 {
        match self {
            Weight::Unweighted => 0.0,
            Weight::Gaussian => -v[s] * self.eval(v),
        }
    }
}

/// Quadrature point on an element: physical position, physical weight.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub x: [f64; 2],
    pub w: f64,
}

#[derive(Debug)]
pub struct DgSpace {
    mesh: Arc<PeriodicMesh>,
    degree: usize,
    n_quad: usize,
    n_local: usize,
    rule: GaussLegendre,
    qp_ref: Vec<[f64; 2]>,
    qw_ref: Vec<f64>,
    basis: Vec<f64>,
    dbasis: [Vec<f64>; 2],
    gaussian_mass: OnceLock<(BlockDiag, BlockDiag)>,
    derivative: OnceLock<Vec<BlockSparse>>,
    jump: OnceLock<Vec<BlockSparse>>,
}

impl DgSpace {
    pub fn new(mesh: Arc<PeriodicMesh>, degree: usize) -> Self {
        Self::with_quadrature(mesh, degree, degree + 3).expect("default rule is valid")
    }

    pub fn with_quadrature(mesh: Arc<PeriodicMesh>, degree: usize, n_quad: usize) -> Result<Self> {
        if n_quad < degree + 2 {
            return Err(Error::InvalidArgument(format!(
                "quadrature with {n_quad} points is too coarse for degree {degree}"
            )));
        }
        let dim = mesh.dim();
        let rule = GaussLegendre::new(n_quad);
        let n_local = (degree + 1).pow(dim as u32);
        let mut qp_ref = Vec::new();
        let mut qw_ref = Vec::new();
        let ny = if dim == 2 { n_quad } else { 1 };
        for b in 0..ny {
            for a in 0..n_quad {
                let (y, wy) = if dim == 2 { (rule.nodes[b], rule.weights[b]) } else { (0.0, 1.0) };
                qp_ref.push([rule.nodes[a], y]);
                qw_ref.push(rule.weights[a] * wy);
            }
        }
        let mut space = Self {
            mesh,
            degree,
            n_quad,
            n_local,
            rule,
            qp_ref,
            qw_ref,
            basis: Vec::new(),
            dbasis: [Vec::new(), Vec::new()],
            gaussian_mass: OnceLock::new(),
            derivative: OnceLock::new(),
            jump: OnceLock::new(),
        };
        let mut basis = Vec::with_capacity(space.qp_ref.len() * n_local);
        let mut d0 = Vec::with_capacity(basis.capacity());
        let mut d1 = Vec::with_capacity(basis.capacity());
        for xi in &space.qp_ref {
            let (v, g) = space.ref_basis(*xi);
            basis.extend_from_slice(&v);
            d0.extend_from_slice(&g[0]);
            d1.extend_from_slice(&g[1]);
        }
        space.basis = basis;
        space.dbasis = [d0, d1];
        Ok(space)
    }

    /// Same degree and rule on another mesh.
    pub fn on_mesh(&self, mesh: Arc<PeriodicMesh>) -> Self {
        Self::with_quadrature(mesh, self.degree, self.n_quad).expect("rule already validated")
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_quad(&self) -> usize {
        self.n_quad
    }

    pub fn n_local(&self) -> usize {
        self.n_local
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_leaves()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_local * self.mesh.n_leaves()
    }

    pub fn n_qp(&self) -> usize {
        self.qp_ref.len()
    }

    /// Volume quadrature points on the reference element.
    pub fn reference_points(&self) -> &[[f64; 2]] {
        &self.qp_ref
    }

    /// `(a, b)` Legendre degrees of local basis function `l`.
    pub fn local_degrees(&self, l: usize) -> (usize, usize) {
        let n = self.degree + 1;
        if self.dim() == 1 {
            (l, 0)
        } else {
            (l % n, l / n)
        }
    }

    /// Same geometry and leaf structure.
    pub fn same_mesh(&self, other: &DgSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    /// Reference basis values and gradients at `xi`.
    pub fn ref_basis(&self, xi: [f64; 2]) -> (Vec<f64>, [Vec<f64>; 2]) {
        let n = self.degree + 1;
        let px: Vec<(f64, f64)> = (0..n).map(|a| orthonormal_legendre(a, xi[0])).collect();
        if self.dim() == 1 {
            let v = px.iter().map(|p| p.0).collect();
            let d = px.iter().map(|p| p.1).collect();
            return (v, [d, vec![0.0; n]]);
        }
        let py: Vec<(f64, f64)> = (0..n).map(|b| orthonormal_legendre(b, xi[1])).collect();
        let mut v = Vec::with_capacity(n * n);
        let mut dx = Vec::with_capacity(n * n);
        let mut dy = Vec::with_capacity(n * n);
        for b in 0..n {
            for a in 0..n {
                v.push(px[a].0 * py[b].0);
                dx.push(px[a].1 * py[b].0);
                dy.push(px[a].0 * py[b].1);
            }
        }
        (v, [dx, dy])
    }

    /// Factor taking the reference basis to the physically orthonormal one.
    pub fn scale(&self, elem: usize) -> f64 {
        let e = &self.mesh.leaves()[elem];
        ((1u32 << self.dim()) as f64 / e.measure(self.dim())).sqrt()
    }

    pub fn quad_points(&self, elem: usize) -> Vec<QuadPoint> {
        let e = &self.mesh.leaves()[elem];
        let jac = e.measure(self.dim()) / (1u32 << self.dim()) as f64;
        self.qp_ref
            .iter()
            .zip(&self.qw_ref)
            .map(|(xi, w)| QuadPoint {
                x: e.from_reference(*xi),
                w: w * jac,
            })
            .collect()
    }

    fn basis_at(&self, q: usize) -> &[f64] {
        &self.basis[q * self.n_local..(q + 1) * self.n_local]
    }

    /// Point evaluation of a coefficient vector.
    pub fn eval(&self, coefs: &[f64], x: [f64; 2]) -> f64 {
        let elem = self.mesh.locate(x);
        let e = &self.mesh.leaves()[elem];
        let mut p = x;
        for a in 0..self.dim() {
            let len = self.mesh.hi()[a] - self.mesh.lo()[a];
            p[a] = self.mesh.lo()[a] + (x[a] - self.mesh.lo()[a]).rem_euclid(len);
        }
        let xi = e.to_reference(p);
        let (v, _) = self.ref_basis(xi);
        let c = &coefs[elem * self.n_local..(elem + 1) * self.n_local];
        self.scale(elem) * v.iter().zip(c).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Values at every volume quadrature point, element-major.
    pub fn values_at_quadrature(&self, coefs: &[f64]) -> Vec<f64> {
        let nq = self.n_qp();
        let nl = self.n_local;
        let mut out = vec![0.0; self.n_elements() * nq];
        out.par_chunks_mut(nq).enumerate().for_each(|(e, vals)| {
            let c = &coefs[e * nl..(e + 1) * nl];
            let s = self.scale(e);
            for (q, val) in vals.iter_mut().enumerate() {
                *val = s * self.basis_at(q).iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            }
        });
        out
    }

    /// Elementwise derivative along `axis` at every volume quadrature point.
    pub fn derivative_at_quadrature(&self, coefs: &[f64], axis: usize) -> Vec<f64> {
        let nq = self.n_qp();
        let nl = self.n_local;
        let mut out = vec![0.0; self.n_elements() * nq];
        out.par_chunks_mut(nq).enumerate().for_each(|(e, vals)| {
            let c = &coefs[e * nl..(e + 1) * nl];
            let s = self.scale(e) * 2.0 / self.mesh.leaves()[e].size[axis];
            for (q, val) in vals.iter_mut().enumerate() {
                let d = &self.dbasis[axis][q * nl..(q + 1) * nl];
                *val = s * d.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            }
        });
        out
    }

    /// Load vector `(g ω, φ_l)` for `g` given at the quadrature points.
    pub fn load_values(&self, values: &[f64], weight: Weight) -> DVector<f64> {
        let nl = self.n_local;
        let nq = self.n_qp();
        assert_eq!(values.len(), nq * self.n_elements());
        let mut out = vec![0.0; self.n_dofs()];
        out.par_chunks_mut(nl).enumerate().for_each(|(e, c)| {
            let inv_scale = 1.0 / self.scale(e);
            let elem = &self.mesh.leaves()[e];
            for (q, (xi, w)) in self.qp_ref.iter().zip(&self.qw_ref).enumerate() {
                let x = elem.from_reference(*xi);
                let val = values[e * nq + q] * weight.eval(&x[..self.dim()]) * w * inv_scale;
                for (cl, b) in c.iter_mut().zip(self.basis_at(q)) {
                    *cl += val * b;
                }
            }
        });
        DVector::from_vec(out)
    }

    /// Values of a field of this space at the quadrature points of `target`.
    pub fn values_on(&self, coefs: &[f64], target: &DgSpace) -> Result<Vec<f64>> {
        if !self.same_mesh(target) {
            return Err(Error::SpaceMismatch("fields live on different meshes".into()));
        }
        let nq = target.n_qp();
        let nl = self.n_local;
        let table: Vec<Vec<f64>> = target.qp_ref.iter().map(|xi| self.ref_basis(*xi).0).collect();
        let mut out = vec![0.0; self.n_elements() * nq];
        out.par_chunks_mut(nq).enumerate().for_each(|(e, vals)| {
            let c = &coefs[e * nl..(e + 1) * nl];
            let s = self.scale(e);
            for (q, val) in vals.iter_mut().enumerate() {
                *val = s * table[q].iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            }
        });
        Ok(out)
    }

    /// Weighted L2-best approximation of `f` in this space.
    pub fn project<F>(&self, f: F, weight: Weight) -> DVector<f64>
    where
        F: Fn([f64; 2]) -> f64 + Sync,
    {
        let load = self.load(&f, weight);
        match weight {
            Weight::Unweighted => load,
            Weight::Gaussian => {
                let (_, inv) = self.gaussian_mass();
                DVector::from_vec(inv.apply_vec(load.as_slice()))
            }
        }
    }

    /// Load vector `(f ω, φ_l)` with the quadrature rule.
    pub fn load<F>(&self, f: &F, weight: Weight) -> DVector<f64>
    where
        F: Fn([f64; 2]) -> f64 + Sync,
    {
        let nl = self.n_local;
        let mut out = vec![0.0; self.n_dofs()];
        out.par_chunks_mut(nl).enumerate().for_each(|(e, c)| {
            let inv_scale = 1.0 / self.scale(e);
            let elem = &self.mesh.leaves()[e];
            for (q, (xi, w)) in self.qp_ref.iter().zip(&self.qw_ref).enumerate() {
                let x = elem.from_reference(*xi);
                let val = f(x) * weight.eval(&x[..self.dim()]) * w * inv_scale;
                for (cl, b) in c.iter_mut().zip(self.basis_at(q)) {
                    *cl += val * b;
                }
            }
        });
        DVector::from_vec(out)
    }

    /// Element mass matrices for `g ω` given as values at quadrature points.
    pub fn multiplication_matrix(&self, values: &[f64], weight: Weight) -> BlockDiag {
        let nl = self.n_local;
        let nq = self.n_qp();
        assert_eq!(values.len(), nq * self.n_elements());
        let blocks = (0..self.n_elements())
            .into_par_iter()
            .map(|e| {
                let elem = &self.mesh.leaves()[e];
                let mut b = vec![0.0; nl * nl];
                for q in 0..nq {
                    let x = elem.from_reference(self.qp_ref[q]);
                    let wq = self.qw_ref[q] * values[e * nq + q] * weight.eval(&x[..self.dim()]);
                    if wq == 0.0 {
                        continue;
                    }
                    let phi = self.basis_at(q);
                    for k in 0..nl {
                        let a = wq * phi[k];
                        for l in 0..nl {
                            b[k * nl + l] += a * phi[l];
                        }
                    }
                }
                b
            })
            .collect();
        BlockDiag { block_size: nl, blocks }
    }

    /// Values of a closed-form function at all quadrature points.
    pub fn sample<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn([f64; 2]) -> f64 + Sync,
    {
        let nq = self.n_qp();
        let mut out = vec![0.0; self.n_elements() * nq];
        out.par_chunks_mut(nq).enumerate().for_each(|(e, vals)| {
            let elem = &self.mesh.leaves()[e];
            for (v, xi) in vals.iter_mut().zip(&self.qp_ref) {
                *v = f(elem.from_reference(*xi));
            }
        });
        out
    }

    /// Weighted mass matrix `W` and its inverse.
    pub fn gaussian_mass(&self) -> &(BlockDiag, BlockDiag) {
        self.gaussian_mass.get_or_init(|| {
            let ones = vec![1.0; self.n_elements() * self.n_qp()];
            let w = self.multiplication_matrix(&ones, Weight::Gaussian);
            let inv = w
                .inverse()
                .unwrap_or_else(|e| panic!("{}", Error::SingularLocalMatrix { element: e }));
            (w, inv)
        })
    }

    /// `M x` for the mass matrix of `weight`.
    pub fn apply_mass(&self, weight: Weight, x: &DMatrix<f64>) -> DMatrix<f64> {
        match weight {
            Weight::Unweighted => x.clone(),
            Weight::Gaussian => self.gaussian_mass().0.apply(x),
        }
    }

    pub fn apply_inverse_mass(&self, weight: Weight, x: &DMatrix<f64>) -> DMatrix<f64> {
        match weight {
            Weight::Unweighted => x.clone(),
            Weight::Gaussian => self.gaussian_mass().1.apply(x),
        }
    }

    /// P_ω: coefficients of the L2 projection of ωL.
    pub fn weighted_project(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        self.gaussian_mass().0.apply(l)
    }

    /// Inverse of P_ω, the substitute for division by ω.
    pub fn inverse_weighted_project(&self, lhat: &DMatrix<f64>) -> DMatrix<f64> {
        self.gaussian_mass().1.apply(lhat)
    }

    pub fn inner(&self, u: &[f64], w: &[f64], weight: Weight) -> f64 {
        match weight {
            Weight::Unweighted => u.iter().zip(w).map(|(a, b)| a * b).sum(),
            Weight::Gaussian => {
                let mw = self.gaussian_mass().0.apply_vec(w);
                u.iter().zip(&mw).map(|(a, b)| a * b).sum()
            }
        }
    }

    /// Gram matrix `aᵀ M b` in the given inner product.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, weight: Weight) -> DMatrix<f64> {
        a.transpose() * self.apply_mass(weight, b)
    }

    /// Face quadrature: reference points on the minus and plus sides and weights.
    pub fn face_points(&self, face: &Face) -> Vec<([f64; 2], [f64; 2], f64)> {
        let s = face.axis;
        if self.dim() == 1 {
            return vec![([1.0, 0.0], [-1.0, 0.0], 1.0)];
        }
        let t = 1 - s;
        let map = |r: (f64, f64), x: f64| r.0 + 0.5 * (r.1 - r.0) * (x + 1.0);
        self.rule
            .nodes
            .iter()
            .zip(&self.rule.weights)
            .map(|(&x, &w)| {
                let mut xm = [0.0; 2];
                let mut xp = [0.0; 2];
                xm[s] = 1.0;
                xp[s] = -1.0;
                xm[t] = map(face.minus_range, x);
                xp[t] = map(face.plus_range, x);
                (xm, xp, 0.5 * w * face.measure)
            })
            .collect()
    }

    /// Discrete derivative matrix `D_s` with `(D u)_k = form(u, φ_k)`.
    pub fn derivative_matrix(&self, axis: usize) -> &BlockSparse {
        &self.derivative.get_or_init(|| self.assemble_face_operators().0)[axis]
    }

    /// Jump matrix `J_s` with `(J u)_k = Σ_e ∫ [u][φ_k]` over faces normal to `axis`.
    pub fn jump_matrix(&self, axis: usize) -> &BlockSparse {
        &self.jump.get_or_init(|| self.assemble_face_operators().1)[axis]
    }

    fn assemble_face_operators(&self) -> (Vec<BlockSparse>, Vec<BlockSparse>) {
        let dim = self.dim();
        let nl = self.n_local;
        let ne = self.n_elements();
        let mut ds = Vec::with_capacity(dim);
        let mut js = Vec::with_capacity(dim);
        for s in 0..dim {
            let mut d = BlockSparse::zeros(ne, nl);
            let mut j = BlockSparse::zeros(ne, nl);
            let volume: Vec<Vec<f64>> = (0..ne)
                .into_par_iter()
                .map(|e| {
                    let h = self.mesh.leaves()[e].size[s];
                    let mut b = vec![0.0; nl * nl];
                    for q in 0..self.n_qp() {
                        let w = self.qw_ref[q] * 2.0 / h;
                        let phi = self.basis_at(q);
                        let dphi = &self.dbasis[s][q * nl..(q + 1) * nl];
                        for k in 0..nl {
                            for l in 0..nl {
                                b[k * nl + l] += w * dphi[l] * phi[k];
                            }
                        }
                    }
                    b
                })
                .collect();
            for (e, b) in volume.iter().enumerate() {
                d.add_block(e, e, b);
            }
            for face in self.mesh.faces().iter().filter(|f| f.axis == s) {
                let (mm, mp, pm, pp) = self.face_blocks(face);
                let half = |b: &[f64], sign: f64| b.iter().map(|x| 0.5 * sign * x).collect::<Vec<_>>();
                // −∫ [u]{ψ}: rows are test functions, columns trial functions
                d.add_block(face.minus, face.minus, &half(&mm, -1.0));
                d.add_block(face.minus, face.plus, &half(&mp, 1.0));
                d.add_block(face.plus, face.minus, &half(&pm, -1.0));
                d.add_block(face.plus, face.plus, &half(&pp, 1.0));
                let neg = |b: &[f64]| b.iter().map(|x| -x).collect::<Vec<_>>();
                j.add_block(face.minus, face.minus, &mm);
                j.add_block(face.minus, face.plus, &neg(&mp));
                j.add_block(face.plus, face.minus, &neg(&pm));
                j.add_block(face.plus, face.plus, &pp);
            }
            d.finalize();
            j.finalize();
            ds.push(d);
            js.push(j);
        }
        (ds, js)
    }

    /// Face trace products `∫ φ_l^σ φ_k^σ'` for (test side, trial side) pairs:
    /// (−,−), (−,+), (+,−), (+,+), each row-major `[k * nl + l]`.
    fn face_blocks(&self, face: &Face) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let nl = self.n_local;
        let sm = self.scale(face.minus);
        let sp = self.scale(face.plus);
        let mut mm = vec![0.0; nl * nl];
        let mut mp = vec![0.0; nl * nl];
        let mut pm = vec![0.0; nl * nl];
        let mut pp = vec![0.0; nl * nl];
        for (xm, xp, w) in self.face_points(face) {
            let a: Vec<f64> = self.ref_basis(xm).0.iter().map(|v| v * sm).collect();
            let b: Vec<f64> = self.ref_basis(xp).0.iter().map(|v| v * sp).collect();
            for k in 0..nl {
                for l in 0..nl {
                    mm[k * nl + l] += w * a[k] * a[l];
                    mp[k * nl + l] += w * a[k] * b[l];
                    pm[k * nl + l] += w * b[k] * a[l];
                    pp[k * nl + l] += w * b[k] * b[l];
                }
            }
        }
        (mm, mp, pm, pp)
    }

    /// Trace values of field `u` on the minus and plus sides of a face.
    pub fn face_traces(&self, u: &[f64], face: &Face) -> Vec<(f64, f64, f64)> {
        let nl = self.n_local;
        let cm = &u[face.minus * nl..(face.minus + 1) * nl];
        let cp = &u[face.plus * nl..(face.plus + 1) * nl];
        let sm = self.scale(face.minus);
        let sp = self.scale(face.plus);
        self.face_points(face)
            .into_iter()
            .map(|(xm, xp, w)| {
                let um = sm * self.ref_basis(xm).0.iter().zip(cm).map(|(a, b)| a * b).sum::<f64>();
                let up = sp * self.ref_basis(xp).0.iter().zip(cp).map(|(a, b)| a * b).sum::<f64>();
                (um, up, w)
            })
            .collect()
    }

    /// The discrete derivative form evaluated directly from its definition.
    pub fn discrete_derivative_form(&self, u: &[f64], w: &[f64], axis: usize) -> f64 {
        let nl = self.n_local;
        let mut total = 0.0;
        for e in 0..self.n_elements() {
            let h = self.mesh.leaves()[e].size[axis];
            let cu = &u[e * nl..(e + 1) * nl];
            let cw = &w[e * nl..(e + 1) * nl];
            for q in 0..self.n_qp() {
                let du: f64 = self.dbasis[axis][q * nl..(q + 1) * nl].iter().zip(cu).map(|(a, b)| a * b).sum();
                let wv: f64 = self.basis_at(q).iter().zip(cw).map(|(a, b)| a * b).sum();
                total += self.qw_ref[q] * 2.0 / h * du * wv;
            }
        }
        for face in self.mesh.faces().iter().filter(|f| f.axis == axis) {
            let tu = self.face_traces(u, face);
            let tw = self.face_traces(w, face);
            for ((um, up, wq), (wm, wp, _)) in tu.into_iter().zip(tw) {
                total -= wq * (um - up) * 0.5 * (wm + wp);
            }
        }
        total
    }

    pub fn element_block<'a>(&self, coefs: &'a [f64], elem: usize) -> &'a [f64] {
        &coefs[elem * self.n_local..(elem + 1) * self.n_local]
    }
}

/// A single DG function.
#[derive(Debug, Clone)]
pub struct DgField {
    pub space: Arc<DgSpace>,
    pub coefs: DVector<f64>,
}

impl DgField {
    pub fn zeros(space: Arc<DgSpace>) -> Self {
        let n = space.n_dofs();
        Self { space, coefs: DVector::zeros(n) }
    }

    pub fn project<F>(space: Arc<DgSpace>, f: F, weight: Weight) -> Self
    where
        F: Fn([f64; 2]) -> f64 + Sync,
    {
        let coefs = space.project(f, weight);
        Self { space, coefs }
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.space.eval(self.coefs.as_slice(), x)
    }
}

/// `r` DG functions over one shared space, stored as the columns of `coefs`.
#[derive(Debug, Clone)]
pub struct FieldBundle {
    pub space: Arc<DgSpace>,
    pub coefs: DMatrix<f64>,
}

impl FieldBundle {
    pub fn new(space: Arc<DgSpace>, coefs: DMatrix<f64>) -> Result<Self> {
        if coefs.nrows() != space.n_dofs() {
            return Err(Error::DimensionMismatch(format!(
                "bundle has {} rows, space has {} dofs",
                coefs.nrows(),
                space.n_dofs()
            )));
        }
        Ok(Self { space, coefs })
    }

    pub fn from_fields(fields: &[DgField]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty bundle".into()))?;
        for f in fields {
            if !Arc::ptr_eq(&f.space, &first.space) {
                return Err(Error::SpaceMismatch("bundle components on different spaces".into()));
            }
        }
        let cols: Vec<DVector<f64>> = fields.iter().map(|f| f.coefs.clone()).collect();
        Ok(Self {
            space: first.space.clone(),
            coefs: DMatrix::from_columns(&cols),
        })
    }

    pub fn len(&self) -> usize {
        self.coefs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.coefs.ncols() == 0
    }

    pub fn component(&self, i: usize) -> DgField {
        DgField {
            space: self.space.clone(),
            coefs: self.coefs.column(i).into_owned(),
        }
    }
}

/// `|A|` for a symmetric matrix from its spectral decomposition.
pub fn abs_symmetric(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 {
        return Ok(a.clone());
    }
    let sym = 0.5 * (a + a.transpose());
    let eig = nalgebra::SymmetricEigen::try_new(sym, 1e-15, 10_000).ok_or(Error::Eigendecomposition)?;
    let q = &eig.eigenvectors;
    let lam = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::abs));
    Ok(q * lam * q.transpose())
}

/// Numerical flux `A{U} + (1-α)/2 |A| [U]`; the central flux skips the eigensolve.
pub fn numerical_flux(
    a_e: &DMatrix<f64>,
    u_minus: &DVector<f64>,
    u_plus: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>> {
    let avg = 0.5 * (u_minus + u_plus);
    let central = a_e * avg;
    if alpha == 1.0 {
        return Ok(central);
    }
    let jump = u_minus - u_plus;
    Ok(central + 0.5 * (1.0 - alpha) * abs_symmetric(a_e)? * jump)
}
