//! Velocity moments and the periodic Poisson problem `-ΔΦ = 1 - ρ`, `E = -∇Φ`.
//!
//! The potential is a continuous piecewise polynomial of degree `p + 2` on
//! Gauss–Lobatto nodes. Nodes on the fine side of a hanging face interpolate
//! the coarse side.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dg::{DgField, DgSpace, Weight};
use crate::error::{Error, Result};
use crate::linalg::Csr;
use crate::lowrank::LowRankState;
use crate::mesh::PeriodicMesh;
use crate::quadrature::{gauss_lobatto_nodes, lagrange_basis, GaussLegendre};
use crate::registry::Registry;

/// Load vectors `(ω g, ψ)` for `g ∈ {1, v_s, v_s v_t}` on the velocity space.
#[derive(Debug, Clone)]
pub struct VelocityMoments {
    pub one: DVector<f64>,
    pub v: Vec<DVector<f64>>,
    pub vv: Vec<Vec<DVector<f64>>>,
    pub v_sq: DVector<f64>,
}

impl VelocityMoments {
    pub fn new(space: &DgSpace, weight: Weight) -> Self {
        let d = space.dim();
        let one = space.load(&|_| 1.0, weight);
        let v = (0..d).map(|s| space.load(&move |x: [f64; 2]| x[s], weight)).collect();
        let vv = (0..d)
            .map(|s| (0..d).map(|t| space.load(&move |x: [f64; 2]| x[s] * x[t], weight)).collect())
            .collect();
        let v_sq = space.load(&move |x: [f64; 2]| x[..d].iter().map(|a| a * a).sum(), weight);
        Self { one, v, vv, v_sq }
    }
}

#[derive(Debug, Clone)]
pub struct Moments {
    pub rho: DgField,
    pub j: Vec<DgField>,
    pub sigma: Vec<Vec<DgField>>,
}

pub fn velocity_moment(state: &LowRankState, c: &DVector<f64>) -> DgField {
    let cv = state.v.coefs.transpose() * c;
    DgField {
        space: state.x.space.clone(),
        coefs: &state.x.coefs * (&state.s * cv),
    }
}

pub fn compute_moments(state: &LowRankState, vm: &VelocityMoments) -> Moments {
    Moments {
        rho: velocity_moment(state, &vm.one),
        j: vm.v.iter().map(|c| velocity_moment(state, c)).collect(),
        sigma: vm.vv.iter().map(|row| row.iter().map(|c| velocity_moment(state, c)).collect()).collect(),
    }
}

/// `∫ u dx` for a field on a space with orthonormal local bases.
pub fn integral(field: &DgField) -> f64 {
    let sp = &field.space;
    let nl = sp.n_local();
    let d = sp.dim();
    sp.mesh()
        .leaves()
        .iter()
        .enumerate()
        .map(|(e, el)| field.coefs[e * nl] * el.measure(d).sqrt())
        .sum()
}

/// The zero-mean regularized stiffness operator `A + β w wᵀ`.
#[derive(Debug, Clone)]
pub struct RegularizedOperator {
    pub a: Csr,
    pub w: Vec<f64>,
    pub beta: f64,
}

impl RegularizedOperator {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let wx: f64 = self.w.iter().zip(x).map(|(a, b)| a * b).sum();
        let mut y = self.a.matvec(x);
        for (yi, wi) in y.iter_mut().zip(&self.w) {
            *yi += self.beta * wx * wi;
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.a
            .diagonal()
            .iter()
            .zip(&self.w)
            .map(|(d, w)| d + self.beta * w * w)
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let w = DVector::from_column_slice(&self.w);
        self.a.to_dense() + self.beta * &w * w.transpose()
    }
}

/// A linear solver bound to one operator.
pub trait PreparedSolve: Send + Sync {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>>;
}

pub trait PoissonStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn prepare(&self, op: &RegularizedOperator) -> Result<Box<dyn PreparedSolve>>;
}

/// Conjugate gradient with diagonal preconditioning.
pub struct CgJacobi {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgJacobi {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 20_000 }
    }
}

struct PreparedCg {
    op: RegularizedOperator,
    inv_diag: Vec<f64>,
    tol: f64,
    max_iter: usize,
}

impl PreparedSolve for PreparedCg {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = b.len();
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..self.max_iter {
            let ap = self.op.apply(&p);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if dot(&r, &r).sqrt() <= self.tol * bnorm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::SolverDivergence {
            iterations: self.max_iter,
            residual: dot(&r, &r).sqrt() / bnorm,
        })
    }
}

impl PoissonStrategy for CgJacobi {
    fn name(&self) -> &'static str {
        "cg_jacobi"
    }

    fn prepare(&self, op: &RegularizedOperator) -> Result<Box<dyn PreparedSolve>> {
        let inv_diag = op.diagonal().iter().map(|d| 1.0 / d).collect();
        Ok(Box::new(PreparedCg {
            op: op.clone(),
            inv_diag,
            tol: self.tol,
            max_iter: self.max_iter,
        }))
    }
}

/// Dense Cholesky factorization, computed once per mesh.
pub struct DenseCholesky;

struct PreparedCholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>);

impl PreparedSolve for PreparedCholesky {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = self.0.solve(&DVector::from_column_slice(b));
        Ok(x.iter().copied().collect())
    }
}

impl PoissonStrategy for DenseCholesky {
    fn name(&self) -> &'static str {
        "dense_cholesky"
    }

    fn prepare(&self, op: &RegularizedOperator) -> Result<Box<dyn PreparedSolve>> {
        let chol = op
            .to_dense()
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("Poisson matrix is not positive definite".into()))?;
        Ok(Box::new(PreparedCholesky(chol)))
    }
}

pub fn poisson_strategies() -> Registry<dyn PoissonStrategy> {
    Registry::<dyn PoissonStrategy>::new("Poisson solver")
        .with("dense_cholesky", || Box::new(DenseCholesky) as Box<dyn PoissonStrategy>)
        .with("cg_jacobi", || Box::new(CgJacobi::default()) as Box<dyn PoissonStrategy>)
}

/// `E = -∇Φ` as DG fields plus the nodal potential.
#[derive(Debug, Clone)]
pub struct ElectricField {
    pub components: Vec<DgField>,
    /// Potential values at the free nodes.
    pub potential: Vec<f64>,
    /// Relative residual of the linear solve.
    pub residual: f64,
}

impl ElectricField {
    pub fn zero(space_e: Arc<DgSpace>) -> Self {
        let d = space_e.dim();
        Self {
            components: (0..d).map(|_| DgField::zeros(space_e.clone())).collect(),
            potential: Vec::new(),
            residual: 0.0,
        }
    }

    /// `½ ∫ |E|²`.
    pub fn energy(&self) -> f64 {
        0.5 * self.components.iter().map(|c| c.coefs.norm_squared()).sum::<f64>()
    }

    /// Component values at the quadrature points of `target`.
    pub fn values_on(&self, target: &DgSpace) -> Result<Vec<Vec<f64>>> {
        self.components
            .iter()
            .map(|c| c.space.values_on(c.coefs.as_slice(), target))
            .collect()
    }
}

type Expansion = Vec<(usize, f64)>;

/// Continuous Galerkin discretization of the periodic Laplacian.
pub struct PoissonSolver {
    mesh: Arc<PeriodicMesh>,
    degree: usize,
    gll: Vec<f64>,
    rule: GaussLegendre,
    /// Per element, per local node: free-node expansion.
    local: Vec<Vec<Expansion>>,
    n_free: usize,
    stiffness: Csr,
    mean: Vec<f64>,
    solver: Option<Box<dyn PreparedSolve>>,
    strategy: &'static str,
    space_e: Arc<DgSpace>,
    pub compat_tol: f64,
}

impl fmt::Debug for PoissonSolver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonSolver")
            .field("degree", &self.degree)
            .field("n_free", &self.n_free)
            .field("strategy", &self.strategy)
            .finish()
    }
}

fn tensor_index(dim: usize, n: usize, a: usize, b: usize) -> usize {
    if dim == 1 {
        a
    } else {
        a + n * b
    }
}

impl PoissonSolver {
    /// Potential of degree `space_x.degree() + 2` on the mesh of `space_x`.
    pub fn new(space_x: &DgSpace, strategy: &dyn PoissonStrategy) -> Result<Self> {
        let mesh = space_x.mesh().clone();
        let dim = mesh.dim();
        let degree = space_x.degree() + 2;
        let gll = gauss_lobatto_nodes(degree);
        let n1 = degree + 1;
        let n_nodes = n1.pow(dim as u32);
        let leaves = mesh.leaves();

        let node_key = |elem: usize, l: usize| -> (i64, i64) {
            let (a, b) = if dim == 1 { (l, 0) } else { (l % n1, l / n1) };
            let xi = [gll[a], if dim == 2 { gll[b] } else { 0.0 }];
            let x = leaves[elem].from_reference(xi);
            let lo = mesh.lo();
            let hi = mesh.hi();
            let q = |s: usize| -> i64 {
                const RES: f64 = (1u64 << 36) as f64;
                let t = ((x[s] - lo[s]) / (hi[s] - lo[s])).rem_euclid(1.0);
                ((t * RES).round() as i64).rem_euclid(1i64 << 36)
            };
            (q(0), if dim == 2 { q(1) } else { 0 })
        };

        // constraints on the fine side of hanging faces
        let mut constraints: HashMap<(i64, i64), Vec<((i64, i64), f64)>> = HashMap::new();
        if dim == 2 {
            for face in mesh.faces() {
                let lm = leaves[face.minus].level();
                let lp = leaves[face.plus].level();
                if lm == lp {
                    continue;
                }
                let (fine, coarse, f_range, c_range, fine_is_minus) = if lm > lp {
                    (face.minus, face.plus, face.minus_range, face.plus_range, true)
                } else {
                    (face.plus, face.minus, face.plus_range, face.minus_range, false)
                };
                let s = face.axis;
                let f_side = if fine_is_minus { degree } else { 0 };
                let c_side = if fine_is_minus { 0 } else { degree };
                let local_on = |side: usize, t: usize| {
                    let mut ab = [0usize; 2];
                    ab[s] = side;
                    ab[1 - s] = t;
                    tensor_index(dim, n1, ab[0], ab[1])
                };
                let coarse_keys: Vec<(i64, i64)> = (0..n1).map(|t| node_key(coarse, local_on(c_side, t))).collect();
                for t in 0..n1 {
                    let key = node_key(fine, local_on(f_side, t));
                    if coarse_keys.contains(&key) || constraints.contains_key(&key) {
                        continue;
                    }
                    let frac = (gll[t] - f_range.0) / (f_range.1 - f_range.0);
                    let xc = c_range.0 + (c_range.1 - c_range.0) * frac;
                    let (w, _) = lagrange_basis(&gll, xc);
                    let masters = coarse_keys
                        .iter()
                        .zip(&w)
                        .filter(|(_, w)| w.abs() > 1e-14)
                        .map(|(k, w)| (*k, *w))
                        .collect();
                    constraints.insert(key, masters);
                }
            }
        }

        let mut free: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for e in 0..leaves.len() {
            for l in 0..n_nodes {
                let k = node_key(e, l);
                if !constraints.contains_key(&k) {
                    free.insert(k, 0);
                }
            }
        }
        for (i, v) in free.values_mut().enumerate() {
            *v = i;
        }
        let n_free = free.len();

        fn expand(
            key: (i64, i64),
            free: &BTreeMap<(i64, i64), usize>,
            constraints: &HashMap<(i64, i64), Vec<((i64, i64), f64)>>,
            depth: usize,
        ) -> Result<Expansion> {
            if let Some(&i) = free.get(&key) {
                return Ok(vec![(i, 1.0)]);
            }
            if depth > 16 {
                return Err(Error::InvalidMesh("cyclic hanging-node constraints".into()));
            }
            let mut out: BTreeMap<usize, f64> = BTreeMap::new();
            let masters = constraints
                .get(&key)
                .ok_or_else(|| Error::InvalidMesh("unresolved potential node".into()))?;
            for (mk, w) in masters {
                for (i, wi) in expand(*mk, free, constraints, depth + 1)? {
                    *out.entry(i).or_insert(0.0) += w * wi;
                }
            }
            Ok(out.into_iter().collect())
        }

        let mut local = Vec::with_capacity(leaves.len());
        for e in 0..leaves.len() {
            let mut nodes = Vec::with_capacity(n_nodes);
            for l in 0..n_nodes {
                nodes.push(expand(node_key(e, l), &free, &constraints, 0)?);
            }
            local.push(nodes);
        }

        let rule = GaussLegendre::new(degree + 2);
        let mut out = Self {
            mesh: mesh.clone(),
            degree,
            gll,
            rule,
            local,
            n_free,
            stiffness: Csr::from_triplets(0, Vec::new()),
            mean: Vec::new(),
            solver: None,
            strategy: strategy.name(),
            space_e: Arc::new(DgSpace::new(mesh, if dim == 1 { degree - 1 } else { degree })),
            compat_tol: 1e-8,
        };
        let (stiffness, mean) = out.assemble();
        let diag_avg = stiffness.diagonal().iter().sum::<f64>() / n_free as f64;
        let w_avg = mean.iter().map(|w| w * w).sum::<f64>() / n_free as f64;
        let op = RegularizedOperator {
            a: stiffness,
            w: mean,
            beta: diag_avg / w_avg,
        };
        out.solver = Some(strategy.prepare(&op)?);
        out.stiffness = op.a;
        out.mean = op.w;
        Ok(out)
    }

    pub fn strategy(&self) -> &'static str {
        self.strategy
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn mesh(&self) -> &Arc<PeriodicMesh> {
        &self.mesh
    }

    /// DG space holding the field components.
    pub fn field_space(&self) -> &Arc<DgSpace> {
        &self.space_e
    }

    /// Reference Lagrange values and gradients at `xi` for all local nodes.
    fn lagrange(&self, xi: [f64; 2]) -> (Vec<f64>, [Vec<f64>; 2]) {
        let dim = self.mesh.dim();
        let (vx, dx) = lagrange_basis(&self.gll, xi[0]);
        if dim == 1 {
            let n = vx.len();
            return (vx, [dx, vec![0.0; n]]);
        }
        let (vy, dy) = lagrange_basis(&self.gll, xi[1]);
        let n1 = self.gll.len();
        let mut v = Vec::with_capacity(n1 * n1);
        let mut gx = Vec::with_capacity(n1 * n1);
        let mut gy = Vec::with_capacity(n1 * n1);
        for b in 0..n1 {
            for a in 0..n1 {
                v.push(vx[a] * vy[b]);
                gx.push(dx[a] * vy[b]);
                gy.push(vx[a] * dy[b]);
            }
        }
        (v, [gx, gy])
    }

    fn ref_points(&self) -> Vec<([f64; 2], f64)> {
        let dim = self.mesh.dim();
        let r = &self.rule;
        let mut out = Vec::new();
        if dim == 1 {
            for (x, w) in r.nodes.iter().zip(&r.weights) {
                out.push(([*x, 0.0], *w));
            }
        } else {
            for (y, wy) in r.nodes.iter().zip(&r.weights) {
                for (x, wx) in r.nodes.iter().zip(&r.weights) {
                    out.push(([*x, *y], wx * wy));
                }
            }
        }
        out
    }

    fn assemble(&self) -> (Csr, Vec<f64>) {
        let dim = self.mesh.dim();
        let pts = self.ref_points();
        let tables: Vec<_> = pts.iter().map(|(xi, w)| (self.lagrange(*xi), *w)).collect();
        let mut trip = Vec::new();
        let mut mean = vec![0.0; self.n_free];
        for (e, elem) in self.mesh.leaves().iter().enumerate() {
            let jac = elem.measure(dim) / (1u32 << dim) as f64;
            let n = self.local[e].len();
            let mut k = vec![0.0; n * n];
            let mut m = vec![0.0; n];
            for ((v, g), w) in &tables {
                for s in 0..dim {
                    let f = (2.0 / elem.size[s]).powi(2) * w * jac;
                    for a in 0..n {
                        for b in 0..n {
                            k[a * n + b] += f * g[s][a] * g[s][b];
                        }
                    }
                }
                for a in 0..n {
                    m[a] += w * jac * v[a];
                }
            }
            for a in 0..n {
                for (ia, wa) in &self.local[e][a] {
                    mean[*ia] += wa * m[a];
                    for b in 0..n {
                        if k[a * n + b] == 0.0 {
                            continue;
                        }
                        for (ib, wb) in &self.local[e][b] {
                            trip.push((*ia, *ib, wa * wb * k[a * n + b]));
                        }
                    }
                }
            }
        }
        (Csr::from_triplets(self.n_free, trip), mean)
    }

    /// Solves `-ΔΦ = 1 - ρ` with zero mean and returns `E = -∇Φ`.
    pub fn solve(&self, rho: &DgField) -> Result<ElectricField> {
        let dim = self.mesh.dim();
        if *rho.space.mesh().as_ref() != *self.mesh {
            return Err(Error::SpaceMismatch("density lives on another mesh".into()));
        }
        let volume = self.mesh.volume();
        let defect = volume - integral(rho);
        if !defect.is_finite() {
            return Err(Error::NonFinite("density".into()));
        }
        if defect.abs() > self.compat_tol * volume {
            return Err(Error::Compatibility {
                defect,
                tolerance: self.compat_tol * volume,
            });
        }
        let sp = &rho.space;
        let nl = sp.n_local();
        let pts = self.ref_points();
        let lag: Vec<Vec<f64>> = pts.iter().map(|(xi, _)| self.lagrange(*xi).0).collect();
        let dgb: Vec<Vec<f64>> = pts.iter().map(|(xi, _)| sp.ref_basis(*xi).0).collect();
        let mut b = vec![0.0; self.n_free];
        for (e, elem) in self.mesh.leaves().iter().enumerate() {
            let jac = elem.measure(dim) / (1u32 << dim) as f64;
            let c = &rho.coefs.as_slice()[e * nl..(e + 1) * nl];
            let sc = sp.scale(e);
            for (q, (_, w)) in pts.iter().enumerate() {
                let r: f64 = sc * dgb[q].iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
                let f = (1.0 - r) * w * jac;
                for (a, la) in lag[q].iter().enumerate() {
                    for (i, wi) in &self.local[e][a] {
                        b[*i] += f * la * wi;
                    }
                }
            }
        }
        let phi = self.solver.as_ref().expect("prepared in new").solve(&b)?;
        let ax = self.stiffness.matvec(&phi);
        let w_sum: f64 = self.mean.iter().sum();
        let b_sum: f64 = b.iter().sum();
        let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        // residual of the singular system, with the mean defect removed from b
        let residual = ax
            .iter()
            .zip(&b)
            .zip(&self.mean)
            .map(|((a, b), w)| (a - (b - w * b_sum / w_sum)).powi(2))
            .sum::<f64>()
            .sqrt()
            / bnorm;

        let se = &self.space_e;
        let refs = se.reference_points().to_vec();
        let grads: Vec<[Vec<f64>; 2]> = refs.iter().map(|xi| self.lagrange(*xi).1).collect();
        let mut components = Vec::with_capacity(dim);
        for s in 0..dim {
            let nq = se.n_qp();
            let mut vals = vec![0.0; se.n_elements() * nq];
            for (e, elem) in self.mesh.leaves().iter().enumerate() {
                let u: Vec<f64> = self.local[e]
                    .iter()
                    .map(|ex| ex.iter().map(|(i, w)| w * phi[*i]).sum())
                    .collect();
                for q in 0..nq {
                    let g: f64 = grads[q][s].iter().zip(&u).map(|(a, b)| a * b).sum();
                    vals[e * nq + q] = -g * 2.0 / elem.size[s];
                }
            }
            components.push(DgField {
                space: se.clone(),
                coefs: se.load_values(&vals, Weight::Unweighted),
            });
        }
        Ok(ElectricField {
            components,
            potential: phi,
            residual,
        })
    }

    /// Potential at a physical point.
    pub fn potential_at(&self, field: &ElectricField, x: [f64; 2]) -> f64 {
        let e = self.mesh.locate(x);
        let elem = &self.mesh.leaves()[e];
        let mut p = x;
        for s in 0..self.mesh.dim() {
            let lo = self.mesh.lo()[s];
            let len = self.mesh.hi()[s] - lo;
            p[s] = lo + (x[s] - lo).rem_euclid(len);
        }
        let (v, _) = self.lagrange(elem.to_reference(p));
        v.iter()
            .zip(&self.local[e])
            .map(|(l, ex)| l * ex.iter().map(|(i, w)| w * field.potential[*i]).sum::<f64>())
            .sum()
    }
}
