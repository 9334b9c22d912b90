//! Projection-based error indicators, refine/coarsen loop and inter-mesh
//! transfer of DG fields.

use std::collections::HashMap;
use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dg::{DgSpace, FieldBundle, Weight};
use crate::error::{Error, Result};
use crate::lowrank::{from_kv, mass_of, LowRankState};
use crate::mesh::CellKey;
use crate::orth::{orthonormalize, Exhausted, LegendreModes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptSpaces {
    Spatial,
    Velocity,
    Both,
}

impl AdaptSpaces {
    fn spatial(self) -> bool {
        matches!(self, Self::Spatial | Self::Both)
    }

    fn velocity(self) -> bool {
        matches!(self, Self::Velocity | Self::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Refinement threshold.
    pub epsilon: f64,
    /// Coarsening factor: siblings merge when their indicators sum below `c ε`.
    pub c: f64,
    /// Deepest refinement level below the root cells.
    pub max_level: u8,
    pub spaces: AdaptSpaces,
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("adaptivity epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidArgument(format!("coarsening factor must lie in (0, 1), got {}", self.c)));
        }
        Ok(())
    }
}

/// Per element, the largest L2 norm over components of the defect of the
/// projection onto degree `p - 1`.
pub fn error_indicator(space: &DgSpace, coefs: &DMatrix<f64>) -> Result<Vec<f64>> {
    let p = space.degree();
    if p == 0 {
        return Err(Error::InvalidArgument("error indicator needs degree p >= 1".into()));
    }
    if coefs.nrows() != space.n_dofs() {
        return Err(Error::DimensionMismatch(format!(
            "bundle has {} rows, space has {} dofs",
            coefs.nrows(),
            space.n_dofs()
        )));
    }
    let nl = space.n_local();
    let top: Vec<usize> = (0..nl)
        .filter(|&l| {
            let (a, b) = space.local_degrees(l);
            a == p || b == p
        })
        .collect();
    Ok((0..space.n_elements())
        .into_par_iter()
        .map(|e| {
            (0..coefs.ncols())
                .map(|j| top.iter().map(|&l| coefs[(e * nl + l, j)].powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        })
        .collect())
}

pub fn bundle_indicator(bundle: &FieldBundle) -> Result<Vec<f64>> {
    error_indicator(&bundle.space, &bundle.coefs)
}

fn local_projection(src: &DgSpace, se: usize, dst: &DgSpace, de: usize) -> DMatrix<f64> {
    // P[k, l] = ∫_{T_se} φ^src_l φ^dst_k over the smaller of the two cells
    let s_el = &src.mesh().leaves()[se];
    let d_el = &dst.mesh().leaves()[de];
    let fine_is_src = s_el.level() >= d_el.level();
    let points = if fine_is_src { src.quad_points(se) } else { dst.quad_points(de) };
    let (ss, ds) = (src.scale(se), dst.scale(de));
    let mut p = DMatrix::zeros(dst.n_local(), src.n_local());
    for qp in points {
        let a = src.ref_basis(s_el.to_reference(qp.x)).0;
        let b = dst.ref_basis(d_el.to_reference(qp.x)).0;
        for k in 0..b.len() {
            for l in 0..a.len() {
                p[(k, l)] += qp.w * ss * a[l] * ds * b[k];
            }
        }
    }
    p
}

/// L2 projection of bundle columns from `src` to `dst` (both over the same
/// root grid). Exact where `dst` is at least as fine as `src`.
pub fn transfer(src: &DgSpace, dst: &DgSpace, coefs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (sm, dm) = (src.mesh(), dst.mesh());
    if sm.dim() != dm.dim() || sm.root() != dm.root() || sm.extents() != dm.extents() {
        return Err(Error::SpaceMismatch("transfer between unrelated meshes".into()));
    }
    if src.degree() != dst.degree() {
        return Err(Error::SpaceMismatch("transfer between different degrees".into()));
    }
    if coefs.nrows() != src.n_dofs() {
        return Err(Error::DimensionMismatch("bundle does not match the source space".into()));
    }
    let nl = dst.n_local();
    let mut finer: HashMap<usize, Vec<usize>> = HashMap::new();
    for s in sm.leaves() {
        if let Some(d) = dm.leaf_containing(&s.key) {
            if dm.leaves()[d].key != s.key {
                finer.entry(d).or_default().push(s.id);
            }
        }
    }
    let blocks: Vec<DMatrix<f64>> = (0..dst.n_elements())
        .into_par_iter()
        .map(|de| {
            let key: CellKey = dm.leaves()[de].key;
            let sources = match sm.leaf_containing(&key) {
                Some(se) => vec![se],
                None => finer.get(&de).cloned().unwrap_or_default(),
            };
            let mut out = DMatrix::zeros(nl, coefs.ncols());
            for se in sources {
                let p = local_projection(src, se, dst, de);
                out += p * coefs.rows(se * src.n_local(), src.n_local());
            }
            out
        })
        .collect();
    let mut result = DMatrix::zeros(dst.n_dofs(), coefs.ncols());
    for (de, b) in blocks.into_iter().enumerate() {
        result.rows_mut(de * nl, nl).copy_from(&b);
    }
    Ok(result)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeshAdaptReport {
    pub n_before: usize,
    pub n_after: usize,
    /// Elements marked for refinement, summed over passes.
    pub refined: usize,
    /// Sibling groups merged.
    pub coarsened: usize,
    pub passes: usize,
    /// Marks remained at the deepest allowed level.
    pub max_level_hit: bool,
    /// L2 norm removed by coarsening projections.
    pub coarsening_defect: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdaptReport {
    pub spatial: Option<MeshAdaptReport>,
    pub velocity: Option<MeshAdaptReport>,
}

impl AdaptReport {
    pub fn changed(&self) -> bool {
        [&self.spatial, &self.velocity]
            .iter()
            .any(|r| r.as_ref().is_some_and(|r| r.refined > 0 || r.coarsened > 0))
    }
}

/// Refine/coarsen loop for one space. `scaled` maps coefficients to the
/// bundle that is measured by the indicator.
fn adapt_mesh(
    space: &Arc<DgSpace>,
    coefs: &DMatrix<f64>,
    cfg: &AdaptConfig,
    scaled: &dyn Fn(&DgSpace, &DMatrix<f64>) -> DMatrix<f64>,
) -> Result<(Arc<DgSpace>, DMatrix<f64>, MeshAdaptReport)> {
    let mut report = MeshAdaptReport { n_before: space.n_elements(), ..Default::default() };
    let mut space = space.clone();
    let mut coefs = coefs.clone();
    loop {
        let ind = error_indicator(&space, &scaled(&space, &coefs))?;
        let leaves = space.mesh().leaves();
        let over: Vec<usize> = (0..ind.len()).filter(|&e| ind[e] > cfg.epsilon).collect();
        let marks: Vec<usize> = over.iter().copied().filter(|&e| leaves[e].level() < cfg.max_level).collect();
        if marks.len() < over.len() {
            report.max_level_hit = true;
        }
        if marks.is_empty() {
            break;
        }
        report.passes += 1;
        report.refined += marks.len();
        let mesh = Arc::new(space.mesh().refine(&marks)?);
        let next = Arc::new(space.on_mesh(mesh));
        coefs = transfer(&space, &next, &coefs)?;
        space = next;
    }
    if report.max_level_hit {
        warn!("adaptivity: marks remain at max level {}", cfg.max_level);
    }

    let ind = error_indicator(&space, &scaled(&space, &coefs))?;
    let mesh = space.mesh();
    let parents: Vec<CellKey> = mesh
        .coarsenable_parents()
        .into_iter()
        .filter(|p| {
            let total: f64 = p
                .children(mesh.dim())
                .iter()
                .map(|c| mesh.leaf_id(c).map(|id| ind[id]).unwrap_or(f64::INFINITY))
                .sum();
            total < cfg.c * cfg.epsilon
        })
        .collect();
    if !parents.is_empty() {
        let (coarse, merged) = mesh.coarsen(&parents)?;
        report.coarsened = merged.len();
        let next = Arc::new(space.on_mesh(Arc::new(coarse)));
        let moved = transfer(&space, &next, &coefs)?;
        let lost = coefs.norm_squared() - moved.norm_squared();
        report.coarsening_defect = lost.max(0.0).sqrt();
        coefs = moved;
        space = next;
    }
    report.n_after = space.n_elements();
    Ok((space, coefs, report))
}

/// One adaptation of the meshes of `state`. The indicator sees the scaled
/// bundles `K = X S` and `P_ω(V Sᵀ)`.
pub fn adapt_state(state: &LowRankState, cfg: &AdaptConfig) -> Result<(LowRankState, AdaptReport)> {
    cfg.validate()?;
    let mut report = AdaptReport::default();
    let mut state = state.clone();
    if cfg.spaces.spatial() {
        let k = state.k();
        let (space, k_new, rep) = adapt_mesh(state.space_x(), &k, cfg, &|_, c| c.clone())?;
        if rep.refined > 0 || rep.coarsened > 0 {
            state = from_kv(&space, &k_new, state.v.clone(), state.m, state.weight)?;
        }
        report.spatial = Some(rep);
    }
    if cfg.spaces.velocity() {
        if state.m > 0 {
            return Err(Error::InvalidArgument(
                "velocity adaptivity cannot keep fixed functions; use m = 0".into(),
            ));
        }
        let weight = state.weight;
        let l = &state.v.coefs * state.s.transpose();
        let scaled = move |sp: &DgSpace, c: &DMatrix<f64>| match weight {
            Weight::Unweighted => c.clone(),
            Weight::Gaussian => sp.apply_mass(weight, c),
        };
        let (space, l_new, rep) = adapt_mesh(state.space_v(), &l, cfg, &scaled)?;
        if rep.refined > 0 || rep.coarsened > 0 {
            let r = state.rank();
            let mut pad = LegendreModes::new(&space, weight);
            let q = orthonormalize(&l_new, mass_of(&space, weight), 0, Exhausted::Pad, &mut pad)?;
            let v = FieldBundle::new(space.clone(), q.q)?;
            // f = Σ_i X_i L_i with L = Q R, so S = Rᵀ
            let s = q.r.transpose();
            debug_assert_eq!(s.ncols(), r);
            let k = &state.x.coefs * s;
            state = from_kv(state.space_x(), &k, v, 0, weight)?;
        }
        report.velocity = Some(rep);
    }
    Ok((state, report))
}
