//! Gram–Schmidt orthonormalization of coefficient bundles.

use nalgebra::{DMatrix, DVector};

use crate::dg::{DgSpace, Weight};
use crate::error::{Error, Result};
use crate::linalg::BlockDiag;
use crate::quadrature::orthonormal_legendre;

/// Relative drop tolerance for exhausted directions.
pub const DROP_TOL: f64 = 1e-12;

/// What to do with a direction that vanishes after orthogonalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exhausted {
    /// Replace it by the next usable padding candidate.
    Pad,
    /// Leave it out; the output has fewer columns.
    Drop,
}

#[derive(Debug, Clone)]
pub struct Orthonormalized {
    /// Orthonormal columns.
    pub q: DMatrix<f64>,
    /// `input = q * r`.
    pub r: DMatrix<f64>,
    /// Output columns that came from padding.
    pub padded: Vec<usize>,
}

/// Source of deterministic padding candidates, indexed from zero.
pub trait PadSource {
    fn candidate(&mut self, index: usize) -> Option<DVector<f64>>;
}

/// Unit vectors `e_0, e_1, ...`.
pub struct UnitVectors(pub usize);

impl PadSource for UnitVectors {
    fn candidate(&mut self, index: usize) -> Option<DVector<f64>> {
        (index < self.0).then(|| {
            let mut e = DVector::zeros(self.0);
            e[index] = 1.0;
            e
        })
    }
}

/// Global tensor Legendre polynomials on the bounding box, ordered by total
/// degree and projected into the space, followed by unit vectors.
pub struct LegendreModes<'a> {
    space: &'a DgSpace,
    weight: Weight,
    modes: Vec<(usize, usize)>,
}

impl<'a> LegendreModes<'a> {
    const MAX_DEGREE: usize = 12;

    pub fn new(space: &'a DgSpace, weight: Weight) -> Self {
        let mut modes = Vec::new();
        for total in 0..=Self::MAX_DEGREE {
            if space.dim() == 1 {
                modes.push((total, 0));
            } else {
                for a in (0..=total).rev() {
                    modes.push((a, total - a));
                }
            }
        }
        Self { space, weight, modes }
    }
}

impl PadSource for LegendreModes<'_> {
    fn candidate(&mut self, index: usize) -> Option<DVector<f64>> {
        if let Some(&(a, b)) = self.modes.get(index) {
            let lo = self.space.mesh().lo();
            let hi = self.space.mesh().hi();
            let dim = self.space.dim();
            let f = move |x: [f64; 2]| {
                let t0 = 2.0 * (x[0] - lo[0]) / (hi[0] - lo[0]) - 1.0;
                let mut v = orthonormal_legendre(a, t0).0;
                if dim == 2 {
                    let t1 = 2.0 * (x[1] - lo[1]) / (hi[1] - lo[1]) - 1.0;
                    v *= orthonormal_legendre(b, t1).0;
                }
                v
            };
            return Some(self.space.project(f, self.weight));
        }
        UnitVectors(self.space.n_dofs()).candidate(index - self.modes.len())
    }
}

struct Basis<'m> {
    mass: Option<&'m BlockDiag>,
    q: Vec<DVector<f64>>,
    mq: Vec<DVector<f64>>,
}

impl Basis<'_> {
    fn apply_mass(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.mass {
            Some(m) => DVector::from_vec(m.apply_vec(v.as_slice())),
            None => v.clone(),
        }
    }

    fn norm(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.apply_mass(v)).max(0.0).sqrt()
    }

    /// Two passes of modified Gram–Schmidt; returns accumulated coefficients.
    fn orthogonalize(&self, v: &mut DVector<f64>) -> Vec<f64> {
        let mut c = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (i, (q, mq)) in self.q.iter().zip(&self.mq).enumerate() {
                let h = mq.dot(v);
                v.axpy(-h, q, 1.0);
                c[i] += h;
            }
        }
        c
    }

    fn push(&mut self, q: DVector<f64>) {
        let mq = self.apply_mass(&q);
        self.q.push(q);
        self.mq.push(mq);
    }
}

/// Orthonormalizes the columns of `cols` in the inner product `xᵀ M y`
/// (`mass = None` means the identity). The first `prefix` columns must already
/// be orthonormal and are copied through unchanged.
pub fn orthonormalize(
    cols: &DMatrix<f64>,
    mass: Option<&BlockDiag>,
    prefix: usize,
    exhausted: Exhausted,
    pad: &mut dyn PadSource,
) -> Result<Orthonormalized> {
    let n_in = cols.ncols();
    if prefix > n_in {
        return Err(Error::InvalidArgument(format!(
            "fixed prefix {prefix} exceeds bundle size {n_in}"
        )));
    }
    let mut basis = Basis {
        mass,
        q: Vec::with_capacity(n_in),
        mq: Vec::with_capacity(n_in),
    };
    let scale = (0..n_in)
        .map(|j| basis.norm(&cols.column(j).into_owned()))
        .fold(0.0f64, f64::max);
    let tol = DROP_TOL * scale.max(f64::MIN_POSITIVE);

    let mut r_cols: Vec<Vec<f64>> = Vec::with_capacity(n_in);
    let mut padded = Vec::new();
    let mut next_candidate = 0usize;
    for j in 0..n_in {
        let col = cols.column(j).into_owned();
        if j < prefix {
            let mut c = vec![0.0; j + 1];
            c[j] = 1.0;
            basis.push(col);
            r_cols.push(c);
            continue;
        }
        let mut v = col;
        let mut c = basis.orthogonalize(&mut v);
        let norm = basis.norm(&v);
        if norm > tol {
            basis.push(v / norm);
            c.push(norm);
            r_cols.push(c);
            continue;
        }
        if exhausted == Exhausted::Pad && norm > 0.0 {
            // Keep tiny residuals so that `input = q r` stays exact; they are
            // re-orthogonalized once more since they carry relative roundoff.
            let mut w = v / norm;
            let c2 = basis.orthogonalize(&mut w);
            let nw = basis.norm(&w);
            if nw > 0.5 {
                for (a, b) in c.iter_mut().zip(&c2) {
                    *a += norm * b;
                }
                basis.push(w / nw);
                c.push(norm * nw);
                r_cols.push(c);
                continue;
            }
        }
        if exhausted == Exhausted::Pad {
            loop {
                let Some(mut cand) = pad.candidate(next_candidate) else {
                    return Err(Error::InvalidArgument("ran out of padding candidates".into()));
                };
                next_candidate += 1;
                let before = basis.norm(&cand);
                if before == 0.0 {
                    continue;
                }
                basis.orthogonalize(&mut cand);
                let after = basis.norm(&cand);
                if after > 1e-8 * before {
                    padded.push(basis.q.len());
                    basis.push(cand / after);
                    c.push(0.0);
                    break;
                }
            }
        }
        r_cols.push(c);
    }

    let n_out = basis.q.len();
    let mut r = DMatrix::zeros(n_out, n_in);
    for (j, c) in r_cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            r[(i, j)] = *v;
        }
    }
    let q = if n_out == 0 {
        DMatrix::zeros(cols.nrows(), 0)
    } else {
        DMatrix::from_columns(&basis.q)
    };
    Ok(Orthonormalized { q, r, padded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::PeriodicMesh;
    use std::sync::Arc;

    #[test]
    fn orthonormal_input_passes_through() {
        let q = DMatrix::<f64>::identity(5, 3);
        let out = orthonormalize(&q, None, 0, Exhausted::Pad, &mut UnitVectors(5)).unwrap();
        assert_eq!(out.q, q);
        assert_eq!(out.r, DMatrix::identity(3, 3));
    }

    #[test]
    fn duplicate_column_is_padded() {
        let mesh = Arc::new(PeriodicMesh::build_uniform(1, &[(-6.0, 6.0)], &[8]).unwrap());
        let sp = DgSpace::new(mesh, 2);
        let a = sp.project(|x| x[0].sin(), Weight::Gaussian);
        let b = sp.project(|x| x[0].cos(), Weight::Gaussian);
        let cols = DMatrix::from_columns(&[a.clone(), b, a]);
        let mass = &sp.gaussian_mass().0;
        let mut pad = LegendreModes::new(&sp, Weight::Gaussian);
        let out = orthonormalize(&cols, Some(mass), 0, Exhausted::Pad, &mut pad).unwrap();
        assert_eq!(out.q.ncols(), 3);
        assert_eq!(out.padded, vec![2]);
        let gram = sp.gram(&out.q, &out.q, Weight::Gaussian);
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert!((&out.q * &out.r - &cols).amax() < 1e-12);
        assert_eq!(out.r[(2, 2)], 0.0);

        let dropped = orthonormalize(&cols, Some(mass), 0, Exhausted::Drop, &mut pad).unwrap();
        assert_eq!(dropped.q.ncols(), 2);
        assert!((&dropped.q * &dropped.r - &cols).amax() < 1e-12);
    }
}
