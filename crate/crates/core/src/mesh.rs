//! Periodic Cartesian meshes with bintree/quadtree refinement.
//!
//! Cells are addressed by `(level, i, j)` integer keys; a level-`l` cell has
//! side `extent / (root << l)` along each refined axis. Leaves are stored in
//! depth-first order (roots row-major, children x-fastest) and the leaf index
//! is the element id used by every DG field.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub level: u8,
    pub i: u32,
    pub j: u32,
}

impl CellKey {
    pub const fn new(level: u8, i: u32, j: u32) -> Self {
        Self { level, i, j }
    }

    pub fn parent(&self, dim: usize) -> Option<CellKey> {
        if self.level == 0 {
            return None;
        }
        let j = if dim == 2 { self.j / 2 } else { self.j };
        Some(CellKey::new(self.level - 1, self.i / 2, j))
    }

    /// Children in x-fastest order.
    pub fn children(&self, dim: usize) -> Vec<CellKey> {
        let l = self.level + 1;
        if dim == 1 {
            vec![
                CellKey::new(l, 2 * self.i, self.j),
                CellKey::new(l, 2 * self.i + 1, self.j),
            ]
        } else {
            let mut out = Vec::with_capacity(4);
            for dj in 0..2 {
                for di in 0..2 {
                    out.push(CellKey::new(l, 2 * self.i + di, 2 * self.j + dj));
                }
            }
            out
        }
    }

    pub fn ancestor_at(&self, level: u8, dim: usize) -> CellKey {
        let shift = self.level - level;
        let j = if dim == 2 { self.j >> shift } else { self.j };
        CellKey::new(level, self.i >> shift, j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: usize,
    pub key: CellKey,
    pub lower: [f64; 2],
    pub size: [f64; 2],
}

impl Element {
    pub fn level(&self) -> u8 {
        self.key.level
    }

    pub fn measure(&self, dim: usize) -> f64 {
        self.size[..dim].iter().product()
    }

    /// Maps a physical point to reference coordinates in [-1, 1].
    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        [
            2.0 * (x[0] - self.lower[0]) / self.size[0] - 1.0,
            2.0 * (x[1] - self.lower[1]) / self.size[1] - 1.0,
        ]
    }

    pub fn from_reference(&self, xi: [f64; 2]) -> [f64; 2] {
        [
            self.lower[0] + 0.5 * (xi[0] + 1.0) * self.size[0],
            self.lower[1] + 0.5 * (xi[1] + 1.0) * self.size[1],
        ]
    }
}

/// An oriented face with normal `+e_axis`; `plus` lies in the normal direction.
///
/// The face is the full side of the smaller neighbour. `minus_range` and
/// `plus_range` give the face's extent in the tangential reference coordinate
/// of each side (always `(-1, 1)` in 1D and for the smaller side).
#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub axis: usize,
    pub minus: usize,
    pub plus: usize,
    pub measure: f64,
    pub minus_range: (f64, f64),
    pub plus_range: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Leaf(usize),
    Internal,
}

#[derive(Debug, Clone)]
pub struct PeriodicMesh {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    root: [u32; 2],
    nodes: HashMap<CellKey, Node>,
    leaves: Vec<Element>,
    faces: Vec<Face>,
    generation: u64,
}

impl PartialEq for PeriodicMesh {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.lo == other.lo
            && self.hi == other.hi
            && self.root == other.root
            && self.leaves == other.leaves
            && self.generation == other.generation
    }
}

impl PeriodicMesh {
    pub fn build_uniform(dim: usize, extents: &[(f64, f64)], cells: &[usize]) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidMesh(format!("dimension must be 1 or 2, got {dim}")));
        }
        if extents.len() != dim || cells.len() != dim {
            return Err(Error::InvalidMesh(format!(
                "expected {dim} extents and cell counts, got {} and {}",
                extents.len(),
                cells.len()
            )));
        }
        let mut lo = [0.0, 0.0];
        let mut hi = [1.0, 1.0];
        let mut root = [1u32, 1u32];
        for a in 0..dim {
            let (l, h) = extents[a];
            if !(h > l) || !l.is_finite() || !h.is_finite() {
                return Err(Error::InvalidMesh(format!("degenerate extent [{l}, {h}) on axis {a}")));
            }
            if cells[a] == 0 {
                return Err(Error::InvalidMesh(format!("zero cells on axis {a}")));
            }
            lo[a] = l;
            hi[a] = h;
            root[a] = cells[a] as u32;
        }
        let mut keys = BTreeSet::new();
        for j in 0..root[1] {
            for i in 0..root[0] {
                keys.insert(CellKey::new(0, i, j));
            }
        }
        Self::assemble(dim, lo, hi, root, &keys, 0)
    }

    /// Rebuilds a mesh from its leaf keys (used by checkpoints).
    pub fn from_leaf_keys(
        dim: usize,
        lo: [f64; 2],
        hi: [f64; 2],
        root: [u32; 2],
        keys: &[CellKey],
        generation: u64,
    ) -> Result<Self> {
        let set: BTreeSet<CellKey> = keys.iter().copied().collect();
        if set.len() != keys.len() {
            return Err(Error::InvalidMesh("duplicate leaf keys".into()));
        }
        let mesh = Self::assemble(dim, lo, hi, root, &set, generation)?;
        mesh.check_balance()?;
        Ok(mesh)
    }

    fn assemble(
        dim: usize,
        lo: [f64; 2],
        hi: [f64; 2],
        root: [u32; 2],
        keys: &BTreeSet<CellKey>,
        generation: u64,
    ) -> Result<Self> {
        let mut nodes: HashMap<CellKey, Node> = HashMap::with_capacity(2 * keys.len());
        let max_level = keys.iter().map(|k| k.level).max().unwrap_or(0);
        let mut covered: u128 = 0;
        for k in keys {
            let n_i = root[0] << k.level;
            let n_j = if dim == 2 { root[1] << k.level } else { 1 };
            if k.i >= n_i || k.j >= n_j {
                return Err(Error::InvalidMesh(format!("cell {k:?} outside the root grid")));
            }
            covered += 1u128 << ((max_level - k.level) as u32 * dim as u32);
            nodes.insert(*k, Node::Leaf(0));
        }
        for k in keys {
            let mut a = *k;
            while let Some(p) = a.parent(dim) {
                match nodes.get(&p) {
                    Some(Node::Leaf(_)) => {
                        return Err(Error::InvalidMesh(format!("leaf {p:?} has a descendant leaf {k:?}")))
                    }
                    Some(Node::Internal) => break,
                    None => {
                        nodes.insert(p, Node::Internal);
                    }
                }
                a = p;
            }
        }
        let expected = (root[0] as u128 * root[1] as u128) << (max_level as u32 * dim as u32);
        if covered != expected {
            return Err(Error::InvalidMesh(format!(
                "leaves do not tile the domain ({covered} of {expected} finest cells)"
            )));
        }

        let mut mesh = Self {
            dim,
            lo,
            hi,
            root,
            nodes,
            leaves: Vec::with_capacity(keys.len()),
            faces: Vec::new(),
            generation,
        };
        let mut order = Vec::with_capacity(keys.len());
        for j in 0..root[1] {
            for i in 0..root[0] {
                mesh.collect_dfs(CellKey::new(0, i, j), &mut order);
            }
        }
        for (id, key) in order.into_iter().enumerate() {
            mesh.nodes.insert(key, Node::Leaf(id));
            let (lower, size) = mesh.geometry(key);
            mesh.leaves.push(Element { id, key, lower, size });
        }
        mesh.faces = mesh.build_faces();
        Ok(mesh)
    }

    fn collect_dfs(&self, key: CellKey, out: &mut Vec<CellKey>) {
        match self.nodes.get(&key) {
            Some(Node::Leaf(_)) => out.push(key),
            Some(Node::Internal) => {
                for c in key.children(self.dim) {
                    self.collect_dfs(c, out);
                }
            }
            None => unreachable!("tiling checked before traversal"),
        }
    }

    fn geometry(&self, key: CellKey) -> ([f64; 2], [f64; 2]) {
        let mut lower = [self.lo[1], self.lo[1]];
        let mut size = [1.0, 1.0];
        let idx = [key.i, key.j];
        for a in 0..2 {
            let n = if a < self.dim { self.root[a] << key.level } else { 1 };
            let h = (self.hi[a] - self.lo[a]) / n as f64;
            lower[a] = self.lo[a] + idx[a] as f64 * h;
            size[a] = h;
        }
        (lower, size)
    }

    fn cells_at(&self, level: u8, axis: usize) -> u32 {
        if axis < self.dim {
            self.root[axis] << level
        } else {
            1
        }
    }

    fn shifted(&self, key: CellKey, axis: usize, forward: bool) -> CellKey {
        let n = self.cells_at(key.level, axis);
        let step = |x: u32| if forward { (x + 1) % n } else { (x + n - 1) % n };
        if axis == 0 {
            CellKey::new(key.level, step(key.i), key.j)
        } else {
            CellKey::new(key.level, key.i, step(key.j))
        }
    }

    /// The leaf containing `key`, if `key` is a leaf or lies below one.
    fn containing_leaf(&self, key: CellKey) -> Option<usize> {
        for level in (0..=key.level).rev() {
            match self.nodes.get(&key.ancestor_at(level, self.dim)) {
                Some(Node::Leaf(id)) => return Some(*id),
                Some(Node::Internal) => return None,
                None => continue,
            }
        }
        None
    }

    fn build_faces(&self) -> Vec<Face> {
        let mut faces = Vec::new();
        for leaf in &self.leaves {
            for axis in 0..self.dim {
                let nb = self.shifted(leaf.key, axis, true);
                let tangential = if axis == 0 { 1 } else { 0 };
                let leaf_t = (leaf.lower[tangential], leaf.size[tangential]);
                match self.nodes.get(&nb) {
                    Some(Node::Leaf(id)) => faces.push(Face {
                        axis,
                        minus: leaf.id,
                        plus: *id,
                        measure: self.face_measure(leaf, axis),
                        minus_range: (-1.0, 1.0),
                        plus_range: (-1.0, 1.0),
                    }),
                    Some(Node::Internal) => {
                        for c in nb.children(self.dim) {
                            let on_face = if axis == 0 { c.i == 2 * nb.i } else { c.j == 2 * nb.j };
                            if !on_face {
                                continue;
                            }
                            let id = match self.nodes.get(&c) {
                                Some(Node::Leaf(id)) => *id,
                                _ => unreachable!("2:1 balance violated at {c:?}"),
                            };
                            let child = &self.leaves[id];
                            let range = if self.dim == 1 {
                                (-1.0, 1.0)
                            } else {
                                tangential_range(child.lower[tangential], child.size[tangential], leaf_t)
                            };
                            faces.push(Face {
                                axis,
                                minus: leaf.id,
                                plus: id,
                                measure: self.face_measure(child, axis),
                                minus_range: range,
                                plus_range: (-1.0, 1.0),
                            });
                        }
                    }
                    None => {
                        let id = self
                            .containing_leaf(nb)
                            .expect("missing neighbour must lie inside a coarser leaf");
                        let coarse = &self.leaves[id];
                        let range = if self.dim == 1 {
                            (-1.0, 1.0)
                        } else {
                            let ct = (coarse.lower[tangential], coarse.size[tangential]);
                            tangential_range(leaf_t.0, leaf_t.1, ct)
                        };
                        faces.push(Face {
                            axis,
                            minus: leaf.id,
                            plus: id,
                            measure: self.face_measure(leaf, axis),
                            minus_range: (-1.0, 1.0),
                            plus_range: range,
                        });
                    }
                }
            }
        }
        faces
    }

    fn face_measure(&self, e: &Element, axis: usize) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            e.size[1 - axis]
        }
    }

    /// Refines the given leaves, adding refinements needed for 2:1 balance.
    pub fn refine(&self, ids: &[usize]) -> Result<Self> {
        for &id in ids {
            if id >= self.leaves.len() {
                return Err(Error::UnknownElement(id));
            }
        }
        if ids.is_empty() {
            return Ok(self.clone());
        }
        let mut set: BTreeSet<CellKey> = self.leaves.iter().map(|e| e.key).collect();
        let mut marked: BTreeSet<CellKey> = ids.iter().map(|&id| self.leaves[id].key).collect();
        while !marked.is_empty() {
            for k in &marked {
                set.remove(k);
                set.extend(k.children(self.dim));
            }
            marked = self.balance_violations(&set);
        }
        Self::assemble(self.dim, self.lo, self.hi, self.root, &set, self.generation + 1)
    }

    /// Leaves of `set` that are more than one level coarser than a face neighbour.
    fn balance_violations(&self, set: &BTreeSet<CellKey>) -> BTreeSet<CellKey> {
        let mut out = BTreeSet::new();
        for k in set {
            if k.level < 2 {
                continue;
            }
            for axis in 0..self.dim {
                for forward in [true, false] {
                    let nb = self.shifted(*k, axis, forward);
                    for level in (0..k.level - 1).rev() {
                        let a = nb.ancestor_at(level, self.dim);
                        if set.contains(&a) {
                            out.insert(a);
                            break;
                        }
                    }
                }
            }
        }
        out
    }

    /// Coarsens the given parents. Parents whose removal would break 2:1
    /// balance, or whose children are not all leaves, are skipped and returned.
    pub fn coarsen(&self, parents: &[CellKey]) -> Result<(Self, Vec<CellKey>)> {
        for p in parents {
            if self.nodes.get(p) != Some(&Node::Internal) {
                return Err(Error::InvalidArgument(format!("{p:?} is not a refined cell")));
            }
        }
        if parents.is_empty() {
            return Ok((self.clone(), Vec::new()));
        }
        let mut set: BTreeSet<CellKey> = self.leaves.iter().map(|e| e.key).collect();
        let mut skipped = Vec::new();
        let mut changed = false;
        for p in parents {
            let children = p.children(self.dim);
            if !children.iter().all(|c| set.contains(c)) {
                skipped.push(*p);
                continue;
            }
            let mut trial = set.clone();
            for c in &children {
                trial.remove(c);
            }
            trial.insert(*p);
            if self.violates_at(&trial, *p) {
                skipped.push(*p);
                continue;
            }
            set = trial;
            changed = true;
        }
        if !changed {
            return Ok((self.clone(), skipped));
        }
        let mesh = Self::assemble(self.dim, self.lo, self.hi, self.root, &set, self.generation + 1)?;
        Ok((mesh, skipped))
    }

    /// True if a leaf finer than `key.level + 1` touches `key` across a face.
    fn violates_at(&self, set: &BTreeSet<CellKey>, key: CellKey) -> bool {
        for axis in 0..self.dim {
            for forward in [true, false] {
                let nb = self.shifted(key, axis, forward);
                if set.contains(&nb) || (0..key.level).any(|l| set.contains(&nb.ancestor_at(l, self.dim))) {
                    continue;
                }
                // nb is refined; its children adjacent to `key` must be leaves
                for c in nb.children(self.dim) {
                    let adjacent = match (axis, forward) {
                        (0, true) => c.i == 2 * nb.i,
                        (0, false) => c.i == 2 * nb.i + 1,
                        (_, true) => c.j == 2 * nb.j,
                        (_, false) => c.j == 2 * nb.j + 1,
                    };
                    if adjacent && !set.contains(&c) {
                        return true;
                    }
                }
            }
        }
        false
    }

    fn check_balance(&self) -> Result<()> {
        for f in &self.faces {
            let a = self.leaves[f.minus].key.level as i32;
            let b = self.leaves[f.plus].key.level as i32;
            if (a - b).abs() > 1 {
                return Err(Error::InvalidMesh(format!("2:1 balance violated across face {f:?}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> [f64; 2] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 2] {
        self.hi
    }

    pub fn root(&self) -> [u32; 2] {
        self.root
    }

    pub fn extents(&self) -> Vec<(f64, f64)> {
        (0..self.dim).map(|a| (self.lo[a], self.hi[a])).collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.hi[a] - self.lo[a]).product()
    }

    pub fn leaves(&self) -> &[Element] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn leaf_id(&self, key: &CellKey) -> Option<usize> {
        match self.nodes.get(key) {
            Some(Node::Leaf(id)) => Some(*id),
            _ => None,
        }
    }

    pub fn is_refined(&self, key: &CellKey) -> bool {
        self.nodes.get(key) == Some(&Node::Internal)
    }

    /// Leaf containing the cell `key` (the cell itself or a coarser ancestor).
    pub fn leaf_containing(&self, key: &CellKey) -> Option<usize> {
        self.containing_leaf(*key)
    }

    /// Leaf containing the physical point `x` (wrapped periodically).
    pub fn locate(&self, x: [f64; 2]) -> usize {
        let level = self.max_level();
        let mut idx = [0u32; 2];
        for a in 0..self.dim {
            let n = self.root[a] << level;
            let len = self.hi[a] - self.lo[a];
            let t = (x[a] - self.lo[a]).rem_euclid(len) / len;
            idx[a] = ((t * n as f64).floor() as u32).min(n - 1);
        }
        self.containing_leaf(CellKey::new(level, idx[0], idx[1]))
            .expect("leaves tile the domain")
    }

    /// Refined cells whose children are all leaves.
    pub fn coarsenable_parents(&self) -> Vec<CellKey> {
        let mut out: Vec<CellKey> = self
            .nodes
            .iter()
            .filter(|(k, n)| {
                **n == Node::Internal
                    && k.children(self.dim)
                        .iter()
                        .all(|c| matches!(self.nodes.get(c), Some(Node::Leaf(_))))
            })
            .map(|(k, _)| *k)
            .collect();
        out.sort();
        out
    }

    pub fn h_min(&self) -> f64 {
        self.leaves
            .iter()
            .flat_map(|e| e.size[..self.dim].to_vec())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_level(&self) -> u8 {
        self.leaves.iter().map(|e| e.key.level).max().unwrap_or(0)
    }

    /// Checks the structural invariants; returns a description of the first failure.
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.leaves.iter().map(|e| e.measure(self.dim)).sum();
        if (total - self.volume()).abs() > 1e-12 * self.volume() {
            return Err(Error::InvalidMesh(format!("leaf measures sum to {total}")));
        }
        for f in &self.faces {
            if !(f.measure > 0.0) || f.axis >= self.dim {
                return Err(Error::InvalidMesh(format!("bad face {f:?}")));
            }
        }
        self.check_balance()
    }
}

/// Reference range in [-1, 1] occupied by `[t0, t0 + len]` inside `(lower, size)`.
fn tangential_range(t0: f64, len: f64, host: (f64, f64)) -> (f64, f64) {
    let a = 2.0 * (t0 - host.0) / host.1 - 1.0;
    let b = 2.0 * (t0 + len - host.0) / host.1 - 1.0;
    (snap(a), snap(b))
}

fn snap(x: f64) -> f64 {
    for c in [-1.0, 0.0, 1.0] {
        if (x - c).abs() < 1e-12 {
            return c;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn uniform_face_counts() {
        let m = PeriodicMesh::build_uniform(1, &[(0.0, 4.0 * PI)], &[32]).unwrap();
        assert_eq!((m.n_leaves(), m.faces().len()), (32, 32));
        let m = PeriodicMesh::build_uniform(1, &[(0.0, 1.0)], &[1]).unwrap();
        assert_eq!((m.n_leaves(), m.faces().len()), (1, 1));
        assert_eq!((m.faces()[0].minus, m.faces()[0].plus), (0, 0));
        let m = PeriodicMesh::build_uniform(2, &[(0.0, 1.0), (0.0, 1.0)], &[2, 2]).unwrap();
        assert_eq!((m.n_leaves(), m.faces().len()), (4, 8));
        m.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PeriodicMesh::build_uniform(3, &[(0.0, 1.0); 3], &[1; 3]).is_err());
        assert!(PeriodicMesh::build_uniform(1, &[(1.0, 1.0)], &[4]).is_err());
        assert!(PeriodicMesh::build_uniform(1, &[(0.0, 1.0)], &[0]).is_err());
    }

    #[test]
    fn refine_examples() {
        let m = PeriodicMesh::build_uniform(1, &[(0.0, 1.0)], &[2]).unwrap();
        let r = m.refine(&[0]).unwrap();
        assert_eq!((r.n_leaves(), r.faces().len()), (3, 3));
        assert_eq!(r.generation(), 1);
        let same = m.refine(&[]).unwrap();
        assert_eq!(same, m);
        let m = PeriodicMesh::build_uniform(2, &[(0.0, 1.0), (0.0, 1.0)], &[1, 1]).unwrap();
        let r = m.refine(&[0]).unwrap();
        assert_eq!((r.n_leaves(), r.faces().len()), (4, 8));
        assert!(matches!(m.refine(&[5]), Err(Error::UnknownElement(5))));
    }

    #[test]
    fn hanging_faces_are_split() {
        let m = PeriodicMesh::build_uniform(2, &[(0.0, 2.0), (0.0, 2.0)], &[2, 2]).unwrap();
        let r = m.refine(&[0]).unwrap();
        assert_eq!(r.n_leaves(), 7);
        // cell (0,1,0) sees two children across its +x wrap and two across -x
        let coarse = r.leaf_id(&CellKey::new(0, 1, 0)).unwrap();
        let touching: Vec<_> = r
            .faces()
            .iter()
            .filter(|f| f.axis == 0 && (f.minus == coarse || f.plus == coarse))
            .collect();
        assert_eq!(touching.len(), 4);
        for f in touching {
            assert!((f.measure - 0.5).abs() < 1e-15);
        }
        // two periodic grid lines of length 2 plus the new half line at x = 0.5
        let sum_x: f64 = r.faces().iter().filter(|f| f.axis == 0).map(|f| f.measure).sum();
        assert!((sum_x - 5.0).abs() < 1e-12);
        r.validate().unwrap();
    }

    #[test]
    fn refinement_keeps_balance() {
        let m = PeriodicMesh::build_uniform(1, &[(0.0, 1.0)], &[4]).unwrap();
        let mut r = m.refine(&[1]).unwrap();
        for _ in 0..3 {
            let id = r.leaf_id(&r.leaves()[1].key).unwrap();
            r = r.refine(&[id + 1]).unwrap();
            r.validate().unwrap();
        }
        assert!(r.max_level() >= 3);
    }

    #[test]
    fn coarsen_examples() {
        let m = PeriodicMesh::build_uniform(1, &[(0.0, 1.0)], &[2]).unwrap();
        let r = m.refine(&[0]).unwrap();
        let (c, skipped) = r.coarsen(&[CellKey::new(0, 0, 0)]).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(c.leaves(), m.leaves());
        assert_eq!(c.faces(), m.faces());
        let (same, _) = m.coarsen(&[]).unwrap();
        assert_eq!(same, m);

        let both = m.refine(&[0, 1]).unwrap();
        assert_eq!(both.n_leaves(), 4);
        let (c, skipped) = both.coarsen(&[CellKey::new(0, 0, 0)]).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(c.n_leaves(), 3);
    }

    #[test]
    fn coarsen_skips_balance_violations() {
        let m = PeriodicMesh::build_uniform(1, &[(0.0, 1.0)], &[4]).unwrap();
        let r = m.refine(&[1]).unwrap();
        let fine = r.leaf_id(&CellKey::new(1, 3, 0)).unwrap();
        let r = r.refine(&[fine]).unwrap();
        // refining (1,3) forces (0,2) to split as well
        r.validate().unwrap();
        assert!(r.is_refined(&CellKey::new(0, 2, 0)));
        let (c, skipped) = r.coarsen(&[CellKey::new(0, 2, 0)]).unwrap();
        assert_eq!(skipped, vec![CellKey::new(0, 2, 0)]);
        assert_eq!(c.n_leaves(), r.n_leaves());
    }
}
