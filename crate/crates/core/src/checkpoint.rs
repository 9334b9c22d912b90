//! Binary checkpoints of a low-rank state and its meshes.
//!
//! Layout (little-endian): magic `VDLRCKPT`, `u32` version, time, step,
//! reference observables, weight, m, the two meshes (dim, root, box, generation,
//! leaf keys, degree, quadrature order), then X, S and V column-major. The last
//! eight bytes are the leading bytes of the SHA-256 digest of everything before.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::dg::{DgSpace, FieldBundle, Weight};
use crate::error::{Error, Result};
use crate::lowrank::LowRankState;
use crate::mesh::{CellKey, PeriodicMesh};

pub const MAGIC: &[u8; 8] = b"VDLRCKPT";
pub const VERSION: u32 = 1;

/// Observables at the start of the run, kept so that resumed runs report
/// errors relative to the original initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub total_energy: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub t: f64,
    pub step: u64,
    pub reference: Reference,
    pub state: LowRankState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for x in m.iter() {
            self.f64(*x);
        }
    }
    fn space(&mut self, space: &DgSpace) {
        let mesh = space.mesh();
        self.u8(mesh.dim() as u8);
        for r in mesh.root() {
            self.u32(r);
        }
        for x in mesh.lo().into_iter().chain(mesh.hi()) {
            self.f64(x);
        }
        self.u64(mesh.generation());
        self.u64(mesh.n_leaves() as u64);
        for e in mesh.leaves() {
            self.u8(e.key.level);
            self.u32(e.key.i);
            self.u32(e.key.j);
        }
        self.u32(space.degree() as u32);
        self.u32(space.n_quad() as u32);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        // every counted item occupies at least one byte
        if n as usize > self.buf.len() - self.pos {
            return Err(Error::Checkpoint(format!("implausible {what} count {n}")));
        }
        Ok(n as usize)
    }
    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let r = self.u64()? as usize;
        let c = self.u64()? as usize;
        if r.checked_mul(c).and_then(|n| n.checked_mul(8)).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(Error::Checkpoint(format!("implausible matrix shape {r}x{c}")));
        }
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r * c {
            data.push(self.f64()?);
        }
        Ok(DMatrix::from_vec(r, c, data))
    }
    fn space(&mut self) -> Result<Arc<DgSpace>> {
        let dim = self.u8()? as usize;
        let root = [self.u32()?, self.u32()?];
        let lo = [self.f64()?, self.f64()?];
        let hi = [self.f64()?, self.f64()?];
        let generation = self.u64()?;
        let n = self.len("leaf")?;
        let mut keys = Vec::with_capacity(n);
        for _ in 0..n {
            keys.push(CellKey { level: self.u8()?, i: self.u32()?, j: self.u32()? });
        }
        let degree = self.u32()? as usize;
        let n_quad = self.u32()? as usize;
        let mesh = PeriodicMesh::from_leaf_keys(dim, lo, hi, root, &keys, generation)?;
        Ok(Arc::new(DgSpace::with_quadrature(Arc::new(mesh), degree, n_quad)?))
    }
}

fn checksum(data: &[u8]) -> [u8; 8] {
    Sha256::digest(data)[..8].try_into().unwrap()
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.f64(ck.t);
    w.u64(ck.step);
    w.f64(ck.reference.mass);
    w.u64(ck.reference.momentum.len() as u64);
    for p in &ck.reference.momentum {
        w.f64(*p);
    }
    w.f64(ck.reference.total_energy);
    let st = &ck.state;
    w.u8(match st.weight {
        Weight::Unweighted => 0,
        Weight::Gaussian => 1,
    });
    w.u64(st.m as u64);
    w.space(st.space_x());
    w.space(st.space_v());
    w.matrix(&st.x.coefs);
    w.matrix(&st.s);
    w.matrix(&st.v.coefs);
    let sum = checksum(&w.0);
    w.0.extend_from_slice(&sum);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if checksum(body) != sum {
        return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
    }
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let t = r.f64()?;
    let step = r.u64()?;
    let mass = r.f64()?;
    let n = r.len("momentum")?;
    let momentum = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let total_energy = r.f64()?;
    let weight = match r.u8()? {
        0 => Weight::Unweighted,
        1 => Weight::Gaussian,
        w => return Err(Error::Checkpoint(format!("unknown weight tag {w}"))),
    };
    let m = r.u64()? as usize;
    let space_x = r.space()?;
    let space_v = r.space()?;
    let x = FieldBundle::new(space_x, r.matrix()?)?;
    let s = r.matrix()?;
    let v = FieldBundle::new(space_v, r.matrix()?)?;
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after state".into()));
    }
    let state = LowRankState::new(x, s, v, m, weight)?;
    Ok(Checkpoint { t, step, reference: Reference { mass, momentum, total_energy }, state })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(ck))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}
