//! `QMH1` hierarchy files.
//!
//! Little-endian: magic `QMH1`, `u32` level count, then per level
//! `u32` vertex count, `3 x f64` per vertex, `u32` face count, `4 x u32` per
//! face, `u32` parent count (0 for level 0, else the face count) and one
//! `u32` parent index per face.

use std::io::{Read, Write};
use std::path::Path;

use super::mesh::QuadMesh;
use super::subdiv::QuadMeshHierarchy;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QMH1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "QMH1",
        msg: msg.into(),
    }
}

pub fn write<W: Write>(w: &mut W, h: &QuadMeshHierarchy) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(h.n_levels() as u32).to_le_bytes())?;
    for (l, m) in h.levels().iter().enumerate() {
        w.write_all(&(m.n_vertices() as u32).to_le_bytes())?;
        for v in m.vertices() {
            for c in v {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        w.write_all(&(m.n_faces() as u32).to_le_bytes())?;
        for f in m.faces() {
            for i in f {
                w.write_all(&i.to_le_bytes())?;
            }
        }
        let parents: &[u32] = if l == 0 { &[] } else { h.parents(l)? };
        w.write_all(&(parents.len() as u32).to_le_bytes())?;
        for p in parents {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

fn u32_of<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(u32::from_le_bytes(b))
}

fn f64_of<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
    Ok(f64::from_le_bytes(b))
}

pub fn read<R: Read>(r: &mut R) -> Result<QuadMeshHierarchy> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("missing magic"))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {:?}", magic)));
    }
    let n_levels = u32_of(r)? as usize;
    if n_levels == 0 || n_levels > 16 {
        return Err(bad(format!("implausible level count {}", n_levels)));
    }
    let mut levels = Vec::with_capacity(n_levels);
    let mut parents = Vec::new();
    for l in 0..n_levels {
        let nv = u32_of(r)? as usize;
        let vertices = (0..nv)
            .map(|_| Ok([f64_of(r)?, f64_of(r)?, f64_of(r)?]))
            .collect::<Result<Vec<_>>>()?;
        let nf = u32_of(r)? as usize;
        let faces = (0..nf)
            .map(|_| Ok([u32_of(r)?, u32_of(r)?, u32_of(r)?, u32_of(r)?]))
            .collect::<Result<Vec<_>>>()?;
        let np = u32_of(r)? as usize;
        let p = (0..np).map(|_| u32_of(r)).collect::<Result<Vec<_>>>()?;
        if l == 0 && np != 0 {
            return Err(bad("level 0 carries parent links"));
        }
        if l > 0 {
            parents.push(p);
        }
        levels.push(QuadMesh::new(vertices, faces)?);
    }
    QuadMeshHierarchy::from_parts(levels, parents)
}

pub fn save(path: &Path, h: &QuadMeshHierarchy) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf, h)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<QuadMeshHierarchy> {
    let bytes = std::fs::read(path)?;
    read(&mut &bytes[..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, subdivide};

    #[test]
    fn round_trip_is_identical() {
        let h = subdivide(&shapes::unit_cube(), 3).unwrap();
        let mut buf = Vec::new();
        write(&mut buf, &h).unwrap();
        assert_eq!(&buf[..4], b"QMH1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(read(&mut &buf[..]).unwrap(), h);
    }

    #[test]
    fn truncated_file_is_error() {
        let h = subdivide(&shapes::unit_cube(), 2).unwrap();
        let mut buf = Vec::new();
        write(&mut buf, &h).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read(&mut &buf[..]).is_err());
    }
}
