//! `M2TW` weight files.
//!
//! Layout (little-endian): the 4-byte magic `M2TW`, then records until EOF:
//! `u32` name length, UTF-8 name bytes, `u32` rank, `rank` x `u32` dims,
//! `prod(dims)` x `f32` payload.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"M2TW";

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "M2TW",
        msg: msg.into(),
    }
}

pub fn write<W: Write>(w: &mut W, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(MAGIC)?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| bad("truncated record"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read<R: Read>(r: &mut R) -> Result<BTreeMap<String, Tensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("missing magic"))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {:?}", magic)));
    }
    let mut out = BTreeMap::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first[..1]) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
        r.read_exact(&mut first[1..])
            .map_err(|_| bad("truncated name length"))?;
        let name_len = u32::from_le_bytes(first) as usize;
        if name_len > 1 << 16 {
            return Err(bad(format!("implausible name length {}", name_len)));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let rank = read_u32(r)? as usize;
        if rank > 8 {
            return Err(bad(format!("rank {} for `{}`", rank, name)));
        }
        let dims = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)
            .map_err(|_| bad(format!("truncated payload for `{}`", name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out.insert(name.clone(), Tensor::new(dims, data)?).is_some() {
            return Err(bad(format!("duplicate tensor `{}`", name)));
        }
    }
    Ok(out)
}

pub fn write_file(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    read(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic() {
        assert!(read(&mut &b"NOPE"[..]).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), Tensor::full(vec![2, 2], 1.0));
        let mut buf = Vec::new();
        write(&mut buf, &m).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read(&mut &buf[..]).is_err());
    }

    #[test]
    fn exact_layout() {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let mut buf = Vec::new();
        write(&mut buf, &m).unwrap();
        let mut expected = b"M2TW".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(b"w");
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }
}
