//! Parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"LSATCKPT"  u32 version
//! u64 manifest_len  manifest_len bytes of JSON (model configuration)
//! u64 entry_count
//! per entry: u32 name_len, name (UTF-8), u32 rank, rank × u64 dims,
//!            product(dims) × f64 raw values
//! ```
//!
//! Values are written as raw IEEE-754 bits, so a save/load cycle is exact.

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::TensorError;

const MAGIC: &[u8; 8] = b"LSATCKPT";
const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> TensorError {
    TensorError::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    manifest: &serde_json::Value,
    store: &ParamStore,
) -> Result<(), TensorError> {
    let manifest =
        serde_json::to_vec(manifest).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&manifest).map_err(io_err)?;
    w.write_all(&(store.len() as u64).to_le_bytes())
        .map_err(io_err)?;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        let mut buf = Vec::with_capacity(p.tensor.len() * 8);
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, TensorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(serde_json::Value, ParamStore), TensorError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let mlen = read_u64(&mut r)? as usize;
    let mut mbytes = vec![0u8; mlen];
    r.read_exact(&mut mbytes).map_err(io_err)?;
    let manifest =
        serde_json::from_slice(&mbytes).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    let count = read_u64(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let mut nbytes = vec![0u8; nlen];
        r.read_exact(&mut nbytes).map_err(io_err)?;
        let name = String::from_utf8(nbytes).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 3 {
            return Err(TensorError::Rank(rank));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw).map_err(io_err)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok((manifest, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SplitRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = SplitRng::new(1);
        let mut store = ParamStore::new();
        store.add_glorot("enc.w", 3, 5, &mut rng).unwrap();
        store
            .add(
                "odd",
                Tensor::new(
                    vec![2, 1, 2],
                    vec![f64::MIN_POSITIVE, -0.0, 1e308, 1.0 / 3.0],
                )
                .unwrap(),
            )
            .unwrap();
        store.add("s", Tensor::scalar(f64::EPSILON)).unwrap();
        let manifest = serde_json::json!({"d_model": 8});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &manifest, &store).unwrap();
        let (m2, s2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(m2, manifest);
        for ((_, a), (_, b)) in store.iter().zip(s2.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor.shape(), b.tensor.shape());
            let bits_a: Vec<u64> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
    }
}
