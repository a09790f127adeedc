//! On-disk formats: the STNSR1 binary tensor container and P5 PGM
//! export for eyeballing masks and predictions.
//!
//! STNSR1 layout: 6-byte magic `STNSR1`, u8 rank, `rank` little-endian
//! u32 dims, then the row-major payload as little-endian f32. Values
//! are stored as f32 and upcast to f64 on read, so anything written by
//! [`save_tensor`] loads back bit-identically as long as it was f32
//! representable to begin with.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{self, Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"STNSR1";

/// Read one tensor from `path`.
pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| error::io(path, e))?;
    let truncated = |detail: &str| Error::Truncated {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < MAGIC.len() + 1 {
        return Err(truncated("shorter than the fixed header"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
        });
    }
    let rank = bytes[MAGIC.len()] as usize;
    if rank == 0 || rank > 4 {
        return Err(Error::DimMismatch {
            path: path.to_path_buf(),
            detail: format!("rank byte is {rank}, expected 1-4"),
        });
    }
    let mut off = MAGIC.len() + 1;
    if bytes.len() < off + 4 * rank {
        return Err(truncated("ends inside the dim table"));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        dims.push(d as usize);
        off += 4;
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::DimMismatch {
            path: path.to_path_buf(),
            detail: format!("zero-sized dimension in {dims:?}"),
        });
    }
    let count: usize = dims.iter().product();
    let want = count.checked_mul(4).ok_or_else(|| Error::DimMismatch {
        path: path.to_path_buf(),
        detail: format!("dims {dims:?} overflow the payload size"),
    })?;
    let payload = &bytes[off..];
    if payload.len() < want {
        return Err(truncated(&format!(
            "payload has {} bytes, dims {dims:?} need {want}"
        , payload.len())));
    }
    if payload.len() > want {
        return Err(Error::DimMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "payload has {} bytes, dims {dims:?} need {want}",
                payload.len()
            ),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(dims, data)
}

/// Write `t` to `path`, downcasting values to f32.
pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(MAGIC.len() + 1 + 4 * t.rank() + 4 * t.len());
    bytes.extend_from_slice(MAGIC);
    bytes.push(t.rank() as u8);
    for &d in t.dims() {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

/// Write a `[H,W]` or `[1,H,W]` tensor of values in `[0,1]` as a binary PGM,
/// scaling by 255 and rounding. A 0/1 mask comes out pure black/white.
pub fn save_pgm(path: &Path, t: &Tensor) -> Result<()> {
    let (h, w) = match t.dims() {
        [h, w] => (*h, *w),
        [1, h, w] => (*h, *w),
        d => {
            return Err(Error::Shape(format!(
                "pgm export needs one [H,W] plane, got {d:?}"
            )))
        }
    };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        t.data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    write_atomic(path, &bytes)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| error::io(path, e))?;
    f.write_all(bytes).map_err(|e| error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sigcn-io-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn roundtrip_is_bit_exact_for_f32_values() {
        let t = Tensor::from_fn(vec![2, 3, 4], |i| (i as f32 * 0.371 - 2.0) as f64);
        let p = tmp("roundtrip.stnsr");
        save_tensor(&p, &t).unwrap();
        let back = load_tensor(&p).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn missing_file_is_io_error() {
        let e = load_tensor(Path::new("/nonexistent/never.stnsr")).unwrap_err();
        assert_eq!(e.category(), "io");
    }

    #[test]
    fn wrong_magic_detected() {
        let p = tmp("magic.stnsr");
        fs::write(&p, b"NOTFMT\x01\x01\x00\x00\x00\x00\x00\x80\x3f").unwrap();
        assert_eq!(load_tensor(&p).unwrap_err().category(), "bad-magic");
    }

    #[test]
    fn truncated_payload_detected() {
        let t = Tensor::filled(vec![4], 1.0);
        let p = tmp("trunc.stnsr");
        save_tensor(&p, &t).unwrap();
        let full = fs::read(&p).unwrap();
        fs::write(&p, &full[..full.len() - 3]).unwrap();
        assert_eq!(load_tensor(&p).unwrap_err().category(), "truncated");
    }

    #[test]
    fn dims_payload_disagreement_detected() {
        let t = Tensor::filled(vec![4], 1.0);
        let p = tmp("dims.stnsr");
        save_tensor(&p, &t).unwrap();
        let mut full = fs::read(&p).unwrap();
        // Claim 3 elements while shipping 4.
        full[7] = 3;
        fs::write(&p, &full).unwrap();
        assert_eq!(load_tensor(&p).unwrap_err().category(), "dim-mismatch");
    }

    #[test]
    fn pgm_header_and_mask_values() {
        let t = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = tmp("mask.pgm");
        save_pgm(&p, &t).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 255, 0]);
    }
}
