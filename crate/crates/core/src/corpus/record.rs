//! Binary feature record: a little-endian header followed by raw `f32` data.
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"MSFR"
//! 4       4     version (u32, currently 1)
//! 8       4     rows    (u32)
//! 12      4     cols    (u32)
//! 16      4*r*c payload, row-major f32
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: [u8; 4] = *b"MSFR";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("record shorter than its header".into()));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported record version {version}")));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "payload of {} bytes does not match shape {rows}x{cols}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::new(rows, cols, data)
}

/// Writes via a temporary sibling and rename, so readers never see a partial file.
pub fn write(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &encode(m))
}

pub fn read(path: &Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::ingest(path, e))?
        .read_to_end(&mut bytes)?;
    decode(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(rows in 0usize..6, cols in 1usize..5, seed in any::<u32>()) {
            let data: Vec<f32> = (0..rows * cols)
                .map(|i| f32::from_bits(seed.wrapping_mul(i as u32 + 1) & 0x7f7f_ffff))
                .collect();
            let m = Matrix::new(rows, cols, data).unwrap();
            let back = decode(&encode(&m)).unwrap();
            prop_assert!(back.bit_eq(&m));
        }
    }

    #[test]
    fn header_layout() {
        let m = Matrix::new(1, 2, vec![1.0, -2.0]).unwrap();
        let b = encode(&m);
        assert_eq!(&b[..4], b"MSFR");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[1, 0, 0, 0]);
        assert_eq!(&b[12..16], &[2, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_corruption() {
        let m = Matrix::zeros(2, 2);
        let mut b = encode(&m);
        b.pop();
        assert!(decode(&b).is_err());
        let mut b = encode(&m);
        b[0] = b'X';
        assert!(decode(&b).is_err());
    }
}
