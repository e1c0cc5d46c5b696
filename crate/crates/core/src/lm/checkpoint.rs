//! Versioned little-endian checkpoint format.
//!
//! ```text
//! magic        8 bytes   "SWKDCKPT"
//! version      u32       currently 1
//! arch         u32       0 = gru, 1 = attn1
//! vocab_size   u32
//! embed_dim    u32
//! hidden_dim   u32
//! context_len  u32
//! block_count  u32
//! per block:   rows u32, cols u32, rows*cols f64 values (row-major)
//! ```
//!
//! Blocks appear in the architecture's declared order; nothing may follow
//! the last block.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Arch, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numcore::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"SWKDCKPT";
pub const VERSION: u32 = 1;

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    read_params(&mut r)
}

pub fn write_params<W: Write>(params: &ModelParams, w: &mut W) -> Result<()> {
    let c = params.config();
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(
        w,
        match c.arch {
            Arch::Gru => 0,
            Arch::Attn1 => 1,
        },
    )?;
    for v in [c.vocab_size, c.embed_dim, c.hidden_dim, c.context_len] {
        put_u32(w, v as u32)?;
    }
    write_blocks(params.blocks(), w)
}

pub(crate) fn write_blocks<W: Write>(blocks: &[DenseMatrix], w: &mut W) -> Result<()> {
    put_u32(w, blocks.len() as u32)?;
    for b in blocks {
        put_u32(w, b.rows() as u32)?;
        put_u32(w, b.cols() as u32)?;
        for v in b.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_params<R: Read>(r: &mut R) -> Result<ModelParams> {
    let params = read_embedded_params(r)?;
    expect_eof(r)?;
    Ok(params)
}

/// Read one checkpoint record, leaving any following bytes unread.
pub(crate) fn read_embedded_params<R: Read>(r: &mut R) -> Result<ModelParams> {
    read_header(r, MAGIC, VERSION)?;
    let arch = match get_u32(r)? {
        0 => Arch::Gru,
        1 => Arch::Attn1,
        other => return Err(Error::format(format!("unknown architecture tag {other}"))),
    };
    let config = ModelConfig {
        arch,
        vocab_size: get_u32(r)? as usize,
        embed_dim: get_u32(r)? as usize,
        hidden_dim: get_u32(r)? as usize,
        context_len: get_u32(r)? as usize,
    };
    config
        .validate()
        .map_err(|e| Error::format(format!("checkpoint config invalid: {e}")))?;
    let blocks = read_blocks(r)?;
    ModelParams::from_blocks(config, blocks)
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 8], version: u32) -> Result<()> {
    let mut got = [0u8; 8];
    fill(r, &mut got)?;
    if &got != magic {
        return Err(Error::format(format!(
            "bad magic header {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let v = get_u32(r)?;
    if v != version {
        return Err(Error::format(format!(
            "unsupported format version {v}, this build reads version {version}"
        )));
    }
    Ok(())
}

pub(crate) fn read_blocks<R: Read>(r: &mut R) -> Result<Vec<DenseMatrix>> {
    let count = get_u32(r)? as usize;
    if count > 64 {
        return Err(Error::format(format!("implausible block count {count}")));
    }
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = get_u32(r)? as usize;
        let cols = get_u32(r)? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| Error::format(format!("implausible block shape {rows}x{cols}")))?;
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            fill(r, &mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        blocks.push(
            DenseMatrix::from_vec(rows, cols, data)
                .map_err(|e| Error::format(format!("bad parameter block: {e}")))?,
        );
    }
    Ok(blocks)
}

pub(crate) fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::format("trailing bytes after last block")),
    }
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::format("file is truncated"),
        _ => Error::Io(e),
    })
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    fill(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    fill(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::SeededRng;

    fn sample(arch: Arch) -> ModelParams {
        let cfg = ModelConfig {
            arch,
            vocab_size: 7,
            embed_dim: 3,
            hidden_dim: 5,
            context_len: 9,
        };
        ModelParams::init(cfg, &mut SeededRng::new(12)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in [Arch::Gru, Arch::Attn1] {
            let p = sample(arch);
            let mut buf = Vec::new();
            write_params(&p, &mut buf).unwrap();
            let back = read_params(&mut buf.as_slice()).unwrap();
            assert_eq!(back.config(), p.config());
            for (a, b) in back.flatten().iter().zip(p.flatten()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn truncated_file_is_format_error() {
        let mut buf = Vec::new();
        write_params(&sample(Arch::Gru), &mut buf).unwrap();
        for cut in [0, 5, 12, 40, buf.len() - 1] {
            let err = read_params(&mut &buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "{cut}: {err}");
        }
    }

    #[test]
    fn wrong_magic_names_expected_header() {
        let mut buf = Vec::new();
        write_params(&sample(Arch::Gru), &mut buf).unwrap();
        buf[0] = b'X';
        let msg = read_params(&mut buf.as_slice()).unwrap_err().to_string();
        assert!(msg.contains("SWKDCKPT"), "{msg}");
    }

    #[test]
    fn wrong_version_is_reported() {
        let mut buf = Vec::new();
        write_params(&sample(Arch::Gru), &mut buf).unwrap();
        buf[8..12].copy_from_slice(&7u32.to_le_bytes());
        let msg = read_params(&mut buf.as_slice()).unwrap_err().to_string();
        assert!(msg.contains("version 7"), "{msg}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut buf = Vec::new();
        write_params(&sample(Arch::Attn1), &mut buf).unwrap();
        buf.push(0);
        assert!(read_params(&mut buf.as_slice()).is_err());
    }
}
