//! Binary parameter checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic     4 bytes   "LSCP"
//! version   u32       1
//! n_widths  u32       number of layer widths (≥ 2)
//! widths    u32 × n_widths
//! n_params  u64       must equal Σ widths[l]·widths[l+1]
//! params    f64 × n_params, canonical layout
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetworkSpec, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LSCP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, spec: &NetworkSpec, theta: &ParamVector) -> Result<()> {
    spec.check_params(theta)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(spec.widths().len() as u32).to_le_bytes())?;
    for &width in spec.widths() {
        w.write_all(&(width as u32).to_le_bytes())?;
    }
    w.write_all(&(theta.len() as u64).to_le_bytes())?;
    for v in theta.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Returns the stored layer widths and parameters.
pub fn read_checkpoint(path: &Path) -> Result<(Vec<usize>, ParamVector)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a parameter checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_widths = read_u32(&mut r)? as usize;
    if n_widths < 2 {
        return Err(Error::Format(format!("{n_widths} layer widths")));
    }
    let widths = (0..n_widths)
        .map(|_| read_u32(&mut r).map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n_params = u64::from_le_bytes(b8) as usize;
    let expected: usize = widths.windows(2).map(|w| w[0] * w[1]).sum();
    if n_params != expected {
        return Err(Error::Format(format!(
            "{n_params} parameters stored for widths {widths:?} ({expected} expected)"
        )));
    }
    let mut values = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Ok((widths, ParamVector::new(values)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.bin");
        let spec = NetworkSpec::classifier(&[4, 3, 1], 0.0);
        let mut rng = RngStream::new(1, 0);
        let mut theta = spec.init_gaussian(1.0, &mut rng).unwrap();
        theta[0] = -0.0;
        theta[1] = f64::MIN_POSITIVE / 3.0;
        write_checkpoint(&path, &spec, &theta).unwrap();
        let (widths, back) = read_checkpoint(&path).unwrap();
        assert_eq!(widths, vec![4, 3, 1]);
        let bits = |p: &ParamVector| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&theta), bits(&back));
        // 4 magic + 4 version + 4 count + 3·4 widths + 8 count + 15·8 values
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 4 + 4 + 4 + 12 + 8 + 120);
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));

        let spec = NetworkSpec::classifier(&[2, 1], 0.0);
        write_checkpoint(&path, &spec, &ParamVector::zeros(2)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Io(_))));
    }
}
