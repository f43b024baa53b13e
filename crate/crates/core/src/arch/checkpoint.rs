//! Binary model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      4 bytes  "DVRG"
//! version    u32
//! family     u8       0 = ensemble, 1 = dual branch
//! attention  u8
//! reserved   u16      0
//! branches   u32      B (1 for dual branch)
//! classes    u32      K
//! branch_max u32
//! seed       u64
//! lambda     f64      (0 for ensembles)
//! input      3 × u32  channels, height, width
//! tensors    u32      number of parameter tensors
//! shapes     per tensor: rank u32, then rank × u32
//! data       per tensor: f64 values in declaration order
//! ```

use super::{DualBranchModel, EnsembleModel, InputShape, Model};
use crate::error::{Error, Result};
use crate::nn::Parameters;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DVRG";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &Model, out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let (family, attention, branches, branch_max, seed, lambda) = match model {
        Model::Ensemble(m) => (0u8, m.attention(), m.branch_count(), m.branch_max(), m.seed(), 0.0),
        Model::Dual(m) => (1u8, m.attention(), 1, 1, 0, m.lambda()),
    };
    buf.push(family);
    buf.push(attention as u8);
    buf.extend_from_slice(&0u16.to_le_bytes());
    for v in [branches, model.class_count(), branch_max] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&lambda.to_le_bytes());
    let input = model.input_shape();
    for v in [input.channels, input.height, input.width] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    let params = model.params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in &params {
        buf.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for p in &params {
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!("checkpoint ends at byte {}", self.bytes.len())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4).map_err(|_| Error::MalformedHeader("missing magic".into()))? != CHECKPOINT_MAGIC {
        return Err(Error::MalformedHeader("bad magic, expected DVRG".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(Error::MalformedHeader(format!("unsupported checkpoint version {version}")));
    }
    let family = c.u8()?;
    let attention = match c.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::MalformedHeader(format!("attention flag {v}"))),
    };
    if c.u16()? != 0 {
        return Err(Error::MalformedHeader("reserved bytes are not zero".into()));
    }
    let branches = c.u32()?;
    let classes = c.u32()?;
    let branch_max = c.u32()?;
    let seed = c.u64()?;
    let lambda = c.f64()?;
    let input = InputShape { channels: c.u32()?, height: c.u32()?, width: c.u32()? };

    let mut model = match family {
        0 => {
            if branches == 0 || branches > branch_max {
                return Err(Error::MalformedHeader(format!("{branches} branches with capacity {branch_max}")));
            }
            let mut m = EnsembleModel::new(input, classes, branch_max, attention, seed)?;
            while m.branch_count() < branches {
                m.add_branch()?;
            }
            Model::Ensemble(m)
        }
        1 => Model::Dual(DualBranchModel::new(input, classes, lambda, attention, 0)?),
        f => return Err(Error::MalformedHeader(format!("unknown model family tag {f}"))),
    };

    let count = c.u32()?;
    let mut params = model.params_mut();
    if count != params.len() {
        return Err(Error::MalformedHeader(format!("{count} tensors, model expects {}", params.len())));
    }
    for p in params.iter() {
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        if shape != p.shape() {
            return Err(Error::MalformedHeader(format!("tensor shape {shape:?}, model expects {:?}", p.shape())));
        }
    }
    for p in params.iter_mut() {
        for v in p.data_mut() {
            *v = c.f64()?;
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::MalformedHeader(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(&mut std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> InputShape {
        InputShape { channels: 1, height: 8, width: 8 }
    }

    fn bytes(model: &Model) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(model, &mut out).unwrap();
        out
    }

    #[test]
    fn ensemble_round_trip() {
        let mut m = EnsembleModel::new(small(), 5, 4, true, 12).unwrap();
        m.add_branch().unwrap();
        m.branches[1].head.bias.data_mut()[2] = 0.123;
        let model = Model::Ensemble(m);
        let b = bytes(&model);
        assert_eq!(&b[..4], b"DVRG");
        let back = read_checkpoint(&mut b.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(bytes(&back), b);
    }

    #[test]
    fn dual_round_trip() {
        let mut m = DualBranchModel::new(small(), 3, 0.6, false, 1).unwrap();
        m.local_head.weight.data_mut()[0] = -7.5;
        let model = Model::Dual(m);
        let b = bytes(&model);
        let back = read_checkpoint(&mut b.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(bytes(&back), b);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = Model::Ensemble(EnsembleModel::new(small(), 3, 2, false, 0).unwrap());
        let b = bytes(&model);
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::MalformedHeader(_))));
        assert!(matches!(read_checkpoint(&mut &b[..b.len() - 3]), Err(Error::Truncated(_))));
        let mut extra = b.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
        let mut family = b;
        family[8] = 9;
        assert!(matches!(read_checkpoint(&mut family.as_slice()), Err(Error::MalformedHeader(_))));
    }
}
