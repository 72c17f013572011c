//! Binary checkpoints: a little-endian header with grid metadata followed by
//! the row-major `f64` payload (cell-major, velocity index fastest).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, VplError};
use crate::grid::DistributionField;

const MAGIC: &[u8; 8] = b"VPLCKPT\0";
const VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub v_max: f64,
    pub n_axis: u64,
    pub n_cells: u64,
    pub step: u64,
    pub t: f64,
    /// 0 frozen, 1 full.
    pub mode: u64,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn from_field(f: &DistributionField, v_max: f64, n_axis: usize, step: u64, mode: u64) -> Self {
        Checkpoint { v_max, n_axis: n_axis as u64, n_cells: f.n_cells as u64, step, t: f.time, mode, values: f.values.clone() }
    }

    pub fn into_field(self) -> DistributionField {
        let n_v = (self.n_axis * self.n_axis * self.n_axis) as usize;
        DistributionField { values: self.values, n_cells: self.n_cells as usize, n_v, time: self.t }
    }

    pub fn encode(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(MAGIC)?;
        for word in [VERSION, self.v_max.to_bits(), self.n_axis, self.n_cells, self.step, self.t.to_bits(), self.mode] {
            out.write_all(&word.to_le_bytes())?;
        }
        out.write_all(&(self.values.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn decode(inp: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        inp.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(VplError::Format("not a checkpoint file".into()));
        }
        let mut word = || -> Result<u64> {
            let mut b = [0u8; 8];
            inp.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let version = word()?;
        if version != VERSION {
            return Err(VplError::Format(format!("unsupported checkpoint version {version}")));
        }
        let v_max = f64::from_bits(word()?);
        let n_axis = word()?;
        let n_cells = word()?;
        let step = word()?;
        let t = f64::from_bits(word()?);
        let mode = word()?;
        let len = word()?;
        if len != n_cells * n_axis * n_axis * n_axis {
            return Err(VplError::Format(format!("payload length {len} does not match the grid")));
        }
        let mut buf = vec![0u8; 8 * len as usize];
        inp.read_exact(&mut buf)?;
        let values = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Checkpoint { v_max, n_axis, n_cells, step, t, mode, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.encode(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = Checkpoint { v_max: 6.0, n_axis: 2, n_cells: 1, step: 7, t: 0.1 + 0.2, mode: 1, values: (0..8).map(|i| (i as f64).sin() / 3.0).collect() };
        let mut buf = Vec::new();
        ck.encode(&mut buf).unwrap();
        let back = Checkpoint::decode(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        buf[0] = b'X';
        assert!(Checkpoint::decode(&mut buf.as_slice()).is_err());
    }
}
