//! Versioned binary parameter checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size   field
//! 0       8      magic "CDQCKPT\0"
//! 8       4      format version (u32) = 1
//! 12      8      seed (u64)
//! 20      8      step (u64)
//! 28      4      net count N (u32)
//! N times:
//!         4      name length L (u32)
//!         L      name, UTF-8
//!         4      width count W (u32)
//!         4*W    layer widths (u32)
//!         8*P    parameters (f64): per layer, weight row-major
//!                [fan_in, fan_out], then bias [fan_out]
//! then:
//!         4      scalar count S (u32)
//! S times:
//!         4      name length L (u32)
//!         L      name, UTF-8
//!         8      value (f64)
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::mlp::{Layer, MlpNet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CDQCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub seed: u64,
    pub step: u64,
    pub nets: Vec<(String, MlpNet)>,
    pub scalars: Vec<(String, f64)>,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

fn write_name<W: Write>(w: &mut W, name: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(name.len() as u32)?;
    w.write_all(name.as_bytes())
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LE>().map_err(io_err)? as usize;
    if len > 1 << 16 {
        return Err(Error::Checkpoint(format!("implausible name length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(io_err)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

impl Checkpoint {
    pub fn net(&self, name: &str) -> Option<&MlpNet> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalars.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let inner = |w: &mut W| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LE>(VERSION)?;
            w.write_u64::<LE>(self.seed)?;
            w.write_u64::<LE>(self.step)?;
            w.write_u32::<LE>(self.nets.len() as u32)?;
            for (name, net) in &self.nets {
                write_name(w, name)?;
                w.write_u32::<LE>(net.widths().len() as u32)?;
                for &width in net.widths() {
                    w.write_u32::<LE>(width as u32)?;
                }
                for p in net.params() {
                    for &v in p.data() {
                        w.write_f64::<LE>(v)?;
                    }
                }
            }
            w.write_u32::<LE>(self.scalars.len() as u32)?;
            for (name, v) in &self.scalars {
                write_name(w, name)?;
                w.write_f64::<LE>(*v)?;
            }
            Ok(())
        };
        inner(w).map_err(io_err)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.read_u32::<LE>().map_err(io_err)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let seed = r.read_u64::<LE>().map_err(io_err)?;
        let step = r.read_u64::<LE>().map_err(io_err)?;
        let n_nets = r.read_u32::<LE>().map_err(io_err)?;
        let mut nets = Vec::with_capacity(n_nets as usize);
        for _ in 0..n_nets {
            let name = read_name(r)?;
            let n_widths = r.read_u32::<LE>().map_err(io_err)? as usize;
            if !(2..=64).contains(&n_widths) {
                return Err(Error::Checkpoint(format!("net `{name}`: {n_widths} widths")));
            }
            let widths = (0..n_widths)
                .map(|_| r.read_u32::<LE>().map(|v| v as usize))
                .collect::<std::io::Result<Vec<_>>>()
                .map_err(io_err)?;
            let mut read_tensor = |shape: &[usize]| -> Result<Tensor> {
                let n: usize = shape.iter().product();
                let mut data = vec![0.0; n];
                r.read_f64_into::<LE>(&mut data).map_err(io_err)?;
                Tensor::new(shape.to_vec(), data)
            };
            let mut layers = Vec::with_capacity(n_widths - 1);
            for w in widths.windows(2) {
                let weight = read_tensor(&[w[0], w[1]])?;
                let bias = read_tensor(&[w[1]])?;
                layers.push(Layer { weight, bias });
            }
            nets.push((name, MlpNet::from_layers(layers)?));
        }
        let n_scalars = r.read_u32::<LE>().map_err(io_err)?;
        let mut scalars = Vec::with_capacity(n_scalars as usize);
        for _ in 0..n_scalars {
            let name = read_name(r)?;
            scalars.push((name, r.read_f64::<LE>().map_err(io_err)?));
        }
        Ok(Self {
            seed,
            step,
            nets,
            scalars,
        })
    }
}
