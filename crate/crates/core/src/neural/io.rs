//! Model files.
//!
//! Layout (little endian): magic `SPNN`, u16 version, u8 architecture tag,
//! input dims as 3×u32, u32 layer count, then the layer table (u8 type code,
//! u8 dim count, u32 dims, and for batch-norm/dropout their f64 settings),
//! then every stored tensor as f32 in layer order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Arch, History, Layer, Network};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SPNN";
pub const MODEL_VERSION: u16 = 1;

fn code(layer: &Layer) -> u8 {
    match layer {
        Layer::Conv2d { .. } => 1,
        Layer::Relu => 2,
        Layer::MaxPool { .. } => 3,
        Layer::BatchNorm { .. } => 4,
        Layer::Flatten => 5,
        Layer::Dense { .. } => 6,
        Layer::Dropout { .. } => 7,
    }
}

fn table_dims(layer: &Layer) -> Vec<usize> {
    match layer {
        Layer::Conv2d { kh, kw, cin, cout, .. } => vec![*kh, *kw, *cin, *cout],
        Layer::MaxPool { ph, pw } => vec![*ph, *pw],
        Layer::BatchNorm { channels, .. } => vec![*channels],
        Layer::Dense { inputs, outputs, .. } => vec![*inputs, *outputs],
        Layer::Relu | Layer::Flatten | Layer::Dropout { .. } => vec![],
    }
}

fn stored_tensors(layer: &Layer) -> Vec<&[f64]> {
    match layer {
        Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
            ..
        } => vec![gamma, beta, running_mean, running_var],
        other => other.params(),
    }
}

fn u32_of(v: usize) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::Format(format!("dimension {v} does not fit the model format")))
}

/// Serialize a network; parameters are stored as f32.
pub fn write_model<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&[net.arch.tag()])?;
    for d in net.input_dims() {
        w.write_all(&u32_of(d)?)?;
    }
    w.write_all(&u32_of(net.layers().len())?)?;
    for layer in net.layers() {
        let dims = table_dims(layer);
        w.write_all(&[code(layer), dims.len() as u8])?;
        for d in dims {
            w.write_all(&u32_of(d)?)?;
        }
        match layer {
            Layer::BatchNorm { momentum, eps, .. } => {
                w.write_all(&momentum.to_le_bytes())?;
                w.write_all(&eps.to_le_bytes())?;
            }
            Layer::Dropout { rate } => w.write_all(&rate.to_le_bytes())?,
            _ => {}
        }
    }
    let mut buf = Vec::new();
    for layer in net.layers() {
        for t in stored_tensors(layer) {
            buf.clear();
            buf.extend(t.iter().flat_map(|&v| (v as f32).to_le_bytes()));
            w.write_all(&buf)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated model file: {e}")))?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    Ok(u32::from_le_bytes(read_exact(r)?) as usize)
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact(r)?))
}

pub fn read_model<R: Read>(mut r: R) -> Result<Network> {
    if &read_exact::<4>(&mut r)? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u16::from_le_bytes(read_exact(&mut r)?);
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let arch = Arch::from_tag(read_exact::<1>(&mut r)?[0])?;
    let input_dims = [read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?];
    let count = read_u32(&mut r)?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let [code, ndims] = read_exact::<2>(&mut r)?;
        let dims: Vec<usize> = (0..ndims).map(|_| read_u32(&mut r)).collect::<Result<_>>()?;
        let want = |n: usize| -> Result<()> {
            if dims.len() != n {
                return Err(Error::Format(format!(
                    "layer code {code} expects {n} dims, found {}",
                    dims.len()
                )));
            }
            Ok(())
        };
        let layer = match code {
            1 => {
                want(4)?;
                Layer::conv(dims[0], dims[1], dims[2], dims[3])
            }
            2 => Layer::Relu,
            3 => {
                want(2)?;
                Layer::MaxPool {
                    ph: dims[0],
                    pw: dims[1],
                }
            }
            4 => {
                want(1)?;
                let mut bn = Layer::batch_norm(dims[0]);
                if let Layer::BatchNorm { momentum, eps, .. } = &mut bn {
                    *momentum = read_f64(&mut r)?;
                    *eps = read_f64(&mut r)?;
                }
                bn
            }
            5 => Layer::Flatten,
            6 => {
                want(2)?;
                Layer::dense(dims[0], dims[1])
            }
            7 => Layer::Dropout {
                rate: read_f64(&mut r)?,
            },
            other => return Err(Error::Format(format!("unknown layer code {other}"))),
        };
        layers.push(layer);
    }
    for layer in &mut layers {
        let targets: Vec<&mut Vec<f64>> = match layer {
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } => vec![gamma, beta, running_mean, running_var],
            other => other.params_mut(),
        };
        for t in targets {
            for v in t.iter_mut() {
                *v = f32::from_le_bytes(read_exact(&mut r)?) as f64;
            }
        }
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after model parameters".into()));
    }
    let net = Network::new(arch, input_dims, layers)?;
    for layer in net.layers() {
        if let Layer::BatchNorm { running_var, .. } = layer {
            if running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Format("batch-norm running variance must be positive".into()));
            }
        }
    }
    Ok(net)
}

impl Network {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_model(self, BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_model(BufReader::new(File::open(path)?))
    }
}

pub fn write_history(history: &History, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, history)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<History> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
