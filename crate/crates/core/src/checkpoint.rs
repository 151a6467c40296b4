//! Flat binary checkpoint: a header carrying the model configuration and a
//! format version, followed by (name, shape, scalar-type, little-endian
//! data) records in parameter registration order. Round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FusionMode, ModelConfig, Task};
use crate::params::ParamStore;
use crate::scalar::{Dtype, Scalar};
use crate::shape::Shape;

const MAGIC: &[u8; 8] = b"DINCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Record {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Shape,
    pub data: Vec<u8>,
}

pub struct Checkpoint {
    pub version: u32,
    pub dtype: Dtype,
    pub config: ModelConfig,
    pub records: Vec<Record>,
}

pub fn save<S: Scalar>(path: &Path, config: &ModelConfig, store: &ParamStore<S>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[S::DTYPE.tag()])?;
    write_config(&mut w, config)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, param) in store.iter() {
        let tensor = param.borrow();
        let shape = tensor.shape();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[S::DTYPE.tag()])?;
        for dim in [shape.n, shape.c, shape.h, shape.w] {
            w.write_all(&(dim as u32).to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(tensor.data().len() * S::DTYPE.size_bytes());
        for &v in tensor.data() {
            v.write_le(&mut bytes);
        }
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let dtype = Dtype::from_tag(read_u8(&mut r)?)
        .ok_or_else(|| Error::Format("unknown scalar type in header".into()))?;
    let config = read_config(&mut r)?;
    let count = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("non-utf8 parameter name".into()))?;
        let rec_dtype = Dtype::from_tag(read_u8(&mut r)?)
            .ok_or_else(|| Error::Format(format!("unknown scalar type for '{name}'")))?;
        let dims: [u32; 4] = [
            read_u32(&mut r)?,
            read_u32(&mut r)?,
            read_u32(&mut r)?,
            read_u32(&mut r)?,
        ];
        let shape = Shape::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, dims[3] as usize);
        let mut data = vec![0u8; shape.numel() * rec_dtype.size_bytes()];
        r.read_exact(&mut data)?;
        records.push(Record {
            name,
            dtype: rec_dtype,
            shape,
            data,
        });
    }
    Ok(Checkpoint {
        version,
        dtype,
        config,
        records,
    })
}

/// Install checkpoint records into a parameter store built for the same
/// configuration. Names, shapes and scalar type must match exactly.
pub fn apply<S: Scalar>(ckpt: &Checkpoint, store: &ParamStore<S>) -> Result<()> {
    if ckpt.dtype != S::DTYPE {
        return Err(Error::Format(format!(
            "checkpoint holds {} parameters, store expects {}",
            ckpt.dtype.name(),
            S::DTYPE.name()
        )));
    }
    if ckpt.records.len() != store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} records, model has {} parameters",
            ckpt.records.len(),
            store.len()
        )));
    }
    for rec in &ckpt.records {
        let step = S::DTYPE.size_bytes();
        let mut values = Vec::with_capacity(rec.shape.numel());
        for chunk in rec.data.chunks_exact(step) {
            values.push(S::read_le(chunk));
        }
        store.set_data(&rec.name, values)?;
    }
    Ok(())
}

fn write_config<W: Write>(w: &mut W, cfg: &ModelConfig) -> Result<()> {
    w.write_all(&[cfg.task.tag()])?;
    for v in [
        cfg.scale,
        cfg.branches,
        cfg.blocks_per_branch,
        cfg.rdbs_per_block,
        cfg.layers_per_rdb,
        cfg.growth,
        cfg.channels,
        cfg.reduction,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&cfg.gamma.to_le_bytes())?;
    w.write_all(&[cfg.fusion.tag()])?;
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<ModelConfig> {
    let task = Task::from_tag(read_u8(r)?)
        .ok_or_else(|| Error::Format("unknown task tag in checkpoint".into()))?;
    let mut fields = [0usize; 8];
    for f in &mut fields {
        *f = read_u32(r)? as usize;
    }
    let mut gamma_bytes = [0u8; 8];
    r.read_exact(&mut gamma_bytes)?;
    let fusion = FusionMode::from_tag(read_u8(r)?)
        .ok_or_else(|| Error::Format("unknown fusion tag in checkpoint".into()))?;
    Ok(ModelConfig {
        task,
        scale: fields[0],
        branches: fields[1],
        blocks_per_branch: fields[2],
        rdbs_per_block: fields[3],
        layers_per_rdb: fields[4],
        growth: fields[5],
        channels: fields[6],
        reduction: fields[7],
        gamma: f64::from_le_bytes(gamma_bytes),
        fusion,
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}
