//! `NPCKPT1` checkpoint format: the magic, a `u32` tensor count, then per tensor a
//! `u32`-length-prefixed UTF-8 name, `u32` rank, `u32` dims and row-major `f32`
//! data, all little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::embedder::{ByteReader, EmbedderParams};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{DecoderParams, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"NPCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn tensors_of(params: &ModelParams) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = params
        .trainable()
        .into_iter()
        .map(|(name, shape, data)| Tensor {
            name: name.to_string(),
            shape,
            data: data.iter().map(|&v| v as f32).collect(),
        })
        .collect();
    out.push(Tensor {
        name: "encoder.lambda".into(),
        shape: vec![1],
        data: vec![params.embedder.lambda as f32],
    });
    out.push(Tensor {
        name: "encoder.window".into(),
        shape: vec![1],
        data: vec![params.embedder.window as f32],
    });
    out
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let tensors = tensors_of(params);
    let mut buf = CHECKPOINT_MAGIC.to_vec();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let truncated = |_| format("truncated checkpoint".into());
    if !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(format("missing NPCKPT1 magic".into()));
    }
    let mut r = ByteReader::new(&bytes[CHECKPOINT_MAGIC.len()..]);
    let count = r.u32().map_err(truncated)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32().map_err(truncated)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name =
            String::from_utf8(name).map_err(|_| format("tensor name is not UTF-8".into()))?;
        let rank = r.u32().map_err(truncated)?;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(truncated)?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| r.f32())
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(truncated)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value in tensor {name}")));
        }
        out.push(Tensor { name, shape, data });
    }
    if !r.is_empty() {
        return Err(format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let mut map: BTreeMap<String, Tensor> = read_tensors(path)?
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect();
    let has_table = map.contains_key("decoder.output_table");
    let mut take = |name: &str, rank: usize| -> Result<(Vec<usize>, Vec<f64>)> {
        let t = map.remove(name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("missing tensor {name}"),
        })?;
        if t.shape.len() != rank {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("tensor {name} has rank {}, expected {rank}", t.shape.len()),
            });
        }
        Ok((t.shape, t.data.into_iter().map(f64::from).collect()))
    };
    let matrix = |(shape, data): (Vec<usize>, Vec<f64>)| Matrix::from_vec(shape[0], shape[1], data);
    let table = matrix(take("encoder.table", 2)?);
    let proj = matrix(take("encoder.proj", 2)?);
    let bias = take("encoder.bias", 1)?.1;
    let lambda = take("encoder.lambda", 1)?.1[0];
    let window = take("encoder.window", 1)?.1[0] as usize;
    let dproj = matrix(take("decoder.proj", 2)?);
    let dbias = take("decoder.bias", 1)?.1;
    let bos = take("decoder.bos", 1)?.1;
    let output_table = if has_table {
        Some(matrix(take("decoder.output_table", 2)?))
    } else {
        None
    };
    let params = ModelParams {
        embedder: EmbedderParams {
            table,
            proj,
            bias,
            lambda,
            window,
        },
        decoder: DecoderParams {
            proj: dproj,
            bias: dbias,
            bos,
        },
        output_table,
    };
    check_shapes(&params).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })?;
    Ok(params)
}

fn check_shapes(p: &ModelParams) -> std::result::Result<(), String> {
    let d = p.embedder.table.cols();
    let ok = p.embedder.proj.rows() == d
        && p.embedder.proj.cols() == d
        && p.embedder.bias.len() == d
        && p.decoder.proj.rows() == d
        && p.decoder.proj.cols() == 2 * d
        && p.decoder.bias.len() == d
        && p.decoder.bos.len() == d
        && p.output_table
            .as_ref()
            .is_none_or(|t| t.cols() == d && t.rows() == p.embedder.table.rows());
    if ok && (0.0..=1.0).contains(&p.embedder.lambda) {
        Ok(())
    } else {
        Err("inconsistent tensor shapes".into())
    }
}
