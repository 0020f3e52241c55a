//! Binary checkpoint format.
//!
//! ```text
//! magic     b"TTCK"
//! version   u32 LE (currently 1)
//! act       u8   (0 relu, 1 identity)
//! tied      u8
//! dropout   f64 LE
//! dims      u32 LE × 3: feature_dim, hidden_dim, num_layers
//! blobs     f64 LE, row-major, in EncoderParams::tensors order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Activation, EncoderParams, LayerWeights, Linear};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn ck(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &EncoderParams) -> Result<()> {
    params.validate()?;
    let hidden = params.output_dim();
    if params.layers.iter().any(|l| l.out_dim() != hidden)
        || params.layers.iter().skip(1).any(|l| l.in_dim() != hidden)
    {
        return Err(Error::Checkpoint("only uniform-width encoders are serializable".into()));
    }
    w.write_all(MAGIC).map_err(ck)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(ck)?;
    w.write_all(&[params.activation.code(), u8::from(params.tied_weights)]).map_err(ck)?;
    w.write_all(&params.dropout.to_le_bytes()).map_err(ck)?;
    for dim in [params.feature_dim(), hidden, params.num_layers] {
        let d = u32::try_from(dim).map_err(|_| Error::Checkpoint("dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes()).map_err(ck)?;
    }
    for t in params.tensors() {
        for x in t.iter() {
            w.write_all(&x.to_le_bytes()).map_err(ck)?;
        }
    }
    w.flush().map_err(ck)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(ck)?;
    Ok(u32::from_le_bytes(b))
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated weight blob".into()))?;
    let data: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches buffer"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<EncoderParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(ck)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut flags = [0u8; 2];
    r.read_exact(&mut flags).map_err(ck)?;
    let activation = Activation::from_code(flags[0])
        .ok_or_else(|| Error::Checkpoint(format!("unknown activation code {}", flags[0])))?;
    let tied = match flags[1] {
        0 => false,
        1 => true,
        other => return Err(Error::Checkpoint(format!("bad tied flag {other}"))),
    };
    let mut db = [0u8; 8];
    r.read_exact(&mut db).map_err(ck)?;
    let dropout = f64::from_le_bytes(db);
    let feature_dim = read_u32(&mut r)? as usize;
    let hidden = read_u32(&mut r)? as usize;
    let num_layers = read_u32(&mut r)? as usize;
    if feature_dim == 0 || hidden == 0 || num_layers == 0 {
        return Err(Error::Checkpoint("zero dimension in header".into()));
    }
    let stored = if tied { 1 } else { num_layers };
    let mut layers = Vec::with_capacity(stored);
    for l in 0..stored {
        let in_dim = if l == 0 { feature_dim } else { hidden };
        layers.push(LayerWeights {
            w_self: read_matrix(&mut r, hidden, in_dim)?,
            w_neigh: read_matrix(&mut r, hidden, in_dim)?,
        });
    }
    let mut lin = || -> Result<Linear> {
        Ok(Linear {
            weight: read_matrix(&mut r, hidden, hidden)?,
            bias: read_matrix(&mut r, 1, hidden)?,
        })
    };
    let projector = lin()?;
    let head_hidden = lin()?;
    let head_out = lin()?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(ck)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after weights",
            rest.len()
        )));
    }
    let params = EncoderParams {
        layers,
        num_layers,
        projector,
        head_hidden,
        head_out,
        activation,
        tied_weights: tied,
        dropout,
    };
    params
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &EncoderParams) -> Result<()> {
    let p = path.as_ref();
    let f = File::create(p).map_err(|e| Error::io(p, e))?;
    write_checkpoint(BufWriter::new(f), params)
}

/// Loads a checkpoint; when `feature_dim` is given the encoder must accept it.
pub fn load_checkpoint(path: impl AsRef<Path>, feature_dim: Option<usize>) -> Result<EncoderParams> {
    let p = path.as_ref();
    let f = File::open(p).map_err(|e| Error::io(p, e))?;
    let params = read_checkpoint(BufReader::new(f))?;
    if let Some(d) = feature_dim {
        if d != params.feature_dim() {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects feature dim {}, data has {d}",
                params.feature_dim()
            )));
        }
    }
    Ok(params)
}
