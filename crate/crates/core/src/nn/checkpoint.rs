//! Network parameter files.
//!
//! Flat self-describing binary layout, all multi-byte values little-endian:
//!
//! ```text
//! magic        8 bytes  b"SMRLNET1"
//! version      u32      format version (currently 1)
//! n_widths     u32
//! widths       u32 * n_widths          input, hidden.., output
//! activation   u32                     0 = squish
//! squish_b     f64                     activation hyperparameter
//! norm_delta   f64                     layer-norm stabilizer
//! n_arrays     u32
//! arrays       n_arrays * (u16 name_len, name utf-8, u64 len, f64 * len)
//! ```
//!
//! Arrays appear in canonical declaration order (`layerK.weight`,
//! `layerK.bias`, `normK.gain`, `normK.bias`, ...). The same array framing is
//! reused by the agent checkpoint container in the learner module.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{MlpNetwork, NnError, NORM_DELTA, SQUISH_B};

pub(crate) const NET_MAGIC: &[u8; 8] = b"SMRLNET1";
const FORMAT_VERSION: u32 = 1;
const ACTIVATION_SQUISH: u32 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not a parameter checkpoint)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported activation id {0}")]
    UnsupportedActivation(u32),
    #[error("checkpoint does not match expected hyperparameters ({0})")]
    HyperparameterMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn write_named_array(w: &mut impl Write, name: &str, data: &[f64]) -> io::Result<()> {
    let bytes = name.as_bytes();
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    write_u64(w, data.len() as u64)?;
    for v in data {
        write_f64(w, *v)?;
    }
    Ok(())
}

pub(crate) fn read_named_array(r: &mut impl Read) -> Result<(String, Vec<f64>), CheckpointError> {
    let mut lb = [0u8; 2];
    r.read_exact(&mut lb)?;
    let name_len = u16::from_le_bytes(lb) as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| CheckpointError::Malformed("array name is not utf-8".into()))?;
    let len = read_u64(r)? as usize;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(read_f64(r)?);
    }
    Ok((name, data))
}

/// Writes one network block (header + named arrays) to `w`.
pub fn write_network(w: &mut impl Write, net: &MlpNetwork) -> io::Result<()> {
    w.write_all(NET_MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u32(w, net.widths().len() as u32)?;
    for &width in net.widths() {
        write_u32(w, width as u32)?;
    }
    write_u32(w, ACTIVATION_SQUISH)?;
    write_f64(w, SQUISH_B)?;
    write_f64(w, NORM_DELTA)?;
    let params = net.parameters();
    write_u32(w, params.len() as u32)?;
    for (name, data) in params {
        write_named_array(w, &name, data)?;
    }
    Ok(())
}

/// Reads one network block from `r`.
pub fn read_network(r: &mut impl Read) -> Result<MlpNetwork, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != NET_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let n_widths = read_u32(r)? as usize;
    let mut widths = Vec::with_capacity(n_widths);
    for _ in 0..n_widths {
        widths.push(read_u32(r)? as usize);
    }
    let activation = read_u32(r)?;
    if activation != ACTIVATION_SQUISH {
        return Err(CheckpointError::UnsupportedActivation(activation));
    }
    let b = read_f64(r)?;
    let delta = read_f64(r)?;
    if b != SQUISH_B || delta != NORM_DELTA {
        return Err(CheckpointError::HyperparameterMismatch(format!(
            "squish_b={b}, norm_delta={delta}"
        )));
    }
    // Rebuild with throwaway init, then overwrite every chunk by name.
    let mut seed = crate::rng::stream_rng(0, 0);
    let mut net = MlpNetwork::new(&widths, &mut seed)?;
    let n_arrays = read_u32(r)? as usize;
    let expected = net.parameters();
    if n_arrays != expected.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} parameter arrays, found {n_arrays}",
            expected.len()
        )));
    }
    let mut chunks: Vec<Vec<f64>> = Vec::with_capacity(n_arrays);
    for (want_name, want_data) in &expected {
        let (name, data) = read_named_array(r)?;
        if &name != want_name {
            return Err(CheckpointError::Malformed(format!(
                "array `{name}` out of order, expected `{want_name}`"
            )));
        }
        if data.len() != want_data.len() {
            return Err(CheckpointError::Malformed(format!(
                "array `{name}` has length {}, expected {}",
                data.len(),
                want_data.len()
            )));
        }
        chunks.push(data);
    }
    net.set_param_chunks(&chunks)?;
    Ok(net)
}

/// Saves a network to a standalone parameter file.
pub fn save_network(path: &Path, net: &MlpNetwork) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network(&mut w, net)?;
    w.flush()?;
    Ok(())
}

/// Loads a network from a standalone parameter file.
pub fn load_network(path: &Path) -> Result<MlpNetwork, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    read_network(&mut r)
}
