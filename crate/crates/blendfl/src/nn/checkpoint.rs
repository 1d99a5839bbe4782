//! Binary on-disk format for networks and named groups of networks.
//!
//! A network record is:
//!
//! ```text
//! magic "BFNT" | u16 version | u16 layer count
//! per layer: u32 input dim | u32 output dim | u8 activation tag
//! u64 parameter count | little-endian f64 values
//! ```
//!
//! A bundle wraps several records under short names:
//!
//! ```text
//! magic "BFBD" | u16 version | u16 entry count
//! per entry: u8 name length | name bytes | network record
//! ```
//!
//! All integers are little-endian. Parameters round-trip bit for bit, so a
//! reloaded model evaluates identically to the one that was saved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::network::{Activation, LayerSpec, Network, ParamVector};

const NETWORK_MAGIC: &[u8; 4] = b"BFNT";
const BUNDLE_MAGIC: &[u8; 4] = b"BFBD";
const FORMAT_VERSION: u16 = 1;

pub fn write_network<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(NETWORK_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let n_layers = u16::try_from(net.layers().len())
        .map_err(|_| Error::Checkpoint("too many layers for the format".to_string()))?;
    w.write_all(&n_layers.to_le_bytes())?;
    for l in net.layers() {
        let input = u32::try_from(l.input)
            .map_err(|_| Error::Checkpoint("layer too wide for the format".to_string()))?;
        let output = u32::try_from(l.output)
            .map_err(|_| Error::Checkpoint("layer too wide for the format".to_string()))?;
        w.write_all(&input.to_le_bytes())?;
        w.write_all(&output.to_le_bytes())?;
        w.write_all(&[l.activation.tag()])?;
    }
    w.write_all(&(net.param_len() as u64).to_le_bytes())?;
    for v in net.params().values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_network<R: Read>(r: &mut R) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != NETWORK_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad network magic {magic:02x?}"
        )));
    }
    let version = read_u16(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let n_layers = read_u16(r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let input = read_u32(r)? as usize;
        let output = read_u32(r)? as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        layers.push(LayerSpec::new(input, output, Activation::from_tag(tag[0])?));
    }
    let n_params = read_u64(r)? as usize;
    let expected: usize = layers.iter().map(LayerSpec::param_count).sum();
    if n_params != expected {
        return Err(Error::Checkpoint(format!(
            "parameter count {n_params} does not match layer shapes ({expected})"
        )));
    }
    let mut values = Vec::with_capacity(n_params);
    let mut buf = [0u8; 8];
    for _ in 0..n_params {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Network::from_params(layers, ParamVector::from_vec(values))
}

/// Writes named networks in the given order.
pub fn write_bundle<W: Write>(w: &mut W, entries: &[(&str, &Network)]) -> Result<()> {
    w.write_all(BUNDLE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let count = u16::try_from(entries.len())
        .map_err(|_| Error::Checkpoint("too many bundle entries".to_string()))?;
    w.write_all(&count.to_le_bytes())?;
    for (name, net) in entries {
        let bytes = name.as_bytes();
        let len = u8::try_from(bytes.len())
            .map_err(|_| Error::Checkpoint(format!("bundle entry name '{name}' too long")))?;
        w.write_all(&[len])?;
        w.write_all(bytes)?;
        write_network(w, net)?;
    }
    Ok(())
}

/// Reads a bundle back, preserving entry order.
pub fn read_bundle<R: Read>(r: &mut R) -> Result<Vec<(String, Network)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BUNDLE_MAGIC {
        return Err(Error::Checkpoint(format!("bad bundle magic {magic:02x?}")));
    }
    let version = read_u16(r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let count = read_u16(r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len = [0u8; 1];
        r.read_exact(&mut len)?;
        let mut name = vec![0u8; len[0] as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("bundle entry name is not UTF-8".to_string()))?;
        entries.push((name, read_network(r)?));
    }
    Ok(entries)
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    read_network(&mut BufReader::new(File::open(path)?))
}

pub fn save_bundle(path: &Path, entries: &[(&str, &Network)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bundle(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<Vec<(String, Network)>> {
    read_bundle(&mut BufReader::new(File::open(path)?))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
