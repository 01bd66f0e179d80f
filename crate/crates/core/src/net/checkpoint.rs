//! Flat little-endian checkpoint: header, multipliers, then every weight matrix row-major.
//!
//! Layout: `b"MUPPCKPT"`, u32 version, u64 d_in, width, depth, d_out, u8 activation tag,
//! f64 sigma, u64 seed, f64 multipliers per layer, f64 weights per layer in layer order.

use std::io::{Read, Write};

use ndarray::Array2;

use super::activation::Activation;
use super::network::{Dims, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MUPPCKPT";
const VERSION: u32 = 1;

pub fn encode(net: &Network) -> Vec<u8> {
    let d = net.dims();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.d_in, d.width, d.depth, d.d_out] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.push(net.activation().tag());
    out.extend_from_slice(&net.activation().sigma().to_le_bytes());
    out.extend_from_slice(&net.seed().to_le_bytes());
    for m in net.multipliers() {
        out.extend_from_slice(&m.to_le_bytes());
    }
    for w in net.weights() {
        for v in w.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn dim(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Network> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let dims = Dims::new(r.dim()?, r.dim()?, r.dim()?, r.dim()?)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let tag = r.take(1)?[0];
    let sigma = r.f64()?;
    let activation = Activation::from_tag(tag, sigma)?;
    let seed = r.u64()?;
    let o = dims.num_layers();
    let multipliers = (0..o).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let mut weights = Vec::with_capacity(o);
    for l in 1..=o {
        let (fi, fo) = dims.fans(l);
        let count = fi
            .checked_mul(fo)
            .ok_or_else(|| Error::Checkpoint("layer size overflow".into()))?;
        let bytes = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("layer size overflow".into()))?)?;
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        weights.push(Array2::from_shape_vec((fo, fi), vals).expect("exact length"));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Network::from_parts(dims, activation, seed, weights, multipliers)
}

pub fn save<W: Write>(net: &Network, mut w: W) -> Result<()> {
    w.write_all(&encode(net))?;
    Ok(())
}

pub fn load<R: Read>(mut r: R) -> Result<Network> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::network::InitSpec;

    #[test]
    fn roundtrip_is_exact() {
        let d = Dims::new(3, 8, 2, 2).unwrap();
        let net = Network::init(d, Activation::SigmaGelu(0.05), &InitSpec::spectral(&d).unwrap(), 42).unwrap();
        let bytes = encode(&net);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.weights(), net.weights());
        assert_eq!(back.multipliers(), net.multipliers());
        assert_eq!(back.activation(), net.activation());
        assert_eq!(back.seed(), 42);
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let d = Dims::new(3, 4, 1, 1).unwrap();
        let net = Network::init(d, Activation::Tanh, &InitSpec::spectral(&d).unwrap(), 1).unwrap();
        let bytes = encode(&net);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
