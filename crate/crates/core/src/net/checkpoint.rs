//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! | field   | type     |
//! |---------|----------|
//! | magic   | `b"DSPK"` |
//! | version | u32 (1)  |
//! | depth   | u32      |
//! | width   | u32      |
//! | params  | f64 × N, layer by layer: weights `[out][in][3][3]`, then bias |
//!
//! Layer shapes follow from depth and width: `1→w`, `w→w` × (depth − 2),
//! `w→1`, ReLU on all but the last layer. A depth-1 network is `1→1`.

use std::fs;
use std::path::Path;

use super::model::{ConvLayer, ConvNet};
use super::real::Real;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DSPK";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(net: &ConvNet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * net.param_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.depth() as u32).to_le_bytes());
    out.extend_from_slice(&(net.width() as u32).to_le_bytes());
    for slice in net.params() {
        for v in slice {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<ConvNet<T>> {
    let bad = |detail: String| Error::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 16 || bytes[..4] != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let depth = word(8) as usize;
    let width = word(12) as usize;
    if depth == 0 || width == 0 || depth > 1024 || width > 4096 {
        return Err(bad(format!("implausible depth {depth} / width {width}")));
    }
    let shapes: Vec<(usize, usize)> = (0..depth)
        .map(|l| {
            let i = if l == 0 { 1 } else { width };
            let o = if l + 1 == depth { 1 } else { width };
            (i, o)
        })
        .collect();
    let expected: usize = shapes.iter().map(|(i, o)| o * i * 9 + o).sum();
    let body = &bytes[16..];
    if body.len() != expected * 8 {
        return Err(bad(format!(
            "expected {expected} parameters, found {} bytes",
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    let mut layers = Vec::with_capacity(depth);
    for (l, &(i, o)) in shapes.iter().enumerate() {
        let weights: Vec<T> = values.by_ref().take(o * i * 9).collect();
        let bias: Vec<T> = values.by_ref().take(o).collect();
        let layer = ConvLayer::new(i, o, weights, bias, l + 1 != depth).map_err(|e| bad(e.to_string()))?;
        layers.push(layer);
    }
    ConvNet::from_layers(layers).map_err(|e| bad(e.to_string()))
}

pub fn save_checkpoint<T: Real>(net: &ConvNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ConvNet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSpec;

    #[test]
    fn round_trip_preserves_parameters() {
        for (depth, width) in [(1, 5), (2, 3), (6, 8)] {
            let net: ConvNet<f64> = ConvNet::new(depth, width, &mut SeedSpec::new(1).derive(0, 0)).unwrap();
            let bytes = encode_checkpoint(&net);
            assert_eq!(&bytes[..4], b"DSPK");
            let back: ConvNet<f64> = decode_checkpoint(&bytes, Path::new("m.bin")).unwrap();
            assert_eq!(back, net);
        }
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let net: ConvNet<f32> = ConvNet::new(3, 4, &mut SeedSpec::new(2).derive(0, 0)).unwrap();
        let back: ConvNet<f32> = decode_checkpoint(&encode_checkpoint(&net), Path::new("m.bin")).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let net: ConvNet<f64> = ConvNet::new(2, 2, &mut SeedSpec::new(3).derive(0, 0)).unwrap();
        let bytes = encode_checkpoint(&net);
        let p = Path::new("m.bin");
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 1], p).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(decode_checkpoint::<f64>(&wrong_magic, p).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(decode_checkpoint::<f64>(&wrong_version, p).is_err());
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint::<f64>(&nan, p).is_err());
    }
}
