//! NLWT binary weight files.
//!
//! Layout: magic "NLWT", version byte, u32 trainable-layer count, then per
//! layer its parameter tensors (weight, bias) each as u8 rank, rank u32
//! extents, and the f64 payload, all little-endian. The head counts as the
//! last trainable layer. Loading requires shape-identical targets.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NLWT";
const VERSION: u8 = 1;

pub fn save_weights(net: &Network, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));

    let params = net.params();
    // params come in (weight, bias) pairs per trainable layer, head last
    debug_assert_eq!(params.len() % 2, 0);
    let layer_count = (params.len() / 2) as u32;

    put(MAGIC)?;
    put(&[VERSION])?;
    put(&layer_count.to_le_bytes())?;
    for t in params {
        put(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            put(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load weights into a network of identical architecture.
pub fn load_weights(net: &mut Network, path: &Path) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut offset = 0u64;
    let mut take = |buf: &mut [u8], what: &str| -> Result<()> {
        r.read_exact(buf)
            .map_err(|_| Error::format(path, offset, format!("truncated while reading {what}")))?;
        offset += buf.len() as u64;
        Ok(())
    };

    let mut magic = [0u8; 4];
    take(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format(path, 0, format!("bad magic {magic:02x?}")));
    }
    let mut version = [0u8; 1];
    take(&mut version, "version")?;
    if version[0] != VERSION {
        return Err(Error::format(
            path,
            4,
            format!("unsupported version {}", version[0]),
        ));
    }
    let mut u32buf = [0u8; 4];
    take(&mut u32buf, "layer count")?;
    let layer_count = u32::from_le_bytes(u32buf) as usize;

    let mut tensors: Vec<Tensor> = Vec::with_capacity(layer_count * 2);
    for _ in 0..layer_count * 2 {
        let mut rank = [0u8; 1];
        take(&mut rank, "tensor rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            take(&mut u32buf, "tensor extent")?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = vec![0.0f64; count];
        let mut f64buf = [0u8; 8];
        for v in data.iter_mut() {
            take(&mut f64buf, "tensor payload")?;
            *v = f64::from_le_bytes(f64buf);
        }
        tensors.push(Tensor::new(shape, data)?);
    }

    let mut params = net.params_mut();
    if params.len() != tensors.len() {
        return Err(Error::Config(format!(
            "weight file holds {} tensors but the network has {}",
            tensors.len(),
            params.len()
        )));
    }
    for (target, loaded) in params.iter_mut().zip(&tensors) {
        if target.shape() != loaded.shape() {
            return Err(Error::Config(format!(
                "weight shape mismatch: file {:?} vs network {:?}",
                loaded.shape(),
                target.shape()
            )));
        }
    }
    for (target, loaded) in params.iter_mut().zip(tensors) {
        **target = loaded;
    }
    Ok(())
}
