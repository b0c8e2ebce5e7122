//! Binary container for a [`ParameterSet`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"SMIP"
//! version u32
//! steps   u64             optimizer step count
//! count   u32             number of records
//! record* name_len u32, name utf-8, ndim u32, dims u64 x ndim,
//!         value f64 x len, adam_m f64 x len, adam_v f64 x len
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::params::{Param, ParameterSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SMIP";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 24);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.step_count().to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for t in [&p.value, &p.adam_m, &p.adam_v] {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<ParameterSet> {
    let bad = |reason: &str| Error::checkpoint(origin, reason);
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    read(&mut cur, &mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a parameter container"));
    }
    let version = read_u32(&mut cur).map_err(|_| bad("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(bad(&format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let steps = read_u64(&mut cur).map_err(|_| bad("truncated header"))?;
    let count = read_u32(&mut cur).map_err(|_| bad("truncated header"))?;
    let mut set = ParameterSet::new();
    for i in 0..count {
        let trunc = || bad(&format!("truncated in record {i}"));
        let name_len = read_u32(&mut cur).map_err(|_| trunc())? as usize;
        if name_len > bytes.len() {
            return Err(trunc());
        }
        let mut name = vec![0u8; name_len];
        read(&mut cur, &mut name).map_err(|_| trunc())?;
        let name = String::from_utf8(name).map_err(|_| bad("record name is not utf-8"))?;
        let ndim = read_u32(&mut cur).map_err(|_| trunc())? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(bad(&format!("record {name} has {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut cur).map_err(|_| trunc())? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l > 0 && l.saturating_mul(24) <= bytes.len())
            .ok_or_else(trunc)?;
        let mut tensors = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_bits(read_u64(&mut cur).map_err(|_| trunc())?));
            }
            tensors.push(Tensor::from_vec(&shape, data)?);
        }
        let adam_v = tensors.pop().expect("three tensors");
        let adam_m = tensors.pop().expect("three tensors");
        let value = tensors.pop().expect("three tensors");
        let mut param = Param::new(name, value);
        param.adam_m = adam_m;
        param.adam_v = adam_v;
        set.push(param);
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes after last record"));
    }
    set.set_step_count(steps);
    Ok(set)
}

pub fn save(params: &ParameterSet, path: &Path) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParameterSet> {
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}

fn read(cur: &mut Cursor<&[u8]>, buf: &mut [u8]) -> std::io::Result<()> {
    cur.read_exact(buf)
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::layer::{Activation, LayerSpec};
    use crate::tensor::network::Network;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_set(seed: u64) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(
            "net",
            vec![
                LayerSpec::dense(4, 3, Activation::Relu),
                LayerSpec::dense(3, 2, Activation::Linear),
            ],
        )
        .unwrap();
        let mut params = net.init_params(&mut rng);
        params.get_mut(0).grad.fill(0.25);
        params.adam_step(1e-3).unwrap();
        params
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>()) {
            let params = sample_set(seed);
            let back = decode(&encode(&params), Path::new("mem")).unwrap();
            prop_assert_eq!(back, params);
        }

        #[test]
        fn every_truncation_is_rejected(cut in 0usize..200) {
            let bytes = encode(&sample_set(5));
            let cut = cut.min(bytes.len() - 1);
            prop_assert!(decode(&bytes[..cut], Path::new("mem")).is_err());
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = encode(&sample_set(1));
        bytes[4] = 9;
        let err = decode(&bytes, Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
