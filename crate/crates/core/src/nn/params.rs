//! Named parameter collections, initialization, soft target updates and
//! the binary checkpoint format.
//!
//! Checkpoint layout (little endian):
//!
//! ```text
//! magic   b"CHRLCKPT"
//! version u32
//! nsets   u32
//! per set:    name, ntensors u32
//! per tensor: name, ndim u32, dims u64 * ndim, values f64 * prod(dims)
//! name = len u32 + utf-8 bytes
//! ```

use std::io::{Read, Write};

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CHRLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor and returns its index.
    pub fn add(&mut self, name: &str, t: Tensor) -> Result<usize> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        self.names.push(name.to_string());
        self.tensors.push(t);
        Ok(self.tensors.len() - 1)
    }

    /// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` weight and bias.
    pub fn add_dense<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<(usize, usize)> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = uniform(&[fan_in, fan_out], bound, rng);
        let b = uniform(&[1, fan_out], bound, rng);
        Ok((self.add(&format!("{prefix}.w"), w)?, self.add(&format!("{prefix}.b"), b)?))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes in the same order.
    pub fn same_structure(&self, other: &ParamSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.same_shape(b))
    }

    /// `self := (1 - tau) * self + tau * online`.
    pub fn polyak_update(&mut self, online: &ParamSet, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidInput(format!("tau must be in (0, 1], got {tau}")));
        }
        if !self.same_structure(online) {
            return Err(Error::Shape("polyak update between different structures".into()));
        }
        for (t, o) in self.tensors.iter_mut().zip(&online.tensors) {
            if tau == 1.0 {
                t.data_mut().copy_from_slice(o.data());
                continue;
            }
            for (a, b) in t.data_mut().iter_mut().zip(o.data()) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    fn write_body<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            write_name(w, name)?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_body<R: Read>(r: &mut R) -> Result<Self> {
        let n = read_u32(r)? as usize;
        let mut set = ParamSet::new();
        for _ in 0..n {
            let name = read_name(r)?;
            let ndim = read_u32(r)? as usize;
            if ndim > 8 {
                return Err(Error::Checkpoint(format!("tensor '{name}' has {ndim} dims")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u64(r)? as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            set.add(&name, Tensor::new(shape, data)?)?;
        }
        Ok(set)
    }
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 4096 {
        return Err(Error::Checkpoint(format!("name length {len} too large")));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Several named parameter sets stored together.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub sets: Vec<(String, ParamSet)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, set: ParamSet) {
        self.sets.push((name.to_string(), set));
    }

    pub fn get(&self, name: &str) -> Result<&ParamSet> {
        self.sets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter set '{name}'")))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.sets.len() as u32).to_le_bytes())?;
        for (name, set) in &self.sets {
            write_name(w, name)?;
            set.write_body(w)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = read_u32(r)? as usize;
        let mut ck = Checkpoint::new();
        for _ in 0..n {
            let name = read_name(r)?;
            ck.push(&name, ParamSet::read_body(r)?);
        }
        Ok(ck)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let ck = Self::read(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", cursor.len())));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_set(seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add_dense("l1", 3, 4, &mut rng).unwrap();
        p.add_dense("l2", 4, 1, &mut rng).unwrap();
        p
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.add("a", Tensor::zeros(&[1, 1])).unwrap();
        assert!(p.add("a", Tensor::zeros(&[1, 1])).is_err());
    }

    #[test]
    fn init_within_fan_in_bound() {
        let p = sample_set(1);
        let bound = 1.0 / 3f64.sqrt();
        assert!(p.tensor(0).data().iter().all(|v| v.abs() <= bound));
        assert_eq!(p.tensor(0).shape(), &[3, 4]);
        assert_eq!(p.tensor(1).shape(), &[1, 4]);
    }

    #[test]
    fn polyak_examples() {
        let mut target = ParamSet::new();
        target.add("x", Tensor::scalar(0.0)).unwrap();
        let mut online = ParamSet::new();
        online.add("x", Tensor::scalar(1.0)).unwrap();

        let mut t = target.clone();
        t.polyak_update(&online, 1.0).unwrap();
        assert_eq!(t, online);

        let mut t = target.clone();
        t.polyak_update(&online, 0.005).unwrap();
        assert!((t.tensor(0).data()[0] - 0.005).abs() < 1e-15);

        // Gap shrinks by (1 - tau) per update.
        let tau = 0.1;
        let mut t = target.clone();
        let mut gap = 1.0;
        for _ in 0..50 {
            t.polyak_update(&online, tau).unwrap();
            gap *= 1.0 - tau;
            assert!(((1.0 - t.tensor(0).data()[0]) - gap).abs() < 1e-12);
        }

        assert!(t.polyak_update(&sample_set(0), 0.5).is_err());
        assert!(t.polyak_update(&online, 0.0).is_err());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let mut ck = Checkpoint::new();
        ck.push("actor", sample_set(3));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(ck.get("critic").is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 1..40), seed in 0u64..1000) {
            let mut set = sample_set(seed);
            set.add("raw", Tensor::row(values)).unwrap();
            let mut ck = Checkpoint::new();
            ck.push("net", set);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
