//! Named parameter collection with Adam moments and a length-prefixed
//! binary checkpoint format (bit-exact round trip).

use super::tensor::Tensor;
use super::AutodiffError;
use std::collections::HashMap;
use std::io::{Read, Write};

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Flat named tensor collection with stable iteration order, gradient slots
/// and per-parameter optimizer moments.
#[derive(Debug, Clone, Default)]
pub struct ParameterSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name `{name}`"
        );
        let shape = value.shape().to_vec();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad: None,
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
        });
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let idx = self.index[name];
        &self.params[idx].value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        let idx = self.index[name];
        &mut self.params[idx].value
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).and_then(|&i| self.params[i].grad.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Treat parameters untouched by the current loss as having zero
    /// gradient (used when a loss weight is deliberately zero).
    pub fn fill_missing_grads(&mut self) {
        for p in &mut self.params {
            if p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.shape().to_vec()));
            }
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor) {
        let idx = self.index[name];
        let p = &mut self.params[idx];
        debug_assert_eq!(p.value.shape(), delta.shape());
        match &mut p.grad {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta.clone()),
        }
    }

    /// Standard Adam step with bias correction over every parameter.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), AutodiffError> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(AutodiffError::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for p in &mut self.params {
            let grad = p.grad.as_ref().unwrap();
            for i in 0..p.value.numel() {
                let g = grad.data()[i];
                let m = &mut p.m.data_mut()[i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                let v = &mut p.v.data_mut()[i];
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p.value.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn grad_l2_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Copies another set's values verbatim (shapes and names must match).
    pub fn sync_values_from(&mut self, other: &ParameterSet) {
        assert_eq!(self.params.len(), other.params.len(), "parameter sets differ");
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            assert_eq!(dst.name, src.name);
            dst.value = src.value.clone();
        }
    }

    pub fn values_bit_equal(&self, other: &ParameterSet) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Length-prefixed binary checkpoint: version and count header, then per
    /// parameter the name, rank, dims, and little-endian f64 payload.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), AutodiffError> {
        let io = |e: std::io::Error| AutodiffError::Checkpoint(e.to_string());
        w.write_all(&1u32.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes()).map_err(io)?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name).map_err(io)?;
            w.write_all(&(p.value.rank() as u32).to_le_bytes()).map_err(io)?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
            }
            for &x in p.value.data() {
                w.write_all(&x.to_le_bytes()).map_err(io)?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, AutodiffError> {
        let io = |e: std::io::Error| AutodiffError::Checkpoint(e.to_string());
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf).map_err(io)?;
        let version = u32::from_le_bytes(u32buf);
        if version != 1 {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        r.read_exact(&mut u64buf).map_err(io)?;
        let count = u64::from_le_bytes(u64buf);
        let mut set = ParameterSet::new();
        for _ in 0..count {
            r.read_exact(&mut u32buf).map_err(io)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name)
                .map_err(|e| AutodiffError::Checkpoint(format!("bad name: {e}")))?;
            r.read_exact(&mut u32buf).map_err(io)?;
            let rank = u32::from_le_bytes(u32buf) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                r.read_exact(&mut u64buf).map_err(io)?;
                shape.push(u64::from_le_bytes(u64buf) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                r.read_exact(&mut u64buf).map_err(io)?;
                data.push(f64::from_le_bytes(u64buf));
            }
            set.insert(&name, Tensor::new(shape, data));
        }
        Ok(set)
    }

    pub fn save_to_file(&self, path: &std::path::Path) -> Result<(), AutodiffError> {
        let file = std::fs::File::create(path)
            .map_err(|e| AutodiffError::Checkpoint(format!("create {path:?}: {e}")))?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load_from_file(path: &std::path::Path) -> Result<Self, AutodiffError> {
        let file = std::fs::File::open(path)
            .map_err(|e| AutodiffError::Checkpoint(format!("open {path:?}: {e}")))?;
        Self::load(std::io::BufReader::new(file))
    }
}
