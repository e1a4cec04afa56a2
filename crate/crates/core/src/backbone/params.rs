//! Named parameter tensors, their initialisation and the on-disk parameter
//! directory format.
//!
//! A parameter directory holds `manifest.txt` plus one raw file per tensor.
//! Each manifest line is `name<TAB>dtype<TAB>shape<TAB>file`, where dtype is
//! `f32` or `f64`, shape is `x`-separated (`7x7x3x64`) and the file holds the
//! values little-endian in row-major order. Lines starting with `#` are
//! comments.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{ModelSpec, FC_WEIGHT, HEAD_NAME};
use crate::error::{Error, Result};
use crate::tensor_ops::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# toolseg parameters v1";

/// Standard deviation of the freshly initialised classifier.
pub const HEAD_INIT_STD: f64 = 0.01;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Panicking lookup for names the spec guarantees.
    pub(crate) fn values(&self, name: &str) -> &[T] {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .data()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.map(&mut f)))
                .collect(),
        }
    }

    /// Errors with the first tensor (in execution order) that is missing or
    /// has the wrong shape.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        for (name, shape) in spec.param_shapes() {
            match self.tensors.get(&name) {
                None => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "tensor {name} is missing"
                    )))
                }
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "tensor {name} has shape {:?}, model expects {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

impl ParamStore<f32> {
    /// Fresh parameters for `spec`: He-normal convolutions, N(0, 0.01²) for the
    /// head, zero biases, unit BN scale and variance.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        Self::new().adopt(spec, seed).expect("empty store always adopts")
    }

    /// Keep every tensor that `spec` still names (shape must agree), drop the
    /// rest, and initialise whatever is missing.
    pub fn adopt(mut self, spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = BTreeMap::new();
        for (name, shape) in spec.param_shapes() {
            if let Some(existing) = self.tensors.remove(&name) {
                if existing.shape() != shape.as_slice() {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "tensor {name} has shape {:?}, model expects {shape:?}",
                        existing.shape()
                    )));
                }
                out.insert(name, existing);
                continue;
            }
            let tensor = initial_value(&name, shape, &mut rng);
            out.insert(name, tensor);
        }
        Ok(Self { tensors: out })
    }

    pub fn to_f64(&self) -> ParamStore<f64> {
        self.map(|&v| f64::from(v))
    }

    /// Write a parameter directory (f32, little-endian).
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::from(MANIFEST_HEADER);
        manifest.push('\n');
        for (name, tensor) in &self.tensors {
            let file = format!("{name}.bin");
            let shape: Vec<String> = tensor.shape().iter().map(usize::to_string).collect();
            manifest.push_str(&format!("{name}\tf32\t{}\t{file}\n", shape.join("x")));
            let mut bytes = Vec::with_capacity(tensor.len() * 4);
            for v in tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(manifest.as_bytes())
            .map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Read a parameter directory. `f64` tensors are narrowed to `f32`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let manifest = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut tensors = BTreeMap::new();
        for (lineno, line) in manifest.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: &str| {
                Error::parse("parameter manifest", format!("line {}: {detail}", lineno + 1))
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, dtype, shape, file] = fields[..] else {
                return Err(bad("expected name, dtype, shape, file"));
            };
            let shape: Vec<usize> = if shape.is_empty() {
                Vec::new()
            } else {
                shape
                    .split('x')
                    .map(|d| d.parse().map_err(|_| bad("bad dimension")))
                    .collect::<Result<_>>()?
            };
            let data_path = dir.join(file);
            let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
            let count: usize = shape.iter().product();
            let values: Vec<f32> = match dtype {
                "f32" => {
                    if bytes.len() != count * 4 {
                        return Err(Error::IncompatibleCheckpoint(format!(
                            "tensor {name}: {} bytes for {count} f32 values",
                            bytes.len()
                        )));
                    }
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect()
                }
                "f64" => {
                    if bytes.len() != count * 8 {
                        return Err(Error::IncompatibleCheckpoint(format!(
                            "tensor {name}: {} bytes for {count} f64 values",
                            bytes.len()
                        )));
                    }
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
                        .collect()
                }
                other => return Err(bad(&format!("unsupported dtype {other}"))),
            };
            tensors.insert(name.to_string(), Tensor::new(shape, values)?);
        }
        Ok(Self { tensors })
    }
}

fn initial_value(name: &str, shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let gaussian = |std: f64, rng: &mut ChaCha8Rng| {
        let normal = Normal::new(0.0, std).expect("positive std");
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| normal.sample(rng) as f32).collect();
        Tensor::new(shape.clone(), data).expect("length matches shape")
    };
    if name == FC_WEIGHT || name == format!("{HEAD_NAME}.weight") {
        gaussian(HEAD_INIT_STD, rng)
    } else if name.ends_with(".weight") {
        let fan_in: usize = shape[..shape.len() - 1].iter().product();
        gaussian((2.0 / fan_in as f64).sqrt(), rng)
    } else if name.ends_with(".bn.gamma") || name.ends_with(".bn.var") {
        Tensor::full(shape, 1.0)
    } else {
        Tensor::zeros(shape)
    }
}

/// Learnable tensors; BN running statistics are excluded, and so are BN scale
/// and shift when `frozen_bn` is set.
pub fn is_trainable(name: &str, frozen_bn: bool) -> bool {
    if name.ends_with(".bn.mean") || name.ends_with(".bn.var") {
        return false;
    }
    !(frozen_bn && (name.ends_with(".bn.gamma") || name.ends_with(".bn.beta")))
}
