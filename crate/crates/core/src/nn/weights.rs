//! Weight file: `NIL1` magic, one line of UTF-8 JSON header terminated by
//! `\n`, then every parameter as little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NIL1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub format_version: u32,
    pub architecture: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub parameters: Vec<ParamSpec>,
    /// Architecture-specific metadata (e.g. the label map of a classifier).
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Implemented by every trainable network.
pub trait Module {
    fn architecture(&self) -> &'static str;
    fn config_json(&self) -> serde_json::Value;
    fn seed(&self) -> u64;
    fn named_parameters(&self) -> Vec<(String, &Tensor)>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn extra_json(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// All parameter values concatenated in declaration order.
    fn flat_parameters(&self) -> Vec<f64> {
        self.named_parameters().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    fn set_flat_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut rest = values;
        for p in self.parameters_mut() {
            let (head, tail) = rest.split_at(p.len());
            p.data_mut().copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn header(&self) -> WeightHeader {
        WeightHeader {
            format_version: FORMAT_VERSION,
            architecture: self.architecture().to_string(),
            config: self.config_json(),
            seed: self.seed(),
            parameters: self
                .named_parameters()
                .into_iter()
                .map(|(name, t)| ParamSpec {
                    name,
                    shape: t.shape().to_vec(),
                })
                .collect(),
            extra: self.extra_json(),
        }
    }
}

pub fn encode_weights<M: Module + ?Sized>(model: &M) -> Result<Vec<u8>> {
    let header = serde_json::to_string(&model.header())?;
    let mut out = Vec::with_capacity(8 + header.len() + model.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for (_, t) in model.named_parameters() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_weights<M: Module + ?Sized>(model: &M, path: &Path) -> Result<()> {
    let bytes = encode_weights(model)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A decoded weight file: header plus one data vector per parameter.
#[derive(Debug, Clone)]
pub struct WeightFile {
    pub header: WeightHeader,
    pub tensors: Vec<Tensor>,
}

impl WeightFile {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(Error::WeightFile("missing NIL1 magic".into()));
        }
        let rest = &bytes[4..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::WeightFile("unterminated header".into()))?;
        let header: WeightHeader = serde_json::from_slice(&rest[..nl])
            .map_err(|e| Error::WeightFile(format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::WeightFile(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let mut payload = &rest[nl + 1..];
        let expected: usize = header.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if payload.len() != expected * 8 {
            return Err(Error::WeightFile(format!(
                "payload holds {} bytes, header declares {} values ({} bytes)",
                payload.len(),
                expected,
                expected * 8
            )));
        }
        let mut tensors = Vec::with_capacity(header.parameters.len());
        for spec in &header.parameters {
            let n: usize = spec.shape.iter().product();
            let (chunk, tail) = payload.split_at(n * 8);
            payload = tail;
            let data = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor::new(spec.shape.clone(), data)?.with_requires_grad(true));
        }
        Ok(Self { header, tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn expect_architecture(&self, architecture: &str) -> Result<()> {
        if self.header.architecture != architecture {
            return Err(Error::WeightFile(format!(
                "architecture mismatch: file holds '{}', expected '{architecture}'",
                self.header.architecture
            )));
        }
        Ok(())
    }

    /// Copies the stored parameters into a freshly built model after checking
    /// that names and shapes match exactly.
    pub fn load_into<M: Module + ?Sized>(&self, model: &mut M) -> Result<()> {
        self.expect_architecture(model.architecture())?;
        let expected = model.header().parameters;
        if expected != self.header.parameters {
            return Err(Error::WeightFile(
                "parameter names/shapes in file do not match the configured architecture".into(),
            ));
        }
        for (dst, src) in model.parameters_mut().into_iter().zip(&self.tensors) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}
