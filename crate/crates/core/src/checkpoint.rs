//! Single-file model archives.
//!
//! Layout: the magic `GGDGANCK`, a little-endian `u32` format version, a
//! `u64` manifest length, the JSON manifest, then every tensor as raw
//! little-endian `f32` in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::nn::{Adam, AdamConfig, BatchStats, ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"GGDGANCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
    /// Echo of the run configuration that produced the weights.
    pub config: serde_json::Value,
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
    /// Generator and discriminator optimizer state.
    pub optimizers: Option<(Adam, Adam)>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct AdamEntry {
    config: AdamConfig,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    step: u64,
    epoch: usize,
    seed: u64,
    config: serde_json::Value,
    generator: GeneratorConfig,
    discriminator: Option<DiscriminatorConfig>,
    optimizers: Option<[AdamEntry; 2]>,
    tensors: Vec<TensorEntry>,
}

struct Writer {
    entries: Vec<TensorEntry>,
    data: Vec<f32>,
}

impl Writer {
    fn push(&mut self, name: String, shape: Vec<usize>, values: &[f32]) {
        self.entries.push(TensorEntry {
            name,
            shape,
            offset: self.data.len(),
        });
        self.data.extend_from_slice(values);
    }

    fn params(&mut self, prefix: &str, ps: &ParamStore) {
        for (name, t) in ps.iter() {
            self.push(format!("{prefix}/{name}"), t.shape().to_vec(), t.data());
        }
    }

    fn moments(&mut self, prefix: &str, ps: &ParamStore, adam: &Adam) {
        for (k, (name, t)) in ps.iter().enumerate() {
            self.push(
                format!("{prefix}/m/{name}"),
                t.shape().to_vec(),
                &adam.first_moments()[k],
            );
            self.push(
                format!("{prefix}/v/{name}"),
                t.shape().to_vec(),
                &adam.second_moments()[k],
            );
        }
    }
}

struct Reader<'a> {
    entries: std::collections::HashMap<&'a str, &'a TensorEntry>,
    data: &'a [f32],
}

impl Reader<'_> {
    fn take(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let e = self
            .entries
            .get(name)
            .ok_or_else(|| Error::invalid("checkpoint", format!("missing tensor {name}")))?;
        if e.shape != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: e.shape.clone(),
            });
        }
        let n: usize = shape.iter().product();
        self.data
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::invalid("checkpoint", format!("tensor {name} is truncated")))
    }

    fn params(&self, prefix: &str, ps: &mut ParamStore) -> Result<()> {
        for k in 0..ps.len() {
            let name = format!("{prefix}/{}", ps.name(k));
            let shape = ps.get(k).shape();
            let values = self.take(&name, &shape)?.to_vec();
            *ps.get_mut(k) = Tensor::from_vec(shape, values)?;
        }
        Ok(())
    }

    fn moments(&self, prefix: &str, ps: &ParamStore, entry: &AdamEntry) -> Result<Adam> {
        let mut m = Vec::with_capacity(ps.len());
        let mut v = Vec::with_capacity(ps.len());
        for (name, t) in ps.iter() {
            m.push(
                self.take(&format!("{prefix}/m/{name}"), &t.shape())?
                    .to_vec(),
            );
            v.push(
                self.take(&format!("{prefix}/v/{name}"), &t.shape())?
                    .to_vec(),
            );
        }
        Ok(Adam::from_state(entry.config, entry.steps, m, v))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer {
            entries: Vec::new(),
            data: Vec::new(),
        };
        w.params("generator", self.generator.params());
        if let Some(d) = &self.discriminator {
            w.params("discriminator", d.params());
            for (k, s) in d.running_stats().iter().enumerate() {
                w.push(
                    format!("discriminator/running/{k}/mean"),
                    vec![s.mean.len()],
                    &s.mean,
                );
                w.push(
                    format!("discriminator/running/{k}/var"),
                    vec![s.var.len()],
                    &s.var,
                );
            }
        }
        let optimizers = match (&self.optimizers, &self.discriminator) {
            (Some((ag, ad)), Some(d)) => {
                w.moments("optim/generator", self.generator.params(), ag);
                w.moments("optim/discriminator", d.params(), ad);
                Some([ag, ad].map(|a| AdamEntry {
                    config: a.config(),
                    steps: a.steps(),
                }))
            }
            (Some(_), None) => {
                return Err(Error::invalid(
                    "optimizers",
                    "optimizer state needs the discriminator",
                ));
            }
            _ => None,
        };
        let manifest = Manifest {
            step: self.step,
            epoch: self.epoch,
            seed: self.seed,
            config: self.config.clone(),
            generator: self.generator.config().clone(),
            discriminator: self.discriminator.as_ref().map(|d| d.config().clone()),
            optimizers,
            tensors: w.entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + 4 * w.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &w.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::invalid("checkpoint", reason.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes
            .get(20..20 + len)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        let raw = &bytes[20 + len..];
        if raw.len() % 4 != 0 {
            return Err(bad("tensor data is not a whole number of floats"));
        }
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let reader = Reader {
            entries: manifest
                .tensors
                .iter()
                .map(|e| (e.name.as_str(), e))
                .collect(),
            data: &data,
        };

        let mut generator = Generator::new(manifest.generator.clone(), 0)?;
        reader.params("generator", generator.params_mut())?;
        let discriminator = match &manifest.discriminator {
            Some(cfg) => {
                let mut d = Discriminator::new(cfg.clone(), 0)?;
                reader.params("discriminator", d.params_mut())?;
                let stats = d
                    .running_stats()
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        Ok(BatchStats {
                            mean: reader
                                .take(&format!("discriminator/running/{k}/mean"), &[s.mean.len()])?
                                .to_vec(),
                            var: reader
                                .take(&format!("discriminator/running/{k}/var"), &[s.var.len()])?
                                .to_vec(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                d.set_running_stats(stats)?;
                Some(d)
            }
            None => None,
        };
        let optimizers = match (&manifest.optimizers, &discriminator) {
            (Some([eg, ed]), Some(d)) => Some((
                reader.moments("optim/generator", generator.params(), eg)?,
                reader.moments("optim/discriminator", d.params(), ed)?,
            )),
            (Some(_), None) => return Err(bad("optimizer state without a discriminator")),
            _ => None,
        };
        Ok(Self {
            step: manifest.step,
            epoch: manifest.epoch,
            seed: manifest.seed,
            config: manifest.config,
            generator,
            discriminator,
            optimizers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Io { .. } => e,
            other => Error::Format {
                path: path.into(),
                reason: other.to_string(),
            },
        })
    }
}
