//! Versioned binary checkpoints. The byte layout is described in
//! `docs/checkpoint.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dynamics::FLATTEN_ORDER_VERSION;
use crate::error::{Error, Result};

use super::model::ModelConfig;
use super::params::ParamStore;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSDECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model configuration, free-form metadata, and the full parameter store
/// including Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub metadata: serde_json::Value,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    #[serde(default)]
    metadata: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, data: &[f64]) {
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                detail: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let n = self.u64(what)?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len())
            .ok_or(Error::Format {
                offset: at as u64,
                detail: format!("implausible {what} {n}"),
            })
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            metadata: self.metadata.clone(),
        })
        .map_err(|e| Error::Config(format!("serializing checkpoint header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        put_u32(&mut out, FLATTEN_ORDER_VERSION);
        put_u64(&mut out, header.len() as u64);
        out.extend_from_slice(&header);
        put_u64(&mut out, self.params.step_count());
        put_u32(&mut out, self.params.len() as u32);
        for p in self.params.params() {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.value.rank() as u32);
            for &d in p.value.shape() {
                put_u64(&mut out, d as u64);
            }
            put_f64s(&mut out, p.value.data());
            put_f64s(&mut out, p.m.data());
            put_f64s(&mut out, p.v.data());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                detail: "not a psdebnn checkpoint (bad magic)".into(),
            });
        }
        let version = r.u32("format version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 8,
                detail: format!("checkpoint format version {version}, this build reads {CHECKPOINT_VERSION}"),
            });
        }
        let order = r.u32("flatten order version")?;
        if order != FLATTEN_ORDER_VERSION {
            return Err(Error::Format {
                offset: 12,
                detail: format!("flatten order version {order}, this build uses {FLATTEN_ORDER_VERSION}"),
            });
        }
        let header_len = r.len("header length")?;
        let header_at = r.pos;
        let header: Header = serde_json::from_slice(r.take(header_len, "header")?).map_err(|e| Error::Format {
            offset: header_at as u64,
            detail: format!("bad header JSON: {e}"),
        })?;
        let step = r.u64("step count")?;
        let count = r.u32("parameter count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Format {
                    offset: name_at as u64,
                    detail: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.len("dimension")?);
            }
            let n: usize = shape.iter().product();
            let value = Tensor::new(shape.clone(), r.f64s(n, "values")?)?;
            let m = Tensor::new(shape.clone(), r.f64s(n, "first moments")?)?;
            let v = Tensor::new(shape, r.f64s(n, "second moments")?)?;
            params.register(&name, value)?;
            let p = params.params_mut().last_mut().expect("just registered");
            p.m = m;
            p.v = v;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                detail: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        params.set_step_count(step);
        Ok(Checkpoint {
            config: header.config,
            metadata: header.metadata,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DriftSpec, DynamicsSpec};
    use crate::inference::{InitConfig, Psdebnn};
    use crate::solvers::RegimeSchedule;

    fn sample() -> Checkpoint {
        let config = ModelConfig {
            dynamics: DynamicsSpec {
                input_dim: 0,
                augment_dim: 0,
                hidden: None,
                drift: DriftSpec::Zero,
                prior: Default::default(),
                weight_dim: Some(3),
            },
            schedule: RegimeSchedule::full_sde(4),
            sigma: 0.5,
            num_classes: 0,
            init: InitConfig::default(),
        };
        let model = Psdebnn::new(config.clone()).unwrap();
        let mut params = model.init_params(1).unwrap();
        params.accumulate_grad("w0", &Tensor::row(vec![1.0, -2.0, 0.5])).unwrap();
        params.adam_step(&Default::default());
        Checkpoint {
            config,
            metadata: serde_json::json!({"epoch": 3}),
            params,
        }
    }

    #[test]
    fn round_trip_preserves_values_and_moments() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        let mut expected = ck.params.clone();
        expected.zero_grad();
        assert_eq!(back.params, expected);
        assert_eq!(back.config, ck.config);
        assert_eq!(back.metadata, ck.metadata);
    }

    #[test]
    fn version_mismatch_and_truncation_are_format_errors() {
        let mut bytes = sample().to_bytes().unwrap();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(Checkpoint::from_bytes(truncated), Err(Error::Format { .. })));
        bytes[8] = 99;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format { offset: 8, .. })));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Format { offset: 0, .. })));
    }
}
