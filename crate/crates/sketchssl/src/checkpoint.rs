//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! (kind, crate version, model config, parameter names and shapes, optional
//! optimizer config and step counts), then every parameter value as
//! little-endian `f64`, followed by the optimizer's first and second moments
//! when present. Values round-trip bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sketchssl_core::discriminator::{Discriminator, DiscriminatorConfig};
use sketchssl_core::generator::{Generator, GeneratorConfig};
use sketchssl_core::optim::{Adam, AdamConfig};
use sketchssl_core::params::ParamStore;
use sketchssl_core::retrieval::{RetrievalConfig, RetrievalModel};
use sketchssl_core::Tensor;

pub const MAGIC: &[u8; 8] = b"SKSSLCK1";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    version: String,
    config: serde_json::Value,
    params: Vec<(String, Vec<usize>)>,
    adam: Option<(AdamConfig, Vec<u64>)>,
}

/// A model type that can be written to and rebuilt from a checkpoint.
pub trait Persist: Sized {
    type Config: Serialize + DeserializeOwned;
    fn config(&self) -> &Self::Config;
    fn store(&self) -> &ParamStore;
    fn build(config: Self::Config) -> sketchssl_core::Result<Self>;
    fn load_values(&mut self, store: &ParamStore) -> sketchssl_core::Result<()>;
}

macro_rules! persist {
    ($t:ty, $c:ty) => {
        impl Persist for $t {
            type Config = $c;
            fn config(&self) -> &$c {
                &self.config
            }
            fn store(&self) -> &ParamStore {
                &self.store
            }
            fn build(config: $c) -> sketchssl_core::Result<Self> {
                <$t>::new(config, 0)
            }
            fn load_values(&mut self, store: &ParamStore) -> sketchssl_core::Result<()> {
                <$t>::load_values(self, store)
            }
        }
    };
}
persist!(Generator, GeneratorConfig);
persist!(RetrievalModel, RetrievalConfig);
persist!(Discriminator, DiscriminatorConfig);

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save<M: Persist>(path: &Path, kind: &str, model: &M, adam: Option<&Adam>) -> Result<()> {
    let store = model.store();
    let header = Header {
        kind: kind.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: serde_json::to_value(model.config())?,
        params: store
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect(),
        adam: adam.map(|a| (a.config.clone(), a.parts().2.to_vec())),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * store.num_scalars() * 3);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in store.params() {
        put_f64s(&mut out, p.value.data());
    }
    if let Some(a) = adam {
        let (m, v, _) = a.parts();
        for x in m.iter().chain(v) {
            put_f64s(&mut out, x);
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    f.write_all(&out)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        ensure!(self.pos + n <= self.bytes.len(), "checkpoint truncated");
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Load a checkpoint of the expected `kind`, returning the model and the
/// optimizer state if one was saved.
pub fn load<M: Persist>(path: &Path, kind: &str) -> Result<(M, Option<Adam>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .with_context(|| format!("opening checkpoint {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    ensure!(
        r.take(8)? == MAGIC,
        "{}: not a checkpoint file",
        path.display()
    );
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)
        .with_context(|| format!("{}: bad header", path.display()))?;
    if header.kind != kind {
        bail!(
            "{}: holds a {} checkpoint, expected {kind}",
            path.display(),
            header.kind
        );
    }
    let config: M::Config = serde_json::from_value(header.config)?;
    let mut model = M::build(config).map_err(anyhow::Error::msg)?;
    let mut store = ParamStore::new();
    for (name, shape) in &header.params {
        let n = shape.iter().product();
        store.add(
            name.clone(),
            Tensor::new(shape.clone(), r.f64s(n)?).map_err(anyhow::Error::msg)?,
        );
    }
    model
        .load_values(&store)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let adam = match header.adam {
        Some((cfg, t)) => {
            let sizes: Vec<usize> = store.params().iter().map(|p| p.value.len()).collect();
            let m = sizes
                .iter()
                .map(|&n| r.f64s(n))
                .collect::<Result<Vec<_>>>()?;
            let v = sizes
                .iter()
                .map(|&n| r.f64s(n))
                .collect::<Result<Vec<_>>>()?;
            Some(Adam::from_parts(cfg, model.store(), m, v, t).map_err(anyhow::Error::msg)?)
        }
        None => None,
    };
    ensure!(r.pos == bytes.len(), "{}: trailing bytes", path.display());
    Ok((model, adam))
}
