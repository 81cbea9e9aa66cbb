//! Binary weight files with a SHA-256 trailer, plus a TOML sidecar recording
//! the architecture spec and format version.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use autograd::Tensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::hex;
use super::{Classifier, ClassifierSpec, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CFSGCKPT";

pub trait Checkpointable: Sized {
    const KIND: &'static str;
    type Spec: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug;

    fn checkpoint_spec(&self) -> &Self::Spec;
    fn checkpoint_tensors(&self) -> Vec<(String, Tensor<f32>)>;
    fn from_checkpoint(spec: Self::Spec, tensors: Vec<(String, Tensor<f32>)>) -> Result<Self>;
}

impl Checkpointable for Classifier<f32> {
    const KIND: &'static str = "classifier";
    type Spec = ClassifierSpec;

    fn checkpoint_spec(&self) -> &ClassifierSpec {
        self.spec()
    }

    fn checkpoint_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        named(self.params().names(), self.params().tensors())
    }

    fn from_checkpoint(spec: ClassifierSpec, tensors: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        Classifier::from_parts(spec, tensors)
    }
}

impl Checkpointable for Generator<f32> {
    const KIND: &'static str = "generator";
    type Spec = GeneratorSpec;

    fn checkpoint_spec(&self) -> &GeneratorSpec {
        self.spec()
    }

    fn checkpoint_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        named(self.params().names(), self.params().tensors())
    }

    fn from_checkpoint(spec: GeneratorSpec, tensors: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        Generator::from_parts(spec, tensors)
    }
}

impl Checkpointable for Discriminator<f32> {
    const KIND: &'static str = "discriminator";
    type Spec = DiscriminatorSpec;

    fn checkpoint_spec(&self) -> &DiscriminatorSpec {
        self.spec()
    }

    fn checkpoint_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let mut out = named(self.params().names(), self.params().tensors());
        out.extend(self.sn_tensors());
        out
    }

    fn from_checkpoint(spec: DiscriminatorSpec, tensors: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        Discriminator::from_parts(spec, tensors)
    }
}

fn named(names: &[String], tensors: &[Tensor<f32>]) -> Vec<(String, Tensor<f32>)> {
    names.iter().cloned().zip(tensors.iter().cloned()).collect()
}

#[derive(Serialize, Deserialize)]
struct Sidecar<S> {
    format_version: u32,
    kind: String,
    sha256: String,
    spec: S,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(".toml");
    PathBuf::from(s)
}

fn encode(tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("weight file is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint weight file or truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("weight file checksum mismatch (corrupt or truncated)".into()));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("weight format version {version}, expected {FORMAT_VERSION}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel.ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
        let raw = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.push((name, Tensor::new(&shape, data)));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes in weight file".into()));
    }
    Ok(out)
}

pub fn save_checkpoint<M: Checkpointable>(model: &M, path: &Path) -> Result<()> {
    let bytes = encode(&model.checkpoint_tensors());
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        kind: M::KIND.to_owned(),
        sha256: hex(&bytes[bytes.len() - 32..]),
        spec: model.checkpoint_spec(),
    };
    let text = toml::to_string(&sidecar).map_err(|e| Error::Checkpoint(format!("sidecar: {e}")))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint<M: Checkpointable>(path: &Path) -> Result<M> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    let version = table.get("format_version").and_then(toml::Value::as_integer);
    if version != Some(i64::from(FORMAT_VERSION)) {
        return Err(Error::Checkpoint(format!("{}: format_version {version:?}, expected {FORMAT_VERSION}", side.display())));
    }
    let kind = table.get("kind").and_then(toml::Value::as_str);
    if kind != Some(M::KIND) {
        return Err(Error::Checkpoint(format!("{}: kind {kind:?}, expected {}", side.display(), M::KIND)));
    }
    let sidecar: Sidecar<M::Spec> =
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode(&bytes)?;
    if hex(&bytes[bytes.len() - 32..]) != sidecar.sha256 {
        return Err(Error::Checkpoint("sidecar checksum does not match the weight file".into()));
    }
    M::from_checkpoint(sidecar.spec, tensors)
}

/// Load and additionally require the stored spec to equal `expected`.
pub fn load_checkpoint_expecting<M: Checkpointable>(path: &Path, expected: &M::Spec) -> Result<M> {
    let model: M = load_checkpoint(path)?;
    if model.checkpoint_spec() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: stored spec {:?} differs from expected {:?}",
            path.display(),
            model.checkpoint_spec(),
            expected
        )));
    }
    Ok(model)
}
