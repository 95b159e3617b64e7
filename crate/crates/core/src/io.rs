//! Tensor files, named-tensor bundles (datasets and checkpoints), config
//! hashing, manifests and atomic file writes.
//!
//! Tensor file layout, all little-endian:
//!
//! ```text
//! "PEIL" | version u16 | dtype u8 (0 real, 1 complex) | rank u8 | dims u64 x rank | f64 payload
//! ```
//!
//! Complex payloads are interleaved `(re, im)`. A bundle is
//! `"PEIB" | version u16 | meta_len u64 | meta (UTF-8 JSON) | count u32 |`
//! then per entry `name_len u32 | name | len u64 | tensor file`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::guard::LabelGuard;
use crate::mri::{MriConfig, MriLabels, MriSample};
use crate::ofdm::{DatasetConfig, WirelessLabels, WirelessSample};
use crate::params::ParamStore;
use crate::tensor::{ComplexTensor, RealTensor, Value};

pub const TENSOR_MAGIC: &[u8; 4] = b"PEIL";
pub const BUNDLE_MAGIC: &[u8; 4] = b"PEIB";
pub const FORMAT_VERSION: u16 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

pub fn encode_tensor(v: &Value) -> Vec<u8> {
    let shape = v.shape();
    let mut out = Vec::with_capacity(8 + 8 * shape.len() + 16 * v.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(if v.is_complex() { DTYPE_COMPLEX } else { DTYPE_REAL });
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match v {
        Value::Real(r) => r.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Value::Complex(c) => {
            for (re, im) in c.re().data().iter().zip(c.im().data()) {
                out.extend_from_slice(&re.to_le_bytes());
                out.extend_from_slice(&im.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptPayload(format!("truncated {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4, "magic")? != magic {
            return Err(Error::CorruptPayload("bad magic".into()));
        }
        let found = self.u16("version")?;
        if found != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch {
                found,
                expected: FORMAT_VERSION,
            });
        }
        Ok(())
    }
}

pub fn decode_tensor(buf: &[u8]) -> Result<Value> {
    let mut c = Cursor { buf, pos: 0 };
    c.header(TENSOR_MAGIC)?;
    let dtype = c.u8("dtype")?;
    let rank = c.u8("rank")? as usize;
    let shape = (0..rank).map(|_| c.u64("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::CorruptPayload("dims overflow".into()))?;
    let width = match dtype {
        DTYPE_REAL => 1,
        DTYPE_COMPLEX => 2,
        t => return Err(Error::CorruptPayload(format!("unknown dtype tag {t}"))),
    };
    let expected = numel
        .checked_mul(8 * width)
        .ok_or_else(|| Error::CorruptPayload("payload size overflow".into()))?;
    let payload = &buf[c.pos..];
    if payload.len() != expected {
        return Err(Error::CorruptPayload(format!(
            "payload is {} bytes, dims imply {expected}",
            payload.len()
        )));
    }
    let floats: Vec<f64> = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok(if width == 1 {
        Value::Real(RealTensor::new(shape, floats)?)
    } else {
        let re = floats.iter().step_by(2).copied().collect();
        let im = floats.iter().skip(1).step_by(2).copied().collect();
        Value::Complex(ComplexTensor::from_parts(&shape, re, im)?)
    })
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::ConfigInvalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save_tensor(path: &Path, v: &Value) -> Result<()> {
    write_atomic(path, &encode_tensor(v))
}

pub fn load_tensor(path: &Path) -> Result<Value> {
    decode_tensor(&fs::read(path)?)
}

/// Named tensors with a JSON metadata document.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub meta: serde_json::Value,
    pub entries: Vec<(String, Value)>,
}

impl Bundle {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, v: impl Into<Value>) {
        self.entries.push((name.into(), v.into()));
    }

    pub fn get(&self, name: &str) -> Result<&Value> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::CorruptPayload(format!("missing entry '{name}'")))
    }

    pub fn real(&self, name: &str) -> Result<&RealTensor> {
        self.get(name)?
            .as_real()
            .ok_or_else(|| Error::CorruptPayload(format!("entry '{name}' is not real")))
    }

    pub fn complex(&self, name: &str) -> Result<&ComplexTensor> {
        self.get(name)?
            .as_complex()
            .ok_or_else(|| Error::CorruptPayload(format!("entry '{name}' is not complex")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = canonical_json(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, v) in &self.entries {
            let t = encode_tensor(v);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            out.extend_from_slice(&t);
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf, pos: 0 };
        c.header(BUNDLE_MAGIC)?;
        let n = c.u64("meta length")? as usize;
        let meta = serde_json::from_slice(c.take(n, "meta")?).map_err(|e| Error::CorruptPayload(e.to_string()))?;
        let count = c.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let n = c.u32("name length")? as usize;
            let name = String::from_utf8(c.take(n, "name")?.to_vec()).map_err(|e| Error::CorruptPayload(e.to_string()))?;
            let len = c.u64("tensor length")? as usize;
            entries.push((name, decode_tensor(c.take(len, "tensor")?)?));
        }
        if c.pos != buf.len() {
            return Err(Error::CorruptPayload("trailing bytes".into()));
        }
        Ok(Self { meta, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// JSON with object keys sorted, so equal values serialise identically.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&serde_json::to_value(value)?)?)
}

/// Hex SHA-256 of the canonical JSON of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A checkpoint is a bundle whose entries are the parameters in store order.
pub fn params_to_bundle(meta: serde_json::Value, params: &ParamStore) -> Bundle {
    let mut b = Bundle::new(meta);
    for (name, t) in params.iter() {
        b.push(name, t.clone());
    }
    b
}

pub fn params_from_bundle(b: &Bundle) -> Result<ParamStore> {
    let mut p = ParamStore::new();
    for (name, v) in &b.entries {
        let t = v
            .as_real()
            .ok_or_else(|| Error::CorruptPayload(format!("parameter '{name}' is not real")))?;
        p.push(name.clone(), t.clone());
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to regenerate a set of outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub outputs: Vec<OutputRecord>,
}

impl Manifest {
    pub fn new<T: Serialize>(command: &str, config: &T, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            seeds,
            outputs: Vec::new(),
        })
    }

    /// Records `path` with the hash of its current contents.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(OutputRecord {
            path: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: sha256_hex(&fs::read(path)?),
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// `<path>.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn stack_complex(items: &[&ComplexTensor]) -> Result<ComplexTensor> {
    let inner = items.first().map(|t| t.shape().to_vec()).unwrap_or_default();
    let (mut re, mut im) = (Vec::new(), Vec::new());
    for t in items {
        if t.shape() != inner.as_slice() {
            return Err(Error::shape("stack", t.shape(), &inner));
        }
        re.extend_from_slice(t.re().data());
        im.extend_from_slice(t.im().data());
    }
    let shape: Vec<usize> = std::iter::once(items.len()).chain(inner).collect();
    ComplexTensor::from_parts(&shape, re, im)
}

fn unstack_complex(t: &ComplexTensor) -> Result<Vec<ComplexTensor>> {
    let (&n, inner) = t
        .shape()
        .split_first()
        .ok_or_else(|| Error::CorruptPayload("stacked tensor has rank 0".into()))?;
    let m: usize = inner.iter().product();
    (0..n)
        .map(|i| {
            ComplexTensor::from_parts(
                inner,
                t.re().data()[i * m..(i + 1) * m].to_vec(),
                t.im().data()[i * m..(i + 1) * m].to_vec(),
            )
        })
        .collect()
}

fn bools(v: &[bool]) -> Vec<f64> {
    v.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

fn rows_of(t: &RealTensor, n: usize) -> Result<Vec<Vec<bool>>> {
    if n == 0 || t.numel() % n != 0 {
        return Err(Error::CorruptPayload("mask size does not match sample count".into()));
    }
    let m = t.numel() / n;
    Ok(t.data().chunks(m).map(|c| c.iter().map(|&v| v != 0.0).collect()).collect())
}

fn meta_config<T: for<'de> Deserialize<'de>>(b: &Bundle, kind: &str) -> Result<T> {
    if b.meta.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(Error::CorruptPayload(format!("not a {kind} bundle")));
    }
    let cfg = b
        .meta
        .get("config")
        .cloned()
        .ok_or_else(|| Error::CorruptPayload("missing config".into()))?;
    serde_json::from_value(cfg).map_err(|e| Error::CorruptPayload(e.to_string()))
}

/// Stores frames together with their hidden labels.
pub fn wireless_to_bundle(cfg: &DatasetConfig, samples: &[WirelessSample]) -> Result<Bundle> {
    let guard = LabelGuard::open();
    let mut b = Bundle::new(serde_json::json!({"kind": "wireless", "config": cfg}));
    let xs: Vec<&ComplexTensor> = samples.iter().map(|s| &s.x).collect();
    let ys: Vec<&ComplexTensor> = samples.iter().map(|s| &s.y).collect();
    b.push("x", stack_complex(&xs)?);
    b.push("y", stack_complex(&ys)?);
    let masks: Vec<f64> = samples.iter().flat_map(|s| bools(&s.pilot_mask)).collect();
    b.push(
        "pilot_mask",
        RealTensor::new(vec![samples.len(), masks.len() / samples.len().max(1)], masks)?,
    );
    let mut hs = Vec::new();
    let mut thetas = Vec::new();
    for s in samples {
        let l = s.labels(&guard)?;
        hs.push(ComplexTensor::from_complex(&[l.h.len()], &l.h)?);
        thetas.push(l.theta);
    }
    b.push("h", stack_complex(&hs.iter().collect::<Vec<_>>())?);
    b.push("theta", RealTensor::from_vec(thetas));
    b.push("snr_db", RealTensor::from_vec(samples.iter().map(|s| s.snr_db).collect()));
    Ok(b)
}

pub fn wireless_from_bundle(b: &Bundle) -> Result<(DatasetConfig, Vec<WirelessSample>)> {
    let cfg: DatasetConfig = meta_config(b, "wireless")?;
    let xs = unstack_complex(b.complex("x")?)?;
    let ys = unstack_complex(b.complex("y")?)?;
    let hs = unstack_complex(b.complex("h")?)?;
    let theta = b.real("theta")?.data();
    let snr = b.real("snr_db")?.data();
    let n = xs.len();
    if ys.len() != n || hs.len() != n || theta.len() != n || snr.len() != n {
        return Err(Error::CorruptPayload("inconsistent sample counts".into()));
    }
    let masks = rows_of(b.real("pilot_mask")?, n)?;
    let samples = (0..n)
        .map(|i| {
            WirelessSample::new(
                xs[i].clone(),
                masks[i].clone(),
                ys[i].clone(),
                snr[i],
                WirelessLabels {
                    h: hs[i].to_complex_vec(),
                    theta: theta[i],
                },
            )
        })
        .collect();
    Ok((cfg, samples))
}

pub fn mri_to_bundle(cfg: &MriConfig, samples: &[MriSample]) -> Result<Bundle> {
    let guard = LabelGuard::open();
    let mut b = Bundle::new(serde_json::json!({"kind": "mri", "config": cfg}));
    let n = samples.len();
    b.push("x", stack_complex(&samples.iter().map(|s| &s.x).collect::<Vec<_>>())?);
    b.push("y", stack_complex(&samples.iter().map(|s| &s.y).collect::<Vec<_>>())?);
    let maps = samples.iter().map(|s| Ok(&s.labels(&guard)?.maps)).collect::<Result<Vec<_>>>()?;
    b.push("maps", stack_complex(&maps)?);
    let object: Vec<f64> = samples.iter().flat_map(|s| bools(&s.object)).collect();
    b.push("object", RealTensor::new(vec![n, object.len() / n.max(1)], object)?);
    let mask: Vec<f64> = samples.iter().flat_map(|s| bools(&s.mask)).collect();
    b.push("mask", RealTensor::new(vec![n, mask.len() / n.max(1)], mask)?);
    b.push("noise_std", RealTensor::from_vec(samples.iter().map(|s| s.noise_std).collect()));
    Ok(b)
}

pub fn mri_from_bundle(b: &Bundle) -> Result<(MriConfig, Vec<MriSample>)> {
    let cfg: MriConfig = meta_config(b, "mri")?;
    let xs = unstack_complex(b.complex("x")?)?;
    let ys = unstack_complex(b.complex("y")?)?;
    let maps = unstack_complex(b.complex("maps")?)?;
    let noise = b.real("noise_std")?.data();
    let n = xs.len();
    if ys.len() != n || maps.len() != n || noise.len() != n {
        return Err(Error::CorruptPayload("inconsistent sample counts".into()));
    }
    let object = rows_of(b.real("object")?, n)?;
    let mask = rows_of(b.real("mask")?, n)?;
    let samples = (0..n)
        .map(|i| {
            MriSample::new(
                xs[i].clone(),
                object[i].clone(),
                mask[i].clone(),
                ys[i].clone(),
                noise[i],
                MriLabels { maps: maps[i].clone() },
            )
        })
        .collect();
    Ok((cfg, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_complex() -> Value {
        ComplexTensor::from_parts(
            &[2, 3],
            vec![1.0, -0.0, 3.5, f64::MIN_POSITIVE, 1e300, -2.0],
            vec![0.1, 0.2, 0.3, -0.4, 0.5, f64::NAN],
        )
        .unwrap()
        .into()
    }

    #[test]
    fn tensor_round_trip_and_layout() {
        let v = sample_complex();
        let bytes = encode_tensor(&v);
        assert_eq!(&bytes[..4], b"PEIL");
        assert_eq!(bytes.len(), 4 + 2 + 1 + 1 + 2 * 8 + 6 * 16);
        let back = decode_tensor(&bytes).unwrap();
        assert_eq!(encode_tensor(&back), bytes);
        let r: Value = RealTensor::scalar(2.5).into();
        assert_eq!(decode_tensor(&encode_tensor(&r)).unwrap(), r);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode_tensor(&sample_complex());
        assert!(matches!(decode_tensor(&bytes[..bytes.len() - 1]), Err(Error::CorruptPayload(_))));
        assert!(matches!(decode_tensor(&bytes[..5]), Err(Error::CorruptPayload(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor(&bad), Err(Error::CorruptPayload(_))));
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(matches!(decode_tensor(&ver), Err(Error::FormatVersionMismatch { found: 9, .. })));
        let mut tag = bytes;
        tag[6] = 7;
        assert!(matches!(decode_tensor(&tag), Err(Error::CorruptPayload(_))));
    }

    #[test]
    fn bundle_round_trip_and_truncation() {
        let mut b = Bundle::new(serde_json::json!({"b": 1, "a": [1.5, 2]}));
        b.push("x", sample_complex());
        b.push("w", RealTensor::from_vec(vec![1.0, 2.0]));
        let bytes = b.encode().unwrap();
        let back = Bundle::decode(&bytes).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.real("w").unwrap().data(), &[1.0, 2.0]);
        assert!(back.complex("w").is_err());
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(Bundle::decode(&bytes[..cut]), Err(Error::CorruptPayload(_))));
        }
    }

    #[test]
    fn files_and_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/t.peil");
        save_tensor(&p, &sample_complex()).unwrap();
        assert_eq!(encode_tensor(&load_tensor(&p).unwrap()), encode_tensor(&sample_complex()));
        let a = config_hash(&serde_json::json!({"x": 1, "y": 2})).unwrap();
        let b = config_hash(&serde_json::json!({"y": 2, "x": 1})).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut m = Manifest::new("test", &serde_json::json!({"x": 1}), vec![3]).unwrap();
        m.record(&p).unwrap();
        let mp = manifest_path(&p);
        m.save(&mp).unwrap();
        assert_eq!(Manifest::load(&mp).unwrap(), m);
    }

    #[test]
    fn datasets_round_trip_with_labels() {
        let cfg = DatasetConfig {
            n_frames: 3,
            ..DatasetConfig::default()
        };
        let ds = crate::ofdm::generate_dataset(&cfg).unwrap();
        let b = wireless_to_bundle(&cfg, &ds).unwrap();
        let (c2, back) = wireless_from_bundle(&Bundle::decode(&b.encode().unwrap()).unwrap()).unwrap();
        assert_eq!((c2, back), (cfg, ds));
        let mcfg = MriConfig {
            size: 16,
            coils: 2,
            n: 2,
            ..MriConfig::default()
        };
        let ms = crate::mri::generate_mri_dataset(&mcfg).unwrap();
        let b = mri_to_bundle(&mcfg, &ms).unwrap();
        let (c2, back) = mri_from_bundle(&Bundle::decode(&b.encode().unwrap()).unwrap()).unwrap();
        assert_eq!((c2, back), (mcfg, ms));
        assert!(wireless_from_bundle(&b).is_err());
    }
}
