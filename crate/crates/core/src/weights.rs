//! Weight files and encoder import.
//!
//! File layout, all integers little-endian `u32`:
//!
//! ```text
//! "UNFW" | version | entry count
//! per entry: name length | UTF-8 name | dtype (0 = f32) | rank | dims...
//! payload: every tensor's f32 values, row-major, in entry order
//! ```
//!
//! Payload offsets are implied by entry order, so ranges cannot overlap.
//!
//! # Encoder naming map
//!
//! [`import_encoder_weights`] accepts torchvision ResNet34 state-dict names
//! and maps each one by prefixing `encoder.`:
//!
//! | source                               | graph                                        |
//! |--------------------------------------|----------------------------------------------|
//! | `conv1.weight`                       | `encoder.conv1.weight`                       |
//! | `bn1.{weight,bias,running_mean,running_var}` | `encoder.bn1.*`                      |
//! | `layer{s}.{b}.conv{1,2}.weight`      | `encoder.layer{s}.{b}.conv{1,2}.weight`      |
//! | `layer{s}.{b}.bn{1,2}.*`             | `encoder.layer{s}.{b}.bn{1,2}.*`             |
//! | `layer{s}.{b}.downsample.0.weight`   | `encoder.layer{s}.{b}.downsample.0.weight`   |
//! | `layer{s}.{b}.downsample.1.*`        | `encoder.layer{s}.{b}.downsample.1.*`        |
//!
//! Names already carrying the `encoder.` prefix are taken as is. Anything
//! else (`fc.*`, `*.num_batches_tracked`, decoder tensors) is skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ChannelScale, ModelConfig, ModelGraph, DEFAULT_INPUT_SIZE};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"UNFW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u32 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Start of this tensor in the payload, in elements.
    pub offset: usize,
}

impl WeightEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named f32 tensors in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: Vec<WeightEntry>,
    payload: Vec<f32>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshot of every tensor of `g`, running statistics included.
    pub fn from_graph<T: Scalar>(g: &ModelGraph<T>) -> Result<Self> {
        let mut store = Self::new();
        for p in g.params() {
            if !p.value.is_finite() {
                return Err(Error::NonFinite { layer: p.name.clone() });
            }
            let data: Vec<f32> = p.value.data().iter().map(|v| v.f64() as f32).collect();
            store.insert(&p.name, p.value.shape(), &data)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::tensor(name, format!("shape {shape:?} does not hold {} values", data.len())));
        }
        if self.entry(name).is_some() {
            return Err(Error::tensor(name, "duplicate entry"));
        }
        self.entries.push(WeightEntry { name: name.to_string(), shape: shape.to_vec(), offset: self.payload.len() });
        self.payload.extend_from_slice(data);
        Ok(())
    }

    pub fn entries(&self) -> &[WeightEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&WeightEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entry(name).map(|e| (e.shape.as_slice(), &self.payload[e.offset..e.offset + e.len()]))
    }

    /// Keeps only the entries for which `keep` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        let old = std::mem::take(self);
        for e in old.entries.iter().filter(|e| keep(&e.name)) {
            let data = &old.payload[e.offset..e.offset + e.len()];
            self.insert(&e.name, &e.shape, data).expect("entries were valid");
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.entries.len() * 64 + self.payload.len() * 4);
        let put = |v: usize, out: &mut Vec<u8>| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        put(VERSION as usize, &mut out);
        put(self.entries.len(), &mut out);
        for e in &self.entries {
            put(e.name.len(), &mut out);
            out.extend_from_slice(e.name.as_bytes());
            put(DTYPE_F32 as usize, &mut out);
            put(e.shape.len(), &mut out);
            for &d in &e.shape {
                put(d, &mut out);
            }
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Format("bad magic, not a UNFW weight file".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32("entry count")? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        let mut offset = 0usize;
        for i in 0..count {
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format(format!("entry {i}: name is not UTF-8")))?
                .to_string();
            let dtype = r.u32("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(Error::tensor(name, format!("unsupported dtype code {dtype}")));
            }
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let e = WeightEntry { name, shape, offset };
            offset = offset
                .checked_add(e.len())
                .ok_or_else(|| Error::Format("payload size overflows".into()))?;
            entries.push(e);
        }
        let rest = &bytes[r.pos..];
        if rest.len() != offset * 4 {
            let what = if rest.len() < offset * 4 { "truncated payload" } else { "trailing bytes after payload" };
            return Err(Error::Format(format!("{what}: expected {} bytes, found {}", offset * 4, rest.len())));
        }
        let payload = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { entries, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).and_then(|_| f.sync_all()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Recovers the model configuration from tensor shapes. Without fusion
    /// the input size is not recorded in any shape; `input_size` supplies it
    /// (default 256).
    pub fn infer_config(&self, input_size: Option<usize>) -> Result<ModelConfig> {
        let shape = |name: &str| {
            self.entry(name).map(|e| e.shape.clone()).ok_or_else(|| Error::tensor(name, "missing from weight file"))
        };
        let stem = shape("encoder.conv1.weight")?;
        let channel_scale = ChannelScale::new(stem[0], 64)?;
        let fusion_enabled = self.entry("global.fc1.weight").is_some();
        let mut cfg = ModelConfig { channel_scale, fusion_enabled, ..ModelConfig::default() };
        if fusion_enabled {
            cfg.num_classes = shape("classifier.fc2.weight")?[0];
            let flat = shape("global.fc1.weight")?[1];
            let c512 = channel_scale.apply(512)?;
            let side = ((flat / c512) as f64).sqrt().round() as usize;
            if side * side * c512 != flat {
                return Err(Error::tensor("global.fc1.weight", format!("input width {flat} is not {c512} x side^2")));
            }
            let inferred = side * 32;
            if let Some(s) = input_size.filter(|&s| s != inferred) {
                return Err(Error::Config(format!("weights are for {inferred}x{inferred} input, not {s}")));
            }
            cfg.input_size = inferred;
        } else {
            cfg.input_size = input_size.unwrap_or(DEFAULT_INPUT_SIZE);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copies every tensor into `g`. The name sets must agree exactly.
    pub fn apply<T: Scalar>(&self, g: &mut ModelGraph<T>) -> Result<()> {
        for p in g.params() {
            let e = self.entry(&p.name).ok_or_else(|| Error::tensor(&p.name, "missing from weight file"))?;
            if e.shape != p.value.shape() {
                return Err(Error::tensor(
                    &p.name,
                    format!("shape {:?} in file, model expects {:?}", e.shape, p.value.shape()),
                ));
            }
        }
        if let Some(extra) = self.entries.iter().find(|e| g.param(&e.name).is_none()) {
            return Err(Error::tensor(&extra.name, "not a parameter of this model"));
        }
        for p in g.params_mut() {
            let (_, data) = self.get(&p.name).expect("checked above");
            p.value.data_mut().iter_mut().zip(data).for_each(|(v, &x)| *v = T::of(f64::from(x)));
        }
        Ok(())
    }

    pub fn build_graph<T: Scalar>(&self, input_size: Option<usize>) -> Result<ModelGraph<T>> {
        let mut g = ModelGraph::new(self.infer_config(input_size)?, 0)?;
        self.apply(&mut g)?;
        Ok(g)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated header at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4).map_err(|_| Error::Format(format!("truncated header reading {what}")))?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn save_weights<T: Scalar>(g: &ModelGraph<T>, path: &Path) -> Result<()> {
    WeightStore::from_graph(g)?.write(path)
}

/// Loads a graph whose configuration is inferred from the file.
pub fn load_weights(path: &Path) -> Result<ModelGraph<f32>> {
    WeightStore::read(path)?.build_graph(None)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImportReport {
    /// Graph names that received a tensor.
    pub imported: Vec<String>,
    /// Source names with no encoder counterpart.
    pub skipped: Vec<String>,
    /// Encoder tensors the source did not provide; left as they were.
    pub missing: Vec<String>,
}

fn encoder_name(src: &str) -> Option<String> {
    if src.ends_with(".num_batches_tracked") {
        return None;
    }
    let bare = src.strip_prefix("encoder.").unwrap_or(src);
    let known = bare.starts_with("conv1.") || bare.starts_with("bn1.") || bare.starts_with("layer");
    known.then(|| format!("encoder.{bare}"))
}

/// Replaces encoder tensors of `g` with those found in `src`; all other
/// layers are untouched. Shapes are checked for every matched name before
/// anything is written.
pub fn import_encoder_weights<T: Scalar>(g: &mut ModelGraph<T>, src: &WeightStore) -> Result<ImportReport> {
    let mut report = ImportReport::default();
    let mut plan = Vec::new();
    for e in src.entries() {
        let target = encoder_name(&e.name).and_then(|n| g.param(&n).map(|p| (n, p.value.shape().to_vec())));
        match target {
            Some((name, shape)) if shape == e.shape => plan.push((name, e)),
            Some((_, shape)) => {
                return Err(Error::tensor(&e.name, format!("shape {:?} conflicts with encoder shape {shape:?}", e.shape)))
            }
            None => report.skipped.push(e.name.clone()),
        }
    }
    for (name, e) in plan {
        let (_, data) = src.get(&e.name).expect("entry exists");
        let p = g.param_mut(&name).expect("resolved above");
        p.value.data_mut().iter_mut().zip(data).for_each(|(v, &x)| *v = T::of(f64::from(x)));
        report.imported.push(name);
    }
    report.missing = g
        .params()
        .iter()
        .filter(|p| p.name.starts_with("encoder.") && !report.imported.contains(&p.name))
        .map(|p| p.name.clone())
        .collect();
    Ok(report)
}
