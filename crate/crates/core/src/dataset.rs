//! Directory-per-class image corpora: `root/{train,val,test}/{class}/{image}`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::{self, FilterType};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::colorspace::{normalize, replicate_l, rgb_to_lab, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.dir_name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`, expected train, val or test")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    /// Path relative to the manifest root.
    pub path: PathBuf,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Sorted class names; a class's index is its position.
    pub classes: Vec<String>,
    pub entries: Vec<Entry>,
    /// Names from the class list with no directory under the root.
    pub missing_classes: Vec<String>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Indices into `entries` belonging to `split`.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].split == split).collect()
    }

    pub fn path(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].path)
    }
}

/// One class name per line; blank lines and `#` comments are ignored.
pub fn read_class_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        out.push(entry.map_err(|e| Error::io(path, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Walks the corpus. Class indices follow sorted names and do not depend on
/// directory enumeration order.
pub fn scan(root: &Path, class_list: Option<&[String]>) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut found = BTreeSet::new();
    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        if dir.is_dir() {
            for class_dir in sorted_dir(&dir)?.into_iter().filter(|p| p.is_dir()) {
                if let Some(name) = class_dir.file_name().and_then(|n| n.to_str()) {
                    found.insert(name.to_string());
                }
            }
        }
    }
    let (classes, missing_classes): (Vec<String>, Vec<String>) = match class_list {
        Some(list) => {
            let wanted: BTreeSet<&String> = list.iter().collect();
            let missing = wanted.iter().filter(|c| !found.contains(**c)).map(|c| c.to_string()).collect();
            (wanted.into_iter().filter(|c| found.contains(*c)).cloned().collect(), missing)
        }
        None => (found.into_iter().collect(), Vec::new()),
    };
    for c in &missing_classes {
        log::warn!("class `{c}` from the class list has no directory under {}", root.display());
    }

    let mut entries = Vec::new();
    for split in Split::ALL {
        for (class, name) in classes.iter().enumerate() {
            let dir = root.join(split.dir_name()).join(name);
            if !dir.is_dir() {
                continue;
            }
            for path in sorted_dir(&dir)?.into_iter().filter(|p| is_image(p)) {
                let path = path.strip_prefix(root).expect("walked from root").to_path_buf();
                entries.push(Entry { path, class, split });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Dataset(format!("no images found under {}", root.display())));
    }
    Ok(DatasetManifest { root: root.to_path_buf(), classes, entries, missing_classes })
}

/// A network-ready sample: `input` is `3 x S x S` replicated lightness,
/// `target` is `2 x S x S` normalized chroma.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub label: usize,
}

impl Example {
    /// Runs the Lab pipeline on an image already at the working size.
    pub fn from_rgb(img: &RgbImage, label: usize) -> Result<Self> {
        let (w, h) = (img.width(), img.height());
        let pair = normalize(&rgb_to_lab(img));
        let input = replicate_l(&pair.l_norm)?;
        let cast = |d: &[f64]| d.iter().map(|&v| v as f32).collect::<Vec<_>>();
        Ok(Self {
            input: Tensor::from_vec(&[3, h, w], cast(&input.data))?,
            target: Tensor::from_vec(&[2, h, w], cast(&pair.ab_norm.data))?,
            label,
        })
    }
}

/// Decodes an image and resizes it bilinearly to `size x size`.
pub fn load_rgb(path: &Path, size: usize) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?;
    let rgb = img.to_rgb8();
    let s = size as u32;
    let rgb = if rgb.dimensions() == (s, s) { rgb } else { imageops::resize(&rgb, s, s, FilterType::Triangle) };
    Ok(RgbImage::from_dynamic(&image::DynamicImage::ImageRgb8(rgb)))
}

pub fn load_example(manifest: &DatasetManifest, index: usize, size: usize) -> Result<Example> {
    let entry = manifest
        .entries
        .get(index)
        .ok_or_else(|| Error::Dataset(format!("index {index} out of range for {} entries", manifest.entries.len())))?;
    Example::from_rgb(&load_rgb(&manifest.path(index), size)?, entry.class)
}

/// Random access to examples, as consumed by training and evaluation.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<Example>;
    /// Human-readable identity of an example, for reports.
    fn describe(&self, index: usize) -> String {
        format!("#{index}")
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ExampleSource for [Example] {
    fn len(&self) -> usize {
        <[Example]>::len(self)
    }

    fn load(&self, index: usize) -> Result<Example> {
        self.get(index).cloned().ok_or_else(|| Error::Dataset(format!("index {index} out of range")))
    }
}

impl ExampleSource for Vec<Example> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, index: usize) -> Result<Example> {
        self.as_slice().load(index)
    }
}

/// One split of a manifest, decoded on demand at a fixed size.
pub struct SplitSource<'a> {
    manifest: &'a DatasetManifest,
    indices: Vec<usize>,
    size: usize,
}

impl<'a> SplitSource<'a> {
    pub fn new(manifest: &'a DatasetManifest, split: Split, size: usize) -> Result<Self> {
        let indices = manifest.split_indices(split);
        if indices.is_empty() {
            return Err(Error::Dataset(format!("split `{split}` has no images")));
        }
        Ok(Self { manifest, indices, size })
    }

    pub fn entry(&self, index: usize) -> &Entry {
        &self.manifest.entries[self.indices[index]]
    }
}

impl ExampleSource for SplitSource<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn load(&self, index: usize) -> Result<Example> {
        load_example(self.manifest, self.indices[index], self.size)
    }

    fn describe(&self, index: usize) -> String {
        self.entry(index).path.display().to_string()
    }
}

/// Seeded permutation of `0..len` cut into batches; the final short batch
/// is kept. Each epoch draws from its own stream of the seeded generator.
pub fn batch_plan(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Deterministic procedurally drawn images (soft gradients with a few
/// saturated rectangles), for smoke tests and sanity runs.
pub fn synthetic_images(count: usize, size: usize, seed: u64) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
            let tilt: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let mut px: Vec<[u8; 3]> = (0..size * size)
                .map(|i| {
                    let t = ((i / size) + (i % size)) as f64 / (2 * size) as f64 - 0.5;
                    std::array::from_fn(|c| (base[c] + 80.0 * tilt[c] * t).clamp(0.0, 255.0) as u8)
                })
                .collect();
            for _ in 0..rng.random_range(1..4) {
                let color: [u8; 3] = std::array::from_fn(|_| rng.random_range(0..=255));
                let (x0, y0) = (rng.random_range(0..size / 2), rng.random_range(0..size / 2));
                let (w, h) = (rng.random_range(size / 8..size / 2), rng.random_range(size / 8..size / 2));
                for y in y0..(y0 + h).min(size) {
                    for x in x0..(x0 + w).min(size) {
                        px[y * size + x] = color;
                    }
                }
            }
            RgbImage::new(size, size, px).expect("size matches")
        })
        .collect()
}

pub fn synthetic_examples(count: usize, size: usize, classes: usize, seed: u64) -> Vec<Example> {
    synthetic_images(count, size, seed)
        .iter()
        .enumerate()
        .map(|(i, img)| Example::from_rgb(img, i % classes).expect("synthetic images are valid"))
        .collect()
}
