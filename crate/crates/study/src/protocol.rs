//! Study definitions and seeded, source-balanced trial orders.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::error::{Result, StudyError};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Real,
    Fake,
}

/// A labeled image directory as given when creating a study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub label: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySpec {
    pub name: String,
    pub sources: Vec<SourceSpec>,
    /// Defaults to every source contributing as many images as the
    /// smallest one has.
    #[serde(default)]
    pub trials_per_session: Option<usize>,
}

/// A source with its image list frozen at creation time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub label: String,
    pub dir: PathBuf,
    pub images: Vec<PathBuf>,
}

/// One blinded presentation. `source` indexes the study's sources and
/// never leaves the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub id: Uuid,
    pub source: usize,
    pub image: PathBuf,
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| StudyError::io(dir, e))? {
        let path = entry.map_err(|e| StudyError::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Checks a study request and resolves its image lists.
pub fn resolve(spec: &StudySpec) -> Result<(Vec<Source>, usize)> {
    if spec.name.trim().is_empty() {
        return Err(StudyError::Invalid("study name is empty".into()));
    }
    if spec.sources.len() < 2 {
        return Err(StudyError::Invalid(format!("a study needs at least 2 sources, got {}", spec.sources.len())));
    }
    let mut sources: Vec<Source> = Vec::with_capacity(spec.sources.len());
    for s in &spec.sources {
        if s.label.trim().is_empty() {
            return Err(StudyError::Invalid("source label is empty".into()));
        }
        if sources.iter().any(|o| o.label == s.label) {
            return Err(StudyError::Invalid(format!("duplicate source label `{}`", s.label)));
        }
        if !s.dir.is_dir() {
            return Err(StudyError::Invalid(format!("source `{}`: {} is not a directory", s.label, s.dir.display())));
        }
        let images = list_images(&s.dir)?;
        if images.is_empty() {
            return Err(StudyError::Invalid(format!("source `{}`: no images in {}", s.label, s.dir.display())));
        }
        sources.push(Source { label: s.label.clone(), dir: s.dir.clone(), images });
    }
    let smallest = sources.iter().map(|s| s.images.len()).min().expect("at least two sources");
    let n = sources.len();
    let trials = spec.trials_per_session.unwrap_or(smallest * n);
    if trials == 0 {
        return Err(StudyError::Invalid("trials_per_session must be at least 1".into()));
    }
    if trials.div_ceil(n) > smallest {
        return Err(StudyError::Invalid(format!(
            "{trials} balanced trials over {n} sources need {} images per source, the smallest source has {smallest}",
            trials.div_ceil(n)
        )));
    }
    Ok((sources, trials))
}

fn session_rng(study: Uuid, alias: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(study.as_bytes());
    h.update((alias.len() as u64).to_le_bytes());
    h.update(alias.as_bytes());
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Draws `trials` presentations so per-source counts differ by at most one,
/// no image repeats within a session, and the order is a seeded shuffle.
pub fn trial_order(study: Uuid, sources: &[Source], trials: usize, alias: &str, seed: u64) -> Vec<Trial> {
    let mut rng = session_rng(study, alias, seed);
    let n = sources.len();
    let mut extra: Vec<usize> = (0..n).collect();
    extra.shuffle(&mut rng);
    let mut out = Vec::with_capacity(trials);
    for (i, s) in sources.iter().enumerate() {
        let take = trials / n + usize::from(extra[..trials % n].contains(&i));
        let mut images = s.images.clone();
        images.shuffle(&mut rng);
        out.extend(images.into_iter().take(take).map(|image| Trial { id: Uuid::nil(), source: i, image }));
    }
    out.shuffle(&mut rng);
    for t in &mut out {
        t.id = uuid::Builder::from_random_bytes(rng.random()).into_uuid();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sources(counts: &[usize]) -> Vec<Source> {
        counts
            .iter()
            .enumerate()
            .map(|(i, &c)| Source {
                label: format!("s{i}"),
                dir: PathBuf::from(format!("/s{i}")),
                images: (0..c).map(|j| PathBuf::from(format!("/s{i}/{j}.png"))).collect(),
            })
            .collect()
    }

    #[test]
    fn balanced_and_deterministic() {
        let s = sources(&[5, 7, 6]);
        let id = Uuid::from_u128(7);
        for trials in 1..=15 {
            let order = trial_order(id, &s, trials, "ann", 3);
            assert_eq!(order.len(), trials);
            let counts: Vec<usize> = (0..3).map(|i| order.iter().filter(|t| t.source == i).count()).collect();
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
            let mut images: Vec<&PathBuf> = order.iter().map(|t| &t.image).collect();
            images.sort();
            images.dedup();
            assert_eq!(images.len(), trials);
            assert_eq!(order, trial_order(id, &s, trials, "ann", 3));
        }
        let a = trial_order(id, &s, 15, "ann", 3);
        assert_ne!(a, trial_order(id, &s, 15, "ann", 4));
        assert_ne!(a, trial_order(id, &s, 15, "bob", 3));
    }

    #[test]
    fn order_mixes_sources() {
        let s = sources(&[50, 50]);
        let order = trial_order(Uuid::from_u128(1), &s, 100, "x", 0);
        let first_half = order[..50].iter().filter(|t| t.source == 0).count();
        assert!((10..=40).contains(&first_half), "{first_half}");
    }
}
